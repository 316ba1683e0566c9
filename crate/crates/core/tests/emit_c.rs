mod common;

use common::{compile_and_run, have_cc, rel_close};
use sparse_sched::corpus::ENTRIES;
use sparse_sched::exec::{c_harness, execute};
use sparse_sched::lower::{LowerOptions, Recovery};
use sparse_sched::pipeline::Job;

#[test]
fn corpus_kernels_compile_and_agree_with_interpreter() {
    if !have_cc() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    for e in ENTRIES.iter() {
        let inputs = e.problem.inputs(1);
        let job = Job::new(e.problem.expr(), &inputs, e.schedule).unwrap();
        let dims = job.out_dims(&inputs).unwrap();
        for recovery in [Recovery::Track, Recovery::Search] {
            let k = job
                .kernel(LowerOptions {
                    recovery,
                    verify_recovery: false,
                })
                .unwrap();
            let (want, _) = execute(&k, &inputs, &dims, Default::default()).unwrap();
            let src = c_harness(&k, &inputs, &dims).unwrap();
            let got =
                compile_and_run(dir.path(), &format!("{}_{recovery:?}", e.name), &src).unwrap();
            assert!(
                rel_close(&got, &want.vals, 1e-10),
                "{} under {recovery:?}",
                e.name
            );
        }
    }
}
