use sparse_sched::corpus::ENTRIES;
use sparse_sched::lower::{LowerOptions, Recovery};
use sparse_sched::pipeline::{Job, RunOptions, TOLERANCE};

fn opts(recovery: Recovery, verify_recovery: bool) -> RunOptions {
    RunOptions {
        lower: LowerOptions {
            recovery,
            verify_recovery,
        },
        ..Default::default()
    }
}

#[test]
fn every_schedule_matches_dense_evaluation() {
    for e in &ENTRIES {
        for seed in 0..3 {
            let inputs = e.problem.inputs(seed);
            let job = Job::new(e.problem.expr(), &inputs, e.schedule)
                .unwrap_or_else(|err| panic!("{}: {err}", e.name));
            for rec in [Recovery::Track, Recovery::Search] {
                let err = job
                    .verify(&inputs, opts(rec, true))
                    .unwrap_or_else(|err| panic!("{} {rec:?}: {err}", e.name));
                assert!(
                    err <= TOLERANCE,
                    "{} {rec:?} seed {seed}: error {err}",
                    e.name
                );
            }
        }
    }
}

#[test]
fn fifty_random_inputs_per_schedule() {
    for e in &ENTRIES {
        for seed in 100..150 {
            let inputs = e.problem.inputs(seed);
            let job = Job::new(e.problem.expr(), &inputs, e.schedule).unwrap();
            let err = job.verify(&inputs, RunOptions::default()).unwrap();
            assert!(err <= TOLERANCE, "{} seed {seed}: error {err}", e.name);
        }
    }
}

#[test]
fn schedules_of_one_problem_agree() {
    for seed in 0..3 {
        let mut by_problem = std::collections::BTreeMap::new();
        for e in &ENTRIES {
            let inputs = e.problem.inputs(seed);
            let job = Job::new(e.problem.expr(), &inputs, e.schedule).unwrap();
            let (out, _) = job.run(&inputs, RunOptions::default()).unwrap();
            let first = by_problem
                .entry(format!("{:?}", e.problem))
                .or_insert_with(|| (e.name, out.clone()));
            let err = out.max_rel_error(&first.1);
            assert!(err <= TOLERANCE, "{} vs {}: {err}", e.name, first.0);
        }
    }
}
