//! Byte-for-byte C output for two SpMV schedules. Set `UPDATE_GOLDEN=1`
//! to rewrite the files after an intentional change.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sparse_sched::exec::emit_c;
use sparse_sched::lower::LowerOptions;
use sparse_sched::pipeline::Job;
use sparse_sched::tensor::Format;

const SPMV: &str = "y(i) = A(i,j) * x(j)";

fn formats() -> BTreeMap<String, Format> {
    BTreeMap::from([
        ("A".to_string(), "ds".parse().unwrap()),
        ("x".to_string(), "d".parse().unwrap()),
    ])
}

fn check(file: &str, schedule: &str) -> String {
    let job = Job::with_formats(SPMV, &formats(), schedule).unwrap();
    let c = emit_c(&job.kernel(LowerOptions::default()).unwrap());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(file);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &c).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    assert!(c == want, "{file} differs from the generated code:\n{c}");
    c
}

#[test]
fn unscheduled_spmv() {
    let c = check("spmv.c", "");
    assert!(!c.contains("search_"));
}

#[test]
fn position_spmv() {
    let c = check("spmv_pos.c", "fuse(i, j, f)\npos(f, fpos, A(i,j))");
    assert!(c.contains("while ("));
    assert!(c.contains("static int32_t search_before("));
}

#[test]
fn emission_is_deterministic() {
    let schedule = "fuse(i, j, f)\npos(f, fpos, A(i,j))";
    let a = Job::with_formats(SPMV, &formats(), schedule).unwrap();
    let b = Job::with_formats(SPMV, &formats(), schedule).unwrap();
    let opts = LowerOptions::default();
    assert_eq!(
        emit_c(&a.kernel(opts).unwrap()),
        emit_c(&b.kernel(opts).unwrap())
    );
}
