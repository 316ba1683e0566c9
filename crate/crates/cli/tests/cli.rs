use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sparse-sched");
const SPMV: &str = "y(i)=A(i,j)*x(j)";

fn corpus(name: &str) -> String {
    format!("{}/../core/corpus/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn generate(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_passes_on_a_random_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(
        d,
        &[
            "gen-random",
            "--dims",
            "40,50",
            "--density",
            "0.1",
            "--seed",
            "3",
            "--out",
            "m.mtx",
        ],
    );
    generate(
        d,
        &[
            "gen-random",
            "--dims",
            "50",
            "--seed",
            "4",
            "--out",
            "v.tns",
        ],
    );
    for schedule in ["a01_spmv_cpu.sched", "a07_spmv_thread_per_row.sched"] {
        let o = run(
            d,
            &[
                "--expr",
                SPMV,
                "--tensor",
                "A=m.mtx:ds",
                "--tensor",
                "x=v.tns:d",
                "--schedule",
                &corpus(schedule),
                "verify",
            ],
        );
        assert!(o.status.success());
        assert!(stdout(&o).ends_with("PASS\n"), "{}", stdout(&o));
    }
}

#[test]
fn unscheduled_identity_returns_x() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("eye.mtx"),
        "%%MatrixMarket matrix coordinate real general\n3 3 3\n1 1 1\n2 2 1\n3 3 1\n",
    )
    .unwrap();
    std::fs::write(d.join("x.tns"), "1 2.5\n2 -1\n3 4\n").unwrap();
    let o = run(
        d,
        &[
            "--expr",
            SPMV,
            "--tensor",
            "A=eye.mtx:ds",
            "--tensor",
            "x=x.tns:d",
            "--action",
            "run",
        ],
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0 2.5e0\n1 -1e0\n2 4e0\n");
}

#[test]
fn pos_split_blocks_are_balanced_on_a_skewed_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(
        d,
        &[
            "gen-skewed",
            "--rows",
            "500",
            "--cols",
            "200",
            "--nnz",
            "5000",
            "--base",
            "1.02",
            "--seed",
            "9",
            "--out",
            "s.mtx",
        ],
    );
    generate(d, &["gen-random", "--dims", "200", "--out", "w.tns"]);
    std::fs::write(
        d.join("spmv.expr"),
        "precomputedExpr = A(i,j) * x(j)\ny(i) = precomputedExpr\n",
    )
    .unwrap();
    let o = run(
        d,
        &[
            "--expr",
            "@spmv.expr",
            "--tensor",
            "A=s.mtx:ds",
            "--tensor",
            "x=w.tns:d",
            "--schedule",
            &corpus("a02_spmv_gpu.sched"),
            "stats",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("body executions: 5000\n"), "{text}");
    assert!(
        text.contains("parallel block: non-tail max/min 1.000\n"),
        "{text}"
    );
}

#[test]
fn artifacts_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(
        d,
        &[
            "gen-random",
            "--dims",
            "20,30",
            "--density",
            "0.2",
            "--seed",
            "1",
            "--out",
            "m.mtx",
        ],
    );
    generate(
        d,
        &[
            "gen-random",
            "--dims",
            "30",
            "--seed",
            "2",
            "--out",
            "v.tns",
        ],
    );
    let sched = corpus("a01_spmv_cpu.sched");
    for action in ["run", "emit", "stats", "dump-ir", "dump-graph"] {
        let args = [
            "--expr",
            SPMV,
            "--tensor",
            "A=m.mtx:ds",
            "--tensor",
            "x=v.tns:d",
            "--schedule",
            &sched,
            "--threads",
            "3",
            action,
        ];
        let (a, b) = (run(d, &args), run(d, &args));
        assert!(a.status.success(), "{action}");
        assert_eq!(a.stdout, b.stdout, "{action}");
    }
    let emit = stdout(&run(
        d,
        &[
            "--expr",
            SPMV,
            "--tensor",
            "A=m.mtx:ds",
            "--tensor",
            "x=v.tns:d",
            "emit",
        ],
    ));
    assert!(emit.contains("void compute(double* out, const double** vals, const int32_t** pos, const int32_t** crd, const int32_t* dims)"));
}

#[test]
fn errors_exit_nonzero_with_the_cause() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(
        d,
        &[
            "gen-random",
            "--dims",
            "4,4",
            "--density",
            "0.5",
            "--out",
            "m.mtx",
        ],
    );
    let o = run(d, &["--expr", SPMV, "--tensor", "A=m.mtx:ds", "verify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tensor 'x' is not bound"));

    std::fs::write(d.join("bad.sched"), "reorder(j, i)\n").unwrap();
    generate(d, &["gen-random", "--dims", "4", "--out", "v.tns"]);
    let o = run(
        d,
        &[
            "--expr",
            SPMV,
            "--tensor",
            "A=m.mtx:ds",
            "--tensor",
            "x=v.tns:d",
            "--schedule",
            "bad.sched",
            "run",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}
