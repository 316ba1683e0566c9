//! Helpers shared by integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use sparse_sched::exec::{execute, ExecOptions};
use sparse_sched::lower::{lower, LowerOptions, Recovery};
use sparse_sched::notation::parse_expression;
use sparse_sched::schedule::{concretize, ScheduledStmt};
use sparse_sched::tensor::{pack, CooTensor, Format, Inputs};

pub const ROWS: usize = 8;
pub const COLS: usize = 9;

/// `A(i,j) = B(i,j)` over an 8x9 space with every coordinate of B stored.
pub fn copy_problem(format: &str) -> (ScheduledStmt, Inputs) {
    let a = parse_expression("A(i,j) = B(i,j)").unwrap();
    let fmt: Format = format.parse().unwrap();
    let stmt = concretize(&a, &BTreeMap::from([("B".to_string(), fmt.clone())]), None).unwrap();
    let mut coo = CooTensor::new(vec![ROWS, COLS]);
    for i in 0..ROWS {
        for j in 0..COLS {
            coo.push(vec![i, j], (i * COLS + j + 1) as f64).unwrap();
        }
    }
    let mut inputs = Inputs::new();
    inputs.insert("B".into(), pack(&coo, &fmt).unwrap());
    (stmt, inputs)
}

/// Applies up to `steps` random transformations, keeping those the
/// scheduler accepts. Returns the result and a log of accepted commands.
pub fn random_composition(
    base: &ScheduledStmt,
    steps: usize,
    rng: &mut impl Rng,
) -> (ScheduledStmt, Vec<String>) {
    let mut s = base.clone();
    let mut log = Vec::new();
    let mut fresh = 0;
    let mut name = || {
        fresh += 1;
        format!("v{fresh}")
    };
    for _ in 0..steps * 4 {
        if log.len() == steps {
            break;
        }
        let loops: Vec<String> = s.loop_names().iter().map(|n| n.to_string()).collect();
        let at = rng.gen_range(0..loops.len());
        let v = loops[at].clone();
        let (next, cmd) = match rng.gen_range(0..6) {
            0 => {
                let (o, i, n) = (name(), name(), rng.gen_range(1..=10));
                (s.split(&v, &o, &i, n), format!("split({v}, {o}, {i}, {n})"))
            }
            1 => {
                let (o, i, n) = (name(), name(), rng.gen_range(1..=10));
                (
                    s.divide(&v, &o, &i, n),
                    format!("divide({v}, {o}, {i}, {n})"),
                )
            }
            2 if at + 1 < loops.len() => {
                let (w, f) = (loops[at + 1].clone(), name());
                (s.fuse(&v, &w, &f), format!("fuse({v}, {w}, {f})"))
            }
            3 if at + 1 < loops.len() => {
                let len = rng.gen_range(2..=loops.len() - at);
                let mut order: Vec<&str> = loops[at..at + len].iter().map(|s| s.as_str()).collect();
                order.shuffle(rng);
                (s.reorder(&order), format!("reorder({})", order.join(", ")))
            }
            4 => {
                let p = name();
                (s.pos(&v, &p, "B"), format!("pos({v}, {p}, B)"))
            }
            5 => {
                let c = name();
                (s.coord(&v, &c), format!("coord({v}, {c})"))
            }
            _ => continue,
        };
        if let Ok(next) = next {
            s = next;
            log.push(cmd);
        }
    }
    (s, log)
}

/// Original coordinates `(i, j)` in visit order.
pub fn visited(
    stmt: &ScheduledStmt,
    inputs: &Inputs,
    recovery: Recovery,
) -> Result<Vec<(i64, i64)>, String> {
    let kernel = lower(
        stmt,
        LowerOptions {
            recovery,
            verify_recovery: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let opts = ExecOptions {
        trace: true,
        threads: None,
    };
    let (_, stats) = execute(&kernel, inputs, &[ROWS, COLS], opts).map_err(|e| e.to_string())?;
    Ok(stats
        .trace
        .iter()
        .map(|row| {
            let get = |n: &str| row.iter().find(|(k, _)| k == n).map(|(_, x)| *x).unwrap();
            (get("i"), get("j"))
        })
        .collect())
}

pub fn all_points() -> Vec<(i64, i64)> {
    (0..ROWS as i64)
        .flat_map(|i| (0..COLS as i64).map(move |j| (i, j)))
        .collect()
}

pub fn have_cc() -> bool {
    std::process::Command::new("cc")
        .arg("--version")
        .output()
        .is_ok()
}

/// Compiles `src` with the system C compiler, runs it and parses one value
/// per output line.
pub fn compile_and_run(dir: &std::path::Path, name: &str, src: &str) -> Result<Vec<f64>, String> {
    use std::process::Command;
    let c = dir.join(format!("{name}.c"));
    let bin = dir.join(name);
    std::fs::write(&c, src).map_err(|e| e.to_string())?;
    let out = Command::new("cc")
        .args([
            "-std=c99",
            "-O1",
            "-Wall",
            "-Wno-unknown-pragmas",
            "-Wno-unused-variable",
            "-Werror",
            "-o",
        ])
        .arg(&bin)
        .arg(&c)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{name}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let run = Command::new(&bin).output().map_err(|e| e.to_string())?;
    if !run.status.success() {
        return Err(format!("{name} exited with {:?}", run.status));
    }
    String::from_utf8_lossy(&run.stdout)
        .lines()
        .map(|l| l.parse().map_err(|e| format!("{name}: {e}")))
        .collect()
}

pub fn rel_close(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(g, w)| (g - w).abs() <= tol * w.abs().max(1.0))
}
