mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{all_points, copy_problem, random_composition, visited, COLS, ROWS};
use sparse_sched::exec::ExecOptions;
use sparse_sched::lower::{LowerOptions, Recovery};
use sparse_sched::pipeline::{Job, RunOptions};
use sparse_sched::tensor::{Inputs, Tensor};

fn traced() -> RunOptions {
    RunOptions {
        lower: LowerOptions::default(),
        exec: ExecOptions {
            trace: true,
            threads: None,
        },
    }
}

fn value(row: &[(String, i64)], name: &str) -> i64 {
    row.iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| *v)
        .unwrap()
}

fn vector(n: usize) -> Inputs {
    Inputs::from([("x".to_string(), Tensor::dense_vector(vec![1.0; n]))])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_coordinate_is_visited_once(seed in any::<u64>(), fmt in 0usize..3, steps in 1usize..=5) {
        let (base, inputs) = copy_problem(["dd", "ds", "ss"][fmt]);
        let (stmt, log) = random_composition(&base, steps, &mut ChaCha8Rng::seed_from_u64(seed));
        for recovery in [Recovery::Track, Recovery::Search] {
            let mut seen = visited(&stmt, &inputs, recovery).map_err(|e| TestCaseError::fail(format!("{log:?}: {e}")))?;
            seen.sort_unstable();
            prop_assert_eq!(&seen, &all_points(), "{:?}", log);
        }
    }

    #[test]
    fn provenance_leaves_are_the_loops(seed in any::<u64>(), steps in 1usize..=6) {
        let (base, _) = copy_problem("ds");
        let (stmt, _) = random_composition(&base, steps, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut loops = stmt.graph.loops.clone();
        loops.sort();
        prop_assert_eq!(stmt.provenance.leaves(), loops);
    }

    #[test]
    fn split_and_divide_recover_the_original(size in 1usize..=12, divide in any::<bool>()) {
        let (_, inputs) = copy_problem("dd");
        let cmd = if divide { "divide" } else { "split" };
        let job = Job::new("A(i,j) = B(i,j)", &inputs, &format!("{cmd}(i, i1, i2, {size})")).unwrap();
        let (_, stats) = job.run(&inputs, traced()).unwrap();
        let width = if divide { ROWS.div_ceil(size) } else { size } as i64;
        prop_assert_eq!(stats.trace.len(), ROWS * COLS);
        for row in &stats.trace {
            prop_assert_eq!(value(row, "i"), value(row, "i1") * width + value(row, "i2"));
        }
    }

    #[test]
    fn strip_chains_cover_the_extent_exactly(n in 1usize..=40, sizes in prop::collection::vec((1usize..=6, any::<bool>()), 1..=3)) {
        let mut schedule = String::new();
        let mut var = "i".to_string();
        for (k, (size, divide)) in sizes.iter().enumerate() {
            let (outer, inner) = (format!("o{k}"), format!("n{k}"));
            let cmd = if *divide { "divide" } else { "split" };
            schedule += &format!("{cmd}({var}, {outer}, {inner}, {size})\n");
            var = inner;
        }
        let inputs = vector(n);
        let job = Job::new("y(i) = x(i)", &inputs, &schedule).unwrap();
        let (y, stats) = job.run(&inputs, RunOptions::default()).unwrap();
        let innermost = stats.loop_iterations[&var];
        prop_assert_eq!(stats.body_executions, n as u64);
        prop_assert!(innermost >= n as u64);
        prop_assert_eq!(innermost == n as u64, stats.guard_failures == 0);
        prop_assert!(y.vals.iter().all(|&v| v == 1.0));
    }
}

#[test]
fn fuse_keeps_lexicographic_order() {
    let (_, inputs) = copy_problem("dd");
    let job = Job::new("A(i,j) = B(i,j)", &inputs, "fuse(i, j, f)").unwrap();
    let (_, stats) = job.run(&inputs, traced()).unwrap();
    let seq: Vec<(i64, i64)> = stats
        .trace
        .iter()
        .map(|r| (value(r, "i"), value(r, "j")))
        .collect();
    assert_eq!(seq, all_points());
}

#[test]
fn dense_reorder_transposes_the_visit_sequence() {
    let (_, inputs) = copy_problem("dd");
    let job = Job::new("A(i,j) = B(i,j)", &inputs, "reorder(j, i)").unwrap();
    let (_, stats) = job.run(&inputs, traced()).unwrap();
    let seq: Vec<(i64, i64)> = stats
        .trace
        .iter()
        .map(|r| (value(r, "i"), value(r, "j")))
        .collect();
    let mut transposed = all_points();
    transposed.sort_by_key(|&(i, j)| (j, i));
    assert_eq!(seq, transposed);
}

#[test]
fn pos_chains_execute_once_per_nonzero() {
    let (_, inputs) = copy_problem("ss");
    let job = Job::new(
        "A(i,j) = B(i,j)",
        &inputs,
        "fuse(i, j, f)\npos(f, fp, B)\nsplit(fp, b, t, 5)",
    )
    .unwrap();
    let (_, stats) = job.run(&inputs, RunOptions::default()).unwrap();
    assert_eq!(stats.body_executions, (ROWS * COLS) as u64);
    assert_eq!(stats.guard_failures, 3);
}
