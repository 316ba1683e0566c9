//! The regression corpus: eleven published schedules with their
//! expressions and desk-scale random inputs.

use crate::gen::{random_dense, random_sparse, rng};
use crate::tensor::{pack, Inputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Spmv,
    Spmm,
    Mttkrp,
}

impl Problem {
    pub fn expr(self) -> &'static str {
        match self {
            Problem::Spmv => "precomputedExpr = A(i,j) * x(j)\ny(i) = precomputedExpr",
            Problem::Spmm => "C(i,k) = A(i,j) * B(j,k)",
            Problem::Mttkrp => "A(i,j) = B(i,k,l) * C(k,j) * D(l,j)",
        }
    }

    /// Matrices are 40x50 at density 0.1 with 8 dense columns; the
    /// third-order tensor is 20x25x30 at density 0.05.
    pub fn inputs(self, seed: u64) -> Inputs {
        let mut r = rng(seed);
        let mut out = Inputs::new();
        let csr = "ds".parse().expect("format");
        match self {
            Problem::Spmv | Problem::Spmm => {
                let a = random_sparse(&[40, 50], 0.1, &mut r);
                out.insert("A".into(), pack(&a, &csr).expect("pack"));
                if self == Problem::Spmv {
                    out.insert("x".into(), random_dense(&[50], &mut r));
                } else {
                    out.insert("B".into(), random_dense(&[50, 8], &mut r));
                }
            }
            Problem::Mttkrp => {
                let b = random_sparse(&[20, 25, 30], 0.05, &mut r);
                out.insert(
                    "B".into(),
                    pack(&b, &"sss".parse().expect("format")).expect("pack"),
                );
                out.insert("C".into(), random_dense(&[25, 8], &mut r));
                out.insert("D".into(), random_dense(&[30, 8], &mut r));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: &'static str,
    pub problem: Problem,
    pub schedule: &'static str,
}

macro_rules! entry {
    ($name:literal, $problem:ident) => {
        Entry {
            name: $name,
            problem: Problem::$problem,
            schedule: include_str!(concat!("../corpus/", $name, ".sched")),
        }
    };
}

pub const ENTRIES: [Entry; 11] = [
    entry!("a01_spmv_cpu", Spmv),
    entry!("a02_spmv_gpu", Spmv),
    entry!("a03_spmm_cpu", Spmm),
    entry!("a04_spmm_gpu", Spmm),
    entry!("a05_mttkrp_cpu", Mttkrp),
    entry!("a06_mttkrp_gpu", Mttkrp),
    entry!("a07_spmv_thread_per_row", Spmv),
    entry!("a08_spmv_warp_per_row", Spmv),
    entry!("a09_spmv_gpu_no_unroll", Spmv),
    entry!("a10_spmm_tiled", Spmm),
    entry!("a11_spmm_untiled", Spmm),
];

pub fn find(name: &str) -> Option<&'static Entry> {
    ENTRIES
        .iter()
        .find(|e| e.name == name || e.name.starts_with(&format!("{name}_")))
}
