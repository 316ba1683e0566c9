//! Scheduling compiler for sparse and dense tensor algebra.
//!
//! Expressions in index notation are concretized into a loop chain, rewritten
//! by scheduling transformations, lowered to a small imperative IR, and then
//! either interpreted or printed as C.
//!
//! ```
//! use std::collections::BTreeMap;
//! use sparse_sched::{pipeline, tensor::{pack, CooTensor, Tensor}};
//!
//! let mut eye = CooTensor::new(vec![3, 3]);
//! for i in 0..3 {
//!     eye.push(vec![i, i], 1.0).unwrap();
//! }
//! let mut inputs = BTreeMap::new();
//! inputs.insert("A".to_string(), pack(&eye, &"ds".parse().unwrap()).unwrap());
//! inputs.insert("x".to_string(), Tensor::dense_vector(vec![1.0, 2.0, 3.0]));
//! let job = pipeline::Job::new("y(i) = A(i,j) * x(j)", &inputs, "split(i, i0, i1, 2)").unwrap();
//! let (y, _) = job.run(&inputs, Default::default()).unwrap();
//! assert_eq!(y.vals, vec![1.0, 2.0, 3.0]);
//! ```

pub mod corpus;
pub mod exec;
pub mod gen;
pub mod graph;
pub mod lower;
pub mod notation;
pub mod pipeline;
pub mod schedule;
pub mod tensor;

/// Any failure along the pipeline, wrapping the originating module's error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Notation(#[from] notation::NotationError),
    #[error(transparent)]
    Schedule(#[from] schedule::SchedError),
    #[error("schedule {0}")]
    ScheduleFile(#[from] schedule::dsl::DslError),
    #[error(transparent)]
    Lower(#[from] lower::LowerError),
    #[error(transparent)]
    Exec(#[from] exec::ExecError),
    #[error(transparent)]
    Eval(#[from] tensor::EvalError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Parse(#[from] tensor::ParseError),
    #[error(transparent)]
    Generate(#[from] gen::GenError),
}
