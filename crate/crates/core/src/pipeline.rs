//! End-to-end helpers: parse, schedule, lower, run and verify.

use std::collections::BTreeMap;

use crate::exec::{self, ExecOptions, ExecStats};
use crate::lower::{self, Kernel, LowerOptions};
use crate::notation::{parse_expression, Assignment};
use crate::schedule::dsl::parse_schedule;
use crate::schedule::{concretize, ScheduledStmt};
use crate::tensor::{dense_eval, var_extents, DenseTensor, Format, Inputs};
use crate::Error;

/// Relative tolerance used by `verify`.
pub const TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub lower: LowerOptions,
    pub exec: ExecOptions,
}

/// A parsed and scheduled statement.
#[derive(Clone, Debug)]
pub struct Job {
    pub assignment: Assignment,
    pub stmt: ScheduledStmt,
}

pub fn formats_of(inputs: &Inputs) -> BTreeMap<String, Format> {
    inputs
        .iter()
        .map(|(n, t)| (n.clone(), t.format().clone()))
        .collect()
}

impl Job {
    /// Formats are taken from the bound tensors.
    pub fn new(expr: &str, inputs: &Inputs, schedule: &str) -> Result<Job, Error> {
        Job::with_formats(expr, &formats_of(inputs), schedule)
    }

    pub fn with_formats(
        expr: &str,
        formats: &BTreeMap<String, Format>,
        schedule: &str,
    ) -> Result<Job, Error> {
        let assignment = parse_expression(expr)?;
        let stmt = concretize(&assignment, formats, None)?;
        let stmt = parse_schedule(schedule)?.apply(&stmt)?;
        Ok(Job { assignment, stmt })
    }

    pub fn out_dims(&self, inputs: &Inputs) -> Result<Vec<usize>, Error> {
        let ext = var_extents(&self.assignment, inputs, None)?;
        Ok(self.assignment.lhs.vars.iter().map(|v| ext[v]).collect())
    }

    pub fn kernel(&self, opts: LowerOptions) -> Result<Kernel, Error> {
        Ok(lower::lower(&self.stmt, opts)?)
    }

    pub fn run(
        &self,
        inputs: &Inputs,
        opts: RunOptions,
    ) -> Result<(DenseTensor, ExecStats), Error> {
        let kernel = self.kernel(opts.lower)?;
        let dims = self.out_dims(inputs)?;
        Ok(exec::execute(&kernel, inputs, &dims, opts.exec)?)
    }

    /// Largest relative error of the scheduled kernel against brute-force
    /// dense evaluation.
    pub fn verify(&self, inputs: &Inputs, opts: RunOptions) -> Result<f64, Error> {
        let (got, _) = self.run(inputs, opts)?;
        let expected = dense_eval(&self.assignment, inputs)?;
        Ok(got.max_rel_error(&expected))
    }
}
