//! Kernel execution: an interpreter and a C99 printer.

pub mod emit_c;
pub mod interp;

pub use emit_c::{c_harness, emit_c};
pub use interp::{execute, ExecError, ExecOptions, ExecStats};
