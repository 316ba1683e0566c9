//! C99 printer for lowered kernels.
//!
//! The entry point is
//! `void compute(double* out, const double** vals, const int32_t** pos,
//! const int32_t** crd, const int32_t* dims)`, with arrays ordered as in the
//! kernel's [`Manifest`]; the generated text repeats the ordering in its
//! header comment.

use std::fmt::Write as _;

use crate::exec::interp::bind;
use crate::exec::ExecError;
use crate::lower::ir::{CondDisplay, IExprDisplay, VExprDisplay};
use crate::lower::{IExpr, Kernel, Manifest, Stmt, Target};
use crate::schedule::{ParallelUnit, RaceStrategy};
use crate::tensor::Inputs;

const SEARCH_BEFORE: &str = "\
static int32_t search_before(const int32_t* pos, int32_t lo, int32_t hi, int32_t key) {
  /* largest k in [lo, hi) with pos[k] <= key */
  int32_t start = lo;
  while (hi - lo > 1) {
    int32_t mid = lo + (hi - lo) / 2;
    if (pos[mid] <= key) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo > start ? lo : start;
}
";

const SEARCH_EXACT: &str = "\
static int32_t search_exact(const int32_t* crd, int32_t lo, int32_t hi, int32_t key) {
  /* k in [lo, hi) with crd[k] == key, or -1 */
  while (lo < hi) {
    int32_t mid = lo + (hi - lo) / 2;
    if (crd[mid] < key) {
      lo = mid + 1;
    } else if (crd[mid] > key) {
      hi = mid;
    } else {
      return mid;
    }
  }
  return -1;
}
";

struct Printer<'a> {
    m: &'a Manifest,
    out: String,
    /// Reduction targets, innermost last: the output, then temporaries.
    targets: Vec<String>,
    fresh: usize,
}

pub fn emit_c(kernel: &Kernel) -> String {
    let m = &kernel.manifest;
    let mut uses_before = false;
    let mut uses_exact = false;
    Stmt::walk(&kernel.body, &mut |s| match s {
        Stmt::SearchBefore { .. } => uses_before = true,
        Stmt::SearchExact { .. } => uses_exact = true,
        _ => {}
    });
    let mut p = Printer {
        m,
        out: String::new(),
        targets: vec![m.output.clone()],
        fresh: 0,
    };
    let o = &mut p.out;
    let _ = writeln!(o, "/* {} */", kernel.statement);
    o.push_str("#include <stdint.h>\n#include <string.h>\n\n");
    if uses_before {
        o.push_str(SEARCH_BEFORE);
        o.push('\n');
    }
    if uses_exact {
        o.push_str(SEARCH_EXACT);
        o.push('\n');
    }
    o.push_str("/*\n");
    let _ = writeln!(o, " * out: {} (dense, row-major)", m.output);
    for n in 0..m.dims.len() {
        let _ = writeln!(o, " * dims[{n}]: {}", m.dim_name(n));
    }
    for n in 0..m.arrays.len() {
        let _ = writeln!(
            o,
            " * pos[{n}], crd[{n}]: {}, {}",
            m.pos_name(n),
            m.crd_name(n)
        );
    }
    for n in 0..m.inputs.len() {
        let _ = writeln!(o, " * vals[{n}]: {}", m.vals_name(n));
    }
    o.push_str(" */\n");
    o.push_str(
        "void compute(double* out, const double** vals, const int32_t** pos, const int32_t** crd, const int32_t* dims) {\n",
    );
    for n in 0..m.dims.len() {
        let _ = writeln!(o, "  const int32_t {} = dims[{n}];", m.dim_name(n));
    }
    for n in 0..m.arrays.len() {
        let _ = writeln!(o, "  const int32_t* {} = pos[{n}];", m.pos_name(n));
        let _ = writeln!(o, "  const int32_t* {} = crd[{n}];", m.crd_name(n));
    }
    for n in 0..m.inputs.len() {
        let _ = writeln!(o, "  const double* {} = vals[{n}];", m.vals_name(n));
    }
    let _ = writeln!(o, "  double* {} = out;", m.output);
    let _ = writeln!(o, "  memset(out, 0, sizeof(double) * {});", output_size(m));
    p.block(&kernel.body, 1);
    p.out.push_str("}\n");
    p.out
}

/// A complete program: `emit_c(kernel)` plus a `main` that binds `inputs`
/// as static arrays, calls `compute` and prints each output value with
/// `%.17g`, one per line.
pub fn c_harness(
    kernel: &Kernel,
    inputs: &Inputs,
    out_dims: &[usize],
) -> Result<String, ExecError> {
    let b = bind(&kernel.manifest, inputs, out_dims)?;
    let mut o = emit_c(kernel);
    let ints = |xs: &[usize]| {
        let body: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
        format!(
            "{{{}}}",
            if body.is_empty() {
                "0".into()
            } else {
                body.join(", ")
            }
        )
    };
    let doubles = |xs: &[f64]| {
        let body: Vec<String> = xs.iter().map(|x| format!("{x:e}")).collect();
        format!(
            "{{{}}}",
            if body.is_empty() {
                "0".into()
            } else {
                body.join(", ")
            }
        )
    };
    o.push_str("\n#include <stdio.h>\n\n");
    for (n, (p, c)) in b.pos.iter().zip(&b.crd).enumerate() {
        let _ = writeln!(o, "static const int32_t pos{n}[] = {};", ints(p));
        let _ = writeln!(o, "static const int32_t crd{n}[] = {};", ints(c));
    }
    for (n, v) in b.vals.iter().enumerate() {
        let _ = writeln!(o, "static const double vals{n}[] = {};", doubles(v));
    }
    let dims: Vec<usize> = b.dims.iter().map(|&d| d as usize).collect();
    let _ = writeln!(o, "static const int32_t dims_[] = {};", ints(&dims));
    let size: usize = b.out_dims.iter().product();
    let _ = writeln!(o, "static double out_[{}];\n", size.max(1));
    o.push_str("int main(void) {\n");
    let list = |prefix: &str, n: usize| {
        let xs: Vec<String> = (0..n).map(|k| format!("{prefix}{k}")).collect();
        format!(
            "{{{}}}",
            if xs.is_empty() {
                "0".into()
            } else {
                xs.join(", ")
            }
        )
    };
    let _ = writeln!(
        o,
        "  const double* vals[] = {};",
        list("vals", b.vals.len())
    );
    let _ = writeln!(o, "  const int32_t* pos[] = {};", list("pos", b.pos.len()));
    let _ = writeln!(o, "  const int32_t* crd[] = {};", list("crd", b.crd.len()));
    o.push_str("  compute(out_, vals, pos, crd, dims_);\n");
    let _ = writeln!(
        o,
        "  for (int i = 0; i < {size}; i++) printf(\"%.17g\\n\", out_[i]);"
    );
    o.push_str("  return 0;\n}\n");
    Ok(o)
}

fn output_size(m: &Manifest) -> String {
    if m.output_order == 0 {
        return "1".into();
    }
    (0..m.output_order)
        .map(|n| format!("(size_t){}", m.dim_name(n)))
        .collect::<Vec<_>>()
        .join(" * ")
}

impl Printer<'_> {
    fn e(&self, x: &IExpr) -> String {
        IExprDisplay(x, self.m).to_string()
    }

    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn block(&mut self, stmts: &[Stmt], depth: usize) {
        for s in stmts {
            self.stmt(s, depth);
        }
    }

    fn stmt(&mut self, s: &Stmt, depth: usize) {
        let m = self.m;
        match s {
            Stmt::Decl { name, value } => {
                let t = format!("int32_t {name} = {};", self.e(value));
                self.line(depth, &t);
            }
            Stmt::Assign { name, value } => {
                let t = format!("{name} = {};", self.e(value));
                self.line(depth, &t);
            }
            Stmt::For {
                var,
                lo,
                hi,
                parallel,
                unroll,
                body,
            } => {
                if let Some((unit, race)) = parallel {
                    self.line(depth, &format!("/* parallel: {unit}, {race} */"));
                    if *unit == ParallelUnit::CPUThread {
                        self.line(depth, "#pragma omp parallel for");
                    }
                }
                match unroll {
                    Some(u) if *u > 1 => self.unrolled(var, lo, hi, *u, body, depth),
                    _ => {
                        let t = format!(
                            "for (int32_t {var} = {}; {var} < {}; {var}++) {{",
                            self.e(lo),
                            self.e(hi)
                        );
                        self.line(depth, &t);
                        self.block(body, depth + 1);
                        self.line(depth, "}");
                    }
                }
            }
            Stmt::While { cond, body } => {
                self.line(depth, &format!("while ({}) {{", CondDisplay(cond, m)));
                self.block(body, depth + 1);
                self.line(depth, "}");
            }
            Stmt::If { cond, then, els } => {
                self.line(depth, &format!("if ({}) {{", CondDisplay(cond, m)));
                self.block(then, depth + 1);
                self.else_chain(els, depth);
            }
            Stmt::Guard { cond, body } => {
                self.line(depth, &format!("if ({}) {{", CondDisplay(cond, m)));
                self.block(body, depth + 1);
                self.line(depth, "}");
            }
            Stmt::Block(body) => {
                self.line(depth, "{");
                self.block(body, depth + 1);
                self.line(depth, "}");
            }
            Stmt::SearchBefore {
                name,
                arr,
                lo,
                hi,
                key,
            } => {
                let t = format!(
                    "int32_t {name} = search_before({}, {}, {}, {});",
                    m.pos_name(*arr),
                    self.e(lo),
                    self.e(hi),
                    self.e(key)
                );
                self.line(depth, &t);
            }
            Stmt::SearchExact {
                name,
                arr,
                lo,
                hi,
                key,
            } => {
                let t = format!(
                    "int32_t {name} = search_exact({}, {}, {}, {});",
                    m.crd_name(*arr),
                    self.e(lo),
                    self.e(hi),
                    self.e(key)
                );
                self.line(depth, &t);
            }
            Stmt::ReduceAdd {
                target: Target::Output(off),
                value,
                race,
                ..
            } => {
                if *race == Some(RaceStrategy::Atomics) {
                    self.line(depth, "#pragma omp atomic");
                }
                let target = self.targets.last().expect("target").clone();
                let t = format!("{target}[{}] += {};", self.e(off), VExprDisplay(value, m));
                self.line(depth, &t);
            }
            Stmt::WorkspaceAlloc { name, size } => {
                let size = self.e(size);
                self.line(depth, &format!("double {name}[{size}];"));
                self.line(
                    depth,
                    &format!("memset({name}, 0, sizeof(double) * ({size}));"),
                );
            }
            Stmt::Store {
                workspace,
                idx,
                value,
            } => {
                let t = format!("{workspace}[{}] = {};", self.e(idx), VExprDisplay(value, m));
                self.line(depth, &t);
            }
            Stmt::TemporaryRegion(body) => {
                let outer = self.targets.last().expect("target").clone();
                let tmp = format!("{}_tmp{}", m.output, self.fresh);
                self.fresh += 1;
                let size = output_size(m);
                self.line(depth, "{");
                self.line(depth + 1, &format!("double {tmp}[{size}];"));
                self.line(depth + 1, &format!("memset({tmp}, 0, sizeof({tmp}));"));
                self.targets.push(tmp.clone());
                self.block(body, depth + 1);
                self.targets.pop();
                self.line(
                    depth + 1,
                    &format!("for (size_t t = 0; t < {size}; t++) {{"),
                );
                self.line(depth + 2, &format!("{outer}[t] += {tmp}[t];"));
                self.line(depth + 1, "}");
                self.line(depth, "}");
            }
            Stmt::Check { cond, msg } => {
                self.line(
                    depth,
                    &format!("if (!({})) return; /* {msg} */", CondDisplay(cond, m)),
                );
            }
            Stmt::Comment(text) => self.line(depth, &format!("/* {text} */")),
        }
    }

    fn else_chain(&mut self, els: &[Stmt], depth: usize) {
        match els {
            [] => self.line(depth, "}"),
            [Stmt::If { cond, then, els }] => {
                self.line(
                    depth,
                    &format!("}} else if ({}) {{", CondDisplay(cond, self.m)),
                );
                self.block(then, depth + 1);
                self.else_chain(els, depth);
            }
            _ => {
                self.line(depth, "} else {");
                self.block(els, depth + 1);
                self.line(depth, "}");
            }
        }
    }

    /// `u` copies of the body per step of a `{var}_base` loop; copies are
    /// guarded unless the trip count is a known multiple of `u`.
    fn unrolled(
        &mut self,
        var: &str,
        lo: &IExpr,
        hi: &IExpr,
        u: usize,
        body: &[Stmt],
        depth: usize,
    ) {
        let exact = matches!((lo, hi), (IExpr::Lit(a), IExpr::Lit(b)) if (b - a) % u as i64 == 0);
        let base = format!("{var}_base");
        let t = format!(
            "for (int32_t {base} = {}; {base} < {}; {base} += {u}) {{",
            self.e(lo),
            self.e(hi)
        );
        self.line(depth, &t);
        let hi = self.e(hi);
        for k in 0..u {
            self.line(depth + 1, "{");
            self.line(depth + 2, &format!("int32_t {var} = {base} + {k};"));
            if exact {
                self.block(body, depth + 2);
            } else {
                self.line(depth + 2, &format!("if ({var} < {hi}) {{"));
                self.block(body, depth + 3);
                self.line(depth + 2, "}");
            }
            self.line(depth + 1, "}");
        }
        self.line(depth, "}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::{LevelSlot, Manifest};

    #[test]
    fn unroll_by_four_over_eight() {
        let m = Manifest {
            output: "y".into(),
            output_order: 1,
            inputs: vec!["x".into()],
            dims: vec![
                LevelSlot {
                    tensor: "y".into(),
                    level: 0,
                },
                LevelSlot {
                    tensor: "x".into(),
                    level: 0,
                },
            ],
            arrays: vec![],
        };
        let body = vec![Stmt::For {
            var: "i".into(),
            lo: IExpr::Lit(0),
            hi: IExpr::Lit(8),
            parallel: None,
            unroll: Some(4),
            body: vec![Stmt::Comment("body".into())],
        }];
        let c = emit_c(&Kernel {
            statement: "y(i) = x(i)".into(),
            manifest: m,
            body,
        });
        assert_eq!(c.matches("/* body */").count(), 4);
        assert!(c.contains("for (int32_t i_base = 0; i_base < 8; i_base += 4) {"));
        assert!(!c.contains("search_"));
        assert_eq!(c.matches('{').count(), c.matches('}').count());
    }
}
