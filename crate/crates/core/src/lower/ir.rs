//! Imperative loop IR produced by lowering.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::schedule::{ParallelUnit, RaceStrategy};

/// Integer index expression.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum IExpr {
    Lit(i64),
    Var(String),
    /// Runtime dimension slot of the manifest.
    Dim(usize),
    /// `pos` array of compressed level `m` (manifest order).
    Pos(usize, Box<IExpr>),
    /// `crd` array of compressed level `m`.
    Crd(usize, Box<IExpr>),
    Add(Box<IExpr>, Box<IExpr>),
    Sub(Box<IExpr>, Box<IExpr>),
    Mul(Box<IExpr>, Box<IExpr>),
    Div(Box<IExpr>, Box<IExpr>),
    Rem(Box<IExpr>, Box<IExpr>),
    Min(Box<IExpr>, Box<IExpr>),
}

// Smart constructors fold literal arithmetic and nothing else.
// Constructors over owned operands, not operator impls.
#[allow(clippy::should_implement_trait)]
impl IExpr {
    pub fn var(name: impl Into<String>) -> IExpr {
        IExpr::Var(name.into())
    }

    pub fn pos(m: usize, idx: IExpr) -> IExpr {
        IExpr::Pos(m, Box::new(idx))
    }

    pub fn crd(m: usize, idx: IExpr) -> IExpr {
        IExpr::Crd(m, Box::new(idx))
    }

    pub fn add(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) => IExpr::Lit(x + y),
            (IExpr::Lit(0), e) | (e, IExpr::Lit(0)) => e,
            (a, b) => IExpr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) => IExpr::Lit(x - y),
            (e, IExpr::Lit(0)) => e,
            (a, b) => IExpr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) => IExpr::Lit(x * y),
            (IExpr::Lit(0), _) | (_, IExpr::Lit(0)) => IExpr::Lit(0),
            (IExpr::Lit(1), e) | (e, IExpr::Lit(1)) => e,
            (a, b) => IExpr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) if y != 0 => IExpr::Lit(x / y),
            (e, IExpr::Lit(1)) => e,
            (a, b) => IExpr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn rem(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) if y != 0 => IExpr::Lit(x % y),
            (_, IExpr::Lit(1)) => IExpr::Lit(0),
            (a, b) => IExpr::Rem(Box::new(a), Box::new(b)),
        }
    }

    pub fn min(a: IExpr, b: IExpr) -> IExpr {
        match (a, b) {
            (IExpr::Lit(x), IExpr::Lit(y)) => IExpr::Lit(x.min(y)),
            (a, b) if a == b => a,
            (a, b) => IExpr::Min(Box::new(a), Box::new(b)),
        }
    }

    /// `ceil(a / b)` for nonnegative operands.
    pub fn ceil_div(a: IExpr, b: i64) -> IExpr {
        IExpr::div(IExpr::add(a, IExpr::Lit(b - 1)), IExpr::Lit(b))
    }

    pub fn as_lit(&self) -> Option<i64> {
        match self {
            IExpr::Lit(v) => Some(*v),
            _ => None,
        }
    }

    /// Names of the variables read.
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            IExpr::Lit(_) | IExpr::Dim(_) => {}
            IExpr::Var(v) => {
                out.insert(v.clone());
            }
            IExpr::Pos(_, e) | IExpr::Crd(_, e) => e.collect_vars(out),
            IExpr::Add(a, b)
            | IExpr::Sub(a, b)
            | IExpr::Mul(a, b)
            | IExpr::Div(a, b)
            | IExpr::Rem(a, b)
            | IExpr::Min(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces variable `name` by `with`, re-folding literals.
    pub fn subst(&self, name: &str, with: &IExpr) -> IExpr {
        let s = |e: &IExpr| e.subst(name, with);
        match self {
            IExpr::Var(v) if v == name => with.clone(),
            IExpr::Lit(_) | IExpr::Var(_) | IExpr::Dim(_) => self.clone(),
            IExpr::Pos(m, e) => IExpr::pos(*m, s(e)),
            IExpr::Crd(m, e) => IExpr::crd(*m, s(e)),
            IExpr::Add(a, b) => IExpr::add(s(a), s(b)),
            IExpr::Sub(a, b) => IExpr::sub(s(a), s(b)),
            IExpr::Mul(a, b) => IExpr::mul(s(a), s(b)),
            IExpr::Div(a, b) => IExpr::div(s(a), s(b)),
            IExpr::Rem(a, b) => IExpr::rem(s(a), s(b)),
            IExpr::Min(a, b) => IExpr::min(s(a), s(b)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cond {
    Cmp(CmpOp, IExpr, IExpr),
    And(Vec<Cond>),
}

impl Cond {
    pub fn lt(a: IExpr, b: IExpr) -> Cond {
        Cond::Cmp(CmpOp::Lt, a, b)
    }

    pub fn le(a: IExpr, b: IExpr) -> Cond {
        Cond::Cmp(CmpOp::Le, a, b)
    }

    pub fn eq(a: IExpr, b: IExpr) -> Cond {
        Cond::Cmp(CmpOp::Eq, a, b)
    }

    pub fn ge(a: IExpr, b: IExpr) -> Cond {
        Cond::Cmp(CmpOp::Ge, a, b)
    }

    pub fn all(mut conds: Vec<Cond>) -> Cond {
        if conds.len() == 1 {
            conds.pop().expect("one condition")
        } else {
            Cond::And(conds)
        }
    }
}

/// Floating-point value expression.
#[derive(Clone, Debug, PartialEq)]
pub enum VExpr {
    Lit(f64),
    /// `vals` array of input tensor `tensor` (manifest order) at a position.
    Load {
        tensor: usize,
        pos: IExpr,
    },
    Workspace {
        name: String,
        idx: IExpr,
    },
    Mul(Box<VExpr>, Box<VExpr>),
    Add(Box<VExpr>, Box<VExpr>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Row-major offset into the dense output.
    Output(IExpr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Decl {
        name: String,
        value: IExpr,
    },
    Assign {
        name: String,
        value: IExpr,
    },
    For {
        var: String,
        lo: IExpr,
        hi: IExpr,
        parallel: Option<(ParallelUnit, RaceStrategy)>,
        unroll: Option<usize>,
        body: Vec<Stmt>,
    },
    While {
        cond: Cond,
        body: Vec<Stmt>,
    },
    If {
        cond: Cond,
        then: Vec<Stmt>,
        els: Vec<Stmt>,
    },
    /// Tail guard of a split or divide; counted by the interpreter.
    Guard {
        cond: Cond,
        body: Vec<Stmt>,
    },
    Block(Vec<Stmt>),
    /// `name` = largest `k` in `[lo, hi)` with `pos[k] <= key` (`lo` if none).
    SearchBefore {
        name: String,
        arr: usize,
        lo: IExpr,
        hi: IExpr,
        key: IExpr,
    },
    /// `name` = `k` in `[lo, hi)` with `crd[k] == key`, or -1.
    SearchExact {
        name: String,
        arr: usize,
        lo: IExpr,
        hi: IExpr,
        key: IExpr,
    },
    ReduceAdd {
        target: Target,
        value: VExpr,
        race: Option<RaceStrategy>,
        /// Variable values recorded per execution when tracing.
        trace: Vec<(String, IExpr)>,
    },
    WorkspaceAlloc {
        name: String,
        size: IExpr,
    },
    Store {
        workspace: String,
        idx: IExpr,
        value: VExpr,
    },
    /// Per-instance partial buffer, folded into the enclosing target in
    /// offset order when the region ends.
    TemporaryRegion(Vec<Stmt>),
    /// Runtime contract (bound checks); failure aborts execution.
    Check {
        cond: Cond,
        msg: String,
    },
    Comment(String),
}

impl Stmt {
    /// Visits every statement in the tree, pre-order.
    pub fn walk<'a>(stmts: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
        for s in stmts {
            f(s);
            match s {
                Stmt::For { body, .. }
                | Stmt::While { body, .. }
                | Stmt::Guard { body, .. }
                | Stmt::Block(body)
                | Stmt::TemporaryRegion(body) => Stmt::walk(body, f),
                Stmt::If { then, els, .. } => {
                    Stmt::walk(then, f);
                    Stmt::walk(els, f);
                }
                _ => {}
            }
        }
    }
}

/// Where a dimension slot or level array comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSlot {
    pub tensor: String,
    pub level: usize,
}

/// Parameter layout shared by the interpreter and the C entry point.
///
/// `dims` lists the output dimensions first, then every level of every input
/// tensor in order of first appearance; `pos`/`crd` list the compressed
/// levels of the inputs in the same order; `vals` lists the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub output: String,
    pub output_order: usize,
    pub inputs: Vec<String>,
    pub dims: Vec<LevelSlot>,
    pub arrays: Vec<LevelSlot>,
}

impl Manifest {
    pub fn dim_slot(&self, tensor: &str, level: usize) -> Option<usize> {
        self.dims
            .iter()
            .position(|s| s.tensor == tensor && s.level == level)
    }

    pub fn array(&self, tensor: &str, level: usize) -> Option<usize> {
        self.arrays
            .iter()
            .position(|s| s.tensor == tensor && s.level == level)
    }

    pub fn input_index(&self, tensor: &str) -> Option<usize> {
        self.inputs.iter().position(|t| t == tensor)
    }

    pub fn dim_name(&self, slot: usize) -> String {
        let s = &self.dims[slot];
        format!("{}{}_dimension", s.tensor, s.level + 1)
    }

    pub fn pos_name(&self, m: usize) -> String {
        let s = &self.arrays[m];
        format!("{}{}_pos", s.tensor, s.level + 1)
    }

    pub fn crd_name(&self, m: usize) -> String {
        let s = &self.arrays[m];
        format!("{}{}_crd", s.tensor, s.level + 1)
    }

    pub fn vals_name(&self, t: usize) -> String {
        format!("{}_vals", self.inputs[t])
    }
}

/// A lowered kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub statement: String,
    pub manifest: Manifest,
    pub body: Vec<Stmt>,
}

pub struct IExprDisplay<'a>(pub &'a IExpr, pub &'a Manifest);

impl fmt::Display for IExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_iexpr(self.0, self.1, f, 0)
    }
}

fn prec(e: &IExpr) -> u8 {
    match e {
        IExpr::Add(..) | IExpr::Sub(..) => 1,
        IExpr::Mul(..) | IExpr::Div(..) | IExpr::Rem(..) => 2,
        _ => 3,
    }
}

/// C-compatible infix printing with minimal parentheses. `ctx` is the
/// precedence the surrounding operator requires.
fn fmt_iexpr(e: &IExpr, m: &Manifest, f: &mut fmt::Formatter<'_>, ctx: u8) -> fmt::Result {
    let paren = prec(e) < ctx;
    if paren {
        f.write_str("(")?;
    }
    match e {
        IExpr::Lit(v) => write!(f, "{v}")?,
        IExpr::Var(v) => f.write_str(v)?,
        IExpr::Dim(s) => f.write_str(&m.dim_name(*s))?,
        IExpr::Pos(a, i) => {
            write!(f, "{}[", m.pos_name(*a))?;
            fmt_iexpr(i, m, f, 0)?;
            f.write_str("]")?;
        }
        IExpr::Crd(a, i) => {
            write!(f, "{}[", m.crd_name(*a))?;
            fmt_iexpr(i, m, f, 0)?;
            f.write_str("]")?;
        }
        IExpr::Min(a, b) => {
            f.write_str("(")?;
            fmt_iexpr(a, m, f, 3)?;
            f.write_str(" < ")?;
            fmt_iexpr(b, m, f, 3)?;
            f.write_str(" ? ")?;
            fmt_iexpr(a, m, f, 3)?;
            f.write_str(" : ")?;
            fmt_iexpr(b, m, f, 3)?;
            f.write_str(")")?;
        }
        IExpr::Add(a, b) | IExpr::Sub(a, b) => {
            fmt_iexpr(a, m, f, 1)?;
            f.write_str(if matches!(e, IExpr::Add(..)) {
                " + "
            } else {
                " - "
            })?;
            fmt_iexpr(b, m, f, 2)?;
        }
        IExpr::Mul(a, b) | IExpr::Div(a, b) | IExpr::Rem(a, b) => {
            fmt_iexpr(a, m, f, 2)?;
            f.write_str(match e {
                IExpr::Mul(..) => " * ",
                IExpr::Div(..) => " / ",
                _ => " % ",
            })?;
            fmt_iexpr(b, m, f, 3)?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

pub struct CondDisplay<'a>(pub &'a Cond, pub &'a Manifest);

impl fmt::Display for CondDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Cond::Cmp(op, a, b) => write!(
                f,
                "{} {} {}",
                IExprDisplay(a, self.1),
                op.symbol(),
                IExprDisplay(b, self.1)
            ),
            Cond::And(cs) => {
                for (n, c) in cs.iter().enumerate() {
                    if n > 0 {
                        f.write_str(" && ")?;
                    }
                    write!(f, "{}", CondDisplay(c, self.1))?;
                }
                Ok(())
            }
        }
    }
}

pub struct VExprDisplay<'a>(pub &'a VExpr, pub &'a Manifest);

impl fmt::Display for VExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.1;
        match self.0 {
            VExpr::Lit(v) => write!(f, "{v:?}"),
            VExpr::Load { tensor, pos } => {
                write!(f, "{}[{}]", m.vals_name(*tensor), IExprDisplay(pos, m))
            }
            VExpr::Workspace { name, idx } => write!(f, "{name}[{}]", IExprDisplay(idx, m)),
            VExpr::Mul(a, b) => {
                let wrap = |e: &VExpr| matches!(e, VExpr::Add(..));
                if wrap(a) {
                    write!(f, "({})", VExprDisplay(a, m))?;
                } else {
                    write!(f, "{}", VExprDisplay(a, m))?;
                }
                f.write_str(" * ")?;
                if wrap(b) || matches!(**b, VExpr::Mul(..)) {
                    write!(f, "({})", VExprDisplay(b, m))
                } else {
                    write!(f, "{}", VExprDisplay(b, m))
                }
            }
            VExpr::Add(a, b) => {
                write!(f, "{} + ", VExprDisplay(a, m))?;
                if matches!(**b, VExpr::Add(..)) {
                    write!(f, "({})", VExprDisplay(b, m))
                } else {
                    write!(f, "{}", VExprDisplay(b, m))
                }
            }
        }
    }
}

impl Kernel {
    /// Stable line-oriented listing used by `--dump-ir`.
    pub fn pretty(&self) -> String {
        let mut out = format!("kernel {}\n", self.statement);
        pretty_block(&self.body, &self.manifest, 1, &mut out);
        out
    }
}

fn pretty_block(stmts: &[Stmt], m: &Manifest, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let e = |x: &IExpr| IExprDisplay(x, m).to_string();
    let c = |x: &Cond| CondDisplay(x, m).to_string();
    for s in stmts {
        match s {
            Stmt::Decl { name, value } => {
                let _ = writeln!(out, "{pad}let {name} = {}", e(value));
            }
            Stmt::Assign { name, value } => {
                let _ = writeln!(out, "{pad}{name} = {}", e(value));
            }
            Stmt::For {
                var,
                lo,
                hi,
                parallel,
                unroll,
                body,
            } => {
                let mut tags = String::new();
                if let Some((u, r)) = parallel {
                    let _ = write!(tags, " parallel({u}, {r})");
                }
                if let Some(k) = unroll {
                    let _ = write!(tags, " unroll({k})");
                }
                let _ = writeln!(out, "{pad}for {var} in [{}, {}){tags}", e(lo), e(hi));
                pretty_block(body, m, depth + 1, out);
            }
            Stmt::While { cond, body } => {
                let _ = writeln!(out, "{pad}while {}", c(cond));
                pretty_block(body, m, depth + 1, out);
            }
            Stmt::If { cond, then, els } => {
                let _ = writeln!(out, "{pad}if {}", c(cond));
                pretty_block(then, m, depth + 1, out);
                if !els.is_empty() {
                    let _ = writeln!(out, "{pad}else");
                    pretty_block(els, m, depth + 1, out);
                }
            }
            Stmt::Guard { cond, body } => {
                let _ = writeln!(out, "{pad}guard {}", c(cond));
                pretty_block(body, m, depth + 1, out);
            }
            Stmt::Block(body) => {
                let _ = writeln!(out, "{pad}block");
                pretty_block(body, m, depth + 1, out);
            }
            Stmt::SearchBefore {
                name,
                arr,
                lo,
                hi,
                key,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}let {name} = search_before({}, {}, {}, {})",
                    m.pos_name(*arr),
                    e(lo),
                    e(hi),
                    e(key)
                );
            }
            Stmt::SearchExact {
                name,
                arr,
                lo,
                hi,
                key,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}let {name} = search_exact({}, {}, {}, {})",
                    m.crd_name(*arr),
                    e(lo),
                    e(hi),
                    e(key)
                );
            }
            Stmt::ReduceAdd {
                target: Target::Output(off),
                value,
                race,
                ..
            } => {
                let tag = race.map(|r| format!(" [{r}]")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{pad}{}[{}] += {}{tag}",
                    m.output,
                    e(off),
                    VExprDisplay(value, m)
                );
            }
            Stmt::WorkspaceAlloc { name, size } => {
                let _ = writeln!(out, "{pad}workspace {name}[{}] = 0", e(size));
            }
            Stmt::Store {
                workspace,
                idx,
                value,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}{workspace}[{}] = {}",
                    e(idx),
                    VExprDisplay(value, m)
                );
            }
            Stmt::TemporaryRegion(body) => {
                let _ = writeln!(out, "{pad}temporary");
                pretty_block(body, m, depth + 1, out);
            }
            Stmt::Check { cond, msg } => {
                let _ = writeln!(out, "{pad}check {} \"{msg}\"", c(cond));
            }
            Stmt::Comment(text) => {
                let _ = writeln!(out, "{pad}// {text}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            output: "y".into(),
            output_order: 1,
            inputs: vec!["A".into()],
            dims: vec![
                LevelSlot {
                    tensor: "y".into(),
                    level: 0,
                },
                LevelSlot {
                    tensor: "A".into(),
                    level: 0,
                },
            ],
            arrays: vec![LevelSlot {
                tensor: "A".into(),
                level: 1,
            }],
        }
    }

    #[test]
    fn folding_is_literal_only() {
        assert_eq!(IExpr::ceil_div(IExpr::Lit(30), 7), IExpr::Lit(5));
        assert_eq!(IExpr::add(IExpr::var("i"), IExpr::Lit(0)), IExpr::var("i"));
        let e = IExpr::add(IExpr::var("i"), IExpr::var("i"));
        assert!(matches!(e, IExpr::Add(..)));
    }

    #[test]
    fn printing_uses_minimal_parentheses() {
        let m = manifest();
        let e = IExpr::mul(
            IExpr::add(IExpr::var("a"), IExpr::var("b")),
            IExpr::sub(IExpr::var("c"), IExpr::Dim(1)),
        );
        assert_eq!(
            IExprDisplay(&e, &m).to_string(),
            "(a + b) * (c - A1_dimension)"
        );
        let e = IExpr::sub(
            IExpr::var("a"),
            IExpr::sub(IExpr::var("b"), IExpr::var("c")),
        );
        assert_eq!(IExprDisplay(&e, &m).to_string(), "a - (b - c)");
        let e = IExpr::pos(0, IExpr::add(IExpr::var("i"), IExpr::Lit(1)));
        assert_eq!(IExprDisplay(&e, &m).to_string(), "A2_pos[i + 1]");
    }

    #[test]
    fn subst_refolds() {
        let e = IExpr::add(IExpr::mul(IExpr::var("t"), IExpr::Lit(4)), IExpr::var("b"));
        let got = e.subst("t", &IExpr::Lit(0));
        assert_eq!(got, IExpr::var("b"));
    }
}
