//! Reference interpreter for lowered kernels.

use std::collections::BTreeMap;

use crate::lower::{CmpOp, Cond, IExpr, Kernel, Manifest, Stmt, Target, VExpr};
use crate::schedule::ParallelUnit;
use crate::tensor::{DenseTensor, Inputs, Level};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("input tensor '{0}' is not bound")]
    MissingInput(String),
    #[error(
        "tensor '{tensor}' level {level} does not have the format the kernel was compiled for"
    )]
    FormatMismatch { tensor: String, level: usize },
    #[error("output has {got} dimensions, expected {expected}")]
    OutputOrder { got: usize, expected: usize },
    #[error("index {index} out of bounds for {array} of length {len}")]
    OutOfBounds {
        array: String,
        index: i64,
        len: usize,
    },
    #[error("variable '{0}' read before it was set")]
    Unset(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

type Result<T> = std::result::Result<T, ExecError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// Record the loop variable values at every compute statement.
    pub trace: bool,
    /// Run the outermost `CPUThread` loop on this many OS threads.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    /// Iterations executed per `for` loop variable.
    pub loop_iterations: BTreeMap<String, u64>,
    /// For every parallel loop, the number of compute statements executed in
    /// each of its iterations, in execution order.
    pub instance_work: BTreeMap<String, Vec<u64>>,
    pub guard_passes: u64,
    pub guard_failures: u64,
    /// Compute statements executed.
    pub body_executions: u64,
    pub trace: Vec<Vec<(String, i64)>>,
}

impl ExecStats {
    fn merge(&mut self, other: ExecStats) {
        for (k, v) in other.loop_iterations {
            *self.loop_iterations.entry(k).or_default() += v;
        }
        for (k, v) in other.instance_work {
            self.instance_work.entry(k).or_default().extend(v);
        }
        self.guard_passes += other.guard_passes;
        self.guard_failures += other.guard_failures;
        self.body_executions += other.body_executions;
        self.trace.extend(other.trace);
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Min,
}

#[derive(Clone, Debug)]
enum RE {
    Lit(i64),
    Slot(usize),
    Dim(usize),
    Pos(usize, Box<RE>),
    Crd(usize, Box<RE>),
    Bin(Op, Box<RE>, Box<RE>),
}

#[derive(Clone, Debug)]
enum RC {
    Cmp(CmpOp, RE, RE),
    And(Vec<RC>),
}

#[derive(Clone, Debug)]
enum RV {
    Lit(f64),
    Load(usize, RE),
    Ws(usize, RE),
    Mul(Box<RV>, Box<RV>),
    Add(Box<RV>, Box<RV>),
}

#[derive(Clone, Debug)]
enum RS {
    Set(usize, RE),
    For {
        slot: usize,
        name: usize,
        lo: RE,
        hi: RE,
        parallel: Option<ParallelUnit>,
        body: Vec<RS>,
    },
    While(RC, Vec<RS>),
    If(RC, Vec<RS>, Vec<RS>),
    Guard(RC, Vec<RS>),
    Block(Vec<RS>),
    SearchBefore {
        slot: usize,
        arr: usize,
        lo: RE,
        hi: RE,
        key: RE,
    },
    SearchExact {
        slot: usize,
        arr: usize,
        lo: RE,
        hi: RE,
        key: RE,
    },
    Reduce {
        off: RE,
        value: RV,
        trace: Vec<(usize, RE)>,
    },
    Alloc(usize, RE),
    Store(usize, RE, RV),
    Temp(Vec<RS>),
    Check(RC, String),
}

/// Resolves names to slots once so execution does no string lookups.
#[derive(Default)]
struct Resolver {
    slots: BTreeMap<String, usize>,
    names: Vec<String>,
    workspaces: BTreeMap<String, usize>,
}

impl Resolver {
    fn slot(&mut self, name: &str) -> usize {
        if let Some(&s) = self.slots.get(name) {
            return s;
        }
        let s = self.names.len();
        self.names.push(name.to_string());
        self.slots.insert(name.to_string(), s);
        s
    }

    fn ws(&mut self, name: &str) -> usize {
        let n = self.workspaces.len();
        *self.workspaces.entry(name.to_string()).or_insert(n)
    }

    fn expr(&mut self, e: &IExpr) -> RE {
        let bin = |r: &mut Self, op, a: &IExpr, b: &IExpr| {
            RE::Bin(op, Box::new(r.expr(a)), Box::new(r.expr(b)))
        };
        match e {
            IExpr::Lit(v) => RE::Lit(*v),
            IExpr::Var(n) => RE::Slot(self.slot(n)),
            IExpr::Dim(d) => RE::Dim(*d),
            IExpr::Pos(m, i) => RE::Pos(*m, Box::new(self.expr(i))),
            IExpr::Crd(m, i) => RE::Crd(*m, Box::new(self.expr(i))),
            IExpr::Add(a, b) => bin(self, Op::Add, a, b),
            IExpr::Sub(a, b) => bin(self, Op::Sub, a, b),
            IExpr::Mul(a, b) => bin(self, Op::Mul, a, b),
            IExpr::Div(a, b) => bin(self, Op::Div, a, b),
            IExpr::Rem(a, b) => bin(self, Op::Rem, a, b),
            IExpr::Min(a, b) => bin(self, Op::Min, a, b),
        }
    }

    fn cond(&mut self, c: &Cond) -> RC {
        match c {
            Cond::Cmp(op, a, b) => RC::Cmp(*op, self.expr(a), self.expr(b)),
            Cond::And(cs) => RC::And(cs.iter().map(|c| self.cond(c)).collect()),
        }
    }

    fn value(&mut self, v: &VExpr) -> RV {
        match v {
            VExpr::Lit(x) => RV::Lit(*x),
            VExpr::Load { tensor, pos } => RV::Load(*tensor, self.expr(pos)),
            VExpr::Workspace { name, idx } => RV::Ws(self.ws(name), self.expr(idx)),
            VExpr::Mul(a, b) => RV::Mul(Box::new(self.value(a)), Box::new(self.value(b))),
            VExpr::Add(a, b) => RV::Add(Box::new(self.value(a)), Box::new(self.value(b))),
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Vec<RS> {
        stmts.iter().filter_map(|s| self.stmt(s)).collect()
    }

    fn stmt(&mut self, s: &Stmt) -> Option<RS> {
        Some(match s {
            Stmt::Decl { name, value } | Stmt::Assign { name, value } => {
                let v = self.expr(value);
                RS::Set(self.slot(name), v)
            }
            Stmt::For {
                var,
                lo,
                hi,
                parallel,
                body,
                ..
            } => {
                let slot = self.slot(var);
                RS::For {
                    slot,
                    name: slot,
                    lo: self.expr(lo),
                    hi: self.expr(hi),
                    parallel: parallel.map(|(u, _)| u),
                    body: self.block(body),
                }
            }
            Stmt::While { cond, body } => RS::While(self.cond(cond), self.block(body)),
            Stmt::If { cond, then, els } => {
                RS::If(self.cond(cond), self.block(then), self.block(els))
            }
            Stmt::Guard { cond, body } => RS::Guard(self.cond(cond), self.block(body)),
            Stmt::Block(body) => RS::Block(self.block(body)),
            Stmt::SearchBefore {
                name,
                arr,
                lo,
                hi,
                key,
            } => RS::SearchBefore {
                slot: self.slot(name),
                arr: *arr,
                lo: self.expr(lo),
                hi: self.expr(hi),
                key: self.expr(key),
            },
            Stmt::SearchExact {
                name,
                arr,
                lo,
                hi,
                key,
            } => RS::SearchExact {
                slot: self.slot(name),
                arr: *arr,
                lo: self.expr(lo),
                hi: self.expr(hi),
                key: self.expr(key),
            },
            Stmt::ReduceAdd {
                target: Target::Output(off),
                value,
                trace,
                ..
            } => RS::Reduce {
                off: self.expr(off),
                value: self.value(value),
                trace: trace
                    .iter()
                    .map(|(n, e)| {
                        let s = self.slot(n);
                        (s, self.expr(e))
                    })
                    .collect(),
            },
            Stmt::WorkspaceAlloc { name, size } => RS::Alloc(self.ws(name), self.expr(size)),
            Stmt::Store {
                workspace,
                idx,
                value,
            } => RS::Store(self.ws(workspace), self.expr(idx), self.value(value)),
            Stmt::TemporaryRegion(body) => RS::Temp(self.block(body)),
            Stmt::Check { cond, msg } => RS::Check(self.cond(cond), msg.clone()),
            Stmt::Comment(_) => return None,
        })
    }
}

const UNSET: i64 = i64::MIN;

/// Storage bound to a kernel's manifest.
pub(crate) struct Bound<'a> {
    pub(crate) dims: Vec<i64>,
    pub(crate) pos: Vec<&'a [usize]>,
    pub(crate) crd: Vec<&'a [usize]>,
    pub(crate) vals: Vec<&'a [f64]>,
    pub(crate) out_dims: Vec<usize>,
}

pub(crate) fn bind<'a>(m: &Manifest, inputs: &'a Inputs, out_dims: &[usize]) -> Result<Bound<'a>> {
    if out_dims.len() != m.output_order {
        return Err(ExecError::OutputOrder {
            got: out_dims.len(),
            expected: m.output_order,
        });
    }
    let tensor = |name: &str| {
        inputs
            .get(name)
            .ok_or_else(|| ExecError::MissingInput(name.to_string()))
    };
    for name in &m.inputs {
        let t = tensor(name)?;
        for (level, lf) in t.format().levels().iter().enumerate() {
            if lf.is_compressed() != m.array(name, level).is_some() {
                return Err(ExecError::FormatMismatch {
                    tensor: name.clone(),
                    level,
                });
            }
        }
    }
    let mut dims = Vec::new();
    for slot in &m.dims {
        let d = if slot.tensor == m.output {
            out_dims[slot.level]
        } else {
            let t = tensor(&slot.tensor)?;
            *t.dims()
                .get(slot.level)
                .ok_or_else(|| ExecError::FormatMismatch {
                    tensor: slot.tensor.clone(),
                    level: slot.level,
                })?
        };
        dims.push(d as i64);
    }
    let mut pos = Vec::new();
    let mut crd = Vec::new();
    for slot in &m.arrays {
        match tensor(&slot.tensor)?.level(slot.level) {
            Level::Compressed { pos: p, crd: c } => {
                pos.push(p.as_slice());
                crd.push(c.as_slice());
            }
            Level::Dense { .. } => {
                return Err(ExecError::FormatMismatch {
                    tensor: slot.tensor.clone(),
                    level: slot.level,
                })
            }
        }
    }
    let vals = m
        .inputs
        .iter()
        .map(|n| tensor(n).map(|t| t.vals()))
        .collect::<Result<_>>()?;
    Ok(Bound {
        dims,
        pos,
        crd,
        vals,
        out_dims: out_dims.to_vec(),
    })
}

#[derive(Clone)]
struct Machine<'a> {
    b: &'a Bound<'a>,
    m: &'a Manifest,
    names: &'a [String],
    env: Vec<i64>,
    ws: Vec<Vec<f64>>,
    out: Vec<f64>,
    temps: Vec<BTreeMap<usize, f64>>,
    /// Work counters of the enclosing parallel loop iterations.
    work: Vec<u64>,
    stats: ExecStats,
    trace: bool,
    threads: Option<usize>,
}

fn oob(array: String, index: i64, len: usize) -> ExecError {
    ExecError::OutOfBounds { array, index, len }
}

fn at<T: Copy>(arr: &[T], i: i64, name: impl FnOnce() -> String) -> Result<T> {
    usize::try_from(i)
        .ok()
        .and_then(|u| arr.get(u).copied())
        .ok_or_else(|| oob(name(), i, arr.len()))
}

impl Machine<'_> {
    fn eval(&self, e: &RE) -> Result<i64> {
        Ok(match e {
            RE::Lit(v) => *v,
            RE::Slot(s) => {
                let v = self.env[*s];
                if v == UNSET {
                    return Err(ExecError::Unset(self.names[*s].clone()));
                }
                v
            }
            RE::Dim(d) => self.b.dims[*d],
            RE::Pos(m, i) => at(self.b.pos[*m], self.eval(i)?, || self.m.pos_name(*m))? as i64,
            RE::Crd(m, i) => at(self.b.crd[*m], self.eval(i)?, || self.m.crd_name(*m))? as i64,
            RE::Bin(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    Op::Mul => x * y,
                    Op::Div => x.checked_div(y).ok_or(ExecError::DivisionByZero)?,
                    Op::Rem => x.checked_rem(y).ok_or(ExecError::DivisionByZero)?,
                    Op::Min => x.min(y),
                }
            }
        })
    }

    fn test(&self, c: &RC) -> Result<bool> {
        Ok(match c {
            RC::Cmp(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ge => x >= y,
                }
            }
            RC::And(cs) => {
                for c in cs {
                    if !self.test(c)? {
                        return Ok(false);
                    }
                }
                true
            }
        })
    }

    fn value(&self, v: &RV) -> Result<f64> {
        Ok(match v {
            RV::Lit(x) => *x,
            RV::Load(t, i) => at(self.b.vals[*t], self.eval(i)?, || self.m.vals_name(*t))?,
            RV::Ws(w, i) => at(&self.ws[*w], self.eval(i)?, || "workspace".to_string())?,
            RV::Mul(a, b) => self.value(a)? * self.value(b)?,
            RV::Add(a, b) => self.value(a)? + self.value(b)?,
        })
    }

    fn run(&mut self, stmts: &[RS]) -> Result<()> {
        for s in stmts {
            self.step(s)?;
        }
        Ok(())
    }

    fn step(&mut self, s: &RS) -> Result<()> {
        match s {
            RS::Set(slot, e) => self.env[*slot] = self.eval(e)?,
            RS::For {
                slot,
                name,
                lo,
                hi,
                parallel,
                body,
            } => {
                let (lo, hi) = (self.eval(lo)?, self.eval(hi)?);
                if let (Some(ParallelUnit::CPUThread), Some(n)) = (parallel, self.threads) {
                    if n > 1 && hi - lo > 1 {
                        return self.run_threaded(*slot, *name, lo, hi, n, body);
                    }
                }
                self.run_range(*slot, *name, lo, hi, parallel.is_some(), body)?;
            }
            RS::While(c, body) => {
                while self.test(c)? {
                    self.run(body)?;
                }
            }
            RS::If(c, then, els) => {
                if self.test(c)? {
                    self.run(then)?;
                } else {
                    self.run(els)?;
                }
            }
            RS::Guard(c, body) => {
                if self.test(c)? {
                    self.stats.guard_passes += 1;
                    self.run(body)?;
                } else {
                    self.stats.guard_failures += 1;
                }
            }
            RS::Block(body) => self.run(body)?,
            RS::SearchBefore {
                slot,
                arr,
                lo,
                hi,
                key,
            } => {
                let (mut lo, mut hi, key) = (self.eval(lo)?, self.eval(hi)?, self.eval(key)?);
                let pos = self.b.pos[*arr];
                // invariant: answer in [lo, hi)
                let start = lo;
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if at(pos, mid, || self.m.pos_name(*arr))? as i64 <= key {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                self.env[*slot] = lo.max(start);
            }
            RS::SearchExact {
                slot,
                arr,
                lo,
                hi,
                key,
            } => {
                let (lo, hi, key) = (self.eval(lo)?, self.eval(hi)?, self.eval(key)?);
                let crd = self.b.crd[*arr];
                let seg = crd
                    .get(lo.max(0) as usize..hi.max(lo).max(0) as usize)
                    .ok_or_else(|| oob(self.m.crd_name(*arr), hi, crd.len()))?;
                self.env[*slot] = match seg.binary_search(&(key.max(0) as usize)) {
                    Ok(k) if key >= 0 => lo + k as i64,
                    _ => -1,
                };
            }
            RS::Reduce { off, value, trace } => {
                let off = self.eval(off)?;
                let v = self.value(value)?;
                self.stats.body_executions += 1;
                for w in &mut self.work {
                    *w += 1;
                }
                if self.trace {
                    let mut row = Vec::with_capacity(trace.len());
                    for (name, e) in trace {
                        row.push((self.names[*name].clone(), self.eval(e)?));
                    }
                    self.stats.trace.push(row);
                }
                let len = self.out.len();
                let idx = usize::try_from(off)
                    .ok()
                    .filter(|&u| u < len)
                    .ok_or_else(|| oob(self.m.output.clone(), off, len))?;
                match self.temps.last_mut() {
                    Some(t) => *t.entry(idx).or_insert(0.0) += v,
                    None => self.out[idx] += v,
                }
            }
            RS::Alloc(w, size) => {
                let n = self.eval(size)?.max(0) as usize;
                if self.ws.len() <= *w {
                    self.ws.resize(*w + 1, Vec::new());
                }
                self.ws[*w] = vec![0.0; n];
            }
            RS::Store(w, idx, value) => {
                let i = self.eval(idx)?;
                let v = self.value(value)?;
                let ws = &mut self.ws[*w];
                let len = ws.len();
                let slot = usize::try_from(i)
                    .ok()
                    .and_then(|u| ws.get_mut(u))
                    .ok_or_else(|| oob("workspace".into(), i, len))?;
                *slot = v;
            }
            RS::Temp(body) => {
                self.temps.push(BTreeMap::new());
                let r = self.run(body);
                let buf = self.temps.pop().expect("temporary");
                r?;
                for (idx, v) in buf {
                    match self.temps.last_mut() {
                        Some(t) => *t.entry(idx).or_insert(0.0) += v,
                        None => self.out[idx] += v,
                    }
                }
            }
            RS::Check(c, msg) => {
                if !self.test(c)? {
                    return Err(ExecError::ContractViolation(msg.clone()));
                }
            }
        }
        Ok(())
    }

    fn run_range(
        &mut self,
        slot: usize,
        name: usize,
        lo: i64,
        hi: i64,
        parallel: bool,
        body: &[RS],
    ) -> Result<()> {
        let mut count = 0u64;
        let mut work = Vec::new();
        for v in lo..hi {
            self.env[slot] = v;
            count += 1;
            if parallel {
                self.work.push(0);
            }
            let r = self.run(body);
            if parallel {
                work.push(self.work.pop().expect("work counter"));
            }
            r?;
        }
        let key = &self.names[name];
        *self.stats.loop_iterations.entry(key.clone()).or_default() += count;
        if parallel {
            self.stats
                .instance_work
                .entry(key.clone())
                .or_default()
                .extend(work);
        }
        Ok(())
    }

    /// Contiguous chunks of `[lo, hi)` on scoped threads, each with a private
    /// output, folded back in chunk order.
    fn run_threaded(
        &mut self,
        slot: usize,
        name: usize,
        lo: i64,
        hi: i64,
        n: usize,
        body: &[RS],
    ) -> Result<()> {
        let total = hi - lo;
        let chunk = (total + n as i64 - 1) / n as i64;
        let results: Vec<Result<Machine>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..n as i64)
                .map(|g| (lo + g * chunk, (lo + (g + 1) * chunk).min(hi)))
                .filter(|(a, b)| a < b)
                .map(|(a, b)| {
                    let mut m = self.clone();
                    m.threads = None;
                    m.stats = ExecStats::default();
                    m.out = vec![0.0; self.out.len()];
                    m.work = vec![0; self.work.len()];
                    s.spawn(move || m.run_range(slot, name, a, b, true, body).map(|_| m))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            let m = r?;
            for (o, v) in self.out.iter_mut().zip(&m.out) {
                *o += v;
            }
            for (w, v) in self.work.iter_mut().zip(&m.work) {
                *w += v;
            }
            self.stats.merge(m.stats);
        }
        Ok(())
    }
}

/// Executes `kernel` on `inputs`, producing a dense output of `out_dims`.
pub fn execute(
    kernel: &Kernel,
    inputs: &Inputs,
    out_dims: &[usize],
    opts: ExecOptions,
) -> Result<(DenseTensor, ExecStats)> {
    let b = bind(&kernel.manifest, inputs, out_dims)?;
    let mut r = Resolver::default();
    let code = r.block(&kernel.body);
    let size: usize = b.out_dims.iter().product();
    let mut m = Machine {
        b: &b,
        m: &kernel.manifest,
        names: &r.names,
        env: vec![UNSET; r.names.len()],
        ws: vec![Vec::new(); r.workspaces.len()],
        out: vec![0.0; size],
        temps: Vec::new(),
        work: Vec::new(),
        stats: ExecStats::default(),
        trace: opts.trace,
        threads: opts.threads,
    };
    m.run(&code)?;
    let mut out = DenseTensor::zeros(b.out_dims.clone());
    out.vals = m.out;
    Ok((out, m.stats))
}
