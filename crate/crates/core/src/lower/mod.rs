//! Lowering of a scheduled statement to loop IR.
//!
//! Loops are emitted outermost first. Inside each loop body the lowerer
//! repeatedly takes the first ready step: recover a split or divide parent
//! (opening a tail guard when the split may overshoot), then fuse, bound,
//! coord and pos recoveries in provenance order, then locate positions of
//! accessed tensors. When no step is ready it opens the next loop, or emits
//! the compute statement once the chain is exhausted.

pub mod bounds;
pub mod ir;
pub mod recover;

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{build_lattice, GraphError, OpExpr};
use crate::notation::IndexVar;
use crate::schedule::provenance::Relation;
use crate::schedule::{RaceStrategy, SchedError, ScheduledStmt};
use crate::tensor::LevelKind;

pub use bounds::{propagate_bounds, AccessInfo, Domain, LevelRef};
pub use ir::{CmpOp, Cond, IExpr, Kernel, LevelSlot, Manifest, Stmt, Target, VExpr};
pub use recover::{RecoverMode, Recoverer};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LowerError {
    #[error("no extent known for index variable '{0}'")]
    UnknownExtent(String),
    #[error("'{0}' is needed before it can be computed")]
    NotReady(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type Result<T> = std::result::Result<T, LowerError>;

/// How coordinates are recovered from position loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Recovery {
    /// Keep the parent position in a variable and advance it as the loop
    /// moves forward; falls back to `Search` where that is not sound.
    #[default]
    Track,
    /// Binary-search the parent position in every iteration.
    Search,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LowerOptions {
    pub recovery: Recovery,
    /// Emit checks that derived and original values round-trip at every
    /// compute point.
    pub verify_recovery: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Main,
    Producer,
    Consumer,
}

#[derive(Clone, Debug)]
struct Ctx {
    depth: usize,
    known: BTreeSet<String>,
    done: BTreeSet<usize>,
    expr: Option<OpExpr>,
    mode: Mode,
    races: Vec<RaceStrategy>,
    tracked: BTreeSet<usize>,
}

struct Lowerer<'a> {
    stmt: &'a ScheduledStmt,
    opts: LowerOptions,
    manifest: Manifest,
    accesses: Vec<AccessInfo>,
    domains: BTreeMap<IndexVar, Domain>,
    chain: Vec<IndexVar>,
    rels: Vec<Relation>,
}

/// Builds the parameter manifest and the per-access storage description.
pub fn layout(stmt: &ScheduledStmt) -> (Manifest, Vec<AccessInfo>) {
    let a = &stmt.assignment;
    let mut dims: Vec<LevelSlot> = (0..a.lhs.vars.len())
        .map(|level| LevelSlot {
            tensor: a.lhs.tensor.clone(),
            level,
        })
        .collect();
    let mut arrays = Vec::new();
    let inputs = a.inputs();
    for t in &inputs {
        for (level, lf) in stmt.formats[t].levels().iter().enumerate() {
            let slot = LevelSlot {
                tensor: t.clone(),
                level,
            };
            if lf.kind == LevelKind::Compressed {
                arrays.push(slot.clone());
            }
            dims.push(slot);
        }
    }
    let manifest = Manifest {
        output: a.lhs.tensor.clone(),
        output_order: a.lhs.vars.len(),
        inputs: inputs.clone(),
        dims,
        arrays,
    };
    let accs = a.accesses();
    let infos = accs
        .iter()
        .enumerate()
        .map(|(id, acc)| {
            let repeats = accs.iter().filter(|b| b.tensor == acc.tensor).count() > 1;
            let occurrence = accs[..id].iter().filter(|b| b.tensor == acc.tensor).count();
            let levels = stmt.formats[&acc.tensor]
                .levels()
                .iter()
                .enumerate()
                .map(|(l, lf)| match lf.kind {
                    LevelKind::Compressed => {
                        LevelRef::Compressed(manifest.array(&acc.tensor, l).expect("array"))
                    }
                    LevelKind::Dense => {
                        LevelRef::Dense(IExpr::Dim(manifest.dim_slot(&acc.tensor, l).expect("dim")))
                    }
                })
                .collect();
            let pos_names = (0..acc.vars.len())
                .map(|l| {
                    if repeats {
                        format!("p{}{}_{}", acc.tensor, occurrence, l)
                    } else {
                        format!("p{}{}", acc.tensor, l)
                    }
                })
                .collect();
            AccessInfo {
                tensor: acc.tensor.clone(),
                input: manifest.input_index(&acc.tensor).expect("input"),
                vars: acc.vars.clone(),
                levels,
                pos_names,
            }
        })
        .collect();
    (manifest, infos)
}

/// Symbolic extents of the original variables, read from the first input
/// level each variable indexes.
fn original_extents(
    stmt: &ScheduledStmt,
    accesses: &[AccessInfo],
    m: &Manifest,
) -> BTreeMap<IndexVar, IExpr> {
    let mut out = BTreeMap::new();
    for acc in accesses {
        for (l, v) in acc.vars.iter().enumerate() {
            out.entry(v.clone())
                .or_insert_with(|| IExpr::Dim(m.dim_slot(&acc.tensor, l).expect("dim")));
        }
    }
    for (l, v) in stmt.assignment.lhs.vars.iter().enumerate() {
        out.entry(v.clone()).or_insert(IExpr::Dim(l));
    }
    out
}

/// Domains of every variable of a scheduled statement.
pub fn domains(stmt: &ScheduledStmt) -> Result<BTreeMap<IndexVar, Domain>> {
    let (m, accs) = layout(stmt);
    propagate_bounds(&stmt.provenance, &original_extents(stmt, &accs, &m), &accs)
}

pub fn lower(stmt: &ScheduledStmt, opts: LowerOptions) -> Result<Kernel> {
    stmt.validate()?;
    let (manifest, accesses) = layout(stmt);
    let extents = original_extents(stmt, &accesses, &manifest);
    let domains = propagate_bounds(&stmt.provenance, &extents, &accesses)?;
    let rels = stmt.provenance.relations().to_vec();
    let lw = Lowerer {
        stmt,
        opts,
        manifest,
        accesses,
        domains,
        chain: stmt.loops().to_vec(),
        rels,
    };
    let done = lw
        .rels
        .iter()
        .enumerate()
        .filter(
            |(_, r)| matches!(r, Relation::Pos { pos, .. } if !stmt.provenance.pos_is_active(pos)),
        )
        .map(|(n, _)| n)
        .collect();
    let ctx = Ctx {
        depth: 0,
        known: BTreeSet::new(),
        done,
        expr: Some(OpExpr::from_expr(&stmt.assignment.rhs)),
        mode: Mode::Main,
        races: Vec::new(),
        tracked: BTreeSet::new(),
    };
    let body = lw.lower_rest(ctx)?;
    Ok(Kernel {
        statement: stmt.assignment.to_string(),
        manifest: lw.manifest,
        body,
    })
}

fn var(v: &IndexVar) -> IExpr {
    IExpr::var(v.0.clone())
}

impl Lowerer<'_> {
    fn dom(&self, v: &IndexVar) -> Result<&Domain> {
        self.domains
            .get(v)
            .ok_or_else(|| LowerError::UnknownExtent(v.0.clone()))
    }

    fn all_known(ctx: &Ctx, e: &IExpr) -> bool {
        e.vars().iter().all(|n| ctx.known.contains(n))
    }

    fn dom_ready(&self, ctx: &Ctx, v: &IndexVar) -> bool {
        self.domains
            .get(v)
            .is_some_and(|d| Self::all_known(ctx, &d.lo) && Self::all_known(ctx, &d.hi))
    }

    fn is_known(ctx: &Ctx, v: &IndexVar) -> bool {
        ctx.known.contains(v.name())
    }

    fn lower_rest(&self, mut ctx: Ctx) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            match self.split_step(&mut ctx, &mut out)? {
                Some(Some(guard)) => {
                    let body = self.lower_rest(ctx)?;
                    out.push(Stmt::Guard { cond: guard, body });
                    return Ok(out);
                }
                Some(None) => continue,
                None => {}
            }
            if self.recovery_step(&mut ctx, &mut out)? {
                continue;
            }
            if let Some((name, acc)) = self.locate_step(&mut ctx, &mut out)? {
                let cond = Cond::ge(IExpr::var(name.clone()), IExpr::Lit(0));
                let expr = ctx.expr.clone().expect("live expression");
                let absent = expr.restrict(&|id| id != acc);
                let mut present = ctx.clone();
                present.known.insert(name);
                let then = self.lower_rest(present)?;
                let els = match absent {
                    Some(e) => {
                        let mut ctx = ctx;
                        ctx.expr = Some(e);
                        self.lower_rest(ctx)?
                    }
                    None => Vec::new(),
                };
                out.push(Stmt::If { cond, then, els });
                return Ok(out);
            }
            break;
        }
        if ctx.depth < self.chain.len() {
            out.extend(self.emit_loop(ctx)?);
        } else {
            out.extend(self.compute(&ctx)?);
        }
        Ok(out)
    }

    /// Recovers a ready split or divide parent, returning `None` if none is
    /// ready. The inner value is the tail guard when the rest of the body
    /// must be nested under one.
    fn split_step(&self, ctx: &mut Ctx, out: &mut Vec<Stmt>) -> Result<Option<Option<Cond>>> {
        for (n, rel) in self.rels.iter().enumerate() {
            if ctx.done.contains(&n) {
                continue;
            }
            let (parent, outer, inner, k, divide) = match rel {
                Relation::Split {
                    parent,
                    outer,
                    inner,
                    size,
                } => (parent, outer, inner, *size as i64, false),
                Relation::Divide {
                    parent,
                    outer,
                    inner,
                    parts,
                } => (parent, outer, inner, *parts as i64, true),
                _ => continue,
            };
            if !(Self::is_known(ctx, outer)
                && Self::is_known(ctx, inner)
                && self.dom_ready(ctx, parent))
            {
                continue;
            }
            let d = self.dom(parent)?.clone();
            let stride = if divide {
                IExpr::ceil_div(d.extent(), k)
            } else {
                IExpr::Lit(k)
            };
            let value = IExpr::add(
                IExpr::add(d.lo.clone(), IExpr::mul(var(outer), stride)),
                var(inner),
            );
            out.push(Stmt::Decl {
                name: parent.0.clone(),
                value,
            });
            ctx.known.insert(parent.0.clone());
            ctx.done.insert(n);
            let exact = d.constant.is_some_and(|c| (c + k - 1) / k * k == c);
            return Ok(Some((!exact).then(|| Cond::lt(var(parent), d.hi))));
        }
        Ok(None)
    }

    /// Fuse, bound, coord and pos recoveries; at most one per call.
    fn recovery_step(&self, ctx: &mut Ctx, out: &mut Vec<Stmt>) -> Result<bool> {
        for (n, rel) in self.rels.iter().enumerate() {
            if ctx.done.contains(&n) {
                continue;
            }
            match rel {
                Relation::Fuse {
                    outer,
                    inner,
                    fused,
                } => {
                    if !(Self::is_known(ctx, fused)
                        && self.dom_ready(ctx, outer)
                        && self.dom_ready(ctx, inner))
                    {
                        continue;
                    }
                    let ext_i = self.dom(inner)?.extent();
                    let lo_o = self.dom(outer)?.lo.clone();
                    let lo_i = self.dom(inner)?.lo.clone();
                    out.push(Stmt::Decl {
                        name: outer.0.clone(),
                        value: IExpr::add(lo_o, IExpr::div(var(fused), ext_i.clone())),
                    });
                    out.push(Stmt::Decl {
                        name: inner.0.clone(),
                        value: IExpr::add(lo_i, IExpr::rem(var(fused), ext_i)),
                    });
                    ctx.known.insert(outer.0.clone());
                    ctx.known.insert(inner.0.clone());
                }
                Relation::Bound {
                    var: v, bounded, ..
                } => {
                    if !(Self::is_known(ctx, bounded) && self.dom_ready(ctx, v)) {
                        continue;
                    }
                    let lo = self.dom(v)?.lo.clone();
                    out.push(Stmt::Decl {
                        name: v.0.clone(),
                        value: IExpr::add(lo, var(bounded)),
                    });
                    ctx.known.insert(v.0.clone());
                }
                Relation::Coord { pos, coord } => {
                    if !Self::is_known(ctx, coord) {
                        continue;
                    }
                    let Some(Relation::Pos { coord: src, .. }) = self.stmt.provenance.producer(pos)
                    else {
                        return Err(LowerError::Unsupported(format!("coord of '{pos}'")));
                    };
                    out.push(Stmt::Decl {
                        name: src.0.clone(),
                        value: var(coord),
                    });
                    ctx.known.insert(src.0.clone());
                }
                Relation::Pos {
                    pos,
                    access,
                    first_level,
                    last_level,
                    ..
                } => {
                    let acc = &self.accesses[*access];
                    let q = acc.parent_name(*first_level);
                    if !(Self::is_known(ctx, pos) && Self::all_known(ctx, &q)) {
                        continue;
                    }
                    self.pos_recovery(ctx, n, acc, *first_level, *last_level, pos, out);
                }
                Relation::Split { .. } | Relation::Divide { .. } => continue,
            }
            ctx.done.insert(n);
            return Ok(true);
        }
        Ok(false)
    }

    /// Coordinates and positions of levels `first..=last` from position
    /// variable `pos`, walking from the last level upward.
    #[allow(clippy::too_many_arguments)]
    fn pos_recovery(
        &self,
        ctx: &mut Ctx,
        rel: usize,
        acc: &AccessInfo,
        first: usize,
        last: usize,
        pos: &IndexVar,
        out: &mut Vec<Stmt>,
    ) {
        let q = acc.parent_name(first);
        let ranges = acc.level_ranges(first, last, q.clone());
        let tracked = ctx.tracked.contains(&rel);
        out.push(Stmt::Decl {
            name: acc.pos_names[last].clone(),
            value: var(pos),
        });
        for l in (first..=last).rev() {
            let p = IExpr::var(acc.pos_names[l].clone());
            if l > first {
                let parent = acc.pos_names[l - 1].clone();
                match &acc.levels[l] {
                    LevelRef::Dense(d) => out.push(Stmt::Decl {
                        name: parent,
                        value: IExpr::div(p.clone(), d.clone()),
                    }),
                    LevelRef::Compressed(m) if tracked => {
                        let next = IExpr::add(IExpr::var(parent.clone()), IExpr::Lit(1));
                        out.push(Stmt::While {
                            cond: Cond::le(IExpr::pos(*m, next.clone()), p.clone()),
                            body: vec![Stmt::Assign {
                                name: parent,
                                value: next,
                            }],
                        });
                    }
                    LevelRef::Compressed(m) => {
                        let (lo, hi) = ranges[l - 1 - first].clone();
                        out.push(Stmt::SearchBefore {
                            name: parent,
                            arr: *m,
                            lo,
                            hi,
                            key: p.clone(),
                        });
                    }
                }
            }
            let parent = if l == first {
                q.clone()
            } else {
                IExpr::var(acc.pos_names[l - 1].clone())
            };
            let coord = match &acc.levels[l] {
                LevelRef::Compressed(m) => IExpr::crd(*m, p),
                LevelRef::Dense(d) => IExpr::sub(p, IExpr::mul(parent, d.clone())),
            };
            out.push(Stmt::Decl {
                name: acc.vars[l].0.clone(),
                value: coord,
            });
        }
        for l in first..=last {
            ctx.known.insert(acc.pos_names[l].clone());
            ctx.known.insert(acc.vars[l].0.clone());
        }
    }

    /// Levels whose positions come from an active pos relation of `acc`.
    fn pos_covered(&self, acc: usize, l: usize) -> bool {
        self.stmt.provenance.active_pos().iter().any(|r| {
            matches!(r, Relation::Pos { access, first_level, last_level, .. }
                if *access == acc && (*first_level..=*last_level).contains(&l))
        })
    }

    /// Locates one ready position of a live access. Dense levels are handled
    /// inline; a compressed level returns its position name and access id so
    /// the caller can branch on presence.
    fn locate_step(&self, ctx: &mut Ctx, out: &mut Vec<Stmt>) -> Result<Option<(String, usize)>> {
        let Some(expr) = &ctx.expr else {
            return Ok(None);
        };
        for id in expr.access_ids() {
            let acc = &self.accesses[id];
            for l in 0..acc.vars.len() {
                let name = &acc.pos_names[l];
                if ctx.known.contains(name) {
                    continue;
                }
                let parent = acc.parent_name(l);
                if self.pos_covered(id, l)
                    || !Self::all_known(ctx, &parent)
                    || !Self::is_known(ctx, &acc.vars[l])
                {
                    break;
                }
                let c = var(&acc.vars[l]);
                match &acc.levels[l] {
                    LevelRef::Dense(d) => {
                        out.push(Stmt::Decl {
                            name: name.clone(),
                            value: IExpr::add(IExpr::mul(parent, d.clone()), c),
                        });
                        ctx.known.insert(name.clone());
                        return self.locate_step(ctx, out);
                    }
                    LevelRef::Compressed(m) => {
                        out.push(Stmt::SearchExact {
                            name: name.clone(),
                            arr: *m,
                            lo: IExpr::pos(*m, parent.clone()),
                            hi: IExpr::pos(*m, IExpr::add(parent, IExpr::Lit(1))),
                            key: c,
                        });
                        return Ok(Some((name.clone(), id)));
                    }
                }
            }
        }
        Ok(None)
    }

    /// The loop variable the position of pos relation `rel` should be
    /// tracked across, when tracking is sound.
    fn track_loop(&self, rel: usize) -> Option<IndexVar> {
        if self.opts.recovery != Recovery::Track {
            return None;
        }
        let Relation::Pos {
            pos,
            access,
            first_level,
            last_level,
            ..
        } = &self.rels[rel]
        else {
            return None;
        };
        let acc = &self.accesses[*access];
        let has_search = (*first_level + 1..=*last_level)
            .any(|l| matches!(acc.levels[l], LevelRef::Compressed(_)));
        if !has_search {
            return None;
        }
        let prov = &self.stmt.provenance;
        let leaves = prov.leaves_of(pos);
        let t = self
            .chain
            .iter()
            .rev()
            .find(|v| leaves.contains(*v))?
            .clone();
        if self.stmt.tags(&t).parallel.is_some() {
            return None;
        }
        // positions must not decrease as t advances: no remainder of a
        // fused variable on the way from pos down to t
        let mut x = pos.clone();
        while x != t {
            let r = prov.consumer(&x)?;
            x = match r {
                Relation::Split { outer, inner, .. } | Relation::Divide { outer, inner, .. } => {
                    if prov.leaves_of(outer).contains(&t) {
                        outer.clone()
                    } else {
                        inner.clone()
                    }
                }
                Relation::Fuse {
                    outer,
                    inner,
                    fused,
                } => {
                    if &x == inner {
                        return None;
                    }
                    let _ = outer;
                    fused.clone()
                }
                Relation::Bound { bounded, .. } => bounded.clone(),
                _ => return None,
            };
        }
        Some(t)
    }

    /// Tracking state for the pos relations tracked across loop `v`,
    /// declared before the loop. Updates `ctx.tracked`.
    fn track_inits(&self, ctx: &mut Ctx, v: &IndexVar) -> Vec<Stmt> {
        let mut out = Vec::new();
        for (n, rel) in self.rels.iter().enumerate() {
            if ctx.done.contains(&n)
                || ctx.tracked.contains(&n)
                || self.track_loop(n).as_ref() != Some(v)
            {
                continue;
            }
            let Relation::Pos {
                pos,
                access,
                first_level,
                last_level,
                ..
            } = rel
            else {
                continue;
            };
            let acc = &self.accesses[*access];
            let q = acc.parent_name(*first_level);
            if !Self::all_known(ctx, &q) || !self.dom_ready(ctx, v) {
                continue;
            }
            let start = self.dom(v).expect("domain").lo.clone();
            let known = |x: &IndexVar| {
                if x == v {
                    Some(start.clone())
                } else if ctx.known.contains(x.name()) {
                    Some(var(x))
                } else {
                    None
                }
            };
            let prefix = format!("{}_start_", pos);
            let rec = Recoverer {
                prov: &self.stmt.provenance,
                domains: &self.domains,
                accesses: &self.accesses,
                prefix: &prefix,
            };
            let Ok((mut stmts, mut key)) = rec.recover(pos, &known, RecoverMode::Original) else {
                continue;
            };
            let ranges = acc.level_ranges(*first_level, *last_level, q);
            for l in (*first_level + 1..=*last_level).rev() {
                match &acc.levels[l] {
                    LevelRef::Dense(d) => key = IExpr::div(key, d.clone()),
                    LevelRef::Compressed(m) => {
                        let name = acc.pos_names[l - 1].clone();
                        let (lo, hi) = ranges[l - 1 - first_level].clone();
                        stmts.push(Stmt::SearchBefore {
                            name: name.clone(),
                            arr: *m,
                            lo,
                            hi,
                            key,
                        });
                        key = IExpr::Var(name);
                    }
                }
            }
            out.extend(stmts);
            ctx.tracked.insert(n);
        }
        out
    }

    /// Run-time checks of exact bounds on the variable `v` iterates.
    fn bound_checks(&self, v: &IndexVar) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        for rel in &self.rels {
            if let Relation::Bound {
                var: b,
                bounded,
                bound,
                ..
            } = rel
            {
                if bounded == v {
                    out.push(Stmt::Check {
                        cond: Cond::eq(self.dom(b)?.extent(), IExpr::Lit(*bound as i64)),
                        msg: format!("extent of '{b}' must be exactly {bound}"),
                    });
                }
            }
        }
        Ok(out)
    }

    fn emit_loop(&self, mut ctx: Ctx) -> Result<Vec<Stmt>> {
        let v = self.chain[ctx.depth].clone();
        if ctx.mode == Mode::Main {
            if let Some(pc) = self.stmt.precomputes.iter().find(|p| p.var == v) {
                return self.emit_precompute(ctx, pc);
            }
        }
        let mut out = self.bound_checks(&v)?;
        let inits = self.track_inits(&mut ctx, &v);
        let tags = self.stmt.tags(&v);
        let mut body_ctx = ctx.clone();
        body_ctx.depth += 1;
        body_ctx.known.insert(v.0.clone());
        if let Some((_, race)) = tags.parallel {
            body_ctx.races.push(race);
        }
        let wrap = |body: Vec<Stmt>| match tags.parallel {
            Some((_, RaceStrategy::Temporary)) => vec![Stmt::TemporaryRegion(body)],
            _ => body,
        };
        let loops = if self.stmt.provenance.is_original(&v) {
            self.coiterate(&ctx, body_ctx, &v, &wrap)?
        } else {
            if !self.dom_ready(&ctx, &v) {
                return Err(LowerError::NotReady(format!("bounds of '{v}'")));
            }
            let d = self.dom(&v)?;
            vec![Stmt::For {
                var: v.0.clone(),
                lo: d.lo.clone(),
                hi: d.hi.clone(),
                parallel: tags.parallel,
                unroll: tags.unroll,
                body: wrap(self.lower_rest(body_ctx)?),
            }]
        };
        if inits.is_empty() {
            out.extend(loops);
        } else {
            out.push(Stmt::Block(inits.into_iter().chain(loops).collect()));
        }
        Ok(out)
    }

    /// Loop over an original coordinate, merging the compressed levels of
    /// the live accesses that index it.
    fn coiterate(
        &self,
        ctx: &Ctx,
        body_ctx: Ctx,
        v: &IndexVar,
        wrap: &dyn Fn(Vec<Stmt>) -> Vec<Stmt>,
    ) -> Result<Vec<Stmt>> {
        let tags = self.stmt.tags(v);
        let d = self.dom(v)?.clone();
        let expr = ctx.expr.clone();
        let mut sparse = Vec::new();
        if let Some(e) = &expr {
            for id in e.access_ids() {
                let acc = &self.accesses[id];
                let Some(l) = acc.vars.iter().position(|x| x == v) else {
                    continue;
                };
                if matches!(acc.levels[l], LevelRef::Compressed(_)) && !sparse.contains(&id) {
                    if !Self::all_known(ctx, &acc.parent_name(l)) {
                        return Err(LowerError::NotReady(format!(
                            "parent position of {}",
                            acc.pos_names[l]
                        )));
                    }
                    sparse.push(id);
                }
            }
        }
        let dense_loop = |body_ctx: Ctx| -> Result<Vec<Stmt>> {
            Ok(vec![Stmt::For {
                var: v.0.clone(),
                lo: d.lo.clone(),
                hi: d.hi.clone(),
                parallel: tags.parallel,
                unroll: tags.unroll,
                body: wrap(self.lower_rest(body_ctx)?),
            }])
        };
        let Some(expr) = expr.filter(|_| !sparse.is_empty()) else {
            return dense_loop(body_ctx);
        };
        let lattice = build_lattice(&expr, &sparse, v.name())?;
        if lattice.full_range {
            return dense_loop(body_ctx);
        }
        let level = |id: usize| -> (String, usize, IExpr) {
            let acc = &self.accesses[id];
            let l = acc.vars.iter().position(|x| x == v).expect("indexed");
            let LevelRef::Compressed(m) = acc.levels[l] else {
                unreachable!("sparse iterator on a dense level")
            };
            (acc.pos_names[l].clone(), m, acc.parent_name(l))
        };
        if sparse.len() == 1 && lattice.points.len() == 1 {
            let (p, m, parent) = level(sparse[0]);
            let mut body_ctx = body_ctx;
            body_ctx.known.insert(p.clone());
            let mut body = vec![Stmt::Decl {
                name: v.0.clone(),
                value: IExpr::crd(m, IExpr::var(p.clone())),
            }];
            body.extend(self.lower_rest(body_ctx)?);
            return Ok(vec![Stmt::For {
                var: p,
                lo: IExpr::pos(m, parent.clone()),
                hi: IExpr::pos(m, IExpr::add(parent, IExpr::Lit(1))),
                parallel: tags.parallel,
                unroll: tags.unroll,
                body: wrap(body),
            }]);
        }
        if tags.parallel.is_some() {
            return Err(LowerError::Unsupported(format!(
                "parallelizing '{v}', which merges several sparse operands"
            )));
        }
        let mut out = Vec::new();
        for &id in &sparse {
            let (p, m, parent) = level(id);
            out.push(Stmt::Decl {
                name: p.clone(),
                value: IExpr::pos(m, parent.clone()),
            });
            out.push(Stmt::Decl {
                name: format!("{p}_end"),
                value: IExpr::pos(m, IExpr::add(parent, IExpr::Lit(1))),
            });
        }
        let crd_name = |id: usize| format!("{}_{}", v, level(id).0);
        for point in &lattice.points {
            let cond = Cond::all(
                point
                    .iterators
                    .iter()
                    .map(|&id| {
                        let p = level(id).0;
                        Cond::lt(IExpr::var(p.clone()), IExpr::var(format!("{p}_end")))
                    })
                    .collect(),
            );
            let mut body = Vec::new();
            let mut min: Option<IExpr> = None;
            for &id in &point.iterators {
                let (p, m, _) = level(id);
                body.push(Stmt::Decl {
                    name: crd_name(id),
                    value: IExpr::crd(m, IExpr::var(p)),
                });
                let c = IExpr::var(crd_name(id));
                min = Some(match min {
                    None => c,
                    Some(x) => IExpr::min(x, c),
                });
            }
            body.push(Stmt::Decl {
                name: v.0.clone(),
                value: min.expect("nonempty point"),
            });
            // cases: sub-points of this point, largest first
            let subs: Vec<_> = lattice
                .points
                .iter()
                .filter(|q| q.iterators.iter().all(|id| point.iterators.contains(id)))
                .collect();
            let mut chain: Vec<Stmt> = Vec::new();
            for q in subs.iter().rev() {
                let mut case_ctx = body_ctx.clone();
                case_ctx.expr = Some(q.expr.clone());
                for &id in &q.iterators {
                    case_ctx.known.insert(level(id).0);
                }
                let case_body = wrap(self.lower_rest(case_ctx)?);
                let at = Cond::all(
                    q.iterators
                        .iter()
                        .map(|&id| Cond::eq(IExpr::var(crd_name(id)), var(v)))
                        .collect(),
                );
                chain = vec![Stmt::If {
                    cond: at,
                    then: case_body,
                    els: chain,
                }];
            }
            body.extend(chain);
            for &id in &point.iterators {
                let p = level(id).0;
                body.push(Stmt::If {
                    cond: Cond::eq(IExpr::var(crd_name(id)), var(v)),
                    then: vec![Stmt::Assign {
                        name: p.clone(),
                        value: IExpr::add(IExpr::var(p), IExpr::Lit(1)),
                    }],
                    els: Vec::new(),
                });
            }
            out.push(Stmt::While { cond, body });
        }
        Ok(out)
    }

    fn emit_precompute(&self, mut ctx: Ctx, pc: &crate::schedule::Precompute) -> Result<Vec<Stmt>> {
        let v = &pc.var;
        if !self.dom_ready(&ctx, v) {
            return Err(LowerError::NotReady(format!("bounds of '{v}'")));
        }
        let d = self.dom(v)?.clone();
        let mut out = self.bound_checks(v)?;
        out.push(Stmt::WorkspaceAlloc {
            name: pc.workspace.clone(),
            size: d.extent(),
        });
        ctx.depth += 1;
        let tags = self.stmt.tags(v);

        let mut prod = ctx.clone();
        prod.mode = Mode::Producer;
        prod.expr = Some(pc.expr.clone());
        let inits = self.track_inits(&mut prod, v);
        prod.known.insert(v.0.clone());
        let mut body = vec![Stmt::Decl {
            name: v.0.clone(),
            value: var(&pc.pre),
        }];
        body.extend(self.lower_rest(prod)?);
        let producer = Stmt::For {
            var: pc.pre.0.clone(),
            lo: d.lo.clone(),
            hi: d.hi.clone(),
            parallel: None,
            unroll: self.stmt.tags(&pc.pre).unroll,
            body,
        };
        out.push(Stmt::Block(inits.into_iter().chain([producer]).collect()));

        let mut cons = ctx;
        cons.mode = Mode::Consumer;
        cons.expr = cons
            .expr
            .as_ref()
            .and_then(|e| e.replace(&pc.expr, &OpExpr::Workspace(pc.workspace.clone())));
        let inits = self.track_inits(&mut cons, v);
        cons.known.insert(v.0.clone());
        if let Some((_, race)) = tags.parallel {
            cons.races.push(race);
        }
        let consumer = Stmt::For {
            var: v.0.clone(),
            lo: d.lo,
            hi: d.hi,
            parallel: tags.parallel,
            unroll: tags.unroll,
            body: self.lower_rest(cons)?,
        };
        out.push(Stmt::Block(inits.into_iter().chain([consumer]).collect()));
        Ok(out)
    }

    fn value(&self, ctx: &Ctx, e: &OpExpr) -> Result<VExpr> {
        Ok(match e {
            OpExpr::Lit(v) => VExpr::Lit(*v),
            OpExpr::Access(id) => {
                let acc = &self.accesses[*id];
                let p = acc.pos_names.last().expect("nonempty access");
                if !ctx.known.contains(p) {
                    return Err(LowerError::NotReady(p.clone()));
                }
                VExpr::Load {
                    tensor: acc.input,
                    pos: IExpr::var(p.clone()),
                }
            }
            OpExpr::Workspace(name) => {
                let pc = self
                    .stmt
                    .precomputes
                    .iter()
                    .find(|p| &p.workspace == name)
                    .ok_or_else(|| LowerError::NotReady(name.clone()))?;
                VExpr::Workspace {
                    name: name.clone(),
                    idx: IExpr::sub(var(&pc.var), self.dom(&pc.var)?.lo.clone()),
                }
            }
            OpExpr::Mul(a, b) => {
                VExpr::Mul(Box::new(self.value(ctx, a)?), Box::new(self.value(ctx, b)?))
            }
            OpExpr::Add(a, b) => {
                VExpr::Add(Box::new(self.value(ctx, a)?), Box::new(self.value(ctx, b)?))
            }
        })
    }

    fn compute(&self, ctx: &Ctx) -> Result<Vec<Stmt>> {
        let Some(expr) = &ctx.expr else {
            return Ok(Vec::new());
        };
        let value = self.value(ctx, expr)?;
        if ctx.mode == Mode::Producer {
            let pc = self
                .stmt
                .precomputes
                .iter()
                .find(|p| ctx.known.contains(p.var.name()))
                .expect("producer of a precompute");
            return Ok(vec![Stmt::Store {
                workspace: pc.workspace.clone(),
                idx: IExpr::sub(var(&pc.var), self.dom(&pc.var)?.lo.clone()),
                value,
            }]);
        }
        let lhs = &self.stmt.assignment.lhs.vars;
        let mut offset = IExpr::Lit(0);
        for (n, v) in lhs.iter().enumerate() {
            if !Self::is_known(ctx, v) {
                return Err(LowerError::NotReady(v.0.clone()));
            }
            offset = IExpr::add(IExpr::mul(offset, IExpr::Dim(n)), var(v));
        }
        let mut trace: Vec<(String, IExpr)> = Vec::new();
        for v in self.chain.iter().chain(self.stmt.provenance.originals()) {
            if !trace.iter().any(|(n, _)| n == v.name()) {
                trace.push((v.0.clone(), var(v)));
            }
        }
        let mut out = Vec::new();
        if self.opts.verify_recovery {
            out.push(Stmt::Block(self.round_trip_checks()?));
        }
        out.push(Stmt::ReduceAdd {
            target: Target::Output(offset),
            value,
            race: ctx
                .races
                .iter()
                .rev()
                .find(|r| **r != RaceStrategy::NoRaces)
                .copied(),
            trace,
        });
        Ok(out)
    }

    /// Checks that recovering the loop variables from the originals gives
    /// their current values, and that recovering the originals back from
    /// those values gives the originals.
    fn round_trip_checks(&self) -> Result<Vec<Stmt>> {
        let prov = &self.stmt.provenance;
        let mut out = Vec::new();
        let derived = Recoverer {
            prov,
            domains: &self.domains,
            accesses: &self.accesses,
            prefix: "rd_",
        };
        let from_originals = |x: &IndexVar| prov.is_original(x).then(|| var(x));
        let mut loop_values = BTreeMap::new();
        for v in &self.chain {
            let (stmts, e) = Recoverer {
                prefix: &format!("rl_{v}_"),
                ..derived
            }
            .recover(v, &from_originals, RecoverMode::Derived)?;
            out.extend(stmts);
            out.push(Stmt::Check {
                cond: Cond::eq(e.clone(), var(v)),
                msg: format!("recovered '{v}' differs"),
            });
            loop_values.insert(v.clone(), e);
        }
        let from_loops = |x: &IndexVar| loop_values.get(x).cloned();
        for o in prov.originals() {
            let (stmts, e) = Recoverer {
                prefix: &format!("ro_{o}_"),
                ..derived
            }
            .recover(o, &from_loops, RecoverMode::Original)?;
            out.extend(stmts);
            out.push(Stmt::Check {
                cond: Cond::eq(e, var(o)),
                msg: format!("recovered '{o}' differs"),
            });
        }
        Ok(out)
    }
}
