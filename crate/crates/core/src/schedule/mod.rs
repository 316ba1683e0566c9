//! Scheduling transformations over concretized statements.
//!
//! Every transformation takes the statement by reference and returns a new
//! one, so schedules chain:
//!
//! ```
//! use sparse_sched::{notation::parse_expression, schedule::*};
//! let a = parse_expression("y(i) = A(i,j) * x(j)").unwrap();
//! let formats = [("A".to_string(), "ds".parse().unwrap()), ("x".to_string(), "d".parse().unwrap())];
//! let stmt = concretize(&a, &formats.into(), None).unwrap()
//!     .split("i", "i0", "i1", 16).unwrap()
//!     .parallelize("i0", ParallelUnit::CPUThread, RaceStrategy::NoRaces).unwrap();
//! assert_eq!(stmt.loop_names(), ["i0", "i1", "j"]);
//! ```

pub mod dsl;
pub mod provenance;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::graph::{self, GraphError, IterationGraph, MergeLattice, OpExpr};
use crate::notation::{Assignment, Expr, IndexVar};
use crate::tensor::Format;
use provenance::{BoundType, ProvenanceGraph, Relation, Space};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("order {0:?} is not a permutation of the statement's index variables")]
    NotPermutation(Vec<String>),
    #[error("no level format given for tensor '{0}'")]
    MissingFormat(String),
    #[error("tensor '{tensor}' has {got} level formats, its order is {expected}")]
    FormatArity {
        tensor: String,
        got: usize,
        expected: usize,
    },
    #[error("output '{0}' must be dense")]
    SparseOutput(String),
    #[error("'{0}' is not a loop variable of the statement")]
    NotInForest(String),
    #[error("name '{0}' is already in use")]
    NameTaken(String),
    #[error("variables {0:?} are not contiguously nested")]
    NotContiguous(Vec<String>),
    #[error("'{inner}' is not directly nested under '{outer}'")]
    NotNested { outer: String, inner: String },
    #[error("'{0}' carries a parallel or unroll tag")]
    Tagged(String),
    #[error("size must be at least 1")]
    ZeroSize,
    #[error("'{0}' is not in coordinate space")]
    NotCoordinateSpace(String),
    #[error("'{0}' is not in position space")]
    NotPositionSpace(String),
    #[error("'{var}' does not index a contiguous level range of {tensor}")]
    PosLevels { var: String, tensor: String },
    #[error("tensor '{0}' is not accessed on the right-hand side")]
    UnknownTensor(String),
    #[error("tensor '{0}' is accessed more than once; name the access explicitly")]
    AmbiguousTensor(String),
    #[error(
        "'{var}' merges {tensor} with a sum; position iteration over a union is not supported"
    )]
    AddMerge { var: String, tensor: String },
    #[error("parallelizing '{var}' with NoRaces races on reduction variable '{reduction}'")]
    RaceDetected { var: String, reduction: String },
    #[error("'{0}' already has a parallel tag")]
    DuplicateParallel(String),
    #[error("'{0}' has no compile-time constant extent")]
    NonConstantExtent(String),
    #[error("'{0}' depends on an enclosing loop and cannot be fused")]
    DependentExtent(String),
    #[error("sub-expression '{0}' not found in the right-hand side")]
    ExprNotFound(String),
    #[error("reorder would hoist reduction '{reduction}' above the sum at '{var}'")]
    ReorderAdd { reduction: String, var: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type Result<T> = std::result::Result<T, SchedError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParallelUnit {
    CPUThread,
    CPUVector,
    GPUBlock,
    GPUWarp,
    GPUThread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RaceStrategy {
    NoRaces,
    IgnoreRaces,
    Atomics,
    Temporary,
}

macro_rules! name_enum {
    ($ty:ident { $($v:ident),* }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$v => stringify!($v)),* })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let s = s.rsplit("::").next().unwrap_or(s);
                match s {
                    $(stringify!($v) => Ok($ty::$v),)*
                    _ => Err(format!("unknown {} '{}'", stringify!($ty), s)),
                }
            }
        }
    };
}

name_enum!(ParallelUnit {
    CPUThread,
    CPUVector,
    GPUBlock,
    GPUWarp,
    GPUThread
});
name_enum!(RaceStrategy {
    NoRaces,
    IgnoreRaces,
    Atomics,
    Temporary
});

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tags {
    pub parallel: Option<(ParallelUnit, RaceStrategy)>,
    pub unroll: Option<usize>,
}

/// A sub-expression computed into a dense workspace by a producer loop over
/// `pre` and read back by the consumer loop over `var`.
#[derive(Clone, Debug, PartialEq)]
pub struct Precompute {
    pub label: String,
    pub expr: OpExpr,
    pub var: IndexVar,
    pub pre: IndexVar,
    pub workspace: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledStmt {
    pub assignment: Assignment,
    pub formats: BTreeMap<String, Format>,
    pub graph: IterationGraph,
    pub provenance: ProvenanceGraph,
    pub tags: BTreeMap<IndexVar, Tags>,
    pub precomputes: Vec<Precompute>,
}

/// Builds the initial single-chain schedule. `order` defaults to the output
/// variables followed by the reduction variables.
pub fn concretize(
    assignment: &Assignment,
    formats: &BTreeMap<String, Format>,
    order: Option<&[IndexVar]>,
) -> Result<ScheduledStmt> {
    let all = assignment.all_vars();
    let order = order.map_or_else(|| all.clone(), <[IndexVar]>::to_vec);
    let mut sorted_order = order.clone();
    let mut sorted_all = all.clone();
    sorted_order.sort();
    sorted_all.sort();
    if sorted_order != sorted_all {
        return Err(SchedError::NotPermutation(
            order.iter().map(|v| v.0.clone()).collect(),
        ));
    }
    let mut fmts = BTreeMap::new();
    for a in assignment.accesses() {
        let f = formats
            .get(&a.tensor)
            .ok_or_else(|| SchedError::MissingFormat(a.tensor.clone()))?;
        if f.order() != a.vars.len() {
            return Err(SchedError::FormatArity {
                tensor: a.tensor.clone(),
                got: f.order(),
                expected: a.vars.len(),
            });
        }
        fmts.insert(a.tensor.clone(), f.clone());
    }
    if let Some(f) = formats.get(&assignment.lhs.tensor) {
        if f.levels().iter().any(|l| l.is_compressed()) {
            return Err(SchedError::SparseOutput(assignment.lhs.tensor.clone()));
        }
    }
    Ok(ScheduledStmt {
        assignment: assignment.clone(),
        formats: fmts,
        graph: IterationGraph::new(assignment, &order),
        provenance: ProvenanceGraph::new(&all),
        tags: BTreeMap::new(),
        precomputes: Vec::new(),
    })
}

impl ScheduledStmt {
    pub fn loops(&self) -> &[IndexVar] {
        &self.graph.loops
    }

    pub fn loop_names(&self) -> Vec<&str> {
        self.graph.loops.iter().map(|v| v.name()).collect()
    }

    pub fn tags(&self, v: &IndexVar) -> Tags {
        self.tags.get(v).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        graph::validate(
            &self.graph,
            &self.provenance,
            &self.assignment,
            &self.formats,
        )?;
        Ok(())
    }

    pub fn merge_lattice(&self, var: &str) -> Result<MergeLattice> {
        Ok(graph::merge_lattice(
            &self.assignment,
            &self.formats,
            &IndexVar::new(var),
        )?)
    }

    pub fn reduction_vars(&self) -> Vec<IndexVar> {
        self.assignment.reduction_vars()
    }

    fn depth_of(&self, name: &str) -> Result<usize> {
        self.graph
            .depth(&IndexVar::new(name))
            .ok_or_else(|| SchedError::NotInForest(name.to_string()))
    }

    fn fresh(&self, names: &[&str]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &n in names {
            let v = IndexVar::new(n);
            let in_precompute = self
                .precomputes
                .iter()
                .any(|p| p.pre == v || p.workspace == n);
            if self.provenance.contains(&v) || in_precompute || !seen.insert(n) {
                return Err(SchedError::NameTaken(n.to_string()));
            }
        }
        Ok(())
    }

    fn untagged(&self, name: &str) -> Result<()> {
        if self.tags(&IndexVar::new(name)) != Tags::default() {
            return Err(SchedError::Tagged(name.to_string()));
        }
        if self.precomputes.iter().any(|p| p.var.name() == name) {
            return Err(SchedError::Unsupported(format!(
                "transforming precomputed variable '{name}'"
            )));
        }
        Ok(())
    }

    /// Applies a relation replacing loop `at` by `with`, then validates.
    fn derive(&self, rel: Relation, at: usize, with: &[&str]) -> Result<ScheduledStmt> {
        let mut next = self.clone();
        next.provenance.push(rel);
        next.graph
            .loops
            .splice(at..=at, with.iter().map(|n| IndexVar::new(*n)));
        next.validate()?;
        Ok(next)
    }

    pub fn split(&self, i: &str, outer: &str, inner: &str, size: usize) -> Result<ScheduledStmt> {
        self.strip(i, outer, inner, size, false)
    }

    pub fn divide(&self, i: &str, outer: &str, inner: &str, parts: usize) -> Result<ScheduledStmt> {
        self.strip(i, outer, inner, parts, true)
    }

    fn strip(
        &self,
        i: &str,
        outer: &str,
        inner: &str,
        n: usize,
        divide: bool,
    ) -> Result<ScheduledStmt> {
        let d = self.depth_of(i)?;
        self.untagged(i)?;
        self.fresh(&[outer, inner])?;
        if n == 0 {
            return Err(SchedError::ZeroSize);
        }
        let (parent, outer_v, inner_v) =
            (IndexVar::new(i), IndexVar::new(outer), IndexVar::new(inner));
        let rel = if divide {
            Relation::Divide {
                parent,
                outer: outer_v,
                inner: inner_v,
                parts: n,
            }
        } else {
            Relation::Split {
                parent,
                outer: outer_v,
                inner: inner_v,
                size: n,
            }
        };
        self.derive(rel, d, &[outer, inner])
    }

    pub fn fuse(&self, i: &str, j: &str, f: &str) -> Result<ScheduledStmt> {
        let di = self.depth_of(i)?;
        let dj = self.depth_of(j)?;
        if dj != di + 1 {
            return Err(SchedError::NotNested {
                outer: i.to_string(),
                inner: j.to_string(),
            });
        }
        self.untagged(i)?;
        self.untagged(j)?;
        self.fresh(&[f])?;
        for v in [i, j] {
            if !self.extent_independent(&IndexVar::new(v)) {
                return Err(SchedError::DependentExtent(v.to_string()));
            }
        }
        let mut next = self.clone();
        next.provenance.push(Relation::Fuse {
            outer: IndexVar::new(i),
            inner: IndexVar::new(j),
            fused: IndexVar::new(f),
        });
        next.graph.loops.splice(di..=dj, [IndexVar::new(f)]);
        next.validate()?;
        Ok(next)
    }

    /// Iterates `i` over the positions of the levels of `tensor` that `i`
    /// indexes. `tensor` is a name, or an access like `A(i,j)` when the
    /// tensor appears more than once.
    pub fn pos(&self, i: &str, p: &str, tensor: &str) -> Result<ScheduledStmt> {
        let d = self.depth_of(i)?;
        self.untagged(i)?;
        self.fresh(&[p])?;
        let var = IndexVar::new(i);
        if self.provenance.space(&var) != Some(Space::Coordinate) {
            return Err(SchedError::NotCoordinateSpace(i.to_string()));
        }
        let access = self.find_access(tensor)?;
        let acc = self.assignment.accesses()[access].clone();
        let originals = self.provenance.flatten(&var).ok_or_else(|| {
            SchedError::Unsupported(format!(
                "pos on '{i}', which is neither original, fused nor a coord variable"
            ))
        })?;
        let levels_err = || SchedError::PosLevels {
            var: i.to_string(),
            tensor: acc.tensor.clone(),
        };
        let first = acc.level_of(&originals[0]).ok_or_else(levels_err)?;
        let last = first + originals.len() - 1;
        if acc.vars.get(first..=last) != Some(&originals[..]) {
            return Err(levels_err());
        }
        let rhs = OpExpr::from_expr(&self.assignment.rhs);
        if rhs.restrict(&|id| id != access).is_some() {
            return Err(SchedError::AddMerge {
                var: i.to_string(),
                tensor: acc.tensor.clone(),
            });
        }
        self.derive(
            Relation::Pos {
                coord: var,
                pos: IndexVar::new(p),
                access,
                first_level: first,
                last_level: last,
            },
            d,
            &[p],
        )
    }

    fn find_access(&self, spec: &str) -> Result<usize> {
        let spec: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
        let accesses = self.assignment.accesses();
        if spec.contains('(') {
            return accesses
                .iter()
                .position(|a| a.to_string() == spec)
                .ok_or(SchedError::UnknownTensor(spec));
        }
        let ids: Vec<usize> = accesses
            .iter()
            .enumerate()
            .filter(|(_, a)| a.tensor == spec)
            .map(|(id, _)| id)
            .collect();
        match ids[..] {
            [id] => Ok(id),
            [] => Err(SchedError::UnknownTensor(spec)),
            _ => Err(SchedError::AmbiguousTensor(spec)),
        }
    }

    /// Returns a position variable produced by `pos` to coordinate space.
    pub fn coord(&self, p: &str, i: &str) -> Result<ScheduledStmt> {
        let d = self.depth_of(p)?;
        self.untagged(p)?;
        self.fresh(&[i])?;
        let pv = IndexVar::new(p);
        if self.provenance.space(&pv) != Some(Space::Position) {
            return Err(SchedError::NotPositionSpace(p.to_string()));
        }
        if !matches!(self.provenance.producer(&pv), Some(Relation::Pos { .. })) {
            return Err(SchedError::Unsupported(format!(
                "coord on '{p}', which was not produced directly by pos"
            )));
        }
        self.derive(
            Relation::Coord {
                pos: pv,
                coord: IndexVar::new(i),
            },
            d,
            &[i],
        )
    }

    pub fn reorder(&self, vars: &[&str]) -> Result<ScheduledStmt> {
        let depths = vars
            .iter()
            .map(|v| self.depth_of(v))
            .collect::<Result<Vec<_>>>()?;
        let lo = *depths.iter().min().unwrap_or(&0);
        let mut sorted = depths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != vars.len() || sorted.iter().enumerate().any(|(k, &d)| d != lo + k) {
            return Err(SchedError::NotContiguous(
                vars.iter().map(|s| s.to_string()).collect(),
            ));
        }
        let mut next = self.clone();
        for (k, v) in vars.iter().enumerate() {
            next.graph.loops[lo + k] = IndexVar::new(*v);
        }
        if let Some(pc) = self.precomputes.first() {
            if next.graph.loops.last() != Some(&pc.var) {
                return Err(SchedError::Unsupported(format!(
                    "reordering precomputed variable '{}' away from the innermost loop",
                    pc.var
                )));
            }
        }
        self.check_reorder_sums(&next.graph.loops)?;
        next.validate()?;
        Ok(next)
    }

    /// Conservative guard: a reduction variable may not newly move above a
    /// variable that merges a sum when some term of that sum lacks it.
    fn check_reorder_sums(&self, after: &[IndexVar]) -> Result<()> {
        let before = &self.graph.loops;
        let reductions = self.reduction_vars();
        let terms = self.assignment.rhs.terms();
        let rank = |order: &[IndexVar], v: &IndexVar| order.iter().position(|x| x == v);
        for x in before {
            for y in before {
                let hoisted = rank(before, x) > rank(before, y) && rank(after, x) < rank(after, y);
                if !hoisted {
                    continue;
                }
                let ys = self.provenance.original_ancestors(y);
                for r in self.provenance.original_ancestors(x) {
                    if !reductions.contains(&r) {
                        continue;
                    }
                    for u in &ys {
                        let union = self.graph.merges.get(u) == Some(&graph::MergeKind::Union);
                        let lacking = terms.iter().any(|t| {
                            let vs = t.vars();
                            vs.contains(u) && !vs.contains(&r)
                        });
                        if union && lacking {
                            return Err(SchedError::ReorderAdd {
                                reduction: r.0.clone(),
                                var: u.0.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parallelize(
        &self,
        i: &str,
        unit: ParallelUnit,
        race: RaceStrategy,
    ) -> Result<ScheduledStmt> {
        self.depth_of(i)?;
        let var = IndexVar::new(i);
        if self.tags(&var).parallel.is_some() {
            return Err(SchedError::DuplicateParallel(i.to_string()));
        }
        if race == RaceStrategy::NoRaces {
            let reductions = self.reduction_vars();
            if let Some(r) = self
                .provenance
                .original_ancestors(&var)
                .into_iter()
                .find(|v| reductions.contains(v))
            {
                return Err(SchedError::RaceDetected {
                    var: i.to_string(),
                    reduction: r.0,
                });
            }
        }
        let mut next = self.clone();
        next.tags.entry(var).or_default().parallel = Some((unit, race));
        Ok(next)
    }

    pub fn unroll(&self, i: &str, factor: usize) -> Result<ScheduledStmt> {
        let var = IndexVar::new(i);
        let pre = self.precomputes.iter().find(|p| p.pre == var);
        if pre.is_none() {
            self.depth_of(i)?;
        }
        if factor == 0 {
            return Err(SchedError::ZeroSize);
        }
        let extent_var = pre.map_or(&var, |p| &p.var);
        if self.constant_extent(extent_var).is_none() {
            return Err(SchedError::NonConstantExtent(i.to_string()));
        }
        let mut next = self.clone();
        next.tags.entry(var).or_default().unroll = Some(factor);
        Ok(next)
    }

    pub fn bound(
        &self,
        i: &str,
        bounded: &str,
        bound: usize,
        kind: BoundType,
    ) -> Result<ScheduledStmt> {
        let d = self.depth_of(i)?;
        self.untagged(i)?;
        self.fresh(&[bounded])?;
        if bound == 0 {
            return Err(SchedError::ZeroSize);
        }
        self.derive(
            Relation::Bound {
                var: IndexVar::new(i),
                bounded: IndexVar::new(bounded),
                bound,
                kind,
            },
            d,
            &[bounded],
        )
    }

    /// Precomputes the sub-expression bound to `label` in the expression text.
    pub fn precompute(
        &self,
        label: &str,
        i: &str,
        pre: &str,
        workspace: &str,
    ) -> Result<ScheduledStmt> {
        let expr = self
            .assignment
            .labels
            .get(label)
            .ok_or_else(|| SchedError::ExprNotFound(label.to_string()))?
            .clone();
        self.precompute_expr(label, &expr, i, pre, workspace)
    }

    pub fn precompute_expr(
        &self,
        label: &str,
        expr: &Expr,
        i: &str,
        pre: &str,
        workspace: &str,
    ) -> Result<ScheduledStmt> {
        let d = self.depth_of(i)?;
        self.fresh(&[pre, workspace])?;
        if self.assignment.inputs().iter().any(|t| t == workspace)
            || self.assignment.lhs.tensor == workspace
        {
            return Err(SchedError::NameTaken(workspace.to_string()));
        }
        if d + 1 != self.graph.loops.len() {
            return Err(SchedError::Unsupported(format!(
                "precompute at '{i}', which is not the innermost loop"
            )));
        }
        if !self.precomputes.is_empty() {
            return Err(SchedError::Unsupported("more than one precompute".into()));
        }
        let op = find_subexpr(
            &self.assignment.rhs,
            &OpExpr::from_expr(&self.assignment.rhs),
            expr,
        )
        .ok_or_else(|| SchedError::ExprNotFound(label.to_string()))?;
        let mut next = self.clone();
        next.precomputes.push(Precompute {
            label: label.to_string(),
            expr: op,
            var: IndexVar::new(i),
            pre: IndexVar::new(pre),
            workspace: workspace.to_string(),
        });
        Ok(next)
    }

    /// Compile-time extent, when the derivation fixes one.
    pub fn constant_extent(&self, v: &IndexVar) -> Option<usize> {
        match self.provenance.producer(v)? {
            Relation::Split { inner, size, .. } if inner == v => Some(*size),
            Relation::Divide { outer, parts, .. } if outer == v => Some(*parts),
            Relation::Bound { bound, .. } => Some(*bound),
            Relation::Fuse { outer, inner, .. } => {
                Some(self.constant_extent(outer)? * self.constant_extent(inner)?)
            }
            _ => None,
        }
    }

    /// Whether the extent of `v` is the same in every iteration of the
    /// enclosing loops.
    pub fn extent_independent(&self, v: &IndexVar) -> bool {
        match self.provenance.producer(v) {
            None => true,
            Some(r) => match r {
                Relation::Split { parent, outer, .. } => {
                    outer != v || self.extent_independent(parent)
                }
                Relation::Divide { parent, inner, .. } => {
                    inner != v || self.extent_independent(parent)
                }
                Relation::Fuse { outer, inner, .. } => {
                    self.extent_independent(outer) && self.extent_independent(inner)
                }
                Relation::Pos { first_level, .. } => *first_level == 0,
                Relation::Coord { pos, .. } => match self.provenance.producer(pos) {
                    Some(Relation::Pos { coord, .. }) => self.extent_independent(coord),
                    _ => false,
                },
                Relation::Bound { .. } => true,
            },
        }
    }
}

/// Walks `rhs` and its id-numbered twin in lockstep and returns the twin of
/// the first subtree equal to `target`.
fn find_subexpr(rhs: &Expr, op: &OpExpr, target: &Expr) -> Option<OpExpr> {
    if rhs == target {
        return Some(op.clone());
    }
    match (rhs, op) {
        (Expr::Mul(a, b), OpExpr::Mul(x, y)) | (Expr::Add(a, b), OpExpr::Add(x, y)) => {
            find_subexpr(a, x, target).or_else(|| find_subexpr(b, y, target))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse_expression;

    fn spmv() -> ScheduledStmt {
        let a =
            parse_expression("precomputedExpr = A(i,j) * x(j); y(i) = precomputedExpr").unwrap();
        let f: BTreeMap<String, Format> = [
            ("A".to_string(), "ds".parse().unwrap()),
            ("x".to_string(), "d".parse().unwrap()),
        ]
        .into();
        concretize(&a, &f, None).unwrap()
    }

    #[test]
    fn concretize_errors() {
        let a = parse_expression("y(i) = A(i,j) * x(j)").unwrap();
        let f: BTreeMap<String, Format> = [("A".to_string(), "ds".parse().unwrap())].into();
        assert_eq!(
            concretize(&a, &f, None),
            Err(SchedError::MissingFormat("x".into()))
        );
        let f: BTreeMap<String, Format> = [
            ("A".to_string(), "d".parse().unwrap()),
            ("x".to_string(), "d".parse().unwrap()),
        ]
        .into();
        assert!(matches!(
            concretize(&a, &f, None),
            Err(SchedError::FormatArity { .. })
        ));
        let order = [IndexVar::new("i")];
        assert!(matches!(
            concretize(&a, &f, Some(&order)),
            Err(SchedError::NotPermutation(_))
        ));
    }

    #[test]
    fn gpu_spmv_replays() {
        let s = spmv()
            .fuse("i", "j", "f")
            .and_then(|s| s.pos("f", "fpos", "A(i, j)"))
            .and_then(|s| s.split("fpos", "block", "fpos1", 64))
            .and_then(|s| s.split("fpos1", "warp", "fpos2", 16))
            .and_then(|s| s.split("fpos2", "thread", "thread_nz", 4))
            .and_then(|s| s.reorder(&["block", "warp", "thread", "thread_nz"]))
            .and_then(|s| {
                s.precompute(
                    "precomputedExpr",
                    "thread_nz",
                    "thread_nz_pre",
                    "precomputed",
                )
            })
            .and_then(|s| s.unroll("thread_nz_pre", 4))
            .and_then(|s| s.parallelize("block", ParallelUnit::GPUBlock, RaceStrategy::IgnoreRaces))
            .and_then(|s| s.parallelize("warp", ParallelUnit::GPUWarp, RaceStrategy::IgnoreRaces))
            .and_then(|s| s.parallelize("thread", ParallelUnit::GPUThread, RaceStrategy::Atomics))
            .unwrap();
        assert_eq!(s.loop_names(), ["block", "warp", "thread", "thread_nz"]);
        assert_eq!(
            s.provenance.space(&IndexVar::new("thread")),
            Some(Space::Position)
        );
        assert_eq!(s.precomputes[0].expr, OpExpr::from_expr(&s.assignment.rhs));
    }

    #[test]
    fn block_loop_races_under_noraces() {
        let s = spmv()
            .fuse("i", "j", "f")
            .and_then(|s| s.pos("f", "fpos", "A"))
            .and_then(|s| s.split("fpos", "block", "fpos1", 64))
            .unwrap();
        assert_eq!(
            s.parallelize("block", ParallelUnit::GPUBlock, RaceStrategy::NoRaces),
            Err(SchedError::RaceDetected {
                var: "block".into(),
                reduction: "j".into()
            })
        );
    }

    #[test]
    fn preconditions() {
        let s = spmv();
        assert!(matches!(
            s.split("i", "a", "b", 0),
            Err(SchedError::ZeroSize)
        ));
        assert!(matches!(
            s.split("i", "j", "b", 2),
            Err(SchedError::NameTaken(_))
        ));
        assert!(matches!(
            s.split("k", "a", "b", 2),
            Err(SchedError::NotInForest(_))
        ));
        assert!(matches!(
            s.reorder(&["j", "i"]),
            Err(SchedError::Graph(GraphError::Discordant { .. }))
        ));
        assert!(matches!(
            s.coord("i", "c"),
            Err(SchedError::NotPositionSpace(_))
        ));
        assert!(matches!(
            s.unroll("i", 2),
            Err(SchedError::NonConstantExtent(_))
        ));
        assert!(matches!(
            s.pos("i", "ip", "x"),
            Err(SchedError::PosLevels { .. })
        ));
        assert!(matches!(
            s.precompute("nope", "j", "jp", "w"),
            Err(SchedError::ExprNotFound(_))
        ));
        assert!(matches!(
            s.precompute("precomputedExpr", "i", "ip", "w"),
            Err(SchedError::Unsupported(_))
        ));
        let p = s
            .parallelize("i", ParallelUnit::CPUThread, RaceStrategy::NoRaces)
            .unwrap();
        assert!(matches!(
            p.parallelize("i", ParallelUnit::CPUThread, RaceStrategy::NoRaces),
            Err(SchedError::DuplicateParallel(_))
        ));
        assert!(matches!(
            p.split("i", "a", "b", 2),
            Err(SchedError::Tagged(_))
        ));
        let three = parse_expression("a(i,j,k) = B(i,j,k)").unwrap();
        let f: BTreeMap<String, Format> = [("B".to_string(), "ddd".parse().unwrap())].into();
        let t = concretize(&three, &f, None).unwrap();
        assert!(matches!(
            t.reorder(&["i", "k"]),
            Err(SchedError::NotContiguous(_))
        ));
        assert!(matches!(
            t.fuse("i", "k", "f"),
            Err(SchedError::NotNested { .. })
        ));
    }

    #[test]
    fn pos_rejects_sums() {
        let a = parse_expression("a(i) = b(i) + c(i)").unwrap();
        let f: BTreeMap<String, Format> = [
            ("b".to_string(), "s".parse().unwrap()),
            ("c".to_string(), "s".parse().unwrap()),
        ]
        .into();
        let s = concretize(&a, &f, None).unwrap();
        assert!(matches!(
            s.pos("i", "ip", "b"),
            Err(SchedError::AddMerge { .. })
        ));
    }

    #[test]
    fn extents() {
        let s = spmv().split("i", "i0", "i1", 8).unwrap();
        assert_eq!(s.constant_extent(&IndexVar::new("i1")), Some(8));
        assert_eq!(s.constant_extent(&IndexVar::new("i0")), None);
        let d = spmv().divide("i", "i0", "i1", 4).unwrap();
        assert_eq!(d.constant_extent(&IndexVar::new("i0")), Some(4));
        let p = spmv().pos("j", "jpos", "A").unwrap();
        assert!(!p.extent_independent(&IndexVar::new("jpos")));
        assert!(matches!(
            p.fuse("i", "jpos", "f"),
            Err(SchedError::DependentExtent(_))
        ));
    }

    #[test]
    fn enum_names_parse() {
        assert_eq!(
            "ParallelUnit::GPUWarp".parse::<ParallelUnit>(),
            Ok(ParallelUnit::GPUWarp)
        );
        assert_eq!(
            "Temporary".parse::<RaceStrategy>(),
            Ok(RaceStrategy::Temporary)
        );
        assert!("Foo".parse::<RaceStrategy>().is_err());
    }
}
