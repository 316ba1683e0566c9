//! Iteration graphs, merge lattices and traversal validity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::notation::{Access, Assignment, Expr, IndexVar};
use crate::schedule::provenance::{ProvenanceGraph, Relation};
use crate::tensor::Format;

/// Most sparse iterators merged at one variable.
pub const MAX_MERGED: usize = 3;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error(
        "discordant traversal of {tensor} level {level}: its parent levels are not iterated first"
    )]
    Discordant { tensor: String, level: usize },
    #[error("{count} sparse operands merge at '{var}', at most {MAX_MERGED} are supported")]
    TooManySparse { var: String, count: usize },
    #[error("loop variables {loops:?} do not match provenance leaves {leaves:?}")]
    LeafMismatch {
        loops: Vec<String>,
        leaves: Vec<String>,
    },
    #[error("malformed provenance: {0}")]
    Provenance(String),
    #[error("unknown index variable '{0}'")]
    UnknownVar(String),
    #[error("'{0}' is not a coordinate-space original variable")]
    NotOriginal(String),
}

/// Kernel expression with accesses referenced by id.
#[derive(Clone, Debug, PartialEq)]
pub enum OpExpr {
    Access(usize),
    Lit(f64),
    /// Load from a precompute workspace at the consumer loop's offset.
    Workspace(String),
    Mul(Box<OpExpr>, Box<OpExpr>),
    Add(Box<OpExpr>, Box<OpExpr>),
}

impl OpExpr {
    /// Numbers accesses left to right, matching [`Expr::accesses`].
    pub fn from_expr(e: &Expr) -> OpExpr {
        fn go(e: &Expr, next: &mut usize) -> OpExpr {
            match e {
                Expr::Access(_) => {
                    *next += 1;
                    OpExpr::Access(*next - 1)
                }
                Expr::Literal(v) => OpExpr::Lit(*v),
                Expr::Mul(a, b) => {
                    let a = go(a, next);
                    OpExpr::Mul(Box::new(a), Box::new(go(b, next)))
                }
                Expr::Add(a, b) => {
                    let a = go(a, next);
                    OpExpr::Add(Box::new(a), Box::new(go(b, next)))
                }
            }
        }
        go(e, &mut 0)
    }

    /// The expression with every absent access removed: an absent factor
    /// zeroes its product, an absent term drops out of its sum. `None` means
    /// the whole expression is zero.
    pub fn restrict(&self, present: &dyn Fn(usize) -> bool) -> Option<OpExpr> {
        match self {
            OpExpr::Access(id) => present(*id).then(|| self.clone()),
            OpExpr::Lit(_) | OpExpr::Workspace(_) => Some(self.clone()),
            OpExpr::Mul(a, b) => Some(OpExpr::Mul(
                Box::new(a.restrict(present)?),
                Box::new(b.restrict(present)?),
            )),
            OpExpr::Add(a, b) => match (a.restrict(present), b.restrict(present)) {
                (Some(a), Some(b)) => Some(OpExpr::Add(Box::new(a), Box::new(b))),
                (x, y) => x.or(y),
            },
        }
    }

    pub fn access_ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let OpExpr::Access(id) = e {
                out.push(*id);
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&OpExpr)) {
        f(self);
        if let OpExpr::Mul(a, b) | OpExpr::Add(a, b) = self {
            a.visit(f);
            b.visit(f);
        }
    }

    /// Replaces the first subtree equal to `target` by `with`.
    pub fn replace(&self, target: &OpExpr, with: &OpExpr) -> Option<OpExpr> {
        if self == target {
            return Some(with.clone());
        }
        match self {
            OpExpr::Mul(a, b) | OpExpr::Add(a, b) => {
                let rebuild = |x: OpExpr, y: OpExpr| match self {
                    OpExpr::Mul(..) => OpExpr::Mul(Box::new(x), Box::new(y)),
                    _ => OpExpr::Add(Box::new(x), Box::new(y)),
                };
                if let Some(x) = a.replace(target, with) {
                    Some(rebuild(x, (**b).clone()))
                } else {
                    b.replace(target, with).map(|y| rebuild((**a).clone(), y))
                }
            }
            _ => None,
        }
    }

    /// Whether removing access `id` alone zeroes the expression.
    pub fn is_essential(&self, id: usize) -> bool {
        self.restrict(&|x| x != id).is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeKind {
    Single,
    Intersection,
    Union,
}

/// The levels one access contributes, as (variable, level) pairs in loop order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorPath {
    pub access: usize,
    pub tensor: String,
    pub steps: Vec<(IndexVar, usize)>,
}

/// Loop nest over index variables. Scheduling keeps it a single chain; the
/// per-access paths and merge kinds are stated over the original variables.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationGraph {
    pub loops: Vec<IndexVar>,
    pub paths: Vec<TensorPath>,
    pub merges: BTreeMap<IndexVar, MergeKind>,
}

impl IterationGraph {
    pub fn new(assignment: &Assignment, order: &[IndexVar]) -> Self {
        let rank = |v: &IndexVar| order.iter().position(|x| x == v).unwrap_or(usize::MAX);
        let paths = assignment
            .accesses()
            .iter()
            .enumerate()
            .map(|(id, a)| {
                let mut steps: Vec<(IndexVar, usize)> = a
                    .vars
                    .iter()
                    .cloned()
                    .enumerate()
                    .map(|(l, v)| (v, l))
                    .collect();
                steps.sort_by_key(|(v, _)| rank(v));
                TensorPath {
                    access: id,
                    tensor: a.tensor.clone(),
                    steps,
                }
            })
            .collect();
        let merges = order
            .iter()
            .map(|v| (v.clone(), merge_kind(&assignment.rhs, v)))
            .collect();
        IterationGraph {
            loops: order.to_vec(),
            paths,
            merges,
        }
    }

    pub fn depth(&self, v: &IndexVar) -> Option<usize> {
        self.loops.iter().position(|x| x == v)
    }

    /// Graphviz text: loop nesting as solid edges, derivations as dashed edges.
    pub fn to_dot(&self, prov: &ProvenanceGraph) -> String {
        let mut out = String::from("digraph iteration_graph {\n  node [shape=ellipse];\n");
        let label = |v: &IndexVar| {
            let space = prov.space(v).map_or("coord".to_string(), |s| s.to_string());
            format!("{v} ({space})")
        };
        for v in prov.vars() {
            let style = if self.loops.contains(v) {
                "solid"
            } else {
                "dashed"
            };
            let _ = writeln!(out, "  \"{v}\" [label=\"{}\", style={style}];", label(v));
        }
        for w in self.loops.windows(2) {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", w[0], w[1]);
        }
        for r in prov.relations() {
            for i in r.inputs() {
                for o in r.outputs() {
                    let _ = writeln!(out, "  \"{i}\" -> \"{o}\" [style=dashed, color=gray];");
                }
            }
        }
        for (v, kind) in &self.merges {
            if *kind != MergeKind::Single {
                let _ = writeln!(out, "  // {v}: {kind:?}");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Intersection when the accesses indexed by `v` meet under a product,
/// union when they meet under a sum.
fn merge_kind(rhs: &Expr, v: &IndexVar) -> MergeKind {
    fn count(e: &Expr, v: &IndexVar) -> usize {
        match e {
            Expr::Access(a) => usize::from(a.vars.contains(v)),
            Expr::Literal(_) => 0,
            Expr::Mul(a, b) | Expr::Add(a, b) => count(a, v) + count(b, v),
        }
    }
    fn lca(e: &Expr, v: &IndexVar, total: usize) -> MergeKind {
        match e {
            Expr::Mul(a, b) | Expr::Add(a, b) => {
                if count(a, v) == total {
                    lca(a, v, total)
                } else if count(b, v) == total {
                    lca(b, v, total)
                } else if matches!(e, Expr::Mul(..)) {
                    MergeKind::Intersection
                } else {
                    MergeKind::Union
                }
            }
            _ => MergeKind::Single,
        }
    }
    let total = count(rhs, v);
    if total <= 1 {
        MergeKind::Single
    } else {
        lca(rhs, v, total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticePoint {
    /// Access ids of the sparse iterators positioned at this point.
    pub iterators: Vec<usize>,
    pub expr: OpExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeLattice {
    pub points: Vec<LatticePoint>,
    /// Set when the expression survives with every sparse operand absent; the
    /// whole coordinate range must then be visited.
    pub full_range: bool,
}

/// Enumerates the nonempty subsets of `sparse` whose restricted expression is
/// nonzero, largest first.
pub fn build_lattice(
    expr: &OpExpr,
    sparse: &[usize],
    var: &str,
) -> Result<MergeLattice, GraphError> {
    if sparse.len() > MAX_MERGED {
        return Err(GraphError::TooManySparse {
            var: var.to_string(),
            count: sparse.len(),
        });
    }
    let mut points = Vec::new();
    for mask in 1u32..(1 << sparse.len()) {
        let subset: Vec<usize> = sparse
            .iter()
            .enumerate()
            .filter(|(n, _)| mask & (1 << n) != 0)
            .map(|(_, &id)| id)
            .collect();
        let present = |id: usize| !sparse.contains(&id) || subset.contains(&id);
        if let Some(e) = expr.restrict(&present) {
            points.push(LatticePoint {
                iterators: subset,
                expr: e,
            });
        }
    }
    points.sort_by(|a, b| {
        b.iterators
            .len()
            .cmp(&a.iterators.len())
            .then_with(|| a.iterators.cmp(&b.iterators))
    });
    let full_range = expr.restrict(&|id| !sparse.contains(&id)).is_some();
    Ok(MergeLattice { points, full_range })
}

/// Lattice for co-iterating original variable `var` over the statement's
/// right-hand side.
pub fn merge_lattice(
    assignment: &Assignment,
    formats: &BTreeMap<String, Format>,
    var: &IndexVar,
) -> Result<MergeLattice, GraphError> {
    if !assignment.all_vars().contains(var) {
        return Err(GraphError::NotOriginal(var.0.clone()));
    }
    let sparse: Vec<usize> = assignment
        .accesses()
        .iter()
        .enumerate()
        .filter(|(_, a)| compressed_at(a, formats, var))
        .map(|(id, _)| id)
        .collect();
    build_lattice(&OpExpr::from_expr(&assignment.rhs), &sparse, var.name())
}

fn compressed_at(a: &Access, formats: &BTreeMap<String, Format>, var: &IndexVar) -> bool {
    match (a.level_of(var), formats.get(&a.tensor)) {
        (Some(l), Some(f)) => f.levels()[l].is_compressed(),
        _ => false,
    }
}

/// Checks loop/provenance consistency and that every co-iterated compressed
/// level is reached after its parent levels.
pub fn validate(
    graph: &IterationGraph,
    prov: &ProvenanceGraph,
    assignment: &Assignment,
    formats: &BTreeMap<String, Format>,
) -> Result<(), GraphError> {
    prov.check().map_err(GraphError::Provenance)?;
    let mut loops: Vec<String> = graph.loops.iter().map(|v| v.0.clone()).collect();
    let mut leaves: Vec<String> = prov.leaves().iter().map(|v| v.0.clone()).collect();
    loops.sort();
    leaves.sort();
    if loops != leaves || graph.loops.len() != loops.len() {
        return Err(GraphError::LeafMismatch { loops, leaves });
    }
    let depth = |v: &IndexVar| graph.depth(v).expect("leaf is a loop");
    let known_depth = |u: &IndexVar| prov.leaves_of(u).iter().map(depth).max().unwrap_or(0);
    let start_depth = |u: &IndexVar| prov.leaves_of(u).iter().map(depth).min().unwrap_or(0);

    let active: Vec<(usize, usize, usize, &IndexVar)> = prov
        .active_pos()
        .into_iter()
        .filter_map(|r| match r {
            Relation::Pos {
                pos,
                access,
                first_level,
                last_level,
                ..
            } => Some((*access, *first_level, *last_level, pos)),
            _ => None,
        })
        .collect();

    for (id, a) in assignment.accesses().iter().enumerate() {
        let Some(format) = formats.get(&a.tensor) else {
            continue;
        };
        for &(_, first, _, pos) in active.iter().filter(|x| x.0 == id) {
            let start = start_depth(pos);
            if a.vars[..first].iter().any(|u| known_depth(u) >= start) {
                return Err(GraphError::Discordant {
                    tensor: a.tensor.clone(),
                    level: first,
                });
            }
        }
        for (l, level) in format.levels().iter().enumerate() {
            let covered = active
                .iter()
                .any(|&(acc, first, last, _)| acc == id && (first..=last).contains(&l));
            let v = &a.vars[l];
            if !level.is_compressed() || covered || !graph.loops.contains(v) {
                continue;
            }
            let d = depth(v);
            if a.vars[..l].iter().any(|u| known_depth(u) >= d) {
                return Err(GraphError::Discordant {
                    tensor: a.tensor.clone(),
                    level: l,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse_expression;

    fn formats(list: &[(&str, &str)]) -> BTreeMap<String, Format> {
        list.iter()
            .map(|(n, f)| (n.to_string(), f.parse().unwrap()))
            .collect()
    }

    fn vars(names: &[&str]) -> Vec<IndexVar> {
        names.iter().map(|n| IndexVar::new(*n)).collect()
    }

    #[test]
    fn spmv_paths_and_intersection() {
        let a = parse_expression("y(i) = B(i,j) * c(j)").unwrap();
        let g = IterationGraph::new(&a, &vars(&["i", "j"]));
        assert_eq!(
            g.paths[0].steps,
            vec![(IndexVar::new("i"), 0), (IndexVar::new("j"), 1)]
        );
        assert_eq!(g.paths[1].steps, vec![(IndexVar::new("j"), 0)]);
        assert_eq!(g.merges[&IndexVar::new("j")], MergeKind::Intersection);
        assert_eq!(g.merges[&IndexVar::new("i")], MergeKind::Single);
        let lat = merge_lattice(
            &a,
            &formats(&[("B", "ds"), ("c", "d")]),
            &IndexVar::new("j"),
        )
        .unwrap();
        assert_eq!(lat.points.len(), 1);
        assert_eq!(lat.points[0].iterators, vec![0]);
        assert!(!lat.full_range);
    }

    #[test]
    fn union_lattice() {
        let a = parse_expression("a(i) = b(i) + c(i)").unwrap();
        let g = IterationGraph::new(&a, &vars(&["i"]));
        assert_eq!(g.merges[&IndexVar::new("i")], MergeKind::Union);
        let lat =
            merge_lattice(&a, &formats(&[("b", "s"), ("c", "s")]), &IndexVar::new("i")).unwrap();
        let its: Vec<_> = lat.points.iter().map(|p| p.iterators.clone()).collect();
        assert_eq!(its, vec![vec![0, 1], vec![0], vec![1]]);
        let dense =
            merge_lattice(&a, &formats(&[("b", "d"), ("c", "d")]), &IndexVar::new("i")).unwrap();
        assert!(dense.points.is_empty() && dense.full_range);
    }

    #[test]
    fn too_many_sparse() {
        let a = parse_expression("a(i) = b(i) + c(i) + d(i) + e(i)").unwrap();
        let f = formats(&[("b", "s"), ("c", "s"), ("d", "s"), ("e", "s")]);
        assert!(matches!(
            merge_lattice(&a, &f, &IndexVar::new("i")),
            Err(GraphError::TooManySparse { count: 4, .. })
        ));
    }

    #[test]
    fn restrict_drops_absent_terms() {
        let a = parse_expression("a(i) = b(i) * c(i) + d(i)").unwrap();
        let e = OpExpr::from_expr(&a.rhs);
        assert!(!e.is_essential(0));
        assert_eq!(e.restrict(&|id| id != 0), Some(OpExpr::Access(2)));
        assert!(e.restrict(&|id| id == 1).is_none());
    }

    #[test]
    fn discordant_csr() {
        let a = parse_expression("y(i) = B(i,j) * c(j)").unwrap();
        let f = formats(&[("B", "ds"), ("c", "d")]);
        let ok = IterationGraph::new(&a, &vars(&["i", "j"]));
        let prov = ProvenanceGraph::new(&a.all_vars());
        assert!(validate(&ok, &prov, &a, &f).is_ok());
        let bad = IterationGraph::new(&a, &vars(&["j", "i"]));
        assert_eq!(
            validate(&bad, &prov, &a, &f),
            Err(GraphError::Discordant {
                tensor: "B".into(),
                level: 1
            })
        );
    }

    #[test]
    fn csf_concordant_orders() {
        let a = parse_expression("A(i,j) = B(i,k,l) * C(k,j) * D(l,j)").unwrap();
        let f = formats(&[("B", "sss"), ("C", "dd"), ("D", "dd")]);
        let prov = ProvenanceGraph::new(&a.all_vars());
        for order in [["i", "k", "l", "j"], ["i", "j", "k", "l"]] {
            let g = IterationGraph::new(&a, &vars(&order));
            assert!(validate(&g, &prov, &a, &f).is_ok());
        }
        let g = IterationGraph::new(&a, &vars(&["i", "l", "k", "j"]));
        assert!(validate(&g, &prov, &a, &f).is_err());
    }

    #[test]
    fn dot_mentions_spaces() {
        let a = parse_expression("y(i) = B(i,j) * c(j)").unwrap();
        let g = IterationGraph::new(&a, &vars(&["i", "j"]));
        let dot = g.to_dot(&ProvenanceGraph::new(&a.all_vars()));
        assert!(dot.contains("\"i\" [label=\"i (coord)\""));
        assert!(dot.contains("\"i\" -> \"j\";"));
    }
}
