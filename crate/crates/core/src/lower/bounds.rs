//! Iteration domains of every variable in the provenance graph.

use std::collections::BTreeMap;

use super::ir::IExpr;
use super::LowerError;
use crate::notation::IndexVar;
use crate::schedule::provenance::{ProvenanceGraph, Relation};

/// Half-open range `[lo, hi)`. `constant` holds the extent when it is known
/// at compile time.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub lo: IExpr,
    pub hi: IExpr,
    pub constant: Option<i64>,
}

impl Domain {
    pub fn new(lo: IExpr, hi: IExpr) -> Self {
        let constant = IExpr::sub(hi.clone(), lo.clone()).as_lit();
        Domain { lo, hi, constant }
    }

    pub fn extent(&self) -> IExpr {
        match self.constant {
            Some(n) => IExpr::Lit(n),
            None => IExpr::sub(self.hi.clone(), self.lo.clone()),
        }
    }
}

/// Storage of one level as seen by the generated code.
#[derive(Clone, Debug, PartialEq)]
pub enum LevelRef {
    Dense(IExpr),
    /// Compressed level with `pos`/`crd` arrays at this manifest index.
    Compressed(usize),
}

/// One right-hand-side access with its storage and position variable names.
#[derive(Clone, Debug, PartialEq)]
pub struct AccessInfo {
    pub tensor: String,
    pub input: usize,
    pub vars: Vec<IndexVar>,
    pub levels: Vec<LevelRef>,
    pub pos_names: Vec<String>,
}

impl AccessInfo {
    /// Position ranges of levels `first..=last` below parent position `q`.
    pub fn level_ranges(&self, first: usize, last: usize, q: IExpr) -> Vec<(IExpr, IExpr)> {
        let mut lo = q.clone();
        let mut hi = IExpr::add(q, IExpr::Lit(1));
        let mut out = Vec::new();
        for l in first..=last {
            (lo, hi) = match &self.levels[l] {
                LevelRef::Dense(d) => (IExpr::mul(lo, d.clone()), IExpr::mul(hi, d.clone())),
                LevelRef::Compressed(m) => (IExpr::pos(*m, lo), IExpr::pos(*m, hi)),
            };
            out.push((lo.clone(), hi.clone()));
        }
        out
    }

    /// Parent position of level `l` as named in the generated code.
    pub fn parent_name(&self, l: usize) -> IExpr {
        if l == 0 {
            IExpr::Lit(0)
        } else {
            IExpr::var(self.pos_names[l - 1].clone())
        }
    }
}

/// Domains of all variables, given the extents of the originals.
pub fn propagate_bounds(
    prov: &ProvenanceGraph,
    extents: &BTreeMap<IndexVar, IExpr>,
    accesses: &[AccessInfo],
) -> Result<BTreeMap<IndexVar, Domain>, LowerError> {
    let mut doms = BTreeMap::new();
    for v in prov.originals() {
        let ext = extents
            .get(v)
            .ok_or_else(|| LowerError::UnknownExtent(v.0.clone()))?;
        doms.insert(v.clone(), Domain::new(IExpr::Lit(0), ext.clone()));
    }
    let zero_to = |n: IExpr| Domain::new(IExpr::Lit(0), n);
    for rel in prov.relations() {
        match rel {
            Relation::Split {
                parent,
                outer,
                inner,
                size,
            } => {
                let ext = doms[parent].extent();
                doms.insert(outer.clone(), zero_to(IExpr::ceil_div(ext, *size as i64)));
                doms.insert(inner.clone(), zero_to(IExpr::Lit(*size as i64)));
            }
            Relation::Divide {
                parent,
                outer,
                inner,
                parts,
            } => {
                let ext = doms[parent].extent();
                doms.insert(outer.clone(), zero_to(IExpr::Lit(*parts as i64)));
                doms.insert(inner.clone(), zero_to(IExpr::ceil_div(ext, *parts as i64)));
            }
            Relation::Fuse {
                outer,
                inner,
                fused,
            } => {
                let ext = IExpr::mul(doms[outer].extent(), doms[inner].extent());
                doms.insert(fused.clone(), zero_to(ext));
            }
            Relation::Pos {
                pos,
                access,
                first_level,
                last_level,
                ..
            } => {
                let acc = &accesses[*access];
                let q = acc.parent_name(*first_level);
                let (lo, hi) = acc
                    .level_ranges(*first_level, *last_level, q)
                    .pop()
                    .expect("at least one level");
                doms.insert(pos.clone(), Domain::new(lo, hi));
            }
            Relation::Coord { pos, coord } => {
                let src = match prov.producer(pos) {
                    Some(Relation::Pos { coord, .. }) => coord,
                    _ => return Err(LowerError::Unsupported(format!("coord of '{pos}'"))),
                };
                let d = doms[src].clone();
                doms.insert(coord.clone(), d);
            }
            Relation::Bound { bounded, bound, .. } => {
                doms.insert(bounded.clone(), zero_to(IExpr::Lit(*bound as i64)));
            }
        }
    }
    Ok(doms)
}
