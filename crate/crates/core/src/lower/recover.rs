//! Value recovery across the provenance graph.
//!
//! `Original` mode computes any variable from the values of the loop (leaf)
//! variables; `Derived` mode computes any variable from the values of the
//! original coordinates. Position variables are recovered from coordinates
//! by searching `crd`, and coordinates from positions by reading `crd` and
//! searching `pos` upward.

use std::collections::BTreeMap;

use super::bounds::{AccessInfo, Domain, LevelRef};
use super::ir::{IExpr, Stmt};
use super::LowerError;
use crate::notation::IndexVar;
use crate::schedule::provenance::{ProvenanceGraph, Relation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoverMode {
    Original,
    Derived,
}

pub struct Recoverer<'a> {
    pub prov: &'a ProvenanceGraph,
    pub domains: &'a BTreeMap<IndexVar, Domain>,
    pub accesses: &'a [AccessInfo],
    /// Prefix of every temporary this recoverer declares.
    pub prefix: &'a str,
}

type Known<'k> = &'k dyn Fn(&IndexVar) -> Option<IExpr>;

struct Run<'a, 'k> {
    r: &'a Recoverer<'a>,
    known: Known<'k>,
    mode: RecoverMode,
    out: Vec<Stmt>,
    down: BTreeMap<IndexVar, IExpr>,
    up: BTreeMap<IndexVar, IExpr>,
    positions: BTreeMap<(usize, usize), IExpr>,
}

impl<'a> Recoverer<'a> {
    /// Statements computing `target`, and the expression holding its value.
    /// `known` gives the leaf values (`Original`) or the original coordinate
    /// values (`Derived`).
    pub fn recover(
        &self,
        target: &IndexVar,
        known: Known<'_>,
        mode: RecoverMode,
    ) -> Result<(Vec<Stmt>, IExpr), LowerError> {
        let mut run = Run {
            r: self,
            known,
            mode,
            out: Vec::new(),
            down: BTreeMap::new(),
            up: BTreeMap::new(),
            positions: BTreeMap::new(),
        };
        let v = match mode {
            RecoverMode::Original => run.value_down(target)?,
            RecoverMode::Derived => run.value_up(target)?,
        };
        Ok((run.out, v))
    }
}

impl Run<'_, '_> {
    fn dom(&self, v: &IndexVar) -> Result<&Domain, LowerError> {
        self.r
            .domains
            .get(v)
            .ok_or_else(|| LowerError::UnknownExtent(v.0.clone()))
    }

    fn bind(&mut self, name: String, value: IExpr) -> IExpr {
        if matches!(value, IExpr::Lit(_) | IExpr::Var(_)) {
            return value;
        }
        self.out.push(Stmt::Decl {
            name: name.clone(),
            value,
        });
        IExpr::Var(name)
    }

    /// Value of `x` from the leaf values.
    fn value_down(&mut self, x: &IndexVar) -> Result<IExpr, LowerError> {
        if let Some(v) = self.down.get(x) {
            return Ok(v.clone());
        }
        let value = self.compute_down(x)?;
        let bound = self.bind(format!("{}d_{}", self.r.prefix, x), value);
        self.down.insert(x.clone(), bound.clone());
        Ok(bound)
    }

    fn compute_down(&mut self, x: &IndexVar) -> Result<IExpr, LowerError> {
        let prov = self.r.prov;
        if self.mode == RecoverMode::Original {
            if let Some(v) = (self.known)(x) {
                return Ok(v);
            }
        }
        if prov.is_original(x) {
            if let Some((acc, l)) = self.pos_covering(x) {
                let p = self.position(acc, l)?;
                return Ok(match &self.r.accesses[acc].levels[l] {
                    LevelRef::Compressed(m) => IExpr::crd(*m, p),
                    LevelRef::Dense(d) => {
                        let parent = self.parent_position(acc, l)?;
                        IExpr::sub(p, IExpr::mul(parent, d.clone()))
                    }
                });
            }
        }
        let rel = prov
            .consumer(x)
            .ok_or_else(|| LowerError::NotReady(x.0.clone()))?
            .clone();
        Ok(match &rel {
            Relation::Split {
                outer, inner, size, ..
            } => {
                let lo = self.dom(x)?.lo.clone();
                let o = self.value_down(outer)?;
                let i = self.value_down(inner)?;
                IExpr::add(IExpr::add(lo, IExpr::mul(o, IExpr::Lit(*size as i64))), i)
            }
            Relation::Divide {
                outer,
                inner,
                parts,
                ..
            } => {
                let d = self.dom(x)?.clone();
                let w = IExpr::ceil_div(d.extent(), *parts as i64);
                let o = self.value_down(outer)?;
                let i = self.value_down(inner)?;
                IExpr::add(IExpr::add(d.lo, IExpr::mul(o, w)), i)
            }
            Relation::Fuse {
                outer,
                inner,
                fused,
            } => {
                let lo = self.dom(x)?.lo.clone();
                let ext_i = self.dom(inner)?.extent();
                let f = self.value_down(fused)?;
                if x == outer {
                    IExpr::add(lo, IExpr::div(f, ext_i))
                } else {
                    IExpr::add(lo, IExpr::rem(f, ext_i))
                }
            }
            Relation::Bound { bounded, .. } => {
                let lo = self.dom(x)?.lo.clone();
                IExpr::add(lo, self.value_down(bounded)?)
            }
            Relation::Pos { pos, .. } => {
                if prov.pos_is_active(pos) {
                    // a fused coordinate driven by positions: rebuild it
                    // from the recovered original coordinates
                    self.compute_up(x)?
                } else {
                    match prov.consumer(pos) {
                        Some(Relation::Coord { coord, .. }) => {
                            let c = coord.clone();
                            self.value_down(&c)?
                        }
                        _ => return Err(LowerError::Unsupported(format!("recovering '{x}'"))),
                    }
                }
            }
            // a position variable turned back into coordinates
            Relation::Coord { .. } => self.compute_up(x)?,
        })
    }

    /// Value of `x` from the original coordinates.
    fn value_up(&mut self, x: &IndexVar) -> Result<IExpr, LowerError> {
        if let Some(v) = self.up.get(x) {
            return Ok(v.clone());
        }
        let value = self.compute_up(x)?;
        let bound = self.bind(format!("{}u_{}", self.r.prefix, x), value);
        self.up.insert(x.clone(), bound.clone());
        Ok(bound)
    }

    fn compute_up(&mut self, x: &IndexVar) -> Result<IExpr, LowerError> {
        let prov = self.r.prov;
        if prov.is_original(x) {
            return match self.mode {
                RecoverMode::Derived => {
                    (self.known)(x).ok_or_else(|| LowerError::NotReady(x.0.clone()))
                }
                RecoverMode::Original => self.value_down(x),
            };
        }
        let rel = prov
            .producer(x)
            .ok_or_else(|| LowerError::NotReady(x.0.clone()))?
            .clone();
        Ok(match &rel {
            Relation::Split {
                parent,
                outer,
                size,
                ..
            } => {
                let lo = self.dom(parent)?.lo.clone();
                let rel_p = IExpr::sub(self.value_up(parent)?, lo);
                let s = IExpr::Lit(*size as i64);
                if x == outer {
                    IExpr::div(rel_p, s)
                } else {
                    IExpr::rem(rel_p, s)
                }
            }
            Relation::Divide {
                parent,
                outer,
                parts,
                ..
            } => {
                let d = self.dom(parent)?.clone();
                let w = IExpr::ceil_div(d.extent(), *parts as i64);
                let rel_p = IExpr::sub(self.value_up(parent)?, d.lo);
                if x == outer {
                    IExpr::div(rel_p, w)
                } else {
                    IExpr::rem(rel_p, w)
                }
            }
            Relation::Fuse { outer, inner, .. } => {
                let lo_o = self.dom(outer)?.lo.clone();
                let d_i = self.dom(inner)?.clone();
                let o = IExpr::sub(self.value_up(outer)?, lo_o);
                let i = IExpr::sub(self.value_up(inner)?, d_i.lo.clone());
                IExpr::add(IExpr::mul(o, d_i.extent()), i)
            }
            Relation::Bound { var, .. } => {
                let lo = self.dom(var)?.lo.clone();
                IExpr::sub(self.value_up(var)?, lo)
            }
            Relation::Pos {
                access, last_level, ..
            } => self.locate(*access, *last_level)?,
            Relation::Coord { pos, .. } => match prov.producer(pos) {
                Some(Relation::Pos { coord, .. }) => {
                    let c = coord.clone();
                    self.value_up(&c)?
                }
                _ => return Err(LowerError::Unsupported(format!("recovering '{x}'"))),
            },
        })
    }

    /// The active `Pos` relation whose levels include original `x`.
    fn pos_covering(&self, x: &IndexVar) -> Option<(usize, usize)> {
        self.r.prov.active_pos().into_iter().find_map(|r| match r {
            Relation::Pos {
                access,
                first_level,
                last_level,
                ..
            } => {
                let acc = &self.r.accesses[*access];
                (*first_level..=*last_level)
                    .find(|&l| &acc.vars[l] == x)
                    .map(|l| (*access, l))
            }
            _ => None,
        })
    }

    fn active_pos_for(&self, acc: usize, l: usize) -> Option<(IndexVar, usize, usize)> {
        self.r.prov.active_pos().into_iter().find_map(|r| match r {
            Relation::Pos {
                pos,
                access,
                first_level,
                last_level,
                ..
            } if *access == acc && (*first_level..=*last_level).contains(&l) => {
                Some((pos.clone(), *first_level, *last_level))
            }
            _ => None,
        })
    }

    fn parent_position(&mut self, acc: usize, l: usize) -> Result<IExpr, LowerError> {
        if l == 0 {
            Ok(IExpr::Lit(0))
        } else {
            self.position(acc, l - 1)
        }
    }

    /// Position of level `l` of access `acc`. In `Original` mode levels
    /// covered by an active `Pos` come from its position variable;
    /// otherwise the position is located from the coordinates.
    fn position(&mut self, acc: usize, l: usize) -> Result<IExpr, LowerError> {
        if let Some(p) = self.positions.get(&(acc, l)) {
            return Ok(p.clone());
        }
        let covering = match self.mode {
            RecoverMode::Original => self.active_pos_for(acc, l),
            RecoverMode::Derived => None,
        };
        let Some((pos, first, last)) = covering else {
            return self.locate(acc, l);
        };
        // walk up from the last level to l
        let q = self.parent_position(acc, first)?;
        let info = &self.r.accesses[acc];
        let ranges = info.level_ranges(first, last, q);
        let mut p = self.value_down(&pos)?;
        self.positions.insert((acc, last), p.clone());
        for k in (l + 1..=last).rev() {
            let name = format!("{}p{}_{}", self.r.prefix, acc, k - 1);
            let parent = match &self.r.accesses[acc].levels[k] {
                LevelRef::Dense(d) => self.bind(name, IExpr::div(p.clone(), d.clone())),
                LevelRef::Compressed(m) => {
                    let (lo, hi) = ranges[k - 1 - first].clone();
                    self.out.push(Stmt::SearchBefore {
                        name: name.clone(),
                        arr: *m,
                        lo,
                        hi,
                        key: p.clone(),
                    });
                    IExpr::Var(name)
                }
            };
            self.positions.insert((acc, k - 1), parent.clone());
            p = parent;
        }
        Ok(self.positions[&(acc, l)].clone())
    }

    /// Locates level `l` of `acc` from coordinates; compressed levels yield
    /// -1 when the coordinate is not stored.
    fn locate(&mut self, acc: usize, l: usize) -> Result<IExpr, LowerError> {
        if let Some(p) = self.positions.get(&(acc, l)) {
            return Ok(p.clone());
        }
        let parent = self.parent_position(acc, l)?;
        let var = self.r.accesses[acc].vars[l].clone();
        let c = match self.mode {
            RecoverMode::Original => self.value_down(&var)?,
            RecoverMode::Derived => self.value_up(&var)?,
        };
        let name = format!("{}p{}_{}", self.r.prefix, acc, l);
        let p = match self.r.accesses[acc].levels[l].clone() {
            LevelRef::Dense(d) => self.bind(name, IExpr::add(IExpr::mul(parent, d), c)),
            LevelRef::Compressed(m) => {
                self.out.push(Stmt::SearchExact {
                    name: name.clone(),
                    arr: m,
                    lo: IExpr::pos(m, parent.clone()),
                    hi: IExpr::pos(m, IExpr::add(parent, IExpr::Lit(1))),
                    key: c,
                });
                IExpr::Var(name)
            }
        };
        self.positions.insert((acc, l), p.clone());
        Ok(p)
    }
}
