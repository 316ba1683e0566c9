//! Derivation records linking derived index variables to the originals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::notation::IndexVar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    Coordinate,
    Position,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Coordinate => "coord",
            Space::Position => "pos",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundType {
    MaxExact,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Relation {
    /// `parent = lo + outer * size + inner`
    Split {
        parent: IndexVar,
        outer: IndexVar,
        inner: IndexVar,
        size: usize,
    },
    /// `parent = lo + outer * ceil(extent / parts) + inner`
    Divide {
        parent: IndexVar,
        outer: IndexVar,
        inner: IndexVar,
        parts: usize,
    },
    /// `fused = (outer - lo_o) * extent(inner) + (inner - lo_i)`
    Fuse {
        outer: IndexVar,
        inner: IndexVar,
        fused: IndexVar,
    },
    /// `pos` ranges over the positions of levels `first_level..=last_level`
    /// of access `access`, whose coordinates are the values of `coord`.
    Pos {
        coord: IndexVar,
        pos: IndexVar,
        access: usize,
        first_level: usize,
        last_level: usize,
    },
    /// `coord` iterates the coordinate space of the variable `pos` was made from.
    Coord { pos: IndexVar, coord: IndexVar },
    /// `var = lo + bounded`, with `extent(var) == bound` checked at run time.
    Bound {
        var: IndexVar,
        bounded: IndexVar,
        bound: usize,
        kind: BoundType,
    },
}

impl Relation {
    /// Variables consumed by this relation.
    pub fn inputs(&self) -> Vec<&IndexVar> {
        match self {
            Relation::Split { parent, .. } | Relation::Divide { parent, .. } => vec![parent],
            Relation::Fuse { outer, inner, .. } => vec![outer, inner],
            Relation::Pos { coord, .. } => vec![coord],
            Relation::Coord { pos, .. } => vec![pos],
            Relation::Bound { var, .. } => vec![var],
        }
    }

    /// Variables produced by this relation.
    pub fn outputs(&self) -> Vec<&IndexVar> {
        match self {
            Relation::Split { outer, inner, .. } | Relation::Divide { outer, inner, .. } => {
                vec![outer, inner]
            }
            Relation::Fuse { fused, .. } => vec![fused],
            Relation::Pos { pos, .. } => vec![pos],
            Relation::Coord { coord, .. } => vec![coord],
            Relation::Bound { bounded, .. } => vec![bounded],
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Split {
                parent,
                outer,
                inner,
                size,
            } => write!(f, "split({parent}, {outer}, {inner}, {size})"),
            Relation::Divide {
                parent,
                outer,
                inner,
                parts,
            } => write!(f, "divide({parent}, {outer}, {inner}, {parts})"),
            Relation::Fuse {
                outer,
                inner,
                fused,
            } => write!(f, "fuse({outer}, {inner}, {fused})"),
            Relation::Pos {
                coord,
                pos,
                access,
                first_level,
                last_level,
            } => write!(
                f,
                "pos({coord}, {pos}, access #{access}, levels {first_level}..={last_level})"
            ),
            Relation::Coord { pos, coord } => write!(f, "coord({pos}, {coord})"),
            Relation::Bound {
                var,
                bounded,
                bound,
                ..
            } => write!(f, "bound({var}, {bounded}, {bound}, MaxExact)"),
        }
    }
}

/// DAG of derivations. Relations are stored in application order, which is
/// also a topological order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProvenanceGraph {
    originals: Vec<IndexVar>,
    spaces: BTreeMap<IndexVar, Space>,
    relations: Vec<Relation>,
}

impl ProvenanceGraph {
    pub fn new(originals: &[IndexVar]) -> Self {
        ProvenanceGraph {
            originals: originals.to_vec(),
            spaces: originals
                .iter()
                .map(|v| (v.clone(), Space::Coordinate))
                .collect(),
            relations: Vec::new(),
        }
    }

    pub fn originals(&self) -> &[IndexVar] {
        &self.originals
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn contains(&self, v: &IndexVar) -> bool {
        self.spaces.contains_key(v)
    }

    pub fn is_original(&self, v: &IndexVar) -> bool {
        self.originals.contains(v)
    }

    pub fn is_derived(&self, v: &IndexVar) -> bool {
        self.contains(v) && !self.is_original(v)
    }

    pub fn space(&self, v: &IndexVar) -> Option<Space> {
        self.spaces.get(v).copied()
    }

    pub fn vars(&self) -> impl Iterator<Item = &IndexVar> {
        self.spaces.keys()
    }

    /// Appends a relation. Callers check names and consumption beforehand.
    pub(crate) fn push(&mut self, rel: Relation) {
        let space = match &rel {
            Relation::Pos { .. } => Space::Position,
            Relation::Coord { .. } => Space::Coordinate,
            Relation::Fuse { outer, inner, .. } => {
                if self.space(outer) == Some(Space::Position)
                    || self.space(inner) == Some(Space::Position)
                {
                    Space::Position
                } else {
                    Space::Coordinate
                }
            }
            other => self.space(other.inputs()[0]).unwrap_or(Space::Coordinate),
        };
        for out in rel.outputs() {
            self.spaces.insert(out.clone(), space);
        }
        self.relations.push(rel);
    }

    pub fn producer(&self, v: &IndexVar) -> Option<&Relation> {
        self.relations.iter().find(|r| r.outputs().contains(&v))
    }

    pub fn consumer(&self, v: &IndexVar) -> Option<&Relation> {
        self.relations.iter().find(|r| r.inputs().contains(&v))
    }

    /// Variables with no consuming relation: exactly the loop variables.
    pub fn leaves(&self) -> Vec<IndexVar> {
        self.spaces
            .keys()
            .filter(|v| self.consumer(v).is_none())
            .cloned()
            .collect()
    }

    /// Leaf variables whose values determine `v`.
    pub fn leaves_of(&self, v: &IndexVar) -> BTreeSet<IndexVar> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v.clone()];
        while let Some(x) = stack.pop() {
            match self.consumer(&x) {
                None => {
                    out.insert(x);
                }
                Some(r) => stack.extend(r.outputs().into_iter().cloned()),
            }
        }
        out
    }

    /// Original variables `v` derives from.
    pub fn original_ancestors(&self, v: &IndexVar) -> BTreeSet<IndexVar> {
        let mut out = BTreeSet::new();
        let mut stack = vec![v.clone()];
        while let Some(x) = stack.pop() {
            if self.is_original(&x) {
                out.insert(x.clone());
            }
            if let Some(r) = self.producer(&x) {
                match r {
                    // a coordinate variable re-derived from positions iterates
                    // the same coordinates as the variable that was pos'd
                    Relation::Coord { pos, .. } => stack.push(pos.clone()),
                    _ => stack.extend(r.inputs().into_iter().cloned()),
                }
            }
        }
        out
    }

    /// Original variables a coordinate variable stands for, in nesting order.
    /// Fused variables flatten to their constituents; a `coord` variable
    /// flattens to the variable its position variable came from. Returns
    /// `None` for anything else (split products, position variables).
    pub fn flatten(&self, v: &IndexVar) -> Option<Vec<IndexVar>> {
        if self.is_original(v) {
            return Some(vec![v.clone()]);
        }
        match self.producer(v)? {
            Relation::Fuse { outer, inner, .. } => {
                let mut out = self.flatten(outer)?;
                out.extend(self.flatten(inner)?);
                Some(out)
            }
            Relation::Coord { pos, .. } => match self.producer(pos)? {
                Relation::Pos { coord, .. } => self.flatten(coord),
                _ => None,
            },
            _ => None,
        }
    }

    /// Whether a `Pos` relation still drives iteration, i.e. its position
    /// variable has not been turned back into coordinates by `coord`.
    pub fn pos_is_active(&self, pos: &IndexVar) -> bool {
        let mut stack = vec![pos.clone()];
        while let Some(x) = stack.pop() {
            if let Some(r) = self.consumer(&x) {
                if matches!(r, Relation::Coord { .. }) {
                    return false;
                }
                stack.extend(r.outputs().into_iter().cloned());
            }
        }
        true
    }

    /// Active `Pos` relations in application order.
    pub fn active_pos(&self) -> Vec<&Relation> {
        self.relations
            .iter()
            .filter(|r| matches!(r, Relation::Pos { pos, .. } if self.pos_is_active(pos)))
            .collect()
    }

    /// Checks the structural invariants: acyclic (guaranteed by append
    /// order), one producer per derived variable and one consumer per variable.
    pub fn check(&self) -> Result<(), String> {
        let mut produced = BTreeSet::new();
        let mut consumed = BTreeSet::new();
        for r in &self.relations {
            for o in r.outputs() {
                if self.is_original(o) || !produced.insert(o.clone()) {
                    return Err(format!("variable {o} produced twice"));
                }
            }
            for i in r.inputs() {
                if !consumed.insert(i.clone()) {
                    return Err(format!("variable {i} consumed twice"));
                }
                if !self.is_original(i) && !produced.contains(i) {
                    return Err(format!("variable {i} consumed before it is produced"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> IndexVar {
        IndexVar::new(s)
    }

    #[test]
    fn leaves_and_ancestors() {
        let mut g = ProvenanceGraph::new(&[v("i"), v("j")]);
        g.push(Relation::Fuse {
            outer: v("i"),
            inner: v("j"),
            fused: v("f"),
        });
        g.push(Relation::Pos {
            coord: v("f"),
            pos: v("fpos"),
            access: 0,
            first_level: 0,
            last_level: 1,
        });
        g.push(Relation::Split {
            parent: v("fpos"),
            outer: v("b"),
            inner: v("t"),
            size: 4,
        });
        assert_eq!(g.leaves(), vec![v("b"), v("t")]);
        assert_eq!(g.space(&v("b")), Some(Space::Position));
        assert_eq!(g.original_ancestors(&v("t")), [v("i"), v("j")].into());
        assert_eq!(g.leaves_of(&v("i")), [v("b"), v("t")].into());
        assert_eq!(g.flatten(&v("f")), Some(vec![v("i"), v("j")]));
        assert!(g.pos_is_active(&v("fpos")));
        assert!(g.check().is_ok());
    }

    #[test]
    fn coord_deactivates_pos() {
        let mut g = ProvenanceGraph::new(&[v("i")]);
        g.push(Relation::Pos {
            coord: v("i"),
            pos: v("ip"),
            access: 0,
            first_level: 0,
            last_level: 0,
        });
        g.push(Relation::Coord {
            pos: v("ip"),
            coord: v("ic"),
        });
        assert!(!g.pos_is_active(&v("ip")));
        assert_eq!(g.space(&v("ic")), Some(Space::Coordinate));
        assert_eq!(g.flatten(&v("ic")), Some(vec![v("i")]));
        assert_eq!(g.leaves(), vec![v("ic")]);
    }
}
