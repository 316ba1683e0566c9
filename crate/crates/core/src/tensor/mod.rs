//! Coordinate-hierarchy tensor storage.
//!
//! A [`Tensor`] stores one level per dimension, in declared dimension order.
//! Dense levels materialize every coordinate slot; compressed levels keep a
//! `pos` array of segment boundaries and a `crd` array of the coordinates
//! present in each segment. `[Dense, Compressed]` is CSR, `[Compressed,
//! Compressed]` is DCSR and an all-compressed order-3 tensor is CSF.

mod io;
mod oracle;

use std::fmt;
use std::str::FromStr;

pub use io::{parse_coo, write_frostt, write_matrix_market, CooFormat, ParseError};
pub use oracle::{dense_eval, var_extents, EvalError};

/// Input tensors by name.
pub type Inputs = std::collections::BTreeMap<String, Tensor>;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("coordinate {coord:?} has {got} components, tensor order is {order}")]
    Arity {
        coord: Vec<usize>,
        got: usize,
        order: usize,
    },
    #[error("coordinate {coord:?} is out of bounds for dimensions {dims:?}")]
    OutOfBounds { coord: Vec<usize>, dims: Vec<usize> },
    #[error("format has {got} levels, tensor order is {order}")]
    FormatArity { got: usize, order: usize },
    #[error("invalid level format string '{0}' (expected letters 'd' or 's')")]
    BadFormat(String),
    #[error("value array has length {got}, expected {expected}")]
    ValueLength { got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LevelKind {
    Dense,
    Compressed,
}

/// Storage discipline of one tensor level.
///
/// Only ordered compressed levels are produced by [`pack`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LevelFormat {
    pub kind: LevelKind,
    pub ordered: bool,
}

impl LevelFormat {
    pub const fn dense() -> Self {
        LevelFormat {
            kind: LevelKind::Dense,
            ordered: true,
        }
    }

    pub const fn compressed() -> Self {
        LevelFormat {
            kind: LevelKind::Compressed,
            ordered: true,
        }
    }

    pub fn is_dense(&self) -> bool {
        self.kind == LevelKind::Dense
    }

    pub fn is_compressed(&self) -> bool {
        self.kind == LevelKind::Compressed
    }
}

/// Per-dimension level formats, written in shorthand as `ds` (CSR), `ss`
/// (DCSR), `sss` (CSF), `d` (dense vector) and so on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Format(pub Vec<LevelFormat>);

impl Format {
    pub fn all_dense(order: usize) -> Self {
        Format(vec![LevelFormat::dense(); order])
    }

    pub fn levels(&self) -> &[LevelFormat] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl FromStr for Format {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                'd' | 'D' => Ok(LevelFormat::dense()),
                's' | 'S' | 'c' | 'C' => Ok(LevelFormat::compressed()),
                _ => Err(TensorError::BadFormat(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Format)
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for level in &self.0 {
            f.write_str(if level.is_dense() { "d" } else { "s" })?;
        }
        Ok(())
    }
}

/// A coordinate list. Coordinates are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct CooTensor {
    pub dims: Vec<usize>,
    pub entries: Vec<(Vec<usize>, f64)>,
}

impl CooTensor {
    pub fn new(dims: Vec<usize>) -> Self {
        CooTensor {
            dims,
            entries: Vec::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn push(&mut self, coord: Vec<usize>, value: f64) -> Result<(), TensorError> {
        self.check(&coord)?;
        self.entries.push((coord, value));
        Ok(())
    }

    fn check(&self, coord: &[usize]) -> Result<(), TensorError> {
        if coord.len() != self.order() {
            return Err(TensorError::Arity {
                coord: coord.to_vec(),
                got: coord.len(),
                order: self.order(),
            });
        }
        if coord.iter().zip(&self.dims).any(|(c, d)| c >= d) {
            return Err(TensorError::OutOfBounds {
                coord: coord.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(())
    }

    /// Sorts entries lexicographically and sums duplicates.
    pub fn normalize(&mut self) {
        self.entries
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut merged: Vec<(Vec<usize>, f64)> = Vec::with_capacity(self.entries.len());
        for (coord, value) in self.entries.drain(..) {
            match merged.last_mut() {
                Some((last, acc)) if *last == coord => *acc += value,
                _ => merged.push((coord, value)),
            }
        }
        self.entries = merged;
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Storage of one level.
#[derive(Clone, Debug, PartialEq)]
pub enum Level {
    Dense { size: usize },
    Compressed { pos: Vec<usize>, crd: Vec<usize> },
}

impl Level {
    pub fn pos(&self) -> Option<&[usize]> {
        match self {
            Level::Compressed { pos, .. } => Some(pos),
            Level::Dense { .. } => None,
        }
    }

    pub fn crd(&self) -> Option<&[usize]> {
        match self {
            Level::Compressed { crd, .. } => Some(crd),
            Level::Dense { .. } => None,
        }
    }
}

/// A packed coordinate hierarchy. Immutable after [`pack`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    format: Format,
    levels: Vec<Level>,
    vals: Vec<f64>,
}

impl Tensor {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn format(&self) -> &Format {
        &self.format
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    /// Number of stored leaf positions (including zero-filled dense slots).
    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    /// Builds a fully dense tensor directly from row-major values.
    pub fn from_dense(dims: Vec<usize>, vals: Vec<f64>) -> Result<Self, TensorError> {
        let expected = dims.iter().product::<usize>();
        if vals.len() != expected {
            return Err(TensorError::ValueLength {
                got: vals.len(),
                expected,
            });
        }
        let levels = dims.iter().map(|&size| Level::Dense { size }).collect();
        Ok(Tensor {
            format: Format::all_dense(dims.len()),
            dims,
            levels,
            vals,
        })
    }

    pub fn dense_vector(vals: Vec<f64>) -> Self {
        let n = vals.len();
        Tensor::from_dense(vec![n], vals).expect("length matches")
    }

    /// Number of positions at level `l` (the length of the level's slot space).
    pub fn level_positions(&self, l: usize) -> usize {
        let mut parents = 1usize;
        for level in &self.levels[..=l] {
            parents = match level {
                Level::Dense { size } => parents * size,
                Level::Compressed { crd, .. } => crd.len(),
            };
        }
        parents
    }

    /// Walks the hierarchy and yields every stored leaf with its coordinate.
    pub fn for_each_stored(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut coord = vec![0; self.order()];
        if self.order() == 0 {
            if let Some(&v) = self.vals.first() {
                f(&coord, v);
            }
            return;
        }
        self.walk(0, 0, &mut coord, &mut f);
    }

    fn walk(
        &self,
        l: usize,
        parent: usize,
        coord: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], f64),
    ) {
        let (start, end) = match &self.levels[l] {
            Level::Dense { size } => (parent * size, (parent + 1) * size),
            Level::Compressed { pos, .. } => (pos[parent], pos[parent + 1]),
        };
        for p in start..end {
            coord[l] = match &self.levels[l] {
                Level::Dense { size } => p - parent * size,
                Level::Compressed { crd, .. } => crd[p],
            };
            if l + 1 == self.order() {
                f(coord, self.vals[p]);
            } else {
                self.walk(l + 1, p, coord, f);
            }
        }
    }

    /// Entries with nonzero value, in storage (lexicographic) order.
    pub fn to_coo(&self) -> CooTensor {
        let mut coo = CooTensor::new(self.dims.clone());
        self.for_each_stored(|c, v| {
            if v != 0.0 {
                coo.entries.push((c.to_vec(), v));
            }
        });
        coo
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.dims.clone());
        self.for_each_stored(|c, v| {
            let idx = out.offset(c);
            out.vals[idx] += v;
        });
        out
    }

    /// Value at a coordinate, 0.0 when not stored.
    pub fn get(&self, coord: &[usize]) -> f64 {
        let mut parent = 0usize;
        for (l, level) in self.levels.iter().enumerate() {
            let c = coord[l];
            parent = match level {
                Level::Dense { size } => parent * size + c,
                Level::Compressed { pos, crd } => {
                    let seg = &crd[pos[parent]..pos[parent + 1]];
                    match seg.binary_search(&c) {
                        Ok(k) => pos[parent] + k,
                        Err(_) => return 0.0,
                    }
                }
            };
        }
        self.vals[parent]
    }

    /// Number of stored leaves, `crd.len()` of the last compressed level for
    /// sparse tensors.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
}

/// Packs a coordinate list into a coordinate hierarchy with the given level
/// formats. Duplicates are summed; coordinates are sorted lexicographically.
pub fn pack(coo: &CooTensor, format: &Format) -> Result<Tensor, TensorError> {
    if format.order() != coo.order() {
        return Err(TensorError::FormatArity {
            got: format.order(),
            order: coo.order(),
        });
    }
    for (c, _) in &coo.entries {
        coo.check(c)?;
    }
    let mut sorted = coo.clone();
    sorted.normalize();
    let entries = &sorted.entries;

    // Entry ranges owned by each position of the current level; the root
    // has exactly one position covering every entry.
    let mut ranges: Vec<(usize, usize)> = vec![(0, entries.len())];
    let mut levels = Vec::with_capacity(coo.order());
    for (l, level) in format.levels().iter().enumerate() {
        let size = coo.dims[l];
        let mut next = Vec::new();
        match level.kind {
            LevelKind::Dense => {
                next.reserve(ranges.len() * size);
                for &(start, end) in &ranges {
                    let mut cursor = start;
                    for c in 0..size {
                        let begin = cursor;
                        while cursor < end && entries[cursor].0[l] == c {
                            cursor += 1;
                        }
                        next.push((begin, cursor));
                    }
                }
                levels.push(Level::Dense { size });
            }
            LevelKind::Compressed => {
                let mut pos = Vec::with_capacity(ranges.len() + 1);
                let mut crd = Vec::new();
                pos.push(0);
                for &(start, end) in &ranges {
                    let mut cursor = start;
                    while cursor < end {
                        let c = entries[cursor].0[l];
                        let begin = cursor;
                        while cursor < end && entries[cursor].0[l] == c {
                            cursor += 1;
                        }
                        crd.push(c);
                        next.push((begin, cursor));
                    }
                    pos.push(crd.len());
                }
                levels.push(Level::Compressed { pos, crd });
            }
        }
        ranges = next;
    }
    let vals = ranges
        .iter()
        .map(|&(start, end)| if start < end { entries[start].1 } else { 0.0 })
        .collect();
    Ok(Tensor {
        dims: coo.dims.clone(),
        format: format.clone(),
        levels,
        vals,
    })
}

/// Dense row-major tensor, used for outputs and oracle results.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<usize>,
    pub vals: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        DenseTensor {
            dims,
            vals: vec![0.0; n],
        }
    }

    pub fn offset(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &d)| acc * d + c)
    }

    pub fn get(&self, coord: &[usize]) -> f64 {
        self.vals[self.offset(coord)]
    }

    /// Largest relative difference `|a - b| / max(1, |b|)` against `reference`.
    pub fn max_rel_error(&self, reference: &DenseTensor) -> f64 {
        assert_eq!(self.dims, reference.dims, "dimension mismatch");
        self.vals
            .iter()
            .zip(&reference.vals)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coo(dims: &[usize], entries: &[(&[usize], f64)]) -> CooTensor {
        let mut t = CooTensor::new(dims.to_vec());
        for (c, v) in entries {
            t.push(c.to_vec(), *v).unwrap();
        }
        t
    }

    #[test]
    fn dcsr_top_level_stores_nonempty_rows_only() {
        let t = coo(&[4, 4], &[(&[0, 1], 1.0), (&[2, 0], 2.0), (&[2, 3], 3.0)]);
        let packed = pack(&t, &"ss".parse().unwrap()).unwrap();
        assert_eq!(packed.level(0).crd().unwrap(), &[0, 2]);
        assert_eq!(packed.level(0).pos().unwrap(), &[0, 2]);
        assert_eq!(packed.level(1).pos().unwrap(), &[0, 1, 3]);
        assert_eq!(packed.level(1).crd().unwrap(), &[1, 0, 3]);
        assert_eq!(packed.vals(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_csr() {
        let t = CooTensor::new(vec![4, 5]);
        let packed = pack(&t, &"ds".parse().unwrap()).unwrap();
        assert_eq!(packed.level(1).pos().unwrap(), &[0, 0, 0, 0, 0]);
        assert!(packed.level(1).crd().unwrap().is_empty());
        assert!(packed.vals().is_empty());
    }

    #[test]
    fn duplicates_are_summed() {
        let t = coo(&[3, 3], &[(&[1, 2], 1.0), (&[0, 0], 5.0), (&[1, 2], 2.0)]);
        let packed = pack(&t, &"ds".parse().unwrap()).unwrap();
        assert_eq!(packed.get(&[1, 2]), 3.0);
        assert_eq!(packed.nnz(), 2);
    }

    #[test]
    fn dense_levels_fill_zeros() {
        let t = coo(&[2, 3], &[(&[1, 1], 4.0)]);
        let packed = pack(&t, &"dd".parse().unwrap()).unwrap();
        assert_eq!(packed.vals(), &[0.0, 0.0, 0.0, 0.0, 4.0, 0.0]);
        assert_eq!(packed.level_positions(1), 6);
    }

    #[test]
    fn rejects_out_of_bounds_and_bad_arity() {
        let mut t = CooTensor::new(vec![2, 2]);
        assert!(matches!(
            t.push(vec![2, 0], 1.0),
            Err(TensorError::OutOfBounds { .. })
        ));
        assert!(matches!(
            t.push(vec![0], 1.0),
            Err(TensorError::Arity { .. })
        ));
        assert!(matches!(
            pack(&t, &"d".parse().unwrap()),
            Err(TensorError::FormatArity { .. })
        ));
        assert!("dx".parse::<Format>().is_err());
    }

    #[test]
    fn format_shorthand_round_trips() {
        for s in ["d", "ds", "ss", "sss", "dsd"] {
            assert_eq!(s.parse::<Format>().unwrap().to_string(), s);
        }
    }
}
