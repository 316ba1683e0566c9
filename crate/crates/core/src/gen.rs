//! Seeded input generators: uniform random tensors and row-skewed matrices.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{CooTensor, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GenError {
    #[error("row {row} needs {need} nonzeros but there are only {cols} columns")]
    RowOverflow {
        row: usize,
        need: usize,
        cols: usize,
    },
    #[error("invalid generator parameters: {0}")]
    Invalid(String),
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn value(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

/// Exactly `round(density * size)` distinct random coordinates with values
/// in `[-1, 1)`.
pub fn random_sparse(dims: &[usize], density: f64, rng: &mut impl Rng) -> CooTensor {
    let total: usize = dims.iter().product();
    let n = ((density * total as f64).round() as usize).min(total);
    let mut picks = sample(rng, total, n).into_vec();
    picks.sort_unstable();
    let mut coo = CooTensor::new(dims.to_vec());
    for mut flat in picks {
        let mut coord = vec![0; dims.len()];
        for (c, &d) in coord.iter_mut().zip(dims).rev() {
            *c = flat % d;
            flat /= d;
        }
        coo.push(coord, value(rng)).expect("in bounds");
    }
    coo
}

pub fn random_dense(dims: &[usize], rng: &mut impl Rng) -> Tensor {
    let total = dims.iter().product();
    let vals = (0..total).map(|_| value(rng)).collect();
    Tensor::from_dense(dims.to_vec(), vals).expect("matching length")
}

/// Per-row nonzero counts proportional to `base^r`, rounded by largest
/// remainder so they sum to exactly `nnz`.
pub fn skewed_row_counts(rows: usize, nnz: usize, base: f64) -> Result<Vec<usize>, GenError> {
    if rows == 0 || !(base.is_finite() && base > 0.0) {
        return Err(GenError::Invalid(format!("rows {rows}, base {base}")));
    }
    // normalized so the largest weight is 1
    let weights: Vec<f64> = if base >= 1.0 {
        (0..rows)
            .map(|r| base.powf(r as f64 - (rows - 1) as f64))
            .collect()
    } else {
        (0..rows).map(|r| base.powi(r as i32)).collect()
    };
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * nnz as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let short = nnz - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &r in order.iter().take(short) {
        counts[r] += 1;
    }
    Ok(counts)
}

/// Matrix whose row lengths follow a geometric law, rows shuffled with a
/// seeded generator and columns drawn uniformly without replacement.
pub fn skewed(
    rows: usize,
    cols: usize,
    nnz: usize,
    base: f64,
    seed: u64,
) -> Result<CooTensor, GenError> {
    let counts = skewed_row_counts(rows, nnz, base)?;
    if let Some((row, &need)) = counts.iter().enumerate().find(|(_, &c)| c > cols) {
        return Err(GenError::RowOverflow { row, need, cols });
    }
    let mut rng = rng(seed);
    let mut perm: Vec<usize> = (0..rows).collect();
    perm.shuffle(&mut rng);
    let mut coo = CooTensor::new(vec![rows, cols]);
    for (r, &count) in counts.iter().enumerate() {
        let mut cs = sample(&mut rng, cols, count).into_vec();
        cs.sort_unstable();
        for c in cs {
            coo.push(vec![perm[r], c], value(&mut rng))
                .expect("in bounds");
        }
    }
    coo.normalize();
    Ok(coo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_sum_and_grow() {
        let c = skewed_row_counts(100, 1000, 1.05).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 1000);
        assert!(c[99] > c[0]);
        assert_eq!(skewed_row_counts(4, 8, 1.0).unwrap(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(
            skewed(10, 5, 40, 2.0, 1),
            Err(GenError::RowOverflow { .. })
        ));
    }

    #[test]
    fn deterministic_and_exact_count() {
        let a = skewed(50, 40, 300, 1.03, 7).unwrap();
        let b = skewed(50, 40, 300, 1.03, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nnz(), 300);
        let s = random_sparse(&[4, 5], 0.5, &mut rng(3));
        assert_eq!(s.nnz(), 10);
    }
}
