use std::collections::BTreeMap;

use super::{DenseTensor, Tensor};
use crate::notation::{Assignment, Expr, IndexVar};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("tensor '{0}' is not bound")]
    Unbound(String),
    #[error("tensor '{tensor}' has order {got}, access uses {expected} indices")]
    Order {
        tensor: String,
        got: usize,
        expected: usize,
    },
    #[error("index variable '{var}' has extent {a} in one access and {b} in another")]
    DimensionMismatch { var: String, a: usize, b: usize },
}

/// Extent of every variable, checked for consistency across accesses. When
/// `out_dims` is given the output access participates too.
pub fn var_extents(
    assignment: &Assignment,
    inputs: &BTreeMap<String, Tensor>,
    out_dims: Option<&[usize]>,
) -> Result<BTreeMap<IndexVar, usize>, EvalError> {
    let mut extents: BTreeMap<IndexVar, usize> = BTreeMap::new();
    let mut record = |var: &IndexVar, n: usize| -> Result<(), EvalError> {
        match extents.get(var) {
            Some(&m) if m != n => Err(EvalError::DimensionMismatch {
                var: var.0.clone(),
                a: m,
                b: n,
            }),
            _ => {
                extents.insert(var.clone(), n);
                Ok(())
            }
        }
    };
    for access in assignment.accesses() {
        let t = inputs
            .get(&access.tensor)
            .ok_or_else(|| EvalError::Unbound(access.tensor.clone()))?;
        if t.order() != access.vars.len() {
            return Err(EvalError::Order {
                tensor: access.tensor.clone(),
                got: t.order(),
                expected: access.vars.len(),
            });
        }
        for (v, &d) in access.vars.iter().zip(t.dims()) {
            record(v, d)?;
        }
    }
    if let Some(dims) = out_dims {
        if dims.len() != assignment.lhs.vars.len() {
            return Err(EvalError::Order {
                tensor: assignment.lhs.tensor.clone(),
                got: dims.len(),
                expected: assignment.lhs.vars.len(),
            });
        }
        for (v, &d) in assignment.lhs.vars.iter().zip(dims) {
            record(v, d)?;
        }
    }
    Ok(extents)
}

/// Brute-force evaluation over the full Cartesian space of every index
/// variable. Variables absent from the output are summed.
pub fn dense_eval(
    assignment: &Assignment,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<DenseTensor, EvalError> {
    let extents = var_extents(assignment, inputs, None)?;
    let vars: Vec<IndexVar> = assignment.all_vars();
    let names = assignment.inputs();
    let dense: BTreeMap<&str, DenseTensor> = names
        .iter()
        .map(|name| (name.as_str(), inputs[name].to_dense()))
        .collect();
    let sizes: Vec<usize> = vars.iter().map(|v| extents[v]).collect();
    let out_dims: Vec<usize> = assignment.lhs.vars.iter().map(|v| extents[v]).collect();
    let mut out = DenseTensor::zeros(out_dims);
    if sizes.contains(&0) {
        return Ok(out);
    }
    let slot = |v: &IndexVar| vars.iter().position(|x| x == v).expect("known var");
    let out_slots: Vec<usize> = assignment.lhs.vars.iter().map(slot).collect();
    let mut point = vec![0usize; vars.len()];
    loop {
        let value = eval(&assignment.rhs, &point, &dense, &slot);
        let coord: Vec<usize> = out_slots.iter().map(|&s| point[s]).collect();
        let at = out.offset(&coord);
        out.vals[at] += value;
        // odometer increment, last variable fastest
        let mut d = vars.len();
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            point[d] += 1;
            if point[d] < sizes[d] {
                break;
            }
            point[d] = 0;
        }
    }
}

fn eval(
    e: &Expr,
    point: &[usize],
    dense: &BTreeMap<&str, DenseTensor>,
    slot: &impl Fn(&IndexVar) -> usize,
) -> f64 {
    match e {
        Expr::Literal(v) => *v,
        Expr::Access(a) => {
            let coord: Vec<usize> = a.vars.iter().map(|v| point[slot(v)]).collect();
            dense[a.tensor.as_str()].get(&coord)
        }
        Expr::Mul(a, b) => eval(a, point, dense, slot) * eval(b, point, dense, slot),
        Expr::Add(a, b) => eval(a, point, dense, slot) + eval(b, point, dense, slot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::parse_expression;
    use crate::tensor::{pack, CooTensor};

    fn inputs(list: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
        list.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }

    #[test]
    fn identity_spmv() {
        let mut eye = CooTensor::new(vec![3, 3]);
        for i in 0..3 {
            eye.push(vec![i, i], 1.0).unwrap();
        }
        let a = parse_expression("y(i) = A(i,j) * x(j)").unwrap();
        let ins = inputs(vec![
            ("A", pack(&eye, &"ds".parse().unwrap()).unwrap()),
            ("x", Tensor::dense_vector(vec![1.0, 2.0, 3.0])),
        ]);
        assert_eq!(dense_eval(&a, &ins).unwrap().vals, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn elementwise_union() {
        let a = parse_expression("a(i) = b(i) + c(i)").unwrap();
        let ins = inputs(vec![
            ("b", Tensor::dense_vector(vec![1.0, 0.0])),
            ("c", Tensor::dense_vector(vec![0.0, 2.0])),
        ]);
        assert_eq!(dense_eval(&a, &ins).unwrap().vals, vec![1.0, 2.0]);
    }

    #[test]
    fn mttkrp_matches_nested_loops() {
        let (ni, nk, nl, nj) = (4, 3, 2, 5);
        let f = |a: usize, b: usize| ((a * 7 + b * 3) % 5) as f64 - 1.5;
        let b: Vec<f64> = (0..ni * nk * nl).map(|n| f(n, 1)).collect();
        let c: Vec<f64> = (0..nk * nj).map(|n| f(n, 2)).collect();
        let d: Vec<f64> = (0..nl * nj).map(|n| f(n, 3)).collect();
        let mut expected = vec![0.0; ni * nj];
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    for l in 0..nl {
                        expected[i * nj + j] +=
                            b[(i * nk + k) * nl + l] * c[k * nj + j] * d[l * nj + j];
                    }
                }
            }
        }
        let a = parse_expression("A(i,j) = B(i,k,l) * C(k,j) * D(l,j)").unwrap();
        let ins = inputs(vec![
            ("B", Tensor::from_dense(vec![ni, nk, nl], b).unwrap()),
            ("C", Tensor::from_dense(vec![nk, nj], c).unwrap()),
            ("D", Tensor::from_dense(vec![nl, nj], d).unwrap()),
        ]);
        let got = dense_eval(&a, &ins).unwrap();
        assert_eq!(got.dims, vec![ni, nj]);
        for (g, e) in got.vals.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let a = parse_expression("a(i) = b(i) * c(i)").unwrap();
        let ins = inputs(vec![("b", Tensor::dense_vector(vec![1.0]))]);
        assert_eq!(dense_eval(&a, &ins), Err(EvalError::Unbound("c".into())));
        let ins = inputs(vec![
            ("b", Tensor::dense_vector(vec![1.0])),
            ("c", Tensor::dense_vector(vec![1.0, 2.0])),
        ]);
        assert!(matches!(
            dense_eval(&a, &ins),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }
}
