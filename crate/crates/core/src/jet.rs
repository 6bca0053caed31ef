//! Truncated derivative jets of matrices with respect to the parameter
//! vector. A jet stores one matrix per sorted index tuple of length at most
//! the jet order; slot 0 holds the value itself. Structurally zero entries
//! are `None`, which keeps products of sparse coefficient jets cheap.

use std::collections::HashMap;

use crate::linalg::Mat;
use crate::timefn::MatrixTimeFunction;

pub type MatJet = Vec<Option<Mat>>;

#[derive(Debug, Clone)]
pub struct DerivIndex {
    m: usize,
    order: usize,
    tuples: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
    /// For each tuple, the Leibniz terms `(left, right)` over all position subsets.
    plans: Vec<Vec<(usize, usize)>>,
}

impl DerivIndex {
    pub fn new(m: usize, order: usize) -> Self {
        let mut tuples: Vec<Vec<usize>> = vec![vec![]];
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..order {
            let mut next = Vec::new();
            for t in &frontier {
                let start = t.last().copied().unwrap_or(0);
                for i in start..m {
                    let mut u = t.clone();
                    u.push(i);
                    next.push(u);
                }
            }
            tuples.extend(next.iter().cloned());
            frontier = next;
        }
        let lookup: HashMap<_, _> = tuples.iter().cloned().enumerate().map(|(k, t)| (t, k)).collect();
        let plans = tuples
            .iter()
            .map(|t| {
                (0..(1u32 << t.len()))
                    .map(|mask| {
                        let (l, r) = crate::model::split(t, mask);
                        (lookup[&l], lookup[&r])
                    })
                    .collect()
            })
            .collect();
        Self { m, order, tuples, lookup, plans }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tuple(&self, k: usize) -> &[usize] {
        &self.tuples[k]
    }

    /// Position of the tuple `idx` in any order of its elements.
    pub fn id(&self, idx: &[usize]) -> Option<usize> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        self.lookup.get(&key).copied()
    }

    pub fn zero_jet(&self) -> MatJet {
        vec![None; self.len()]
    }

    /// Jet of a coefficient function at time `t`.
    pub fn coef_jet(&self, f: &MatrixTimeFunction, t: usize, theta: &[f64]) -> MatJet {
        self.tuples.iter().map(|tup| f.deriv_sparse(t, theta, tup)).collect()
    }

    /// `dst += alpha · a · b` with jet multiplication.
    pub fn mul_acc(&self, dst: &mut MatJet, alpha: f64, a: &MatJet, b: &MatJet) {
        for (k, plan) in self.plans.iter().enumerate() {
            for &(l, r) in plan {
                if let (Some(x), Some(y)) = (&a[l], &b[r]) {
                    let d = dst[k].get_or_insert_with(|| Mat::zeros(x.nrows(), y.ncols()));
                    d.gemm(alpha, x, y, 1.0);
                }
            }
        }
    }

    /// `dst += alpha · a`.
    pub fn add(&self, dst: &mut MatJet, alpha: f64, a: &MatJet) {
        for (d, x) in dst.iter_mut().zip(a) {
            if let Some(x) = x {
                match d {
                    Some(d) => *d += x * alpha,
                    None => *d = Some(x * alpha),
                }
            }
        }
    }
}

pub fn is_zero(j: &MatJet) -> bool {
    j.iter().all(Option::is_none)
}
