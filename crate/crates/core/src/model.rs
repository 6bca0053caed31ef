//! The tdVARMA(p,q) model object:
//! `x_t = Σ A_ti x_{t−i} + g_t ε_t + Σ B_tj g_{t−j} ε_{t−j}`, `Var(ε_t) = Σ`.

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, spd_inverse, symmetrize, Mat, Vector};
use crate::timefn::{MatrixTimeFunction, MAX_DERIV_ORDER};

/// Horizon over which `g_t(θ⁰)` invertibility is checked eagerly.
pub const DEFAULT_CHECK_HORIZON: usize = 400;

/// Index of a parameter block in `θ = (Aᵀ, Bᵀ, gᵀ)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Ar,
    Ma,
    Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    /// Sizes of the AR, MA and scale blocks, in that order.
    pub blocks: [usize; 3],
    pub theta0: Option<Vec<f64>>,
    /// Closed intervals; use infinities for unbounded sides.
    pub bounds: Vec<(f64, f64)>,
}

impl ParamLayout {
    pub fn new(names: Vec<String>, blocks: [usize; 3]) -> Result<Self> {
        let m = names.len();
        if blocks.iter().sum::<usize>() != m {
            return Err(Error::config(
                "params",
                format!("block sizes {blocks:?} do not sum to {m} parameters"),
            ));
        }
        Ok(Self {
            names,
            blocks,
            theta0: None,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); m],
        })
    }

    pub fn with_theta0(mut self, theta0: Vec<f64>) -> Result<Self> {
        if theta0.len() != self.len() {
            return Err(Error::config("true_value", "length differs from the parameter count"));
        }
        self.theta0 = Some(theta0);
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.len() {
            return Err(Error::config("bounds", "length differs from the parameter count"));
        }
        if bounds.iter().any(|&(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
            return Err(Error::config("bounds", "each interval needs lo <= hi"));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn block_of(&self, i: usize) -> Block {
        let [s1, s2, _] = self.blocks;
        if i < s1 {
            Block::Ar
        } else if i < s1 + s2 {
            Block::Ma
        } else {
            Block::Scale
        }
    }

    pub fn block_range(&self, b: Block) -> std::ops::Range<usize> {
        let [s1, s2, s3] = self.blocks;
        match b {
            Block::Ar => 0..s1,
            Block::Ma => s1..s1 + s2,
            Block::Scale => s1 + s2..s1 + s2 + s3,
        }
    }

    pub fn theta0(&self) -> Result<&[f64]> {
        self.theta0
            .as_deref()
            .ok_or_else(|| Error::contract("model has no true parameter value"))
    }

    /// Clamps `theta` into the box bounds.
    pub fn project(&self, theta: &mut [f64]) {
        for (v, &(lo, hi)) in theta.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().zip(&self.bounds).all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }
}

/// An observed or simulated series `x_1, …, x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    r: usize,
    values: Vec<Vector>,
}

impl Series {
    pub fn new(r: usize, values: Vec<Vector>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("series must have at least one observation"));
        }
        for (i, v) in values.iter().enumerate() {
            if v.len() != r {
                return Err(Error::contract(format!("row {} has dimension {}, expected {r}", i + 1, v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::contract(format!("row {} has a non-finite value", i + 1)));
            }
        }
        Ok(Self { r, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Observation at time `t` (1-based).
    pub fn at(&self, t: usize) -> &Vector {
        &self.values[t - 1]
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.r, self.values[..n.min(self.n())].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct TdVarmaModel {
    r: usize,
    ar: Vec<MatrixTimeFunction>,
    ma: Vec<MatrixTimeFunction>,
    scale: MatrixTimeFunction,
    sigma: Mat,
    layout: ParamLayout,
}

impl TdVarmaModel {
    pub fn new(
        ar: Vec<MatrixTimeFunction>,
        ma: Vec<MatrixTimeFunction>,
        scale: MatrixTimeFunction,
        sigma: Mat,
        layout: ParamLayout,
    ) -> Result<Self> {
        let r = scale.dim();
        for (name, f) in ar.iter().map(|f| ("ar", f)).chain(ma.iter().map(|f| ("ma", f))) {
            if f.dim() != r {
                return Err(Error::config(name, format!("matrix dimension {} differs from r = {r}", f.dim())));
            }
        }
        if sigma.nrows() != r || sigma.ncols() != r {
            return Err(Error::config("sigma", format!("expected a {r}x{r} matrix")));
        }
        check_blocks(&layout, &ar, Block::Ar, "ar")?;
        check_blocks(&layout, &ma, Block::Ma, "ma")?;
        check_blocks(&layout, std::slice::from_ref(&scale), Block::Scale, "scale")?;
        let model = Self { r, ar, ma, scale, sigma: Mat::zeros(r, r), layout };
        let model = model.with_sigma(sigma)?;
        if let Some(theta0) = &model.layout.theta0 {
            model.check_scale_invertible(theta0, DEFAULT_CHECK_HORIZON)?;
        }
        Ok(model)
    }

    /// Replaces the nuisance covariance, checking it is symmetric positive definite.
    pub fn with_sigma(mut self, sigma: Mat) -> Result<Self> {
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * (1.0 + sigma.amax()) {
            return Err(Error::config("sigma", "matrix is not symmetric"));
        }
        let sigma = symmetrize(&sigma);
        if sigma.clone().cholesky().is_none() {
            return Err(Error::config("sigma", "matrix is not positive definite"));
        }
        self.sigma = sigma;
        Ok(self)
    }

    /// Verifies `g_t(θ)` is invertible for `t = 1..=horizon`.
    pub fn check_scale_invertible(&self, theta: &[f64], horizon: usize) -> Result<()> {
        for t in 1..=horizon {
            let g = self.scale.eval(t, theta)?;
            checked_inverse(&g, &format!("g_t at t = {t}"))?;
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn p(&self) -> usize {
        self.ar.len()
    }

    pub fn q(&self) -> usize {
        self.ma.len()
    }

    pub fn m(&self) -> usize {
        self.layout.len()
    }

    pub fn ar(&self) -> &[MatrixTimeFunction] {
        &self.ar
    }

    pub fn ma(&self) -> &[MatrixTimeFunction] {
        &self.ma
    }

    pub fn scale(&self) -> &MatrixTimeFunction {
        &self.scale
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn layout_mut(&mut self) -> &mut ParamLayout {
        &mut self.layout
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.m() {
            return Err(Error::contract(format!(
                "parameter vector has length {}, model expects {}",
                theta.len(),
                self.m()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter value".into()));
        }
        Ok(())
    }

    /// `A_ti(θ)` for lag `i` in `1..=p`.
    pub fn ar_at(&self, t: usize, i: usize, theta: &[f64]) -> Mat {
        self.ar[i - 1].deriv_sparse(t, theta, &[]).unwrap_or_else(|| Mat::zeros(self.r, self.r))
    }

    /// `B_tj(θ)` for lag `j` in `1..=q`.
    pub fn ma_at(&self, t: usize, j: usize, theta: &[f64]) -> Mat {
        self.ma[j - 1].deriv_sparse(t, theta, &[]).unwrap_or_else(|| Mat::zeros(self.r, self.r))
    }

    pub fn g_at(&self, t: usize, theta: &[f64]) -> Mat {
        self.scale.deriv_sparse(t, theta, &[]).unwrap_or_else(|| Mat::zeros(self.r, self.r))
    }

    /// `Σ_t(θ) = g_t(θ) Σ g_tᵀ(θ)`, symmetrized.
    pub fn sigma_t(&self, t: usize, theta: &[f64]) -> Result<Mat> {
        self.check_theta(theta)?;
        Ok(self.sigma_t_unchecked(t, theta))
    }

    pub(crate) fn sigma_t_unchecked(&self, t: usize, theta: &[f64]) -> Mat {
        let g = self.g_at(t, theta);
        symmetrize(&(&g * &self.sigma * g.transpose()))
    }

    /// First or second derivative of `Σ_t(θ)`.
    pub fn sigma_t_deriv(&self, t: usize, theta: &[f64], idx: &[usize]) -> Result<Mat> {
        if idx.is_empty() || idx.len() > 2 {
            return Err(Error::contract(format!(
                "Σ_t derivatives are available for orders 1 and 2, got {}",
                idx.len()
            )));
        }
        self.check_theta(theta)?;
        check_indices(idx, self.m())?;
        Ok(self.sigma_deriv_any(t, theta, idx).unwrap_or_else(|| Mat::zeros(self.r, self.r)))
    }

    /// Leibniz expansion of `∂_I(g Σ gᵀ)` for any order; `None` when zero.
    pub(crate) fn sigma_deriv_any(&self, t: usize, theta: &[f64], idx: &[usize]) -> Option<Mat> {
        if idx.is_empty() {
            return Some(self.sigma_t_unchecked(t, theta));
        }
        let k = idx.len();
        let mut acc: Option<Mat> = None;
        for mask in 0..(1u32 << k) {
            let (left, right) = split(idx, mask);
            let Some(gl) = self.scale.deriv_sparse(t, theta, &left) else { continue };
            let Some(gr) = self.scale.deriv_sparse(t, theta, &right) else { continue };
            let term = &gl * &self.sigma * gr.transpose();
            match acc.as_mut() {
                Some(a) => *a += term,
                None => acc = Some(term),
            }
        }
        acc.map(|a| symmetrize(&a))
    }

    /// Derivative of `Σ_t⁻¹(θ)` of order 1, 2 or 3.
    pub fn sigma_t_inv_deriv(&self, t: usize, theta: &[f64], idx: &[usize]) -> Result<Mat> {
        if idx.is_empty() || idx.len() > MAX_DERIV_ORDER {
            return Err(Error::contract(format!(
                "Σ_t⁻¹ derivatives are available for orders 1 to 3, got {}",
                idx.len()
            )));
        }
        self.check_theta(theta)?;
        check_indices(idx, self.m())?;
        let s = self.sigma_t_unchecked(t, theta);
        let s_inv = spd_inverse(&s).ok_or_else(|| Error::SingularCovariance {
            t,
            context: format!(" (θ = {theta:?})"),
        })?;
        Ok(self.inv_deriv_with(t, theta, idx, &s_inv))
    }

    /// `∂_I(S⁻¹) = −S⁻¹ Σ_{∅≠T⊆I} ∂_T S · ∂_{I∖T}(S⁻¹)`, memoized over position subsets.
    pub(crate) fn inv_deriv_with(&self, t: usize, theta: &[f64], idx: &[usize], s_inv: &Mat) -> Mat {
        let k = idx.len();
        let full = (1u32 << k) - 1;
        let mut memo: Vec<Mat> = vec![Mat::zeros(self.r, self.r); 1 << k];
        memo[0] = s_inv.clone();
        let mut order: Vec<u32> = (1..=full).collect();
        order.sort_by_key(|m| m.count_ones());
        for mask in order {
            let mut acc = Mat::zeros(self.r, self.r);
            // Non-empty sub-masks `sub` of `mask`.
            let mut sub = mask;
            while sub != 0 {
                let (ds_idx, _) = split(idx, sub);
                if let Some(ds) = self.sigma_deriv_any(t, theta, &ds_idx) {
                    acc += ds * &memo[(mask & !sub) as usize];
                }
                sub = (sub - 1) & mask;
            }
            memo[mask as usize] = -(s_inv * acc);
        }
        symmetrize(&memo[full as usize])
    }

    /// Same model with parameters reordered: new slot `perm[i]` holds old
    /// parameter `i`. The permutation must map each block onto itself.
    pub fn with_permuted_params(&self, perm: &[usize]) -> Result<Self> {
        let m = self.m();
        let mut seen = vec![false; m];
        if perm.len() != m {
            return Err(Error::contract("permutation length differs from parameter count"));
        }
        for (i, &p) in perm.iter().enumerate() {
            if p >= m || seen[p] {
                return Err(Error::contract("not a permutation"));
            }
            seen[p] = true;
            if self.layout.block_of(i) != self.layout.block_of(p) {
                return Err(Error::contract("permutation must preserve parameter blocks"));
            }
        }
        let f = |i: usize| perm[i];
        let permute = |v: &[f64]| {
            let mut out = vec![0.0; m];
            for (i, &p) in perm.iter().enumerate() {
                out[p] = v[i];
            }
            out
        };
        let mut names = vec![String::new(); m];
        let mut bounds = vec![(0.0, 0.0); m];
        for (i, &p) in perm.iter().enumerate() {
            names[p] = self.layout.names[i].clone();
            bounds[p] = self.layout.bounds[i];
        }
        let layout = ParamLayout {
            names,
            blocks: self.layout.blocks,
            theta0: self.layout.theta0.as_deref().map(permute),
            bounds,
        };
        Ok(Self {
            r: self.r,
            ar: self.ar.iter().map(|a| a.remap_slots(&f)).collect(),
            ma: self.ma.iter().map(|b| b.remap_slots(&f)).collect(),
            scale: self.scale.remap_slots(&f),
            sigma: self.sigma.clone(),
            layout,
        })
    }
}

fn check_blocks(layout: &ParamLayout, fs: &[MatrixTimeFunction], block: Block, key: &str) -> Result<()> {
    let range = layout.block_range(block);
    for f in fs {
        if let Some(&bad) = f.slots().iter().find(|s| !range.contains(s)) {
            return Err(Error::config(
                key,
                format!("parameter slot {bad} lies outside the {block:?} block {range:?}"),
            ));
        }
    }
    Ok(())
}

fn check_indices(idx: &[usize], m: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= m) {
        Some(i) => Err(Error::contract(format!("parameter index {i} out of range (m = {m})"))),
        None => Ok(()),
    }
}

/// Splits an index tuple by a position mask into (selected, rest).
pub(crate) fn split(idx: &[usize], mask: u32) -> (Vec<usize>, Vec<usize>) {
    let mut left = Vec::with_capacity(idx.len());
    let mut right = Vec::with_capacity(idx.len());
    for (pos, &i) in idx.iter().enumerate() {
        if mask & (1 << pos) != 0 {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    (left, right)
}
