//! Population information matrix `V(n)` at the true parameter.
//!
//! `V_ij(n) = (1/n) Σ_t [Σ_k tr(ψ_tik Σ_{t−k} ψ_tjkᵀ Σ_t⁻¹) + ½ tr(Σ_t⁻¹ ∂_iΣ_t Σ_t⁻¹ ∂_jΣ_t)]`
//! with `Σ_s = g_s Σ g_sᵀ` at `θ⁰`. The first sum uses the independence of
//! the innovations across time, so cross terms in `k` vanish.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::examples::example1_theory_with_frequencies;
use crate::linalg::{min_eigen, spd_inverse, symmetrize, Mat};
use crate::model::TdVarmaModel;
use crate::repr::{build_pi, psi_coefficients, psi_jets_at, var1_a_power};

#[derive(Debug, Clone, Serialize)]
pub struct InfoReport {
    pub n: usize,
    #[serde(serialize_with = "crate::linalg::rows::one")]
    pub v: Mat,
    /// `sqrt(diag(V⁻¹)/n)`: asymptotic standard errors of the estimator.
    pub se_theoretical: Vec<f64>,
    /// `sqrt(diag(V)/n)`.
    pub se_diagonal: Vec<f64>,
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    /// `per_t_terms[t−1]` is the `t`-th summand (before dividing by `n`).
    #[serde(serialize_with = "crate::linalg::rows::opt_many")]
    pub per_t_terms: Option<Vec<Mat>>,
}

impl InfoReport {
    fn from_v(n: usize, v: Mat, per_t_terms: Option<Vec<Mat>>) -> Self {
        let v = symmetrize(&v);
        let m = v.nrows();
        let (min_eig, _) = if m > 0 { min_eigen(&v) } else { (f64::INFINITY, Mat::zeros(0, 0).column(0).into_owned()) };
        let positive_definite = m == 0 || (min_eig > 1e-12 * v.amax().max(f64::MIN_POSITIVE) && min_eig > 0.0);
        let se_theoretical = match spd_inverse(&v).filter(|_| positive_definite) {
            Some(vi) => vi.diagonal().iter().map(|d| (d / n as f64).sqrt()).collect(),
            None => vec![f64::NAN; m],
        };
        let se_diagonal = v.diagonal().iter().map(|d| (d.max(0.0) / n as f64).sqrt()).collect();
        Self { n, v, se_theoretical, se_diagonal, min_eigenvalue: min_eig, positive_definite, per_t_terms }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InfoOptions {
    /// Keep each time's summand.
    pub keep_per_t: bool,
    /// Decay base `Φ` for truncating the ψ sum at the first `k` with
    /// `Φ^{(k−1)/2} < 1e-14`; `None` sums exactly.
    pub phi: Option<f64>,
}

/// `V(n)` at `θ⁰`; a singular `V` is an error carrying its null direction.
pub fn theoretical_v(model: &TdVarmaModel, theta0: &[f64], n: usize) -> Result<InfoReport> {
    let rep = theoretical_v_with(model, theta0, n, InfoOptions::default())?;
    if !rep.positive_definite {
        let (val, vec) = min_eigen(&rep.v);
        return Err(Error::Singular(format!(
            "information matrix is not positive definite (min eigenvalue {val:e}, direction {:?})",
            vec.as_slice()
        )));
    }
    Ok(rep)
}

/// `V(n)` with options; never fails on a singular `V`, which is flagged instead.
pub fn theoretical_v_with(model: &TdVarmaModel, theta0: &[f64], n: usize, opts: InfoOptions) -> Result<InfoReport> {
    model.check_theta(theta0)?;
    if n == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    let m = model.m();
    let k_cap = opts.phi.and_then(|phi| {
        (phi > 0.0 && phi < 1.0).then(|| (1.0 + 2.0 * (1e-14f64).ln() / phi.ln()).ceil() as usize)
    });
    let pi = build_pi(model, theta0, n, 1)?;
    let truth = psi_coefficients(model, theta0, n)?;
    let ix = pi.index();
    let first: Vec<usize> = (0..m).map(|i| ix.id(&[i]).expect("first-order slot")).collect();
    let sig: Vec<Mat> = (1..=n).map(|t| model.sigma_t_unchecked(t, theta0)).collect();

    let terms: Vec<Result<Mat>> = (1..=n)
        .into_par_iter()
        .map(|t| {
            let s_inv = spd_inverse(&sig[t - 1]).ok_or_else(|| Error::SingularCovariance {
                t,
                context: " (information matrix)".into(),
            })?;
            let mut term = Mat::zeros(m, m);
            let jets = psi_jets_at(&pi, &truth, t);
            let kmax = k_cap.map_or(t - 1, |c| c.min(t - 1));
            for (k, jet) in jets.iter().enumerate().take(kmax + 1).skip(1) {
                let g_k = &sig[t - k - 1];
                // ψ_tik Σ_{t−k} and Σ_t⁻¹ ψ_tjk for every parameter.
                let left: Vec<Option<Mat>> = first.iter().map(|&id| jet[id].as_ref().map(|p| p * g_k)).collect();
                let right: Vec<Option<Mat>> = first.iter().map(|&id| jet[id].as_ref().map(|p| &s_inv * p)).collect();
                for i in 0..m {
                    let Some(li) = &left[i] else { continue };
                    for j in i..m {
                        let Some(rj) = &right[j] else { continue };
                        // tr(L Rᵀ) with L = ψ_i Σ_{t−k}, R = Σ_t⁻¹ ψ_j.
                        term[(i, j)] += li.dot(rj);
                    }
                }
            }
            let ds: Vec<(usize, Mat)> = model
                .scale()
                .slots()
                .iter()
                .filter_map(|&i| model.sigma_deriv_any(t, theta0, &[i]).map(|d| (i, &s_inv * d)))
                .collect();
            for (a, (i, pi_)) in ds.iter().enumerate() {
                for (j, pj) in &ds[a..] {
                    let (lo, hi) = if i <= j { (*i, *j) } else { (*j, *i) };
                    term[(lo, hi)] += 0.5 * (pi_ * pj).trace();
                }
            }
            for i in 0..m {
                for j in 0..i {
                    term[(i, j)] = term[(j, i)];
                }
            }
            Ok(term)
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<Mat>>>()?;
    let mut v = Mat::zeros(m, m);
    for term in &terms {
        v += term;
    }
    v /= n as f64;
    Ok(InfoReport::from_v(n, v, opts.keep_per_t.then_some(terms)))
}

/// `V(n)` for the two-parameter Example 1 model from the product formula:
/// `V₁₁ = (1/n) Σ_t sin²(at) Σ_k [(A^{(k−1)}_{t,11})² + (A^{(k−1)}_{t,12})²]`,
/// `V₂₂ = (1/n) Σ_t sin²(bt) Σ_k (A^{(k−1)}_{t,22})²`, `V₁₂ = 0`.
pub fn example1_v_closed(theta0: &[f64], a: f64, b: f64, n: usize) -> Result<InfoReport> {
    if theta0.len() != 2 {
        return Err(Error::contract("Example 1 closed form takes θ = (A'₁₁, A'₂₂)"));
    }
    if n == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    let model = example1_theory_with_frequencies(a, b)?;
    let (mut v11, mut v22) = (0.0, 0.0);
    for t in 1..=n {
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 1..t {
            let p = var1_a_power(&model, theta0, t, k)?;
            s1 += p[(0, 0)].powi(2) + p[(0, 1)].powi(2);
            s2 += p[(1, 1)].powi(2);
        }
        v11 += (a * t as f64).sin().powi(2) * s1;
        v22 += (b * t as f64).sin().powi(2) * s2;
    }
    let v = Mat::from_row_slice(2, 2, &[v11 / n as f64, 0.0, 0.0, v22 / n as f64]);
    Ok(InfoReport::from_v(n, v, None))
}

/// Per-time trace terms `tr(Σ_t⁻¹ ∂_iΣ_t Σ_t⁻¹ ∂_jΣ_t)` for the scale
/// parameters `(η₁₁, η₂₂)` of Example 2, in closed form. These are full
/// traces; the information matrix takes half of each.
pub fn example2_trace_terms(theta0: &[f64], sigma: &Mat, c: f64, t: usize) -> Result<(f64, f64, f64)> {
    if theta0.len() != 4 || sigma.nrows() != 2 || sigma.ncols() != 2 {
        return Err(Error::contract("Example 2 closed form needs θ of length 4 and a 2x2 Σ"));
    }
    let (s11, s12, s22) = (sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)]);
    let det = s11 * s22 - s12 * s12;
    if !(det > 0.0) {
        return Err(Error::contract("Σ must have a positive determinant"));
    }
    let (e11, e22) = (theta0[2], theta0[3]);
    let s = (c * t as f64).sin();
    let denom = (1.0 + ((e11 + e22) * s).exp()).powi(2) * det;
    let pre = 2.0 * s * s;
    let v33 = pre * (((e22 * s).exp() * s11 - s12).powi(2) + 2.0 * det) / denom;
    let v44 = pre * (((e11 * s).exp() * s22 + s12).powi(2) + 2.0 * det) / denom;
    let v34 = pre
        * (s12 * ((e22 * s).exp() * s11 - s12 - (e11 * s).exp() * s22)
            - ((e11 + e22) * s).exp() * (s11 * s22 - 2.0 * s12 * s12))
        / denom;
    Ok((v33, v34, v44))
}
