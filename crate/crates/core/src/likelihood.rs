//! Residuals, the Gaussian quasi-likelihood objective and its exact score.
//!
//! `Q_n(θ) = ½ Σ_t α_t(θ) + (rn/2) log 2π` with
//! `α_t = log det Σ_t(θ) + e_tᵀ Σ_t⁻¹ e_t`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Mat, Vector};
use crate::model::{Series, TdVarmaModel};

type Chol = Cholesky<f64, Dyn>;

#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// `e[t−1] = e_t(θ)`
    pub e: Vec<Vector>,
    pub sigma_t: Vec<Mat>,
    pub chol: Vec<Chol>,
    /// `de[t−1][i] = ∂e_t/∂θ_i`, present when requested.
    pub de: Option<Vec<Vec<Vector>>>,
}

#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub q: f64,
    pub alphas: Vec<f64>,
    pub grad: Vector,
    /// `n × m`, row `t−1` holds `∂α_t/∂θ`.
    pub score_rows: Mat,
}

fn check_series(model: &TdVarmaModel, series: &Series) -> Result<()> {
    if series.r() != model.r() {
        return Err(Error::contract(format!(
            "series dimension {} differs from model dimension {}",
            series.r(),
            model.r()
        )));
    }
    Ok(())
}

/// Nonzero first derivatives `(i, ∂F/∂θ_i)` of a coefficient function.
fn first_derivs(f: &crate::timefn::MatrixTimeFunction, t: usize, theta: &[f64]) -> Vec<(usize, Mat)> {
    f.slots()
        .iter()
        .filter_map(|&i| f.deriv_sparse(t, theta, &[i]).map(|d| (i, d)))
        .collect()
}

fn factor(model: &TdVarmaModel, t: usize, theta: &[f64]) -> Result<(Mat, Chol)> {
    let s = model.sigma_t_unchecked(t, theta);
    match s.clone().cholesky() {
        Some(c) if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) => Ok((s, c)),
        _ => Err(Error::SingularCovariance { t, context: format!(" (θ = {theta:?})") }),
    }
}

/// `e_t = x_t − Σ A_ti x_{t−i} − Σ B_tj e_{t−j}` with zero initial values,
/// optionally with `∂e_t/∂θ` propagated through the same recursion.
pub fn residuals(model: &TdVarmaModel, series: &Series, theta: &[f64], with_derivs: bool) -> Result<ResidualSet> {
    check_series(model, series)?;
    model.check_theta(theta)?;
    let (n, r, m) = (series.n(), model.r(), model.m());
    let (p, q) = (model.p(), model.q());
    let mut e: Vec<Vector> = Vec::with_capacity(n);
    let mut de: Vec<Vec<Vector>> = Vec::with_capacity(if with_derivs { n } else { 0 });
    let mut sigma_t = Vec::with_capacity(n);
    let mut chol = Vec::with_capacity(n);
    for t in 1..=n {
        let mut et = series.at(t).clone();
        let mut det = if with_derivs { vec![Vector::zeros(r); m] } else { Vec::new() };
        for i in 1..=p.min(t - 1) {
            let f = &model.ar()[i - 1];
            let x = series.at(t - i);
            if let Some(a) = f.deriv_sparse(t, theta, &[]) {
                et.gemv(-1.0, &a, x, 1.0);
            }
            if with_derivs {
                for (k, da) in first_derivs(f, t, theta) {
                    det[k].gemv(-1.0, &da, x, 1.0);
                }
            }
        }
        for j in 1..=q.min(t - 1) {
            let f = &model.ma()[j - 1];
            let past = &e[t - j - 1];
            if let Some(b) = f.deriv_sparse(t, theta, &[]) {
                et.gemv(-1.0, &b, past, 1.0);
                if with_derivs {
                    for (k, d) in det.iter_mut().enumerate() {
                        d.gemv(-1.0, &b, &de[t - j - 1][k], 1.0);
                    }
                }
            }
            if with_derivs {
                for (k, db) in first_derivs(f, t, theta) {
                    det[k].gemv(-1.0, &db, past, 1.0);
                }
            }
        }
        let (s, c) = factor(model, t, theta)?;
        sigma_t.push(s);
        chol.push(c);
        e.push(et);
        if with_derivs {
            de.push(det);
        }
    }
    Ok(ResidualSet { e, sigma_t, chol, de: with_derivs.then_some(de) })
}

fn alpha(c: &Chol, e: &Vector) -> (f64, Vector) {
    let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let u = c.solve(e);
    (logdet + e.dot(&u), u)
}

fn constant_term(r: usize, n: usize) -> f64 {
    0.5 * (r * n) as f64 * (2.0 * PI).ln()
}

/// `Q_n(θ)` alone.
pub fn objective_value(model: &TdVarmaModel, series: &Series, theta: &[f64]) -> Result<f64> {
    let res = residuals(model, series, theta, false)?;
    let sum: f64 = res.e.iter().zip(&res.chol).map(|(e, c)| alpha(c, e).0).sum();
    let q = 0.5 * sum + constant_term(model.r(), series.n());
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::Numerical("objective is not finite".into()))
    }
}

/// Per-time quantities shared by the score and the information estimates.
struct ScoreParts {
    res: ResidualSet,
    alphas: Vec<f64>,
    rows: Mat,
    /// `Σ_t⁻¹` for each t.
    s_inv: Vec<Mat>,
    /// `(i, ∂Σ_t/∂θ_i)` for each t, scale-block parameters only.
    dsigma: Vec<Vec<(usize, Mat)>>,
}

fn score_parts(model: &TdVarmaModel, series: &Series, theta: &[f64]) -> Result<ScoreParts> {
    let res = residuals(model, series, theta, true)?;
    let (n, m) = (series.n(), model.m());
    let de = res.de.as_ref().expect("derivatives requested");
    let scale_slots: Vec<usize> = model.scale().slots().iter().copied().collect();
    let mut alphas = Vec::with_capacity(n);
    let mut rows = Mat::zeros(n, m);
    let mut s_inv_all = Vec::with_capacity(n);
    let mut dsigma_all = Vec::with_capacity(n);
    for t in 1..=n {
        let c = &res.chol[t - 1];
        let e = &res.e[t - 1];
        let (a, u) = alpha(c, e);
        alphas.push(a);
        for i in 0..m {
            rows[(t - 1, i)] = 2.0 * u.dot(&de[t - 1][i]);
        }
        let s_inv = symmetrize(&c.inverse());
        let mut ds_t = Vec::with_capacity(scale_slots.len());
        for &i in &scale_slots {
            if let Some(ds) = model.sigma_deriv_any(t, theta, &[i]) {
                let tr = (&s_inv * &ds).trace();
                let quad = u.dot(&(&ds * &u));
                rows[(t - 1, i)] += tr - quad;
                ds_t.push((i, ds));
            }
        }
        s_inv_all.push(s_inv);
        dsigma_all.push(ds_t);
    }
    if rows.iter().any(|v| !v.is_finite()) || alphas.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    Ok(ScoreParts { res, alphas, rows, s_inv: s_inv_all, dsigma: dsigma_all })
}

/// `Q_n`, the per-time `α_t`, and the exact score.
pub fn objective(model: &TdVarmaModel, series: &Series, theta: &[f64]) -> Result<ObjectiveReport> {
    let parts = score_parts(model, series, theta)?;
    Ok(report(model, series, parts))
}

fn report(model: &TdVarmaModel, series: &Series, parts: ScoreParts) -> ObjectiveReport {
    let q = 0.5 * parts.alphas.iter().sum::<f64>() + constant_term(model.r(), series.n());
    let grad = parts.rows.row_sum().transpose() * 0.5;
    ObjectiveReport { q, alphas: parts.alphas, grad, score_rows: parts.rows }
}

/// Empirical information matrices at `θ`:
/// `V̂_ij = (1/n) Σ_t [∂_i eᵀ Σ_t⁻¹ ∂_j e + ½ tr(Σ_t⁻¹ ∂_iΣ_t Σ_t⁻¹ ∂_jΣ_t)]` and
/// `Ŵ = (1/4n) Σ_t (∂α_t/∂θ)(∂α_t/∂θ)ᵀ` (score rows are not centered).
pub fn empirical_vw(model: &TdVarmaModel, series: &Series, theta: &[f64]) -> Result<(Mat, Mat)> {
    let parts = score_parts(model, series, theta)?;
    Ok(vw_from_parts(model, series, &parts))
}

fn vw_from_parts(model: &TdVarmaModel, series: &Series, parts: &ScoreParts) -> (Mat, Mat) {
    let (n, m) = (series.n(), model.m());
    let de = parts.res.de.as_ref().expect("derivatives requested");
    let mut v = Mat::zeros(m, m);
    for t in 0..n {
        let c = &parts.res.chol[t];
        let solved: Vec<Vector> = de[t].iter().map(|d| c.solve(d)).collect();
        for i in 0..m {
            for j in i..m {
                v[(i, j)] += de[t][i].dot(&solved[j]);
            }
        }
        let s_inv = &parts.s_inv[t];
        let prods: Vec<(usize, Mat)> = parts.dsigma[t].iter().map(|(i, ds)| (*i, s_inv * ds)).collect();
        for (a, (i, pi)) in prods.iter().enumerate() {
            for (j, pj) in &prods[a..] {
                let (lo, hi) = if i <= j { (*i, *j) } else { (*j, *i) };
                v[(lo, hi)] += 0.5 * (pi * pj).trace();
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            v[(i, j)] = v[(j, i)];
        }
    }
    v /= n as f64;
    let w = parts.rows.transpose() * &parts.rows / (4.0 * n as f64);
    (symmetrize(&v), symmetrize(&w))
}

/// Objective report together with `(V̂, Ŵ)`, sharing one pass over the data.
pub fn objective_with_vw(
    model: &TdVarmaModel,
    series: &Series,
    theta: &[f64],
) -> Result<(ObjectiveReport, Mat, Mat)> {
    let parts = score_parts(model, series, theta)?;
    let (v, w) = vw_from_parts(model, series, &parts);
    Ok((report(model, series, parts), v, w))
}
