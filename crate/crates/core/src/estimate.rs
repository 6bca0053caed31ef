//! Quasi-maximum-likelihood fitting, sandwich covariance and Wald tests.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::{objective, objective_value, objective_with_vw, residuals};
use crate::linalg::{checked_inverse, spd_inverse, symmetrize, Mat};
use crate::model::{Series, TdVarmaModel};

/// Two-sided 5% critical value of the standard normal.
pub const Z_975: f64 = 1.959964;

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub theta_init: Vec<f64>,
    pub max_iters: usize,
    /// Tolerance on `max_i |∂Q_n/∂θ_i| / n` (projected onto the box).
    pub grad_tol: f64,
    pub step_tol: f64,
    pub estimate_sigma: bool,
    pub sigma_iters: usize,
    /// Overrides the model layout's bounds when set.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl FitOptions {
    pub fn new(theta_init: Vec<f64>) -> Self {
        Self {
            theta_init,
            max_iters: 200,
            grad_tol: 1e-6,
            step_tol: 1e-10,
            estimate_sigma: false,
            sigma_iters: 3,
            bounds: None,
        }
    }

    fn validate(&self, m: usize, bounds: &[(f64, f64)]) -> Result<()> {
        if self.theta_init.len() != m {
            return Err(Error::contract(format!(
                "theta_init has length {}, model has {m} parameters",
                self.theta_init.len()
            )));
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::contract("tolerances must be strictly positive"));
        }
        if self.theta_init.iter().zip(bounds).any(|(v, &(lo, hi))| !(*v >= lo && *v <= hi)) {
            return Err(Error::contract("theta_init lies outside the bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub q: f64,
    #[serde(serialize_with = "crate::linalg::rows::opt")]
    pub sigma_hat: Option<Mat>,
    #[serde(serialize_with = "crate::linalg::rows::opt")]
    pub v: Option<Mat>,
    #[serde(serialize_with = "crate::linalg::rows::opt")]
    pub w: Option<Mat>,
    /// `V̂⁻¹ Ŵ V̂⁻¹ / n`
    #[serde(serialize_with = "crate::linalg::rows::opt")]
    pub cov: Option<Mat>,
    pub se: Option<Vec<f64>>,
    /// `max_i |∂Q_n/∂θ_i| / n` at the returned point, projected onto the box.
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub singular_v: bool,
    pub notes: Vec<String>,
    /// `Q_n` at the start and after each accepted step of the final pass.
    #[serde(skip)]
    pub q_path: Vec<f64>,
}

impl FitResult {
    /// Sets the covariance fields from `V̂` and `Ŵ`; returns false if `V̂` is singular.
    fn set_covariance(&mut self, v: Mat, w: Mat, n: usize) -> bool {
        let inv = spd_inverse(&v).or_else(|| checked_inverse(&v, "V").ok());
        self.v = Some(v);
        match inv {
            Some(vi) if vi.iter().all(|x| x.is_finite()) => {
                let cov = symmetrize(&(&vi * &w * &vi)) / n as f64;
                self.se = Some(cov.diagonal().iter().map(|c| c.max(0.0).sqrt()).collect());
                self.cov = Some(cov);
                self.w = Some(w);
                true
            }
            _ => {
                self.w = Some(w);
                self.singular_v = true;
                false
            }
        }
    }
}

struct Outcome {
    theta: Vec<f64>,
    q: f64,
    grad_norm: f64,
    iters: usize,
    termination: Termination,
    q_path: Vec<f64>,
}

/// Gradient with components that push out of an active bound zeroed.
fn projected_grad(theta: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    theta
        .iter()
        .zip(g)
        .zip(bounds)
        .map(|((&x, &gi), &(lo, hi))| {
            if (x <= lo && gi > 0.0) || (x >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn project(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in theta.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// BFGS on the inverse Hessian with projected Armijo backtracking.
fn minimize(
    model: &TdVarmaModel,
    series: &Series,
    start: &[f64],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
) -> Result<Outcome> {
    let m = model.m();
    let n = series.n() as f64;
    let mut theta = start.to_vec();
    project(&mut theta, bounds);
    let rep = objective(model, series, &theta)?;
    let mut f = rep.q;
    let mut q_path = vec![f];
    let mut g: Vec<f64> = rep.grad.iter().copied().collect();
    // Q_n grows like n, so its curvature is roughly n times an O(1) matrix.
    let mut h = Mat::identity(m, m) / n;
    let mut iters = 0;
    let termination = loop {
        let pg = projected_grad(&theta, &g, bounds);
        if max_abs(&pg) / n <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iters >= opts.max_iters {
            break Termination::MaxIterations;
        }
        iters += 1;
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        // Do not push against active bounds.
        for i in 0..m {
            let (lo, hi) = bounds[i];
            if (theta[i] <= lo && d[i] < 0.0) || (theta[i] >= hi && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            h = Mat::identity(m, m) / n;
            d = g.iter().map(|x| -x / n).collect();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<f64> = theta.iter().zip(&d).map(|(x, di)| x + alpha * di).collect();
            project(&mut trial, bounds);
            let step: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if max_abs(&step) < opts.step_tol {
                break;
            }
            let decrease: f64 = step.iter().zip(&g).map(|(s, gi)| s * gi).sum();
            // Cholesky failures count as +∞ and trigger backtracking.
            if let Ok(ft) = objective_value(model, series, &trial) {
                if ft <= f + ARMIJO_C * decrease {
                    accepted = Some((trial, step));
                    break;
                }
            }
            alpha *= SHRINK;
        }
        let Some((trial, s)) = accepted else {
            break if max_abs(&d) * alpha < opts.step_tol {
                Termination::StepTolerance
            } else {
                Termination::LineSearchFailed
            };
        };
        let rep = match objective(model, series, &trial) {
            Ok(r) => r,
            Err(_) => break Termination::LineSearchFailed,
        };
        let g_new: Vec<f64> = rep.grad.iter().copied().collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            let sv = nalgebra::DVector::from_column_slice(&s);
            let yv = nalgebra::DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (&sv * sv.transpose()) * (rho * rho * yhy + rho)
                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            h = symmetrize(&h);
        }
        theta = trial;
        f = rep.q;
        q_path.push(f);
        g = g_new;
        if max_abs(&s) < opts.step_tol {
            let pg = projected_grad(&theta, &g, bounds);
            break if max_abs(&pg) / n <= opts.grad_tol {
                Termination::GradientTolerance
            } else {
                Termination::StepTolerance
            };
        }
    };
    let grad_norm = max_abs(&projected_grad(&theta, &g, bounds)) / n;
    Ok(Outcome { theta, q: f, grad_norm, iters, termination, q_path })
}

/// `Σ̂ = (1/n) Σ_t g_t⁻¹ e_t e_tᵀ g_t⁻ᵀ` at `θ`.
pub fn estimate_sigma(model: &TdVarmaModel, series: &Series, theta: &[f64]) -> Result<Mat> {
    let res = residuals(model, series, theta, false)?;
    let r = model.r();
    let mut acc = Mat::zeros(r, r);
    for (t, e) in (1..).zip(&res.e) {
        let gi = checked_inverse(&model.g_at(t, theta), &format!("g_t at t = {t}"))?;
        let u = gi * e;
        acc += &u * u.transpose();
    }
    Ok(symmetrize(&(acc / series.n() as f64)))
}

/// Minimizes `Q_n` from `opts.theta_init`; optionally alternates with the
/// moment estimator of `Σ`. Non-convergence is reported, not raised.
pub fn fit(model: &TdVarmaModel, series: &Series, opts: &FitOptions) -> Result<FitResult> {
    let m = model.m();
    let n = series.n();
    if n < m {
        return Err(Error::contract(format!("series length {n} is smaller than the {m} parameters")));
    }
    if series.r() != model.r() {
        return Err(Error::contract("series and model dimensions differ"));
    }
    let bounds = opts.bounds.clone().unwrap_or_else(|| model.layout().bounds.clone());
    if bounds.len() != m {
        return Err(Error::contract("bounds length differs from the parameter count"));
    }
    opts.validate(m, &bounds)?;

    let mut notes = Vec::new();
    let mut working = model.clone();
    let mut start = opts.theta_init.clone();
    let mut sigma_hat = None;
    let mut total_iters = 0;
    if opts.estimate_sigma {
        notes.push(format!(
            "Σ estimated in {} two-stage rounds; covariance is conditional on Σ̂",
            opts.sigma_iters
        ));
        for _ in 0..opts.sigma_iters {
            let out = minimize(&working, series, &start, &bounds, opts)?;
            total_iters += out.iters;
            start = out.theta;
            match estimate_sigma(&working, series, &start).and_then(|s| working.clone().with_sigma(s.clone()).map(|w| (s, w))) {
                Ok((s, w)) => {
                    working = w;
                    sigma_hat = Some(s);
                }
                Err(e) => {
                    notes.push(format!("Σ̂ update failed ({e}); kept previous Σ"));
                    break;
                }
            }
        }
    }
    let out = minimize(&working, series, &start, &bounds, opts)?;
    total_iters += out.iters;
    notes.push("Ŵ uses uncentered score outer products".into());

    let mut result = FitResult {
        theta: out.theta,
        q: out.q,
        sigma_hat,
        v: None,
        w: None,
        cov: None,
        se: None,
        grad_norm: out.grad_norm,
        iters: total_iters,
        converged: out.termination == Termination::GradientTolerance,
        termination: out.termination,
        singular_v: false,
        notes,
        q_path: out.q_path,
    };
    let (_, v, w) = objective_with_vw(&working, series, &result.theta)?;
    if !result.set_covariance(v, w, n) {
        result.notes.push("V̂ is singular; covariance unavailable".into());
    }
    Ok(result)
}

/// `(θ̂_i − h0) / se_i` and whether `|stat| > 1.959964`.
pub fn wald_test(fit: &FitResult, i: usize, h0: f64) -> Result<(f64, bool)> {
    let se = fit
        .se
        .as_ref()
        .and_then(|s| s.get(i).copied())
        .ok_or_else(|| Error::contract("standard errors unavailable"))?;
    if !(se > 0.0) {
        return Err(Error::contract(format!("standard error of parameter {i} is not positive")));
    }
    let stat = (fit.theta[i] - h0) / se;
    Ok((stat, stat.abs() > Z_975))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::ParamLayout;
    use crate::timefn::{MatrixTimeFunction, ScalarTimeFunction as S};

    fn dummy(theta: f64, se: f64) -> FitResult {
        FitResult {
            theta: vec![theta],
            q: 0.0,
            sigma_hat: None,
            v: None,
            w: None,
            cov: None,
            se: Some(vec![se]),
            grad_norm: 0.0,
            iters: 0,
            converged: true,
            termination: Termination::GradientTolerance,
            singular_v: false,
            notes: vec![],
            q_path: vec![],
        }
    }

    #[test]
    fn wald_basics() {
        assert_eq!(wald_test(&dummy(0.3, 0.1), 0, 0.3).unwrap(), (0.0, false));
        let (s, rej) = wald_test(&dummy(0.6, 0.1), 0, 0.3).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && rej);
        let mut f = dummy(0.0, 1.0);
        f.se = None;
        assert!(wald_test(&f, 0, 0.0).is_err());
    }

    #[test]
    fn scale_mle_is_root_mean_square() {
        let g = MatrixTimeFunction::new(1, vec![S::param(0)]).unwrap();
        let layout = ParamLayout::new(vec!["s".into()], [0, 0, 1])
            .unwrap()
            .with_bounds(vec![(0.05, 10.0)])
            .unwrap();
        let m = TdVarmaModel::new(vec![], vec![], g, Mat::identity(1, 1), layout).unwrap();
        let xs: Vec<f64> = (1..=50).map(|t| ((t as f64) * 1.7).sin() * 2.0).collect();
        let x = Series::new(1, xs.iter().map(|&v| Vector::from_vec(vec![v])).collect()).unwrap();
        let fit = fit(&m, &x, &FitOptions::new(vec![1.0])).unwrap();
        let m2 = xs.iter().map(|v| v * v).sum::<f64>() / 50.0;
        assert!(fit.converged, "{:?}", fit.termination);
        assert!((fit.theta[0].powi(2) - m2).abs() < 1e-6 * m2);
    }

    #[test]
    fn rejects_short_series() {
        let a = MatrixTimeFunction::new(1, vec![S::param(0)]).unwrap();
        let b = MatrixTimeFunction::new(1, vec![S::param(1)]).unwrap();
        let layout = ParamLayout::new(vec!["a".into(), "b".into()], [2, 0, 0]).unwrap();
        let m = TdVarmaModel::new(vec![a, b], vec![], MatrixTimeFunction::identity(1), Mat::identity(1, 1), layout)
            .unwrap();
        let x = Series::new(1, vec![Vector::from_vec(vec![1.0])]).unwrap();
        assert!(matches!(fit(&m, &x, &FitOptions::new(vec![0.0, 0.0])), Err(Error::Contract(_))));
    }
}
