//! Gaussian realizations of a tdVARMA model with zero initial values.
//!
//! Draws come from ChaCha20 (`rand_chacha` 0.9) seeded with the 64-bit
//! master seed and a 64-bit stream id; normals use the ziggurat sampler of
//! `rand_distr` 0.5. The pair is reported by [`RNG_ID`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{Series, TdVarmaModel};

pub const RNG_ID: &str = "chacha20 (rand_chacha 0.9), stream = (n << 32) | rep; normals: ziggurat (rand_distr 0.5 StandardNormal)";

#[derive(Debug, Clone)]
pub struct SimPlan<'a> {
    pub model: &'a TdVarmaModel,
    pub theta: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
}

impl<'a> SimPlan<'a> {
    /// Plan at the model's true parameter value.
    pub fn at_truth(model: &'a TdVarmaModel, n: usize, seed: u64) -> Result<Self> {
        Ok(Self { model, theta: model.layout().theta0()?.to_vec(), n, seed, stream: 0 })
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

/// Stream id used for replication `rep` of a study at length `n`.
pub fn replication_stream(n: usize, rep: usize) -> u64 {
    ((n as u64) << 32) | rep as u64
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn simulate(plan: &SimPlan) -> Result<Series> {
    simulate_with_innovations(plan).map(|(x, _)| x)
}

/// Simulated series together with the standardized innovations `ε_t`.
pub fn simulate_with_innovations(plan: &SimPlan) -> Result<(Series, Vec<Vector>)> {
    let model = plan.model;
    if plan.n == 0 {
        return Err(Error::contract("series length must be at least 1"));
    }
    model.check_theta(&plan.theta)?;
    let r = model.r();
    let chol = model
        .sigma()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::contract("Σ is not positive definite"))?;
    let l = chol.l();
    let mut rng = rng_for(plan.seed, plan.stream);
    let eps: Vec<Vector> = (0..plan.n)
        .map(|_| {
            let z = Vector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            &l * z
        })
        .collect();
    let theta = &plan.theta;
    let shocks: Vec<Vector> = (1..=plan.n).map(|t| model.g_at(t, theta) * &eps[t - 1]).collect();
    let mut xs: Vec<Vector> = Vec::with_capacity(plan.n);
    for t in 1..=plan.n {
        let mut x = shocks[t - 1].clone();
        for i in 1..=model.p().min(t - 1) {
            x.gemv(1.0, &model.ar_at(t, i, theta), &xs[t - i - 1], 1.0);
        }
        for j in 1..=model.q().min(t - 1) {
            x.gemv(1.0, &model.ma_at(t, j, theta), &shocks[t - j - 1], 1.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("simulated value overflowed at t = {t}")));
        }
        xs.push(x);
    }
    Ok((Series::new(r, xs)?, eps))
}

/// Correlation between the two components of `g_t ε_t` for a bivariate model.
pub fn innovation_correlation(model: &TdVarmaModel, theta: &[f64], t: usize) -> Result<f64> {
    if model.r() != 2 {
        return Err(Error::contract(format!("innovation correlation needs r = 2, got {}", model.r())));
    }
    let s: Mat = model.sigma_t(t, theta)?;
    Ok(s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt())
}
