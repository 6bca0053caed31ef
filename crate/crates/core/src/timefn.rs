//! Deterministic coefficient functions of time with exact parameter
//! derivatives up to third order.
//!
//! A derivative is requested by a tuple of global parameter indices; the
//! empty tuple means the plain value. Repeated indices are allowed, so
//! `&[2, 2]` is the second derivative with respect to `θ₂`.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const MAX_DERIV_ORDER: usize = 3;

/// A coefficient that is either a fixed number or a slot in `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coef {
    Fixed(f64),
    Param(usize),
}

impl Coef {
    #[inline]
    fn value(self, theta: &[f64]) -> f64 {
        match self {
            Coef::Fixed(v) => v,
            Coef::Param(i) => theta[i],
        }
    }

    fn slot(self) -> Option<usize> {
        match self {
            Coef::Fixed(_) => None,
            Coef::Param(i) => Some(i),
        }
    }

    /// Number of times this coefficient's slot appears in `idx`.
    #[inline]
    fn hits(self, idx: &[usize]) -> usize {
        match self {
            Coef::Fixed(_) => 0,
            Coef::Param(i) => idx.iter().filter(|&&j| j == i).count(),
        }
    }
}

/// Smooth scalar building blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `value`
    Constant { value: Coef },
    /// `intercept + slope·t`
    Linear { intercept: Coef, slope: Coef },
    /// `amplitude·sin(frequency·t + phase)`
    Sine { amplitude: Coef, frequency: f64, phase: Coef },
    /// `exp(−rate·sin(frequency·t))`
    ExpSine { rate: Coef, frequency: f64 },
}

impl Primitive {
    fn remap(&self, f: &dyn Fn(usize) -> usize) -> Self {
        let m = |c: Coef| match c {
            Coef::Param(i) => Coef::Param(f(i)),
            fixed => fixed,
        };
        match *self {
            Primitive::Constant { value } => Primitive::Constant { value: m(value) },
            Primitive::Linear { intercept, slope } => {
                Primitive::Linear { intercept: m(intercept), slope: m(slope) }
            }
            Primitive::Sine { amplitude, frequency, phase } => {
                Primitive::Sine { amplitude: m(amplitude), frequency, phase: m(phase) }
            }
            Primitive::ExpSine { rate, frequency } => Primitive::ExpSine { rate: m(rate), frequency },
        }
    }

    fn coefs(&self) -> Vec<Coef> {
        match *self {
            Primitive::Constant { value } => vec![value],
            Primitive::Linear { intercept, slope } => vec![intercept, slope],
            Primitive::Sine { amplitude, phase, .. } => vec![amplitude, phase],
            Primitive::ExpSine { rate, .. } => vec![rate],
        }
    }

    fn validate(&self) -> Result<()> {
        let freq_ok = match *self {
            Primitive::Sine { frequency, .. } | Primitive::ExpSine { frequency, .. } => {
                frequency.is_finite()
            }
            _ => true,
        };
        if !freq_ok {
            return Err(Error::config("frequency", "must be finite"));
        }
        for c in self.coefs() {
            if let Coef::Fixed(v) = c {
                if !v.is_finite() {
                    return Err(Error::config("constants", "non-finite constant"));
                }
            }
        }
        if let Primitive::Linear { intercept: Coef::Param(a), slope: Coef::Param(b) } = *self {
            if a == b {
                return Err(Error::config("param_slots", "intercept and slope share a slot"));
            }
        }
        if let Primitive::Sine { amplitude: Coef::Param(a), phase: Coef::Param(b), .. } = *self {
            if a == b {
                return Err(Error::config("param_slots", "amplitude and phase share a slot"));
            }
        }
        Ok(())
    }

    fn deriv(&self, t: f64, theta: &[f64], idx: &[usize]) -> f64 {
        match *self {
            Primitive::Constant { value } => match idx.len() {
                0 => value.value(theta),
                1 if value.hits(idx) == 1 => 1.0,
                _ => 0.0,
            },
            Primitive::Linear { intercept, slope } => match idx.len() {
                0 => intercept.value(theta) + slope.value(theta) * t,
                1 => {
                    let mut d = 0.0;
                    if intercept.hits(idx) == 1 {
                        d += 1.0;
                    }
                    if slope.hits(idx) == 1 {
                        d += t;
                    }
                    d
                }
                _ => 0.0,
            },
            Primitive::Sine { amplitude, frequency, phase } => {
                let na = amplitude.hits(idx);
                let np = phase.hits(idx);
                if na > 1 || na + np != idx.len() {
                    return 0.0;
                }
                let amp = if na == 1 { 1.0 } else { amplitude.value(theta) };
                // k-th derivative of sin(x) is sin(x + kπ/2).
                let arg = angle(frequency, t) + phase.value(theta) + np as f64 * FRAC_PI_2;
                amp * arg.sin()
            }
            Primitive::ExpSine { rate, frequency } => {
                let nr = rate.hits(idx);
                if nr != idx.len() {
                    return 0.0;
                }
                let s = angle(frequency, t).sin();
                let f = (-rate.value(theta) * s).exp();
                (-s).powi(nr as i32) * f
            }
        }
    }
}

/// `frequency·t`, reduced modulo a whole period first when the period
/// `2π/frequency` is an integer, so that `sin` vanishes exactly at multiples of it.
fn angle(frequency: f64, t: f64) -> f64 {
    if frequency != 0.0 {
        let period = TAU / frequency.abs();
        let whole = period.round();
        if whole >= 1.0 && (period - whole).abs() <= 1e-9 * whole && t.fract() == 0.0 {
            return frequency * t.rem_euclid(whole);
        }
    }
    frequency * t
}

/// A scalar function of time: a primitive, or a sum or product of two.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarTimeFunction {
    Primitive(Primitive),
    Sum(Primitive, Primitive),
    Product(Primitive, Primitive),
}

impl ScalarTimeFunction {
    pub fn constant(v: f64) -> Self {
        ScalarTimeFunction::Primitive(Primitive::Constant { value: Coef::Fixed(v) })
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn param(slot: usize) -> Self {
        ScalarTimeFunction::Primitive(Primitive::Constant { value: Coef::Param(slot) })
    }

    /// `θ[slot]·sin(frequency·t)`.
    pub fn sine(slot: usize, frequency: f64) -> Self {
        ScalarTimeFunction::Primitive(Primitive::Sine {
            amplitude: Coef::Param(slot),
            frequency,
            phase: Coef::Fixed(0.0),
        })
    }

    /// `exp(−θ[slot]·sin(frequency·t))`.
    pub fn exp_sine(slot: usize, frequency: f64) -> Self {
        ScalarTimeFunction::Primitive(Primitive::ExpSine { rate: Coef::Param(slot), frequency })
    }

    fn parts(&self) -> (&Primitive, Option<&Primitive>) {
        match self {
            ScalarTimeFunction::Primitive(a) => (a, None),
            ScalarTimeFunction::Sum(a, b) | ScalarTimeFunction::Product(a, b) => (a, Some(b)),
        }
    }

    /// Parameter slots this function depends on.
    pub fn param_slots(&self) -> BTreeSet<usize> {
        let (a, b) = self.parts();
        a.coefs()
            .into_iter()
            .chain(b.map(|b| b.coefs()).unwrap_or_default())
            .filter_map(Coef::slot)
            .collect()
    }

    /// Same function with every parameter slot `i` replaced by `f(i)`.
    pub fn remap_slots(&self, f: &dyn Fn(usize) -> usize) -> Self {
        match self {
            ScalarTimeFunction::Primitive(a) => ScalarTimeFunction::Primitive(a.remap(f)),
            ScalarTimeFunction::Sum(a, b) => ScalarTimeFunction::Sum(a.remap(f), b.remap(f)),
            ScalarTimeFunction::Product(a, b) => ScalarTimeFunction::Product(a.remap(f), b.remap(f)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.parts();
        a.validate()?;
        if let Some(b) = b {
            b.validate()?;
        }
        Ok(())
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(
            self,
            ScalarTimeFunction::Primitive(Primitive::Constant { value: Coef::Fixed(v) }) if *v == 0.0
        )
    }

    pub fn eval(&self, t: usize, theta: &[f64]) -> f64 {
        self.deriv_unchecked(t as f64, theta, &[])
    }

    /// Mixed partial derivative for the index tuple `idx` (empty = value).
    pub fn eval_deriv(&self, t: usize, theta: &[f64], idx: &[usize]) -> Result<f64> {
        if idx.len() > MAX_DERIV_ORDER {
            return Err(Error::contract(format!(
                "derivative order {} exceeds {MAX_DERIV_ORDER}",
                idx.len()
            )));
        }
        Ok(self.deriv_unchecked(t as f64, theta, idx))
    }

    fn deriv_unchecked(&self, t: f64, theta: &[f64], idx: &[usize]) -> f64 {
        match self {
            ScalarTimeFunction::Primitive(a) => a.deriv(t, theta, idx),
            ScalarTimeFunction::Sum(a, b) => a.deriv(t, theta, idx) + b.deriv(t, theta, idx),
            ScalarTimeFunction::Product(a, b) => {
                // Leibniz over subsets of index positions.
                let k = idx.len();
                let mut acc = 0.0;
                let mut left = [0usize; MAX_DERIV_ORDER];
                let mut right = [0usize; MAX_DERIV_ORDER];
                for mask in 0..(1u32 << k) {
                    let (mut nl, mut nr) = (0, 0);
                    for (pos, &i) in idx.iter().enumerate() {
                        if mask & (1 << pos) != 0 {
                            left[nl] = i;
                            nl += 1;
                        } else {
                            right[nr] = i;
                            nr += 1;
                        }
                    }
                    acc += a.deriv(t, theta, &left[..nl]) * b.deriv(t, theta, &right[..nr]);
                }
                acc
            }
        }
    }
}

/// An `r × r` grid of scalar time functions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTimeFunction {
    dim: usize,
    /// Row-major entries.
    entries: Vec<ScalarTimeFunction>,
    entry_slots: Vec<BTreeSet<usize>>,
    slots: BTreeSet<usize>,
}

impl MatrixTimeFunction {
    /// Builds from row-major entries; `entries.len()` must be `dim²`.
    pub fn new(dim: usize, entries: Vec<ScalarTimeFunction>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::config(
                "entries",
                format!("expected {} entries for a {dim}x{dim} matrix, got {}", dim * dim, entries.len()),
            ));
        }
        for e in &entries {
            e.validate()?;
        }
        let entry_slots: Vec<_> = entries.iter().map(|e| e.param_slots()).collect();
        let slots = entry_slots.iter().flatten().copied().collect();
        Ok(Self { dim, entries, entry_slots, slots })
    }

    pub fn constant(m: &Mat) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "coefficient matrices are square");
        let r = m.nrows();
        let entries = (0..r * r).map(|k| ScalarTimeFunction::constant(m[(k / r, k % r)])).collect();
        Self::new(r, entries).expect("finite constant matrix")
    }

    pub fn identity(r: usize) -> Self {
        Self::constant(&Mat::identity(r, r))
    }

    pub fn zeros(r: usize) -> Self {
        Self::constant(&Mat::zeros(r, r))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarTimeFunction {
        &self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[ScalarTimeFunction] {
        &self.entries
    }

    /// Union of the parameter slots of all entries.
    pub fn slots(&self) -> &BTreeSet<usize> {
        &self.slots
    }

    pub fn remap_slots(&self, f: &dyn Fn(usize) -> usize) -> Self {
        Self::new(self.dim, self.entries.iter().map(|e| e.remap_slots(f)).collect())
            .expect("remapping preserves validity")
    }

    pub fn is_identically_zero(&self) -> bool {
        self.entries.iter().all(ScalarTimeFunction::is_identically_zero)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        match self.slots.iter().next_back() {
            Some(&max) if max >= theta.len() => Err(Error::config(
                "param_slots",
                format!("slot {max} out of range for a parameter vector of length {}", theta.len()),
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: usize, theta: &[f64]) -> Result<Mat> {
        self.eval_deriv(t, theta, &[])
    }

    /// Exact mixed partial derivative for the index tuple `idx`.
    pub fn eval_deriv(&self, t: usize, theta: &[f64], idx: &[usize]) -> Result<Mat> {
        if idx.len() > MAX_DERIV_ORDER {
            return Err(Error::contract(format!(
                "derivative order {} exceeds {MAX_DERIV_ORDER}",
                idx.len()
            )));
        }
        self.check_theta(theta)?;
        Ok(self.deriv_unchecked(t, theta, idx))
    }

    /// Like `eval_deriv` without the argument checks; returns `None` when the
    /// derivative is structurally zero.
    pub(crate) fn deriv_sparse(&self, t: usize, theta: &[f64], idx: &[usize]) -> Option<Mat> {
        if !idx.iter().all(|i| self.slots.contains(i)) {
            return None;
        }
        if !idx.is_empty() && self.entry_slots.iter().all(|s| !idx.iter().all(|i| s.contains(i))) {
            return None;
        }
        Some(self.deriv_unchecked(t, theta, idx))
    }

    fn deriv_unchecked(&self, t: usize, theta: &[f64], idx: &[usize]) -> Mat {
        let r = self.dim;
        let tf = t as f64;
        Mat::from_fn(r, r, |i, j| {
            let k = i * r + j;
            if idx.iter().all(|s| self.entry_slots[k].contains(s)) {
                self.entries[k].deriv_unchecked(tf, theta, idx)
            } else {
                0.0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_periods_hit_exact_zeros() {
        let f = ScalarTimeFunction::sine(0, TAU / 25.0);
        for t in [25, 50, 500] {
            assert_eq!(f.eval(t, &[0.8]), 0.0);
        }
        assert!((f.eval(3, &[1.0]) - (TAU * 3.0 / 25.0).sin()).abs() < 1e-15);
        let g = ScalarTimeFunction::exp_sine(0, TAU / 25.0);
        assert_eq!(g.eval(75, &[2.0]), 1.0);
        let irr = ScalarTimeFunction::sine(0, TAU / 2499f64.sqrt());
        assert_eq!(irr.eval(10, &[1.0]), (TAU / 2499f64.sqrt() * 10.0).sin());
    }
    use std::f64::consts::PI;

    fn fd1(f: &ScalarTimeFunction, t: usize, theta: &[f64], i: usize, h: f64) -> f64 {
        let mut p = theta.to_vec();
        let mut m = theta.to_vec();
        p[i] += h;
        m[i] -= h;
        (f.eval(t, &p) - f.eval(t, &m)) / (2.0 * h)
    }

    #[test]
    fn identity_constant() {
        let f = MatrixTimeFunction::identity(2);
        assert_eq!(f.eval(7, &[]).unwrap(), Mat::identity(2, 2));
    }

    #[test]
    fn example1_entry_value() {
        let a = 2.0 * PI / 2499f64.sqrt();
        let f = ScalarTimeFunction::sine(0, a);
        assert_eq!(f.eval(1, &[0.8]), 0.8 * a.sin());
    }

    #[test]
    fn exp_sine_full_period_is_one() {
        let c = 2.0 * PI / 25.0;
        let f = ScalarTimeFunction::exp_sine(0, c);
        assert!((f.eval(25, &[1.0]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sine_amplitude_derivative_is_the_sine() {
        let a = 0.37;
        let f = ScalarTimeFunction::sine(0, a);
        for t in 1..20 {
            assert_eq!(f.eval_deriv(t, &[0.8], &[0]).unwrap(), (a * t as f64).sin());
            assert_eq!(f.eval_deriv(t, &[0.8], &[0, 0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn exp_sine_rate_derivative_matches_fd() {
        let c = 2.0 * PI / 25.0;
        let f = ScalarTimeFunction::exp_sine(0, c);
        for t in 1..60 {
            let exact = f.eval_deriv(t, &[1.0], &[0]).unwrap();
            let s = (c * t as f64).sin();
            assert!((exact + s * (-s).exp()).abs() < 1e-14);
            let fd = fd1(&f, t, &[1.0], 0, 1e-6);
            if exact.abs() > 1e-8 {
                assert!(((fd - exact) / exact).abs() < 1e-7, "t={t}");
            }
        }
    }

    #[test]
    fn phase_derivatives_cycle() {
        let f = ScalarTimeFunction::Primitive(Primitive::Sine {
            amplitude: Coef::Param(0),
            frequency: 0.3,
            phase: Coef::Param(1),
        });
        let th = [1.7, 0.2];
        let x: f64 = 0.3 * 5.0 + 0.2;
        assert!((f.eval_deriv(5, &th, &[1]).unwrap() - 1.7 * x.cos()).abs() < 1e-14);
        assert!((f.eval_deriv(5, &th, &[1, 1]).unwrap() + 1.7 * x.sin()).abs() < 1e-14);
        assert!((f.eval_deriv(5, &th, &[1, 1, 1]).unwrap() + 1.7 * x.cos()).abs() < 1e-14);
        assert!((f.eval_deriv(5, &th, &[0, 1, 1]).unwrap() + x.sin()).abs() < 1e-14);
    }

    #[test]
    fn product_uses_leibniz() {
        let f = ScalarTimeFunction::Product(
            Primitive::Sine { amplitude: Coef::Param(0), frequency: 0.5, phase: Coef::Fixed(0.0) },
            Primitive::ExpSine { rate: Coef::Param(0), frequency: 0.5 },
        );
        // f = a·s·exp(−a·s): ∂²f/∂a² = s·(−2s + a s²)·exp(−a s)
        let a = 0.7;
        let t = 3;
        let s = (0.5 * t as f64).sin();
        let want = s * (-2.0 * s + a * s * s) * (-a * s).exp();
        assert!((f.eval_deriv(t, &[a], &[0, 0]).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn order_four_is_rejected() {
        let f = MatrixTimeFunction::identity(2);
        assert!(matches!(f.eval_deriv(1, &[], &[0, 0, 0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn out_of_range_slot_is_config_error() {
        let f = MatrixTimeFunction::new(
            1,
            vec![ScalarTimeFunction::sine(3, 1.0)],
        )
        .unwrap();
        assert!(matches!(f.eval(1, &[0.0]), Err(Error::Config { .. })));
    }

    #[test]
    fn foreign_slot_derivative_is_zero() {
        let f = MatrixTimeFunction::new(
            2,
            vec![
                ScalarTimeFunction::sine(0, 0.1),
                ScalarTimeFunction::param(1),
                ScalarTimeFunction::zero(),
                ScalarTimeFunction::sine(2, 0.2),
            ],
        )
        .unwrap();
        let th = [0.8, 0.5, -0.9, 3.0];
        assert_eq!(f.eval_deriv(4, &th, &[3]).unwrap(), Mat::zeros(2, 2));
        assert_eq!(f.eval_deriv(4, &th, &[0, 1]).unwrap(), Mat::zeros(2, 2));
        assert!(f.deriv_sparse(4, &th, &[0, 2]).is_none());
        assert_eq!(f.eval_deriv(4, &th, &[1]).unwrap()[(0, 1)], 1.0);
    }
}
