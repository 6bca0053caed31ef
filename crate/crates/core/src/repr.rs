//! Pure autoregressive (π) and pure moving-average (ψ) representations of a
//! tdVARMA model started at `t = 1` with zero initial values, their parameter
//! derivatives, and closed forms for first-order models used as oracles.
//!
//! With zero initial values both expansions are finite:
//! `e_t = x_t − Σ_{k=1}^{t−1} π_tk x_{t−k}` and
//! `x_t = Σ_{k=0}^{t−1} ψ_tk g_{t−k} ε_{t−k}` with `ψ_t0 = I`.

use crate::error::{Error, Result};
use crate::jet::{is_zero, DerivIndex, MatJet};
use crate::linalg::Mat;
use crate::model::TdVarmaModel;
use crate::timefn::MAX_DERIV_ORDER;

/// Coefficient jets of `A_si` and `B_sj` for `s = 1..=n`.
struct CoefJets {
    ar: Vec<Vec<MatJet>>,
    ma: Vec<Vec<MatJet>>,
}

impl CoefJets {
    fn new(model: &TdVarmaModel, theta: &[f64], n: usize, ix: &DerivIndex) -> Self {
        let ar = (1..=n)
            .map(|s| model.ar().iter().map(|f| ix.coef_jet(f, s, theta)).collect())
            .collect();
        let ma = (1..=n)
            .map(|s| model.ma().iter().map(|f| ix.coef_jet(f, s, theta)).collect())
            .collect();
        Self { ar, ma }
    }
}

/// `π_tk(θ)` and their derivatives for `1 ≤ k < t ≤ n`.
#[derive(Debug, Clone)]
pub struct PiTable {
    n: usize,
    r: usize,
    ix: DerivIndex,
    /// `entries[t−1][k−1]`; structurally zero jets are stored empty.
    entries: Vec<Vec<MatJet>>,
}

impl PiTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.ix.order()
    }

    pub fn index(&self) -> &DerivIndex {
        &self.ix
    }

    pub(crate) fn jet(&self, t: usize, k: usize) -> &MatJet {
        &self.entries[t - 1][k - 1]
    }

    /// `π_tk(θ)`; `k` in `1..t`.
    pub fn pi(&self, t: usize, k: usize) -> Mat {
        self.slot(t, k, 0)
    }

    fn slot(&self, t: usize, k: usize, id: usize) -> Mat {
        self.jet(t, k).get(id).cloned().flatten().unwrap_or_else(|| Mat::zeros(self.r, self.r))
    }

    /// Mixed derivative of `π_tk(θ)` for the index tuple `idx`.
    pub fn pi_deriv(&self, t: usize, k: usize, idx: &[usize]) -> Result<Mat> {
        let id = lookup(&self.ix, idx)?;
        Ok(self.slot(t, k, id))
    }
}

fn lookup(ix: &DerivIndex, idx: &[usize]) -> Result<usize> {
    ix.id(idx).ok_or_else(|| {
        Error::contract(format!(
            "derivative {idx:?} unavailable (m = {}, table order {})",
            ix.m(),
            ix.order()
        ))
    })
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_DERIV_ORDER {
        return Err(Error::contract(format!("derivative order {order} exceeds {MAX_DERIV_ORDER}")));
    }
    Ok(())
}

/// Runs the π recurrence for every `t ≤ n`.
///
/// At step `k` the pending coefficient `π̃_k` is folded into `π_k` and spread
/// forward through `A_{t−k,·}` and `B_{t−k,·}`:
/// `π_j −= π̃_k A_{t−k,j−k}` (`j > k`), `π_k += π̃_k`,
/// `π̃_j −= π̃_k B_{t−k,j−k}` (`j > k`).
pub fn build_pi(model: &TdVarmaModel, theta: &[f64], n: usize, order: usize) -> Result<PiTable> {
    check_order(order)?;
    model.check_theta(theta)?;
    if n == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    let ix = DerivIndex::new(model.m(), order);
    let coefs = CoefJets::new(model, theta, n, &ix);
    let (p, q) = (model.p(), model.q());
    let mut entries = Vec::with_capacity(n);
    for t in 1..=n {
        let mut pi: Vec<MatJet> = vec![ix.zero_jet(); t];
        let mut pit: Vec<MatJet> = vec![ix.zero_jet(); t];
        for i in 1..=p.min(t - 1) {
            pi[i] = coefs.ar[t - 1][i - 1].clone();
        }
        for j in 1..=q.min(t - 1) {
            pit[j] = coefs.ma[t - 1][j - 1].clone();
        }
        for k in 1..t {
            let w = std::mem::take(&mut pit[k]);
            if w.is_empty() || is_zero(&w) {
                continue;
            }
            ix.add(&mut pi[k], 1.0, &w);
            let s = t - k;
            for i in 1..=p {
                if k + i < t {
                    ix.mul_acc(&mut pi[k + i], -1.0, &w, &coefs.ar[s - 1][i - 1]);
                }
            }
            for j in 1..=q {
                if k + j < t {
                    ix.mul_acc(&mut pit[k + j], -1.0, &w, &coefs.ma[s - 1][j - 1]);
                }
            }
        }
        pi.remove(0);
        for jet in &mut pi {
            if is_zero(jet) {
                *jet = Vec::new();
            }
        }
        entries.push(pi);
    }
    Ok(PiTable { n, r: model.r(), ix, entries })
}

/// `ψ_tk(θ)` for `0 ≤ k < t ≤ n`, `ψ_t0 = I`.
#[derive(Debug, Clone)]
pub struct PsiCoefs {
    r: usize,
    psi: Vec<Vec<Mat>>,
    nonzero: Vec<Vec<bool>>,
}

impl PsiCoefs {
    pub fn n(&self) -> usize {
        self.psi.len()
    }

    pub fn get(&self, t: usize, k: usize) -> &Mat {
        &self.psi[t - 1][k]
    }

    pub(crate) fn is_nonzero(&self, t: usize, k: usize) -> bool {
        self.nonzero[t - 1][k]
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

/// Runs the ψ recurrence:
/// `ψ_k += ψ̃_k`, `ψ_j += ψ̃_k B_{t−k,j−k}`, `ψ̃_j += ψ̃_k A_{t−k,j−k}` (`j > k`),
/// starting from `ψ_j = B_tj`, `ψ̃_j = A_tj`.
pub fn psi_coefficients(model: &TdVarmaModel, theta: &[f64], n: usize) -> Result<PsiCoefs> {
    model.check_theta(theta)?;
    let r = model.r();
    let (p, q) = (model.p(), model.q());
    let ar: Vec<Vec<Mat>> =
        (1..=n).map(|s| (1..=p).map(|i| model.ar_at(s, i, theta)).collect()).collect();
    let ma: Vec<Vec<Mat>> =
        (1..=n).map(|s| (1..=q).map(|j| model.ma_at(s, j, theta)).collect()).collect();
    let ar_nz: Vec<Vec<bool>> = ar.iter().map(|v| v.iter().map(|m| m.amax() != 0.0).collect()).collect();
    let ma_nz: Vec<Vec<bool>> = ma.iter().map(|v| v.iter().map(|m| m.amax() != 0.0).collect()).collect();

    let mut psi_all = Vec::with_capacity(n);
    let mut nz_all = Vec::with_capacity(n);
    for t in 1..=n {
        let mut psi = vec![Mat::zeros(r, r); t];
        let mut tilde = vec![Mat::zeros(r, r); t];
        let mut psi_nz = vec![false; t];
        let mut tilde_nz = vec![false; t];
        psi[0] = Mat::identity(r, r);
        psi_nz[0] = true;
        for j in 1..=q.min(t - 1) {
            psi[j].copy_from(&ma[t - 1][j - 1]);
            psi_nz[j] = ma_nz[t - 1][j - 1];
        }
        for i in 1..=p.min(t - 1) {
            tilde[i].copy_from(&ar[t - 1][i - 1]);
            tilde_nz[i] = ar_nz[t - 1][i - 1];
        }
        for k in 1..t {
            if !tilde_nz[k] {
                continue;
            }
            let w = std::mem::replace(&mut tilde[k], Mat::zeros(0, 0));
            psi[k] += &w;
            psi_nz[k] = true;
            let s = t - k;
            for j in 1..=q {
                if k + j < t && ma_nz[s - 1][j - 1] {
                    psi[k + j].gemm(1.0, &w, &ma[s - 1][j - 1], 1.0);
                    psi_nz[k + j] = true;
                }
            }
            for i in 1..=p {
                if k + i < t && ar_nz[s - 1][i - 1] {
                    tilde[k + i].gemm(1.0, &w, &ar[s - 1][i - 1], 1.0);
                    tilde_nz[k + i] = true;
                }
            }
        }
        psi_all.push(psi);
        nz_all.push(psi_nz);
    }
    Ok(PsiCoefs { r, psi: psi_all, nonzero: nz_all })
}

/// Derivative MA coefficients at one time `t`, as jets indexed by `k = 0..t`:
/// slot 0 of jet `k` is `ψ_t0k(θ,θ⁰) = ψ_tk(θ⁰) − Σ_u π_tu(θ) ψ_{t−u,k−u}(θ⁰)`
/// and slot `I` is `ψ_tIk = −Σ_{u=1}^{k} ∂_I π_tu(θ) ψ_{t−u,k−u}(θ⁰)`.
pub(crate) fn psi_jets_at(pi: &PiTable, truth: &PsiCoefs, t: usize) -> Vec<MatJet> {
    let ix = pi.index();
    let r = truth.r();
    let mut out: Vec<MatJet> = vec![ix.zero_jet(); t];
    out[0][0] = Some(Mat::identity(r, r));
    let active: Vec<usize> = (1..t).filter(|&u| !is_zero(pi.jet(t, u))).collect();
    for k in 1..t {
        let jet = &mut out[k];
        if truth.is_nonzero(t, k) {
            jet[0] = Some(truth.get(t, k).clone());
        }
        for &u in active.iter().take_while(|&&u| u <= k) {
            if !truth.is_nonzero(t - u, k - u) {
                continue;
            }
            let factor = truth.get(t - u, k - u);
            for (slot, d) in pi.jet(t, u).iter().enumerate() {
                if let Some(d) = d {
                    let dst = jet[slot].get_or_insert_with(|| Mat::zeros(r, r));
                    dst.gemm(-1.0, d, factor, 1.0);
                }
            }
        }
    }
    out
}

/// All derivative MA coefficients up to a horizon.
#[derive(Debug, Clone)]
pub struct PsiTable {
    n: usize,
    r: usize,
    ix: DerivIndex,
    truth: PsiCoefs,
    /// `jets[t−1][k]`
    jets: Vec<Vec<MatJet>>,
}

impl PsiTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> &DerivIndex {
        &self.ix
    }

    /// `ψ_tk(θ⁰)`; `k` in `0..t`.
    pub fn psi(&self, t: usize, k: usize) -> Mat {
        self.truth.get(t, k).clone()
    }

    pub fn truth(&self) -> &PsiCoefs {
        &self.truth
    }

    /// `ψ_t0k(θ,θ⁰)`.
    pub fn psi0(&self, t: usize, k: usize) -> Mat {
        self.jets[t - 1][k][0].clone().unwrap_or_else(|| Mat::zeros(self.r, self.r))
    }

    /// `ψ_tIk(θ,θ⁰)` for a non-empty index tuple `I`.
    pub fn psi_deriv(&self, t: usize, idx: &[usize], k: usize) -> Result<Mat> {
        if idx.is_empty() {
            return Err(Error::contract("use psi0 for the underived coefficient"));
        }
        let id = lookup(&self.ix, idx)?;
        Ok(self.jets[t - 1][k][id].clone().unwrap_or_else(|| Mat::zeros(self.r, self.r)))
    }
}

/// Builds ψ_tk at `theta_truth` and the derivative coefficients mixing π
/// derivatives at `theta_eval` with ψ factors at `theta_truth`.
pub fn build_psi(
    model: &TdVarmaModel,
    theta_eval: &[f64],
    theta_truth: &[f64],
    n: usize,
    order: usize,
) -> Result<PsiTable> {
    let pi = build_pi(model, theta_eval, n, order)?;
    let truth = psi_coefficients(model, theta_truth, n)?;
    let jets = (1..=n).map(|t| psi_jets_at(&pi, &truth, t)).collect();
    Ok(PsiTable { n, r: model.r(), ix: pi.ix.clone(), truth, jets })
}

fn require_first_order(model: &TdVarmaModel, allow_q0: bool) -> Result<()> {
    let ok = model.p() == 1 && (model.q() == 1 || (allow_q0 && model.q() == 0));
    if ok {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "closed form needs a first-order model, got p = {}, q = {}",
            model.p(),
            model.q()
        )))
    }
}

fn ma1_at(model: &TdVarmaModel, t: usize, theta: &[f64]) -> Mat {
    if model.q() == 0 {
        Mat::zeros(model.r(), model.r())
    } else {
        model.ma_at(t, 1, theta)
    }
}

fn check_tk(t: usize, k: usize) -> Result<()> {
    if k == 0 || k >= t {
        return Err(Error::contract(format!("need 1 <= k < t, got t = {t}, k = {k}")));
    }
    Ok(())
}

/// `ψ_tk = {∏_{l=0}^{k−2} A_{t−l}} (B_{t−k+1} + A_{t−k+1})` for tdVARMA(1,1)
/// (or tdVAR(1), reading `B = 0`).
pub fn varma11_psi_closed(model: &TdVarmaModel, theta: &[f64], t: usize, k: usize) -> Result<Mat> {
    require_first_order(model, true)?;
    model.check_theta(theta)?;
    check_tk(t, k)?;
    let r = model.r();
    let mut prod = Mat::identity(r, r);
    for l in 0..k - 1 {
        prod *= model.ar_at(t - l, 1, theta);
    }
    let s = t - k + 1;
    Ok(prod * (ma1_at(model, s, theta) + model.ar_at(s, 1, theta)))
}

/// `π_tk = (−1)^{k−1} {∏_{l=0}^{k−2} B_{t−l}} (A_{t−k+1} + B_{t−k+1})`.
pub fn varma11_pi_closed(model: &TdVarmaModel, theta: &[f64], t: usize, k: usize) -> Result<Mat> {
    require_first_order(model, true)?;
    model.check_theta(theta)?;
    check_tk(t, k)?;
    let r = model.r();
    let mut prod = Mat::identity(r, r);
    for l in 0..k - 1 {
        prod *= ma1_at(model, t - l, theta);
    }
    let s = t - k + 1;
    let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(prod * (model.ar_at(s, 1, theta) + ma1_at(model, s, theta)) * sign)
}

/// `A_t^{(k−1)} = A_{t−1} A_{t−2} ⋯ A_{t−k+1}` for an upper-triangular
/// bivariate tdVAR(1), assembled entrywise: diagonal entries are products of
/// the diagonal coefficients and the (1,2) entry sums over the position `h`
/// of the single off-diagonal factor.
pub fn var1_a_power(model: &TdVarmaModel, theta: &[f64], t: usize, k: usize) -> Result<Mat> {
    if model.r() != 2 || model.p() != 1 || model.q() != 0 || !model.ar()[0].entry(1, 0).is_identically_zero() {
        return Err(Error::contract(
            "product formula needs a bivariate upper-triangular tdVAR(1)".to_string(),
        ));
    }
    model.check_theta(theta)?;
    if k == 0 || k > t {
        return Err(Error::contract(format!("need 1 <= k <= t, got t = {t}, k = {k}")));
    }
    let f = &model.ar()[0];
    let a11 = |s: usize| f.entry(0, 0).eval(s, theta);
    let a12 = |s: usize| f.entry(0, 1).eval(s, theta);
    let a22 = |s: usize| f.entry(1, 1).eval(s, theta);
    let span = |g: &dyn Fn(usize) -> f64, lo: usize, hi: usize| (lo..=hi).map(|l| g(t - l)).product::<f64>();
    let mut out = Mat::identity(2, 2);
    out[(0, 0)] = span(&a11, 1, k - 1);
    out[(1, 1)] = span(&a22, 1, k - 1);
    out[(0, 1)] = (1..k)
        .map(|h| span(&a11, 1, h - 1) * a12(t - h) * span(&a22, h + 1, k - 1))
        .sum();
    Ok(out)
}
