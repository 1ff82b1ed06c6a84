//! Per-cycle statistics of the threshold policies.
//!
//! A cycle-`j` starts at a synchronization point (SP) with source and
//! estimate both equal to `j`. The source holds for `Exp(σ_j)` and jumps to
//! some `i ≠ j`; from then on the out-of-sync period `T_j` is the absorption
//! time of a chain whose transient states are the source states `i ≠ j` and
//! whose absorbing state `S_l` means "next SP at value `l`". Absorption into
//! `S_j` happens when the source returns to `j`; into `S_i` when a
//! transmission sent from state `i` completes before the source moves.
//!
//! The returned parameters are `d_j = E[T_j] + 1/σ_j`, `a_j = E[T_j²]/2`
//! (AoII grows with slope 1 while out of sync), the expected number of
//! transmissions `c_j`, and the SP transition row `p_j·`.

use serde::{Deserialize, Serialize};

use crate::ctmc::{positive, ChannelSpec, GeneratorMatrix};
use crate::error::{Error, Result};
use crate::mrph::{MrphSpec, Prepared, Regime, RegimeIntegral};
use crate::numerics::{dot, expm, DenseMatrix, Lu};
use crate::phase_type::{absorption_probs, embedded_jump_chain, fundamental_matrix, ph_moments, AmcSpec};

/// Thresholds `τ_ji` of cycle `j`, stored as a full length-`N` row whose
/// `j`th entry is ignored. `f64::INFINITY` means "never transmit from `i`".
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    j: usize,
    taus: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(j: usize, taus: Vec<f64>) -> Result<Self> {
        if j >= taus.len() {
            return Err(Error::Dimension(format!("state {j} out of range for {} thresholds", taus.len())));
        }
        for (i, &t) in taus.iter().enumerate() {
            if i != j && (t.is_nan() || t < 0.0) {
                return Err(Error::invalid(format!("threshold tau[{j}][{i}] = {t} must be >= 0")));
            }
        }
        let mut taus = taus;
        taus[j] = 0.0;
        Ok(ThresholdVector { j, taus })
    }

    /// Same threshold for every `i ≠ j`.
    pub fn uniform(n: usize, j: usize, tau: f64) -> Result<Self> {
        Self::new(j, vec![tau; n])
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn n(&self) -> usize {
        self.taus.len()
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.taus[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.taus
    }
}

/// `(d_j, a_j, c_j, p_j·)` of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub d: f64,
    pub a: f64,
    pub c: f64,
    pub p: Vec<f64>,
}

/// Regime boundaries of an ESAT cycle with the transmit set of each regime.
#[derive(Debug, Clone, PartialEq)]
pub struct EsatRegimes {
    pub gamma: Vec<f64>,
    /// `sets[m]` lists the source states (original indices) that transmit in regime `m`.
    pub sets: Vec<Vec<usize>>,
}

pub fn esat_regimes(g: &GeneratorMatrix, j: usize, tau: &ThresholdVector) -> Result<EsatRegimes> {
    check_cycle(g, j, tau)?;
    let mut gamma: Vec<f64> = std::iter::once(0.0)
        .chain((0..g.n()).filter(|&i| i != j).map(|i| tau.tau(i)).filter(|t| t.is_finite()))
        .collect();
    gamma.sort_by(f64::total_cmp);
    gamma.dedup();
    let sets = gamma
        .iter()
        .map(|&gm| (0..g.n()).filter(|&i| i != j && tau.tau(i) <= gm).collect())
        .collect();
    Ok(EsatRegimes { gamma, sets })
}

fn check_cycle(g: &GeneratorMatrix, j: usize, tau: &ThresholdVector) -> Result<()> {
    if tau.j() != j || tau.n() != g.n() {
        return Err(Error::Dimension(format!(
            "threshold vector for cycle {} of {} states used for cycle {j} of {}",
            tau.j(),
            tau.n(),
            g.n()
        )));
    }
    Ok(())
}

/// Source states other than `j`, in increasing order: the transient states.
pub(crate) fn others(n: usize, j: usize) -> Vec<usize> {
    (0..n).filter(|&i| i != j).collect()
}

/// `β_{j1} = q_{j*}^{(-j)} / σ_j`.
pub(crate) fn initial_row(g: &GeneratorMatrix, j: usize) -> Vec<f64> {
    others(g.n(), j).into_iter().map(|i| g.rate(j, i) / g.sigma(j)).collect()
}

/// `Q^{(-j)}`: the generator with row and column `j` removed.
pub(crate) fn reduced_generator(g: &GeneratorMatrix, j: usize) -> DenseMatrix {
    g.matrix().without(j)
}

/// Absorption sub-generator with column `S_j` set to `q_ij` and column `S_i`
/// set to `μ` for every transient `i` in `transmitting`.
pub(crate) fn absorption_block(g: &GeneratorMatrix, mu: f64, j: usize, transmitting: &[bool]) -> DenseMatrix {
    let st = others(g.n(), j);
    let mut b = DenseMatrix::zeros(st.len(), g.n());
    for (k, &i) in st.iter().enumerate() {
        b[(k, j)] = g.rate(i, j);
        if transmitting[k] {
            b[(k, i)] = mu;
        }
    }
    b
}

fn transient_block(base: &DenseMatrix, mu: f64, transmitting: &[bool]) -> DenseMatrix {
    let mut a = base.clone();
    for (k, &on) in transmitting.iter().enumerate() {
        if on {
            a[(k, k)] -= mu;
        }
    }
    a
}

/// The MRPH description of an ESAT cycle.
pub fn esat_spec(g: &GeneratorMatrix, ch: &ChannelSpec, j: usize, tau: &ThresholdVector) -> Result<MrphSpec> {
    let reg = esat_regimes(g, j, tau)?;
    let st = others(g.n(), j);
    let base = reduced_generator(g, j);
    let regimes = reg
        .sets
        .iter()
        .map(|set| {
            let on: Vec<bool> = st.iter().map(|i| set.contains(i)).collect();
            Regime { a: transient_block(&base, ch.mu, &on), b: absorption_block(g, ch.mu, j, &on) }
        })
        .collect();
    MrphSpec::new(reg.gamma, regimes, initial_row(g, j))
}

pub fn esat_cycle(g: &GeneratorMatrix, ch: &ChannelSpec, j: usize, tau: &ThresholdVector) -> Result<CycleParams> {
    let spec = esat_spec(g, ch, j, tau)?;
    let prep = Prepared::new(&spec)?;
    let (m1, m2) = prep.moments();
    let p = prep.absorption_probs();

    // c_ji: the mass sitting in i when its threshold passes, plus every later
    // entry into i (each entry after τ_ji starts a fresh transmission).
    let st = others(g.n(), j);
    let mut c = 0.0;
    for (k, &i) in st.iter().enumerate() {
        let t = tau.tau(i);
        if !t.is_finite() {
            continue;
        }
        let m_i = spec.gamma().iter().position(|&gm| gm == t).expect("threshold is a boundary");
        let mut inflow: Vec<f64> = st.iter().map(|&from| g.rate(from, i)).collect();
        inflow[k] = 0.0;
        c += prep.betas[m_i][k] + prep.total(m_i, |_| RegimeIntegral::Absorption(&inflow));
    }
    Ok(CycleParams { d: m1 + 1.0 / g.sigma(j), a: 0.5 * m2, c: c.max(0.0), p })
}

/// Derivatives of `(d, a, c, p)` with respect to the EAT threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDerivative {
    pub d: f64,
    pub a: f64,
    pub c: f64,
    pub p: Vec<f64>,
}

/// Threshold-independent pieces of an EAT cycle, so that each evaluation at a
/// new `τ_j` costs one matrix exponential.
///
/// With `A₁ = Q^{(-j)}`, `A₂ = A₁ - μI`, `M₁ = A₁⁻¹ - A₂⁻¹`, `M₂ = A₁⁻² - A₂⁻²`
/// and `r = β e^{A₁τ}`:
/// `d = r M₁ 1 - β A₁⁻¹ 1 + 1/σ_j`, `a = τ r M₁ 1 - r M₂ 1 + β A₁⁻² 1`,
/// `c = r F 1` with `F` the fundamental matrix of the regime-2 jump chain,
/// `p_ji = -μ (r A₂⁻¹)_i` for `i ≠ j`, and `p_jj` collects the returns to `j`
/// in both regimes.
#[derive(Debug, Clone)]
pub struct EatCycleModel {
    pub(crate) j: usize,
    pub(crate) n: usize,
    pub(crate) beta: Vec<f64>,
    pub(crate) a1: DenseMatrix,
    pub(crate) a2_inv: DenseMatrix,
    pub(crate) mu: f64,
    pub(crate) m1: Vec<f64>,
    pub(crate) m2: Vec<f64>,
    pub(crate) a1_m1: Vec<f64>,
    pub(crate) a1_m2: Vec<f64>,
    pub(crate) f1: Vec<f64>,
    pub(crate) a1_f1: Vec<f64>,
    /// `A₁⁻¹ q_{·j} - A₂⁻¹ q_{·j}`, returns to `j` per unit of `r`.
    ret: Vec<f64>,
    a1_ret: Vec<f64>,
    pub(crate) base_d: f64,
    pub(crate) base_a: f64,
    pub(crate) base_ret: f64,
}

impl EatCycleModel {
    pub fn new(g: &GeneratorMatrix, ch: &ChannelSpec, j: usize) -> Result<Self> {
        if j >= g.n() {
            return Err(Error::Dimension(format!("state {j} out of range for {} states", g.n())));
        }
        let k = g.n() - 1;
        let beta = initial_row(g, j);
        let a1 = reduced_generator(g, j);
        let a2 = a1.sub(&DenseMatrix::identity(k).scale(ch.mu));
        let lu1 = Lu::new(&a1)?;
        let lu2 = Lu::new(&a2)?;
        let ones = vec![1.0; k];
        let w1 = lu1.solve_vec(&ones);
        let w11 = lu1.solve_vec(&w1);
        let v1 = lu2.solve_vec(&ones);
        let v11 = lu2.solve_vec(&v1);
        let m1: Vec<f64> = w1.iter().zip(&v1).map(|(x, y)| x - y).collect();
        let m2: Vec<f64> = w11.iter().zip(&v11).map(|(x, y)| x - y).collect();
        let f1 = fundamental_matrix(&embedded_jump_chain(&a2)?)?.mul_vec(&ones);
        let back: Vec<f64> = others(g.n(), j).into_iter().map(|i| g.rate(i, j)).collect();
        let ret: Vec<f64> = lu1.solve_vec(&back).iter().zip(lu2.solve_vec(&back)).map(|(x, y)| x - y).collect();
        Ok(EatCycleModel {
            j,
            n: g.n(),
            a1_m1: a1.mul_vec(&m1),
            a1_m2: a1.mul_vec(&m2),
            a1_f1: a1.mul_vec(&f1),
            a1_ret: a1.mul_vec(&ret),
            base_d: -dot(&beta, &w1) + 1.0 / g.sigma(j),
            base_a: dot(&beta, &w11),
            base_ret: -dot(&beta, &lu1.solve_vec(&back)),
            a2_inv: lu2.inverse(),
            beta,
            a1,
            mu: ch.mu,
            m1,
            m2,
            f1,
            ret,
        })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// `β e^{A₁τ}`: the transient occupancy when the threshold passes.
    pub(crate) fn occupancy(&self, tau: f64) -> Result<Vec<f64>> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("EAT threshold must be finite and >= 0, got {tau}")));
        }
        if tau == 0.0 {
            return Ok(self.beta.clone());
        }
        Ok(expm(&self.a1.scale(tau))?.left_mul(&self.beta))
    }

    fn transitions(&self, r: &[f64], ret: f64) -> Vec<f64> {
        let sent = self.a2_inv.left_mul(r);
        let mut p = Vec::with_capacity(self.n);
        let mut k = 0;
        for i in 0..self.n {
            if i == self.j {
                p.push(ret);
            } else {
                p.push(-self.mu * sent[k]);
                k += 1;
            }
        }
        p
    }

    pub fn eval(&self, tau: f64) -> Result<CycleParams> {
        let r = self.occupancy(tau)?;
        Ok(self.params_at(&r, tau))
    }

    fn params_at(&self, r: &[f64], tau: f64) -> CycleParams {
        let rm1 = dot(r, &self.m1);
        let ret = (self.base_ret + dot(r, &self.ret)).max(0.0);
        let p = self.transitions(r, ret);
        CycleParams {
            d: rm1 + self.base_d,
            a: (tau * rm1 - dot(r, &self.m2) + self.base_a).max(0.0),
            c: dot(r, &self.f1).max(0.0),
            p: p.into_iter().map(|x| x.max(0.0)).collect(),
        }
    }

    /// Parameters and their derivatives in `τ`; `d/dτ (β e^{A₁τ}) = r A₁`.
    pub fn eval_with_derivative(&self, tau: f64) -> Result<(CycleParams, CycleDerivative)> {
        let r = self.occupancy(tau)?;
        let params = self.params_at(&r, tau);
        let rm1 = dot(&r, &self.m1);
        let ra1m1 = dot(&r, &self.a1_m1);
        let ra1 = self.a1.left_mul(&r);
        let dp = self.transitions(&ra1, dot(&r, &self.a1_ret));
        let deriv = CycleDerivative {
            d: ra1m1,
            a: rm1 + tau * ra1m1 - dot(&r, &self.a1_m2),
            c: dot(&r, &self.a1_f1),
            p: dp,
        };
        Ok((params, deriv))
    }
}

/// `tau_j = ∞` means the cycle never transmits.
pub fn eat_cycle(g: &GeneratorMatrix, ch: &ChannelSpec, j: usize, tau_j: f64) -> Result<CycleParams> {
    if tau_j == f64::INFINITY {
        return esat_cycle(g, ch, j, &ThresholdVector::uniform(g.n(), j, tau_j)?);
    }
    EatCycleModel::new(g, ch, j)?.eval(tau_j)
}

/// Poisson-sampling cycle. Transient states are `(i, idle)` and `(i, tx)` for
/// `i ≠ j`, ordered idle block first. Sampling at rate `γ` moves idle to tx;
/// a source move to `i′ ≠ j` lands in `(i′, idle)` (the in-flight sample is
/// stale); a return to `j` absorbs into `S_j`; completion absorbs into `S_i`
/// at rate `μ`. Every sample costs budget, so `c_j = γ E[T_j]`.
pub fn ps_cycle(g: &GeneratorMatrix, ch: &ChannelSpec, gamma: f64, j: usize) -> Result<CycleParams> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("sampling intensity must be finite and >= 0, got {gamma}")));
    }
    if j >= g.n() {
        return Err(Error::Dimension(format!("state {j} out of range for {} states", g.n())));
    }
    let st = others(g.n(), j);
    let k = st.len();
    let mut a = DenseMatrix::zeros(2 * k, 2 * k);
    let mut b = DenseMatrix::zeros(2 * k, g.n());
    for (x, &i) in st.iter().enumerate() {
        for (y, &i2) in st.iter().enumerate() {
            if x != y {
                a[(x, y)] = g.rate(i, i2);
                a[(k + x, y)] = g.rate(i, i2);
            }
        }
        a[(x, x)] = -g.sigma(i) - gamma;
        a[(x, k + x)] = gamma;
        a[(k + x, k + x)] = -g.sigma(i) - ch.mu;
        b[(x, j)] = g.rate(i, j);
        b[(k + x, j)] = g.rate(i, j);
        b[(k + x, i)] = ch.mu;
    }
    let mut beta = initial_row(g, j);
    beta.resize(2 * k, 0.0);
    let spec = AmcSpec::new(a, b, beta)?;
    let (m1, m2) = ph_moments(&spec)?;
    let p = absorption_probs(&spec)?.into_iter().map(|x| x.max(0.0)).collect();
    Ok(CycleParams { d: m1 + 1.0 / g.sigma(j), a: 0.5 * m2, c: gamma * m1, p })
}

/// Closed forms for the two-state source under EAT thresholds `(τ₁, τ₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryClosedForm {
    pub maoii: f64,
    pub rate: f64,
    pub pi: [f64; 2],
    pub d: [f64; 2],
    pub a: [f64; 2],
    pub c: [f64; 2],
    pub p: [[f64; 2]; 2],
}

/// In cycle-1 the source sits in state 2 and leaves at `σ₂`; after `τ₁` a
/// single transmission is in flight and completes at rate `μ`. Writing
/// `s = σ₂`, `r = σ₂ + μ`, `e = e^{-sτ₁}`:
/// `d₁ = (1-e)/s + e/r + 1/σ₁`, `a₁ = 1/s² + e[τ₁(1/r - 1/s) + 1/r² - 1/s²]`,
/// `c₁ = e`, `p₁₂ = eμ/r`. Cycle-2 is the mirror image.
pub fn binary_closed_form(sigma1: f64, sigma2: f64, mu: f64, tau1: f64, tau2: f64) -> Result<BinaryClosedForm> {
    positive("sigma1", sigma1)?;
    positive("sigma2", sigma2)?;
    positive("mu", mu)?;
    for (name, t) in [("tau1", tau1), ("tau2", tau2)] {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite and >= 0, got {t}")));
        }
    }
    let half = |hold: f64, s: f64, tau: f64| {
        let r = s + mu;
        let e = (-s * tau).exp();
        let d = (1.0 - e) / s + e / r + 1.0 / hold;
        let a = 1.0 / (s * s) + e * (tau * (1.0 / r - 1.0 / s) + 1.0 / (r * r) - 1.0 / (s * s));
        (d, a, e, e * mu / r)
    };
    let (d1, a1, c1, p12) = half(sigma1, sigma2, tau1);
    let (d2, a2, c2, p21) = half(sigma2, sigma1, tau2);
    let pi1 = p21 / (p12 + p21);
    let pi2 = p12 / (p12 + p21);
    let den = pi1 * d1 + pi2 * d2;
    Ok(BinaryClosedForm {
        maoii: (pi1 * a1 + pi2 * a2) / den,
        rate: (pi1 * c1 + pi2 * c2) / den,
        pi: [pi1, pi2],
        d: [d1, d2],
        a: [a1, a2],
        c: [c1, c2],
        p: [[1.0 - p12, p12], [p21, 1.0 - p21]],
    })
}

/// Closed forms for the symmetric source under a single threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricClosedForm {
    pub maoii: f64,
    pub rate: f64,
    pub d: f64,
    pub a: f64,
    pub c: f64,
}

/// Every out-of-sync state returns to the estimate at rate `s = σ/(N-1)`, so
/// the out-of-sync time has survival `e^{-st}` before `τ` and decays at
/// `r = s + μ` afterwards. After `τ` each move between out-of-sync states
/// (probability `σ(N-2)/((σ+μ)(N-1))` per event) starts a new transmission.
/// Stationary probabilities are uniform, so `MAoII = a/d` and `R = c/d`.
pub fn symmetric_closed_form(n: usize, sigma: f64, mu: f64, tau: f64) -> Result<SymmetricClosedForm> {
    if n < 2 {
        return Err(Error::TooFewStates(n));
    }
    positive("sigma", sigma)?;
    positive("mu", mu)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be finite and >= 0, got {tau}")));
    }
    let nf = n as f64;
    let s = sigma / (nf - 1.0);
    let r = s + mu;
    let e = (-s * tau).exp();
    let wander = sigma * (nf - 2.0) / ((sigma + mu) * (nf - 1.0));
    let c = e / (1.0 - wander);
    let d = (1.0 - e) / s + e / r + 1.0 / sigma;
    let a = 1.0 / (s * s) + e * (tau * (1.0 / r - 1.0 / s) + 1.0 / (r * r) - 1.0 / (s * s));
    Ok(SymmetricClosedForm { maoii: a / d, rate: c / d, d, a, c })
}
