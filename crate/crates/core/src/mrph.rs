//! Multi-regime phase-type (MRPH) distributions.
//!
//! The absorbing chain's generator is piecewise constant in elapsed time:
//! regime `m` governs `[γ_m, γ_{m+1})` with sub-generators `(A_m, B_m)`, and
//! `γ_1 = 0 < γ_2 < … < γ_M < γ_{M+1} = ∞`. The transient occupancy
//! `g(t) = β_m e^{A_m (t - γ_m)}` is continuous across boundaries, which fixes
//! the regime initial vectors `β_{m+1} = β_m e^{A_m (γ_{m+1} - γ_m)}`.
//!
//! All moments and absorption probabilities reduce to three regime integrals
//! with closed forms in terms of `A⁻¹`:
//!
//! * `I₀(β, A, b, l, u) = ∫_l^u β e^{A(t-l)} b dt = (β_u - β) A⁻¹ b`
//! * `I₁(β, A, l, u) = ∫_l^u -t β e^{A(t-l)} A 1 dt = -β_u (u 1 - w₁) + β (l 1 - w₁)`
//! * `I₂(β, A, l, u) = ∫_l^u -t² β e^{A(t-l)} A 1 dt
//!    = -β_u (u² 1 - 2u w₁ + 2 w₂) + β (l² 1 - 2l w₁ + 2 w₂)`
//!
//! where `β_u = β e^{A(u-l)}`, `w₁ = A⁻¹ 1`, `w₂ = A⁻² 1`. Each follows from
//! an antiderivative of the integrand; the `u = ∞` variants drop the `β_u`
//! term since the transient mass vanishes.

use crate::error::{Error, Result};
use crate::numerics::{dot, expm, sum, DenseMatrix, Lu};
use crate::phase_type::{check_probability_row, check_sub_generators};

/// One regime's transient and absorption sub-generators.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrphSpec {
    gamma: Vec<f64>,
    regimes: Vec<Regime>,
    beta1: Vec<f64>,
}

impl MrphSpec {
    /// `gamma` holds the regime start times `γ_1 = 0 < … < γ_M`, one per regime.
    pub fn new(gamma: Vec<f64>, regimes: Vec<Regime>, beta1: Vec<f64>) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::invalid("an MRPH spec needs at least one regime"));
        }
        if gamma.len() != regimes.len() {
            return Err(Error::Dimension(format!(
                "{} boundaries for {} regimes",
                gamma.len(),
                regimes.len()
            )));
        }
        if gamma[0] != 0.0 {
            return Err(Error::invalid(format!("first boundary must be 0, got {}", gamma[0])));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("regime boundaries"));
        }
        if gamma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("regime boundaries must be strictly increasing"));
        }
        let k = regimes[0].a.rows();
        let l = regimes[0].b.cols();
        for (m, r) in regimes.iter().enumerate() {
            check_sub_generators(&r.a, &r.b)?;
            if r.a.rows() != k || r.b.cols() != l {
                return Err(Error::Dimension(format!("regime {m} changes the state space")));
            }
        }
        if beta1.len() != k {
            return Err(Error::Dimension(format!("beta1 has {} entries, expected {k}", beta1.len())));
        }
        check_probability_row(&beta1, "beta1")?;
        Ok(MrphSpec { gamma, regimes, beta1 })
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    pub fn transient_states(&self) -> usize {
        self.beta1.len()
    }

    pub fn absorbing_states(&self) -> usize {
        self.regimes[0].b.cols()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    pub fn beta1(&self) -> &[f64] {
        &self.beta1
    }

    /// Index of the regime governing time `t` (half-open `[γ_m, γ_{m+1})`).
    pub fn regime_at(&self, t: f64) -> usize {
        self.gamma.partition_point(|&g| g <= t) - 1
    }

    /// End of regime `m`, `∞` for the last one.
    pub fn upper(&self, m: usize) -> f64 {
        self.gamma.get(m + 1).copied().unwrap_or(f64::INFINITY)
    }
}

/// Initial vectors `β_1 … β_M` of every regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeInitials {
    pub betas: Vec<Vec<f64>>,
}

pub fn propagate_initials(spec: &MrphSpec) -> Result<RegimeInitials> {
    let mut betas = Vec::with_capacity(spec.regime_count());
    betas.push(spec.beta1.clone());
    for m in 0..spec.regime_count() - 1 {
        let dt = spec.gamma[m + 1] - spec.gamma[m];
        let next = expm(&spec.regimes[m].a.scale(dt))?.left_mul(&betas[m]);
        betas.push(next);
    }
    Ok(RegimeInitials { betas })
}

fn occupancy_at(spec: &MrphSpec, betas: &RegimeInitials, t: f64) -> Result<(usize, Vec<f64>)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be finite and non-negative, got {t}")));
    }
    let m = spec.regime_at(t);
    let g = expm(&spec.regimes[m].a.scale(t - spec.gamma[m]))?.left_mul(&betas.betas[m]);
    Ok((m, g))
}

/// `f_T(t) = -β_m e^{A_m (t - γ_m)} A_m 1` on `[γ_m, γ_{m+1})`.
pub fn mrph_pdf(spec: &MrphSpec, t: f64) -> Result<f64> {
    let betas = propagate_initials(spec)?;
    let (m, g) = occupancy_at(spec, &betas, t)?;
    Ok((-sum(&spec.regimes[m].a.left_mul(&g))).max(0.0))
}

/// `P(T ≤ t) = 1 - g(t) 1`.
pub fn mrph_cdf(spec: &MrphSpec, t: f64) -> Result<f64> {
    let betas = propagate_initials(spec)?;
    let (_, g) = occupancy_at(spec, &betas, t)?;
    Ok((1.0 - sum(&g)).clamp(0.0, 1.0))
}

/// Absorption rate vector `ν_l(t) = g(t) b_{m,*l}`; its entries sum to `f_T(t)`.
pub fn absorption_rates(spec: &MrphSpec, t: f64) -> Result<Vec<f64>> {
    let betas = propagate_initials(spec)?;
    let (m, g) = occupancy_at(spec, &betas, t)?;
    Ok(spec.regimes[m].b.left_mul(&g))
}

/// Which regime integral to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum RegimeIntegral<'a> {
    /// `I₀`: mass absorbed through the rate column `b`.
    Absorption(&'a [f64]),
    /// `I₁`: contribution to `E[T]`.
    FirstMoment,
    /// `I₂`: contribution to `E[T²]`.
    SecondMoment,
}

/// Closed-form regime integral over `[lower, upper)`; `upper` may be `∞`.
pub fn regime_integral(
    beta: &[f64],
    a: &DenseMatrix,
    kind: RegimeIntegral<'_>,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    if !a.is_square() || beta.len() != a.rows() {
        return Err(Error::Dimension(format!(
            "beta has {} entries for a {}x{} generator",
            beta.len(),
            a.rows(),
            a.cols()
        )));
    }
    if !lower.is_finite() || upper.is_nan() || upper < lower {
        return Err(Error::invalid(format!("invalid interval [{lower}, {upper})")));
    }
    let lu = Lu::new(a)?;
    let next = if upper.is_infinite() {
        None
    } else {
        Some(expm(&a.scale(upper - lower))?.left_mul(beta))
    };
    Ok(integral_with(&lu, beta, next.as_deref(), kind, lower, upper))
}

/// Regime integral given the factored `A` and, for a finite upper limit, the
/// propagated vector `β e^{A(u-l)}`.
fn integral_with(
    lu: &Lu,
    beta: &[f64],
    next: Option<&[f64]>,
    kind: RegimeIntegral<'_>,
    lower: f64,
    upper: f64,
) -> f64 {
    let k = lu.dim();
    match kind {
        RegimeIntegral::Absorption(b) => {
            assert_eq!(b.len(), k, "absorption column length mismatch");
            let ainv_b = lu.solve_vec(b);
            let tail = next.map_or(0.0, |n| dot(n, &ainv_b));
            tail - dot(beta, &ainv_b)
        }
        RegimeIntegral::FirstMoment => {
            let w1 = lu.solve_vec(&vec![1.0; k]);
            let at = |v: &[f64], t: f64| t * sum(v) - dot(v, &w1);
            let tail = next.map_or(0.0, |n| at(n, upper));
            at(beta, lower) - tail
        }
        RegimeIntegral::SecondMoment => {
            let w1 = lu.solve_vec(&vec![1.0; k]);
            let w2 = lu.solve_vec(&w1);
            let at = |v: &[f64], t: f64| t * t * sum(v) - 2.0 * t * dot(v, &w1) + 2.0 * dot(v, &w2);
            let tail = next.map_or(0.0, |n| at(n, upper));
            at(beta, lower) - tail
        }
    }
}

/// Factored regimes with their initial vectors, reused across integrals.
pub(crate) struct Prepared<'s> {
    pub spec: &'s MrphSpec,
    pub betas: Vec<Vec<f64>>,
    pub lus: Vec<Lu>,
}

impl<'s> Prepared<'s> {
    pub fn new(spec: &'s MrphSpec) -> Result<Self> {
        let betas = propagate_initials(spec)?.betas;
        let lus = spec.regimes.iter().map(|r| Lu::new(&r.a)).collect::<Result<Vec<_>>>()?;
        Ok(Prepared { spec, betas, lus })
    }

    /// Sum of one kind of regime integral over regimes `from..M`.
    pub fn total<'b>(&self, from: usize, kind: impl Fn(usize) -> RegimeIntegral<'b>) -> f64 {
        let m_count = self.spec.regime_count();
        (from..m_count)
            .map(|m| {
                let next = self.betas.get(m + 1).map(Vec::as_slice);
                integral_with(
                    &self.lus[m],
                    &self.betas[m],
                    next,
                    kind(m),
                    self.spec.gamma[m],
                    self.spec.upper(m),
                )
            })
            .sum()
    }

    pub fn moments(&self) -> (f64, f64) {
        (
            self.total(0, |_| RegimeIntegral::FirstMoment),
            self.total(0, |_| RegimeIntegral::SecondMoment),
        )
    }

    pub fn absorption_probs(&self) -> Vec<f64> {
        let cols: Vec<Vec<Vec<f64>>> = self
            .spec
            .regimes
            .iter()
            .map(|r| (0..r.b.cols()).map(|l| r.b.col(l)).collect())
            .collect();
        (0..self.spec.absorbing_states())
            .map(|l| {
                let m_count = self.spec.regime_count();
                (0..m_count)
                    .map(|m| {
                        let next = self.betas.get(m + 1).map(Vec::as_slice);
                        integral_with(
                            &self.lus[m],
                            &self.betas[m],
                            next,
                            RegimeIntegral::Absorption(&cols[m][l]),
                            self.spec.gamma[m],
                            self.spec.upper(m),
                        )
                    })
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect()
    }
}

/// `(E[T], E[T²])` summed over regimes.
pub fn mrph_moments(spec: &MrphSpec) -> Result<(f64, f64)> {
    Ok(Prepared::new(spec)?.moments())
}

/// Probability of absorption into each absorbing state.
pub fn mrph_absorption_probs(spec: &MrphSpec) -> Result<Vec<f64>> {
    Ok(Prepared::new(spec)?.absorption_probs())
}
