//! Policy evaluation and optimization: stationary analysis of the SP chain,
//! policy iteration on the Lagrangian cost `MAoII + λR`, bisection on `λ`,
//! single-threshold bisection and Poisson-rate matching.

use serde::{Deserialize, Serialize};

use crate::ctmc::{ChannelSpec, GeneratorMatrix};
use crate::cycle::{
    absorption_block, eat_cycle, esat_cycle, initial_row, others, ps_cycle, reduced_generator, CycleParams,
    EatCycleModel, ThresholdVector,
};
use crate::error::{Error, Result};
use crate::numerics::{dot, expm, DenseMatrix, Lu};

const STOCHASTIC_TOL: f64 = 1e-9;
/// A candidate replaces the incumbent only if it improves by more than this.
const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Esat,
    Eat,
    St,
    Ps,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Esat, Family::Eat, Family::St, Family::Ps];

    pub fn name(self) -> &'static str {
        match self {
            Family::Esat => "esat",
            Family::Eat => "eat",
            Family::St => "st",
            Family::Ps => "ps",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "esat" => Ok(Family::Esat),
            "eat" => Ok(Family::Eat),
            "st" => Ok(Family::St),
            "ps" => Ok(Family::Ps),
            other => Err(Error::invalid(format!("unknown policy family '{other}'"))),
        }
    }
}

/// A transmission policy. ESAT thresholds are an `N×N` matrix whose row `j`
/// holds `τ_ji`; the diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Esat(Vec<Vec<f64>>),
    Eat(Vec<f64>),
    St(f64),
    Ps(f64),
}

impl Policy {
    pub fn family(&self) -> Family {
        match self {
            Policy::Esat(_) => Family::Esat,
            Policy::Eat(_) => Family::Eat,
            Policy::St(_) => Family::St,
            Policy::Ps(_) => Family::Ps,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |what: String| Err(Error::invalid(what));
        match self {
            Policy::Esat(t) => {
                if t.len() != n || t.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("ESAT thresholds must be {n}x{n}")));
                }
                for (j, row) in t.iter().enumerate() {
                    ThresholdVector::new(j, row.clone())?;
                }
                Ok(())
            }
            Policy::Eat(t) => {
                if t.len() != n {
                    return Err(Error::Dimension(format!("EAT needs {n} thresholds, got {}", t.len())));
                }
                match t.iter().find(|x| !(**x >= 0.0)) {
                    Some(x) => bad(format!("EAT threshold {x} must be >= 0")),
                    None => Ok(()),
                }
            }
            Policy::St(t) if !(*t >= 0.0) => bad(format!("ST threshold {t} must be >= 0")),
            Policy::Ps(g) if !(g.is_finite() && *g >= 0.0) => bad(format!("PS intensity {g} must be finite and >= 0")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub pi: Vec<f64>,
    pub maoii: f64,
    pub rate: f64,
    pub cycles: Vec<CycleParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub lambda_star: f64,
    pub eta_trace: Vec<f64>,
    pub value_vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solver tolerances and grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Tolerance on `|R - b|` in the `λ` bisection and in rate matching.
    pub eps_lambda: f64,
    /// Tolerance on `|R - b|` in the ST threshold bisection.
    pub eps_tau: f64,
    /// Policy iteration stops once `η` moves by at most this.
    pub eps_eta: f64,
    /// ESAT threshold grid step.
    pub delta_tau: f64,
    /// Upper end of every threshold search.
    pub tau_max: f64,
    pub lambda_max: f64,
    /// `λ_max` is doubled on infeasibility up to this bound.
    pub lambda_limit: f64,
    /// Refuse ESAT grids with more points per improvement step than this.
    pub grid_cap: f64,
    /// Upper end of the Poisson-intensity search.
    pub gamma_max: f64,
    pub max_iterations: usize,
    pub max_bisections: usize,
    /// Step of the audit grid used by the EAT improvement.
    pub audit_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_lambda: 1e-3,
            eps_tau: 1e-3,
            eps_eta: 1e-6,
            delta_tau: 0.05,
            tau_max: 10.0,
            lambda_max: 100.0,
            lambda_limit: 1e4,
            grid_cap: 1e7,
            gamma_max: 1e4,
            max_iterations: 100,
            max_bisections: 100,
            audit_step: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("solver.{name} must be finite and positive, got {v}")))
            }
        };
        pos("eps_lambda", self.eps_lambda)?;
        pos("eps_tau", self.eps_tau)?;
        pos("eps_eta", self.eps_eta)?;
        pos("delta_tau", self.delta_tau)?;
        pos("tau_max", self.tau_max)?;
        pos("lambda_max", self.lambda_max)?;
        pos("grid_cap", self.grid_cap)?;
        pos("gamma_max", self.gamma_max)?;
        pos("audit_step", self.audit_step)?;
        if !(self.lambda_limit >= self.lambda_max) {
            return Err(Error::invalid("solver.lambda_limit must be >= solver.lambda_max"));
        }
        if self.max_iterations == 0 || self.max_bisections == 0 {
            return Err(Error::invalid("solver iteration limits must be positive"));
        }
        if self.delta_tau > self.tau_max || self.audit_step > self.tau_max {
            return Err(Error::invalid("solver grid steps must not exceed tau_max"));
        }
        Ok(())
    }

    fn grid_points(&self) -> usize {
        (self.tau_max / self.delta_tau + 1e-9).floor() as usize + 1
    }
}

/// Stationary vector of `P` with `π 1 = 1`, by Grassmann–Taksar–Heyman
/// elimination. Only off-diagonal entries are read, so tiny leaving
/// probabilities keep their relative accuracy (no `1 - p_jj` cancellation).
pub fn steady_state(p: &DenseMatrix) -> Result<Vec<f64>> {
    if !p.is_square() {
        return Err(Error::Dimension(format!("P is {}x{}", p.rows(), p.cols())));
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("transition matrix"));
    }
    let n = p.rows();
    for (i, row) in p.to_rows().iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&x| x < -STOCHASTIC_TOL) || (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("row {i} of P is not a probability vector (sum {s})")));
        }
    }
    let mut a = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p[(i, j)].max(0.0) });
    for k in (1..n).rev() {
        let s: f64 = a.row(k)[..k].iter().sum();
        if !(s > 0.0) {
            return Err(Error::Singular { condition: f64::INFINITY });
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let f = a[(i, k)];
            if f != 0.0 {
                for j in (0..k).filter(|&j| j != i) {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[(i, k)]).sum();
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|x| x / total).collect())
}

fn transition_matrix(cycles: &[CycleParams]) -> DenseMatrix {
    let n = cycles.len();
    DenseMatrix::from_fn(n, n, |i, j| cycles[i].p[j])
}

/// Stationary `MAoII = Σπ_j a_j / Σπ_j d_j` and `R = Σπ_j c_j / Σπ_j d_j`.
pub fn evaluate_cycles(cycles: Vec<CycleParams>) -> Result<EvalResult> {
    let pi = steady_state(&transition_matrix(&cycles))?;
    let den: f64 = pi.iter().zip(&cycles).map(|(p, c)| p * c.d).sum();
    let maoii = pi.iter().zip(&cycles).map(|(p, c)| p * c.a).sum::<f64>() / den;
    let rate = pi.iter().zip(&cycles).map(|(p, c)| p * c.c).sum::<f64>() / den;
    Ok(EvalResult { pi, maoii, rate, cycles })
}

pub fn policy_cycles(g: &GeneratorMatrix, ch: &ChannelSpec, pol: &Policy) -> Result<Vec<CycleParams>> {
    pol.validate(g.n())?;
    (0..g.n())
        .map(|j| match pol {
            Policy::Esat(t) => esat_cycle(g, ch, j, &ThresholdVector::new(j, t[j].clone())?),
            Policy::Eat(t) => eat_cycle(g, ch, j, t[j]),
            Policy::St(t) => eat_cycle(g, ch, j, *t),
            Policy::Ps(gamma) => ps_cycle(g, ch, *gamma, j),
        })
        .collect()
}

pub fn evaluate_policy(g: &GeneratorMatrix, ch: &ChannelSpec, pol: &Policy) -> Result<EvalResult> {
    evaluate_cycles(policy_cycles(g, ch, pol)?)
}

/// Solves `V_j - Σ_i p_ji V_i + η d_j = a_j + λ c_j` with `V_{N-1} = 0`.
pub fn value_determination(cycles: &[CycleParams], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = cycles.len();
    if n == 0 || cycles.iter().any(|c| c.p.len() != n) {
        return Err(Error::Dimension("cycle transition rows must all have length N".into()));
    }
    let mut m = DenseMatrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for (j, cj) in cycles.iter().enumerate() {
        for i in 0..n - 1 {
            m[(j, i)] = if i == j { 1.0 } else { 0.0 } - cj.p[i];
        }
        m[(j, n - 1)] = cj.d;
        rhs[j] = cj.a + lambda * cj.c;
    }
    let x = Lu::new(&m)?.solve_vec(&rhs);
    let eta = x[n - 1];
    let mut v = x;
    v[n - 1] = 0.0;
    let scale = rhs.iter().fold(1.0_f64, |s, r| s.max(r.abs()));
    let residual = cycles
        .iter()
        .enumerate()
        .map(|(j, c)| (v[j] - dot(&c.p, &v) + eta * c.d - rhs[j]).abs())
        .fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        log::warn!("value determination residual {residual:e}");
    }
    Ok((eta, v))
}

/// Improvement objective of one EAT cycle in ratio form,
/// `f(τ) = [a + λc + Σ_i p_ji (V_i - V_j)] / d`, and its derivative.
struct EatObjective<'m> {
    model: &'m EatCycleModel,
    lambda: f64,
    /// `A₂⁻¹ (V_i - V_j)_{i≠j}` and `A₁ A₂⁻¹ (V_i - V_j)`.
    z: Vec<f64>,
    a1z: Vec<f64>,
}

impl<'m> EatObjective<'m> {
    fn new(model: &'m EatCycleModel, lambda: f64, v: &[f64]) -> Self {
        let j = model.j();
        let shifted: Vec<f64> = others(v.len(), j).into_iter().map(|i| v[i] - v[j]).collect();
        let z = model.a2_inv.mul_vec(&shifted);
        let a1z = model.a1.mul_vec(&z);
        EatObjective { model, lambda, z, a1z }
    }

    fn value_at(&self, r: &[f64], tau: f64) -> f64 {
        let m = self.model;
        let rm1 = dot(r, &m.m1);
        let d = rm1 + m.base_d;
        let a = tau * rm1 - dot(r, &m.m2) + m.base_a;
        let c = dot(r, &m.f1);
        (a + self.lambda * c - m.mu * dot(r, &self.z)) / d
    }

    fn with_slope(&self, tau: f64) -> Result<(f64, f64)> {
        let m = self.model;
        let r = m.occupancy(tau)?;
        let rm1 = dot(&r, &m.m1);
        let ra1m1 = dot(&r, &m.a1_m1);
        let d = rm1 + m.base_d;
        let num = tau * rm1 - dot(&r, &m.m2) + m.base_a + self.lambda * dot(&r, &m.f1) - m.mu * dot(&r, &self.z);
        let dd = ra1m1;
        let dnum = rm1 + tau * ra1m1 - dot(&r, &m.a1_m2) + self.lambda * dot(&r, &m.a1_f1)
            - m.mu * dot(&r, &self.a1z);
        Ok((num / d, (dnum * d - num * dd) / (d * d)))
    }

    fn value(&self, tau: f64) -> Result<f64> {
        Ok(self.value_at(&self.model.occupancy(tau)?, tau))
    }
}

/// Result of one EAT improvement step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EatStep {
    pub tau: f64,
    pub objective: f64,
    /// Set when the local refinement did not converge and the audit-grid
    /// minimizer was returned instead.
    pub fallback: bool,
}

fn improve_eat_model(
    model: &EatCycleModel,
    lambda: f64,
    v: &[f64],
    prev: f64,
    cfg: &SolverConfig,
) -> Result<EatStep> {
    let obj = EatObjective::new(model, lambda, v);
    let tau_max = cfg.tau_max;
    let h = cfg.audit_step;
    let steps = (tau_max / h + 1e-9).floor() as usize;

    // Audit grid via the recurrence r_{k+1} = r_k e^{A₁h}.
    let step = expm(&model.a1.scale(h))?;
    let mut r = model.beta.clone();
    let (mut best_k, mut best_f) = (0, f64::INFINITY);
    for k in 0..=steps {
        let f = obj.value_at(&r, k as f64 * h);
        if f < best_f {
            best_f = f;
            best_k = k;
        }
        r = step.left_mul(&r);
    }
    let grid_tau = |k: usize| (k as f64 * h).min(tau_max);

    let mut cands = vec![grid_tau(best_k), 0.0, tau_max];
    let mut fallback = false;

    // Derivative-sign bisection around the best grid point.
    let lo = grid_tau(best_k.saturating_sub(1));
    let hi = grid_tau((best_k + 1).min(steps));
    let (_, s_lo) = obj.with_slope(lo)?;
    let (_, s_hi) = obj.with_slope(hi)?;
    if s_lo < 0.0 && s_hi > 0.0 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if obj.with_slope(mid)?.1 < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        cands.push(0.5 * (a + b));
    } else if best_k > 0 && best_k < steps {
        fallback = true;
    }

    // Projected descent from the remaining seeds.
    for seed in [prev.clamp(0.0, tau_max), 0.5 * tau_max] {
        cands.push(descend(&obj, seed, tau_max)?);
    }

    let mut best = (f64::INFINITY, 0.0);
    for &t in &cands {
        let f = obj.value(t)?;
        if f < best.0 {
            best = (f, t);
        }
    }
    let prev = prev.clamp(0.0, tau_max);
    let f_prev = obj.value(prev)?;
    if f_prev <= best.0 + IMPROVEMENT_TOL {
        best = (f_prev, prev);
    }
    Ok(EatStep { tau: best.1, objective: best.0, fallback })
}

fn descend(obj: &EatObjective<'_>, start: f64, tau_max: f64) -> Result<f64> {
    let mut t = start;
    let (mut f, mut s) = obj.with_slope(t)?;
    let mut step = 1.0;
    for _ in 0..200 {
        if s.abs() < 1e-12 {
            break;
        }
        let mut moved = false;
        while step > 1e-12 {
            let cand = (t - step * s.signum() * s.abs().min(1.0) * 1.0).clamp(0.0, tau_max);
            if cand == t {
                break;
            }
            let (fc, sc) = obj.with_slope(cand)?;
            if fc < f {
                t = cand;
                f = fc;
                s = sc;
                moved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(t)
}

/// Minimizes the EAT improvement objective of cycle `j` over `[0, τ_max]`.
pub fn improve_eat(
    g: &GeneratorMatrix,
    ch: &ChannelSpec,
    j: usize,
    lambda: f64,
    v: &[f64],
    prev: f64,
    cfg: &SolverConfig,
) -> Result<EatStep> {
    if v.len() != g.n() {
        return Err(Error::Dimension(format!("{} values for {} states", v.len(), g.n())));
    }
    improve_eat_model(&EatCycleModel::new(g, ch, j)?, lambda, v, prev, cfg)
}

/// Precomputed tables for evaluating ESAT cycles whose thresholds lie on the
/// grid `{0, δ, …, (G-1)δ}`. For every transmit set (a bitmask over the
/// transient states) it keeps `A⁻¹1`, `A⁻²1`, `A⁻¹B`, `A⁻¹O` (with `O` the
/// off-diagonal transient rates) and `e^{A s δ}` for `s = 0..G`.
pub struct EsatGrid {
    j: usize,
    n: usize,
    k: usize,
    step: f64,
    points: usize,
    beta: Vec<f64>,
    inv_sigma_j: f64,
    masks: Vec<MaskTables>,
}

struct MaskTables {
    exps: Vec<DenseMatrix>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    ainv_b: DenseMatrix,
    ainv_o: DenseMatrix,
}

/// Reusable buffers for one grid evaluation.
struct Scratch {
    levels: Vec<usize>,
    masks: Vec<usize>,
    betas: Vec<Vec<f64>>,
    occ: Vec<Vec<f64>>,
}

impl EsatGrid {
    pub fn new(g: &GeneratorMatrix, ch: &ChannelSpec, j: usize, step: f64, points: usize, cap: f64) -> Result<Self> {
        let k = g.n() - 1;
        let size = (points as f64).powi(k as i32);
        if size > cap || (1u64 << k.min(63)) as f64 * points as f64 > cap {
            return Err(Error::GridTooLarge { points: size, cap });
        }
        let base = reduced_generator(g, j);
        let mut o = base.clone();
        for x in 0..k {
            o[(x, x)] = 0.0;
        }
        let masks = (0..1usize << k)
            .map(|mask| {
                let on: Vec<bool> = (0..k).map(|x| mask >> x & 1 == 1).collect();
                let mut a = base.clone();
                for x in 0..k {
                    if on[x] {
                        a[(x, x)] -= ch.mu;
                    }
                }
                let lu = Lu::new(&a)?;
                let w1 = lu.solve_vec(&vec![1.0; k]);
                let w2 = lu.solve_vec(&w1);
                let unit = expm(&a.scale(step))?;
                let mut exps = Vec::with_capacity(points);
                exps.push(DenseMatrix::identity(k));
                for s in 1..points {
                    // Exact exponentials keep the error independent of s.
                    exps.push(if s == 1 { unit.clone() } else { expm(&a.scale(s as f64 * step))? });
                }
                Ok(MaskTables {
                    exps,
                    w1,
                    w2,
                    ainv_b: lu.solve_mat(&absorption_block(g, ch.mu, j, &on)),
                    ainv_o: lu.solve_mat(&o),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EsatGrid {
            j,
            n: g.n(),
            k,
            step,
            points,
            beta: initial_row(g, j),
            inv_sigma_j: 1.0 / g.sigma(j),
            masks,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            levels: Vec::with_capacity(self.k + 1),
            masks: Vec::with_capacity(self.k + 1),
            betas: vec![vec![0.0; self.k]; self.k + 2],
            occ: vec![vec![0.0; self.k]; self.k + 1],
        }
    }

    /// Fills regimes, initial vectors and occupation rows; returns `(d, a)`.
    fn regimes(&self, idx: &[usize], s: &mut Scratch) -> (f64, f64) {
        s.levels.clear();
        s.levels.push(0);
        s.levels.extend_from_slice(idx);
        s.levels.sort_unstable();
        s.levels.dedup();
        s.masks.clear();
        for &l in &s.levels {
            s.masks.push(idx.iter().enumerate().filter(|(_, &x)| x <= l).fold(0, |m, (b, _)| m | 1 << b));
        }
        let m_count = s.levels.len();
        s.betas[0].copy_from_slice(&self.beta);
        for m in 0..m_count {
            let (head, tail) = s.betas.split_at_mut(m + 1);
            let out = &mut tail[0];
            if m + 1 < m_count {
                let e = &self.masks[s.masks[m]].exps[s.levels[m + 1] - s.levels[m]];
                left_mul_into(e, &head[m], out);
            } else {
                out.iter_mut().for_each(|x| *x = 0.0);
            }
            for x in 0..self.k {
                s.occ[m][x] = out[x] - head[m][x];
            }
        }
        let (mut m1, mut m2) = (0.0, 0.0);
        for m in 0..m_count {
            let t = &self.masks[s.masks[m]];
            let at = |v: &[f64], l: usize| {
                let tt = l as f64 * self.step;
                let sv: f64 = v.iter().sum();
                let v1 = dot(v, &t.w1);
                (tt * sv - v1, tt * tt * sv - 2.0 * tt * v1 + 2.0 * dot(v, &t.w2))
            };
            let (x1, x2) = at(&s.betas[m], s.levels[m]);
            m1 += x1;
            m2 += x2;
            if m + 1 < m_count {
                let (y1, y2) = at(&s.betas[m + 1], s.levels[m + 1]);
                m1 -= y1;
                m2 -= y2;
            }
        }
        (m1 + self.inv_sigma_j, 0.5 * m2)
    }

    fn attempts(&self, idx: &[usize], s: &Scratch) -> f64 {
        let mut c = 0.0;
        for (x, &l) in idx.iter().enumerate() {
            let m_x = s.levels.iter().position(|&v| v == l).expect("threshold is a level");
            c += s.betas[m_x][x];
            for m in m_x..s.levels.len() {
                let t = &self.masks[s.masks[m]];
                c += (0..self.k).map(|y| s.occ[m][y] * t.ainv_o[(y, x)]).sum::<f64>();
            }
        }
        c.max(0.0)
    }

    /// Cycle parameters for grid indices `idx` (one per state `i ≠ j`).
    pub fn eval(&self, idx: &[usize]) -> CycleParams {
        assert_eq!(idx.len(), self.k);
        let mut s = self.scratch();
        let (d, a) = self.regimes(idx, &mut s);
        let c = self.attempts(idx, &s);
        let mut p = vec![0.0; self.n];
        for m in 0..s.levels.len() {
            let t = &self.masks[s.masks[m]];
            for (l, pl) in p.iter_mut().enumerate() {
                *pl += (0..self.k).map(|y| s.occ[m][y] * t.ainv_b[(y, l)]).sum::<f64>();
            }
        }
        CycleParams { d, a: a.max(0.0), c, p: p.into_iter().map(|x| x.max(0.0)).collect() }
    }

    /// Exhaustive grid minimization of the ratio-form improvement objective;
    /// ties go to the lexicographically smallest index vector, and `prev` is
    /// kept unless beaten by more than the improvement tolerance.
    pub fn improve(&self, lambda: f64, v: &[f64], prev: &[usize]) -> (Vec<usize>, f64) {
        let shifted: Vec<f64> = (0..self.n).map(|i| v[i] - v[self.j]).collect();
        let penalty: Vec<Vec<f64>> = self.masks.iter().map(|t| t.ainv_b.mul_vec(&shifted)).collect();
        let mut s = self.scratch();
        let objective = |idx: &[usize], s: &mut Scratch| {
            let (d, a) = self.regimes(idx, s);
            let c = self.attempts(idx, s);
            let pv: f64 = (0..s.levels.len()).map(|m| dot(&s.occ[m], &penalty[s.masks[m]])).sum();
            (a + lambda * c + pv) / d
        };
        let mut idx = vec![0usize; self.k];
        let mut best = (f64::INFINITY, idx.clone());
        loop {
            let f = objective(&idx, &mut s);
            if f < best.0 {
                best = (f, idx.clone());
            }
            // Odometer with the last coordinate fastest: lexicographic order.
            let mut x = self.k;
            loop {
                if x == 0 {
                    let f_prev = objective(prev, &mut s);
                    if f_prev <= best.0 + IMPROVEMENT_TOL {
                        return (prev.to_vec(), f_prev);
                    }
                    return (best.1, best.0);
                }
                x -= 1;
                idx[x] += 1;
                if idx[x] < self.points {
                    break;
                }
                idx[x] = 0;
            }
        }
    }
}

fn left_mul_into(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    let k = m.cols();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (xi, row) in x.iter().zip(m.as_slice().chunks_exact(k)) {
        if *xi != 0.0 {
            for (o, r) in out.iter_mut().zip(row) {
                *o += xi * r;
            }
        }
    }
}

/// Exhaustive ESAT improvement of cycle `j` on the `δ_τ` grid over `[0, τ_max]`.
pub fn improve_esat(
    g: &GeneratorMatrix,
    ch: &ChannelSpec,
    j: usize,
    lambda: f64,
    v: &[f64],
    prev: &ThresholdVector,
    cfg: &SolverConfig,
) -> Result<ThresholdVector> {
    if v.len() != g.n() {
        return Err(Error::Dimension(format!("{} values for {} states", v.len(), g.n())));
    }
    let grid = EsatGrid::new(g, ch, j, cfg.delta_tau, cfg.grid_points(), cfg.grid_cap)?;
    let prev_idx = snap(&others(g.n(), j).iter().map(|&i| prev.tau(i)).collect::<Vec<_>>(), cfg);
    let (idx, _) = grid.improve(lambda, v, &prev_idx);
    ThresholdVector::new(j, expand(j, g.n(), &idx, cfg.delta_tau))
}

fn snap(taus: &[f64], cfg: &SolverConfig) -> Vec<usize> {
    let last = cfg.grid_points() - 1;
    taus.iter()
        .map(|&t| if t.is_finite() { ((t / cfg.delta_tau).round() as usize).min(last) } else { last })
        .collect()
}

fn expand(j: usize, n: usize, idx: &[usize], step: f64) -> Vec<f64> {
    let mut row = vec![0.0; n];
    for (&i, &x) in others(n, j).iter().zip(idx) {
        row[i] = x as f64 * step;
    }
    row
}

/// Policy iteration state reused across multipliers: per-state EAT models and
/// ESAT grids are built once.
pub struct Solver<'a> {
    g: &'a GeneratorMatrix,
    ch: &'a ChannelSpec,
    cfg: SolverConfig,
    eat: Vec<EatCycleModel>,
    esat: Option<Vec<EsatGrid>>,
}

/// Output of one policy-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct PiOutcome {
    pub policy: Policy,
    pub report: SolveReport,
    pub eval: EvalResult,
}

enum Thresholds {
    Eat(Vec<f64>),
    Esat(Vec<Vec<usize>>),
}

impl<'a> Solver<'a> {
    pub fn new(g: &'a GeneratorMatrix, ch: &'a ChannelSpec, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let eat = (0..g.n()).map(|j| EatCycleModel::new(g, ch, j)).collect::<Result<Vec<_>>>()?;
        Ok(Solver { g, ch, cfg, eat, esat: None })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn esat_grids(&mut self) -> Result<&[EsatGrid]> {
        if self.esat.is_none() {
            let points = self.cfg.grid_points();
            let grids = (0..self.g.n())
                .map(|j| EsatGrid::new(self.g, self.ch, j, self.cfg.delta_tau, points, self.cfg.grid_cap))
                .collect::<Result<Vec<_>>>()?;
            self.esat = Some(grids);
        }
        Ok(self.esat.as_deref().expect("grids built"))
    }

    fn to_policy(&self, t: &Thresholds) -> Policy {
        match t {
            Thresholds::Eat(v) => Policy::Eat(v.clone()),
            Thresholds::Esat(idx) => Policy::Esat(
                idx.iter().enumerate().map(|(j, r)| expand(j, self.g.n(), r, self.cfg.delta_tau)).collect(),
            ),
        }
    }

    fn initial(&self, family: Family, warm: Option<&Policy>) -> Result<Thresholds> {
        let n = self.g.n();
        if let Some(p) = warm {
            p.validate(n)?;
        }
        match family {
            Family::Eat => Ok(Thresholds::Eat(match warm {
                Some(Policy::Eat(t)) => t.iter().map(|x| x.min(self.cfg.tau_max)).collect(),
                Some(Policy::St(t)) => vec![t.min(self.cfg.tau_max); n],
                _ => vec![0.0; n],
            })),
            Family::Esat => Ok(Thresholds::Esat(
                (0..n)
                    .map(|j| {
                        let row: Vec<f64> = match warm {
                            Some(Policy::Esat(t)) => others(n, j).iter().map(|&i| t[j][i]).collect(),
                            Some(Policy::Eat(t)) => vec![t[j]; n - 1],
                            Some(Policy::St(t)) => vec![*t; n - 1],
                            _ => vec![0.0; n - 1],
                        };
                        snap(&row, &self.cfg)
                    })
                    .collect(),
            )),
            other => Err(Error::invalid(format!("policy iteration supports esat and eat, not {}", other.name()))),
        }
    }

    fn cycles(&mut self, t: &Thresholds) -> Result<Vec<CycleParams>> {
        match t {
            Thresholds::Eat(v) => v.iter().zip(&self.eat).map(|(&tau, m)| m.eval(tau)).collect(),
            Thresholds::Esat(idx) => {
                let grids = self.esat_grids()?;
                Ok(idx.iter().zip(grids).map(|(x, gr)| gr.eval(x)).collect())
            }
        }
    }

    /// Policy iteration for the unconstrained cost `MAoII + λR`, optionally
    /// warm-started from `warm`.
    pub fn policy_iteration(&mut self, lambda: f64, family: Family, warm: Option<&Policy>) -> Result<PiOutcome> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut cur = self.initial(family, warm)?;
        if let Thresholds::Esat(_) = cur {
            self.esat_grids()?;
        }
        let mut eta_trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut values;
        loop {
            iterations += 1;
            let cycles = self.cycles(&cur)?;
            let (eta, v) = value_determination(&cycles, lambda)?;
            values = v;
            if let Some(&last) = eta_trace.last() {
                if eta > last + 1e-9 * (1.0 + f64::abs(last)) {
                    log::warn!("policy iteration cost rose from {last} to {eta}");
                }
            }
            let settled = eta_trace.last().is_some_and(|&last: &f64| (eta - last).abs() <= self.cfg.eps_eta);
            eta_trace.push(eta);
            if settled {
                converged = true;
                break;
            }
            if iterations >= self.cfg.max_iterations {
                break;
            }
            let next = match &cur {
                Thresholds::Eat(t) => Thresholds::Eat(
                    (0..self.g.n())
                        .map(|j| Ok(improve_eat_model(&self.eat[j], lambda, &values, t[j], &self.cfg)?.tau))
                        .collect::<Result<Vec<_>>>()?,
                ),
                Thresholds::Esat(idx) => {
                    let grids = self.esat.as_deref().expect("grids built");
                    Thresholds::Esat(grids.iter().zip(idx).map(|(gr, x)| gr.improve(lambda, &values, x).0).collect())
                }
            };
            let unchanged = match (&cur, &next) {
                (Thresholds::Eat(a), Thresholds::Eat(b)) => a == b,
                (Thresholds::Esat(a), Thresholds::Esat(b)) => a == b,
                _ => false,
            };
            cur = next;
            if unchanged {
                converged = true;
                break;
            }
        }
        let policy = self.to_policy(&cur);
        let eval = evaluate_cycles(self.cycles(&cur)?)?;
        Ok(PiOutcome {
            policy,
            report: SolveReport { lambda_star: lambda, eta_trace, value_vector: values, iterations, converged },
            eval,
        })
    }

    /// Bisection on `λ` so that the policy-iteration policy meets `R ≤ b`.
    pub fn lagrangian_bisection(&mut self, budget: f64, family: Family) -> Result<LagrangeSolution> {
        check_budget(budget)?;
        let at_zero = self.policy_iteration(0.0, family, None)?;
        if at_zero.eval.rate <= budget {
            return Ok(LagrangeSolution { outcome: at_zero, bisections: 0, bracket: (0.0, 0.0), binding: false });
        }
        let mut hi_lambda = self.cfg.lambda_max;
        let mut hi = self.policy_iteration(hi_lambda, family, Some(&at_zero.policy))?;
        while hi.eval.rate > budget {
            if hi_lambda >= self.cfg.lambda_limit {
                return Err(Error::Infeasible(format!(
                    "budget {budget} is not reachable: R = {} at lambda = {hi_lambda}; \
                     raise solver.lambda_limit or solver.tau_max",
                    hi.eval.rate
                )));
            }
            hi_lambda = (2.0 * hi_lambda).min(self.cfg.lambda_limit);
            log::info!("raising lambda_max to {hi_lambda}");
            hi = self.policy_iteration(hi_lambda, family, Some(&hi.policy))?;
        }
        let mut lo_lambda = 0.0;
        let mut lo = at_zero;
        let mut bisections = 0;
        if (hi.eval.rate - budget).abs() <= self.cfg.eps_lambda {
            return Ok(LagrangeSolution { outcome: hi, bisections, bracket: (lo_lambda, hi_lambda), binding: true });
        }
        while bisections < self.cfg.max_bisections {
            bisections += 1;
            let mid = 0.5 * (lo_lambda + hi_lambda);
            let warm = if (mid - lo_lambda) < (hi_lambda - mid) { &lo.policy } else { &hi.policy };
            let out = self.policy_iteration(mid, family, Some(&warm.clone()))?;
            if (out.eval.rate - budget).abs() <= self.cfg.eps_lambda {
                return Ok(LagrangeSolution { outcome: out, bisections, bracket: (lo_lambda, hi_lambda), binding: true });
            }
            if out.eval.rate > budget {
                lo_lambda = mid;
                lo = out;
            } else {
                hi_lambda = mid;
                hi = out;
            }
            if hi_lambda - lo_lambda <= 1e-12 * hi_lambda.max(1.0) {
                break;
            }
        }
        // R(λ) jumps across the final bracket (a finite threshold grid makes
        // it a step function); return the feasible side.
        log::info!(
            "lambda bracket collapsed at [{lo_lambda}, {hi_lambda}] with R in [{}, {}]",
            hi.eval.rate,
            lo.eval.rate
        );
        Ok(LagrangeSolution { outcome: hi, bisections, bracket: (lo_lambda, hi_lambda), binding: true })
    }
}

/// Result of the `λ` bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSolution {
    pub outcome: PiOutcome,
    pub bisections: usize,
    /// Final multiplier bracket; `(0, 0)` when the budget does not bind.
    pub bracket: (f64, f64),
    pub binding: bool,
}

fn check_budget(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("budget must be finite and positive, got {b}")))
    }
}

pub fn policy_iteration(
    g: &GeneratorMatrix,
    ch: &ChannelSpec,
    lambda: f64,
    family: Family,
    cfg: &SolverConfig,
) -> Result<(Policy, SolveReport)> {
    let out = Solver::new(g, ch, cfg.clone())?.policy_iteration(lambda, family, None)?;
    Ok((out.policy, out.report))
}

pub fn lagrangian_bisection(
    g: &GeneratorMatrix,
    ch: &ChannelSpec,
    budget: f64,
    family: Family,
    cfg: &SolverConfig,
) -> Result<(f64, Policy)> {
    let sol = Solver::new(g, ch, cfg.clone())?.lagrangian_bisection(budget, family)?;
    Ok((sol.outcome.report.lambda_star, sol.outcome.policy))
}

/// Smallest single threshold whose rate meets the budget.
pub fn st_bisection(g: &GeneratorMatrix, ch: &ChannelSpec, budget: f64, cfg: &SolverConfig) -> Result<f64> {
    check_budget(budget)?;
    cfg.validate()?;
    let models = (0..g.n()).map(|j| EatCycleModel::new(g, ch, j)).collect::<Result<Vec<_>>>()?;
    let rate = |tau: f64| -> Result<f64> {
        let cycles = models.iter().map(|m| m.eval(tau)).collect::<Result<Vec<_>>>()?;
        Ok(evaluate_cycles(cycles)?.rate)
    };
    if rate(0.0)? <= budget {
        return Ok(0.0);
    }
    let r_max = rate(cfg.tau_max)?;
    if r_max > budget {
        return Err(Error::Infeasible(format!(
            "budget {budget} needs a threshold above tau_max = {} (R there is {r_max})",
            cfg.tau_max
        )));
    }
    if (r_max - budget).abs() <= cfg.eps_tau {
        return Ok(cfg.tau_max);
    }
    let (mut lo, mut hi) = (0.0, cfg.tau_max);
    for _ in 0..cfg.max_bisections {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid)?;
        if (r - budget).abs() <= cfg.eps_tau {
            return Ok(mid);
        }
        if r > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Outcome of matching the Poisson sampling intensity to a budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsMatch {
    pub gamma: f64,
    /// Set when even `γ_max` stays below the budget.
    pub saturated: bool,
}

pub fn ps_rate_match(g: &GeneratorMatrix, ch: &ChannelSpec, budget: f64, cfg: &SolverConfig) -> Result<PsMatch> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::invalid(format!("budget must be finite and >= 0, got {budget}")));
    }
    cfg.validate()?;
    if budget == 0.0 {
        return Ok(PsMatch { gamma: 0.0, saturated: false });
    }
    let rate = |gamma: f64| evaluate_policy(g, ch, &Policy::Ps(gamma)).map(|e| e.rate);
    let r_max = rate(cfg.gamma_max)?;
    if r_max <= budget {
        return Ok(PsMatch { gamma: cfg.gamma_max, saturated: true });
    }
    let (mut lo, mut hi) = (0.0, cfg.gamma_max);
    let mut r_lo = 0.0;
    for _ in 0..cfg.max_bisections.max(200) {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid)?;
        if r < r_lo - 1e-12 {
            return Err(Error::invalid(format!("PS rate is not increasing near gamma = {mid}")));
        }
        if (r - budget).abs() <= cfg.eps_lambda {
            return Ok(PsMatch { gamma: mid, saturated: false });
        }
        if r < budget {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
        }
    }
    Err(Error::invalid("PS rate matching did not bracket the budget"))
}

/// A solved family at a budget: the policy, its evaluation and solver details.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub family: Family,
    pub policy: Policy,
    pub eval: EvalResult,
    /// Lagrangian details for esat/eat.
    pub lagrange: Option<LagrangeSolution>,
    pub saturated: bool,
}

pub fn optimize(
    g: &GeneratorMatrix,
    ch: &ChannelSpec,
    budget: f64,
    family: Family,
    cfg: &SolverConfig,
) -> Result<Optimized> {
    match family {
        Family::Esat | Family::Eat => {
            let sol = Solver::new(g, ch, cfg.clone())?.lagrangian_bisection(budget, family)?;
            let policy = sol.outcome.policy.clone();
            let eval = evaluate_policy(g, ch, &policy)?;
            Ok(Optimized { family, policy, eval, lagrange: Some(sol), saturated: false })
        }
        Family::St => {
            let tau = st_bisection(g, ch, budget, cfg)?;
            let policy = Policy::St(tau);
            Ok(Optimized { family, eval: evaluate_policy(g, ch, &policy)?, policy, lagrange: None, saturated: false })
        }
        Family::Ps => {
            let m = ps_rate_match(g, ch, budget, cfg)?;
            let policy = Policy::Ps(m.gamma);
            Ok(Optimized { family, eval: evaluate_policy(g, ch, &policy)?, policy, lagrange: None, saturated: m.saturated })
        }
    }
}
