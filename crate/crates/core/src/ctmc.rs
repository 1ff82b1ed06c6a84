//! The information source: a finite irreducible CTMC, and the service channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

const ROW_SUM_TOL: f64 = 1e-12;

/// Validated generator `Q` of an irreducible CTMC with `N ≥ 2` states.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    q: DenseMatrix,
}

impl TryFrom<DenseMatrix> for GeneratorMatrix {
    type Error = Error;

    fn try_from(q: DenseMatrix) -> Result<Self> {
        validate(q)
    }
}

impl From<GeneratorMatrix> for DenseMatrix {
    fn from(g: GeneratorMatrix) -> Self {
        g.q
    }
}

/// Checks the generator invariants: square, finite, `N ≥ 2`, non-negative
/// off-diagonal rates, zero row sums, positive holding rates, irreducible.
pub fn validate(q: DenseMatrix) -> Result<GeneratorMatrix> {
    if !q.is_square() {
        return Err(Error::Dimension(format!("generator is {}x{}", q.rows(), q.cols())));
    }
    if !q.is_finite() {
        return Err(Error::NonFinite("generator"));
    }
    let n = q.rows();
    if n < 2 {
        return Err(Error::TooFewStates(n));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                return Err(Error::NegativeRate { row: i, col: j, value: q[(i, j)] });
            }
        }
        let scale = q.row(i).iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let sum: f64 = q.row(i).iter().sum();
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(Error::RowSum { row: i, sum });
        }
    }
    // A zero holding rate is an absorbing state, which the reachability
    // check reports as reducibility.
    for from in 0..n {
        let mut seen = vec![false; n];
        seen[from] = true;
        let mut stack = vec![from];
        while let Some(s) = stack.pop() {
            for t in 0..n {
                if t != s && !seen[t] && q[(s, t)] > 0.0 {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        if let Some(to) = seen.iter().position(|&v| !v) {
            return Err(Error::Reducible { from, to });
        }
    }
    Ok(GeneratorMatrix { q })
}

impl GeneratorMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        validate(DenseMatrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.q
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    /// Holding rate `σ_i = -q_ii`.
    #[inline]
    pub fn sigma(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    /// Embedded jump probabilities `ρ_ij = q_ij / σ_i`, zero diagonal.
    pub fn jump_probs(&self) -> DenseMatrix {
        let n = self.n();
        DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { self.q[(i, j)] / self.sigma(i) })
    }
}

pub fn jump_probs(g: &GeneratorMatrix) -> DenseMatrix {
    g.jump_probs()
}

/// Symmetric source: every holding rate is `σ`, every jump rate `σ/(N-1)`.
pub fn make_symmetric(n: usize, sigma: f64) -> Result<GeneratorMatrix> {
    if n < 2 {
        return Err(Error::TooFewStates(n));
    }
    positive("sigma", sigma)?;
    let off = sigma / (n - 1) as f64;
    validate(DenseMatrix::from_fn(n, n, |i, j| if i == j { -sigma } else { off }))
}

/// Binary source `[[-σ₁, σ₁], [σ₂, -σ₂]]`.
pub fn make_binary(sigma1: f64, sigma2: f64) -> Result<GeneratorMatrix> {
    positive("sigma1", sigma1)?;
    positive("sigma2", sigma2)?;
    GeneratorMatrix::from_rows(&[vec![-sigma1, sigma1], vec![sigma2, -sigma2]])
}

/// Source with linearly spread holding rates `σ_i = σ_min + i (σ_max - σ_min)/N`,
/// `i = 1..N`, whose off-diagonal rates in row `i` are spread linearly over
/// `[p_min σ_i/(N-1), p_max σ_i/(N-1)]` in increasing column order. The
/// diagonal is set to minus the realized off-diagonal sum.
pub fn make_spread(
    n: usize,
    sigma_min: f64,
    sigma_max: f64,
    p_min: f64,
    p_max: f64,
) -> Result<GeneratorMatrix> {
    if n < 2 {
        return Err(Error::TooFewStates(n));
    }
    positive("sigma_min", sigma_min)?;
    if !(sigma_max.is_finite() && sigma_max >= sigma_min) {
        return Err(Error::invalid(format!("sigma_max = {sigma_max} must be finite and >= sigma_min")));
    }
    if !(p_min >= 0.0 && p_max >= p_min && p_min.is_finite() && p_max.is_finite()) {
        return Err(Error::invalid(format!("need 0 <= p_min <= p_max, got {p_min}, {p_max}")));
    }
    if ((p_min + p_max) - 2.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("p_min + p_max must equal 2, got {}", p_min + p_max)));
    }
    let nf = n as f64;
    let mut q = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let sigma = sigma_min + (i + 1) as f64 * (sigma_max - sigma_min) / nf;
        let lo = p_min * sigma / (nf - 1.0);
        let hi = p_max * sigma / (nf - 1.0);
        let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
        let steps = cols.len() - 1;
        let mut total = 0.0;
        for (k, &c) in cols.iter().enumerate() {
            let v = if steps == 0 { 0.5 * (lo + hi) } else { lo + k as f64 * (hi - lo) / steps as f64 };
            q[(i, c)] = v;
            total += v;
        }
        q[(i, i)] = -total;
    }
    validate(q)
}

/// Exponential service channel with rate `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub mu: f64,
}

impl ChannelSpec {
    pub fn new(mu: f64) -> Result<Self> {
        positive("mu", mu)?;
        Ok(ChannelSpec { mu })
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and positive, got {v}")))
    }
}

/// The ternary source used throughout the numerical examples.
pub fn ternary_example() -> GeneratorMatrix {
    GeneratorMatrix::from_rows(&[
        vec![-1.025, 1.0, 0.025],
        vec![0.05, -0.75, 0.7],
        vec![0.4, 0.01, -0.41],
    ])
    .expect("ternary example generator is valid")
}
