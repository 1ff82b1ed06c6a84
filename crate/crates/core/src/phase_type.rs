//! Ordinary phase-type distributions: time to absorption of an absorbing
//! CTMC with a fixed generator `[[A, B], [0, 0]]` and initial row vector `β`.

use crate::error::{Error, Result};
use crate::numerics::{expm, sum, DenseMatrix, Lu};

const GENERATOR_TOL: f64 = 1e-12;

/// Absorbing chain `(A, B, β)` with `K` transient and `L` absorbing states.
#[derive(Debug, Clone, PartialEq)]
pub struct AmcSpec {
    a: DenseMatrix,
    b: DenseMatrix,
    beta: Vec<f64>,
}

impl AmcSpec {
    pub fn new(a: DenseMatrix, b: DenseMatrix, beta: Vec<f64>) -> Result<Self> {
        check_sub_generators(&a, &b)?;
        let k = a.rows();
        if beta.len() != k {
            return Err(Error::Dimension(format!("beta has {} entries, expected {k}", beta.len())));
        }
        check_probability_row(&beta, "beta")?;
        Lu::new(&a)?;
        Ok(AmcSpec { a, b, beta })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn transient_states(&self) -> usize {
        self.a.rows()
    }

    pub fn absorbing_states(&self) -> usize {
        self.b.cols()
    }
}

/// Shared validation for a transient/absorption sub-generator pair: finite,
/// non-negative rates off the diagonal of `A` and everywhere in `B`, negative
/// diagonal, and rows of `[A | B]` summing to zero.
pub(crate) fn check_sub_generators(a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A is {}x{}", a.rows(), a.cols())));
    }
    if b.rows() != a.rows() {
        return Err(Error::Dimension(format!("B has {} rows, A has {}", b.rows(), a.rows())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("sub-generator"));
    }
    for i in 0..a.rows() {
        if a[(i, i)] >= 0.0 {
            return Err(Error::invalid(format!("A[{i},{i}] = {} must be negative", a[(i, i)])));
        }
        for j in 0..a.cols() {
            if i != j && a[(i, j)] < 0.0 {
                return Err(Error::NegativeRate { row: i, col: j, value: a[(i, j)] });
            }
        }
        if let Some(j) = (0..b.cols()).find(|&j| b[(i, j)] < 0.0) {
            return Err(Error::invalid(format!("B[{i},{j}] = {} is negative", b[(i, j)])));
        }
        let total = sum(a.row(i)) + sum(b.row(i));
        if total.abs() > GENERATOR_TOL * (-a[(i, i)]).max(1.0) {
            return Err(Error::RowSum { row: i, sum: total });
        }
    }
    Ok(())
}

pub(crate) fn check_probability_row(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative entry")));
    }
    if (sum(p) - 1.0).abs() > GENERATOR_TOL {
        return Err(Error::invalid(format!("{what} sums to {}, expected 1", sum(p))));
    }
    Ok(())
}

/// Density and distribution function of the absorption time at `t`:
/// `f(t) = -β e^{tA} A 1`, `F(t) = 1 - β e^{tA} 1`.
pub fn ph_pdf_cdf(spec: &AmcSpec, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be finite and non-negative, got {t}")));
    }
    let g = expm(&spec.a.scale(t))?.left_mul(&spec.beta);
    let survival = sum(&g);
    let density = -sum(&spec.a.left_mul(&g));
    Ok((density.max(0.0), (1.0 - survival).clamp(0.0, 1.0)))
}

/// `E[T] = -β A⁻¹ 1` and `E[T²] = 2 β A⁻² 1`.
pub fn ph_moments(spec: &AmcSpec) -> Result<(f64, f64)> {
    let lu = Lu::new(&spec.a)?;
    let ones = vec![1.0; spec.transient_states()];
    let w1 = lu.solve_vec(&ones);
    let w2 = lu.solve_vec(&w1);
    let beta = &spec.beta;
    let mean = -crate::numerics::dot(beta, &w1);
    let second = 2.0 * crate::numerics::dot(beta, &w2);
    Ok((mean, second))
}

/// `p_l = -β A⁻¹ B e_l`.
pub fn absorption_probs(spec: &AmcSpec) -> Result<Vec<f64>> {
    let lu = Lu::new(&spec.a)?;
    let occupancy = lu.solve_row(&spec.beta);
    Ok(spec.b.left_mul(&occupancy).into_iter().map(|p| -p).collect())
}

/// Transient part of the embedded jump chain as written for the
/// fundamental-matrix construction: `d_ij = -a_ij / a_jj` for `i ≠ j`, with
/// the column diagonal in the denominator.
pub fn embedded_dtmc(a: &DenseMatrix) -> Result<DenseMatrix> {
    embedded(a, |_, j| j)
}

/// Transient part of the standard embedded jump chain,
/// `d_ij = -a_ij / a_ii`: the probability that a jump out of `i` lands in `j`.
/// This is the variant whose fundamental matrix counts state visits.
pub fn embedded_jump_chain(a: &DenseMatrix) -> Result<DenseMatrix> {
    embedded(a, |i, _| i)
}

fn embedded(a: &DenseMatrix, pivot: impl Fn(usize, usize) -> usize) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A is {}x{}", a.rows(), a.cols())));
    }
    if let Some(i) = (0..a.rows()).find(|&i| a[(i, i)] == 0.0) {
        return Err(Error::invalid(format!("zero diagonal entry A[{i},{i}]")));
    }
    let k = a.rows();
    Ok(DenseMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            let p = pivot(i, j);
            -a[(i, j)] / a[(p, p)]
        }
    }))
}

/// `F = (I - D)⁻¹`; entry `(i, j)` is the expected number of visits to `j`
/// starting from `i`, the initial visit included.
pub fn fundamental_matrix(d: &DenseMatrix) -> Result<DenseMatrix> {
    if !d.is_square() {
        return Err(Error::Dimension(format!("D is {}x{}", d.rows(), d.cols())));
    }
    let k = d.rows();
    Ok(Lu::new(&DenseMatrix::identity(k).sub(d))?.inverse())
}
