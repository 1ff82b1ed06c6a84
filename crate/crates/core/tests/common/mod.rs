//! Independent oracles shared by the integration tests. Nothing here calls
//! the closed forms under test; each oracle computes its answer from first
//! principles (numerical integration, ODE solving, Monte Carlo, iteration).
#![allow(dead_code)]

use aoii_core::ctmc::GeneratorMatrix;
use aoii_core::mrph::{MrphSpec, Regime};
use aoii_core::numerics::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng64 = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Rng64 {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

// ---------------------------------------------------------------- quadrature

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let x = h * XGK[k];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) on `[a, b]` with bisection of the worst
/// interval until the summed error estimate meets `tol` (relative).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let f = &f as &dyn Fn(f64) -> f64;
    let mut parts = vec![(a, b, gk15(f, a, b))];
    for _ in 0..20_000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= tol * total.abs().max(1e-300) {
            break;
        }
        let worst = (0..parts.len()).max_by(|&x, &y| parts[x].2 .1.total_cmp(&parts[y].2 .1)).unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(f, lo, mid)));
        parts.push((mid, hi, gk15(f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// Integral over `[a, ∞)` split at the supplied breakpoints, with the tail
/// cut once the remaining mass bound drops below `1e-16`.
pub fn integrate_to_inf(f: impl Fn(f64) -> f64, breaks: &[f64], decay: f64, tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.to_vec();
    let last = *pts.last().unwrap();
    // The integrands are bounded by polynomial * e^{-decay t}.
    let end = last + 60.0 / decay;
    pts.push(end);
    pts.windows(2).map(|w| integrate(&f, w[0], w[1], tol)).sum()
}

// ------------------------------------------------------------------- ODEs

/// Dormand–Prince 5(4) for the row system `x' = x A` on `[0, t]`.
pub fn ode_row(x0: &[f64], a: &DenseMatrix, t: f64, tol: f64) -> Vec<f64> {
    let f = |x: &[f64]| a.left_mul(x);
    dopri(x0, &f, t, tol)
}

/// Dormand–Prince 5(4) for `x' = A x`.
pub fn ode_col(x0: &[f64], a: &DenseMatrix, t: f64, tol: f64) -> Vec<f64> {
    let f = |x: &[f64]| a.mul_vec(x);
    dopri(x0, &f, t, tol)
}

fn dopri(x0: &[f64], f: &dyn Fn(&[f64]) -> Vec<f64>, t_end: f64, tol: f64) -> Vec<f64> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let _ = C;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut h = (t_end / 100.0).max(1e-6);
    while t < t_end {
        h = h.min(t_end - t);
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let xs: Vec<f64> = (0..n).map(|i| x[i] + h * (0..s).map(|r| A[s][r] * k[r][i]).sum::<f64>()).collect();
            k.push(f(&xs));
        }
        let x5: Vec<f64> = (0..n).map(|i| x[i] + h * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
        let x4: Vec<f64> = (0..n).map(|i| x[i] + h * (0..7).map(|s| B4[s] * k[s][i]).sum::<f64>()).collect();
        let err = (0..n)
            .map(|i| (x5[i] - x4[i]).abs() / (tol * (1.0 + x[i].abs().max(x5[i].abs()))))
            .fold(0.0, f64::max);
        if err <= 1.0 {
            t += h;
            x = x5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    x
}

// ------------------------------------------------------- random instances

/// Random sub-generator pair: off-diagonal transient rates in `[0, 1)`,
/// absorption rates in `[0.05, 1)` for at least the first sink.
pub fn random_pair(r: &mut Rng64, k: usize, l: usize) -> (DenseMatrix, DenseMatrix) {
    let mut a = DenseMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { r.gen::<f64>() });
    let b = DenseMatrix::from_fn(k, l, |_, c| if c == 0 { 0.05 + r.gen::<f64>() } else { r.gen::<f64>() });
    for i in 0..k {
        let out: f64 = a.row(i).iter().sum::<f64>() + b.row(i).iter().sum::<f64>();
        a[(i, i)] = -out;
    }
    (a, b)
}

pub fn random_prob(r: &mut Rng64, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| 0.1 + r.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_mrph(r: &mut Rng64, k: usize, l: usize, m: usize) -> MrphSpec {
    let mut gamma = vec![0.0];
    for _ in 1..m {
        let last = *gamma.last().unwrap();
        gamma.push(last + 0.1 + 1.5 * r.gen::<f64>());
    }
    let regimes = (0..m)
        .map(|_| {
            let (a, b) = random_pair(r, k, l);
            Regime { a, b }
        })
        .collect();
    MrphSpec::new(gamma, regimes, random_prob(r, k)).unwrap()
}

pub fn random_generator(r: &mut Rng64, n: usize) -> GeneratorMatrix {
    let mut q = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.05 + r.gen::<f64>() });
    for i in 0..n {
        let s: f64 = q.row(i).iter().sum();
        q[(i, i)] = -s;
    }
    GeneratorMatrix::try_from(q).unwrap()
}

// ------------------------------------------------------------ Monte Carlo

pub fn exp_draw(r: &mut Rng64, rate: f64) -> f64 {
    -(1.0 - r.gen::<f64>()).ln() / rate
}

fn choose(r: &mut Rng64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap()
}

/// One absorption path of an MRPH chain by thinning against the largest exit
/// rate over all regimes. Returns `(time, sink)`.
pub fn mrph_path(r: &mut Rng64, spec: &MrphSpec) -> (f64, usize) {
    let k = spec.transient_states();
    let bound: f64 = spec
        .regimes()
        .iter()
        .flat_map(|rg| (0..k).map(move |i| -rg.a[(i, i)]))
        .fold(0.0, f64::max);
    let mut state = choose(r, spec.beta1());
    let mut t = 0.0;
    loop {
        t += exp_draw(r, bound);
        let m = spec.gamma().iter().rposition(|&g| g <= t).unwrap();
        let rg = &spec.regimes()[m];
        let exit = -rg.a[(state, state)];
        if r.gen::<f64>() * bound >= exit {
            continue;
        }
        let mut w: Vec<f64> = (0..k).map(|j| if j == state { 0.0 } else { rg.a[(state, j)] }).collect();
        w.extend_from_slice(rg.b.row(state));
        let target = choose(r, &w);
        if target >= k {
            return (t, target - k);
        }
        state = target;
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Outcome of one simulated cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleSample {
    pub duration: f64,
    pub area: f64,
    pub attempts: f64,
    pub end: usize,
}

/// How the oracle cycle simulator transmits.
pub enum Transmit<'a> {
    /// `τ[i]`: transmit from source state `i` once the AoII reaches it.
    Thresholds(&'a [f64]),
    Poisson(f64),
}

/// Simulates one cycle-`j` directly from the source dynamics. Written
/// independently of the library simulator: it tracks absolute time and a
/// pending transmission start rather than AoII increments.
pub fn cycle_sample(r: &mut Rng64, q: &DenseMatrix, mu: f64, j: usize, rule: &Transmit<'_>) -> CycleSample {
    let n = q.rows();
    let rates = |i: usize| -> Vec<f64> { (0..n).map(|c| if c == i { 0.0 } else { q[(i, c)] }).collect() };
    let hold = exp_draw(r, -q[(j, j)]);
    let mut x = choose(r, &rates(j));
    let mut now = 0.0; // time since desync
    let mut attempts = 0.0;
    let mut busy = false;
    loop {
        let leave = now + exp_draw(r, -q[(x, x)]);
        match rule {
            Transmit::Thresholds(tau) => {
                let start = tau[x].max(now);
                if !busy && start.is_finite() && start < leave {
                    attempts += 1.0;
                    busy = true;
                    now = start;
                    // memoryless source: restart its clock from the transmission start
                    continue;
                }
                if busy {
                    let done = now + exp_draw(r, mu);
                    if done < leave {
                        let t = done;
                        return CycleSample { duration: hold + t, area: 0.5 * t * t, attempts, end: x };
                    }
                }
            }
            Transmit::Poisson(g) => {
                let mut t = now;
                let mut delivered = None;
                loop {
                    let next_sample = if *g > 0.0 { t + exp_draw(r, *g) } else { f64::INFINITY };
                    let done = if busy { t + exp_draw(r, mu) } else { f64::INFINITY };
                    let first = next_sample.min(done).min(leave);
                    if first == leave {
                        break;
                    }
                    t = first;
                    if first == done {
                        delivered = Some(t);
                        break;
                    }
                    attempts += 1.0;
                    busy = true;
                }
                if let Some(t) = delivered {
                    return CycleSample { duration: hold + t, area: 0.5 * t * t, attempts, end: x };
                }
            }
        }
        now = leave;
        busy = false;
        x = choose(r, &rates(x));
        if x == j {
            return CycleSample { duration: hold + now, area: 0.5 * now * now, attempts, end: j };
        }
    }
}

// ------------------------------------------------------------- iterations

/// Stationary vector by power iteration on the lazy chain `(I + P)/2`.
pub fn power_iteration(p: &DenseMatrix) -> Vec<f64> {
    let n = p.rows();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let px = p.left_mul(&x);
        let next: Vec<f64> = x.iter().zip(&px).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if diff < 1e-16 {
            break;
        }
    }
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}

/// `Σ_{k ≤ terms} D^k`.
pub fn neumann(d: &DenseMatrix, terms: usize) -> DenseMatrix {
    let n = d.rows();
    let mut acc = DenseMatrix::identity(n);
    let mut pow = DenseMatrix::identity(n);
    for _ in 0..terms {
        pow = pow.matmul(d);
        acc = acc.add(&pow);
    }
    acc
}
