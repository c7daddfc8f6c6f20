//! Exact `(ε, δ)` accounting for (composed) Gaussian mechanisms.
//!
//! An adaptive composition of `T` Gaussian mechanisms with sensitivity `Δ` and
//! noise scale `σ` satisfies `(ε, δ)`-DP for
//!
//! ```text
//! δ(ε) = Φ(−εσ/(√T·Δ) + √T·Δ/(2σ)) − e^ε · Φ(−εσ/(√T·Δ) − √T·Δ/(2σ))
//! ```
//!
//! The `e^ε · Φ(·)` product is evaluated in log space so the deep-tail regime
//! (δ ≈ 1e−5 and beyond) stays stable. The inverse map ε(δ) is a bisection.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{NetDpError, Result};

/// A complete `(ε, δ, σ, T)` bundle for an accounting query or answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub rounds: usize,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, sigma: f64, rounds: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(NetDpError::Parameter(format!("delta {delta} outside [0, 1]")));
        }
        if sigma <= 0.0 {
            return Err(NetDpError::Parameter(format!("sigma {sigma} must be > 0")));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(NetDpError::Parameter(format!(
                "epsilon {epsilon} must be finite and >= 0"
            )));
        }
        if rounds == 0 {
            return Err(NetDpError::Parameter("rounds must be >= 1".into()));
        }
        Ok(PrivacyParams {
            epsilon,
            delta,
            sigma,
            rounds,
        })
    }
}

// Rational approximations for erf/erfc (Cody, "Rational Chebyshev
// approximation for the error function", 1969; netlib SPECFUN calerf).
// Relative accuracy ~1e-16, which the deep-tail accounting needs; the
// widely-used statistics crates are only ~1e-10 here. Coefficients kept at
// their published precision.
#[allow(clippy::excessive_precision)]
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
#[allow(clippy::excessive_precision)]
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
#[allow(clippy::excessive_precision)]
const ERFC_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
#[allow(clippy::excessive_precision)]
const ERFC_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
#[allow(clippy::excessive_precision)]
const ERFC_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
#[allow(clippy::excessive_precision)]
const ERFC_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
#[allow(clippy::excessive_precision)]
const INV_SQRT_PI: f64 = 5.641895835477562869e-1;

/// `erf(x)` for `|x| ≤ 0.46875`.
fn erf_small(x: f64) -> f64 {
    let ysq = x * x;
    let mut xnum = ERF_A[4] * ysq;
    let mut xden = ysq;
    for i in 0..3 {
        xnum = (xnum + ERF_A[i]) * ysq;
        xden = (xden + ERF_B[i]) * ysq;
    }
    x * (xnum + ERF_A[3]) / (xden + ERF_B[3])
}

/// `erfc(y)` for `y > 0.46875`; underflows to 0 beyond y ≈ 26.5.
fn erfc_positive(y: f64) -> f64 {
    let result = if y <= 4.0 {
        let mut xnum = ERFC_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + ERFC_C[i]) * y;
            xden = (xden + ERFC_D[i]) * y;
        }
        (xnum + ERFC_C[7]) / (xden + ERFC_D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut xnum = ERFC_P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + ERFC_P[i]) * ysq;
            xden = (xden + ERFC_Q[i]) * ysq;
        }
        let r = ysq * (xnum + ERFC_P[4]) / (xden + ERFC_Q[4]);
        (INV_SQRT_PI - r) / y
    };
    // split exp(-y²) so the argument error stays at one rounding
    let ytrunc = (y * 16.0).trunc() / 16.0;
    let del = (y - ytrunc) * (y + ytrunc);
    (-ytrunc * ytrunc).exp() * (-del).exp() * result
}

/// Standard normal CDF, absolute and relative accuracy near machine
/// precision down to the underflow limit.
pub fn norm_cdf(x: f64) -> f64 {
    let z = x * std::f64::consts::FRAC_1_SQRT_2;
    let az = z.abs();
    if az <= 0.46875 {
        0.5 + 0.5 * erf_small(z)
    } else {
        let tail = 0.5 * erfc_positive(az);
        if z < 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }
}

/// `ln Φ(x)`, stable arbitrarily deep into the lower tail.
///
/// The complementary error function covers everything down to its underflow
/// around `x ≈ −37`; beyond that the asymptotic expansion of the Mills ratio
/// takes over: `Φ(x) = φ(x)/(−x) · (1 − 1/x² + 3/x⁴ − 15/x⁶ + …)`.
pub fn norm_logcdf(x: f64) -> f64 {
    if x >= -8.0 {
        return norm_cdf(x).ln();
    }
    if x > -37.0 {
        return (0.5 * erfc_positive(-x * std::f64::consts::FRAC_1_SQRT_2)).ln();
    }
    let inv_sq = 1.0 / (x * x);
    let mut series = 1.0f64;
    let mut term = 1.0f64;
    let mut k = 0.0f64;
    loop {
        let next = -term * (2.0 * k + 1.0) * inv_sq;
        if next.abs() >= term.abs() || next.abs() < 1e-18 * series.abs() {
            break;
        }
        series += next;
        term = next;
        k += 1.0;
    }
    -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// Tight `δ(ε)` of the adaptive composition of `rounds` Gaussian mechanisms
/// with sensitivity `delta_sens` and noise scale `sigma`.
///
/// `delta_sens = 0` gives `δ = 0` (identical distributions). Negative `ε` is
/// permitted for diagnostics.
pub fn gauss_delta(delta_sens: f64, sigma: f64, rounds: usize, epsilon: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(NetDpError::Parameter(format!("sigma {sigma} must be > 0")));
    }
    if delta_sens < 0.0 {
        return Err(NetDpError::Parameter(format!(
            "sensitivity {delta_sens} must be >= 0"
        )));
    }
    if rounds == 0 {
        return Err(NetDpError::Parameter("rounds must be >= 1".into()));
    }
    if delta_sens == 0.0 {
        return Ok(0.0);
    }
    let mu = (rounds as f64).sqrt() * delta_sens / sigma;
    let first = norm_cdf(-epsilon / mu + 0.5 * mu);
    let second = (epsilon + norm_logcdf(-epsilon / mu - 0.5 * mu)).exp();
    Ok((first - second).clamp(0.0, 1.0))
}

/// Smallest `ε ≥ 0` with `gauss_delta(ε) ≤ target_delta`, by bisection over an
/// expanding bracket. Returns 0 when already satisfied at `ε = 0`.
pub fn epsilon_for_delta(
    delta_sens: f64,
    sigma: f64,
    rounds: usize,
    target_delta: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&target_delta) || target_delta == 0.0 {
        return Err(NetDpError::Parameter(format!(
            "target delta {target_delta} must be in (0, 1)"
        )));
    }
    if gauss_delta(delta_sens, sigma, rounds, 0.0)? <= target_delta {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while gauss_delta(delta_sens, sigma, rounds, hi)? > target_delta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(NetDpError::Parameter(
                "epsilon bracket exceeded 1e9; parameters out of sensible range".into(),
            ));
        }
    }
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if gauss_delta(delta_sens, sigma, rounds, mid)? > target_delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// LDP baseline: `T`-fold composition at unit sensitivity, i.e. every node's
/// noised contribution observed directly each round.
pub fn ldp_epsilon(sigma: f64, rounds: usize, target_delta: f64) -> Result<f64> {
    epsilon_for_delta(1.0, sigma, rounds, target_delta)
}

/// Pairwise `ε` table at fixed `δ` with summary statistics.
#[derive(Debug, Clone)]
pub struct GuaranteeTable {
    /// `eps[(i, j)] = ε` for observing target `j` from node `i`; diagonal NaN.
    pub eps: DMatrix<f64>,
    /// Mean over ordered pairs `i ≠ j`.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Mean over unordered pairs of the worse (larger) direction; equals
    /// `mean` whenever the sensitivity matrix is symmetric.
    pub mean_unordered_worst: f64,
}

/// Convert a pairwise sensitivity matrix (diagonal ignored, entries already
/// covering the full trajectory, so `rounds = 1`) into `ε` values at
/// `target_delta`.
pub fn guarantee_table(
    sensitivities: &DMatrix<f64>,
    sigma: f64,
    target_delta: f64,
) -> Result<GuaranteeTable> {
    let n = sensitivities.nrows();
    if sensitivities.ncols() != n {
        return Err(NetDpError::Dimension(
            "pairwise sensitivity matrix must be square".into(),
        ));
    }
    let entries: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let eps_values: Vec<f64> = entries
        .par_iter()
        .map(|&(i, j)| {
            let d = sensitivities[(i, j)];
            epsilon_for_delta(d, sigma, 1, target_delta)
                .map_err(|e| e.for_pair(i, j))
        })
        .collect::<Result<_>>()?;
    let mut eps = DMatrix::from_element(n, n, f64::NAN);
    for (&(i, j), &v) in entries.iter().zip(&eps_values) {
        eps[(i, j)] = v;
    }
    let count = eps_values.len().max(1);
    let mean = eps_values.iter().sum::<f64>() / count as f64;
    let min = eps_values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eps_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut worst_sum = 0.0;
    let mut worst_count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            worst_sum += eps[(i, j)].max(eps[(j, i)]);
            worst_count += 1;
        }
    }
    let mean_unordered_worst = if worst_count > 0 {
        worst_sum / worst_count as f64
    } else {
        f64::NAN
    };
    Ok(GuaranteeTable {
        eps,
        mean,
        min,
        max,
        mean_unordered_worst,
    })
}

/// Mean `ε` over the finite entries of a per-target sensitivity column layout;
/// convenience used by sweep commands.
pub fn guarantee(
    delta_sens: f64,
    sigma: f64,
    rounds: usize,
    target_delta: f64,
) -> Result<PrivacyParams> {
    let epsilon = epsilon_for_delta(delta_sens, sigma, rounds, target_delta)?;
    PrivacyParams::new(epsilon, target_delta, sigma, rounds)
}
