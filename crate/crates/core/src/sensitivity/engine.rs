//! Operator assembly and pseudoinverse solves behind the sensitivity API.
//!
//! Internal layout note: observation row blocks `R_k` (shape `m × n'`) are
//! stored transposed as `S_k = R_kᵀ` (shape `n' × m`) so that block products
//! `R_s R_tᵀ = S_sᵀ S_t` run as `gemm_tr` over contiguous columns and the
//! power recursion `W^{k+1}ᵀ Cᵀ = Wᵀ (W^kᵀ Cᵀ)` is a plain column-major gemm.

use nalgebra::{DMatrix, DVector};

use crate::config::EngineConfig;
use crate::error::{NetDpError, Result};

/// Drop the masked rows of an `n × m` matrix. `mask` must be sorted.
pub(crate) fn drop_rows(src: &DMatrix<f64>, mask: &[usize]) -> DMatrix<f64> {
    if mask.is_empty() {
        return src.clone();
    }
    let keep: Vec<usize> = (0..src.nrows())
        .filter(|r| mask.binary_search(r).is_err())
        .collect();
    src.select_rows(keep.iter())
}

/// Transposed observation row blocks `S_k = (C·A^k·B_masked)ᵀ`, `k = 0..T-1`,
/// for a time-invariant system. `observed` holds the selector rows of `C`;
/// `input_is_mixing` selects `B = W` versus `B = I`.
pub(crate) fn row_blocks_transposed(
    w: &DMatrix<f64>,
    observed: &[usize],
    input_is_mixing: bool,
    mask: &[usize],
    rounds: usize,
) -> Vec<DMatrix<f64>> {
    let n = w.nrows();
    let m = observed.len();
    let w_t = w.transpose();
    // N_k = (C·W^k)ᵀ, starting from Cᵀ.
    let mut state = DMatrix::<f64>::zeros(n, m);
    for (col, &row) in observed.iter().enumerate() {
        state[(row, col)] = 1.0;
    }
    if input_is_mixing {
        state = &w_t * state; // start at (C·W)ᵀ so S_k = masked (C·W^{k+1})ᵀ
    }
    let mut blocks = Vec::with_capacity(rounds);
    for k in 0..rounds {
        blocks.push(drop_rows(&state, mask));
        if k + 1 < rounds {
            state = &w_t * state;
        }
    }
    blocks
}

/// Sensitivity direction `x̃` of length `m·T`: block `t` is `C s_t` with
/// `s_t = A s_{t-1} + B e_j`, `s_0 = 0`.
pub(crate) fn direction(
    w: &DMatrix<f64>,
    observed: &[usize],
    input_is_mixing: bool,
    target: usize,
    rounds: usize,
) -> DVector<f64> {
    let n = w.nrows();
    let m = observed.len();
    let mut e_j = DVector::<f64>::zeros(n);
    e_j[target] = 1.0;
    let mut state = DVector::<f64>::zeros(n);
    let mut x = DVector::<f64>::zeros(m * rounds);
    for t in 0..rounds {
        if input_is_mixing {
            state = w * (&state + &e_j);
        } else {
            state = w * &state + &e_j;
        }
        for (a, &row) in observed.iter().enumerate() {
            x[t * m + a] = state[row];
        }
    }
    x
}

/// Gram matrix `G = H Hᵀ` of the block-lower-triangular operator with blocks
/// `R_{s-t}`, assembled by the diagonal recurrence
/// `G[s,t] = G[s-1,t-1] + R_{s-1} R_{t-1}ᵀ`.
pub(crate) fn gram_from_blocks(s_blocks: &[DMatrix<f64>], rounds: usize) -> DMatrix<f64> {
    let m = s_blocks[0].ncols();
    let dim = m * rounds;
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for d in 0..rounds {
        let mut acc = DMatrix::<f64>::zeros(m, m);
        for t in 1..=(rounds - d) {
            let s = t + d;
            acc.gemm_tr(1.0, &s_blocks[s - 1], &s_blocks[t - 1], 1.0);
            g.view_mut(((s - 1) * m, (t - 1) * m), (m, m)).copy_from(&acc);
            if d > 0 {
                g.view_mut(((t - 1) * m, (s - 1) * m), (m, m))
                    .copy_from(&acc.transpose());
            }
        }
    }
    g
}

/// Materialize the full `mT × n'T` operator from time-invariant blocks.
pub(crate) fn h_from_blocks(s_blocks: &[DMatrix<f64>], rounds: usize) -> DMatrix<f64> {
    let n_masked = s_blocks[0].nrows();
    let m = s_blocks[0].ncols();
    let mut h = DMatrix::<f64>::zeros(m * rounds, n_masked * rounds);
    for s in 1..=rounds {
        for t in 1..=s {
            let block = &s_blocks[s - t];
            for a in 0..m {
                for c in 0..n_masked {
                    h[((s - 1) * m + a, (t - 1) * n_masked + c)] = block[(c, a)];
                }
            }
        }
    }
    h
}

/// Result of one pseudoinverse solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Solve {
    pub delta_sq: f64,
    pub rank: usize,
    pub residual: f64,
}

/// Symmetric eigendecomposition of a Gram matrix. Backed by faer, which is
/// several times faster than nalgebra's QL iteration at the sweep sizes the
/// pairwise commands produce; the dense route deliberately stays on
/// nalgebra's SVD so the two routes cross-check independent backends.
pub(crate) struct GramEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub(crate) fn symmetric_eigen(g: &DMatrix<f64>) -> GramEigen {
    let dim = g.nrows();
    let fm = faer::Mat::<f64>::from_fn(dim, dim, |i, j| g[(i, j)]);
    let evd = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("self-adjoint eigendecomposition of a finite Gram matrix");
    let eigenvalues: Vec<f64> = (0..dim).map(|i| evd.S()[i]).collect();
    let u = evd.U();
    let eigenvectors = DMatrix::from_fn(dim, dim, |i, j| u[(i, j)]);
    GramEigen {
        eigenvalues,
        eigenvectors,
    }
}

/// Quadratic form `x̃ᵀ G⁺ x̃` against a precomputed eigendecomposition, with
/// the relative rank cut `λ > tau` and the range-membership residual
/// `‖G y − x̃‖ / ‖x̃‖`.
pub(crate) fn quadratic_from_eigen(
    g: &DMatrix<f64>,
    eig: &GramEigen,
    tau: f64,
    x: &DVector<f64>,
    cfg: &EngineConfig,
) -> Result<Solve> {
    let dim = g.nrows();
    let x_norm = x.norm();
    let coef = eig.eigenvectors.tr_mul(x);
    let mut rank = 0usize;
    let mut delta_sq = 0.0;
    let mut y_coef = DVector::<f64>::zeros(dim);
    for i in 0..dim {
        let lam = eig.eigenvalues[i];
        if lam > tau && lam > 0.0 {
            rank += 1;
            delta_sq += coef[i] * coef[i] / lam;
            y_coef[i] = coef[i] / lam;
        }
    }
    if x_norm == 0.0 {
        return Ok(Solve {
            delta_sq: 0.0,
            rank,
            residual: 0.0,
        });
    }
    let y = &eig.eigenvectors * y_coef;
    let residual = (g * y - x).norm() / x_norm;
    if residual > cfg.range_rtol {
        return Err(NetDpError::Range {
            residual,
            tolerance: cfg.range_rtol,
        });
    }
    Ok(Solve {
        delta_sq,
        rank,
        residual,
    })
}

/// `Δ² = x̃ᵀ G⁺ x̃` via symmetric eigendecomposition with a relative rank cut.
pub(crate) fn gram_quadratic(
    g: &DMatrix<f64>,
    x: &DVector<f64>,
    cfg: &EngineConfig,
) -> Result<Solve> {
    let eig = symmetric_eigen(g);
    let lam_max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let tau = cfg.rank_cutoff(g.nrows()) * lam_max;
    quadratic_from_eigen(g, &eig, tau, x, cfg)
}

/// `Δ = ‖V_r Σ_r⁻¹ U_rᵀ x̃‖₂` from a dense SVD of the materialized operator.
pub(crate) fn dense_svd_norm(
    h: &DMatrix<f64>,
    x: &DVector<f64>,
    cfg: &EngineConfig,
) -> Result<Solve> {
    let max_dim = h.nrows().max(h.ncols());
    let x_norm = x.norm();
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested with u");
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let tau = cfg.rank_cutoff(max_dim) * smax;
    let coef = u.tr_mul(x);
    let mut rank = 0usize;
    let mut delta_sq = 0.0;
    let mut kept = DVector::<f64>::zeros(coef.len());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > tau && s > 0.0 {
            rank += 1;
            let c = coef[i] / s;
            delta_sq += c * c;
            kept[i] = coef[i];
        }
    }
    if x_norm == 0.0 {
        return Ok(Solve {
            delta_sq: 0.0,
            rank,
            residual: 0.0,
        });
    }
    let recon = u * kept;
    let residual = (recon - x).norm() / x_norm;
    if residual > cfg.range_rtol {
        return Err(NetDpError::Range {
            residual,
            tolerance: cfg.range_rtol,
        });
    }
    Ok(Solve {
        delta_sq,
        rank,
        residual,
    })
}

/// Time-varying blocks `B(s,t) = (C · W_{s-1} ⋯ W_t · B_t)ᵀ` (masked), for
/// `1 ≤ t ≤ s ≤ T`, where `B_t = W_{t-1}` when the input enters through the
/// mixing step and `B_t = I` otherwise. `blocks[s-1][t-1]` has shape `n' × m`.
pub(crate) fn tv_blocks_transposed(
    ws: &[&DMatrix<f64>],
    observed: &[usize],
    input_is_mixing: bool,
    mask: &[usize],
) -> Vec<Vec<DMatrix<f64>>> {
    let rounds = ws.len();
    let n = ws[0].nrows();
    let m = observed.len();
    let mut selector_t = DMatrix::<f64>::zeros(n, m);
    for (col, &row) in observed.iter().enumerate() {
        selector_t[(row, col)] = 1.0;
    }
    let transposed: Vec<DMatrix<f64>> = ws.iter().map(|w| w.transpose()).collect();
    let mut blocks: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(rounds);
    for s in 1..=rounds {
        // cur = (C · W_{s-1} ⋯ W_t)ᵀ, shrinking t from s to 1.
        let mut cur = selector_t.clone();
        let mut row: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); s];
        for t in (1..=s).rev() {
            let with_input = &transposed[t - 1] * &cur;
            if input_is_mixing {
                row[t - 1] = drop_rows(&with_input, mask);
            } else {
                row[t - 1] = drop_rows(&cur, mask);
            }
            cur = with_input;
        }
        blocks.push(row);
    }
    blocks
}

/// Direction for a time-varying sequence, same recursion as [`direction`]
/// with the round-`t` matrix.
pub(crate) fn tv_direction(
    ws: &[&DMatrix<f64>],
    observed: &[usize],
    input_is_mixing: bool,
    target: usize,
) -> DVector<f64> {
    let rounds = ws.len();
    let n = ws[0].nrows();
    let m = observed.len();
    let mut e_j = DVector::<f64>::zeros(n);
    e_j[target] = 1.0;
    let mut state = DVector::<f64>::zeros(n);
    let mut x = DVector::<f64>::zeros(m * rounds);
    for t in 0..rounds {
        if input_is_mixing {
            state = ws[t] * (&state + &e_j);
        } else {
            state = ws[t] * &state + &e_j;
        }
        for (a, &row) in observed.iter().enumerate() {
            x[t * m + a] = state[row];
        }
    }
    x
}

/// Gram matrix from explicit time-varying blocks.
pub(crate) fn gram_from_tv_blocks(blocks: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let rounds = blocks.len();
    let m = blocks[0][0].ncols();
    let dim = m * rounds;
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for s in 1..=rounds {
        for t in 1..=s {
            let mut acc = DMatrix::<f64>::zeros(m, m);
            for k in 1..=t.min(s) {
                acc.gemm_tr(1.0, &blocks[s - 1][k - 1], &blocks[t - 1][k - 1], 1.0);
            }
            g.view_mut(((s - 1) * m, (t - 1) * m), (m, m)).copy_from(&acc);
            if s != t {
                g.view_mut(((t - 1) * m, (s - 1) * m), (m, m))
                    .copy_from(&acc.transpose());
            }
        }
    }
    g
}

/// Materialize the full operator from time-varying blocks.
pub(crate) fn h_from_tv_blocks(blocks: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let rounds = blocks.len();
    let m = blocks[0][0].ncols();
    let n_masked = blocks[0][0].nrows();
    let mut h = DMatrix::<f64>::zeros(m * rounds, n_masked * rounds);
    for s in 1..=rounds {
        for t in 1..=s {
            let block = &blocks[s - 1][t - 1];
            for a in 0..m {
                for c in 0..n_masked {
                    h[((s - 1) * m + a, (t - 1) * n_masked + c)] = block[(c, a)];
                }
            }
        }
    }
    h
}
