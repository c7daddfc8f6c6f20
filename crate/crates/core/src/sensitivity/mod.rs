//! Adversary-view sensitivities for gossip averaging, `Δ^T_{j→i} = ‖H_T⁺ x̃_T‖₂`.
//!
//! The protocol over `T` rounds is a discrete-time linear system
//! `θ_{t+1} = A θ_t + B u_t`, `y_t = C θ_t`; stacking the observations gives a
//! block-lower-triangular operator `H_T` applied to the per-round noise, and
//! the worst-case effect of the target node's data is the direction `x̃_T`.
//! The threat model fixes `(A, B, C)`:
//!
//! * non-adaptive, secure summation, observer `i`: `(W, W, e_iᵀ)`
//! * non-adaptive, secure summation, colluding set `𝒞`: `(W, W, S(𝒞))`
//! * no secure summation (adaptive or not): `(W, I, e_jᵀ)`
//! * adaptive, secure summation: `(W, W, S(N̄_j))`
//!
//! The default route forms the Gram matrix `G = H Hᵀ` of size `mT × mT`
//! (never materializing `H`) and evaluates `Δ² = x̃ᵀ G⁺ x̃` by symmetric
//! eigendecomposition; a dense-SVD route serves as the cross-check oracle.
//! When a node's knowledge of its own injected noise is accounted for, the
//! corresponding noise columns are removed from `H`.

mod engine;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::error::{NetDpError, Result};
use crate::graph::NodeSet;
use crate::mixing::GossipMatrix;

pub(crate) use engine::Solve;

/// Which adversary observes the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryView {
    /// A single honest-but-curious node `i` sees only securely-summed
    /// neighborhood aggregates.
    NonAdaptiveSecureSum { observer: usize },
    /// A colluding set of nodes pools its view; secure summation in place.
    NonAdaptiveColluding { observers: NodeSet },
    /// Plain messages: every node sees its neighbors' noised values. The view
    /// of any node is post-processing of the target's own trace.
    NoSecureSum,
    /// Adaptive composition with secure summation; the dominating view is the
    /// target's closed neighborhood.
    AdaptiveSecureSum,
}

/// Threat model: adversary view, target node `j`, and whether observers'
/// knowledge of their own injected noise is corrected for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreatModel {
    pub view: AdversaryView,
    pub target: usize,
    pub knowledge_correction: bool,
}

impl ThreatModel {
    pub fn non_adaptive_secure_sum(observer: usize, target: usize, correction: bool) -> Self {
        ThreatModel {
            view: AdversaryView::NonAdaptiveSecureSum { observer },
            target,
            knowledge_correction: correction,
        }
    }

    pub fn colluding(observers: NodeSet, target: usize, correction: bool) -> Self {
        ThreatModel {
            view: AdversaryView::NonAdaptiveColluding { observers },
            target,
            knowledge_correction: correction,
        }
    }

    pub fn no_secure_sum(target: usize, correction: bool) -> Self {
        ThreatModel {
            view: AdversaryView::NoSecureSum,
            target,
            knowledge_correction: correction,
        }
    }

    pub fn adaptive_secure_sum(target: usize, correction: bool) -> Self {
        ThreatModel {
            view: AdversaryView::AdaptiveSecureSum,
            target,
            knowledge_correction: correction,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.target >= n {
            return Err(NetDpError::Model(format!(
                "target {} out of range for n={n}",
                self.target
            )));
        }
        match &self.view {
            AdversaryView::NonAdaptiveSecureSum { observer } => {
                if *observer >= n {
                    return Err(NetDpError::Model(format!(
                        "observer {observer} out of range for n={n}"
                    )));
                }
                if *observer == self.target {
                    return Err(NetDpError::Model(
                        "observer must differ from target".into(),
                    ));
                }
            }
            AdversaryView::NonAdaptiveColluding { observers } => {
                if observers.is_empty() {
                    return Err(NetDpError::Model("colluding set is empty".into()));
                }
                if observers.as_slice().last().copied().unwrap_or(0) >= n {
                    return Err(NetDpError::Model(format!(
                        "colluding set references node out of range for n={n}"
                    )));
                }
                if observers.contains(self.target) {
                    return Err(NetDpError::Model(
                        "target must not be in the colluding set".into(),
                    ));
                }
            }
            AdversaryView::NoSecureSum | AdversaryView::AdaptiveSecureSum => {}
        }
        Ok(())
    }
}

/// Concrete `(A, B, C)` triple with the noise mask and round count resolved.
#[derive(Debug, Clone)]
pub struct SystemSpec<'a> {
    w: &'a DMatrix<f64>,
    /// Selector rows of the observation matrix `C`.
    observed: Vec<usize>,
    /// `B = W` when true, `B = I` otherwise.
    input_is_mixing: bool,
    /// Sorted noise coordinates removed from `B` (knowledge correction).
    noise_mask: Vec<usize>,
    rounds: usize,
    target: usize,
}

impl<'a> SystemSpec<'a> {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Observation dimension `m` per round.
    pub fn observed_dim(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn input_is_mixing(&self) -> bool {
        self.input_is_mixing
    }

    pub fn noise_mask(&self) -> &[usize] {
        &self.noise_mask
    }

    /// Noise coordinates surviving the mask, `n' = n − |mask|`.
    pub fn masked_dim(&self) -> usize {
        self.dim() - self.noise_mask.len()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Column index of the target within a masked block.
    pub fn masked_target(&self) -> usize {
        self.target - self.noise_mask.partition_point(|&v| v < self.target)
    }

    /// Replace the noise mask with a single stated observer (threat models
    /// without an observer argument). The observer must differ from the
    /// target.
    pub fn with_stated_observer(mut self, observer: usize) -> Result<Self> {
        if observer >= self.dim() || observer == self.target {
            return Err(NetDpError::Model(format!(
                "stated observer {observer} invalid for target {}",
                self.target
            )));
        }
        self.noise_mask = vec![observer];
        Ok(self)
    }
}

/// Which route produced a [`SensitivityResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Gram,
    DenseSvd,
}

/// The sensitivity `Δ^T_{j→i}` with solve diagnostics.
#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub delta: f64,
    pub delta_sq: f64,
    /// Numerical rank of the Gram matrix (Gram route) or of `H_T` (dense).
    pub rank: usize,
    /// Relative range-membership residual.
    pub residual: f64,
    pub route: Route,
    /// The observer whose noise columns were removed, when the engine chose
    /// the worst case among candidates (threat models without an observer
    /// argument, knowledge correction on).
    pub corrected_observer: Option<usize>,
}

/// Nodes adjacent to `j` in the symmetric support of `W` (excluding `j`).
fn support_neighbors(w: &DMatrix<f64>, j: usize) -> Vec<usize> {
    (0..w.nrows())
        .filter(|&i| i != j && (w[(j, i)] != 0.0 || w[(i, j)] != 0.0))
        .collect()
}

/// Build the `(A, B, C)` triple for a threat model.
///
/// For models with an explicit observer set the noise mask is that set when
/// correction is on. The observer-free models start with an empty mask; use
/// [`SystemSpec::with_stated_observer`] to state one, or let [`sensitivity`]
/// take the worst case over candidates.
pub fn system_spec<'a>(
    model: &ThreatModel,
    w: &'a GossipMatrix,
    rounds: usize,
) -> Result<SystemSpec<'a>> {
    let n = w.dim();
    model.validate(n)?;
    if rounds == 0 {
        return Err(NetDpError::Parameter("round count must be >= 1".into()));
    }
    let (observed, input_is_mixing, noise_mask) = match &model.view {
        AdversaryView::NonAdaptiveSecureSum { observer } => (
            vec![*observer],
            true,
            if model.knowledge_correction {
                vec![*observer]
            } else {
                vec![]
            },
        ),
        AdversaryView::NonAdaptiveColluding { observers } => (
            observers.as_slice().to_vec(),
            true,
            if model.knowledge_correction {
                observers.as_slice().to_vec()
            } else {
                vec![]
            },
        ),
        AdversaryView::NoSecureSum => (vec![model.target], false, vec![]),
        AdversaryView::AdaptiveSecureSum => {
            let mut hood = support_neighbors(w.matrix(), model.target);
            hood.push(model.target);
            hood.sort_unstable();
            (hood, true, vec![])
        }
    };
    Ok(SystemSpec {
        w: w.matrix(),
        observed,
        input_is_mixing,
        noise_mask,
        rounds,
        target: model.target,
    })
}

/// Candidate noise masks for the worst-case knowledge correction.
fn candidate_specs<'a>(
    model: &ThreatModel,
    w: &'a GossipMatrix,
    rounds: usize,
) -> Result<Vec<(Option<usize>, SystemSpec<'a>)>> {
    let base = system_spec(model, w, rounds)?;
    if !model.knowledge_correction {
        return Ok(vec![(None, base)]);
    }
    let candidates: Vec<usize> = match &model.view {
        AdversaryView::NonAdaptiveSecureSum { .. } | AdversaryView::NonAdaptiveColluding { .. } => {
            return Ok(vec![(None, base)]); // mask already resolved
        }
        AdversaryView::NoSecureSum => (0..w.dim()).filter(|&i| i != model.target).collect(),
        AdversaryView::AdaptiveSecureSum => support_neighbors(w.matrix(), model.target),
    };
    if candidates.is_empty() {
        return Ok(vec![(None, base)]);
    }
    candidates
        .into_iter()
        .map(|obs| Ok((Some(obs), base.clone().with_stated_observer(obs)?)))
        .collect()
}

/// Observation row blocks `R_k = C·A^k·B_masked`, each `m × n'`, `k = 0..T-1`.
/// `H_T` has block `(s, t) = R_{s-t}` for `s ≥ t`.
pub fn build_rows(spec: &SystemSpec<'_>) -> Vec<DMatrix<f64>> {
    engine::row_blocks_transposed(
        spec.w,
        &spec.observed,
        spec.input_is_mixing,
        &spec.noise_mask,
        spec.rounds,
    )
    .into_iter()
    .map(|s| s.transpose())
    .collect()
}

/// Sensitivity direction `x̃_T` of length `m·T`.
pub fn build_direction(spec: &SystemSpec<'_>) -> DVector<f64> {
    engine::direction(
        spec.w,
        &spec.observed,
        spec.input_is_mixing,
        spec.target,
        spec.rounds,
    )
}

/// Materialize the full `mT × n'T` observation operator. Used by the dense
/// route, the verification oracles, and small-instance tests.
pub fn materialize_h(spec: &SystemSpec<'_>) -> DMatrix<f64> {
    let blocks = engine::row_blocks_transposed(
        spec.w,
        &spec.observed,
        spec.input_is_mixing,
        &spec.noise_mask,
        spec.rounds,
    );
    engine::h_from_blocks(&blocks, spec.rounds)
}

fn solve_spec_gram(spec: &SystemSpec<'_>, cfg: &EngineConfig) -> Result<Solve> {
    let blocks = engine::row_blocks_transposed(
        spec.w,
        &spec.observed,
        spec.input_is_mixing,
        &spec.noise_mask,
        spec.rounds,
    );
    let g = engine::gram_from_blocks(&blocks, spec.rounds);
    let x = build_direction(spec);
    engine::gram_quadratic(&g, &x, cfg)
}

fn best_candidate(
    results: Vec<(Option<usize>, Solve)>,
) -> (Option<usize>, Solve) {
    results
        .into_iter()
        .max_by(|a, b| {
            a.1.delta_sq
                .partial_cmp(&b.1.delta_sq)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one candidate")
}

/// Sensitivity `Δ^T_{j→i}` via the Gram route.
///
/// For the observer-free threat models with knowledge correction on, this is
/// the worst case over the removable observer (every candidate mask is
/// evaluated); the chosen observer is reported in the result.
pub fn sensitivity(
    model: &ThreatModel,
    w: &GossipMatrix,
    rounds: usize,
    cfg: &EngineConfig,
) -> Result<SensitivityResult> {
    let specs = candidate_specs(model, w, rounds)?;
    let solved: Vec<(Option<usize>, Solve)> = specs
        .iter()
        .map(|(obs, spec)| Ok((*obs, solve_spec_gram(spec, cfg)?)))
        .collect::<Result<_>>()?;
    let (corrected_observer, solve) = best_candidate(solved);
    Ok(SensitivityResult {
        delta: solve.delta_sq.max(0.0).sqrt(),
        delta_sq: solve.delta_sq,
        rank: solve.rank,
        residual: solve.residual,
        route: Route::Gram,
        corrected_observer,
    })
}

/// Cross-check oracle: materialize `H_T` and run a dense SVD.
///
/// Errors with a resource error when `mT · n'T` exceeds the configured dense
/// limit.
pub fn sensitivity_dense(
    model: &ThreatModel,
    w: &GossipMatrix,
    rounds: usize,
    cfg: &EngineConfig,
) -> Result<SensitivityResult> {
    let specs = candidate_specs(model, w, rounds)?;
    let mut solved = Vec::with_capacity(specs.len());
    for (obs, spec) in &specs {
        let entries = spec.observed_dim() * spec.rounds * spec.masked_dim() * spec.rounds;
        if entries > cfg.dense_limit {
            return Err(NetDpError::Resource(format!(
                "dense operator would hold {entries} entries (limit {})",
                cfg.dense_limit
            )));
        }
        let h = materialize_h(spec);
        let x = build_direction(spec);
        solved.push((*obs, engine::dense_svd_norm(&h, &x, cfg)?));
    }
    let (corrected_observer, solve) = best_candidate(solved);
    Ok(SensitivityResult {
        delta: solve.delta_sq.max(0.0).sqrt(),
        delta_sq: solve.delta_sq,
        rank: solve.rank,
        residual: solve.residual,
        route: Route::DenseSvd,
        corrected_observer,
    })
}

/// Sensitivity for a sequence of per-round gossip matrices.
///
/// `ws[t]` is applied in round `t+1`; block `(s, t)` of `H_T` is
/// `C·(W_{s-1}···W_t)·B_t` with `B_t = W_{t-1}` (mixing input) or `I`.
/// A constant sequence reproduces [`sensitivity`] up to reassociation of the
/// floating-point sums.
pub fn sensitivity_time_varying(
    model: &ThreatModel,
    ws: &[GossipMatrix],
    cfg: &EngineConfig,
) -> Result<SensitivityResult> {
    if ws.is_empty() {
        return Err(NetDpError::Parameter(
            "time-varying sequence must contain at least one matrix".into(),
        ));
    }
    let n = ws[0].dim();
    if ws.iter().any(|w| w.dim() != n) {
        return Err(NetDpError::Dimension(
            "all gossip matrices in the sequence must have equal dimension".into(),
        ));
    }
    let rounds = ws.len();
    // Candidate masks come from the union of supports across rounds.
    let union = union_matrix(ws);
    let union_w = GossipMatrix::new(union, crate::mixing::StochasticKind::General)?;
    let specs = candidate_specs(model, &union_w, rounds)?;
    let mats: Vec<&DMatrix<f64>> = ws.iter().map(|w| w.matrix()).collect();
    let solved: Vec<(Option<usize>, Solve)> = specs
        .iter()
        .map(|(obs, spec)| {
            let blocks = engine::tv_blocks_transposed(
                &mats,
                spec.observed(),
                spec.input_is_mixing(),
                spec.noise_mask(),
            );
            let g = engine::gram_from_tv_blocks(&blocks);
            let x = engine::tv_direction(&mats, spec.observed(), spec.input_is_mixing(), spec.target());
            Ok((*obs, engine::gram_quadratic(&g, &x, cfg)?))
        })
        .collect::<Result<_>>()?;
    let (corrected_observer, solve) = best_candidate(solved);
    Ok(SensitivityResult {
        delta: solve.delta_sq.max(0.0).sqrt(),
        delta_sq: solve.delta_sq,
        rank: solve.rank,
        residual: solve.residual,
        route: Route::Gram,
        corrected_observer,
    })
}

/// Materialized time-varying operator and direction for a given spec mask;
/// test/oracle helper mirroring [`materialize_h`].
pub fn materialize_h_time_varying(
    model: &ThreatModel,
    ws: &[GossipMatrix],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if ws.is_empty() {
        return Err(NetDpError::Parameter(
            "time-varying sequence must contain at least one matrix".into(),
        ));
    }
    let union = union_matrix(ws);
    let union_w = GossipMatrix::new(union, crate::mixing::StochasticKind::General)?;
    let spec = system_spec(model, &union_w, ws.len())?;
    // resolve the mask exactly like the single-matrix spec does
    let mats: Vec<&DMatrix<f64>> = ws.iter().map(|w| w.matrix()).collect();
    let blocks = engine::tv_blocks_transposed(
        &mats,
        spec.observed(),
        spec.input_is_mixing(),
        spec.noise_mask(),
    );
    let h = engine::h_from_tv_blocks(&blocks);
    let x = engine::tv_direction(&mats, spec.observed(), spec.input_is_mixing(), spec.target());
    Ok((h, x))
}

fn union_matrix(ws: &[GossipMatrix]) -> DMatrix<f64> {
    let n = ws[0].dim();
    let mut union = DMatrix::<f64>::zeros(n, n);
    for w in ws {
        for i in 0..n {
            for j in 0..n {
                if w.matrix()[(i, j)] != 0.0 {
                    union[(i, j)] = 1.0;
                }
            }
        }
    }
    union
}

/// Threat-model family for pairwise sweeps; the observer/target roles are
/// filled per entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    NonAdaptiveSecureSum,
    NoSecureSum,
    AdaptiveSecureSum,
}

/// Pairwise sensitivities: entry `(i, j)` is `Δ^T_{j→i}` (observer `i`,
/// target `j`); the diagonal is NaN.
#[derive(Debug, Clone)]
pub struct PairwiseDeltas {
    pub delta: DMatrix<f64>,
}

/// All-pairs sensitivities for a model family. For the observer-independent
/// families the per-target value is computed once and replicated across
/// observers; the per-observer families share the Gram decomposition across
/// targets. Parallel over the outer index, deterministic regardless of
/// thread count. Intended for desk-scale `n`.
pub fn pairwise_sensitivities(
    family: ModelFamily,
    w: &GossipMatrix,
    rounds: usize,
    correction: bool,
    cfg: &EngineConfig,
) -> Result<PairwiseDeltas> {
    let n = w.dim();
    if rounds == 0 {
        return Err(NetDpError::Parameter("round count must be >= 1".into()));
    }
    let mut delta = DMatrix::from_element(n, n, f64::NAN);
    if n == 1 {
        return Ok(PairwiseDeltas { delta });
    }
    match family {
        ModelFamily::NonAdaptiveSecureSum => {
            // Trajectories s_t = W(s_{t-1} + e_j) are observer-independent.
            let trajectories: Vec<DMatrix<f64>> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let mut e_j = DVector::<f64>::zeros(n);
                    e_j[j] = 1.0;
                    let mut state = DVector::<f64>::zeros(n);
                    let mut traj = DMatrix::<f64>::zeros(n, rounds);
                    for t in 0..rounds {
                        state = w.matrix() * (&state + &e_j);
                        traj.set_column(t, &state);
                    }
                    traj
                })
                .collect();
            let per_observer: Vec<Vec<(usize, f64)>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let model = ThreatModel::non_adaptive_secure_sum(i, (i + 1) % n, correction);
                    let spec = system_spec(&model, w, rounds)?;
                    let blocks = engine::row_blocks_transposed(
                        spec.w,
                        spec.observed(),
                        spec.input_is_mixing(),
                        spec.noise_mask(),
                        rounds,
                    );
                    let g = engine::gram_from_blocks(&blocks, rounds);
                    let eig = engine::symmetric_eigen(&g);
                    let lam_max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
                    let tau = cfg.rank_cutoff(rounds) * lam_max;
                    let mut row = Vec::with_capacity(n - 1);
                    for (j, traj) in trajectories.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        let x = DVector::from_fn(rounds, |t, _| traj[(i, t)]);
                        let solve = engine::quadratic_from_eigen(&g, &eig, tau, &x, cfg)
                            .map_err(|e| e.for_pair(i, j))?;
                        row.push((j, solve.delta_sq.max(0.0).sqrt()));
                    }
                    Ok(row)
                })
                .collect::<Result<_>>()?;
            for (i, row) in per_observer.into_iter().enumerate() {
                for (j, d) in row {
                    delta[(i, j)] = d;
                }
            }
        }
        ModelFamily::NoSecureSum | ModelFamily::AdaptiveSecureSum => {
            let per_target: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|j| {
                    let model = match family {
                        ModelFamily::NoSecureSum => ThreatModel::no_secure_sum(j, correction),
                        _ => ThreatModel::adaptive_secure_sum(j, correction),
                    };
                    sensitivity(&model, w, rounds, cfg)
                        .map(|r| r.delta)
                        .map_err(|e| e.for_pair(usize::MAX, j))
                })
                .collect::<Result<_>>()?;
            for j in 0..n {
                for i in 0..n {
                    if i != j {
                        delta[(i, j)] = per_target[j];
                    }
                }
            }
        }
    }
    Ok(PairwiseDeltas { delta })
}

#[cfg(test)]
mod tests;
