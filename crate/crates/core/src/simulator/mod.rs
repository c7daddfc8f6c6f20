//! Desk-scale decentralized DP training: gossip averaging and federated
//! averaging for multinomial logistic regression.

mod data;
mod idx;
mod logreg;

pub use data::{synth_classification, LocalDataset, SynthData};
pub use idx::{load_idx, parse_idx, DataPool};
pub use logreg::LogisticModel;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NetDpError, Result};
use crate::graph::Graph;
use crate::mixing::GossipMatrix;

/// Which training loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gossip,
    FedAvg,
}

/// Training hyperparameters. `noise_multiplier` is the σ of the accounting
/// convention: the per-coordinate noise std of a local step is
/// `σ · C / |D_i|` (scaled by `σ/√n` for the federated baseline).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub num_classes: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Scale of the random initial per-node models (0 = zero init).
    pub init_scale: f64,
}

impl TrainConfig {
    /// Override fields from `key=value` lines (`#` comments ignored).
    /// Recognized keys: `rounds`, `eta`, `clip`, `sigma`, `classes`, `seed`,
    /// `init_scale`, `algorithm` (`gossip`/`fedavg`).
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(NetDpError::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let value = value.trim();
            let bad = |e: String| NetDpError::Parse {
                line: idx + 1,
                message: e,
            };
            match key.trim() {
                "rounds" => self.rounds = value.parse().map_err(|e| bad(format!("rounds: {e}")))?,
                "eta" => {
                    self.learning_rate = value.parse().map_err(|e| bad(format!("eta: {e}")))?
                }
                "clip" => self.clip_norm = value.parse().map_err(|e| bad(format!("clip: {e}")))?,
                "sigma" => {
                    self.noise_multiplier =
                        value.parse().map_err(|e| bad(format!("sigma: {e}")))?
                }
                "classes" => {
                    self.num_classes = value.parse().map_err(|e| bad(format!("classes: {e}")))?
                }
                "seed" => self.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
                "init_scale" => {
                    self.init_scale =
                        value.parse().map_err(|e| bad(format!("init_scale: {e}")))?
                }
                "algorithm" => {
                    self.algorithm = match value {
                        "gossip" => Algorithm::Gossip,
                        "fedavg" => Algorithm::FedAvg,
                        other => return Err(bad(format!("unknown algorithm {other:?}"))),
                    }
                }
                other => return Err(bad(format!("unknown training key {other:?}"))),
            }
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(NetDpError::Parameter("rounds must be >= 1".into()));
        }
        // learning_rate 0 is allowed: it turns gossip averaging into a pure
        // consensus iteration, which the dispersion checks rely on.
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(NetDpError::Parameter("learning rate must be >= 0".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(NetDpError::Parameter("clip norm must be >= 0".into()));
        }
        if self.noise_multiplier < 0.0 {
            return Err(NetDpError::Parameter("noise multiplier must be >= 0".into()));
        }
        if self.num_classes == 0 {
            return Err(NetDpError::Parameter("need at least one class".into()));
        }
        Ok(())
    }
}

/// Per-round statistics of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    /// Test accuracy of the evaluation model (a seeded random node for
    /// gossip, the global model for federated averaging).
    pub accuracy: f64,
    /// Max pairwise model distance across nodes (0 for federated averaging).
    pub dispersion: f64,
    pub per_node_loss: Vec<f64>,
}

impl RoundStats {
    pub fn mean_loss(&self) -> f64 {
        self.per_node_loss.iter().sum::<f64>() / self.per_node_loss.len().max(1) as f64
    }
}

/// The bridge from simulator units to the unit-contribution convention of the
/// accountant: one record changes a node's shared model by at most
/// `η·C/|D_i|` per round, with per-coordinate noise std `σ` times that.
#[derive(Debug, Clone, Copy)]
pub struct AccountingBridge {
    /// `η·C / min_i |D_i|` — the per-round per-record contribution bound.
    pub contribution_bound: f64,
    /// The effective per-round noise multiplier σ (noise std divided by the
    /// contribution bound).
    pub noise_multiplier: f64,
}

/// Full trajectory of one run plus the accounting bridge.
#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub rounds: Vec<RoundStats>,
    pub bridge: AccountingBridge,
    /// The node whose model is evaluated each round (gossip only).
    pub eval_node: Option<usize>,
    /// Models after the last round: one per node for gossip averaging, the
    /// single global model for federated averaging.
    pub final_models: Vec<LogisticModel>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map(|r| r.accuracy).unwrap_or(f64::NAN)
    }

    /// CSV with columns `round,accuracy,dispersion,mean_loss`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("round,accuracy,dispersion,mean_loss\n");
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?}",
                r.round,
                r.accuracy,
                r.dispersion,
                r.mean_loss()
            );
        }
        out
    }
}

/// Learning-rate grid `{10^{-i/2}}` for `i` in the given inclusive range;
/// strictly decreasing for an ascending range.
pub fn lr_grid(range: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    range.map(|i| 10f64.powf(-(i as f64) / 2.0)).collect()
}

/// Pick the rate with the best final accuracy; ties break toward the smaller
/// rate.
pub fn tune_learning_rate(
    rates: &[f64],
    mut run: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    if rates.is_empty() {
        return Err(NetDpError::Parameter("empty learning-rate grid".into()));
    }
    let mut best_rate = f64::NAN;
    let mut best_acc = f64::NEG_INFINITY;
    for &rate in rates {
        let acc = run(rate)?;
        if acc > best_acc || (acc == best_acc && rate < best_rate) {
            best_acc = acc;
            best_rate = rate;
        }
    }
    Ok((best_rate, best_acc))
}

// Distinct substream purposes keyed into the per-(node, round) RNG derivation.
const PURPOSE_STEP: u64 = 1;
const PURPOSE_INIT: u64 = 2;
const PURPOSE_EVAL: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic RNG substream keyed by `(seed, purpose, node, round)`;
/// results are independent of evaluation order and thread count.
fn substream(seed: u64, purpose: u64, node: u64, round: u64) -> ChaCha12Rng {
    let a = splitmix(seed ^ splitmix(purpose));
    let b = splitmix(a ^ splitmix(node));
    let c = splitmix(b ^ splitmix(round));
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..].copy_from_slice(&splitmix(c).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// One full-batch DP gradient step: per-record gradients clipped to norm `C`,
/// averaged over the (fixed, public) record count, plus Gaussian noise of
/// per-coordinate std `noise_multiplier · C / |D|`; then
/// `model ← model − η · g̃`.
pub fn local_dp_step(
    model: &LogisticModel,
    data: &LocalDataset,
    learning_rate: f64,
    clip_norm: f64,
    noise_multiplier: f64,
    rng: &mut ChaCha12Rng,
) -> Result<LogisticModel> {
    if data.is_empty() {
        return Err(NetDpError::Parameter("empty dataset".into()));
    }
    let mut grad = model.mean_clipped_gradient(data, clip_norm)?;
    if noise_multiplier > 0.0 {
        let noise_std = noise_multiplier * clip_norm / data.len() as f64;
        for v in grad.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += noise_std * z;
        }
    }
    Ok(model.stepped(&grad, learning_rate))
}

fn max_pairwise_distance(models: &[LogisticModel]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..models.len() {
        for j in (i + 1)..models.len() {
            max = max.max(models[i].distance(&models[j]));
        }
    }
    max
}

fn initial_models(
    n: usize,
    num_classes: usize,
    dims: usize,
    cfg: &TrainConfig,
) -> Vec<LogisticModel> {
    (0..n)
        .map(|node| {
            if cfg.init_scale == 0.0 {
                LogisticModel::zeros(num_classes, dims)
            } else {
                let mut rng = substream(cfg.seed, PURPOSE_INIT, node as u64, 0);
                LogisticModel::random(num_classes, dims, cfg.init_scale, &mut rng)
            }
        })
        .collect()
}

fn bridge_for(datasets: &[LocalDataset], cfg: &TrainConfig) -> AccountingBridge {
    let min_records = datasets.iter().map(|d| d.len()).min().unwrap_or(1).max(1);
    AccountingBridge {
        contribution_bound: cfg.learning_rate * cfg.clip_norm / min_records as f64,
        noise_multiplier: cfg.noise_multiplier,
    }
}

/// Differentially private gossip averaging: every node takes one local DP
/// step, then mixes `w_i ← Σ_j W_ij w_j`. Accuracy is evaluated on a seeded
/// random node's model.
pub fn dp_gossip_avg(
    graph: &Graph,
    w: &GossipMatrix,
    datasets: &[LocalDataset],
    test: &LocalDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = graph.node_count();
    if w.dim() != n {
        return Err(NetDpError::Dimension(format!(
            "gossip matrix is {}x{} but the graph has {n} nodes",
            w.dim(),
            w.dim()
        )));
    }
    if datasets.len() != n {
        return Err(NetDpError::Dimension(format!(
            "expected one dataset per node ({n}), got {}",
            datasets.len()
        )));
    }
    let dims = datasets[0].dims();
    if datasets.iter().any(|d| d.dims() != dims) || test.dims() != dims {
        return Err(NetDpError::Dimension(
            "all datasets must share the feature dimension".into(),
        ));
    }
    let mut models = initial_models(n, cfg.num_classes, dims, cfg);
    let eval_node = {
        use rand::Rng;
        let mut rng = substream(cfg.seed, PURPOSE_EVAL, 0, 0);
        rng.random_range(0..n)
    };
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let stepped: Vec<LogisticModel> = models
            .iter()
            .enumerate()
            .map(|(node, model)| {
                let mut rng = substream(cfg.seed, PURPOSE_STEP, node as u64, round as u64);
                local_dp_step(
                    model,
                    &datasets[node],
                    cfg.learning_rate,
                    cfg.clip_norm,
                    cfg.noise_multiplier,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        models = (0..n)
            .map(|i| {
                let mut mixed = DMatrix::<f64>::zeros(cfg.num_classes, dims + 1);
                for (j, m) in stepped.iter().enumerate() {
                    let weight = w.matrix()[(i, j)];
                    if weight != 0.0 {
                        mixed += m.weights() * weight;
                    }
                }
                LogisticModel::from_weights(mixed)
            })
            .collect();
        rounds.push(RoundStats {
            round: round + 1,
            accuracy: models[eval_node].accuracy(test),
            dispersion: max_pairwise_distance(&models),
            per_node_loss: (0..n).map(|i| models[i].loss(&datasets[i])).collect(),
        });
    }
    Ok(TrainHistory {
        rounds,
        bridge: bridge_for(datasets, cfg),
        eval_node: Some(eval_node),
        final_models: models,
    })
}

/// Differentially private federated averaging: each client takes one local DP
/// step from the broadcast model with noise multiplier `σ/√n`, the server
/// averages the updates.
pub fn dp_fedavg(
    datasets: &[LocalDataset],
    test: &LocalDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = datasets.len();
    if n == 0 {
        return Err(NetDpError::Parameter("need at least one client".into()));
    }
    let dims = datasets[0].dims();
    if datasets.iter().any(|d| d.dims() != dims) || test.dims() != dims {
        return Err(NetDpError::Dimension(
            "all datasets must share the feature dimension".into(),
        ));
    }
    let client_noise = cfg.noise_multiplier / (n as f64).sqrt();
    let mut global = if cfg.init_scale == 0.0 {
        LogisticModel::zeros(cfg.num_classes, dims)
    } else {
        let mut rng = substream(cfg.seed, PURPOSE_INIT, 0, 0);
        LogisticModel::random(cfg.num_classes, dims, cfg.init_scale, &mut rng)
    };
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut update_sum = DMatrix::<f64>::zeros(cfg.num_classes, dims + 1);
        for (node, dataset) in datasets.iter().enumerate() {
            let mut rng = substream(cfg.seed, PURPOSE_STEP, node as u64, round as u64);
            let stepped = local_dp_step(
                &global,
                dataset,
                cfg.learning_rate,
                cfg.clip_norm,
                client_noise,
                &mut rng,
            )?;
            update_sum += stepped.weights() - global.weights();
        }
        global = LogisticModel::from_weights(global.weights() + update_sum / n as f64);
        rounds.push(RoundStats {
            round: round + 1,
            accuracy: global.accuracy(test),
            dispersion: 0.0,
            per_node_loss: (0..n).map(|i| global.loss(&datasets[i])).collect(),
        });
    }
    Ok(TrainHistory {
        rounds,
        bridge: bridge_for(datasets, cfg),
        eval_node: None,
        final_models: vec![global],
    })
}
