//! `netdp` — sweep commands for gossip-averaging network DP.
//!
//! Every command writes CSV artifacts headed by a version line and a
//! `# config:` line echoing the full invocation; re-running with identical
//! flags reproduces the files byte-for-byte apart from the version line.
//! `GDP_THREADS` caps worker parallelism.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use netdp::accountant;
use netdp::graph::{Graph, NodeSet};
use netdp::mixing::GossipMatrix;
use netdp::sensitivity::{self, ModelFamily, ThreatModel};
use netdp::simulator::{self, Algorithm, TrainConfig};
use netdp::{EngineConfig, NetDpError};

#[derive(Parser)]
#[command(name = "netdp", version, about = "Network DP accounting for gossip averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph and export its edge list as CSV.
    GraphGen(GraphGenArgs),
    /// Scaled sensitivity Δ²/T versus T for chosen node pairs.
    SensSweep(SensSweepArgs),
    /// Mean pairwise ε versus T for the adaptive-valid bounds and the LDP baseline.
    AdaptiveCompare(AdaptiveCompareArgs),
    /// Full pairwise ε table at a fixed T.
    PairwiseEps(PairwiseEpsArgs),
    /// Run DP gossip averaging / DP federated averaging on partitioned data.
    Train(TrainArgs),
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Node count for a synthetic Erdős–Rényi graph.
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability for the synthetic graph.
    #[arg(long)]
    p: Option<f64>,
    /// SNAP-style edge list file (symmetrized on load); overrides --n/--p.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// RNG seed; all randomness of a command flows from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GraphArgs {
    fn build(&self) -> netdp::Result<Graph> {
        if let Some(path) = &self.edges {
            let text = std::fs::read_to_string(path)?;
            return Graph::from_edge_list(&text, true);
        }
        match (self.n, self.p) {
            (Some(n), Some(p)) => Graph::erdos_renyi(n, p, self.seed),
            _ => Err(NetDpError::Parameter(
                "need either --edges FILE or both --n and --p".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    #[value(name = "nonadaptive-ss")]
    NonAdaptiveSs,
    #[value(name = "colluding")]
    Colluding,
    #[value(name = "no-ss")]
    NoSs,
    #[value(name = "adaptive-ss")]
    AdaptiveSs,
}

impl ModelArg {
    fn label(&self) -> &'static str {
        match self {
            ModelArg::NonAdaptiveSs => "nonadaptive-ss",
            ModelArg::Colluding => "colluding",
            ModelArg::NoSs => "no-ss",
            ModelArg::AdaptiveSs => "adaptive-ss",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightsArg {
    #[value(name = "max-degree")]
    MaxDegree,
    #[value(name = "neighborhood")]
    Neighborhood,
}

impl WeightsArg {
    fn build(&self, g: &Graph) -> GossipMatrix {
        match self {
            WeightsArg::MaxDegree => GossipMatrix::max_degree(g),
            WeightsArg::Neighborhood => GossipMatrix::neighborhood_average(g),
        }
    }
}

#[derive(Args)]
struct GraphGenArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SensSweepArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "nonadaptive-ss")]
    model: ModelArg,
    /// Strictly increasing round counts, comma separated.
    #[arg(long = "T-list", value_delimiter = ',', default_value = "10,50,100,200,300")]
    t_list: Vec<usize>,
    #[arg(long, value_enum, default_value = "on")]
    correction: OnOff,
    /// Target node j; a seeded random choice when omitted.
    #[arg(long)]
    target: Option<usize>,
    /// Observer node i; when omitted, one neighbor and one non-neighbor of
    /// the target are swept.
    #[arg(long)]
    observer: Option<usize>,
    /// Colluding observers (model `colluding`), comma separated.
    #[arg(long, value_delimiter = ',')]
    colluders: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "max-degree")]
    weights: WeightsArg,
    /// Tolerance config file (key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptiveCompareArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long = "T-list", value_delimiter = ',', default_value = "5,10,20,40,80")]
    t_list: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, value_enum, default_value = "on")]
    correction: OnOff,
    #[arg(long, value_enum, default_value = "max-degree")]
    weights: WeightsArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairwiseEpsArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "no-ss")]
    model: ModelArg,
    /// Round count.
    #[arg(long = "T", default_value_t = 20)]
    rounds: usize,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, value_enum, default_value = "on")]
    correction: OnOff,
    #[arg(long, value_enum, default_value = "max-degree")]
    weights: WeightsArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Gossip,
    Fedavg,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "both")]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 30)]
    rounds: usize,
    #[arg(long, default_value_t = 0.31622776601683794)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Records per node for synthetic data.
    #[arg(long, default_value_t = 50)]
    records: usize,
    #[arg(long, default_value_t = 5)]
    dims: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// IDX image file; with --labels, replaces the synthetic data.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "neighborhood")]
    weights: WeightsArg,
    /// key=value file overriding the training flags (rounds, eta, clip,
    /// sigma, classes, init_scale).
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn load_engine_config(path: &Option<PathBuf>) -> netdp::Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::from_key_values(&std::fs::read_to_string(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn write_artifact(path: &Path, config_line: &str, header: &str, rows: &[String]) -> netdp::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = format!(
        "# netdp {}\n# config: {config_line}\n{header}\n",
        env!("CARGO_PKG_VERSION")
    );
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn validate_t_list(t_list: &[usize]) -> netdp::Result<()> {
    if t_list.is_empty() {
        return Err(NetDpError::Parameter("empty T list".into()));
    }
    if t_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NetDpError::Parameter(
            "T list must be strictly increasing".into(),
        ));
    }
    if t_list[0] == 0 {
        return Err(NetDpError::Parameter("T must be >= 1".into()));
    }
    Ok(())
}

fn graph_config_fragment(args: &GraphArgs) -> String {
    match &args.edges {
        Some(path) => format!("edges={} seed={}", path.display(), args.seed),
        None => format!(
            "n={} p={} seed={}",
            args.n.map_or("?".into(), |v| v.to_string()),
            args.p.map_or("?".into(), |v| v.to_string()),
            args.seed
        ),
    }
}

fn run_graph_gen(args: &GraphGenArgs) -> netdp::Result<()> {
    let g = args.graph.build()?;
    let rows: Vec<String> = g.edges().map(|(i, j)| format!("{i},{j}")).collect();
    let config_line = format!(
        "graph-gen {} nodes={} edges={}",
        graph_config_fragment(&args.graph),
        g.node_count(),
        g.edge_count()
    );
    write_artifact(&args.out.join("graph.csv"), &config_line, "i,j", &rows)
}

/// A seeded (neighbor, non-neighbor) observer choice for a target.
fn default_pairs(g: &Graph, seed: u64) -> (usize, Vec<(usize, &'static str)>) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = g.node_count();
    let target = rng.random_range(0..n);
    let mut pairs = Vec::new();
    let neighbors = g.neighbors(target);
    if !neighbors.is_empty() {
        pairs.push((neighbors[rng.random_range(0..neighbors.len())], "neighbor"));
    }
    let non_neighbors: Vec<usize> = (0..n)
        .filter(|&i| i != target && !g.has_edge(i, target))
        .collect();
    if !non_neighbors.is_empty() {
        pairs.push((
            non_neighbors[rng.random_range(0..non_neighbors.len())],
            "non-neighbor",
        ));
    }
    (target, pairs)
}

fn run_sens_sweep(args: &SensSweepArgs) -> netdp::Result<()> {
    validate_t_list(&args.t_list)?;
    let cfg = load_engine_config(&args.config)?;
    let g = args.graph.build()?;
    let w = args.weights.build(&g);
    let n = g.node_count();
    let correction = args.correction == OnOff::On;

    let (target, observers) = match (args.target, args.observer) {
        (Some(j), Some(i)) => (j, vec![(i, "chosen")]),
        (maybe_j, maybe_i) => {
            let (auto_j, auto_pairs) = default_pairs(&g, args.graph.seed);
            let j = maybe_j.unwrap_or(auto_j);
            match maybe_i {
                Some(i) => (j, vec![(i, "chosen")]),
                None => (j, auto_pairs),
            }
        }
    };

    let mut rows = Vec::new();
    let mut role_notes = Vec::new();
    for &(observer, role) in &observers {
        let model = match args.model {
            ModelArg::NonAdaptiveSs => {
                ThreatModel::non_adaptive_secure_sum(observer, target, correction)
            }
            ModelArg::Colluding => {
                let ids = args.colluders.clone().ok_or(NetDpError::Parameter(
                    "--colluders required for the colluding model".into(),
                ))?;
                ThreatModel::colluding(NodeSet::new(ids, n)?, target, correction)
            }
            ModelArg::NoSs => ThreatModel::no_secure_sum(target, correction),
            ModelArg::AdaptiveSs => ThreatModel::adaptive_secure_sum(target, correction),
        };
        role_notes.push(format!("# pair: i={observer} j={target} role={role}"));
        for &t in &args.t_list {
            let r = sensitivity::sensitivity(&model, &w, t, &cfg)?;
            rows.push(format!(
                "{},{},{},{},{},{:?},{:?},{},{:?}",
                args.model.label(),
                n,
                t,
                observer,
                target,
                r.delta_sq,
                r.delta_sq / t as f64,
                r.rank,
                r.residual
            ));
        }
    }
    rows.sort();
    role_notes.sort();
    role_notes.extend(rows);
    let rows = role_notes;
    let config_line = format!(
        "sens-sweep {} model={} T-list={:?} correction={} weights={}",
        graph_config_fragment(&args.graph),
        args.model.label(),
        args.t_list,
        correction,
        if args.weights == WeightsArg::MaxDegree { "max-degree" } else { "neighborhood" },
    );
    write_artifact(
        &args.out.join("sens_sweep.csv"),
        &config_line,
        "model,n,T,i,j,delta_sq,delta_sq_over_T,rank,residual",
        &rows,
    )
}

fn run_adaptive_compare(args: &AdaptiveCompareArgs) -> netdp::Result<()> {
    validate_t_list(&args.t_list)?;
    let cfg = load_engine_config(&args.config)?;
    let g = args.graph.build()?;
    let w = args.weights.build(&g);
    if !g.is_connected() {
        eprintln!("warning: graph is disconnected; guarantees remain well-defined");
    }
    let correction = args.correction == OnOff::On;
    let mut rows = Vec::new();
    for &t in &args.t_list {
        let no_ss =
            sensitivity::pairwise_sensitivities(ModelFamily::NoSecureSum, &w, t, correction, &cfg)?;
        let adaptive = sensitivity::pairwise_sensitivities(
            ModelFamily::AdaptiveSecureSum,
            &w,
            t,
            correction,
            &cfg,
        )?;
        let table_no_ss = accountant::guarantee_table(&no_ss.delta, args.sigma, args.delta)?;
        let table_adaptive = accountant::guarantee_table(&adaptive.delta, args.sigma, args.delta)?;
        let ldp = accountant::ldp_epsilon(args.sigma, t, args.delta)?;
        rows.push(format!(
            "{t},{:?},{:?},{:?}",
            table_no_ss.mean, table_adaptive.mean, ldp
        ));
    }
    let config_line = format!(
        "adaptive-compare {} T-list={:?} sigma={} delta={} correction={correction}",
        graph_config_fragment(&args.graph),
        args.t_list,
        args.sigma,
        args.delta
    );
    write_artifact(
        &args.out.join("adaptive_compare.csv"),
        &config_line,
        "T,mean_eps_no_ss,mean_eps_adaptive_ss,eps_ldp",
        &rows,
    )
}

fn run_pairwise_eps(args: &PairwiseEpsArgs) -> netdp::Result<()> {
    if args.rounds == 0 {
        return Err(NetDpError::Parameter("T must be >= 1".into()));
    }
    let cfg = load_engine_config(&args.config)?;
    let g = args.graph.build()?;
    let w = args.weights.build(&g);
    let correction = args.correction == OnOff::On;
    let family = match args.model {
        ModelArg::NonAdaptiveSs => ModelFamily::NonAdaptiveSecureSum,
        ModelArg::NoSs => ModelFamily::NoSecureSum,
        ModelArg::AdaptiveSs => ModelFamily::AdaptiveSecureSum,
        ModelArg::Colluding => {
            return Err(NetDpError::Parameter(
                "pairwise sweeps need a per-pair model; use nonadaptive-ss, no-ss or adaptive-ss"
                    .into(),
            ))
        }
    };
    let deltas = sensitivity::pairwise_sensitivities(family, &w, args.rounds, correction, &cfg)?;
    let table = accountant::guarantee_table(&deltas.delta, args.sigma, args.delta)?;
    let n = g.node_count();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                rows.push(format!(
                    "{i},{j},{:?},{:?}",
                    deltas.delta[(i, j)],
                    table.eps[(i, j)]
                ));
            }
        }
    }
    rows.push(format!(
        "# summary: mean={:?} min={:?} max={:?} mean_unordered_worst={:?}",
        table.mean, table.min, table.max, table.mean_unordered_worst
    ));
    let config_line = format!(
        "pairwise-eps {} model={} T={} sigma={} delta={} correction={correction}",
        graph_config_fragment(&args.graph),
        args.model.label(),
        args.rounds,
        args.sigma,
        args.delta
    );
    write_artifact(
        &args.out.join("pairwise_eps.csv"),
        &config_line,
        "i,j,delta_sens,epsilon",
        &rows,
    )
}

fn run_train(args: &TrainArgs) -> netdp::Result<()> {
    let g = args.graph.build()?;
    let n = g.node_count();
    let w = args.weights.build(&g);
    let (shards, test) = match (&args.images, &args.labels) {
        (Some(images), Some(labels)) => {
            let pool = simulator::load_idx(images, labels)?;
            let shards = pool.partition(n, args.records)?;
            let remaining = pool.len() - n * args.records;
            let test_count = remaining.clamp(1, 2000);
            let features = pool
                .features
                .rows(pool.len() - test_count, test_count)
                .into_owned();
            let labels_vec = pool.labels[pool.len() - test_count..].to_vec();
            (
                shards,
                simulator::LocalDataset::new(features, labels_vec, usize::MAX)?,
            )
        }
        (None, None) => {
            let data = simulator::synth_classification(
                args.graph.seed,
                n,
                args.records,
                args.dims,
                args.classes,
            )?;
            (data.shards, data.test)
        }
        _ => {
            return Err(NetDpError::Parameter(
                "--images and --labels must be given together".into(),
            ))
        }
    };
    let classes = shards
        .iter()
        .map(|s| s.label_ceiling())
        .max()
        .unwrap_or(args.classes)
        .max(args.classes.min(10));
    let mut base = TrainConfig {
        rounds: args.rounds,
        learning_rate: args.eta,
        clip_norm: args.clip,
        noise_multiplier: args.sigma,
        num_classes: classes,
        seed: args.graph.seed,
        algorithm: Algorithm::Gossip,
        init_scale: 0.0,
    };
    if let Some(path) = &args.train_config {
        base.apply_key_values(&std::fs::read_to_string(path)?)?;
    }
    let config_line = format!(
        "train {} rounds={} eta={} clip={} sigma={} records={} classes={classes}",
        graph_config_fragment(&args.graph),
        args.rounds,
        args.eta,
        args.clip,
        args.sigma,
        args.records
    );
    if matches!(args.algorithm, AlgorithmArg::Gossip | AlgorithmArg::Both) {
        let history = simulator::dp_gossip_avg(&g, &w, &shards, &test, &base)?;
        let rows: Vec<String> = history.to_csv().lines().skip(1).map(String::from).collect();
        let line = format!(
            "{config_line} algorithm=gossip eval_node={} contribution_bound={:?}",
            history.eval_node.unwrap_or(0),
            history.bridge.contribution_bound
        );
        write_artifact(
            &args.out.join("train_gossip.csv"),
            &line,
            "round,accuracy,dispersion,mean_loss",
            &rows,
        )?;
    }
    if matches!(args.algorithm, AlgorithmArg::Fedavg | AlgorithmArg::Both) {
        let mut cfg = base.clone();
        cfg.algorithm = Algorithm::FedAvg;
        let history = simulator::dp_fedavg(&shards, &test, &cfg)?;
        let rows: Vec<String> = history.to_csv().lines().skip(1).map(String::from).collect();
        let line = format!(
            "{config_line} algorithm=fedavg contribution_bound={:?}",
            history.bridge.contribution_bound
        );
        write_artifact(
            &args.out.join("train_fedavg.csv"),
            &line,
            "round,accuracy,dispersion,mean_loss",
            &rows,
        )?;
    }
    Ok(())
}

fn exit_code_for(err: &NetDpError) -> i32 {
    match err {
        NetDpError::Range { .. } => 3,
        NetDpError::Io(_) => 1,
        NetDpError::Pair { source, .. } => exit_code_for(source),
        _ => 2,
    }
}

fn main() {
    if let Ok(threads) = std::env::var("GDP_THREADS") {
        if let Ok(count) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(count.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GraphGen(args) => run_graph_gen(args),
        Command::SensSweep(args) => run_sens_sweep(args),
        Command::AdaptiveCompare(args) => run_adaptive_compare(args),
        Command::PairwiseEps(args) => run_pairwise_eps(args),
        Command::Train(args) => run_train(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(exit_code_for(&err));
    }
}
