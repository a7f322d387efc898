//! Command implementations behind the `pgst` binary: transform, consensus
//! fitting, stability and sensitivity experiments, benchmarking, and a
//! nearest-centroid smoke classifier.
//!
//! Configuration comes from a plain `key = value` file plus command-line
//! flags; flags win. Every run writes a manifest echoing the fully resolved
//! configuration so outputs are reproducible from the manifest alone.

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::data_io::{
    self, fmt_f64, load_edge_list, load_signals, seeded_rng, EdgeListFormat,
};
use crate::filter_banks::{FilterBank, WaveletFamily};
use crate::graph_core::{FilterBackend, GraphShift, GraphSignal, ShiftKind, Spectrum};
use crate::perturbation::{
    bound_pgst_signal, bound_pgst_structural, make_eligible_delta, perturb_localized,
    perturb_random, perturb_structure_eigen, perturb_structure_relative, snr_to_energy,
    tree_diff, BoundReport,
};
use crate::scattering::{
    aggregate, fit_tree, gst, pgst, scatter_node, topk_prune, transform_with_tree, BankOperator,
    ConsensusRule, FeatureMap, Path, ScatterError, ScatteringTree, DEFAULT_NODE_BUDGET,
};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input or configuration: exit code 2.
    #[error("{0}")]
    Input(String),
    /// Node-budget guard tripped: exit code 3.
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Budget(_) => 3,
        }
    }
}

impl From<crate::data_io::DataError> for CliError {
    fn from(e: crate::data_io::DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::graph_core::GraphError> for CliError {
    fn from(e: crate::graph_core::GraphError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::filter_banks::BankError> for CliError {
    fn from(e: crate::filter_banks::BankError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::perturbation::PerturbError> for CliError {
    fn from(e: crate::perturbation::PerturbError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ScatterError> for CliError {
    fn from(e: ScatterError) -> Self {
        match e {
            ScatterError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Spectral,
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Random,
    Localized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbTarget {
    Signal,
    Eigen,
    Relative,
}

/// Unresolved option values from the command line; `None` defers to the
/// config file, then to the built-in default.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct ConfigFlags {
    /// Wavelet family: ds | mcs | ths
    #[arg(long)]
    pub wavelet: Option<String>,
    /// Number of filters per bank
    #[arg(long = "J")]
    pub j: Option<usize>,
    /// Number of layers (layer indices 0..L-1)
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Energy-ratio pruning threshold
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep the top-K branches per node instead of thresholding
    #[arg(long)]
    pub topk: Option<usize>,
    /// Filtering backend: spectral | poly
    #[arg(long)]
    pub backend: Option<String>,
    /// Chebyshev order for the polynomial backend
    #[arg(long = "cheb-order")]
    pub cheb_order: Option<usize>,
    /// Base RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// SNR list in dB, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr: Option<Vec<f64>>,
    /// Number of randomized trials
    #[arg(long)]
    pub trials: Option<usize>,
    /// Perturbation spectral layout: random | localized
    #[arg(long)]
    pub mode: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Full (unpruned) transform
    #[arg(long)]
    pub full: bool,
    /// Node-budget override
    #[arg(long)]
    pub budget: Option<usize>,
    /// Consensus rule for fitting: mean_ratio | union | majority
    #[arg(long)]
    pub rule: Option<String>,
    /// Perturbation target: signal | eigen | relative
    #[arg(long)]
    pub perturb: Option<String>,
    /// Shift operator: adjacency | laplacian | normalized_adjacency |
    /// normalized_laplacian
    #[arg(long)]
    pub shift: Option<String>,
    /// Ablation sweep; currently only "tau"
    #[arg(long)]
    pub ablate: Option<String>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub wavelet: WaveletFamily,
    pub j: usize,
    pub l: usize,
    pub tau: f64,
    pub topk: Option<usize>,
    pub backend: BackendChoice,
    pub cheb_order: usize,
    pub seed: u64,
    pub snr: Vec<f64>,
    pub trials: usize,
    pub mode: NoiseMode,
    pub out: PathBuf,
    pub full: bool,
    pub budget: usize,
    pub rule: ConsensusRule,
    pub perturb: PerturbTarget,
    pub shift_kind: ShiftKind,
    pub ablate_tau: bool,
}

fn parse_config_file(path: &FsPath) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Input(format!(
                "{}:{}: expected 'key = value'",
                path.display(),
                idx + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse::<T>()
        .map_err(|_| CliError::Input(format!("config key '{key}': bad value '{raw}'")))
}

impl RunConfig {
    pub fn resolve(flags: &ConfigFlags) -> Result<RunConfig, CliError> {
        let file = match &flags.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        // flag > file > default, per option.
        macro_rules! pick {
            ($flag:expr, $key:literal, $default:expr, $ty:ty) => {
                match (&$flag, file.get($key)) {
                    (Some(v), _) => v.clone(),
                    (None, Some(raw)) => parse_value::<$ty>($key, raw)?,
                    (None, None) => $default,
                }
            };
        }
        let wavelet_raw = pick!(flags.wavelet, "wavelet", "ths".to_string(), String);
        let wavelet = wavelet_raw
            .parse::<WaveletFamily>()
            .map_err(CliError::Input)?;
        let backend_raw = pick!(flags.backend, "backend", "spectral".to_string(), String);
        let backend = match backend_raw.as_str() {
            "spectral" => BackendChoice::Spectral,
            "poly" => BackendChoice::Poly,
            other => return Err(CliError::Input(format!("unknown backend '{other}'"))),
        };
        let mode_raw = pick!(flags.mode, "mode", "random".to_string(), String);
        let mode = match mode_raw.as_str() {
            "random" => NoiseMode::Random,
            "localized" => NoiseMode::Localized,
            other => return Err(CliError::Input(format!("unknown mode '{other}'"))),
        };
        let rule_raw = pick!(flags.rule, "rule", "mean_ratio".to_string(), String);
        let rule = rule_raw.parse::<ConsensusRule>().map_err(CliError::Input)?;
        let perturb_raw = pick!(flags.perturb, "perturb", "signal".to_string(), String);
        let perturb = match perturb_raw.as_str() {
            "signal" => PerturbTarget::Signal,
            "eigen" => PerturbTarget::Eigen,
            "relative" => PerturbTarget::Relative,
            other => return Err(CliError::Input(format!("unknown perturb target '{other}'"))),
        };
        let shift_raw = pick!(
            flags.shift,
            "shift",
            "normalized_laplacian".to_string(),
            String
        );
        let shift_kind = match shift_raw.as_str() {
            "adjacency" => ShiftKind::Adjacency,
            "laplacian" => ShiftKind::Laplacian,
            "normalized_adjacency" => ShiftKind::NormalizedAdjacency,
            "normalized_laplacian" => ShiftKind::NormalizedLaplacian,
            other => return Err(CliError::Input(format!("unknown shift kind '{other}'"))),
        };
        let snr = match (&flags.snr, file.get("snr")) {
            (Some(v), _) => v.clone(),
            (None, Some(raw)) => raw
                .split(',')
                .map(|s| parse_value::<f64>("snr", s.trim()))
                .collect::<Result<Vec<_>, _>>()?,
            (None, None) => vec![0.0, 10.0, 20.0],
        };
        let full = flags.full
            || file
                .get("full")
                .map(|v| v == "true")
                .unwrap_or(false);
        let ablate_tau = match (&flags.ablate, file.get("ablate")) {
            (Some(v), _) => v == "tau",
            (None, Some(v)) => v == "tau",
            (None, None) => false,
        };
        Ok(RunConfig {
            wavelet,
            j: pick!(flags.j, "j", 5, usize),
            l: pick!(flags.l, "l", 5, usize),
            tau: pick!(flags.tau, "tau", 0.01, f64),
            topk: match (&flags.topk, file.get("topk")) {
                (Some(v), _) => Some(*v),
                (None, Some(raw)) => Some(parse_value::<usize>("topk", raw)?),
                (None, None) => None,
            },
            backend,
            cheb_order: pick!(flags.cheb_order, "cheb_order", 30, usize),
            seed: pick!(flags.seed, "seed", 0, u64),
            snr,
            trials: pick!(flags.trials, "trials", 50, usize),
            mode,
            out: pick!(flags.out, "out", PathBuf::from("out"), PathBuf),
            full,
            budget: pick!(flags.budget, "budget", DEFAULT_NODE_BUDGET, usize),
            rule,
            perturb,
            shift_kind,
            ablate_tau,
        })
    }

    fn manifest_lines(&self) -> String {
        let wavelet = match self.wavelet {
            WaveletFamily::Diffusion => "ds",
            WaveletFamily::MonicCubic => "mcs",
            WaveletFamily::TightHann => "ths",
            WaveletFamily::IdealOneHot => "one_hot",
        };
        let mut s = String::new();
        s.push_str(&format!("wavelet = {wavelet}\n"));
        s.push_str(&format!("j = {}\n", self.j));
        s.push_str(&format!("l = {}\n", self.l));
        s.push_str(&format!("tau = {}\n", self.tau));
        if let Some(k) = self.topk {
            s.push_str(&format!("topk = {k}\n"));
        }
        s.push_str(&format!(
            "backend = {}\n",
            if self.backend == BackendChoice::Spectral {
                "spectral"
            } else {
                "poly"
            }
        ));
        s.push_str(&format!("cheb_order = {}\n", self.cheb_order));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!(
            "snr = {}\n",
            self.snr
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        s.push_str(&format!("trials = {}\n", self.trials));
        s.push_str(&format!(
            "mode = {}\n",
            if self.mode == NoiseMode::Random {
                "random"
            } else {
                "localized"
            }
        ));
        s.push_str(&format!("out = {}\n", self.out.display()));
        s.push_str(&format!("full = {}\n", self.full));
        s.push_str(&format!("budget = {}\n", self.budget));
        s.push_str(&format!("rule = {:?}\n", self.rule));
        s.push_str(&format!("perturb = {:?}\n", self.perturb));
        s.push_str(&format!("shift = {:?}\n", self.shift_kind));
        s
    }
}

fn write_manifest(cfg: &RunConfig, extra: &[(String, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", cfg.out.display())))?;
    let mut text = cfg.manifest_lines();
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(cfg.out.join("manifest.txt"), text)
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

fn detect_edge_format(path: &FsPath) -> Result<EdgeListFormat, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        return Ok(match line.split('\t').count() {
            2 => EdgeListFormat::TsvUv,
            _ => EdgeListFormat::TsvUvw,
        });
    }
    Err(CliError::Input(format!(
        "{}: file contains no data",
        path.display()
    )))
}

/// Graph, spectrum, bank, and bound operator built from the configuration.
pub struct Workbench {
    pub shift: GraphShift,
    pub spectrum: Spectrum,
    pub bank: FilterBank,
    pub op: BankOperator,
}

pub fn build_workbench(graph: &FsPath, cfg: &RunConfig) -> Result<Workbench, CliError> {
    let format = detect_edge_format(graph)?;
    let edge_list = load_edge_list(graph, format)?;
    let shift = GraphShift::build(&edge_list.edges, edge_list.n, cfg.shift_kind)?;
    workbench_from_shift(shift, cfg)
}

pub fn workbench_from_shift(shift: GraphShift, cfg: &RunConfig) -> Result<Workbench, CliError> {
    let spectrum = Spectrum::eigendecompose(&shift)?;
    let bank = FilterBank::make(spectrum.interval(), cfg.wavelet, cfg.j)?;
    let backend = match cfg.backend {
        BackendChoice::Spectral => FilterBackend::Spectral,
        BackendChoice::Poly => FilterBackend::Polynomial {
            order: cfg.cheb_order,
        },
    };
    let op = BankOperator::new(&shift, Some(&spectrum), &bank, backend)?;
    Ok(Workbench {
        shift,
        spectrum,
        bank,
        op,
    })
}

/// Top-K expansion: keeps the K highest-ratio children of every expanded
/// node.
fn topk_transform(
    op: &BankOperator,
    x: &GraphSignal,
    depth: usize,
    k: usize,
    budget: usize,
) -> Result<(FeatureMap, ScatteringTree), CliError> {
    if x.norm() == 0.0 {
        return Err(CliError::Input("input signal has zero norm".into()));
    }
    let mut entries = vec![(Path::root(), aggregate(x.values()))];
    let mut records = vec![(Path::root(), 1.0, true)];
    let mut frontier = vec![(Path::root(), x.values().clone())];
    for _ in 0..depth.saturating_sub(1) {
        let mut next = Vec::new();
        for (path, z) in &frontier {
            let children = scatter_node(op, z);
            let flags = topk_prune(z, &children, k.min(children.len()))
                .map_err(CliError::from)?;
            let parent_energy = z.norm_squared();
            for (idx, (child, keep)) in children.into_iter().zip(flags).enumerate() {
                if !keep {
                    continue;
                }
                let child_path = path.child((idx + 1) as u16);
                let ratio = if parent_energy > 0.0 {
                    child.norm_squared() / parent_energy
                } else {
                    0.0
                };
                entries.push((child_path.clone(), aggregate(&child)));
                records.push((child_path.clone(), ratio, true));
                if records.len() > budget {
                    return Err(CliError::Budget(format!(
                        "transform would exceed the node budget of {budget}"
                    )));
                }
                next.push((child_path, child));
            }
        }
        frontier = next;
    }
    let tree = ScatteringTree::from_structure(records, 0.0, depth, op.j_count());
    Ok((FeatureMap::from_entries(entries), tree))
}

/// Runs the configured transform on one signal.
pub fn run_transform(
    wb: &Workbench,
    x: &GraphSignal,
    cfg: &RunConfig,
) -> Result<(FeatureMap, ScatteringTree), CliError> {
    if cfg.full {
        Ok(gst(&wb.op, x, cfg.l, cfg.budget)?)
    } else if let Some(k) = cfg.topk {
        topk_transform(&wb.op, x, cfg.l, k, cfg.budget)
    } else {
        Ok(pgst(&wb.op, x, cfg.l, cfg.tau, cfg.budget)?)
    }
}

pub fn cmd_transform(
    graph: &FsPath,
    signals: &FsPath,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let wb = build_workbench(graph, cfg)?;
    let matrix = load_signals(signals, wb.shift.n())?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Input(e.to_string()))?;
    let start = Instant::now();
    let mut extra = Vec::new();
    for f in 0..matrix.ncols() {
        let x = GraphSignal::new(matrix.column(f).clone_owned());
        let (map, tree) = run_transform(&wb, &x, cfg)?;
        data_io::save_feature_map(&map, &cfg.out.join(format!("features_{f}.csv")))?;
        data_io::save_tree_json(&tree, &cfg.out.join(format!("tree_{f}.json")))?;
        data_io::save_tree_dot(&tree, &cfg.out.join(format!("tree_{f}.dot")))?;
        extra.push((format!("signal_{f}_tree_size"), tree.size().to_string()));
        extra.push((
            format!("signal_{f}_layer_counts"),
            format!("{:?}", tree.layer_counts()),
        ));
    }
    extra.push((
        "elapsed_ms".into(),
        format!("{:.3}", start.elapsed().as_secs_f64() * 1e3),
    ));
    write_manifest(cfg, &extra)?;
    Ok(())
}

pub fn cmd_fit(dataset_dir: &FsPath, cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = data_io::load_dataset(dataset_dir, cfg.shift_kind)?;
    let mut items = Vec::new();
    for item in &dataset.items {
        let wb = workbench_from_shift(item.shift.clone(), cfg)?;
        for f in 0..item.signals.ncols() {
            let x = GraphSignal::new(item.signals.column(f).clone_owned());
            let wb_op = BankOperator::new(
                &wb.shift,
                Some(&wb.spectrum),
                &wb.bank,
                match cfg.backend {
                    BackendChoice::Spectral => FilterBackend::Spectral,
                    BackendChoice::Poly => FilterBackend::Polynomial {
                        order: cfg.cheb_order,
                    },
                },
            )?;
            items.push((wb_op, x));
        }
    }
    let tree = fit_tree(&items, cfg.l, cfg.tau, cfg.rule, cfg.budget)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Input(e.to_string()))?;
    data_io::save_tree_json(&tree, &cfg.out.join("consensus_tree.json"))?;
    data_io::save_tree_dot(&tree, &cfg.out.join("consensus_tree.dot"))?;
    write_manifest(
        cfg,
        &[
            ("dataset_manifest".into(), dataset.manifest.clone()),
            ("training_signals".into(), items.len().to_string()),
            ("tree_size".into(), tree.size().to_string()),
        ],
    )?;
    Ok(())
}

fn first_signal(signals: &FsPath, n: usize) -> Result<GraphSignal, CliError> {
    let matrix = load_signals(signals, n)?;
    Ok(GraphSignal::new(matrix.column(0).clone_owned()))
}

pub fn cmd_stability(
    graph: &FsPath,
    signals: &FsPath,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let wb = build_workbench(graph, cfg)?;
    let x = first_signal(signals, wb.shift.n())?;
    if x.norm() == 0.0 {
        return Err(CliError::Input("input signal has zero norm".into()));
    }
    let (_, tree) = pgst(&wb.op, &x, cfg.l, cfg.tau, cfg.budget)?;
    let f_counts = tree.layer_counts_padded(cfg.l);
    let psi = transform_with_tree(&wb.op, &x, &tree)?;
    let scale = 1.0 / (tree.size() as f64).sqrt();
    let b = wb.bank.frame_upper();
    let c0 = wb.bank.lipschitz();

    let mut rows = String::from("trial,snr_db,measured,bound,holds,tree_diff\n");
    let mut reports: Vec<BoundReport> = Vec::new();
    for (si, &snr) in cfg.snr.iter().enumerate() {
        let eps = snr_to_energy(&x, snr)?;
        for trial in 0..cfg.trials {
            let seed = cfg.seed + (si * cfg.trials + trial) as u64;
            let (measured, bound, diff, ref_norm) = match cfg.perturb {
                PerturbTarget::Signal => {
                    let p = match cfg.mode {
                        NoiseMode::Random => perturb_random(&wb.spectrum, eps, seed)?,
                        NoiseMode::Localized => {
                            let mut rng = seeded_rng(seed);
                            let idx = rng.random_range(0..wb.spectrum.n());
                            perturb_localized(&wb.spectrum, eps, idx, seed)?
                        }
                    };
                    let x_tilde = p.apply(&x);
                    let psi_tilde = transform_with_tree(&wb.op, &x_tilde, &tree)?;
                    let measured = psi.distance(&psi_tilde) * scale;
                    let bound = bound_pgst_signal(b, &f_counts, p.norm())?;
                    let (_, tree_tilde) = pgst(&wb.op, &x_tilde, cfg.l, cfg.tau, cfg.budget)?;
                    let diff = tree_diff(&tree, &tree_tilde)?.count;
                    (measured, bound, diff, p.norm())
                }
                PerturbTarget::Eigen => {
                    let sp = perturb_structure_eigen(
                        &wb.shift,
                        &wb.spectrum,
                        snr,
                        cfg.mode == NoiseMode::Localized,
                        seed,
                    )?;
                    let wb_tilde = workbench_from_shift(sp.shift_tilde.clone(), cfg)?;
                    let psi_tilde = transform_with_tree(&wb_tilde.op, &x, &tree)?;
                    let measured = psi.distance(&psi_tilde) * scale;
                    // No eligibility certificate here; the structural
                    // formula with the empirical relative error is reported
                    // as a reference value only.
                    let s_dense = wb.shift.to_dense();
                    let rel = (wb_tilde.shift.to_dense() - &s_dense).norm() / s_dense.norm();
                    let bound = bound_pgst_structural(rel, c0, b, &f_counts, x.norm())?;
                    let (_, tree_tilde) =
                        pgst(&wb_tilde.op, &x, cfg.l, cfg.tau, cfg.budget)?;
                    let diff = tree_diff(&tree, &tree_tilde)?.count;
                    (measured, bound, diff, x.norm())
                }
                PerturbTarget::Relative => {
                    // Interpret SNR through the eligibility size: a fixed
                    // small eps rather than signal energy.
                    let eps_rel = 10f64.powf(-snr / 20.0).min(0.5);
                    let delta = make_eligible_delta(wb.shift.n(), eps_rel, seed);
                    let sp = perturb_structure_relative(&wb.shift, &delta)?;
                    let wb_tilde = workbench_from_shift(sp.shift_tilde.clone(), cfg)?;
                    let psi_tilde = transform_with_tree(&wb_tilde.op, &x, &tree)?;
                    let measured = psi.distance(&psi_tilde) * scale;
                    let bound = bound_pgst_structural(eps_rel, c0, b, &f_counts, x.norm())?;
                    let (_, tree_tilde) =
                        pgst(&wb_tilde.op, &x, cfg.l, cfg.tau, cfg.budget)?;
                    let diff = tree_diff(&tree, &tree_tilde)?.count;
                    (measured, bound, diff, x.norm())
                }
            };
            let report = BoundReport::new(measured, bound, b, &f_counts, c0, eps, ref_norm);
            rows.push_str(&format!(
                "{trial},{snr},{},{},{},{diff}\n",
                fmt_f64(measured),
                fmt_f64(bound),
                report.holds
            ));
            reports.push(report);
        }
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(cfg.out.join("stability.csv"), rows)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let json = serde_json::to_string_pretty(&reports)
        .map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(cfg.out.join("stability.json"), json)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let violations = reports.iter().filter(|r| !r.holds).count();
    write_manifest(
        cfg,
        &[
            ("tree_size".into(), tree.size().to_string()),
            ("bound_violations".into(), violations.to_string()),
        ],
    )?;
    Ok(())
}

fn median_usize(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Paired random-vs-localized comparison at matched perturbation energy.
pub struct SensitivityOutcome {
    pub median_random: f64,
    pub median_localized: f64,
}

pub fn run_sensitivity(
    wb: &Workbench,
    x: &GraphSignal,
    snr: f64,
    cfg: &RunConfig,
) -> Result<(SensitivityOutcome, String, ScatteringTree, ScatteringTree), CliError> {
    let eps = snr_to_energy(x, snr)?;
    let (_, tree0) = pgst(&wb.op, x, cfg.l, cfg.tau, cfg.budget)?;
    let mut rows = String::from("trial,snr_db,diff_random,diff_localized\n");
    let mut random_diffs = Vec::new();
    let mut localized_diffs = Vec::new();
    let mut last_trees = None;
    for trial in 0..cfg.trials {
        let seed = cfg.seed + trial as u64;
        let p_random = perturb_random(&wb.spectrum, eps, seed)?;
        let mut rng = seeded_rng(seed ^ 0x5EED);
        let idx = rng.random_range(0..wb.spectrum.n());
        let p_localized = perturb_localized(&wb.spectrum, eps, idx, seed)?;
        let (_, t_random) = pgst(&wb.op, &p_random.apply(x), cfg.l, cfg.tau, cfg.budget)?;
        let (_, t_localized) =
            pgst(&wb.op, &p_localized.apply(x), cfg.l, cfg.tau, cfg.budget)?;
        let d_random = tree_diff(&tree0, &t_random)?.count;
        let d_localized = tree_diff(&tree0, &t_localized)?.count;
        rows.push_str(&format!("{trial},{snr},{d_random},{d_localized}\n"));
        random_diffs.push(d_random);
        localized_diffs.push(d_localized);
        last_trees = Some((t_random, t_localized));
    }
    let (t_random, t_localized) = last_trees
        .ok_or_else(|| CliError::Input("trials must be at least 1".into()))?;
    Ok((
        SensitivityOutcome {
            median_random: median_usize(&mut random_diffs),
            median_localized: median_usize(&mut localized_diffs),
        },
        rows,
        t_random,
        t_localized,
    ))
}

pub fn cmd_sensitivity(
    graph: &FsPath,
    signals: &FsPath,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let wb = build_workbench(graph, cfg)?;
    let x = first_signal(signals, wb.shift.n())?;
    let snr = cfg.snr.first().copied().unwrap_or(-20.0);
    let (outcome, rows, t_random, t_localized) = run_sensitivity(&wb, &x, snr, cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(cfg.out.join("sensitivity.csv"), rows)
        .map_err(|e| CliError::Input(e.to_string()))?;
    data_io::save_tree_dot(&t_random, &cfg.out.join("tree_random.dot"))?;
    data_io::save_tree_dot(&t_localized, &cfg.out.join("tree_localized.dot"))?;
    write_manifest(
        cfg,
        &[
            ("median_diff_random".into(), outcome.median_random.to_string()),
            (
                "median_diff_localized".into(),
                outcome.median_localized.to_string(),
            ),
        ],
    )?;
    Ok(())
}

pub fn cmd_bench(graph: &FsPath, signals: &FsPath, cfg: &RunConfig) -> Result<(), CliError> {
    let wb = build_workbench(graph, cfg)?;
    let x = first_signal(signals, wb.shift.n())?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Input(e.to_string()))?;

    let t0 = Instant::now();
    let (full_map, _) = gst(&wb.op, &x, cfg.l, cfg.budget)?;
    let gst_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let (pruned_map, tree) = pgst(&wb.op, &x, cfg.l, cfg.tau, cfg.budget)?;
    let pgst_ms = t1.elapsed().as_secs_f64() * 1e3;

    let mut table = String::from("transform\tfeatures\tms\n");
    table.push_str(&format!("gst\t{}\t{gst_ms:.3}\n", full_map.len()));
    table.push_str(&format!("pgst\t{}\t{pgst_ms:.3}\n", pruned_map.len()));
    table.push_str(&format!("speedup\t-\t{:.3}\n", gst_ms / pgst_ms));

    let mut extra = vec![
        ("gst_ms".into(), format!("{gst_ms:.3}")),
        ("pgst_ms".into(), format!("{pgst_ms:.3}")),
        ("tree_size".into(), tree.size().to_string()),
    ];

    if cfg.ablate_tau {
        // Log-spaced tau sweep up to B^2; |T| written to a deterministic
        // CSV, runtimes only to the text table.
        let b2 = wb.bank.frame_upper().powi(2);
        let lo = (b2 * 1e-4).max(1e-6);
        let steps = 8;
        let mut csv = String::from("tau,tree_size\n");
        for i in 0..steps {
            let t = lo * (b2 * 1.0001 / lo).powf(i as f64 / (steps - 1) as f64);
            let t_start = Instant::now();
            let (_, tree_t) = pgst(&wb.op, &x, cfg.l, t, cfg.budget)?;
            let ms = t_start.elapsed().as_secs_f64() * 1e3;
            csv.push_str(&format!("{},{}\n", fmt_f64(t), tree_t.size()));
            table.push_str(&format!("pgst tau={t:.6}\t{}\t{ms:.3}\n", tree_t.size()));
        }
        std::fs::write(cfg.out.join("ablate_tau.csv"), csv)
            .map_err(|e| CliError::Input(e.to_string()))?;
        extra.push(("ablate".into(), "tau".into()));
    }

    std::fs::write(cfg.out.join("bench.txt"), table)
        .map_err(|e| CliError::Input(e.to_string()))?;
    write_manifest(cfg, &extra)?;
    Ok(())
}

fn load_label_file(path: &FsPath) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn load_sample_matrix(path: &FsPath) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| {
                    CliError::Input(format!(
                        "{}:{}: '{c}' is not a number",
                        path.display(),
                        idx + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!(
            "{}: file contains no data",
            path.display()
        )));
    }
    Ok(rows)
}

/// Nearest-centroid classification on fixed-length feature rows.
pub fn nearest_centroid_accuracy(
    train: &[Vec<f64>],
    train_labels: &[String],
    test: &[Vec<f64>],
    test_labels: &[String],
) -> Result<f64, CliError> {
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(CliError::Input(
            "label count does not match sample count".into(),
        ));
    }
    let dim = train[0].len();
    if train.iter().chain(test.iter()).any(|r| r.len() != dim) {
        return Err(CliError::Input("inconsistent feature dimensions".into()));
    }
    let mut centroids: BTreeMap<&String, (DVector<f64>, usize)> = BTreeMap::new();
    for (row, label) in train.iter().zip(train_labels) {
        let entry = centroids
            .entry(label)
            .or_insert_with(|| (DVector::zeros(dim), 0));
        entry.0 += DVector::from_column_slice(row);
        entry.1 += 1;
    }
    let centroids: Vec<(&String, DVector<f64>)> = centroids
        .into_iter()
        .map(|(label, (sum, count))| (label, sum / count as f64))
        .collect();
    let mut correct = 0usize;
    for (row, label) in test.iter().zip(test_labels) {
        let v = DVector::from_column_slice(row);
        let predicted = centroids
            .iter()
            .min_by(|a, b| (&v - &a.1).norm().total_cmp(&(&v - &b.1).norm()))
            .map(|(l, _)| *l)
            .expect("at least one centroid");
        if predicted == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

pub fn cmd_classify_smoke(
    train: &FsPath,
    train_labels: &FsPath,
    test: &FsPath,
    test_labels: &FsPath,
    cfg: &RunConfig,
) -> Result<f64, CliError> {
    let train_rows = load_sample_matrix(train)?;
    let test_rows = load_sample_matrix(test)?;
    let train_y = load_label_file(train_labels)?;
    let test_y = load_label_file(test_labels)?;
    let accuracy = nearest_centroid_accuracy(&train_rows, &train_y, &test_rows, &test_y)?;
    write_manifest(cfg, &[("accuracy".into(), format!("{accuracy}"))])?;
    std::fs::write(cfg.out.join("accuracy.txt"), format!("{accuracy}\n"))
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(accuracy)
}
