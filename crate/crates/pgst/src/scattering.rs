//! The scattering tree: full transform, energy-ratio pruning, top-K
//! selection, consensus-tree fitting, and fixed-tree evaluation.
//!
//! A node at layer l holds z = sigma(h_j(S) z_parent) with sigma the
//! elementwise absolute value, its aggregated coefficient phi = mean(z), and
//! the energy ratio ||z||^2 / ||z_parent||^2 that drives pruning. The pruned
//! transform expands a node only while its ratio strictly exceeds tau; no GFT
//! is ever taken during pruning.

use std::collections::BTreeMap;

use nalgebra::DVector;
use thiserror::Error;

use crate::filter_banks::FilterBank;
use crate::graph_core::{ChebyshevFit, FilterBackend, GraphError, GraphShift, GraphSignal, Spectrum};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ScatterError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("depth must be at least 1")]
    InvalidDepth,
    #[error("transform would create {estimated} nodes, exceeding the budget of {budget}")]
    BudgetExceeded { estimated: usize, budget: usize },
    #[error("input signal has zero norm")]
    ZeroInput,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("top-k count {k} outside 1..={j}")]
    InvalidTopK { k: usize, j: usize },
    #[error("tree shape (J = {tree_j}) inconsistent with bank (J = {bank_j})")]
    IncompatibleTree { tree_j: usize, bank_j: usize },
    #[error("tree is not prefix-closed at path {0}")]
    NotPrefixClosed(Path),
}

/// Sequence of 1-based branch indices; the empty path is the root.
///
/// Ordered breadth-first (by length) then lexicographically, so iterating a
/// `BTreeMap<Path, _>` yields the deterministic feature-map order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Path(Vec<u16>);

impl Path {
    pub fn root() -> Path {
        Path(Vec::new())
    }

    pub fn from_indices(indices: &[u16]) -> Path {
        Path(indices.to_vec())
    }

    pub fn child(&self, j: u16) -> Path {
        let mut v = self.0.clone();
        v.push(j);
        Path(v)
    }

    pub fn parent(&self) -> Option<Path> {
        if self.0.is_empty() {
            None
        } else {
            Path(self.0[..self.0.len() - 1].to_vec()).into()
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[u16] {
        &self.0
    }
}

impl PartialOrd for Path {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Path {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            write!(f, "root")
        } else {
            let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
            write!(f, "{}", parts.join("-"))
        }
    }
}

impl std::str::FromStr for Path {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "root" || s.is_empty() {
            return Ok(Path::root());
        }
        let indices = s
            .split('-')
            .map(|p| p.parse::<u16>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Path(indices))
    }
}

/// One tree node: its feature vector, aggregated coefficient, and the
/// pruning statistics.
#[derive(Debug, Clone)]
pub struct ScatteringNode {
    pub path: Path,
    /// Empty for structure-only trees (consensus fitting).
    pub z: DVector<f64>,
    pub phi: f64,
    /// ||z||^2 / ||z_parent||^2; 1 at the root.
    pub energy_ratio: f64,
    pub active: bool,
}

/// Path-keyed collection of active nodes with layer bookkeeping.
#[derive(Debug, Clone)]
pub struct ScatteringTree {
    nodes: BTreeMap<Path, ScatteringNode>,
    layer_counts: Vec<usize>,
    pub tau: f64,
    pub depth: usize,
    pub j_count: usize,
}

impl ScatteringTree {
    fn from_nodes(
        nodes: BTreeMap<Path, ScatteringNode>,
        tau: f64,
        depth: usize,
        j_count: usize,
    ) -> ScatteringTree {
        let mut layer_counts = vec![0usize; depth];
        for path in nodes.keys() {
            layer_counts[path.len()] += 1;
        }
        while layer_counts.len() > 1 && *layer_counts.last().unwrap() == 0 {
            layer_counts.pop();
        }
        ScatteringTree {
            nodes,
            layer_counts,
            tau,
            depth,
            j_count,
        }
    }

    /// Rebuilds a structure-only tree from (path, energy ratio, active)
    /// records, e.g. after deserialization.
    pub fn from_structure(
        records: impl IntoIterator<Item = (Path, f64, bool)>,
        tau: f64,
        depth: usize,
        j_count: usize,
    ) -> ScatteringTree {
        let nodes = records
            .into_iter()
            .map(|(path, ratio, active)| {
                (
                    path.clone(),
                    ScatteringNode {
                        path,
                        z: DVector::zeros(0),
                        phi: 0.0,
                        energy_ratio: ratio,
                        active,
                    },
                )
            })
            .collect();
        ScatteringTree::from_nodes(nodes, tau, depth, j_count)
    }

    pub fn nodes(&self) -> &BTreeMap<Path, ScatteringNode> {
        &self.nodes
    }

    /// Active-node count per layer; F_0 = 1.
    pub fn layer_counts(&self) -> &[usize] {
        &self.layer_counts
    }

    /// |T|: total number of active nodes.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, path: &Path) -> bool {
        self.nodes.contains_key(path)
    }

    pub fn active_paths(&self) -> impl Iterator<Item = &Path> {
        self.nodes.keys()
    }

    /// Layer counts padded with zeros up to `len` entries (index = layer).
    pub fn layer_counts_padded(&self, len: usize) -> Vec<usize> {
        let mut counts = self.layer_counts.clone();
        counts.resize(len.max(counts.len()), 0);
        counts
    }

    pub fn check_prefix_closed(&self) -> Result<(), ScatterError> {
        for path in self.nodes.keys() {
            if let Some(parent) = path.parent() {
                if !self.nodes.contains_key(&parent) {
                    return Err(ScatterError::NotPrefixClosed(path.clone()));
                }
            }
        }
        Ok(())
    }

    /// Structure-only copy: drops feature vectors and coefficients.
    pub fn structure_only(&self) -> ScatteringTree {
        let nodes = self
            .nodes
            .iter()
            .map(|(p, node)| {
                (
                    p.clone(),
                    ScatteringNode {
                        path: node.path.clone(),
                        z: DVector::zeros(0),
                        phi: 0.0,
                        energy_ratio: node.energy_ratio,
                        active: node.active,
                    },
                )
            })
            .collect();
        ScatteringTree::from_nodes(nodes, self.tau, self.depth, self.j_count)
    }
}

/// Ordered (path, coefficient) pairs: Phi for the full transform, Psi for
/// the pruned one. Breadth-first then lexicographic by path.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    entries: Vec<(Path, f64)>,
}

impl FeatureMap {
    fn from_tree(tree: &ScatteringTree) -> FeatureMap {
        FeatureMap {
            entries: tree
                .nodes
                .iter()
                .map(|(p, node)| (p.clone(), node.phi))
                .collect(),
        }
    }

    /// Builds a map from explicit (path, coefficient) pairs; entries are
    /// re-sorted into the canonical order.
    pub fn from_entries(mut entries: Vec<(Path, f64)>) -> FeatureMap {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        FeatureMap { entries }
    }

    pub fn entries(&self) -> &[(Path, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, c)| *c).collect()
    }

    /// Euclidean distance over the union of paths, absent coefficients
    /// treated as zero.
    pub fn distance(&self, other: &FeatureMap) -> f64 {
        let a: BTreeMap<&Path, f64> = self.entries.iter().map(|(p, c)| (p, *c)).collect();
        let b: BTreeMap<&Path, f64> = other.entries.iter().map(|(p, c)| (p, *c)).collect();
        let mut sum = 0.0;
        for (p, &ca) in &a {
            let cb = b.get(p).copied().unwrap_or(0.0);
            sum += (ca - cb).powi(2);
        }
        for (p, &cb) in &b {
            if !a.contains_key(p) {
                sum += cb * cb;
            }
        }
        sum.sqrt()
    }
}

/// A filter bank bound to a graph with a fixed backend; precomputes whatever
/// the backend needs so one filter application is a pair of dense mat-vecs
/// (spectral) or K sparse mat-vecs (polynomial).
pub struct BankOperator {
    shift: GraphShift,
    backend_impl: BackendImpl,
    j_count: usize,
    frame_upper: f64,
    frame_lower: f64,
    lipschitz: f64,
}

enum BackendImpl {
    Spectral {
        spectrum: Spectrum,
        /// Per kernel: h_j evaluated at every eigenvalue.
        diag: Vec<DVector<f64>>,
    },
    Polynomial {
        fits: Vec<ChebyshevFit>,
    },
}

impl BankOperator {
    pub fn new(
        shift: &GraphShift,
        spectrum: Option<&Spectrum>,
        bank: &FilterBank,
        backend: FilterBackend,
    ) -> Result<BankOperator, ScatterError> {
        let backend_impl = match backend {
            FilterBackend::Spectral => {
                let spectrum = match spectrum {
                    Some(s) => s.clone(),
                    None => Spectrum::eigendecompose(shift)?,
                };
                let diag = bank
                    .kernels()
                    .iter()
                    .map(|k| {
                        DVector::from_fn(spectrum.n(), |i, _| k.eval(spectrum.eigenvalues()[i]))
                    })
                    .collect();
                BackendImpl::Spectral { spectrum, diag }
            }
            FilterBackend::Polynomial { order } => {
                let interval = spectrum
                    .map(|s| s.interval())
                    .or_else(|| shift.kind().known_interval())
                    .ok_or(GraphError::MissingSpectralInterval)?;
                let fits = bank
                    .kernels()
                    .iter()
                    .map(|k| ChebyshevFit::fit(|l| k.eval(l), interval, order))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(ScatterError::Graph)?;
                BackendImpl::Polynomial { fits }
            }
        };
        Ok(BankOperator {
            shift: shift.clone(),
            backend_impl,
            j_count: bank.j_count(),
            frame_upper: bank.frame_upper(),
            frame_lower: bank.frame_lower(),
            lipschitz: bank.lipschitz(),
        })
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn n(&self) -> usize {
        self.shift.n()
    }

    pub fn frame_upper(&self) -> f64 {
        self.frame_upper
    }

    pub fn frame_lower(&self) -> f64 {
        self.frame_lower
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn shift(&self) -> &GraphShift {
        &self.shift
    }

    /// h_j(S) z, no nonlinearity. `j` is 1-based.
    pub fn filter(&self, j: usize, z: &DVector<f64>) -> DVector<f64> {
        assert!(j >= 1 && j <= self.j_count, "branch index out of range");
        match &self.backend_impl {
            BackendImpl::Spectral { spectrum, diag } => {
                let mut z_hat = spectrum.basis().tr_mul(z);
                z_hat.component_mul_assign(&diag[j - 1]);
                spectrum.basis() * z_hat
            }
            BackendImpl::Polynomial { fits } => fits[j - 1]
                .apply(&self.shift, &GraphSignal::new(z.clone()))
                .into_inner(),
        }
    }
}

/// All J children of a node: sigma(h_j(S) z_parent) with sigma = abs.
pub fn scatter_node(op: &BankOperator, z_parent: &DVector<f64>) -> Vec<DVector<f64>> {
    assert_eq!(z_parent.len(), op.n(), "signal length must match node count");
    (1..=op.j_count())
        .map(|j| op.filter(j, z_parent).abs())
        .collect()
}

/// Aggregation U: the mean of the feature vector.
pub fn aggregate(z: &DVector<f64>) -> f64 {
    assert!(!z.is_empty());
    z.sum() / z.len() as f64
}

/// Per-branch activity flags: child j is retained iff its energy ratio
/// strictly exceeds tau (ties prune).
pub fn prune_decide(
    z_parent: &DVector<f64>,
    children: &[DVector<f64>],
    tau: f64,
) -> Result<Vec<bool>, ScatterError> {
    let parent_energy = z_parent.norm_squared();
    if parent_energy == 0.0 {
        return Err(ScatterError::ZeroInput);
    }
    Ok(children
        .iter()
        .map(|c| c.norm_squared() / parent_energy > tau)
        .collect())
}

/// Rate-distortion variant: keep the k children with the largest energy
/// ratios, ties broken toward the smaller branch index.
pub fn topk_prune(
    z_parent: &DVector<f64>,
    children: &[DVector<f64>],
    k: usize,
) -> Result<Vec<bool>, ScatterError> {
    let j = children.len();
    if k < 1 || k > j {
        return Err(ScatterError::InvalidTopK { k, j });
    }
    let parent_energy = z_parent.norm_squared();
    if parent_energy == 0.0 {
        return Err(ScatterError::ZeroInput);
    }
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| {
        children[b]
            .norm_squared()
            .total_cmp(&children[a].norm_squared())
            .then(a.cmp(&b))
    });
    let mut flags = vec![false; j];
    for &idx in &order[..k] {
        flags[idx] = true;
    }
    Ok(flags)
}

fn full_tree_size(j: usize, depth: usize) -> usize {
    let mut total = 0usize;
    let mut layer = 1usize;
    for _ in 0..depth {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(j);
    }
    total
}

/// Full scattering transform: the complete J-ary tree over layers 0..L-1.
pub fn gst(
    op: &BankOperator,
    x: &GraphSignal,
    depth: usize,
    budget: usize,
) -> Result<(FeatureMap, ScatteringTree), ScatterError> {
    if depth < 1 {
        return Err(ScatterError::InvalidDepth);
    }
    let estimated = full_tree_size(op.j_count(), depth);
    if estimated > budget {
        return Err(ScatterError::BudgetExceeded { estimated, budget });
    }
    expand(op, x, depth, ExpandRule::Full, budget)
}

/// Pruned scattering transform: depth-first expansion gated by the strict
/// energy-ratio rule. Pruning uses vector norms only.
pub fn pgst(
    op: &BankOperator,
    x: &GraphSignal,
    depth: usize,
    tau: f64,
    budget: usize,
) -> Result<(FeatureMap, ScatteringTree), ScatterError> {
    if depth < 1 {
        return Err(ScatterError::InvalidDepth);
    }
    if x.norm() == 0.0 {
        return Err(ScatterError::ZeroInput);
    }
    expand(op, x, depth, ExpandRule::EnergyRatio { tau }, budget)
}

enum ExpandRule {
    Full,
    EnergyRatio { tau: f64 },
}

fn expand(
    op: &BankOperator,
    x: &GraphSignal,
    depth: usize,
    rule: ExpandRule,
    budget: usize,
) -> Result<(FeatureMap, ScatteringTree), ScatterError> {
    let tau = match rule {
        ExpandRule::Full => 0.0,
        ExpandRule::EnergyRatio { tau } => tau,
    };
    let mut nodes = BTreeMap::new();
    nodes.insert(
        Path::root(),
        ScatteringNode {
            path: Path::root(),
            z: x.values().clone(),
            phi: aggregate(x.values()),
            energy_ratio: 1.0,
            active: true,
        },
    );

    // Depth-first expansion; the BTreeMap makes the final ordering
    // breadth-first regardless of the expansion schedule.
    let mut stack = vec![Path::root()];
    while let Some(path) = stack.pop() {
        if path.len() + 1 >= depth {
            continue;
        }
        let (z_parent, parent_energy) = {
            let node = &nodes[&path];
            (node.z.clone(), node.z.norm_squared())
        };
        if matches!(rule, ExpandRule::EnergyRatio { .. }) && parent_energy == 0.0 {
            // A zero node is itself pruned upstream; nothing to expand.
            continue;
        }
        let children = scatter_node(op, &z_parent);
        for (idx, z_child) in children.into_iter().enumerate() {
            let j = (idx + 1) as u16;
            let ratio = if parent_energy > 0.0 {
                z_child.norm_squared() / parent_energy
            } else {
                0.0
            };
            let keep = match rule {
                ExpandRule::Full => true,
                ExpandRule::EnergyRatio { tau } => ratio > tau,
            };
            if !keep {
                continue;
            }
            let child_path = path.child(j);
            nodes.insert(
                child_path.clone(),
                ScatteringNode {
                    path: child_path.clone(),
                    phi: aggregate(&z_child),
                    energy_ratio: ratio,
                    z: z_child,
                    active: true,
                },
            );
            if nodes.len() > budget {
                return Err(ScatterError::BudgetExceeded {
                    estimated: nodes.len(),
                    budget,
                });
            }
            stack.push(child_path);
        }
    }

    let tree = ScatteringTree::from_nodes(nodes, tau, depth, op.j_count());
    let map = FeatureMap::from_tree(&tree);
    Ok((map, tree))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusRule {
    MeanRatio,
    Union,
    Majority,
}

impl std::str::FromStr for ConsensusRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_ratio" | "mean" => Ok(ConsensusRule::MeanRatio),
            "union" => Ok(ConsensusRule::Union),
            "majority" => Ok(ConsensusRule::Majority),
            other => Err(format!("unknown consensus rule: {other}")),
        }
    }
}

/// Fits a shared tree structure over a training set, layer by layer so
/// prefix-closure holds by construction. The returned tree carries no
/// per-signal features.
pub fn fit_tree(
    items: &[(BankOperator, GraphSignal)],
    depth: usize,
    tau: f64,
    rule: ConsensusRule,
    budget: usize,
) -> Result<ScatteringTree, ScatterError> {
    if items.is_empty() {
        return Err(ScatterError::EmptyTrainingSet);
    }
    if depth < 1 {
        return Err(ScatterError::InvalidDepth);
    }
    let j_count = items[0].0.j_count();
    for (op, x) in items {
        if op.j_count() != j_count {
            return Err(ScatterError::IncompatibleTree {
                tree_j: j_count,
                bank_j: op.j_count(),
            });
        }
        if x.norm() == 0.0 {
            return Err(ScatterError::ZeroInput);
        }
    }

    let mut nodes = BTreeMap::new();
    nodes.insert(
        Path::root(),
        ScatteringNode {
            path: Path::root(),
            z: DVector::zeros(0),
            phi: 0.0,
            energy_ratio: 1.0,
            active: true,
        },
    );

    // Per-item feature vectors along the consensus frontier.
    let mut frontier: Vec<(Path, Vec<DVector<f64>>)> = vec![(
        Path::root(),
        items.iter().map(|(_, x)| x.values().clone()).collect(),
    )];

    for _layer in 0..depth.saturating_sub(1) {
        let mut next = Vec::new();
        for (path, zs) in &frontier {
            // Children per item; a zero parent contributes zero ratios.
            let mut per_item_children: Vec<Vec<DVector<f64>>> = Vec::with_capacity(items.len());
            let mut per_item_ratio: Vec<Vec<f64>> = Vec::with_capacity(items.len());
            for ((op, _), z) in items.iter().zip(zs) {
                let parent_energy = z.norm_squared();
                let children = scatter_node(op, z);
                let ratios = children
                    .iter()
                    .map(|c| {
                        if parent_energy > 0.0 {
                            c.norm_squared() / parent_energy
                        } else {
                            0.0
                        }
                    })
                    .collect();
                per_item_children.push(children);
                per_item_ratio.push(ratios);
            }
            for j in 0..j_count {
                let ratios: Vec<f64> = per_item_ratio.iter().map(|r| r[j]).collect();
                let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
                let active = match rule {
                    ConsensusRule::MeanRatio => mean > tau,
                    ConsensusRule::Union => ratios.iter().any(|&r| r > tau),
                    ConsensusRule::Majority => {
                        2 * ratios.iter().filter(|&&r| r > tau).count() > ratios.len()
                    }
                };
                if !active {
                    continue;
                }
                let child_path = path.child((j + 1) as u16);
                nodes.insert(
                    child_path.clone(),
                    ScatteringNode {
                        path: child_path.clone(),
                        z: DVector::zeros(0),
                        phi: 0.0,
                        energy_ratio: mean,
                        active: true,
                    },
                );
                if nodes.len() > budget {
                    return Err(ScatterError::BudgetExceeded {
                        estimated: nodes.len(),
                        budget,
                    });
                }
                next.push((
                    child_path,
                    per_item_children
                        .iter_mut()
                        .map(|c| std::mem::take(&mut c[j]))
                        .collect(),
                ));
            }
        }
        frontier = next;
    }

    Ok(ScatteringTree::from_nodes(nodes, tau, depth, j_count))
}

/// Evaluates the coefficients of a fixed tree on a new signal; no pruning
/// decisions are taken, zero-energy nodes simply yield phi = 0.
pub fn transform_with_tree(
    op: &BankOperator,
    x: &GraphSignal,
    tree: &ScatteringTree,
) -> Result<FeatureMap, ScatterError> {
    if tree.j_count != op.j_count() {
        return Err(ScatterError::IncompatibleTree {
            tree_j: tree.j_count,
            bank_j: op.j_count(),
        });
    }
    tree.check_prefix_closed()?;

    let mut features: BTreeMap<Path, (DVector<f64>, f64)> = BTreeMap::new();
    features.insert(Path::root(), (x.values().clone(), aggregate(x.values())));
    // BTreeMap order is breadth-first, so parents are visited before
    // children.
    for path in tree.nodes.keys() {
        if path.is_empty() {
            continue;
        }
        let parent = path.parent().expect("non-root path has a parent");
        let z_parent = &features[&parent].0;
        let j = *path.indices().last().unwrap() as usize;
        let z = op.filter(j, z_parent).abs();
        let phi = aggregate(&z);
        features.insert(path.clone(), (z, phi));
    }

    Ok(FeatureMap {
        entries: tree
            .nodes
            .keys()
            .map(|p| (p.clone(), features[p].1))
            .collect(),
    })
}
