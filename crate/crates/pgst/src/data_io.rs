//! Ingestion of graphs, signals, and point clouds; serialization of feature
//! maps and trees; seeded synthetic graph generators.
//!
//! All formats are plain text (TSV/CSV/JSON/DOT). Floats are written with 17
//! significant digits so every save/load pair round-trips exactly.

use std::collections::BTreeSet;
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_core::GraphShift;
use crate::scattering::{FeatureMap, Path, ScatteringTree};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: file contains no data")]
    Empty(String),
    #[error("signal file has {found} rows, graph has {expected} nodes")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("k-nn requires m > k >= 1, got m = {m}, k = {k}")]
    InvalidK { m: usize, k: usize },
    #[error("coordinates must be finite")]
    NonFinitePoint,
    #[error("invalid tree file: {0}")]
    InvalidTree(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Deterministic RNG used across generators and test suites.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Formats a float with 17 significant digits; round-trips through `parse`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeListFormat {
    /// `u<TAB>v<TAB>w`
    TsvUvw,
    /// `u<TAB>v`, unit weights
    TsvUv,
}

/// Edge tuples plus the inferred node count (1 + max index). Callers may
/// override `n` upward for graphs with trailing isolated nodes.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize, f64)>,
    pub n: usize,
}

pub fn load_edge_list(path: &FsPath, format: EdgeListFormat) -> Result<EdgeList, DataError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut edges = Vec::new();
    let mut n = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = match format {
            EdgeListFormat::TsvUvw => 3,
            EdgeListFormat::TsvUv => 2,
        };
        if fields.len() != expected {
            return Err(DataError::Malformed {
                path: display,
                line: line_no,
                message: format!("expected {expected} tab-separated fields, got {}", fields.len()),
            });
        }
        let parse_idx = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| DataError::Malformed {
                path: display.clone(),
                line: line_no,
                message: format!("{what} '{s}' is not a node index"),
            })
        };
        let u = parse_idx(fields[0], "source")?;
        let v = parse_idx(fields[1], "target")?;
        let w = match format {
            EdgeListFormat::TsvUv => 1.0,
            EdgeListFormat::TsvUvw => {
                fields[2].parse::<f64>().map_err(|_| DataError::Malformed {
                    path: display.clone(),
                    line: line_no,
                    message: format!("weight '{}' is not a number", fields[2]),
                })?
            }
        };
        n = n.max(u + 1).max(v + 1);
        edges.push((u, v, w));
    }
    if edges.is_empty() {
        return Err(DataError::Empty(display));
    }
    Ok(EdgeList { edges, n })
}

pub fn save_edge_list(edges: &[(usize, usize, f64)], path: &FsPath) -> Result<(), DataError> {
    let mut out = String::new();
    for &(u, v, w) in edges {
        out.push_str(&format!("{u}\t{v}\t{}\n", fmt_f64(w)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads an N x F signal matrix from CSV (no header); column f is signal f.
pub fn load_signals(path: &FsPath, n: usize) -> Result<DMatrix<f64>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Err(DataError::Malformed {
                        path: display.clone(),
                        line: line_no,
                        message: "empty cell".into(),
                    });
                }
                cell.parse::<f64>().map_err(|_| DataError::Malformed {
                    path: display.clone(),
                    line: line_no,
                    message: format!("'{cell}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(DataError::Malformed {
                    path: display,
                    line: line_no,
                    message: format!("row has {} columns, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(DataError::Empty(display));
    }
    if rows.len() != n {
        return Err(DataError::RowCountMismatch {
            expected: n,
            found: rows.len(),
        });
    }
    let f = width.unwrap();
    Ok(DMatrix::from_fn(n, f, |i, j| rows[i][j]))
}

pub fn save_signals(signals: &DMatrix<f64>, path: &FsPath) -> Result<(), DataError> {
    let mut out = String::new();
    for i in 0..signals.nrows() {
        let row: Vec<String> = (0..signals.ncols())
            .map(|j| fmt_f64(signals[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// k-nearest-neighbor graph over row-vector points, symmetrized by union:
/// u ~ v iff v is among u's k nearest or vice versa. Distance ties break
/// toward the smaller index, so the construction is deterministic.
pub fn knn_graph(points: &DMatrix<f64>, k: usize) -> Result<EdgeList, DataError> {
    let m = points.nrows();
    if k < 1 || k >= m {
        return Err(DataError::InvalidK { m, k });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinitePoint);
    }
    let mut edge_set: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 0..m {
        let mut others: Vec<(f64, usize)> = (0..m)
            .filter(|&v| v != u)
            .map(|v| {
                let d2 = (points.row(u) - points.row(v)).norm_squared();
                (d2, v)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, v) in &others[..k] {
            edge_set.insert((u.min(v), u.max(v)));
        }
    }
    Ok(EdgeList {
        edges: edge_set.into_iter().map(|(u, v)| (u, v, 1.0)).collect(),
        n: m,
    })
}

/// Erdős–Rényi G(n, p) with unit weights.
pub fn make_er(n: usize, p: f64, seed: u64) -> EdgeList {
    let mut rng = seeded_rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    EdgeList { edges, n }
}

/// Stochastic block model: within-block edges with probability `p_in`,
/// across-block with `p_out`.
pub fn make_sbm(blocks: &[usize], p_in: f64, p_out: f64, seed: u64) -> EdgeList {
    let n: usize = blocks.iter().sum();
    let mut block_of = Vec::with_capacity(n);
    for (b, &size) in blocks.iter().enumerate() {
        block_of.extend(std::iter::repeat(b).take(size));
    }
    let mut rng = seeded_rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    EdgeList { edges, n }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFormat {
    Csv,
    Json,
    Dot,
}

pub fn save_feature_map(map: &FeatureMap, path: &FsPath) -> Result<(), DataError> {
    let mut out = String::from("path,coefficient\n");
    for (p, c) in map.entries() {
        out.push_str(&format!("{p},{}\n", fmt_f64(*c)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_feature_map(path: &FsPath) -> Result<FeatureMap, DataError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 {
            if raw.trim() != "path,coefficient" {
                return Err(DataError::Malformed {
                    path: display,
                    line: 1,
                    message: "expected header 'path,coefficient'".into(),
                });
            }
            continue;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (p, c) = line.split_once(',').ok_or_else(|| DataError::Malformed {
            path: display.clone(),
            line: line_no,
            message: "expected 'path,coefficient'".into(),
        })?;
        let parsed_path = p.parse::<Path>().map_err(|_| DataError::Malformed {
            path: display.clone(),
            line: line_no,
            message: format!("'{p}' is not a path"),
        })?;
        let coeff = c.parse::<f64>().map_err(|_| DataError::Malformed {
            path: display.clone(),
            line: line_no,
            message: format!("'{c}' is not a number"),
        })?;
        entries.push((parsed_path, coeff));
    }
    if entries.is_empty() {
        return Err(DataError::Empty(display));
    }
    Ok(FeatureMap::from_entries(entries))
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeDocument {
    paths: Vec<String>,
    flags: Vec<bool>,
    ratios: Vec<f64>,
    layer_counts: Vec<usize>,
    tau: f64,
    #[serde(rename = "J")]
    j: usize,
    #[serde(rename = "L")]
    l: usize,
}

pub fn tree_to_json(tree: &ScatteringTree) -> Result<String, DataError> {
    let doc = TreeDocument {
        paths: tree.nodes().keys().map(|p| p.to_string()).collect(),
        flags: tree.nodes().values().map(|n| n.active).collect(),
        ratios: tree.nodes().values().map(|n| n.energy_ratio).collect(),
        layer_counts: tree.layer_counts().to_vec(),
        tau: tree.tau,
        j: tree.j_count,
        l: tree.depth,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn save_tree_json(tree: &ScatteringTree, path: &FsPath) -> Result<(), DataError> {
    let mut text = tree_to_json(tree)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_tree_json(path: &FsPath) -> Result<ScatteringTree, DataError> {
    let text = std::fs::read_to_string(path)?;
    let doc: TreeDocument = serde_json::from_str(&text)?;
    if doc.paths.len() != doc.flags.len() || doc.paths.len() != doc.ratios.len() {
        return Err(DataError::InvalidTree(
            "paths, flags, and ratios must have equal length".into(),
        ));
    }
    let records = doc
        .paths
        .iter()
        .zip(doc.ratios.iter())
        .zip(doc.flags.iter())
        .map(|((p, &r), &f)| {
            let parsed = p
                .parse::<Path>()
                .map_err(|_| DataError::InvalidTree(format!("bad path '{p}'")))?;
            Ok((parsed, r, f))
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    let tree = ScatteringTree::from_structure(records, doc.tau, doc.l, doc.j);
    tree.check_prefix_closed()
        .map_err(|e| DataError::InvalidTree(e.to_string()))?;
    Ok(tree)
}

/// DOT rendering of a tree. Active nodes are boxes labeled with their path;
/// children pruned away at the expansion frontier appear as dashed point
/// nodes with dashed edges.
pub fn tree_to_dot(tree: &ScatteringTree) -> String {
    let mut out = String::from("digraph scattering_tree {\n  rankdir=TB;\n");
    for (path, node) in tree.nodes() {
        out.push_str(&format!(
            "  \"{path}\" [shape=box, label=\"{path}\\nratio={:.4}\"];\n",
            node.energy_ratio
        ));
    }
    for path in tree.nodes().keys() {
        if path.len() + 1 >= tree.depth {
            continue;
        }
        for j in 1..=tree.j_count {
            let child = path.child(j as u16);
            if tree.contains(&child) {
                out.push_str(&format!("  \"{path}\" -> \"{child}\";\n"));
            } else {
                out.push_str(&format!(
                    "  \"pruned_{child}\" [shape=point, style=dashed];\n  \"{path}\" -> \"pruned_{child}\" [style=dashed];\n"
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

pub fn save_tree_dot(tree: &ScatteringTree, path: &FsPath) -> Result<(), DataError> {
    std::fs::write(path, tree_to_dot(tree))?;
    Ok(())
}

/// One dataset item: a graph, its signal matrix, and an optional label.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub shift: GraphShift,
    pub signals: DMatrix<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub manifest: String,
}

/// Loads a directory of `NAME.graph` (TSV u/v/w) and `NAME.signals.csv`
/// pairs, with optional one-line `NAME.label` files.
pub fn load_dataset(dir: &FsPath, kind: crate::graph_core::ShiftKind) -> Result<Dataset, DataError> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".graph") {
            names.push(stem.to_string());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(DataError::Empty(dir.display().to_string()));
    }
    let mut items = Vec::new();
    for name in &names {
        let edge_list = load_edge_list(&dir.join(format!("{name}.graph")), EdgeListFormat::TsvUvw)?;
        let shift = GraphShift::build(&edge_list.edges, edge_list.n, kind).map_err(|e| {
            DataError::InvalidTree(format!("{name}.graph: {e}"))
        })?;
        let signals = load_signals(&dir.join(format!("{name}.signals.csv")), shift.n())?;
        let label_path = dir.join(format!("{name}.label"));
        let label = if label_path.exists() {
            Some(std::fs::read_to_string(&label_path)?.trim().to_string())
        } else {
            None
        };
        items.push(DatasetItem {
            name: name.clone(),
            shift,
            signals,
            label,
        });
    }
    let manifest = format!(
        "items = {}; names = [{}]",
        items.len(),
        names.join(", ")
    );
    Ok(Dataset { items, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_core::ShiftKind;
    use crate::scattering::{
        pgst, BankOperator, DEFAULT_NODE_BUDGET,
    };
    use crate::filter_banks::{FilterBank, WaveletFamily};
    use crate::graph_core::{FilterBackend, GraphSignal, Spectrum};
    use nalgebra::DVector;

    #[test]
    fn edge_list_parsing_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.tsv");
        std::fs::write(&path, "# a comment\n0\t1\n1\t2\n").unwrap();
        let el = load_edge_list(&path, EdgeListFormat::TsvUv).unwrap();
        assert_eq!(el.n, 3);
        assert_eq!(el.edges, vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "0\t1\t1.0\nnope\t2\t1.0\n").unwrap();
        let err = load_edge_list(&path, EdgeListFormat::TsvUvw).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        let empty = dir.path().join("empty.tsv");
        std::fs::write(&empty, "# only comments\n").unwrap();
        assert!(matches!(
            load_edge_list(&empty, EdgeListFormat::TsvUv),
            Err(DataError::Empty(_))
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.tsv");
        let edges = vec![(0, 3, 0.25), (1, 2, 1.75), (0, 1, 1.0 / 3.0)];
        save_edge_list(&edges, &path).unwrap();
        let el = load_edge_list(&path, EdgeListFormat::TsvUvw).unwrap();
        assert_eq!(el.edges, edges);
        assert_eq!(el.n, 4);
    }

    #[test]
    fn signals_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut rng = seeded_rng(5);
        let m = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        save_signals(&m, &path).unwrap();
        let loaded = load_signals(&path, 6).unwrap();
        assert_eq!(m, loaded);

        assert!(matches!(
            load_signals(&path, 7),
            Err(DataError::RowCountMismatch { expected: 7, found: 6 })
        ));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1.0,2.0\n1.0,oops\n").unwrap();
        let err = load_signals(&bad, 2).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn all_ones_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ones.csv");
        std::fs::write(&path, "1\n1\n1\n1\n").unwrap();
        let m = load_signals(&path, 4).unwrap();
        assert_eq!(m, DMatrix::from_element(4, 1, 1.0));
    }

    #[test]
    fn knn_collinear_hand_example() {
        // Points at 0, 1, 3 on a line: 0's nearest is 1, 1's nearest is 0
        // (distance 1 vs 2), 2's nearest is 1. Union gives {(0,1),(1,2)}.
        let points = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let el = knn_graph(&points, 1).unwrap();
        assert_eq!(el.edges, vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }

    #[test]
    fn knn_complete_and_symmetric() {
        let mut rng = seeded_rng(11);
        let points = DMatrix::from_fn(7, 2, |_, _| rng.random::<f64>());
        let el = knn_graph(&points, 6).unwrap();
        assert_eq!(el.edges.len(), 7 * 6 / 2);
        // Symmetry of the induced adjacency.
        let shift = GraphShift::build(&el.edges, el.n, ShiftKind::Adjacency).unwrap();
        let dense = shift.to_dense();
        assert_eq!(dense, dense.transpose());
        assert!(matches!(
            knn_graph(&points, 7),
            Err(DataError::InvalidK { .. })
        ));
    }

    #[test]
    fn knn_duplicate_points_tie_break() {
        let points = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 0.0]);
        let el = knn_graph(&points, 1).unwrap();
        // Everyone's nearest at distance 0 is the smallest other index.
        assert_eq!(el.edges, vec![(0, 1, 1.0), (0, 2, 1.0)]);
    }

    #[test]
    fn knn_permutation_consistency() {
        let mut rng = seeded_rng(17);
        let points = DMatrix::from_fn(9, 3, |_, _| rng.random::<f64>());
        let base = knn_graph(&points, 3).unwrap();
        let perm: Vec<usize> = vec![3, 1, 7, 0, 8, 2, 5, 6, 4];
        let permuted_points = DMatrix::from_fn(9, 3, |i, j| points[(perm[i], j)]);
        let permuted = knn_graph(&permuted_points, 3).unwrap();
        // Map the permuted graph's edges back through the relabeling.
        let mut inverse = vec![0usize; 9];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mapped: BTreeSet<(usize, usize)> = base
            .edges
            .iter()
            .map(|&(u, v, _)| {
                let (a, b) = (inverse[u], inverse[v]);
                (a.min(b), a.max(b))
            })
            .collect();
        let got: BTreeSet<(usize, usize)> =
            permuted.edges.iter().map(|&(u, v, _)| (u, v)).collect();
        assert_eq!(mapped, got);
    }

    #[test]
    fn sbm_disjoint_triangles() {
        let el = make_sbm(&[3, 3], 1.0, 0.0, 1);
        assert_eq!(el.n, 6);
        let expected = vec![
            (0, 1, 1.0),
            (0, 2, 1.0),
            (1, 2, 1.0),
            (3, 4, 1.0),
            (3, 5, 1.0),
            (4, 5, 1.0),
        ];
        assert_eq!(el.edges, expected);
    }

    #[test]
    fn er_empty_and_density() {
        assert!(make_er(20, 0.0, 3).edges.is_empty());
        // Mean density within 3 sigma of the binomial expectation over 100
        // seeds.
        let n = 30;
        let p = 0.2;
        let pairs = (n * (n - 1) / 2) as f64;
        let total: usize = (0..100).map(|s| make_er(n, p, s).edges.len()).sum();
        let mean = total as f64 / 100.0;
        let sigma = (pairs * p * (1.0 - p) / 100.0).sqrt();
        assert!(
            (mean - pairs * p).abs() <= 3.0 * sigma,
            "mean = {mean}, expected = {}",
            pairs * p
        );
    }

    #[test]
    fn generators_are_seed_deterministic() {
        assert_eq!(make_er(25, 0.3, 9).edges, make_er(25, 0.3, 9).edges);
        assert_ne!(make_er(25, 0.3, 9).edges, make_er(25, 0.3, 10).edges);
        assert_eq!(
            make_sbm(&[5, 5], 0.8, 0.1, 4).edges,
            make_sbm(&[5, 5], 0.8, 0.1, 4).edges
        );
    }

    fn sample_tree() -> (ScatteringTree, FeatureMap) {
        let el = make_er(12, 0.4, 21);
        let shift = GraphShift::build(&el.edges, el.n, ShiftKind::NormalizedLaplacian).unwrap();
        let spectrum = Spectrum::eigendecompose(&shift).unwrap();
        let bank = FilterBank::make((0.0, 2.0), WaveletFamily::TightHann, 3).unwrap();
        let op = BankOperator::new(&shift, Some(&spectrum), &bank, FilterBackend::Spectral)
            .unwrap();
        let mut rng = seeded_rng(22);
        let x = GraphSignal::new(DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5));
        let (map, tree) = pgst(&op, &x, 3, 0.05, DEFAULT_NODE_BUDGET).unwrap();
        (tree, map)
    }

    #[test]
    fn feature_map_csv_round_trip() {
        let (_, map) = sample_tree();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        save_feature_map(&map, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,coefficient\n"));
        assert_eq!(text.lines().count(), map.len() + 1);
        let loaded = load_feature_map(&path).unwrap();
        assert_eq!(map.entries(), loaded.entries());
    }

    #[test]
    fn tree_json_round_trip_and_keys() {
        let (tree, _) = sample_tree();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tree.json");
        save_tree_json(&tree, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["\"paths\"", "\"flags\"", "\"ratios\"", "\"layer_counts\"", "\"tau\"", "\"J\"", "\"L\""] {
            assert!(text.contains(key), "missing {key}");
        }
        let loaded = load_tree_json(&path).unwrap();
        assert_eq!(loaded.size(), tree.size());
        assert_eq!(loaded.layer_counts(), tree.layer_counts());
        assert_eq!(loaded.tau, tree.tau);
        assert_eq!(loaded.j_count, tree.j_count);
        let a: Vec<_> = tree.active_paths().cloned().collect();
        let b: Vec<_> = loaded.active_paths().cloned().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn root_only_tree_layer_counts() {
        let tree = ScatteringTree::from_structure(
            [(Path::root(), 1.0, true)],
            0.5,
            1,
            3,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("root.json");
        save_tree_json(&tree, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"layer_counts\": [\n    1\n  ]"), "{text}");
    }

    #[test]
    fn dot_counts_on_hand_built_tree() {
        // Root with children 1 and 3 kept out of J = 3; child 2 pruned.
        let tree = ScatteringTree::from_structure(
            [
                (Path::root(), 1.0, true),
                (Path::from_indices(&[1]), 0.6, true),
                (Path::from_indices(&[3]), 0.3, true),
            ],
            0.1,
            2,
            3,
        );
        let dot = tree_to_dot(&tree);
        assert_eq!(dot.matches("shape=box").count(), 3);
        assert_eq!(dot.matches("style=dashed]").count(), 2); // node + edge for branch 2
        assert!(dot.contains("\"root\" -> \"1\";"));
        assert!(dot.contains("\"root\" -> \"pruned_2\" [style=dashed];"));
    }

    #[test]
    fn dataset_directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.graph"), "0\t1\t1.0\n1\t2\t1.0\n").unwrap();
        std::fs::write(dir.path().join("a.signals.csv"), "1.0\n2.0\n3.0\n").unwrap();
        std::fs::write(dir.path().join("a.label"), "left\n").unwrap();
        std::fs::write(dir.path().join("b.graph"), "0\t1\t1.0\n").unwrap();
        std::fs::write(dir.path().join("b.signals.csv"), "1.0,0.5\n2.0,0.25\n").unwrap();
        let ds = load_dataset(dir.path(), ShiftKind::Adjacency).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.items[0].name, "a");
        assert_eq!(ds.items[0].label.as_deref(), Some("left"));
        assert_eq!(ds.items[0].signals.nrows(), 3);
        assert_eq!(ds.items[1].label, None);
        assert_eq!(ds.items[1].signals.ncols(), 2);
        assert!(ds.manifest.contains("items = 2"));
    }

    #[test]
    fn fmt_round_trips_exactly() {
        let values = [1.0 / 3.0, std::f64::consts::PI, -0.0, 1e-300, 6.25e17];
        for v in values {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
