//! Graph shift operators, eigendecomposition, the graph Fourier transform,
//! and graph filtering with exact-spectral and sparse-polynomial backends.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge ({u}, {v}) has non-finite weight")]
    NonFiniteWeight { u: usize, v: usize },
    #[error("negative weight {weight} on edge ({u}, {v}) not allowed for laplacian kinds")]
    NegativeWeight { u: usize, v: usize, weight: f64 },
    #[error("self-loop on node {node} not allowed for laplacian kinds")]
    SelfLoop { node: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shift matrix contains non-finite entries")]
    NonFiniteShift,
    #[error("polynomial backend requires a spectral interval")]
    MissingSpectralInterval,
    #[error("polynomial order must be at least 1")]
    InvalidChebyshevOrder,
}

/// Matrix realization of graph connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Adjacency,
    Laplacian,
    NormalizedAdjacency,
    NormalizedLaplacian,
}

impl ShiftKind {
    pub fn is_laplacian(self) -> bool {
        matches!(self, ShiftKind::Laplacian | ShiftKind::NormalizedLaplacian)
    }

    /// A-priori eigenvalue interval, when the kind guarantees one.
    pub fn known_interval(self) -> Option<(f64, f64)> {
        match self {
            ShiftKind::NormalizedAdjacency => Some((-1.0, 1.0)),
            ShiftKind::NormalizedLaplacian => Some((0.0, 2.0)),
            _ => None,
        }
    }
}

/// Sparse symmetric shift matrix S.
///
/// Entries are stored once per unordered pair (u <= v); matrix-vector
/// products expand the symmetric contribution on the fly, so one product
/// costs O(E) multiply-adds.
#[derive(Debug, Clone)]
pub struct GraphShift {
    n: usize,
    /// Stored with u <= v, accumulated, zero entries dropped.
    entries: Vec<(usize, usize, f64)>,
    kind: ShiftKind,
}

impl GraphShift {
    /// Builds the shift matrix of the requested kind from an undirected edge
    /// list. Duplicate edges (in either orientation) accumulate once.
    pub fn build(
        edges: &[(usize, usize, f64)],
        n: usize,
        kind: ShiftKind,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        for &(u, v, w) in edges {
            if u >= n {
                return Err(GraphError::IndexOutOfRange { index: u, n });
            }
            if v >= n {
                return Err(GraphError::IndexOutOfRange { index: v, n });
            }
            if !w.is_finite() {
                return Err(GraphError::NonFiniteWeight { u, v });
            }
            if kind.is_laplacian() {
                if w < 0.0 {
                    return Err(GraphError::NegativeWeight { u, v, weight: w });
                }
                if u == v {
                    return Err(GraphError::SelfLoop { node: u });
                }
            }
        }

        // Accumulate the undirected adjacency once per unordered pair.
        let mut weights = std::collections::BTreeMap::new();
        for &(u, v, w) in edges {
            let key = (u.min(v), u.max(v));
            *weights.entry(key).or_insert(0.0) += w;
        }

        let mut degrees = vec![0.0_f64; n];
        for (&(u, v), &w) in &weights {
            degrees[u] += w;
            if u != v {
                degrees[v] += w;
            }
        }

        let inv_sqrt_deg: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();

        let mut entries = Vec::new();
        match kind {
            ShiftKind::Adjacency => {
                for (&(u, v), &w) in &weights {
                    if w != 0.0 {
                        entries.push((u, v, w));
                    }
                }
            }
            ShiftKind::NormalizedAdjacency => {
                for (&(u, v), &w) in &weights {
                    let s = w * inv_sqrt_deg[u] * inv_sqrt_deg[v];
                    if s != 0.0 {
                        entries.push((u, v, s));
                    }
                }
            }
            ShiftKind::Laplacian => {
                for (&(u, v), &w) in &weights {
                    if w != 0.0 {
                        entries.push((u, v, -w));
                    }
                }
                for (node, &d) in degrees.iter().enumerate() {
                    if d != 0.0 {
                        entries.push((node, node, d));
                    }
                }
                entries.sort_unstable_by_key(|&(u, v, _)| (u, v));
            }
            ShiftKind::NormalizedLaplacian => {
                for (&(u, v), &w) in &weights {
                    let s = w * inv_sqrt_deg[u] * inv_sqrt_deg[v];
                    if s != 0.0 {
                        entries.push((u, v, -s));
                    }
                }
                for node in 0..n {
                    entries.push((node, node, 1.0));
                }
                // Merge the identity into any existing diagonal entries.
                let mut merged = std::collections::BTreeMap::new();
                for (u, v, w) in entries {
                    *merged.entry((u, v)).or_insert(0.0) += w;
                }
                entries = merged
                    .into_iter()
                    .filter(|&(_, w)| w != 0.0)
                    .map(|((u, v), w)| (u, v, w))
                    .collect();
            }
        }

        Ok(GraphShift { n, entries, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (unordered pairs plus diagonal).
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    /// Stored entries with u <= v.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Sparse symmetric matrix-vector product y = S x.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n, "signal length must match node count");
        let mut y = DVector::zeros(self.n);
        for &(u, v, w) in &self.entries {
            y[u] += w * x[v];
            if u != v {
                y[v] += w * x[u];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(u, v, w) in &self.entries {
            m[(u, v)] += w;
            if u != v {
                m[(v, u)] += w;
            }
        }
        m
    }

    /// Builds a shift directly from a dense symmetric matrix, keeping the
    /// declared kind. Used by the structural perturbation generators, where
    /// the perturbed matrix is no longer a combinatorial graph matrix.
    pub fn from_dense(m: &DMatrix<f64>, kind: ShiftKind) -> Result<Self, GraphError> {
        let n = m.nrows();
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut entries = Vec::new();
        for u in 0..n {
            for v in u..n {
                let w = m[(u, v)];
                if !w.is_finite() {
                    return Err(GraphError::NonFiniteShift);
                }
                if w != 0.0 {
                    entries.push((u, v, w));
                }
            }
        }
        Ok(GraphShift { n, entries, kind })
    }

    /// Relabels nodes: node i of the result is node perm[i] of self, i.e. the
    /// result equals P^T S P for the permutation matrix P with P[perm[i], i] = 1.
    pub fn permute(&self, perm: &[usize]) -> GraphShift {
        assert_eq!(perm.len(), self.n);
        let mut inverse = vec![0usize; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut entries: Vec<(usize, usize, f64)> = self
            .entries
            .iter()
            .map(|&(u, v, w)| {
                let (a, b) = (inverse[u], inverse[v]);
                (a.min(b), a.max(b), w)
            })
            .collect();
        entries.sort_unstable_by_key(|&(u, v, _)| (u, v));
        GraphShift {
            n: self.n,
            entries,
            kind: self.kind,
        }
    }
}

/// Eigenpairs of a shift matrix: the graph Fourier basis.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Columns are eigenvectors, orthonormal.
    basis: DMatrix<f64>,
    /// Ascending.
    eigenvalues: DVector<f64>,
}

impl Spectrum {
    /// Dense symmetric eigendecomposition with ascending eigenvalues and a
    /// deterministic sign convention: the first entry of each eigenvector
    /// with magnitude above 1e-12 is positive.
    pub fn eigendecompose(shift: &GraphShift) -> Result<Spectrum, GraphError> {
        let dense = shift.to_dense();
        if dense.iter().any(|x| !x.is_finite()) {
            return Err(GraphError::NonFiniteShift);
        }
        let eig = SymmetricEigen::new(dense);
        let n = shift.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let mut basis = DMatrix::zeros(n, n);
        let mut eigenvalues = DVector::zeros(n);
        for (col, &src) in order.iter().enumerate() {
            eigenvalues[col] = eig.eigenvalues[src];
            let mut v = eig.eigenvectors.column(src).clone_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            basis.set_column(col, &v);
        }
        Ok(Spectrum { basis, eigenvalues })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lambda_min(), self.lambda_max())
    }

    /// Rebuilds a spectrum from a basis and eigenvalues known to be valid.
    /// Used by the eigenvalue-noise perturbation generator.
    pub fn from_parts(basis: DMatrix<f64>, eigenvalues: DVector<f64>) -> Spectrum {
        assert_eq!(basis.nrows(), eigenvalues.len());
        Spectrum { basis, eigenvalues }
    }

    /// Forward GFT: x_hat = V^T x.
    pub fn gft(&self, x: &GraphSignal) -> Result<DVector<f64>, GraphError> {
        if x.len() != self.n() {
            return Err(GraphError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(self.basis.tr_mul(x.values()))
    }

    /// Inverse GFT: x = V x_hat.
    pub fn igft(&self, x_hat: &DVector<f64>) -> Result<GraphSignal, GraphError> {
        if x_hat.len() != self.n() {
            return Err(GraphError::DimensionMismatch {
                expected: self.n(),
                got: x_hat.len(),
            });
        }
        Ok(GraphSignal::new(&self.basis * x_hat))
    }
}

/// Length-N real graph signal.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal(DVector<f64>);

impl GraphSignal {
    pub fn new(values: DVector<f64>) -> Self {
        GraphSignal(values)
    }

    pub fn from_slice(values: &[f64]) -> Self {
        GraphSignal(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Backend for applying a spectral kernel h(S).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterBackend {
    /// Exact: V diag(h(lambda)) V^T x via the eigendecomposition.
    Spectral,
    /// Chebyshev approximation of order K using only sparse mat-vec products.
    Polynomial { order: usize },
}

/// Exact spectral filtering: V diag(h(lambda)) V^T x.
pub fn apply_filter_spectral(
    spectrum: &Spectrum,
    kernel: impl Fn(f64) -> f64,
    x: &GraphSignal,
) -> Result<GraphSignal, GraphError> {
    let mut x_hat = spectrum.gft(x)?;
    for (i, coeff) in x_hat.iter_mut().enumerate() {
        let h = kernel(spectrum.eigenvalues[i]);
        if !h.is_finite() {
            return Err(GraphError::NonFiniteShift);
        }
        *coeff *= h;
    }
    spectrum.igft(&x_hat)
}

/// Chebyshev coefficients of a kernel on [a, b], interpolated at K+1 nodes.
///
/// The interval is padded by 1% on both ends against endpoint ringing.
#[derive(Debug, Clone)]
pub struct ChebyshevFit {
    pub coeffs: Vec<f64>,
    pub interval: (f64, f64),
}

impl ChebyshevFit {
    pub fn fit(
        kernel: impl Fn(f64) -> f64,
        interval: (f64, f64),
        order: usize,
    ) -> Result<ChebyshevFit, GraphError> {
        if order < 1 {
            return Err(GraphError::InvalidChebyshevOrder);
        }
        let (mut a, mut b) = interval;
        if !(a < b) {
            return Err(GraphError::MissingSpectralInterval);
        }
        let pad = 0.01 * (b - a);
        a -= pad;
        b += pad;

        let m = order + 1;
        let samples: Vec<f64> = (0..m)
            .map(|i| {
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
                let lambda = 0.5 * (a + b) + 0.5 * (b - a) * theta.cos();
                kernel(lambda)
            })
            .collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteShift);
        }

        let mut coeffs = vec![0.0; m];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, s) in samples.iter().enumerate() {
                let theta = std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
                acc += s * (k as f64 * theta).cos();
            }
            *c = acc * if k == 0 { 1.0 } else { 2.0 } / m as f64;
        }
        Ok(ChebyshevFit {
            coeffs,
            interval: (a, b),
        })
    }

    /// Applies the fitted polynomial to a signal via the three-term
    /// recurrence; each term costs one sparse mat-vec.
    pub fn apply(&self, shift: &GraphShift, x: &GraphSignal) -> GraphSignal {
        let (a, b) = self.interval;
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);

        // T_0 = x, T_1 = S' x with S' = (S - c I) / half.
        let scaled_matvec = |v: &DVector<f64>| -> DVector<f64> {
            let mut y = shift.matvec(&DVector::from(v.clone()));
            y.axpy(-center, v, 1.0);
            y /= half;
            y
        };

        let mut t_prev = x.values().clone();
        let mut result = &t_prev * self.coeffs[0];
        if self.coeffs.len() > 1 {
            let mut t_cur = scaled_matvec(&t_prev);
            result.axpy(self.coeffs[1], &t_cur, 1.0);
            for &c in &self.coeffs[2..] {
                let mut t_next = scaled_matvec(&t_cur);
                t_next.axpy(-1.0, &t_prev, 2.0);
                result.axpy(c, &t_next, 1.0);
                t_prev = t_cur;
                t_cur = t_next;
            }
        }
        GraphSignal::new(result)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let (a, b) = self.interval;
        let u = (lambda - 0.5 * (a + b)) / (0.5 * (b - a));
        let mut t_prev = 1.0;
        let mut acc = self.coeffs[0];
        if self.coeffs.len() > 1 {
            let mut t_cur = u;
            acc += self.coeffs[1] * t_cur;
            for &c in &self.coeffs[2..] {
                let t_next = 2.0 * u * t_cur - t_prev;
                acc += c * t_next;
                t_prev = t_cur;
                t_cur = t_next;
            }
        }
        acc
    }
}

/// Applies a spectral kernel with the requested backend.
///
/// The polynomial backend needs a spectral interval; pass the spectrum's
/// interval or the a-priori interval of normalized kinds.
pub fn apply_filter(
    shift: &GraphShift,
    spectrum: Option<&Spectrum>,
    kernel: impl Fn(f64) -> f64,
    x: &GraphSignal,
    backend: FilterBackend,
) -> Result<GraphSignal, GraphError> {
    match backend {
        FilterBackend::Spectral => {
            let spec = spectrum.ok_or(GraphError::MissingSpectralInterval)?;
            apply_filter_spectral(spec, kernel, x)
        }
        FilterBackend::Polynomial { order } => {
            let interval = spectrum
                .map(|s| s.interval())
                .or_else(|| shift.kind().known_interval())
                .ok_or(GraphError::MissingSpectralInterval)?;
            let fit = ChebyshevFit::fit(kernel, interval, order)?;
            Ok(fit.apply(shift, x))
        }
    }
}
