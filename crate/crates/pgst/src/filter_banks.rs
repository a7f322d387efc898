//! Wavelet filter banks: diffusion, monic cubic, and tight Hann families,
//! with numerically certified frame bounds and integral Lipschitz constants.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("spectral interval must satisfy lambda_min < lambda_max")]
    InvalidInterval,
    #[error("filter bank needs at least {min} kernels, got {got}")]
    TooFewKernels { min: usize, got: usize },
    #[error("diffusion wavelets need a spectrum inside [-1, 1], got [{lo}, {hi}]")]
    IncompatibleInterval { lo: f64, hi: f64 },
    #[error("kernel {scale} evaluates to a non-finite value on the interval")]
    NonFiniteKernel { scale: usize },
    #[error("non-finite derivative estimate in Lipschitz computation")]
    NonFiniteDerivative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    Diffusion,
    MonicCubic,
    TightHann,
    /// One-hot spectral indicators, one per eigenvalue. Only used by the
    /// sensitivity suite; not a practical wavelet design.
    IdealOneHot,
}

impl std::str::FromStr for WaveletFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ds" | "diffusion" => Ok(WaveletFamily::Diffusion),
            "mcs" | "monic_cubic" => Ok(WaveletFamily::MonicCubic),
            "ths" | "tight_hann" => Ok(WaveletFamily::TightHann),
            other => Err(format!("unknown wavelet family: {other}")),
        }
    }
}

/// A single spectral kernel h_j(lambda).
#[derive(Clone)]
pub struct FilterKernel {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// 1-based scale id within the bank.
    pub scale: usize,
    pub family: WaveletFamily,
}

impl std::fmt::Debug for FilterKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterKernel")
            .field("scale", &self.scale)
            .field("family", &self.family)
            .finish()
    }
}

impl FilterKernel {
    pub fn new(
        family: WaveletFamily,
        scale: usize,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FilterKernel {
            eval: Arc::new(eval),
            scale,
            family,
        }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        (self.eval)(lambda)
    }
}

/// J spectral kernels with frame bounds (A, B) and integral Lipschitz
/// constant C0, all computed on grids over the declared interval.
#[derive(Debug, Clone)]
pub struct FilterBank {
    kernels: Vec<FilterKernel>,
    interval: (f64, f64),
    frame_lower: f64,
    frame_upper: f64,
    lipschitz: f64,
}

/// Serializable description of a bank.
#[derive(Debug, Serialize)]
pub struct BankDescriptor {
    pub family: WaveletFamily,
    pub j_count: usize,
    pub interval: [f64; 2],
    pub scales: Vec<usize>,
    pub frame_lower: f64,
    pub frame_upper: f64,
    pub lipschitz: f64,
}

const FRAME_GRID: usize = 1024;
const LIPSCHITZ_GRID: usize = 4096;

impl FilterBank {
    /// Builds a bank of the named family over the interval and certifies
    /// frame bounds and the Lipschitz constant numerically.
    pub fn make(
        interval: (f64, f64),
        family: WaveletFamily,
        j_count: usize,
    ) -> Result<FilterBank, BankError> {
        if !(interval.0 < interval.1) || !interval.0.is_finite() || !interval.1.is_finite() {
            return Err(BankError::InvalidInterval);
        }
        if j_count < 2 {
            return Err(BankError::TooFewKernels {
                min: 2,
                got: j_count,
            });
        }
        let kernels = match family {
            WaveletFamily::Diffusion => diffusion_kernels(interval, j_count)?,
            WaveletFamily::MonicCubic => monic_cubic_kernels(interval, j_count),
            WaveletFamily::TightHann => tight_hann_kernels(interval, j_count),
            WaveletFamily::IdealOneHot => return Err(BankError::InvalidInterval),
        };
        FilterBank::from_kernels(kernels, interval)
    }

    /// Wraps explicit kernels, certifying them on the interval.
    pub fn from_kernels(
        kernels: Vec<FilterKernel>,
        interval: (f64, f64),
    ) -> Result<FilterBank, BankError> {
        if kernels.is_empty() {
            return Err(BankError::TooFewKernels { min: 1, got: 0 });
        }
        for k in &kernels {
            for i in 0..=FRAME_GRID {
                let lambda =
                    interval.0 + (interval.1 - interval.0) * i as f64 / FRAME_GRID as f64;
                let v = k.eval(lambda);
                if !v.is_finite() || v < -1e-12 {
                    return Err(BankError::NonFiniteKernel { scale: k.scale });
                }
            }
        }
        let grid: Vec<f64> = (0..=FRAME_GRID)
            .map(|i| interval.0 + (interval.1 - interval.0) * i as f64 / FRAME_GRID as f64)
            .collect();
        let (frame_lower, frame_upper) = frame_bounds_on_grid(&kernels, &grid);
        let lipschitz = kernels
            .iter()
            .map(|k| integral_lipschitz(k, interval))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(FilterBank {
            kernels,
            interval,
            frame_lower,
            frame_upper,
            lipschitz,
        })
    }

    /// Ideal bank used by the sensitivity analysis: J = N kernels, the j-th an
    /// indicator of the j-th eigenvalue (nearest-eigenvalue matching, ties to
    /// the smaller index). Ill-defined under eigenvalue multiplicity; callers
    /// use graphs with simple spectra.
    pub fn ideal_one_hot(eigenvalues: &[f64]) -> Result<FilterBank, BankError> {
        let eigs: Vec<f64> = eigenvalues.to_vec();
        if eigs.len() < 2 {
            return Err(BankError::TooFewKernels {
                min: 2,
                got: eigs.len(),
            });
        }
        let interval = (eigs[0], eigs[eigs.len() - 1]);
        let kernels: Vec<FilterKernel> = (0..eigs.len())
            .map(|j| {
                let eigs = eigs.clone();
                FilterKernel::new(WaveletFamily::IdealOneHot, j + 1, move |lambda| {
                    let mut best = 0usize;
                    let mut best_d = f64::INFINITY;
                    for (i, &e) in eigs.iter().enumerate() {
                        let d = (lambda - e).abs();
                        if d < best_d - 1e-15 {
                            best = i;
                            best_d = d;
                        }
                    }
                    if best == j {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        // One-hot kernels are discontinuous; skip the finite-difference
        // Lipschitz estimate and certify the frame bounds directly: each
        // lambda activates exactly one kernel, so A = B = 1 on the spectrum.
        Ok(FilterBank {
            kernels,
            interval,
            frame_lower: 1.0,
            frame_upper: 1.0,
            lipschitz: f64::INFINITY,
        })
    }

    pub fn kernels(&self) -> &[FilterKernel] {
        &self.kernels
    }

    pub fn j_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Lower frame bound A.
    pub fn frame_lower(&self) -> f64 {
        self.frame_lower
    }

    /// Upper frame bound B.
    pub fn frame_upper(&self) -> f64 {
        self.frame_upper
    }

    /// True when A = 0 on the certification grid.
    pub fn is_degenerate_frame(&self) -> bool {
        self.frame_lower == 0.0
    }

    /// Integral Lipschitz constant C0 = max_j max |lambda h_j'(lambda)|.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Recomputes (A, B) on a caller-supplied grid of lambda samples.
    pub fn frame_bounds_on(&self, grid: &[f64]) -> (f64, f64) {
        frame_bounds_on_grid(&self.kernels, grid)
    }

    pub fn descriptor(&self) -> BankDescriptor {
        BankDescriptor {
            family: self.kernels[0].family,
            j_count: self.kernels.len(),
            interval: [self.interval.0, self.interval.1],
            scales: self.kernels.iter().map(|k| k.scale).collect(),
            frame_lower: self.frame_lower,
            frame_upper: self.frame_upper,
            lipschitz: self.lipschitz,
        }
    }
}

fn frame_bounds_on_grid(kernels: &[FilterKernel], grid: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &lambda in grid {
        let sum_sq: f64 = kernels.iter().map(|k| k.eval(lambda).powi(2)).sum();
        lo = lo.min(sum_sq);
        hi = hi.max(sum_sq);
    }
    (lo.max(0.0).sqrt(), hi.sqrt())
}

/// C0 = max over a 4096-point grid of |lambda h'(lambda)|, with h' estimated
/// by central differences.
pub fn integral_lipschitz(
    kernel: &FilterKernel,
    interval: (f64, f64),
) -> Result<f64, BankError> {
    lipschitz_on_grid(kernel, interval, LIPSCHITZ_GRID)
}

pub fn lipschitz_on_grid(
    kernel: &FilterKernel,
    interval: (f64, f64),
    grid: usize,
) -> Result<f64, BankError> {
    let (a, b) = interval;
    let step = (b - a) / grid as f64;
    let mut c0: f64 = 0.0;
    for i in 0..=grid {
        let lambda = a + step * i as f64;
        let left = (lambda - step).max(a);
        let right = (lambda + step).min(b);
        let d = (kernel.eval(right) - kernel.eval(left)) / (right - left);
        if !d.is_finite() {
            return Err(BankError::NonFiniteDerivative);
        }
        c0 = c0.max((lambda * d).abs());
    }
    Ok(c0)
}

/// Diffusion wavelets on the lazy diffusion operator T = (I + S)/2 of a
/// normalized shift: band-pass kernels t^(2^(j-1)) (1 - t^(2^(j-1))) at
/// dyadic scales, with the last slot a low-pass t^(2^(J-1)).
fn diffusion_kernels(
    interval: (f64, f64),
    j_count: usize,
) -> Result<Vec<FilterKernel>, BankError> {
    let (lo, hi) = interval;
    if lo < -1.0 - 1e-9 || hi > 1.0 + 1e-9 {
        return Err(BankError::IncompatibleInterval { lo, hi });
    }
    let t_of = |lambda: f64| (0.5 * (1.0 + lambda)).clamp(0.0, 1.0);
    let mut kernels = Vec::with_capacity(j_count);
    for j in 1..j_count {
        let power = (1u32 << (j - 1)) as f64;
        kernels.push(FilterKernel::new(
            WaveletFamily::Diffusion,
            j,
            move |lambda| {
                let tp = t_of(lambda).powf(power);
                tp * (1.0 - tp)
            },
        ));
    }
    let power = (1u32 << (j_count - 1)) as f64;
    kernels.push(FilterKernel::new(
        WaveletFamily::Diffusion,
        j_count,
        move |lambda| t_of(lambda).powf(power),
    ));
    Ok(kernels)
}

/// The monic cubic mother kernel: x below the first joint, the cubic on
/// [1, 2], and 2/x above.
pub fn monic_cubic_mother(x: f64) -> f64 {
    if x < 1.0 {
        x
    } else if x <= 2.0 {
        -5.0 + 11.0 * x - 6.0 * x * x + x * x * x
    } else {
        2.0 / x
    }
}

/// Monic cubic wavelets: J - 1 log-spaced scales of the mother kernel plus a
/// Gaussian-type scaling kernel in the last slot. The kernels act on the
/// shifted coordinate lambda - lambda_min so the design matches the usual
/// nonnegative-spectrum setting for any shift kind.
fn monic_cubic_kernels(interval: (f64, f64), j_count: usize) -> Vec<FilterKernel> {
    let (lo, hi) = interval;
    let span = hi - lo;
    // Design band [span / k_factor, span], scales log-spaced so the mother
    // kernel's plateau sweeps the band.
    let k_factor = 20.0;
    let lambda_lo = span / k_factor;
    let s_min = 1.0 / span;
    let s_max = 2.0 / lambda_lo;
    let n_wavelets = j_count - 1;
    let mut kernels = Vec::with_capacity(j_count);
    // Scaling kernel amplitude: match the mother kernel's peak value,
    // attained at x = 2 - 1/sqrt(3).
    let x_peak = 2.0 - 1.0 / 3.0_f64.sqrt();
    let gamma = monic_cubic_mother(x_peak);
    kernels.push(FilterKernel::new(WaveletFamily::MonicCubic, 1, move |l| {
        let u = (l - lo).max(0.0);
        gamma * (-(u / (0.6 * lambda_lo)).powi(4)).exp()
    }));
    for j in 0..n_wavelets {
        let frac = if n_wavelets == 1 {
            0.0
        } else {
            j as f64 / (n_wavelets - 1) as f64
        };
        // Largest scale first: scale 2 covers the lowest band above the
        // scaling kernel, the last scale reaches lambda_max.
        let s = s_max * (s_min / s_max).powf(frac);
        kernels.push(FilterKernel::new(
            WaveletFamily::MonicCubic,
            j + 2,
            move |l| {
                let u = (l - lo).max(0.0);
                monic_cubic_mother(s * u)
            },
        ));
    }
    kernels
}

/// Tight Hann bank: J half-cosine windows with 50% overlap on the affinely
/// warped axis u = (lambda - lambda_min) / (lambda_max - lambda_min). The
/// squared windows telescope to exactly 1 everywhere on the interval.
fn tight_hann_kernels(interval: (f64, f64), j_count: usize) -> Vec<FilterKernel> {
    let (lo, hi) = interval;
    let span = hi - lo;
    let half_width = 1.0 / (j_count - 1) as f64;
    (1..=j_count)
        .map(|j| {
            let center = (j - 1) as f64 * half_width;
            FilterKernel::new(WaveletFamily::TightHann, j, move |lambda| {
                let u = (lambda - lo) / span;
                let d = (u - center).abs();
                if d < half_width {
                    (std::f64::consts::FRAC_PI_2 * d / half_width).cos()
                } else {
                    0.0
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tight_hann_sum_of_squares_is_constant() {
        for j in [2, 3, 5, 8] {
            let bank = FilterBank::make((0.0, 2.0), WaveletFamily::TightHann, j).unwrap();
            let mut max_rel: f64 = 0.0;
            for i in 0..=1024 {
                let lambda = 2.0 * i as f64 / 1024.0;
                let sum: f64 = bank.kernels().iter().map(|k| k.eval(lambda).powi(2)).sum();
                max_rel = max_rel.max((sum - 1.0).abs());
            }
            assert!(max_rel <= 1e-6, "J={j}: deviation {max_rel}");
            assert!(bank.frame_upper() / bank.frame_lower() <= 1.0 + 1e-6);
            assert!(bank.frame_upper().powi(2) - bank.frame_lower().powi(2) <= 1e-6);
        }
    }

    #[test]
    fn monic_cubic_mother_is_continuous_at_joints() {
        assert_abs_diff_eq!(monic_cubic_mother(1.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(monic_cubic_mother(2.0), 1.0, epsilon = 1e-12);
        // And from the left/right of each joint.
        assert_abs_diff_eq!(
            monic_cubic_mother(1.0 - 1e-9),
            monic_cubic_mother(1.0 + 1e-9),
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            monic_cubic_mother(2.0 - 1e-9),
            monic_cubic_mother(2.0 + 1e-9),
            epsilon = 1e-7
        );
    }

    #[test]
    fn diffusion_kernels_vanish_at_fixed_point() {
        // The diffusion map fixed point t = 0 sits at lambda = -1; every
        // kernel evaluates to 0 there (closed-form oracle: t^p (1 - t^p) and
        // t^p are both 0 at t = 0).
        let bank = FilterBank::make((-1.0, 1.0), WaveletFamily::Diffusion, 3).unwrap();
        for (j, k) in bank.kernels().iter().enumerate() {
            assert_abs_diff_eq!(k.eval(-1.0), 0.0, epsilon = 1e-12);
            assert_eq!(k.scale, j + 1);
        }
        // Dyadic scales: kernel j peaks where t^(2^(j-1)) = 1/2.
        let t_of = |l: f64| 0.5 * (1.0 + l);
        for (j, k) in bank.kernels()[..2].iter().enumerate() {
            let power = (1u32 << j) as f64;
            let t_star = 0.5f64.powf(1.0 / power);
            let l_star = 2.0 * t_star - 1.0;
            assert_abs_diff_eq!(k.eval(l_star), 0.25, epsilon = 1e-12);
            let tp = t_of(l_star).powf(power);
            assert_abs_diff_eq!(tp, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn diffusion_rejects_wide_interval() {
        assert!(matches!(
            FilterBank::make((0.0, 2.0), WaveletFamily::Diffusion, 3),
            Err(BankError::IncompatibleInterval { .. })
        ));
    }

    #[test]
    fn single_identity_kernel_has_unit_frame() {
        let k = FilterKernel::new(WaveletFamily::TightHann, 1, |_| 1.0);
        let bank = FilterBank::from_kernels(vec![k], (0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(bank.frame_lower(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bank.frame_upper(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_kernel_lipschitz_zero() {
        let k = FilterKernel::new(WaveletFamily::TightHann, 1, |_| 0.7);
        assert_abs_diff_eq!(integral_lipschitz(&k, (0.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn linear_kernel_lipschitz_is_right_endpoint() {
        let k = FilterKernel::new(WaveletFamily::TightHann, 1, |l| l);
        let c0 = integral_lipschitz(&k, (0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(c0, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn monic_cubic_lipschitz_grid_refinement() {
        let bank = FilterBank::make((0.0, 2.0), WaveletFamily::MonicCubic, 5).unwrap();
        let k = &bank.kernels()[1]; // scale-1 wavelet slot
        let coarse = lipschitz_on_grid(k, (0.0, 2.0), 4096).unwrap();
        let fine = lipschitz_on_grid(k, (0.0, 2.0), 4 * 4096).unwrap();
        assert!((coarse - fine).abs() <= 0.01 * fine.max(coarse));
    }

    #[test]
    fn frame_sandwich_on_random_graph_signals() {
        use crate::graph_core::{
            apply_filter_spectral, GraphShift, GraphSignal, ShiftKind, Spectrum,
        };
        use rand::Rng;
        let mut rng = crate::data_io::seeded_rng(42);
        let n = 40;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < 0.2 {
                    edges.push((u, v, 1.0));
                }
            }
        }
        let s = GraphShift::build(&edges, n, ShiftKind::NormalizedLaplacian).unwrap();
        let spec = Spectrum::eigendecompose(&s).unwrap();
        let bank = FilterBank::make(spec.interval(), WaveletFamily::TightHann, 5).unwrap();
        // Bounds recomputed on the exact eigenvalue grid make the sandwich
        // exact for signals on this graph.
        let eigs: Vec<f64> = spec.eigenvalues().iter().copied().collect();
        let (a, b) = bank.frame_bounds_on(&eigs);
        for _ in 0..100 {
            let x = GraphSignal::new(nalgebra::DVector::from_fn(n, |_, _| {
                rng.random::<f64>() - 0.5
            }));
            let total: f64 = bank
                .kernels()
                .iter()
                .map(|k| {
                    apply_filter_spectral(&spec, |l| k.eval(l), &x)
                        .unwrap()
                        .norm()
                        .powi(2)
                })
                .sum();
            let energy = x.norm().powi(2);
            assert!(a * a * energy <= total + 1e-9 * energy.max(total));
            assert!(total <= b * b * energy + 1e-9 * energy.max(total));
        }
    }

    #[test]
    fn ideal_one_hot_bank_partitions_spectrum() {
        let eigs = [0.0, 0.5, 1.1, 2.0];
        let bank = FilterBank::ideal_one_hot(&eigs).unwrap();
        for (i, &e) in eigs.iter().enumerate() {
            for (j, k) in bank.kernels().iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_eq!(k.eval(e), expected);
            }
        }
    }
}
