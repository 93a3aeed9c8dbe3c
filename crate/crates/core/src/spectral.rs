//! Stationary photon statistics and the relaxation spectrum of a generator.
//!
//! The stationary state is the null vector of L (eigenvalue λ₀ = 0); the
//! next eigenvalue λ₁ sets the slowest relaxation rate and hence the
//! correlation length γξ = 1/Re λ₁.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result, SpectrumAnomaly};
use crate::generators::GeneratorMatrix;
use crate::params::emission_prob;

/// Number of top entries summed into `tail_mass`.
pub const TAIL_WINDOW: usize = 10;

/// Thresholds used when extracting stationary states and eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Maximum probability allowed in the last `TAIL_WINDOW` photon numbers.
    pub tail_threshold: f64,
    /// Maximum ‖L p̄‖∞ for an accepted stationary state.
    pub residual_tol: f64,
    /// Eigenvalues with |λ| below this count as stationary modes.
    pub zero_threshold: f64,
    /// The stationary mode itself must satisfy |λ₀| below this.
    pub zero_tol: f64,
    /// Any Re λ below −stability_tol is an anomaly.
    pub stability_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tail_threshold: 1e-10,
            residual_tol: 1e-8,
            zero_threshold: 1e-6,
            zero_tol: 1e-8,
            stability_tol: 1e-8,
        }
    }
}

/// Normalized photon-number distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    pub probs: Vec<f64>,
    /// Σ of the last `TAIL_WINDOW` entries.
    pub tail_mass: f64,
    /// Total magnitude of negative round-off clamped to zero.
    pub clamped: f64,
    /// False when the tail mass exceeds the threshold it was built with.
    pub converged: bool,
}

impl PhotonDistribution {
    /// Clamp negatives, normalize and compute the tail mass.
    pub fn from_weights(mut probs: Vec<f64>, tail_threshold: f64) -> Self {
        let mut clamped = 0.0;
        for p in probs.iter_mut() {
            if *p < 0.0 {
                clamped += -*p;
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if total > 0.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        let tail_mass = tail_mass(&probs);
        PhotonDistribution {
            probs,
            tail_mass,
            clamped,
            converged: tail_mass <= tail_threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Point mass at photon number `n`.
    pub fn fock(n_max: usize, n: usize) -> Self {
        let mut probs = vec![0.0; n_max];
        probs[n] = 1.0;
        Self::from_weights(probs, f64::INFINITY)
    }

    /// Uniform over the first `count` photon numbers.
    pub fn uniform(n_max: usize, count: usize) -> Self {
        let count = count.clamp(1, n_max);
        let mut probs = vec![0.0; n_max];
        probs[..count].iter_mut().for_each(|p| *p = 1.0);
        Self::from_weights(probs, f64::INFINITY)
    }

    pub fn max_abs_diff(&self, other: &PhotonDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn tail_mass(probs: &[f64]) -> f64 {
    probs[probs.len().saturating_sub(TAIL_WINDOW)..].iter().sum()
}

/// Closed-form stationary state of the one-atom master equation,
/// p̄_n ∝ ∏_{m=1}^{n} (n_b m + N q_m)/((1 + n_b) m), accumulated in logs.
///
/// `flux_n = 0` gives the thermal (Bose–Einstein) distribution.
pub fn stationary_one_atom(
    n_max: usize,
    theta: f64,
    flux_n: f64,
    n_b: f64,
) -> Result<PhotonDistribution> {
    stationary_one_atom_with(n_max, theta, flux_n, n_b, &SpectralOptions::default())
}

pub fn stationary_one_atom_with(
    n_max: usize,
    theta: f64,
    flux_n: f64,
    n_b: f64,
    opts: &SpectralOptions,
) -> Result<PhotonDistribution> {
    if n_max < 2 {
        return Err(Error::TruncationTooSmall { n_max, min: 2 });
    }
    if !(flux_n >= 0.0) || !(n_b >= 0.0) || !(theta >= 0.0) {
        return Err(Error::InvalidParameter(
            "flux_n, n_b and theta must be >= 0".into(),
        ));
    }
    let mut logw = vec![0.0; n_max];
    for m in 1..n_max {
        let mf = m as f64;
        let pump = if flux_n > 0.0 {
            flux_n * emission_prob(m, theta, flux_n)
        } else {
            0.0
        };
        let ratio = (n_b * mf + pump) / ((1.0 + n_b) * mf);
        // a zero ratio truncates the distribution; ln(0) = -inf propagates
        logw[m] = logw[m - 1] + ratio.ln();
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights = logw.iter().map(|l| (l - top).exp()).collect();
    Ok(PhotonDistribution::from_weights(weights, opts.tail_threshold))
}

/// ‖L p‖∞.
pub fn residual(l: &GeneratorMatrix, p: &[f64]) -> f64 {
    let n = l.dim();
    (0..n)
        .map(|i| (0..n).map(|j| l.entries[(i, j)] * p[j]).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Stationary distribution of a generator: solve L p = 0 with row 0
/// replaced by the normalization Σ p = 1.
pub fn stationary_nullspace(l: &GeneratorMatrix) -> Result<PhotonDistribution> {
    stationary_nullspace_with(l, &SpectralOptions::default())
}

pub fn stationary_nullspace_with(
    l: &GeneratorMatrix,
    opts: &SpectralOptions,
) -> Result<PhotonDistribution> {
    let n = l.dim();
    let mut a = l.entries.clone();
    for j in 0..n {
        a[(0, j)] = 1.0;
    }
    let lu = a.partial_piv_lu();
    let mut rhs = Mat::<f64>::zeros(n, 1);
    rhs[(0, 0)] = 1.0;
    let mut x = lu.solve(&rhs);
    if (0..n).any(|i| !x[(i, 0)].is_finite()) {
        return Err(Error::SingularSystem);
    }

    // iterative refinement when the direct solve leaves a large residual
    let as_vec = |x: &Mat<f64>| (0..n).map(|i| x[(i, 0)]).collect::<Vec<_>>();
    let mut res = residual(l, &as_vec(&x));
    for _ in 0..3 {
        if res < opts.residual_tol {
            break;
        }
        let mut r = Mat::<f64>::zeros(n, 1);
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| a[(i, j)] * x[(j, 0)]).sum();
            r[(i, 0)] = rhs[(i, 0)] - ax;
        }
        let dx = lu.solve(&r);
        for i in 0..n {
            x[(i, 0)] += dx[(i, 0)];
        }
        res = residual(l, &as_vec(&x));
    }

    let p = PhotonDistribution::from_weights(as_vec(&x), opts.tail_threshold);
    let res = residual(l, &p.probs);
    if !(res < opts.residual_tol) || !p.converged {
        return Err(Error::Unconverged {
            residual: res,
            tail_mass: p.tail_mass,
        });
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// All eigenvalues of the dense matrix, sorted by real part.
pub fn spectrum(l: &GeneratorMatrix) -> Result<Vec<Eigenvalue>> {
    let ev = l
        .entries
        .eigenvalues()
        .map_err(|e| Error::EigenFailure(format!("{e:?}")))?;
    let mut out: Vec<Eigenvalue> = ev
        .iter()
        .map(|c| Eigenvalue { re: c.re, im: c.im })
        .collect();
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

/// λ₀ and λ₁ of a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubleadingEigen {
    pub zero_mode: Eigenvalue,
    pub lambda1: Eigenvalue,
}

/// Next-to-lowest eigenvalue λ₁ (units of γ).
pub fn subleading_eigenvalue(l: &GeneratorMatrix) -> Result<SubleadingEigen> {
    subleading_eigenvalue_with(l, &SpectralOptions::default())
}

pub fn subleading_eigenvalue_with(
    l: &GeneratorMatrix,
    opts: &SpectralOptions,
) -> Result<SubleadingEigen> {
    select_subleading(&spectrum(l)?, opts)
}

/// Pick λ₀ and λ₁ out of a full spectrum.
pub fn select_subleading(spec: &[Eigenvalue], opts: &SpectralOptions) -> Result<SubleadingEigen> {
    let anomaly = |a| Err(Error::SpectrumAnomaly(a));
    if let Some(worst) = spec.iter().find(|e| e.re < -opts.stability_tol) {
        return anomaly(SpectrumAnomaly::Unstable { re: worst.re });
    }
    let zeros: Vec<&Eigenvalue> = spec
        .iter()
        .filter(|e| e.abs() <= opts.zero_threshold)
        .collect();
    if zeros.len() > 1 {
        return anomaly(SpectrumAnomaly::Degenerate { count: zeros.len() });
    }
    let zero_mode = match zeros.first() {
        Some(z) if z.abs() < opts.zero_tol => **z,
        _ => {
            let smallest = spec.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
            return anomaly(SpectrumAnomaly::NoZeroMode { smallest });
        }
    };
    let lambda1 = spec
        .iter()
        .filter(|e| e.re > opts.zero_threshold)
        .min_by(|a, b| a.re.total_cmp(&b.re));
    match lambda1 {
        Some(l1) => Ok(SubleadingEigen {
            zero_mode,
            lambda1: *l1,
        }),
        None => anomaly(SpectrumAnomaly::NoSubleading),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub mean_n: f64,
    pub mean_x: f64,
    pub var_n: f64,
}

/// ⟨n⟩, ⟨x⟩ = ⟨n⟩/N and Var n of a normalized distribution.
pub fn observables(p: &PhotonDistribution, flux_n: f64) -> Observables {
    let (m1, m2) = p
        .probs
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(a, b), (n, &pn)| {
            let nf = n as f64;
            (a + nf * pn, b + nf * nf * pn)
        });
    Observables {
        mean_n: m1,
        mean_x: m1 / flux_n,
        var_n: (m2 - m1 * m1).max(0.0),
    }
}

/// γξ = 1/Re λ₁.
pub fn correlation_length(lambda1: Eigenvalue) -> Result<f64> {
    if !(lambda1.re > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "correlation length needs Re(lambda1) > 0, got {}",
            lambda1.re
        )));
    }
    Ok(1.0 / lambda1.re)
}

/// Everything a sweep point reports about one generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub mean_n: f64,
    pub mean_x: f64,
    pub var_n: f64,
    pub lambda1_re: f64,
    pub lambda1_im: f64,
    pub corr_length: f64,
    pub residual: f64,
    pub tail_mass: f64,
}

pub fn analyze(l: &GeneratorMatrix, flux_n: f64, opts: &SpectralOptions) -> Result<SpectralSummary> {
    let p = stationary_nullspace_with(l, opts)?;
    let obs = observables(&p, flux_n);
    let eig = subleading_eigenvalue_with(l, opts)?;
    Ok(SpectralSummary {
        mean_n: obs.mean_n,
        mean_x: obs.mean_x,
        var_n: obs.var_n,
        lambda1_re: eig.lambda1.re,
        lambda1_im: eig.lambda1.im,
        corr_length: correlation_length(eig.lambda1)?,
        residual: residual(l, &p.probs),
        tail_mass: p.tail_mass,
    })
}
