//! Truncated transition-rate matrices: cavity damping, the one- and two-atom
//! pump operators, and the assembled generators L with dp/dt = −γ L p.
//!
//! Matrices are stored dense. Column m holds the rates out of photon number m;
//! the band is one superdiagonal (damping) and up to two subdiagonals (thermal
//! excitation and pump emission).

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{emission_prob, modified_probabilities, overlap_weight, ModelParams};
use crate::quadrature::{GaussLegendre, QuadratureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    CavityDamping,
    OneAtomOp,
    TwoAtomOp,
    OneAtomGenerator,
    TwoAtomGenerator,
    SmallEpsGenerator,
}

impl MatrixKind {
    /// Kinds whose columns sum to zero (rate matrices rather than maps).
    pub fn is_generator(self) -> bool {
        !matches!(self, MatrixKind::OneAtomOp | MatrixKind::TwoAtomOp)
    }

    pub fn name(self) -> &'static str {
        match self {
            MatrixKind::CavityDamping => "cavity-damping",
            MatrixKind::OneAtomOp => "one-atom-op",
            MatrixKind::TwoAtomOp => "two-atom-op",
            MatrixKind::OneAtomGenerator => "one-atom-generator",
            MatrixKind::TwoAtomGenerator => "two-atom-generator",
            MatrixKind::SmallEpsGenerator => "small-eps-generator",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            MatrixKind::CavityDamping,
            MatrixKind::OneAtomOp,
            MatrixKind::TwoAtomOp,
            MatrixKind::OneAtomGenerator,
            MatrixKind::TwoAtomGenerator,
            MatrixKind::SmallEpsGenerator,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Which master equation to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    OneAtom,
    TwoAtom,
    SmallEps,
}

impl Model {
    pub fn generator_kind(self) -> MatrixKind {
        match self {
            Model::OneAtom => MatrixKind::OneAtomGenerator,
            Model::TwoAtom => MatrixKind::TwoAtomGenerator,
            Model::SmallEps => MatrixKind::SmallEpsGenerator,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::OneAtom => "one-atom",
            Model::TwoAtom => "two-atom",
            Model::SmallEps => "small-eps",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "one-atom" => Ok(Model::OneAtom),
            "two-atom" => Ok(Model::TwoAtom),
            "small-eps" => Ok(Model::SmallEps),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Parameters a matrix was built from, carried along for dumps and records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatrixMeta {
    pub theta: f64,
    pub flux_n: f64,
    pub n_b: f64,
    pub eps: f64,
    /// Converged panel count of the two-atom quadrature, if one was run.
    pub quad_panels: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub kind: MatrixKind,
    pub entries: Mat<f64>,
    pub meta: MatrixMeta,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|j| (0..n).map(|i| self.entries[(i, j)]).sum())
            .collect()
    }

    /// Largest column-sum defect over the columns the truncation does not
    /// clip (all but the last two).
    pub fn interior_conservation_error(&self) -> f64 {
        let target = if self.kind.is_generator() { 0.0 } else { 1.0 };
        let sums = self.column_sums();
        let interior = sums.len().saturating_sub(2);
        sums[..interior]
            .iter()
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }

    /// Probability lost through the truncation boundary: the column-sum
    /// defect of the last two columns.
    pub fn tail_leak(&self) -> f64 {
        let target = if self.kind.is_generator() { 0.0 } else { 1.0 };
        let sums = self.column_sums();
        sums[sums.len().saturating_sub(2)..]
            .iter()
            .map(|s| (s - target).abs())
            .fold(0.0, f64::max)
    }

    /// True if every nonzero entry lies within one superdiagonal and two
    /// subdiagonals.
    pub fn is_banded(&self) -> bool {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                let inside = i + 1 >= j && i <= j + 2;
                if !inside && self.entries[(i, j)] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Row-major CSV dump with a two-line comment header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# kind,dim,theta,N,nb,eps")?;
        writeln!(
            out,
            "# {},{},{:e},{:e},{:e},{:e}",
            self.kind.name(),
            self.dim(),
            self.meta.theta,
            self.meta.flux_n,
            self.meta.n_b,
            self.meta.eps
        )?;
        let n = self.dim();
        for i in 0..n {
            let row: Vec<String> = (0..n)
                .map(|j| format!("{:.16e}", self.entries[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_dim(n_max: usize, min: usize) -> Result<()> {
    if n_max < min {
        Err(Error::TruncationTooSmall { n_max, min })
    } else {
        Ok(())
    }
}

/// Cavity damping L_C toward a bath with thermal occupancy `n_b`.
pub fn build_cavity_damping(n_max: usize, n_b: f64) -> Result<GeneratorMatrix> {
    check_dim(n_max, 2)?;
    if !(n_b >= 0.0) {
        return Err(Error::InvalidParameter("n_b must be >= 0".into()));
    }
    let mut l = Mat::<f64>::zeros(n_max, n_max);
    for m in 0..n_max {
        let mf = m as f64;
        l[(m, m)] = (n_b + 1.0) * mf + n_b * (mf + 1.0);
        if m >= 1 {
            // photon loss m -> m-1
            l[(m - 1, m)] = -(n_b + 1.0) * mf;
        }
        if m + 1 < n_max {
            // thermal gain m -> m+1
            l[(m + 1, m)] = -n_b * (mf + 1.0);
        }
    }
    Ok(GeneratorMatrix {
        kind: MatrixKind::CavityDamping,
        entries: l,
        meta: MatrixMeta {
            n_b,
            ..Default::default()
        },
    })
}

/// One-atom pump map U₁: an excited atom adds a photon to n with
/// probability q_{n+1}.
pub fn build_one_atom_op(n_max: usize, theta: f64, flux_n: f64) -> Result<GeneratorMatrix> {
    check_dim(n_max, 2)?;
    let mut u = Mat::<f64>::zeros(n_max, n_max);
    for m in 0..n_max {
        let q = emission_prob(m + 1, theta, flux_n);
        u[(m, m)] = 1.0 - q;
        if m + 1 < n_max {
            u[(m + 1, m)] = q;
        }
    }
    Ok(GeneratorMatrix {
        kind: MatrixKind::OneAtomOp,
        entries: u,
        meta: MatrixMeta {
            theta,
            flux_n,
            ..Default::default()
        },
    })
}

/// Outcome probabilities of a two-atom event starting from n photons:
/// no emission, one emission, two emissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAtomCoeffs {
    pub u_aa: f64,
    pub u_ab: f64,
    pub u_bb: f64,
}

impl TwoAtomCoeffs {
    pub fn total(&self) -> f64 {
        self.u_aa + self.u_ab + self.u_bb
    }
}

/// Two-atom event coefficients for photon column `n`.
///
/// `split` is s/τ ∈ [0, 1]: the first atom interacts alone for s, both atoms
/// share the cavity for τ − s, then the second atom finishes alone for s.
/// `g_tau` is gτ = θ/√N. The overlap segment oscillates at the collective
/// frequency √(n + 3/2); both atoms start excited.
pub fn two_atom_coeffs(n: usize, split: f64, g_tau: f64) -> TwoAtomCoeffs {
    let nf = n as f64;
    let e = (nf + 1.0) / (2.0 * nf + 3.0);
    let gs = g_tau * split;
    let (s1, c1) = (gs * (nf + 1.0).sqrt()).sin_cos();
    let (s2, c2) = (gs * (nf + 2.0).sqrt()).sin_cos();
    let (s, c) = (g_tau * (1.0 - split) * (nf + 1.5).sqrt()).sin_cos();

    let r2e = (2.0 * e).sqrt();
    let s_sq = s * s;
    let aa = (1.0 - 2.0 * e * s_sq) * c1 * c1 + s_sq * s1 * s1 - 2.0 * r2e * c * s * s1 * c1;

    // amplitudes after the overlap segment of the states with the first
    // atom de-excited; the second atom then evolves alone at √(n+2)
    let a = c * c * s1 + r2e * c * s * c1;
    let b = 2.0 * (e * (1.0 - e)).sqrt() * s_sq * c1 + (2.0 * (1.0 - e)).sqrt() * c * s * s1;

    let first_kept = s1 * c1 * ((1.0 + 2.0 * e) * s_sq - 1.0) + r2e * c * s * (s1 * s1 - c1 * c1);
    let first_lost = -a * c2 + b * s2;
    let both = b * c2 + a * s2;

    TwoAtomCoeffs {
        u_aa: aa * aa,
        u_ab: first_kept * first_kept + first_lost * first_lost,
        u_bb: both * both,
    }
}

fn place_two_atom_columns(n_max: usize, aa: &[f64], ab: &[f64], bb: &[f64]) -> Mat<f64> {
    let mut u = Mat::<f64>::zeros(n_max, n_max);
    for m in 0..n_max {
        u[(m, m)] = aa[m];
        if m + 1 < n_max {
            u[(m + 1, m)] = ab[m];
        }
        if m + 2 < n_max {
            u[(m + 2, m)] = bb[m];
        }
    }
    u
}

/// Integrate the two-atom coefficients of every column against `weight(u)`
/// on u ∈ [0, 1], doubling panels until the max-norm change drops below
/// `quad.tol`. Returns (aa, ab, bb, panels).
fn integrate_two_atom<W: Fn(f64) -> f64>(
    n_max: usize,
    g_tau: f64,
    weight: W,
    quad: &QuadratureSpec,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    quad.validate()?;
    let gl = GaussLegendre::new(quad.order);
    // each panel spans less than ~π radians of the fastest one-atom phase
    let fastest = g_tau * ((n_max + 2) as f64).sqrt();
    let mut panels = quad.panels.max((fastest / PI).ceil() as usize).max(1);
    if panels * 2 > quad.max_panels {
        return Err(Error::NonConvergence {
            panels,
            last_change: f64::NAN,
        });
    }

    let eval = |panels: usize| {
        let mut aa = vec![0.0; n_max];
        let mut ab = vec![0.0; n_max];
        let mut bb = vec![0.0; n_max];
        gl.for_each_point(0.0, 1.0, panels, |u, w| {
            let wu = w * weight(u);
            for m in 0..n_max {
                let k = two_atom_coeffs(m, u, g_tau);
                aa[m] += wu * k.u_aa;
                ab[m] += wu * k.u_ab;
                bb[m] += wu * k.u_bb;
            }
        });
        (aa, ab, bb)
    };

    let mut prev = eval(panels);
    loop {
        let next_panels = panels * 2;
        if next_panels > quad.max_panels {
            return Err(Error::NonConvergence {
                panels,
                last_change: f64::NAN,
            });
        }
        let next = eval(next_panels);
        let change = max_diff(&prev.0, &next.0)
            .max(max_diff(&prev.1, &next.1))
            .max(max_diff(&prev.2, &next.2));
        panels = next_panels;
        if change < quad.tol {
            return Ok((next.0, next.1, next.2, panels));
        }
        if panels * 2 > quad.max_panels {
            return Err(Error::NonConvergence {
                panels,
                last_change: change,
            });
        }
        prev = next;
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Two-atom pump map U₂ averaged over the arrival gap with the Poisson
/// conditional density at the given ε.
pub fn build_two_atom_op(
    n_max: usize,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<GeneratorMatrix> {
    let eps = params.eps();
    build_two_atom_op_weighted(n_max, params, eps, quad, |u| overlap_weight(u, eps))
}

/// U₂ with the gap density flattened to 1/τ (the small-ε form).
pub fn build_two_atom_op_flat(
    n_max: usize,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<GeneratorMatrix> {
    build_two_atom_op_weighted(n_max, params, params.eps(), quad, |_| 1.0)
}

fn build_two_atom_op_weighted<W: Fn(f64) -> f64>(
    n_max: usize,
    params: &ModelParams,
    eps: f64,
    quad: &QuadratureSpec,
    weight: W,
) -> Result<GeneratorMatrix> {
    check_dim(n_max, 3)?;
    params.validate()?;
    let (aa, ab, bb, panels) = integrate_two_atom(n_max, params.g_tau(), weight, quad)?;
    Ok(GeneratorMatrix {
        kind: MatrixKind::TwoAtomOp,
        entries: place_two_atom_columns(n_max, &aa, &ab, &bb),
        meta: MatrixMeta {
            theta: params.theta,
            flux_n: params.flux_n,
            n_b: params.n_b,
            eps,
            quad_panels: Some(panels),
        },
    })
}

/// U₂(s) at a single gap, no averaging.
pub fn two_atom_op_at(n_max: usize, split: f64, g_tau: f64) -> Result<GeneratorMatrix> {
    check_dim(n_max, 3)?;
    let mut aa = vec![0.0; n_max];
    let mut ab = vec![0.0; n_max];
    let mut bb = vec![0.0; n_max];
    for m in 0..n_max {
        let k = two_atom_coeffs(m, split, g_tau);
        aa[m] = k.u_aa;
        ab[m] = k.u_ab;
        bb[m] = k.u_bb;
    }
    Ok(GeneratorMatrix {
        kind: MatrixKind::TwoAtomOp,
        entries: place_two_atom_columns(n_max, &aa, &ab, &bb),
        meta: MatrixMeta::default(),
    })
}

/// L = L_C − N·w₁(U₁ − 1) − N·w₂(U₂ − 1), where (w₁, w₂) are (1, 0) for the
/// one-atom model, (P̃₁, P̃₂) for the two-atom model and (1 − 2ε, ε) for the
/// small-ε model. The two-atom operator is only built when w₂ ≠ 0, so a
/// two-atom generator at ε = 0 is bit-identical to the one-atom one.
pub fn build_generator(
    model: Model,
    n_max: usize,
    params: &ModelParams,
    quad: &QuadratureSpec,
) -> Result<GeneratorMatrix> {
    params.validate()?;
    let eps = match model {
        Model::OneAtom => 0.0,
        _ => params.eps(),
    };
    let (w1, w2) = match model {
        Model::OneAtom => (1.0, 0.0),
        Model::TwoAtom => {
            let p = modified_probabilities(eps);
            (p.p1_mod, p.p2_mod)
        }
        Model::SmallEps => (1.0 - 2.0 * eps, eps),
    };

    let lc = build_cavity_damping(n_max, params.n_b)?;
    let u1 = build_one_atom_op(n_max, params.theta, params.flux_n)?;
    let u2 = if w2 != 0.0 {
        Some(match model {
            Model::SmallEps => build_two_atom_op_flat(n_max, params, quad)?,
            _ => build_two_atom_op(n_max, params, quad)?,
        })
    } else {
        None
    };

    let c1 = params.flux_n * w1;
    let c2 = params.flux_n * w2;
    let mut l = lc.entries;
    for j in 0..n_max {
        for i in 0..n_max {
            let delta = if i == j { 1.0 } else { 0.0 };
            let mut v = l[(i, j)] - c1 * (u1.entries[(i, j)] - delta);
            if let Some(u2) = &u2 {
                v -= c2 * (u2.entries[(i, j)] - delta);
            }
            l[(i, j)] = v;
        }
    }
    Ok(GeneratorMatrix {
        kind: model.generator_kind(),
        entries: l,
        meta: MatrixMeta {
            theta: params.theta,
            flux_n: params.flux_n,
            n_b: params.n_b,
            eps,
            quad_panels: u2.and_then(|u| u.meta.quad_panels),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact two-atom event by direct integration of the Schrödinger
    /// equation in the four states |ee,n⟩, |eg,n+1⟩, |ge,n+1⟩, |gg,n+2⟩.
    fn two_atom_oracle(n: usize, split: f64, g_tau: f64) -> [f64; 3] {
        let a = ((n + 1) as f64).sqrt();
        let b = ((n + 2) as f64).sqrt();
        // first atom alone: |ee,n> <-> |ge,n+1>, |eg,n+1> <-> |gg,n+2>
        let h1 = [
            [0.0, 0.0, a, 0.0],
            [0.0, 0.0, 0.0, b],
            [a, 0.0, 0.0, 0.0],
            [0.0, b, 0.0, 0.0],
        ];
        let h2 = [
            [0.0, a, 0.0, 0.0],
            [a, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, b],
            [0.0, 0.0, b, 0.0],
        ];
        let mut h12 = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                h12[i][j] = h1[i][j] + h2[i][j];
            }
        }
        let mut re = [1.0, 0.0, 0.0, 0.0];
        let mut im = [0.0; 4];
        let mut run = |h: &[[f64; 4]; 4], t: f64| {
            let steps = 4000;
            let dt = t / steps as f64;
            let mv = |v: &[f64; 4]| {
                let mut o = [0.0; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        o[i] += h[i][j] * v[j];
                    }
                }
                o
            };
            // d(re)/dt = H im, d(im)/dt = -H re
            let f = |re: &[f64; 4], im: &[f64; 4]| {
                let hr = mv(re);
                let hi = mv(im);
                let mut dr = [0.0; 4];
                let mut di = [0.0; 4];
                for i in 0..4 {
                    dr[i] = hi[i];
                    di[i] = -hr[i];
                }
                (dr, di)
            };
            for _ in 0..steps {
                let add = |x: &[f64; 4], d: &[f64; 4], h: f64| {
                    let mut o = *x;
                    for i in 0..4 {
                        o[i] += h * d[i];
                    }
                    o
                };
                let (k1r, k1i) = f(&re, &im);
                let (k2r, k2i) = f(&add(&re, &k1r, dt / 2.0), &add(&im, &k1i, dt / 2.0));
                let (k3r, k3i) = f(&add(&re, &k2r, dt / 2.0), &add(&im, &k2i, dt / 2.0));
                let (k4r, k4i) = f(&add(&re, &k3r, dt), &add(&im, &k3i, dt));
                for i in 0..4 {
                    re[i] += dt / 6.0 * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]);
                    im[i] += dt / 6.0 * (k1i[i] + 2.0 * k2i[i] + 2.0 * k3i[i] + k4i[i]);
                }
            }
        };
        run(&h1, g_tau * split);
        run(&h12, g_tau * (1.0 - split));
        run(&h2, g_tau * split);
        let p: Vec<f64> = (0..4).map(|i| re[i] * re[i] + im[i] * im[i]).collect();
        [p[0], p[1] + p[2], p[3]]
    }

    #[test]
    fn two_atom_coeffs_match_direct_evolution() {
        for &n in &[0usize, 1, 4, 17] {
            for &split in &[0.0, 0.3, 0.77, 1.0] {
                for &g_tau in &[0.4, 2.3] {
                    let k = two_atom_coeffs(n, split, g_tau);
                    let o = two_atom_oracle(n, split, g_tau);
                    assert!((k.u_aa - o[0]).abs() < 1e-9, "aa n={n} u={split}");
                    assert!((k.u_ab - o[1]).abs() < 1e-9, "ab n={n} u={split}");
                    assert!((k.u_bb - o[2]).abs() < 1e-9, "bb n={n} u={split}");
                }
            }
        }
    }

    #[test]
    fn two_atom_coeffs_unitary_on_grid() {
        for n in 0..=200 {
            for i in 0..=10 {
                let split = i as f64 / 10.0;
                for &g_tau in &[0.1, 1.0, 2.83, 7.0] {
                    let k = two_atom_coeffs(n, split, g_tau);
                    assert!((k.total() - 1.0).abs() < 1e-12);
                    for v in [k.u_aa, k.u_ab, k.u_bb] {
                        assert!((-1e-15..=1.0 + 1e-12).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn two_atom_coeffs_without_interaction() {
        let k = two_atom_coeffs(5, 0.4, 0.0);
        assert_eq!((k.u_aa, k.u_ab, k.u_bb), (1.0, 0.0, 0.0));
    }

    #[test]
    fn no_overlap_equals_two_one_atom_steps() {
        let (theta, flux) = (7.3, 20.0_f64);
        let g_tau = theta / flux.sqrt();
        for n in 0..60 {
            let k = two_atom_coeffs(n, 1.0, g_tau);
            let q1 = emission_prob(n + 1, theta, flux);
            let q2 = emission_prob(n + 2, theta, flux);
            assert!((k.u_aa - (1.0 - q1).powi(2)).abs() < 1e-12);
            assert!((k.u_ab - (q1 * (1.0 - q2) + (1.0 - q1) * q1)).abs() < 1e-12);
            assert!((k.u_bb - q1 * q2).abs() < 1e-12);
        }
    }

    #[test]
    fn cavity_damping_zero_temperature() {
        let l = build_cavity_damping(6, 0.0).unwrap();
        for m in 0..6 {
            assert_eq!(l.get(m, m), m as f64);
            if m + 1 < 6 {
                assert_eq!(l.get(m, m + 1), -((m + 1) as f64));
                assert_eq!(l.get(m + 1, m), 0.0);
            }
        }
        assert!(l.is_banded());
    }

    #[test]
    fn cavity_damping_thermal_column_zero() {
        let l = build_cavity_damping(10, 1.0).unwrap();
        assert_eq!(l.get(0, 0), 1.0);
        assert_eq!(l.get(1, 0), -1.0);
        assert_eq!(l.column_sums()[0], 0.0);
        assert!(l.interior_conservation_error() < 1e-12);
        // leak at the top column: thermal gain out of the truncation
        assert!((l.tail_leak() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_truncation() {
        assert!(build_cavity_damping(1, 0.0).is_err());
        assert!(build_one_atom_op(1, 1.0, 1.0).is_err());
        let p = ModelParams::one_atom(10.0, 0.0, 1.0).with_eps(0.1);
        assert!(build_two_atom_op(2, &p, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn one_atom_op_examples() {
        let u = build_one_atom_op(20, 0.0, 7.0).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(u.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let flux: f64 = 10.0;
        let u = build_one_atom_op(50, std::f64::consts::PI * flux.sqrt(), flux).unwrap();
        assert!((u.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(u.interior_conservation_error() < 1e-12);
        let last = u.column_sums()[49];
        assert!((last - 1.0 + emission_prob(50, u.meta.theta, flux)).abs() < 1e-15);
    }

    #[test]
    fn two_atom_op_identity_without_pump() {
        let p = ModelParams::one_atom(10.0, 0.0, 0.0).with_eps(0.3);
        let u = build_two_atom_op(30, &p, &QuadratureSpec::default()).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((u.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_atom_op_conserves_and_converges() {
        let p = ModelParams::one_atom(50.0, 0.0, 12.0).with_eps(0.4);
        let quad = QuadratureSpec::default();
        let u = build_two_atom_op(200, &p, &quad).unwrap();
        assert!(u.interior_conservation_error() < 1e-10);
        assert!(u.is_banded());
        assert!(u.meta.quad_panels.unwrap() >= 8);
        // leak equals the omitted sub-band coefficients
        let sums = u.column_sums();
        let gl = GaussLegendre::new(quad.order);
        let panels = u.meta.quad_panels.unwrap();
        let g_tau = p.g_tau();
        let bb_198 = gl.integrate(0.0, 1.0, panels, |x| {
            overlap_weight(x, 0.4) * two_atom_coeffs(198, x, g_tau).u_bb
        });
        assert!((1.0 - sums[198] - bb_198).abs() < 1e-12);
        assert!((1.0 - sums[199] - (1.0 - u.get(199, 199))).abs() < 1e-12);
    }

    #[test]
    fn quadrature_refinement_shrinks() {
        let p = ModelParams::one_atom(5.0, 0.0, 15.0).with_eps(0.2);
        let g_tau = p.g_tau();
        let gl = GaussLegendre::new(16);
        let col = 60;
        let integ = |panels| {
            gl.integrate(0.0, 1.0, panels, |u| {
                overlap_weight(u, 0.2) * two_atom_coeffs(col, u, g_tau).u_ab
            })
        };
        let v: Vec<f64> = [4, 8, 16, 32].iter().map(|&k| integ(k)).collect();
        let d1 = (v[1] - v[0]).abs();
        let d2 = (v[2] - v[1]).abs();
        let d3 = (v[3] - v[2]).abs();
        assert!(d2 < d1 && d3 < d2 * 0.5 + 1e-15);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let p = ModelParams::one_atom(1.0, 0.0, 20.0).with_eps(0.5);
        let quad = QuadratureSpec {
            order: 2,
            panels: 8,
            tol: 1e-14,
            max_panels: 64,
        };
        assert!(matches!(
            build_two_atom_op(200, &p, &quad),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn two_atom_at_zero_eps_is_one_atom_bitwise() {
        let quad = QuadratureSpec::default();
        let p = ModelParams::one_atom(50.0, 0.2, 8.1).with_eps(0.0);
        let a = build_generator(Model::OneAtom, 120, &p, &quad).unwrap();
        let b = build_generator(Model::TwoAtom, 120, &p, &quad).unwrap();
        for i in 0..120 {
            for j in 0..120 {
                assert_eq!(a.get(i, j).to_bits(), b.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn tiny_flux_reduces_to_damping() {
        let quad = QuadratureSpec::default();
        // gτ = θ/√N = 3 stays moderate
        let p = ModelParams::one_atom(1e-12, 0.3, 3e-6).with_eps(0.2);
        let lc = build_cavity_damping(40, 0.3).unwrap();
        for model in [Model::OneAtom, Model::TwoAtom, Model::SmallEps] {
            let l = build_generator(model, 40, &p, &quad).unwrap();
            for i in 0..40 {
                for j in 0..40 {
                    assert!((l.get(i, j) - lc.get(i, j)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn small_eps_close_to_two_atom() {
        let quad = QuadratureSpec::default();
        let p = ModelParams::one_atom(50.0, 0.0, 5.0).with_eps(0.01);
        let a = build_generator(Model::SmallEps, 200, &p, &quad).unwrap();
        let b = build_generator(Model::TwoAtom, 200, &p, &quad).unwrap();
        let worst = (0..200)
            .map(|j| (0..200).map(|i| (a.get(i, j) - b.get(i, j)).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert!(worst < 5e-2, "{worst}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let l = build_cavity_damping(4, 0.5).unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# kind,dim,theta,N,nb,eps");
        assert!(lines[1].starts_with("# cavity-damping,4,"));
        assert_eq!(lines.len(), 6);
        let first: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generators_conserve_probability(flux in 1.0f64..100.0, nb in 0.0f64..2.0,
                                           theta in 0.0f64..20.0, eps in 0.0f64..1.0) {
            let quad = QuadratureSpec::default();
            let p = ModelParams::one_atom(flux, nb, theta).with_eps(eps);
            for model in [Model::OneAtom, Model::TwoAtom, Model::SmallEps] {
                let l = build_generator(model, 120, &p, &quad).unwrap();
                // interior columns m <= n_max - 3
                let sums = l.column_sums();
                for s in &sums[..117] {
                    prop_assert!(s.abs() < 1e-10);
                }
                prop_assert!(l.is_banded());
            }
        }

        #[test]
        fn one_atom_entries_in_unit_interval(flux in 0.5f64..100.0, theta in 0.0f64..30.0) {
            let u = build_one_atom_op(80, theta, flux).unwrap();
            for i in 0..80 {
                for j in 0..80 {
                    prop_assert!((0.0..=1.0).contains(&u.get(i, j)));
                }
            }
        }
    }
}
