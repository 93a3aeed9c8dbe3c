//! Brute-force time integration of dp/dt = −γ L p.
//!
//! Used to cross-check the stationary states and relaxation rates produced
//! by the `spectral` module. It only reads matrix entries; nothing here goes
//! through the linear solvers or eigensolvers.

use std::io::Write;

use crate::error::{Error, Result};
use crate::generators::GeneratorMatrix;
use crate::spectral::PhotonDistribution;

/// Sparse copy of a generator's nonzero entries.
struct SparseRates {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseRates {
    fn from_matrix(l: &GeneratorMatrix) -> Self {
        let n = l.dim();
        let mut entries = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let v = l.entries[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        SparseRates { dim: n, entries }
    }

    /// out = −L p
    fn rhs(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(i, j, v) in &self.entries {
            out[i] -= v * p[j];
        }
    }

    fn rk4_step(&self, p: &mut [f64], h: f64, s: &mut Rk4Scratch) {
        let n = self.dim;
        self.rhs(p, &mut s.k1);
        for i in 0..n {
            s.tmp[i] = p[i] + 0.5 * h * s.k1[i];
        }
        self.rhs(&s.tmp, &mut s.k2);
        for i in 0..n {
            s.tmp[i] = p[i] + 0.5 * h * s.k2[i];
        }
        self.rhs(&s.tmp, &mut s.k3);
        for i in 0..n {
            s.tmp[i] = p[i] + h * s.k3[i];
        }
        self.rhs(&s.tmp, &mut s.k4);
        for i in 0..n {
            p[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
        }
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub final_state: PhotonDistribution,
    /// (γt, p) checkpoints, including t = 0 and the final time.
    pub trajectory_samples: Vec<(f64, Vec<f64>)>,
    pub step_count: usize,
    /// |Σ p − 1| at the final time, before renormalization.
    pub drift: f64,
    /// Most negative entry seen at any checkpoint, before clamping.
    pub min_entry: f64,
}

impl EvolutionResult {
    /// `gamma_t, p_0, p_1, …` rows.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.final_state.len();
        let header: Vec<String> = std::iter::once("gamma_t".to_string())
            .chain((0..dim).map(|n| format!("p_{n}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, p) in &self.trajectory_samples {
            let row: Vec<String> = std::iter::once(format!("{t:.16e}"))
                .chain(p.iter().map(|x| format!("{x:.16e}")))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Largest stable step for the given generator under the dt·max|L_nn| < 0.5
/// heuristic.
pub fn max_stable_step(l: &GeneratorMatrix) -> f64 {
    let n = l.dim();
    let d = (0..n).map(|i| l.entries[(i, i)].abs()).fold(0.0, f64::max);
    if d == 0.0 {
        f64::INFINITY
    } else {
        0.5 / d
    }
}

/// Integrate from `p0` to γt = `t_end` with classical RK4 at a fixed step no
/// larger than `dt`. A checkpoint is stored every `sample_every` steps
/// (`0` keeps only the endpoints).
pub fn evolve(
    l: &GeneratorMatrix,
    p0: &PhotonDistribution,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<EvolutionResult> {
    let limit = max_stable_step(l);
    if !(dt > 0.0) || dt >= limit {
        return Err(Error::StepTooLarge {
            dt,
            suggested: 0.9 * limit,
        });
    }
    if p0.len() != l.dim() {
        return Err(Error::InvalidParameter(format!(
            "initial state has {} entries, generator has dimension {}",
            p0.len(),
            l.dim()
        )));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter("t_end must be >= 0".into()));
    }
    let rates = SparseRates::from_matrix(l);
    let n = rates.dim;
    let steps = (t_end / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };

    let mut p = p0.probs.clone();
    let mut scratch = Rk4Scratch::new(n);
    let mut samples = vec![(0.0, p.clone())];
    let mut min_entry = p.iter().cloned().fold(f64::INFINITY, f64::min);

    for step in 1..=steps {
        rates.rk4_step(&mut p, h, &mut scratch);
        let keep = (sample_every > 0 && step % sample_every == 0) || step == steps;
        if keep {
            min_entry = p.iter().cloned().fold(min_entry, f64::min);
            samples.push((h * step as f64, p.clone()));
        }
    }

    let drift = (p.iter().sum::<f64>() - 1.0).abs();
    Ok(EvolutionResult {
        final_state: PhotonDistribution::from_weights(p, f64::INFINITY),
        trajectory_samples: samples,
        step_count: steps,
        drift,
        min_entry,
    })
}

/// Exponential decay rate from the late part of a relaxing scalar signal:
/// minus the least-squares slope of ln|v(t) − v(∞)| over the last
/// `window` fraction of the time span.
pub fn decay_rate_fit(times: &[f64], values: &[f64], asymptote: f64, window: f64) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InvalidParameter(
            "need matching time and value series".into(),
        ));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidParameter("window must be in (0, 1]".into()));
    }
    let dev0 = (values[0] - asymptote).abs();
    let dev_end = (values[values.len() - 1] - asymptote).abs();
    if !(dev_end <= (-3.0f64).exp() * dev0) {
        return Err(Error::InsufficientDecay(format!(
            "deviation only fell from {dev0:e} to {dev_end:e}"
        )));
    }
    let t0 = times[0];
    let t1 = times[times.len() - 1];
    let start = t1 - window * (t1 - t0);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= start)
        .map(|(t, v)| (*t, (v - asymptote).abs()))
        .filter(|(_, d)| *d > 0.0)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 20 {
        return Err(Error::InsufficientDecay(format!(
            "{} usable samples in the fit window, need 20",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    Ok(-sxy / sxx)
}

/// Mean photon number of a raw probability vector.
pub fn mean_photons(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, x)| n as f64 * x).sum()
}

/// Asymptotic relaxation rate of ⟨n⟩(t) from `p0`, measured by time stepping.
///
/// ⟨n⟩(t) − ⟨n⟩(∞) = Σ n δ_n(t) with δ = p(t) − p_inf. The deviation δ is
/// evolved directly and renormalized after every unit of γt (removing
/// round-off drift along `p_inf`), so late times stay far above the
/// floating-point floor. The per-block rate −ln|Σnδ(t+1)/Σnδ(t)| settles on
/// the slowest mode once faster ones have died out; it is returned when
/// three successive blocks agree to relative `tol`. `p_inf` is the
/// long-time state, e.g. from [`evolve`].
pub fn relaxation_rate(
    l: &GeneratorMatrix,
    p_inf: &PhotonDistribution,
    p0: &PhotonDistribution,
    dt: f64,
    tol: f64,
    t_max: f64,
) -> Result<f64> {
    let limit = max_stable_step(l);
    if !(dt > 0.0) || dt >= limit {
        return Err(Error::StepTooLarge {
            dt,
            suggested: 0.9 * limit,
        });
    }
    if p0.len() != l.dim() || p_inf.len() != l.dim() {
        return Err(Error::InvalidParameter(
            "state and generator dimensions differ".into(),
        ));
    }
    let rates = SparseRates::from_matrix(l);
    let n = rates.dim;
    let steps = (1.0 / dt).ceil() as usize;
    let h = 1.0 / steps as f64;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut delta: Vec<f64> = p0.probs.iter().zip(&p_inf.probs).map(|(a, b)| a - b).collect();
    let mut size = norm(&delta);
    if size == 0.0 {
        return Err(Error::InsufficientDecay("initial state is already stationary".into()));
    }
    delta.iter_mut().for_each(|x| *x /= size);
    let mut scratch = Rk4Scratch::new(n);
    let mut before = mean_photons(&delta);
    let mut prev = f64::NAN;
    let mut agreeing = 0;
    let mut t = 0.0;
    while t < t_max {
        for _ in 0..steps {
            rates.rk4_step(&mut delta, h, &mut scratch);
        }
        t += 1.0;
        let rate = -(mean_photons(&delta) / before).abs().ln();
        let drift: f64 = delta.iter().sum();
        for (d, p) in delta.iter_mut().zip(&p_inf.probs) {
            *d -= drift * p;
        }
        size = norm(&delta);
        if !(size > 0.0) {
            return Err(Error::InsufficientDecay("deviation vanished".into()));
        }
        delta.iter_mut().for_each(|x| *x /= size);
        before = mean_photons(&delta);
        if (rate - prev).abs() <= tol * rate.abs() {
            agreeing += 1;
            if agreeing == 3 {
                return Ok(rate);
            }
        } else {
            agreeing = 0;
        }
        prev = rate;
    }
    Err(Error::InsufficientDecay(format!(
        "block rates still changing at t = {t_max}"
    )))
}
