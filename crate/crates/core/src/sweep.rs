//! θ-sweeps: configuration, per-point evaluation, markers and CSV output.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SpectrumAnomaly};
use crate::generators::{build_generator, Model};
use crate::params::{EpsMode, ModelParams};
use crate::quadrature::QuadratureSpec;
use crate::spectral::{analyze, SpectralOptions};

/// Large-N one-atom maser transition points (thermal→maser, then the first
/// three maser→maser jumps).
pub const PHASE_TRANSITIONS: [(&str, f64); 4] = [
    ("theta_0", 1.0),
    ("theta_01", 6.6610),
    ("theta_12", 12.035),
    ("theta_23", 17.413),
];

/// Largest truncation the auto-escalation will try.
pub const MAX_AUTO_NMAX: usize = 1600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub model: Model,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_steps: usize,
    pub flux_n: f64,
    pub n_b: f64,
    pub eps_mode: EpsMode,
    /// Rabi frequency g in s⁻¹ (only used by the coupled ε mode).
    pub rabi_g: f64,
    /// Cavity damping γ in s⁻¹ (only used by the coupled ε mode).
    pub gamma: f64,
    pub n_max: usize,
    /// Double n_max while the stationary tail mass is above threshold.
    pub auto_nmax: bool,
    pub quad: QuadratureSpec,
    pub zero_threshold: f64,
    pub tail_threshold: f64,
    /// Add points at triple density within ±0.1 of each marker.
    pub refine_markers: bool,
    pub trapping_markers: bool,
    pub phase_markers: bool,
    pub marker_max_k: usize,
    pub marker_max_n: usize,
    /// Display factor applied to γξ by generated plot scripts only.
    pub corr_scale: f64,
    pub out: Option<PathBuf>,
    pub markers_out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: Model::OneAtom,
            theta_min: 0.0,
            theta_max: 20.0,
            theta_steps: 2000,
            flux_n: 50.0,
            n_b: 0.0,
            eps_mode: EpsMode::Fixed(0.0),
            rabi_g: 39_000.0,
            gamma: 10.0,
            n_max: 200,
            auto_nmax: false,
            quad: QuadratureSpec::default(),
            zero_threshold: SpectralOptions::default().zero_threshold,
            tail_threshold: SpectralOptions::default().tail_threshold,
            refine_markers: false,
            trapping_markers: true,
            phase_markers: false,
            marker_max_k: 3,
            marker_max_n: 3,
            corr_scale: 1.0,
            out: None,
            markers_out: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn params(&self, theta: f64) -> ModelParams {
        ModelParams {
            flux_n: self.flux_n,
            n_b: self.n_b,
            theta,
            rabi_g: self.rabi_g,
            gamma: self.gamma,
            eps_mode: self.eps_mode,
        }
    }

    pub fn spectral_options(&self) -> SpectralOptions {
        SpectralOptions {
            zero_threshold: self.zero_threshold,
            tail_threshold: self.tail_threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if !(self.theta_min.is_finite() && self.theta_max.is_finite()) {
            return bad("theta range must be finite");
        }
        if self.theta_min > self.theta_max {
            return bad("theta_min must not exceed theta_max");
        }
        if self.theta_min < 0.0 {
            return bad("theta_min must be >= 0");
        }
        if self.theta_steps == 0 {
            return bad("theta_steps must be >= 1");
        }
        if self.n_max < 3 {
            return bad("n_max must be >= 3");
        }
        if !(self.zero_threshold > 0.0 && self.tail_threshold > 0.0) {
            return bad("thresholds must be > 0");
        }
        self.quad
            .validate()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.params(self.theta_min)
            .validate()
            .map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    /// Uniform grid, optionally densified around markers.
    pub fn theta_grid(&self) -> Vec<f64> {
        let n = self.theta_steps;
        let span = self.theta_max - self.theta_min;
        let mut grid: Vec<f64> = if n == 1 {
            vec![self.theta_min]
        } else {
            (0..n)
                .map(|i| self.theta_min + span * i as f64 / (n - 1) as f64)
                .collect()
        };
        if self.refine_markers && n > 1 {
            let h = span / (n - 1) as f64 / 3.0;
            for m in emit_markers(self) {
                let lo = (m.theta - 0.1).max(self.theta_min);
                let hi = (m.theta + 0.1).min(self.theta_max);
                let mut t = lo;
                while t <= hi {
                    grid.push(t);
                    t += h;
                }
            }
            grid.sort_by(f64::total_cmp);
            let tol = 1e-9 * h.max(f64::MIN_POSITIVE);
            grid.dedup_by(|a, b| (*a - *b).abs() <= tol);
        }
        grid
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub theta: f64,
    pub eps: f64,
    pub mean_n: f64,
    pub mean_x: f64,
    pub var_n: f64,
    pub lambda1_re: f64,
    pub lambda1_im: f64,
    pub corr_length: f64,
    pub residual: f64,
    pub tail_mass: f64,
    pub quad_panels: usize,
    /// Empty when the point is clean; otherwise `|`-separated flag names.
    pub flags: String,
}

pub const CSV_HEADER: &str = "theta,eps,mean_n,mean_x,var_n,lambda1_re,lambda1_im,corr_length,residual,tail_mass,quad_panels,flags";

impl SweepRecord {
    fn flagged(theta: f64, eps: f64, quad_panels: usize, flag: &str) -> Self {
        SweepRecord {
            theta,
            eps,
            mean_n: f64::NAN,
            mean_x: f64::NAN,
            var_n: f64::NAN,
            lambda1_re: f64::NAN,
            lambda1_im: f64::NAN,
            corr_length: f64::NAN,
            residual: f64::NAN,
            tail_mass: f64::NAN,
            quad_panels,
            flags: flag.to_string(),
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

fn flag_name(e: &Error) -> &'static str {
    match e {
        Error::SpectrumAnomaly(SpectrumAnomaly::Degenerate { .. }) => "degenerate",
        Error::SpectrumAnomaly(SpectrumAnomaly::NoZeroMode { .. }) => "no-zero-mode",
        Error::SpectrumAnomaly(SpectrumAnomaly::Unstable { .. }) => "unstable",
        Error::SpectrumAnomaly(SpectrumAnomaly::NoSubleading) => "no-subleading",
        Error::Unconverged { .. } => "unconverged",
        Error::SingularSystem => "singular",
        Error::NonConvergence { .. } => "quad-nonconvergence",
        Error::EigenFailure(_) => "eigen-failure",
        _ => "invalid",
    }
}

/// Evaluate a single grid point. Failures become flagged records.
pub fn evaluate_point(config: &SweepConfig, theta: f64) -> SweepRecord {
    let params = config.params(theta);
    let eps = match config.model {
        Model::OneAtom => 0.0,
        _ => params.eps(),
    };
    let opts = config.spectral_options();
    let mut n_max = config.n_max;
    loop {
        let l = match build_generator(config.model, n_max, &params, &config.quad) {
            Ok(l) => l,
            Err(e) => return SweepRecord::flagged(theta, eps, 0, flag_name(&e)),
        };
        let panels = l.meta.quad_panels.unwrap_or(0);
        match analyze(&l, params.flux_n, &opts) {
            Ok(s) => {
                return SweepRecord {
                    theta,
                    eps,
                    mean_n: s.mean_n,
                    mean_x: s.mean_x,
                    var_n: s.var_n,
                    lambda1_re: s.lambda1_re,
                    lambda1_im: s.lambda1_im,
                    corr_length: s.corr_length,
                    residual: s.residual,
                    tail_mass: s.tail_mass,
                    quad_panels: panels,
                    flags: String::new(),
                }
            }
            Err(Error::Unconverged { tail_mass, .. })
                if config.auto_nmax && tail_mass > opts.tail_threshold && n_max * 2 <= MAX_AUTO_NMAX =>
            {
                n_max *= 2;
            }
            Err(e) => return SweepRecord::flagged(theta, eps, panels, flag_name(&e)),
        }
    }
}

/// Run every grid point (in parallel) and return records in grid order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let grid = config.theta_grid();
    Ok(grid
        .par_iter()
        .map(|&theta| evaluate_point(config, theta))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarkerKind {
    Trapping { k: usize, n: usize },
    Phase(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub theta: f64,
    pub kind: MarkerKind,
}

/// Trapping values θ = kπ√(N/n) for k ≤ marker_max_k, n ≤ marker_max_n, and
/// the large-N transition points, restricted to the sweep range and sorted.
pub fn emit_markers(config: &SweepConfig) -> Vec<Marker> {
    let mut out: Vec<Marker> = Vec::new();
    let in_range = |t: f64| t >= config.theta_min && t <= config.theta_max;
    if config.trapping_markers {
        for n in 1..=config.marker_max_n {
            for k in 1..=config.marker_max_k {
                let theta = k as f64 * PI * (config.flux_n / n as f64).sqrt();
                let dup = out.iter().any(|m| (m.theta - theta).abs() < 1e-9);
                if in_range(theta) && !dup {
                    out.push(Marker {
                        theta,
                        kind: MarkerKind::Trapping { k, n },
                    });
                }
            }
        }
    }
    if config.phase_markers {
        for (name, theta) in PHASE_TRANSITIONS {
            if in_range(theta) {
                out.push(Marker {
                    theta,
                    kind: MarkerKind::Phase(name),
                });
            }
        }
    }
    out.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    out
}

pub fn write_markers_csv(markers: &[Marker], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::OutputUnwritable {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io = |source| Error::OutputUnwritable {
        path: path.display().to_string(),
        source,
    };
    writeln!(w, "theta,kind,k,n,label").map_err(io)?;
    for m in markers {
        let line = match &m.kind {
            MarkerKind::Trapping { k, n } => {
                format!("{:.16e},trapping,{k},{n},k={k} n={n}", m.theta)
            }
            MarkerKind::Phase(name) => format!("{:.16e},phase,,,{name}", m.theta),
        };
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_records<W: Write>(records: &[SweepRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.theta),
            fmt_f64(r.eps),
            fmt_f64(r.mean_n),
            fmt_f64(r.mean_x),
            fmt_f64(r.var_n),
            fmt_f64(r.lambda1_re),
            fmt_f64(r.lambda1_im),
            fmt_f64(r.corr_length),
            fmt_f64(r.residual),
            fmt_f64(r.tail_mass),
            r.quad_panels,
            r.flags
        )?;
    }
    Ok(())
}

/// Header plus one row per record, 17 significant digits, LF endings.
pub fn write_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to write".into()));
    }
    let io = |source| Error::OutputUnwritable {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    write_records(records, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let bad = |line: usize, what: &str| {
        Error::InvalidParameter(format!("{}:{line}: {what}", path.display()))
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != CSV_HEADER {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(bad(i + 1, "expected 12 columns"));
        }
        let f = |k: usize| -> Result<f64> {
            cols[k].parse::<f64>().map_err(|_| bad(i + 1, "bad float"))
        };
        out.push(SweepRecord {
            theta: f(0)?,
            eps: f(1)?,
            mean_n: f(2)?,
            mean_x: f(3)?,
            var_n: f(4)?,
            lambda1_re: f(5)?,
            lambda1_im: f(6)?,
            corr_length: f(7)?,
            residual: f(8)?,
            tail_mass: f(9)?,
            quad_panels: cols[10].parse().map_err(|_| bad(i + 1, "bad panel count"))?,
            flags: cols[11].to_string(),
        });
    }
    Ok(out)
}

/// A matplotlib script that plots ⟨x⟩ and γξ from a sweep CSV with optional
/// marker lines.
pub fn plot_script(csv: &Path, markers: Option<&Path>, corr_scale: f64) -> String {
    let markers = match markers {
        Some(p) => format!("{:?}", p.display().to_string()),
        None => "None".to_string(),
    };
    format!(
        r#"import csv
import math
import matplotlib.pyplot as plt

CSV = {csv:?}
MARKERS = {markers}
CORR_SCALE = {corr_scale:?}

rows = [r for r in csv.DictReader(open(CSV)) if not r["flags"]]
theta = [float(r["theta"]) for r in rows]
mean_x = [float(r["mean_x"]) for r in rows]
corr = [CORR_SCALE * float(r["corr_length"]) for r in rows]

fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 7))
ax1.plot(theta, mean_x, lw=1)
ax1.set_ylabel("<x>")
ax2.semilogy(theta, corr, lw=1)
ax2.set_ylabel("gamma xi" if CORR_SCALE == 1.0 else "gamma xi x %g" % CORR_SCALE)
ax2.set_xlabel("theta")
if MARKERS:
    for m in csv.DictReader(open(MARKERS)):
        for ax in (ax1, ax2):
            ax.axvline(float(m["theta"]), color="grey", lw=0.5, ls=":")
fig.tight_layout()
fig.savefig(CSV.rsplit(".", 1)[0] + ".png", dpi=150)
"#,
        csv = csv.display().to_string(),
    )
}
