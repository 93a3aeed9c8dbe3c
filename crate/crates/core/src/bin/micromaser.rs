use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use micromaser::generators::{build_two_atom_op_flat, MatrixKind};
use micromaser::sweep::{plot_script, write_markers_csv, write_records};
use micromaser::{
    build_cavity_damping, build_generator, build_one_atom_op, build_two_atom_op, emit_markers,
    run_sweep, write_csv, EpsMode, Error, GeneratorMatrix, Model, SweepConfig,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_ALL_FLAGGED: u8 = 4;

/// Sweep the micromaser pump parameter θ and write stationary observables and
/// the correlation length as CSV.
#[derive(Parser, Debug)]
#[command(name = "micromaser", version)]
struct Cli {
    /// JSON sweep configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// one-atom, two-atom or small-eps.
    #[arg(long)]
    model: Option<Model>,
    #[arg(long)]
    flux_n: Option<f64>,
    #[arg(long)]
    nb: Option<f64>,
    #[arg(long)]
    theta_min: Option<f64>,
    #[arg(long)]
    theta_max: Option<f64>,
    #[arg(long)]
    theta_steps: Option<usize>,
    /// Fixed mean number of atoms per transit time.
    #[arg(long, conflicts_with = "eps_coupled")]
    eps: Option<f64>,
    /// Let ε follow θ through ε = γ√N·θ/g.
    #[arg(long)]
    eps_coupled: bool,
    /// Rabi frequency g in s⁻¹.
    #[arg(long)]
    g_hz: Option<f64>,
    /// Cavity damping γ in s⁻¹.
    #[arg(long)]
    gamma_hz: Option<f64>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    quad_tol: Option<f64>,
    #[arg(long)]
    refine_markers: bool,
    /// Sweep CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    markers_out: Option<PathBuf>,
    /// Also emit the large-N transition points as markers.
    #[arg(long)]
    phase_markers: bool,
    /// Write a matplotlib script for the sweep CSV (requires --out).
    #[arg(long, requires = "out")]
    plot_script: Option<PathBuf>,
    /// Dump one matrix at theta_min instead of sweeping: cavity-damping,
    /// one-atom-op, two-atom-op, one-atom-generator, two-atom-generator or
    /// small-eps-generator.
    #[arg(long)]
    dump_matrix: Option<String>,
    /// Destination of --dump-matrix; stdout when absent.
    #[arg(long, requires = "dump_matrix")]
    dump_out: Option<PathBuf>,
}

fn apply_overrides(cli: &Cli, mut c: SweepConfig) -> SweepConfig {
    if let Some(v) = cli.model {
        c.model = v;
    }
    if let Some(v) = cli.flux_n {
        c.flux_n = v;
    }
    if let Some(v) = cli.nb {
        c.n_b = v;
    }
    if let Some(v) = cli.theta_min {
        c.theta_min = v;
    }
    if let Some(v) = cli.theta_max {
        c.theta_max = v;
    }
    if let Some(v) = cli.theta_steps {
        c.theta_steps = v;
    }
    if let Some(v) = cli.eps {
        c.eps_mode = EpsMode::Fixed(v);
    }
    if cli.eps_coupled {
        c.eps_mode = EpsMode::Coupled;
    }
    if let Some(v) = cli.g_hz {
        c.rabi_g = v;
    }
    if let Some(v) = cli.gamma_hz {
        c.gamma = v;
    }
    if let Some(v) = cli.nmax {
        c.n_max = v;
    }
    if let Some(v) = cli.quad_tol {
        c.quad.tol = v;
    }
    if cli.refine_markers {
        c.refine_markers = true;
    }
    if cli.phase_markers {
        c.phase_markers = true;
    }
    if cli.out.is_some() {
        c.out = cli.out.clone();
    }
    if cli.markers_out.is_some() {
        c.markers_out = cli.markers_out.clone();
    }
    c
}

fn build_kind(kind: MatrixKind, c: &SweepConfig) -> micromaser::Result<GeneratorMatrix> {
    let p = c.params(c.theta_min);
    match kind {
        MatrixKind::CavityDamping => build_cavity_damping(c.n_max, c.n_b),
        MatrixKind::OneAtomOp => build_one_atom_op(c.n_max, p.theta, p.flux_n),
        MatrixKind::TwoAtomOp if c.model == Model::SmallEps => {
            build_two_atom_op_flat(c.n_max, &p, &c.quad)
        }
        MatrixKind::TwoAtomOp => build_two_atom_op(c.n_max, &p, &c.quad),
        MatrixKind::OneAtomGenerator => build_generator(Model::OneAtom, c.n_max, &p, &c.quad),
        MatrixKind::TwoAtomGenerator => build_generator(Model::TwoAtom, c.n_max, &p, &c.quad),
        MatrixKind::SmallEpsGenerator => build_generator(Model::SmallEps, c.n_max, &p, &c.quad),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("micromaser: {msg}");
    ExitCode::from(code)
}

fn io_fail(path: &std::path::Path, e: std::io::Error) -> ExitCode {
    fail(EXIT_IO, format!("cannot write {}: {e}", path.display()))
}

fn dump(kind_name: &str, cli: &Cli, config: &SweepConfig) -> ExitCode {
    let Some(kind) = MatrixKind::from_name(kind_name) else {
        return fail(EXIT_CONFIG, format!("unknown matrix kind {kind_name:?}"));
    };
    let m = match build_kind(kind, config) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let result = match &cli.dump_out {
        Some(path) => File::create(path)
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                m.write_csv(&mut w)?;
                w.flush()
            })
            .map_err(|e| io_fail(path, e)),
        None => m
            .write_csv(std::io::stdout().lock())
            .map_err(|e| fail(EXIT_IO, e)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let base = match &cli.config {
        Some(path) => match SweepConfig::from_json_file(path) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => SweepConfig::default(),
    };
    let config = apply_overrides(&cli, base);
    if let Err(e) = config.validate() {
        return fail(EXIT_CONFIG, e);
    }
    if let Some(kind) = &cli.dump_matrix {
        return dump(kind, &cli, &config);
    }

    let records = match run_sweep(&config) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let flagged = records.iter().filter(|r| r.is_flagged()).count();

    match &config.out {
        Some(path) => {
            if let Err(e) = write_csv(&records, path) {
                return match e {
                    Error::OutputUnwritable { .. } | Error::Io(_) => fail(EXIT_IO, e),
                    other => fail(EXIT_CONFIG, other),
                };
            }
        }
        None => {
            if let Err(e) = write_records(&records, std::io::stdout().lock()) {
                return fail(EXIT_IO, e);
            }
        }
    }
    if let Some(path) = &config.markers_out {
        if let Err(e) = write_markers_csv(&emit_markers(&config), path) {
            return fail(EXIT_IO, e);
        }
    }
    if let (Some(script), Some(out)) = (&cli.plot_script, &config.out) {
        let text = plot_script(out, config.markers_out.as_deref(), config.corr_scale);
        if let Err(e) = std::fs::write(script, text) {
            return io_fail(script, e);
        }
    }

    if flagged > 0 {
        eprintln!("micromaser: {flagged} of {} grid points flagged", records.len());
    }
    if flagged == records.len() {
        return ExitCode::from(EXIT_ALL_FLAGGED);
    }
    ExitCode::SUCCESS
}
