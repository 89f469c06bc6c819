//! Command-line front end. Each subcommand reads a [`Config`], calls the
//! library and writes CSV files under the output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::channel::beat_parameters;
use crate::config::Config;
use crate::fisher::{
    cfi_closed_sawtooth, cfi_closed_triangle_windows, cfi_numeric, qfi_closed_sawtooth, qfi_closed_triangle_windows,
    qfi_numeric, sld_derivative_check, sld_pair, sld_qfi, weak_commutativity, FisherResult, Parametrization,
    QuadratureSettings,
};
use crate::harness::{
    export_monte_carlo, resolution_csv, resolution_summary, run_monte_carlo, run_resolution, write_file, PARAMS,
};
use crate::quantum::{noon_probability, NoonModel};
use crate::waveform::{discrete_spectrum, Family, TimeGrid};
use crate::{Error, Result, C};

#[derive(Debug, Parser)]
#[command(name = "qfmcw", version, about = "Quantum FMCW LiDAR simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (key = value lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set photon.n=2 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides rng.seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo trials (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Beat probabilities p_n(1|t) over one period -> beat_signal.csv
    Beat,
    /// Discrete spectrum of the modulated field -> spectrum.csv
    Spectrum,
    /// Closed-form and numeric CFI/QFI with CRBs -> fisher_closed.csv, fisher_numeric.csv, sld.csv
    Fisher,
    /// Monte Carlo CRB-efficiency experiment -> manifest.txt, estimates.csv, covariance.csv, records/
    Montecarlo,
    /// Two-target resolution experiment -> manifest.txt, resolution.csv, resolution_summary.csv
    Resolution,
}

/// Config from --config, then --set, then --seed.
pub fn build_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("rng.seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn model(cfg: &Config, n: u32) -> Result<NoonModel> {
    let m = cfg.modulation()?;
    NoonModel::new(n, m, cfg.windows(&m)?)
}

/// Header `t_s,p_n1,p_n2,...`; one row per time sample over one period.
pub fn beat_table(cfg: &Config) -> Result<String> {
    let ns = cfg.n_list()?;
    let target = cfg.target()?;
    let points = cfg.usize("beat.points")?;
    let models = ns.iter().map(|&n| model(cfg, n)).collect::<Result<Vec<_>>>()?;
    let m0 = &models[0];
    beat_parameters(&target, &m0.cfg, &m0.windows)?;
    let grid = TimeGrid::period_midpoints(&m0.cfg, points)
        .map_err(|e| Error::Config(format!("beat.points: {e}")))?;
    let mut s = String::from("t_s");
    for n in &ns {
        let _ = write!(s, ",p_n{n}");
    }
    s.push('\n');
    for t in grid.times() {
        let (edge, tl) = m0.windows.locate(&m0.cfg, t);
        if !m0.windows.contains(&m0.cfg, edge, tl) {
            continue;
        }
        let _ = write!(s, "{t}");
        for m in &models {
            let _ = write!(s, ",{}", noon_probability(m, &target, edge, tl)?);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_beat(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write_file(out, "beat_signal.csv", &beat_table(cfg)?)?])
}

/// Header `offset_hz,power`, ascending offsets from the carrier, Σpower = 1.
pub fn spectrum_table(cfg: &Config) -> Result<String> {
    let m = cfg.modulation()?;
    let grid = TimeGrid::over_period(&m, cfg.usize("spectrum.points")?)
        .map_err(|e| Error::Config(format!("spectrum.points: {e}")))?;
    let spec = discrete_spectrum(&m, &grid)?;
    let mut s = String::from("offset_hz,power\n");
    for x in spec {
        let _ = writeln!(s, "{},{}", x.omega_j / (2.0 * std::f64::consts::PI), x.amplitude.norm_sqr());
    }
    Ok(s)
}

pub fn cmd_spectrum(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write_file(out, "spectrum.csv", &spectrum_table(cfg)?)?])
}

/// Everything `cmd_fisher` reports, for library callers.
#[derive(Debug, Clone)]
pub struct FisherReport {
    pub closed: Vec<FisherResult>,
    pub closed_beat: Vec<FisherResult>,
    pub numeric: Vec<FisherResult>,
    /// (weak commutativity, Tr[ρL_d²], max SLD relation error for d, for v).
    pub sld: Option<[f64; 4]>,
}

pub const FISHER_NUMERIC_HEADER: &str = "kind,param_i,param_j,numeric,closed,rel_diff";

pub fn fisher_report(cfg: &Config) -> Result<FisherReport> {
    let n = cfg.photon_number("photon.n")?;
    let m = model(cfg, n)?;
    let target = cfg.target()?;
    let quad = QuadratureSettings {
        tol: cfg.positive("fisher.quad_tol")?,
        fd_step_rel: cfg.positive("fisher.fd_step")?,
        ..QuadratureSettings::default()
    };
    let grid = TimeGrid::period_midpoints(&m.cfg, cfg.usize("fisher.points")?)
        .map_err(|e| Error::Config(format!("fisher.points: {e}")))?;
    let (closed, closed_beat) = match m.cfg.family {
        Family::Triangle => {
            let rv = Parametrization::RangeVelocity;
            let bf = Parametrization::BeatFrequencies;
            (
                vec![
                    cfi_closed_triangle_windows(&m.cfg, &m.windows, n, rv)?,
                    qfi_closed_triangle_windows(&m.cfg, &m.windows, n, rv)?,
                ],
                vec![
                    cfi_closed_triangle_windows(&m.cfg, &m.windows, n, bf)?,
                    qfi_closed_triangle_windows(&m.cfg, &m.windows, n, bf)?,
                ],
            )
        }
        Family::Sawtooth => {
            let v = vec![
                cfi_closed_sawtooth(&m.cfg, n, m.windows.t_d0)?,
                qfi_closed_sawtooth(&m.cfg, n, m.windows.t_d0)?,
            ];
            (v.clone(), v)
        }
    };
    let numeric = vec![
        cfi_numeric(&m, &target, &quad)?,
        qfi_numeric(&m, &target, &grid, quad.fd_step_rel)?,
    ];
    let default_windows = m.windows == crate::channel::DetectionWindows::default_for(&m.cfg);
    let sld = if m.cfg.family == Family::Triangle && default_windows {
        let pair = sld_pair(&m.cfg, n)?;
        let beat = beat_parameters(&target, &m.cfg, &m.windows)?;
        let chk = sld_derivative_check(&m.cfg, n, &beat, cfg.usize("fisher.sld_points")?)?;
        Some([
            weak_commutativity(&pair),
            sld_qfi(&pair)[0][0],
            chk.max_rel_err_d,
            chk.max_rel_err_v,
        ])
    } else {
        None
    };
    Ok(FisherReport {
        closed,
        closed_beat,
        numeric,
        sld,
    })
}

pub fn fisher_numeric_csv(report: &FisherReport) -> String {
    let mut s = format!("{FISHER_NUMERIC_HEADER}\n");
    for (num, cl) in report.numeric.iter().zip(&report.closed_beat) {
        let k = num.dim();
        for i in 0..k {
            for j in 0..k {
                let scale = (cl.matrix[(i, i)] * cl.matrix[(j, j)]).abs().sqrt();
                let rd = (num.matrix[(i, j)] - cl.matrix[(i, j)]).abs() / scale;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    num.kind.name(),
                    num.parameter_order[i],
                    num.parameter_order[j],
                    num.matrix[(i, j)],
                    cl.matrix[(i, j)],
                    rd
                );
            }
        }
    }
    s
}

pub fn cmd_fisher(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let r = fisher_report(cfg)?;
    let mut closed = r.closed[0].to_csv();
    for f in &r.closed[1..] {
        closed.extend(f.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
    }
    let mut files = vec![
        write_file(out, "fisher_closed.csv", &closed)?,
        write_file(out, "fisher_numeric.csv", &fisher_numeric_csv(&r))?,
    ];
    for f in &r.closed {
        if let Some(inv) = &f.inverse {
            let diag: Vec<String> = (0..f.dim())
                .map(|i| format!("{}={:.6e}", f.parameter_order[i], inv[(i, i)]))
                .collect();
            println!("{} CRB per emitted state: {}", f.kind.name(), diag.join(" "));
        }
    }
    if let Some([wc, qdd, ed, ev]) = r.sld {
        let n = cfg.photon_number("photon.n")? as f64;
        let m = cfg.modulation()?;
        let mut s = String::from("quantity,value\n");
        let _ = writeln!(s, "weak_commutativity,{wc}");
        let _ = writeln!(s, "qfi_dd_from_sld,{qdd}");
        let _ = writeln!(s, "qfi_dd_expected,{}", 2.0 * n * n / 3.0 * m.delta_omega.powi(2) / (C * C));
        let _ = writeln!(s, "sld_relation_rel_err_d,{ed}");
        let _ = writeln!(s, "sld_relation_rel_err_v,{ev}");
        files.push(write_file(out, "sld.csv", &s)?);
        println!("weak commutativity |Tr(rho[L_d,L_v])| = {wc:e}");
    }
    Ok(files)
}

pub fn cmd_montecarlo(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let ec = cfg.experiment()?;
    let stats = run_monte_carlo(&ec)?;
    let files = export_monte_carlo(out, &cfg.manifest(), &ec, &stats, cfg.usize("experiment.export_records")?)?;
    println!(
        "trials used {} of {}, flagged {}",
        stats.trials_used,
        stats.outcomes.len(),
        stats.flags_count
    );
    for (i, p) in PARAMS.iter().enumerate() {
        println!(
            "{p}: efficiency {:.4} +/- {:.4} (band [{}, {}]: {})",
            stats.efficiency[i],
            stats.efficiency_stderr[i],
            ec.efficiency_band.0,
            ec.efficiency_band.1,
            if stats.within_band(ec.efficiency_band, i) { "in" } else { "out" }
        );
    }
    stats.check_reliable()?;
    Ok(files)
}

pub fn cmd_resolution(cfg: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    let ec = cfg.resolution_experiment()?;
    let r = run_resolution(&ec)?;
    let files = vec![
        write_file(out, "manifest.txt", &cfg.manifest())?,
        write_file(out, "resolution.csv", &resolution_csv(&r))?,
        write_file(out, "resolution_summary.csv", &resolution_summary(&r))?,
    ];
    println!(
        "separation {:e} m, n = {}: separable = {}, peak separation {} bins",
        ec.targets[1].range_d - ec.targets[0].range_d,
        ec.n,
        r.separable,
        r.peak_separation_bins
    );
    Ok(files)
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = build_config(cli)?;
    cfg.validate()?;
    for w in cfg.modulation()?.warnings() {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let out = cli.out.as_path();
    let run = || match cli.command {
        Command::Beat => cmd_beat(&cfg, out),
        Command::Spectrum => cmd_spectrum(&cfg, out),
        Command::Fisher => cmd_fisher(&cfg, out),
        Command::Montecarlo => cmd_montecarlo(&cfg, out),
        Command::Resolution => cmd_resolution(&cfg, out),
    };
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = Cli::command().after_long_help(Config::key_help());
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
