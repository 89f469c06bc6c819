//! Monte Carlo and resolution experiments, and result export.
//!
//! Trials run on the rayon pool. Every trial draws from its own RNG stream and
//! results are collected in trial order, then reduced pairwise, so outputs do
//! not depend on the worker count.
//!
//! `emissions_total` is the number of emitted n-photon states per period and
//! per trial (ν·T_m). A triangle record of B bins receives emissions_total/B
//! states per bin. Photon resources are n·emissions_total.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::channel::{beat_parameters, DetectionWindows, Target};
use crate::estimation::{estimate_record, periodogram, SearchSettings, TargetEstimate};
use crate::fisher::{cfi_closed_triangle_windows, crb, Parametrization};
use crate::quantum::NoonModel;
use crate::sampling::{expected_noon_record, record_grid, sample_noon_record, CountRecord, RecordKind, RngSpec};
use crate::waveform::{Edge, Family, ModulationConfig};
use crate::{wrap_pi, Error, Result};

pub const PARAMS: [&str; 4] = ["d", "v", "theta0", "theta1"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cfg: ModulationConfig,
    pub windows: DetectionWindows,
    /// One target for Monte Carlo, two for resolution runs.
    pub targets: Vec<Target>,
    pub n: u32,
    pub emissions_total: f64,
    pub bins: usize,
    pub trials: usize,
    pub rng: RngSpec,
    pub kind: RecordKind,
    pub search: SearchSettings,
    pub efficiency_band: (f64, f64),
    /// Fraction of flagged trials above which the run is unreliable.
    pub unreliable_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.trials < 2 {
            return Err(Error::Config(format!("experiment.trials must be >= 2, got {}", self.trials)));
        }
        if !(self.emissions_total > 0.0) || !self.emissions_total.is_finite() {
            return Err(Error::Config(format!(
                "experiment.emissions_total must be > 0, got {}",
                self.emissions_total
            )));
        }
        if self.n < 1 {
            return Err(Error::Config("photon.n must be >= 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target is required".into()));
        }
        for t in &self.targets {
            t.validate()?;
        }
        self.emissions_per_bin()?;
        Ok(())
    }

    pub fn emissions_per_bin(&self) -> Result<u64> {
        let per = self.emissions_total / self.bins as f64;
        if per < 1.0 || (per - per.round()).abs() > 1e-9 * per {
            return Err(Error::Config(format!(
                "experiment.emissions_total ({}) must be a positive multiple of experiment.bins ({})",
                self.emissions_total, self.bins
            )));
        }
        Ok(per.round() as u64)
    }

    pub fn model(&self) -> Result<NoonModel> {
        NoonModel::new(self.n, self.cfg, self.windows)
    }

    /// RNG of trial `i`.
    pub fn trial_rng(&self, i: usize) -> RngSpec {
        RngSpec::new(self.rng.seed, self.rng.stream_id.wrapping_mul(1 << 32).wrapping_add(i as u64))
    }

    /// Record of trial `i` for the first target.
    pub fn trial_record(&self, i: usize) -> Result<CountRecord> {
        let model = self.model()?;
        let grid = record_grid(&self.cfg, self.bins)?;
        let nu = self.emissions_per_bin()?;
        match self.kind {
            RecordKind::NoonBernoulli => sample_noon_record(&model, &self.targets[0], &grid, nu, self.trial_rng(i)),
            RecordKind::Expected => expected_noon_record(&model, &self.targets[..1], &grid, nu),
            RecordKind::CoherentPoisson => Err(Error::Unsupported(
                "Monte Carlo runs use NOON records (noon or expected)".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub estimate: Option<TargetEstimate>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialStats {
    pub truth: [f64; 4],
    pub sample_mean: [f64; 4],
    pub sample_cov: DMatrix<f64>,
    pub crb: DMatrix<f64>,
    /// sample_cov(i, i) / crb(i, i).
    pub efficiency: [f64; 4],
    /// One-sigma error of each ratio, eff·√(2/(N−1)).
    pub efficiency_stderr: [f64; 4],
    pub trials_used: usize,
    pub flags_count: usize,
    pub unreliable: bool,
    pub outcomes: Vec<TrialOutcome>,
}

impl TrialStats {
    pub fn within_band(&self, band: (f64, f64), idx: usize) -> bool {
        let e = self.efficiency[idx];
        e >= band.0 && e <= band.1
    }

    pub fn check_reliable(&self) -> Result<()> {
        if self.unreliable {
            return Err(Error::Unreliable(format!(
                "{} of {} trials flagged",
                self.flags_count,
                self.outcomes.len()
            )));
        }
        Ok(())
    }
}

/// Sum of equal-length vectors by recursive halving.
fn pairwise_sum(v: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match v.len() {
        0 => vec![0.0; dim],
        1 => v[0].clone(),
        len => {
            let (a, b) = v.split_at(len / 2);
            let (x, y) = (pairwise_sum(a, dim), pairwise_sum(b, dim));
            x.iter().zip(&y).map(|(p, q)| p + q).collect()
        }
    }
}

/// Deviations from truth; phases are compared modulo 2π/n.
fn deviation(est: &TargetEstimate, truth: &[f64; 4], n: u32) -> [f64; 4] {
    let nf = n as f64;
    let dphase = |a: f64, b: f64| wrap_pi(nf * (a - b)) / nf;
    [
        est.d_hat - truth[0],
        est.v_hat - truth[1],
        dphase(est.theta0_hat, truth[2]),
        dphase(est.theta1_hat, truth[3]),
    ]
}

pub fn run_monte_carlo(ec: &ExperimentConfig) -> Result<TrialStats> {
    ec.validate()?;
    if ec.cfg.family != Family::Triangle {
        return Err(Error::Unsupported("Monte Carlo estimation needs the triangle family".into()));
    }
    let target = ec.targets[0];
    let beat = beat_parameters(&target, &ec.cfg, &ec.windows)?;
    let truth = [target.range_d, target.velocity_v, beat.theta0, beat.theta1];

    let outcomes: Vec<TrialOutcome> = (0..ec.trials)
        .into_par_iter()
        .map(|i| -> Result<TrialOutcome> {
            let rec = ec.trial_record(i)?;
            let est = match estimate_record(&rec, ec.n, &ec.search) {
                Ok(e) => e,
                Err(Error::Domain(_)) | Err(Error::Regime(_)) => {
                    return Ok(TrialOutcome {
                        trial: i,
                        estimate: None,
                        flagged: true,
                    })
                }
                Err(e) => return Err(e),
            };
            let f = est.flags;
            Ok(TrialOutcome {
                trial: i,
                estimate: Some(est),
                flagged: f.degenerate || f.d_clamped || f.branch_ambiguous,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let flags_count = outcomes.iter().filter(|o| o.flagged).count();
    let devs: Vec<[f64; 4]> = outcomes
        .iter()
        .filter(|o| !o.flagged)
        .filter_map(|o| o.estimate.as_ref().map(|e| deviation(e, &truth, ec.n)))
        .collect();
    let used = devs.len();
    let unreliable = flags_count as f64 > ec.unreliable_fraction * outcomes.len() as f64 || used < 2;

    let mean_dev: Vec<f64> = pairwise_sum(&devs.iter().map(|d| d.to_vec()).collect::<Vec<_>>(), 4)
        .into_iter()
        .map(|s| s / used.max(1) as f64)
        .collect();
    let outer: Vec<Vec<f64>> = devs
        .iter()
        .map(|d| {
            let c: Vec<f64> = (0..4).map(|i| d[i] - mean_dev[i]).collect();
            (0..16).map(|k| c[k / 4] * c[k % 4]).collect()
        })
        .collect();
    let cov_sum = pairwise_sum(&outer, 16);
    let denom = (used.max(2) - 1) as f64;
    let sample_cov = DMatrix::from_row_slice(4, 4, &cov_sum) / denom;

    let fr = cfi_closed_triangle_windows(&ec.cfg, &ec.windows, ec.n, Parametrization::RangeVelocity)?;
    let bound = crb(&fr, ec.emissions_total)?;
    let mut efficiency = [0.0; 4];
    let mut stderr = [0.0; 4];
    let mut sample_mean = [0.0; 4];
    for i in 0..4 {
        efficiency[i] = sample_cov[(i, i)] / bound[(i, i)];
        stderr[i] = efficiency[i] * (2.0 / denom).sqrt();
        sample_mean[i] = truth[i] + mean_dev[i];
    }
    Ok(TrialStats {
        truth,
        sample_mean,
        sample_cov,
        crb: bound,
        efficiency,
        efficiency_stderr: stderr,
        trials_used: used,
        flags_count,
        unreliable,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeResolution {
    pub edge: Edge,
    pub periodogram: Vec<(f64, f64)>,
    /// Indices of the two strongest non-DC bins, strongest first.
    pub top_bins: (usize, usize),
    /// Power in the two strongest bins over the total non-DC power.
    pub concentration: f64,
    /// Weaker over stronger of the two strongest bins.
    pub balance: f64,
    pub separable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionReport {
    pub separable: bool,
    /// Separation of the two strongest bins when separable, else 0.
    pub peak_separation_bins: f64,
    pub edges: Vec<EdgeResolution>,
}

/// Fraction of the AC power the two strongest bins must hold.
pub const RESOLUTION_CONCENTRATION: f64 = 0.95;
/// Minimum ratio of the weaker to the stronger peak.
pub const RESOLUTION_BALANCE: f64 = 0.5;

fn resolve_edge(record: &CountRecord, edge: Edge) -> Result<EdgeResolution> {
    let spec = periodogram(record, edge)?;
    let mut idx: Vec<usize> = (1..spec.len()).collect();
    idx.sort_by(|&a, &b| spec[b].1.total_cmp(&spec[a].1).then(a.cmp(&b)));
    let (k1, k2) = (idx[0], idx[1]);
    let total: f64 = spec[1..].iter().map(|p| p.1).sum();
    let (p1, p2) = (spec[k1].1, spec[k2].1);
    let concentration = if total > 0.0 { (p1 + p2) / total } else { 0.0 };
    let balance = if p1 > 0.0 { p2 / p1 } else { 0.0 };
    Ok(EdgeResolution {
        edge,
        top_bins: (k1, k2),
        concentration,
        balance,
        separable: concentration >= RESOLUTION_CONCENTRATION && balance >= RESOLUTION_BALANCE,
        periodogram: spec,
    })
}

/// Superposes the laws of two equal-velocity targets with equal weight in a
/// noiseless record and checks each edge's native-bin periodogram: the
/// targets are separable when the two strongest bins carry at least
/// [`RESOLUTION_CONCENTRATION`] of the AC power and the weaker is at least
/// [`RESOLUTION_BALANCE`] of the stronger. Two tones a full DFT bin apart
/// meet this for any relative phase; tones half a bin apart never do.
pub fn run_resolution(ec: &ExperimentConfig) -> Result<ResolutionReport> {
    ec.cfg.validate()?;
    if ec.targets.len() != 2 {
        return Err(Error::Config(format!("resolution needs two targets, got {}", ec.targets.len())));
    }
    if ec.targets[0].velocity_v != ec.targets[1].velocity_v {
        return Err(Error::Config("resolution targets must share one velocity".into()));
    }
    let model = ec.model()?;
    let grid = record_grid(&ec.cfg, ec.bins)?;
    let record = expected_noon_record(&model, &ec.targets, &grid, ec.emissions_per_bin()?)?;
    let edges: &[Edge] = match ec.cfg.family {
        Family::Triangle => &[Edge::Rising, Edge::Falling],
        Family::Sawtooth => &[Edge::Rising],
    };
    let res = edges.iter().map(|&e| resolve_edge(&record, e)).collect::<Result<Vec<_>>>()?;
    let separable = res.iter().all(|r| r.separable);
    let sep = if separable {
        (res[0].top_bins.0 as f64 - res[0].top_bins.1 as f64).abs()
    } else {
        0.0
    };
    Ok(ResolutionReport {
        separable,
        peak_separation_bins: sep,
        edges: res,
    })
}

// ---------------------------------------------------------------------------
// Export

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    write(&p, text)?;
    Ok(p)
}

pub const ESTIMATES_HEADER: &str =
    "trial,d_hat,v_hat,theta0_hat,theta1_hat,flagged,degenerate,d_clamped,branch_ambiguous,phase_ambiguous";
pub const COVARIANCE_HEADER: &str = "param_i,param_j,sample_cov,crb,efficiency,efficiency_stderr";

pub fn estimates_csv(stats: &TrialStats) -> String {
    let mut s = format!("{ESTIMATES_HEADER}\n");
    for o in &stats.outcomes {
        match &o.estimate {
            Some(e) => {
                let f = e.flags;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    o.trial,
                    e.d_hat,
                    e.v_hat,
                    e.theta0_hat,
                    e.theta1_hat,
                    o.flagged as u8,
                    f.degenerate as u8,
                    f.d_clamped as u8,
                    f.branch_ambiguous as u8,
                    f.phase_ambiguous as u8
                );
            }
            None => {
                let _ = writeln!(s, "{},,,,,1,,,,", o.trial);
            }
        }
    }
    s
}

pub fn covariance_csv(stats: &TrialStats) -> String {
    let mut s = format!("{COVARIANCE_HEADER}\n");
    for (i, pi) in PARAMS.iter().enumerate() {
        for (j, pj) in PARAMS.iter().enumerate() {
            let (eff, err) = if i == j {
                (format!("{}", stats.efficiency[i]), format!("{}", stats.efficiency_stderr[i]))
            } else {
                (String::new(), String::new())
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                pi,
                pj,
                stats.sample_cov[(i, j)],
                stats.crb[(i, j)],
                eff,
                err
            );
        }
    }
    s
}

/// Reads `covariance.csv` back into (sample_cov, crb).
pub fn parse_covariance_csv(text: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut lines = text.lines();
    if lines.next() != Some(COVARIANCE_HEADER) {
        return Err(Error::Parse("unexpected covariance header".into()));
    }
    let mut cov = DMatrix::zeros(4, 4);
    let mut bound = DMatrix::zeros(4, 4);
    let mut seen = 0;
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse(format!("covariance row needs 6 columns: {line}")));
        }
        let pos = |name: &str| {
            PARAMS
                .iter()
                .position(|p| *p == name)
                .ok_or_else(|| Error::Parse(format!("unknown parameter {name}")))
        };
        let (i, j) = (pos(f[0])?, pos(f[1])?);
        let num = |x: &str| x.parse::<f64>().map_err(|e| Error::Parse(format!("{x}: {e}")));
        cov[(i, j)] = num(f[2])?;
        bound[(i, j)] = num(f[3])?;
        seen += 1;
    }
    if seen != 16 {
        return Err(Error::Parse(format!("expected 16 covariance rows, got {seen}")));
    }
    Ok((cov, bound))
}

/// Writes manifest.txt, estimates.csv, covariance.csv and the records of the
/// first `export_records` trials under `dir`.
pub fn export_monte_carlo(
    dir: &Path,
    manifest: &str,
    ec: &ExperimentConfig,
    stats: &TrialStats,
    export_records: usize,
) -> Result<Vec<PathBuf>> {
    let mut out = vec![
        write_file(dir, "manifest.txt", manifest)?,
        write_file(dir, "estimates.csv", &estimates_csv(stats))?,
        write_file(dir, "covariance.csv", &covariance_csv(stats))?,
    ];
    for i in 0..export_records.min(ec.trials) {
        let rec = ec.trial_record(i)?;
        out.push(write_file(dir, &format!("records/trial_{i:05}.csv"), &rec.to_csv())?);
    }
    Ok(out)
}

pub const RESOLUTION_HEADER: &str = "edge,bin,omega,power";

pub fn resolution_csv(report: &ResolutionReport) -> String {
    let mut s = format!("{RESOLUTION_HEADER}\n");
    for e in &report.edges {
        for (k, (w, p)) in e.periodogram.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", e.edge.name(), k, w, p);
        }
    }
    s
}

pub fn resolution_summary(report: &ResolutionReport) -> String {
    let mut s = String::from("edge,top_bin_1,top_bin_2,concentration,balance,separable\n");
    for e in &report.edges {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.edge.name(),
            e.top_bins.0,
            e.top_bins.1,
            e.concentration,
            e.balance,
            e.separable as u8
        );
    }
    let _ = writeln!(s, "all,,,,,{}", report.separable as u8);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::resolution_limits;
    use crate::sampling::parse_record_csv;
    use std::f64::consts::PI;

    fn base(n: u32, trials: usize, kind: RecordKind) -> ExperimentConfig {
        let cfg = ModulationConfig::reference(Family::Triangle);
        ExperimentConfig {
            cfg,
            windows: DetectionWindows::default_for(&cfg),
            targets: vec![Target::new(0.015, 0.15).unwrap()],
            n,
            emissions_total: 10_000.0,
            bins: 1000,
            trials,
            rng: RngSpec::new(7, 0),
            kind,
            search: SearchSettings::default(),
            efficiency_band: (1.0, 1.3),
            unreliable_fraction: 0.2,
        }
    }

    /// Range whose n = 1 rising-edge tone sits on DFT bin k of a half-period
    /// window: ω_b = k·4π/T_m at v = 0.
    fn on_bin_range(cfg: &ModulationConfig, k: f64) -> f64 {
        k * (4.0 * PI / cfg.period) * crate::C * cfg.period / (4.0 * cfg.delta_omega)
    }

    #[test]
    fn zero_noise_mode_recovers_truth() {
        let ec = base(1, 4, RecordKind::Expected);
        let s = run_monte_carlo(&ec).unwrap();
        assert_eq!(s.flags_count, 0);
        for i in 0..4 {
            assert!(s.sample_cov[(i, i)] <= 1e-20 * s.crb[(i, i)].max(1e-300) + 1e-30);
        }
        assert!((s.sample_mean[0] - 0.015).abs() < 1e-9);
        assert!((s.sample_mean[1] - 0.15).abs() < 1e-6);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let ec = base(1, 12, RecordKind::NoonBernoulli);
        let run = |t: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| run_monte_carlo(&ec).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(estimates_csv(&a), estimates_csv(&b));
        assert_eq!(covariance_csv(&a), covariance_csv(&b));
    }

    #[test]
    fn validation_errors() {
        let mut ec = base(1, 1, RecordKind::NoonBernoulli);
        assert!(matches!(ec.validate(), Err(Error::Config(_))));
        ec.trials = 2;
        ec.emissions_total = 0.0;
        assert!(matches!(ec.validate(), Err(Error::Config(_))));
        ec.emissions_total = 1500.0;
        assert!(matches!(ec.validate(), Err(Error::Config(_))));
        ec.emissions_total = 2000.0;
        assert_eq!(ec.emissions_per_bin().unwrap(), 2);
    }

    #[test]
    fn pairwise_sum_matches_sequential_on_integers() {
        let v: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        assert_eq!(pairwise_sum(&v, 2), vec![666.0, 1332.0]);
    }

    #[test]
    fn resolution_rule() {
        let cfg = ModulationConfig::reference(Family::Triangle);
        let d1 = on_bin_range(&cfg, 20.0);
        let (dd1, _) = resolution_limits(&cfg, 1);
        let run = |n: u32, sep: f64| {
            let mut ec = base(n, 2, RecordKind::Expected);
            ec.targets = vec![Target::new(d1, 0.0).unwrap(), Target::new(d1 + sep, 0.0).unwrap()];
            run_resolution(&ec).unwrap()
        };
        let full = run(1, dd1);
        assert!(full.separable);
        assert_eq!(full.peak_separation_bins, 1.0);
        assert!(!run(1, 0.5 * dd1).separable);
        assert!(run(2, 0.5 * dd1).separable);
        let same = run(1, 0.0);
        assert!(!same.separable);
        assert!(same.edges.iter().all(|e| e.balance < 1e-12));
    }

    #[test]
    fn half_bin_never_separable_over_phases() {
        // sweep the relative phase of the second tone through small range offsets
        let cfg = ModulationConfig::reference(Family::Triangle);
        let (dd1, _) = resolution_limits(&cfg, 1);
        let d1 = on_bin_range(&cfg, 20.0);
        for k in 0..24 {
            let shift = cfg.lambda0() / 2.0 * k as f64 / 24.0;
            let mut ec = base(1, 2, RecordKind::Expected);
            ec.targets = vec![
                Target::new(d1, 0.0).unwrap(),
                Target::new(d1 + 0.5 * dd1 + shift, 0.0).unwrap(),
            ];
            assert!(!run_resolution(&ec).unwrap().separable, "k={k}");
            ec.targets[1] = Target::new(d1 + dd1 + shift, 0.0).unwrap();
            assert!(run_resolution(&ec).unwrap().separable, "k={k}");
        }
    }

    #[test]
    fn export_round_trip() {
        let ec = base(1, 6, RecordKind::NoonBernoulli);
        let s = run_monte_carlo(&ec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_monte_carlo(dir.path(), "rng.seed = 7\n", &ec, &s, 2).unwrap();
        assert_eq!(files.len(), 5);
        let cov = std::fs::read_to_string(dir.path().join("covariance.csv")).unwrap();
        let (c, b) = parse_covariance_csv(&cov).unwrap();
        assert_eq!(c, s.sample_cov);
        assert_eq!(b, s.crb);
        let est = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        let ncol = ESTIMATES_HEADER.split(',').count();
        assert!(est.lines().all(|l| l.split(',').count() == ncol));
        let rec = std::fs::read_to_string(dir.path().join("records/trial_00001.csv")).unwrap();
        let rows = parse_record_csv(&rec).unwrap();
        let again = ec.trial_record(1).unwrap();
        assert_eq!(rows.len(), again.bins());
        for (k, r) in rows.iter().enumerate() {
            assert_eq!(r.1, again.counts_port1[k]);
        }
        assert!(matches!(
            export_monte_carlo(Path::new("/proc/forbidden"), "", &ec, &s, 0),
            Err(Error::Io { .. })
        ));
    }
}
