//! Photon-counting records drawn from the detection laws.
//!
//! A record covers one modulation period split into equal bins. The law is
//! evaluated at each bin center. Every bin draws from its own ChaCha stream,
//! so records do not depend on evaluation order.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::channel::{beat_parameters, DetectionWindows, Target};
use crate::quantum::{BeatLaw, NoonModel};
use crate::waveform::{Edge, Family, ModulationConfig, TimeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    NoonBernoulli,
    CoherentPoisson,
    /// Exact expected counts, no sampling noise.
    Expected,
}

/// Seed and stream identifier; together they fix the full sample path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    /// Generator for sub-stream `sub` (one per bin).
    pub fn rng(&self, sub: u64) -> ChaCha8Rng {
        let mut state = self.seed;
        let a = splitmix64(&mut state);
        let mut mixed = a ^ self.stream_id.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut mixed).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(sub);
        rng
    }
}

/// Time-binned counts over one modulation period.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub cfg: ModulationConfig,
    pub windows: DetectionWindows,
    /// Bin centers in physical time.
    pub grid: TimeGrid,
    pub emissions_per_bin: u64,
    pub counts_port1: Vec<f64>,
    pub counts_port0: Vec<f64>,
    pub kind: RecordKind,
}

/// Bins of one edge in local time, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSamples {
    pub t: Vec<f64>,
    pub port1: Vec<f64>,
    pub port0: Vec<f64>,
}

impl EdgeSamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Bin-center grid for `bins` equal bins over one period. Triangle records
/// need an even count so each edge gets the same number of bins.
pub fn record_grid(cfg: &ModulationConfig, bins: usize) -> Result<TimeGrid> {
    if bins < 2 {
        return Err(Error::Config(format!("record needs >= 2 bins, got {bins}")));
    }
    if cfg.family == Family::Triangle && !bins.is_multiple_of(2) {
        return Err(Error::Config(format!("triangle records need an even bin count, got {bins}")));
    }
    TimeGrid::period_midpoints(cfg, bins)
}

impl CountRecord {
    pub fn bins(&self) -> usize {
        self.grid.n_points
    }

    /// Bins on `edge` (all bins for the sawtooth) in local time.
    pub fn edge_samples(&self, edge: Edge) -> EdgeSamples {
        let mut out = EdgeSamples {
            t: Vec::new(),
            port1: Vec::new(),
            port0: Vec::new(),
        };
        for (k, t) in self.grid.times().enumerate() {
            let (e, tl) = self.windows.locate(&self.cfg, t);
            if self.cfg.family == Family::Sawtooth || e == edge {
                out.t.push(tl);
                out.port1.push(self.counts_port1[k]);
                out.port0.push(self.counts_port0[k]);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_center,port1,port0\n");
        for (k, t) in self.grid.times().enumerate() {
            let _ = writeln!(s, "{},{},{}", t, self.counts_port1[k], self.counts_port0[k]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses `t_center,port1,port0` rows.
pub fn parse_record_csv(text: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("t_center,port1,port0") => {}
        other => {
            return Err(Error::Parse(format!("unexpected record header {other:?}")));
        }
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("record row needs 3 columns: {l}")));
            }
            let p = |x: &str| x.parse::<f64>().map_err(|e| Error::Parse(format!("{x}: {e}")));
            Ok((p(f[0])?, p(f[1])?, p(f[2])?))
        })
        .collect()
}

fn check_record_grid(cfg: &ModulationConfig, grid: &TimeGrid) -> Result<()> {
    let lo = cfg.period_start();
    let hi = lo + cfg.period;
    let tol = 1e-12 * cfg.period;
    let first = grid.t(0);
    let last = grid.t(grid.n_points - 1);
    if first < lo - tol || last > hi + tol {
        return Err(Error::Domain(format!(
            "record bins [{first:e}, {last:e}] leave the period [{lo:e}, {hi:e}]"
        )));
    }
    Ok(())
}

/// (edge, local time) of every bin, checked against the detection windows.
fn bin_locations(
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
    grid: &TimeGrid,
) -> Result<Vec<(Edge, f64)>> {
    check_record_grid(cfg, grid)?;
    grid.times()
        .map(|t| {
            let (edge, tl) = windows.locate(cfg, t);
            if windows.contains(cfg, edge, tl) {
                Ok((edge, tl))
            } else {
                Err(Error::Domain(format!("bin at {t:e} s is outside the detection windows")))
            }
        })
        .collect()
}

pub fn sample_noon_record(
    model: &NoonModel,
    target: &Target,
    grid: &TimeGrid,
    nu_per_bin: u64,
    rng: RngSpec,
) -> Result<CountRecord> {
    if nu_per_bin < 1 {
        return Err(Error::Config("emissions per bin must be >= 1".into()));
    }
    let beat = beat_parameters(target, &model.cfg, &model.windows)?;
    let law = BeatLaw { n: model.n, beat };
    let locs = bin_locations(&model.cfg, &model.windows, grid)?;
    let mut port1 = Vec::with_capacity(locs.len());
    let mut port0 = Vec::with_capacity(locs.len());
    for (k, (edge, tl)) in locs.into_iter().enumerate() {
        let p = law.p1(edge, tl).clamp(0.0, 1.0);
        let dist = Binomial::new(nu_per_bin, p)
            .map_err(|e| Error::Internal(format!("binomial({nu_per_bin}, {p}): {e}")))?;
        let x = dist.sample(&mut rng.rng(k as u64));
        port1.push(x as f64);
        port0.push((nu_per_bin - x) as f64);
    }
    Ok(CountRecord {
        cfg: model.cfg,
        windows: model.windows,
        grid: *grid,
        emissions_per_bin: nu_per_bin,
        counts_port1: port1,
        counts_port0: port0,
        kind: RecordKind::NoonBernoulli,
    })
}

/// Noise-free record: port counts ν·p(1|t) and ν·p(0|t).
pub fn expected_noon_record(
    model: &NoonModel,
    targets: &[Target],
    grid: &TimeGrid,
    nu_per_bin: u64,
) -> Result<CountRecord> {
    if targets.is_empty() {
        return Err(Error::Config("need at least one target".into()));
    }
    let laws = targets
        .iter()
        .map(|t| {
            beat_parameters(t, &model.cfg, &model.windows).map(|beat| BeatLaw { n: model.n, beat })
        })
        .collect::<Result<Vec<_>>>()?;
    let locs = bin_locations(&model.cfg, &model.windows, grid)?;
    let nu = nu_per_bin as f64;
    let w = 1.0 / laws.len() as f64;
    let mut port1 = Vec::with_capacity(locs.len());
    let mut port0 = Vec::with_capacity(locs.len());
    for (edge, tl) in locs {
        let (mut p1, mut p0) = (0.0, 0.0);
        for law in &laws {
            let (a, b) = law.outcomes(edge, tl);
            p1 += w * a;
            p0 += w * b;
        }
        port1.push(nu * p1);
        port0.push(nu * p0);
    }
    Ok(CountRecord {
        cfg: model.cfg,
        windows: model.windows,
        grid: *grid,
        emissions_per_bin: nu_per_bin,
        counts_port1: port1,
        counts_port0: port0,
        kind: RecordKind::Expected,
    })
}

/// Poisson counts with means I_c(y|t)·dt, where |α|² is a photon rate (1/s)
/// and dt is the bin duration.
pub fn sample_coherent_record(
    alpha: Complex64,
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
    target: &Target,
    grid: &TimeGrid,
    rng: RngSpec,
) -> Result<CountRecord> {
    let beat = beat_parameters(target, cfg, windows)?;
    let law = BeatLaw { n: 1, beat };
    let locs = bin_locations(cfg, windows, grid)?;
    let mean_total = alpha.norm_sqr() * grid.dt;
    let draw = |mean: f64, sub: u64| -> Result<f64> {
        if mean <= 0.0 {
            return Ok(0.0);
        }
        let dist = Poisson::new(mean).map_err(|e| Error::Internal(format!("poisson({mean}): {e}")))?;
        Ok(dist.sample(&mut rng.rng(sub)))
    };
    let mut port1 = Vec::with_capacity(locs.len());
    let mut port0 = Vec::with_capacity(locs.len());
    for (k, (edge, tl)) in locs.into_iter().enumerate() {
        let (p1, p0) = law.outcomes(edge, tl);
        port1.push(draw(mean_total * p1, 2 * k as u64)?);
        port0.push(draw(mean_total * p0, 2 * k as u64 + 1)?);
    }
    Ok(CountRecord {
        cfg: *cfg,
        windows: *windows,
        grid: *grid,
        emissions_per_bin: 0,
        counts_port1: port1,
        counts_port0: port0,
        kind: RecordKind::CoherentPoisson,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::noon_probability;

    fn model(n: u32) -> NoonModel {
        NoonModel::with_default_windows(n, ModulationConfig::reference(Family::Triangle)).unwrap()
    }

    #[test]
    fn still_target_fills_port_one() {
        let m = model(2);
        let grid = record_grid(&m.cfg, 64).unwrap();
        let r = sample_noon_record(&m, &Target::new(0.0, 0.0).unwrap(), &grid, 17, RngSpec::new(1, 2))
            .unwrap();
        assert!(r.counts_port1.iter().all(|&x| x == 17.0));
        assert!(r.counts_port0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn records_are_deterministic_and_stream_dependent() {
        let m = model(1);
        let grid = record_grid(&m.cfg, 200).unwrap();
        let t = Target::new(0.02, 0.3).unwrap();
        let a = sample_noon_record(&m, &t, &grid, 10, RngSpec::new(5, 9)).unwrap();
        let b = sample_noon_record(&m, &t, &grid, 10, RngSpec::new(5, 9)).unwrap();
        let c = sample_noon_record(&m, &t, &grid, 10, RngSpec::new(5, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts_port1, c.counts_port1);
        for k in 0..a.bins() {
            assert_eq!(a.counts_port1[k] + a.counts_port0[k], 10.0);
        }
    }

    #[test]
    fn binomial_mean_converges_per_bin() {
        let m = model(1);
        let grid = record_grid(&m.cfg, 16).unwrap();
        let t = Target::new(0.004, 0.0).unwrap();
        let nu = 100_000u64;
        let r = sample_noon_record(&m, &t, &grid, nu, RngSpec::new(11, 0)).unwrap();
        for (k, tp) in grid.times().enumerate() {
            let (edge, tl) = m.windows.locate(&m.cfg, tp);
            let p = noon_probability(&m, &t, edge, tl).unwrap();
            let se = (p * (1.0 - p) / nu as f64).sqrt().max(1e-12);
            let mean = r.counts_port1[k] / nu as f64;
            assert!((mean - p).abs() <= 4.0 * se, "bin {k}: {mean} vs {p}");
        }
    }

    fn binom_pmf(n: u64, p: f64, k: u64) -> f64 {
        let mut c = 1.0;
        for i in 0..k {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    }

    #[test]
    fn binomial_chi_square() {
        let m = model(1);
        let target = Target::new(0.0123, 0.7).unwrap();
        let grid = record_grid(&m.cfg, 2).unwrap();
        let (edge, tl) = m.windows.locate(&m.cfg, grid.t(0));
        let p = noon_probability(&m, &target, edge, tl).unwrap();
        assert!(p > 0.05 && p < 0.95, "p = {p}");
        let nu = 10u64;
        let draws = 100_000u64;
        let mut hist = [0u64; 11];
        for s in 0..draws {
            let r = sample_noon_record(&m, &target, &grid, nu, RngSpec::new(3, s)).unwrap();
            hist[r.counts_port1[0] as usize] += 1;
        }
        // categories with expected count >= 5, the rest pooled
        let mut chi = 0.0;
        let mut cats = 0usize;
        let (mut pool_e, mut pool_o) = (0.0, 0.0);
        for k in 0..=nu {
            let e = draws as f64 * binom_pmf(nu, p, k);
            if e >= 5.0 {
                chi += (hist[k as usize] as f64 - e).powi(2) / e;
                cats += 1;
            } else {
                pool_e += e;
                pool_o += hist[k as usize] as f64;
            }
        }
        if pool_e > 0.0 {
            chi += (pool_o - pool_e).powi(2) / pool_e;
            cats += 1;
        }
        // chi-square 0.999 quantiles by degrees of freedom
        let crit = match cats - 1 {
            5 => 20.515005652432873,
            6 => 22.457744484825323,
            7 => 24.321886347856854,
            8 => 26.12448155837614,
            9 => 27.877164871256568,
            10 => 29.58829844507442,
            df => panic!("unexpected df {df}"),
        };
        assert!(chi < crit, "chi2 = {chi} with {} categories", cats);
    }

    #[test]
    fn coherent_zero_and_poisson_moments() {
        let cfg = ModulationConfig::reference(Family::Triangle);
        let w = DetectionWindows::default_for(&cfg);
        let t = Target::new(0.01, 0.0).unwrap();
        let grid = record_grid(&cfg, 8).unwrap();
        let zero = sample_coherent_record(Complex64::new(0.0, 0.0), &cfg, &w, &t, &grid, RngSpec::new(0, 0))
            .unwrap();
        assert!(zero.counts_port1.iter().chain(&zero.counts_port0).all(|&x| x == 0.0));

        // rate chosen so each bin expects ~7 photons in total
        let rate = 7.0 / grid.dt;
        let alpha = Complex64::new(rate.sqrt(), 0.0);
        let draws = 100_000;
        let bins = grid.n_points;
        let mut s1 = vec![0.0; bins];
        let mut s2 = vec![0.0; bins];
        let mut tot = vec![0.0; bins];
        for s in 0..draws {
            let r = sample_coherent_record(alpha, &cfg, &w, &t, &grid, RngSpec::new(21, s)).unwrap();
            for k in 0..bins {
                s1[k] += r.counts_port1[k];
                s2[k] += r.counts_port1[k] * r.counts_port1[k];
                tot[k] += r.counts_port1[k] + r.counts_port0[k];
            }
        }
        for k in 0..bins {
            let mean = s1[k] / draws as f64;
            let var = s2[k] / draws as f64 - mean * mean;
            if mean > 0.5 {
                assert!((var / mean - 1.0).abs() < 0.05, "bin {k}: mean {mean} var {var}");
            }
            assert!((tot[k] / draws as f64 / 7.0 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let m = model(1);
        let grid = record_grid(&m.cfg, 20).unwrap();
        let r = sample_noon_record(&m, &Target::new(0.01, 1.0).unwrap(), &grid, 5, RngSpec::new(1, 1))
            .unwrap();
        let text = r.to_csv();
        let rows = parse_record_csv(&text).unwrap();
        assert_eq!(rows.len(), 20);
        for (k, (t, a, b)) in rows.iter().enumerate() {
            assert_eq!(*t, grid.t(k));
            assert_eq!(*a, r.counts_port1[k]);
            assert_eq!(*b, r.counts_port0[k]);
        }
        assert!(text.lines().all(|l| l.split(',').count() == 3));
    }

    #[test]
    fn edge_split_is_even_and_ascending() {
        let m = model(1);
        let grid = record_grid(&m.cfg, 40).unwrap();
        let r = expected_noon_record(&m, &[Target::new(0.01, 1.0).unwrap()], &grid, 4).unwrap();
        for edge in [Edge::Rising, Edge::Falling] {
            let s = r.edge_samples(edge);
            assert_eq!(s.len(), 20);
            assert!(s.t.windows(2).all(|w| w[1] > w[0]));
        }
        assert!(record_grid(&m.cfg, 41).is_err());
    }
}
