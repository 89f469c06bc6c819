//! Flat `key = value` configuration with dotted section names.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown keys are errors. Physical quantities carry their unit in
//! the key suffix. `auto` selects a derived default where documented.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::channel::{DetectionWindows, Target};
use crate::estimation::{resolution_limits, SearchSettings};
use crate::harness::ExperimentConfig;
use crate::sampling::{RecordKind, RngSpec};
use crate::waveform::{Family, ModulationConfig};
use crate::{Error, Result};

/// (key, default, description).
pub const KEYS: &[(&str, &str, &str)] = &[
    ("modulation.family", "triangle", "triangle | sawtooth"),
    ("modulation.wavelength_m", "1.55e-6", "carrier wavelength λ₀"),
    ("modulation.bandwidth_hz", "1e11", "sweep bandwidth Δf"),
    ("modulation.period_s", "1e-5", "modulation period T_m"),
    ("modulation.t_origin_s", "0", "sawtooth period start / triangle apex"),
    ("windows.t_d0_s", "auto", "rising (or sawtooth) window anchor; auto = T_m/4 triangle, -T_m/2 sawtooth"),
    ("windows.t_d1_s", "auto", "falling window anchor; auto = -T_m/4 triangle"),
    ("target.range_m", "0.015", "target range d"),
    ("target.velocity_m_per_s", "0.15", "target radial velocity v"),
    ("photon.n", "1", "NOON photon number n"),
    ("beat.n_list", "1,2", "photon numbers tabulated by `beat`"),
    ("beat.points", "4096", "time samples over one period for `beat`"),
    ("spectrum.points", "4096", "time samples over one period for `spectrum`"),
    ("fisher.points", "16384", "state grid points for the numeric QFI"),
    ("fisher.fd_step", "1e-6", "finite-difference step relative to each parameter scale"),
    ("fisher.quad_tol", "1e-10", "relative tolerance of the numeric CFI quadrature"),
    ("fisher.sld_points", "262144", "state grid points for the SLD relation check"),
    ("experiment.emissions_total", "10000", "emitted states per period per trial (ν·T_m)"),
    ("experiment.bins", "1000", "time bins per period"),
    ("experiment.trials", "500", "Monte Carlo trials"),
    ("experiment.record_kind", "noon", "noon (binomial counts) | expected (noise-free)"),
    ("experiment.efficiency_min", "1.0", "lower edge of the efficiency band"),
    ("experiment.efficiency_max", "1.3", "upper edge of the efficiency band"),
    ("experiment.unreliable_fraction", "0.2", "flagged-trial fraction marking a run unreliable"),
    ("experiment.export_records", "1", "number of trial records written to records/"),
    ("resolution.separation_m", "auto", "second target offset; auto = Δd(n) = πc/(nΔω)"),
    ("rng.seed", "1", "master seed"),
    ("rng.stream_id", "0", "stream family of this experiment"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown key `{key}` (see --help for the list)")))
    }
}

impl Config {
    /// Defaults overridden by `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        known(key)?;
        if value.is_empty() {
            return Err(Error::Config(format!("key `{key}` has an empty value")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        known(key)?;
        Ok(self.values[key].as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key)?;
        v.parse::<T>()
            .map_err(|e| Error::Config(format!("key `{key}`: expected {what}, got `{v}` ({e})")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parsed(key, "a real number")?;
        if !x.is_finite() {
            return Err(Error::Config(format!("key `{key}` must be finite")));
        }
        Ok(x)
    }

    pub fn positive(&self, key: &str) -> Result<f64> {
        let x = self.f64(key)?;
        if !(x > 0.0) {
            return Err(Error::Config(format!("key `{key}` must be > 0, got {x}")));
        }
        Ok(x)
    }

    pub fn auto_f64(&self, key: &str) -> Result<Option<f64>> {
        if self.raw(key)? == "auto" {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn photon_number(&self, key: &str) -> Result<u32> {
        let n: u32 = self.parsed(key, "a positive integer")?;
        if n < 1 {
            return Err(Error::Config(format!("key `{key}` must be >= 1")));
        }
        Ok(n)
    }

    pub fn n_list(&self) -> Result<Vec<u32>> {
        let key = "beat.n_list";
        let v = self.raw(key)?;
        let list = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| Error::Config(format!("key `{key}`: `{s}` is not a positive integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(Error::Config(format!("key `{key}` is empty")));
        }
        Ok(list)
    }

    pub fn family(&self) -> Result<Family> {
        match self.raw("modulation.family")? {
            "triangle" => Ok(Family::Triangle),
            "sawtooth" => Ok(Family::Sawtooth),
            other => Err(Error::Config(format!(
                "key `modulation.family`: expected triangle or sawtooth, got `{other}`"
            ))),
        }
    }

    pub fn modulation(&self) -> Result<ModulationConfig> {
        ModulationConfig::from_wavelength(
            self.family()?,
            self.positive("modulation.wavelength_m")?,
            self.positive("modulation.bandwidth_hz")?,
            self.positive("modulation.period_s")?,
            self.f64("modulation.t_origin_s")?,
        )
        .map_err(|e| Error::Config(format!("modulation.*: {e}")))
    }

    pub fn windows(&self, cfg: &ModulationConfig) -> Result<DetectionWindows> {
        let d = DetectionWindows::default_for(cfg);
        Ok(DetectionWindows {
            t_d0: self.auto_f64("windows.t_d0_s")?.unwrap_or(d.t_d0),
            t_d1: self.auto_f64("windows.t_d1_s")?.unwrap_or(d.t_d1),
        })
    }

    pub fn target(&self) -> Result<Target> {
        Target::new(self.f64("target.range_m")?, self.f64("target.velocity_m_per_s")?)
    }

    pub fn record_kind(&self) -> Result<RecordKind> {
        match self.raw("experiment.record_kind")? {
            "noon" => Ok(RecordKind::NoonBernoulli),
            "expected" => Ok(RecordKind::Expected),
            other => Err(Error::Config(format!(
                "key `experiment.record_kind`: expected noon or expected, got `{other}`"
            ))),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let cfg = self.modulation()?;
        let ec = ExperimentConfig {
            cfg,
            windows: self.windows(&cfg)?,
            targets: vec![self.target()?],
            n: self.photon_number("photon.n")?,
            emissions_total: self.positive("experiment.emissions_total")?,
            bins: self.usize("experiment.bins")?,
            trials: self.usize("experiment.trials")?,
            rng: RngSpec::new(self.u64("rng.seed")?, self.u64("rng.stream_id")?),
            kind: self.record_kind()?,
            search: SearchSettings::default(),
            efficiency_band: (self.f64("experiment.efficiency_min")?, self.f64("experiment.efficiency_max")?),
            unreliable_fraction: self.f64("experiment.unreliable_fraction")?,
        };
        if ec.efficiency_band.0 > ec.efficiency_band.1 {
            return Err(Error::Config(
                "experiment.efficiency_min must not exceed experiment.efficiency_max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&ec.unreliable_fraction) {
            return Err(Error::Config("experiment.unreliable_fraction must lie in [0, 1]".into()));
        }
        Ok(ec)
    }

    /// Experiment with the configured target and a second one offset by
    /// `resolution.separation_m` at the same velocity.
    pub fn resolution_experiment(&self) -> Result<ExperimentConfig> {
        let mut ec = self.experiment()?;
        let sep = match self.auto_f64("resolution.separation_m")? {
            Some(s) => s,
            None => resolution_limits(&ec.cfg, ec.n).0,
        };
        let t = ec.targets[0];
        ec.targets.push(Target::new(t.range_d + sep, t.velocity_v)?);
        Ok(ec)
    }

    /// Parses every key so a bad value fails regardless of the subcommand.
    pub fn validate(&self) -> Result<()> {
        let m = self.modulation()?;
        self.windows(&m)?;
        self.target()?;
        self.n_list()?;
        for k in ["beat.points", "spectrum.points", "fisher.points", "fisher.sld_points", "experiment.export_records"] {
            self.usize(k)?;
        }
        for k in ["fisher.fd_step", "fisher.quad_tol"] {
            self.positive(k)?;
        }
        self.auto_f64("resolution.separation_m")?;
        self.experiment()?.validate()
    }

    /// Every key in sorted order; parsing it back reproduces this config.
    pub fn manifest(&self) -> String {
        let mut s = format!("# qfmcw {} run manifest\n", env!("CARGO_PKG_VERSION"));
        if let Ok(n) = self.photon_number("photon.n") {
            if let Ok(e) = self.positive("experiment.emissions_total") {
                let _ = writeln!(
                    s,
                    "# photons per state = {n}; photon resources per trial = n*emissions_total = {}",
                    n as f64 * e
                );
            }
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Key reference for `--help`.
    pub fn key_help() -> String {
        let mut s = String::from("Configuration keys (key = default: description):\n");
        for (k, v, d) in KEYS {
            let _ = writeln!(s, "  {k} = {v}: {d}");
        }
        s
    }
}
