//! Frequency-modulated waveforms: chirp law, phase, field and spectrum.
//!
//! Two families are supported. The sawtooth sweeps up from ω₀ to ω₀+Δω over
//! one period starting at t₀. The triangle sweeps up to the apex ω₀+Δω at the
//! center time t'₀ and back down, each edge lasting half a period.
//!
//! Triangle phases follow the sign convention of the source model: the rising
//! edge phase is integrated backwards from the apex, so on that edge
//! dφ/dt = −ω(t) while on the falling edge dφ/dt = +ω(t). Both branches vanish
//! at the apex.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{wrap_pi, Error, Result, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sawtooth,
    Triangle,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Sawtooth => "sawtooth",
            Family::Triangle => "triangle",
        }
    }
}

/// Edge of the triangle chirp. The sawtooth has a single up-chirp, reported
/// as `Rising`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    Rising,
    Falling,
}

impl Edge {
    pub fn name(self) -> &'static str {
        match self {
            Edge::Rising => "rising",
            Edge::Falling => "falling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig {
    pub family: Family,
    /// ω₀, rad/s.
    pub omega0: f64,
    /// Δω, rad/s.
    pub delta_omega: f64,
    /// T_m, s.
    pub period: f64,
    /// t₀ for the sawtooth (period start), t'₀ for the triangle (apex).
    pub t_origin: f64,
}

impl ModulationConfig {
    pub fn new(
        family: Family,
        omega0: f64,
        delta_omega: f64,
        period: f64,
        t_origin: f64,
    ) -> Result<Self> {
        let cfg = ModulationConfig {
            family,
            omega0,
            delta_omega,
            period,
            t_origin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a configuration from the carrier wavelength λ₀ = 2πc/ω₀ and the
    /// sweep bandwidth Δf = Δω/2π.
    pub fn from_wavelength(
        family: Family,
        lambda0: f64,
        delta_f: f64,
        period: f64,
        t_origin: f64,
    ) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(Error::Config(format!("wavelength must be > 0, got {lambda0}")));
        }
        Self::new(family, 2.0 * PI * C / lambda0, 2.0 * PI * delta_f, period, t_origin)
    }

    /// λ₀ = 1550 nm, Δf = 100 GHz, T_m = 10 μs, origin 0.
    pub fn reference(family: Family) -> Self {
        Self::from_wavelength(family, 1550e-9, 100e9, 10e-6, 0.0)
            .expect("reference parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega0, self.delta_omega, self.period, self.t_origin]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("modulation parameters must be finite".into()));
        }
        if !(self.delta_omega > 0.0) {
            return Err(Error::Config(format!(
                "delta_omega must be > 0, got {}",
                self.delta_omega
            )));
        }
        if !(self.period > 0.0) {
            return Err(Error::Config(format!("period must be > 0, got {}", self.period)));
        }
        if !(self.omega0 > self.delta_omega) {
            return Err(Error::Config(format!(
                "omega0 ({}) must exceed delta_omega ({})",
                self.omega0, self.delta_omega
            )));
        }
        Ok(())
    }

    /// Soft regime warnings (valid but outside the ω₀ ≫ Δω comfort zone).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.omega0 < 10.0 * self.delta_omega {
            w.push(format!(
                "omega0/delta_omega = {:.3} is below 10; carrier approximations degrade",
                self.omega0 / self.delta_omega
            ));
        }
        w
    }

    /// Center frequency ω_c = ω₀ + Δω/2.
    pub fn omega_c(&self) -> f64 {
        self.omega0 + 0.5 * self.delta_omega
    }

    /// λ₀ = 2πc/ω₀.
    pub fn lambda0(&self) -> f64 {
        2.0 * PI * C / self.omega0
    }

    /// Start of the modulation period containing the origin: t₀ for the
    /// sawtooth, t'₀ − T_m/2 for the triangle.
    pub fn period_start(&self) -> f64 {
        match self.family {
            Family::Sawtooth => self.t_origin,
            Family::Triangle => self.t_origin - 0.5 * self.period,
        }
    }

    /// Chirp slope magnitude in rad/s².
    pub fn chirp_rate(&self) -> f64 {
        match self.family {
            Family::Sawtooth => self.delta_omega / self.period,
            Family::Triangle => self.delta_omega / (0.5 * self.period),
        }
    }

    /// Sawtooth: offset u = t − t₀ in [0, T]. Times outside the closed period
    /// are reduced modulo T.
    fn saw_offset(&self, t: f64) -> f64 {
        let u = t - self.t_origin;
        if (0.0..=self.period).contains(&u) {
            u
        } else {
            u.rem_euclid(self.period)
        }
    }

    /// Triangle: offset u = t − t'₀ in [−T/2, T/2] and the edge it falls on.
    /// The apex u = 0 belongs to the rising edge.
    pub fn triangle_offset(&self, t: f64) -> (Edge, f64) {
        let half = 0.5 * self.period;
        let mut u = t - self.t_origin;
        if !(-half..=half).contains(&u) {
            u = (u + half).rem_euclid(self.period) - half;
        }
        if u <= 0.0 {
            (Edge::Rising, u)
        } else {
            (Edge::Falling, u)
        }
    }

    /// Offset from the family origin after reduction, with the edge.
    pub fn offset(&self, t: f64) -> (Edge, f64) {
        match self.family {
            Family::Sawtooth => (Edge::Rising, self.saw_offset(t)),
            Family::Triangle => self.triangle_offset(t),
        }
    }
}

pub fn instantaneous_frequency(cfg: &ModulationConfig, t: f64) -> f64 {
    let (edge, u) = cfg.offset(t);
    match (cfg.family, edge) {
        (Family::Sawtooth, _) => cfg.delta_omega / cfg.period * u + cfg.omega0,
        (Family::Triangle, Edge::Rising) => {
            cfg.chirp_rate() * u + cfg.omega0 + cfg.delta_omega
        }
        (Family::Triangle, Edge::Falling) => {
            -cfg.chirp_rate() * u + cfg.omega0 + cfg.delta_omega
        }
    }
}

pub fn instantaneous_phase(cfg: &ModulationConfig, t: f64) -> f64 {
    let (edge, u) = cfg.offset(t);
    let w = cfg.omega0 + cfg.delta_omega;
    let q = cfg.delta_omega / cfg.period;
    match (cfg.family, edge) {
        (Family::Sawtooth, _) => cfg.omega0 * u + 0.5 * q * u * u,
        (Family::Triangle, Edge::Rising) => -(w * u + q * u * u),
        (Family::Triangle, Edge::Falling) => w * u - q * u * u,
    }
}

/// α·exp(iφ(t)).
pub fn field_amplitude(cfg: &ModulationConfig, t: f64, alpha: Complex64) -> Complex64 {
    alpha * Complex64::from_polar(1.0, instantaneous_phase(cfg, t))
}

/// Phase of the envelope exp(i(φ − ω₀t)), i.e. ∫(ω(s) − ω₀)ds from the
/// period start. Computed in closed form so that no optical-rate phase is
/// ever subtracted.
pub fn envelope_phase(cfg: &ModulationConfig, t: f64) -> f64 {
    let dw = cfg.delta_omega;
    let tm = cfg.period;
    match cfg.family {
        Family::Sawtooth => {
            let u = cfg.saw_offset(t);
            0.5 * dw / tm * u * u
        }
        Family::Triangle => {
            let (edge, u) = cfg.triangle_offset(t);
            match edge {
                Edge::Rising => dw * (u + 0.5 * tm) + dw / tm * (u * u - 0.25 * tm * tm),
                Edge::Falling => 0.25 * dw * tm + dw * u - dw / tm * u * u,
            }
        }
    }
}

/// Constant part of the reference-minus-echo phase, reduced to (−π, π].
/// Triangle: (ω₀ − ω_d + Δω)τ. Sawtooth: (ω₀ − ω_d)τ.
pub fn beat_offset(cfg: &ModulationConfig, tau: f64, omega_d: f64) -> f64 {
    let w = match cfg.family {
        Family::Sawtooth => cfg.omega0 - omega_d,
        Family::Triangle => cfg.omega0 - omega_d + cfg.delta_omega,
    };
    wrap_pi(w * tau)
}

/// Checks the T_m ≫ τ regime (τ ≤ T_m/100).
pub fn check_delay_regime(cfg: &ModulationConfig, tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("time of flight must be >= 0, got {tau}")));
    }
    if tau > cfg.period / 100.0 {
        return Err(Error::Regime(format!(
            "time of flight {tau:e} s exceeds period/100 = {:e} s",
            cfg.period / 100.0
        )));
    }
    Ok(())
}

/// Reference-minus-echo phase at time t under the small-delay, small-Doppler
/// approximations.
///
/// Triangle rising edge: −(ω₀−ω_d+Δω)τ − (ω_b+ω_d)(t−t'₀).
/// Triangle falling edge: (ω₀−ω_d+Δω)τ + (−ω_b+ω_d)(t−t'₀).
/// Sawtooth: (ω₀−ω_d)τ + (ω_b+ω_d)(t−t₀).
pub fn beat_phase(cfg: &ModulationConfig, t: f64, tau: f64, omega_d: f64) -> f64 {
    let offset = beat_offset(cfg, tau, omega_d);
    let omega_b = cfg.chirp_rate() * tau;
    let (edge, u) = cfg.offset(t);
    match (cfg.family, edge) {
        (Family::Sawtooth, _) => offset + (omega_b + omega_d) * u,
        (Family::Triangle, Edge::Rising) => -offset - (omega_b + omega_d) * u,
        (Family::Triangle, Edge::Falling) => offset + (-omega_b + omega_d) * u,
    }
}

/// Delayed, Doppler-shifted echo field E_{ω_c−ω_d}(t−τ): the reference field
/// with the beat phase removed.
pub fn echo_field(
    cfg: &ModulationConfig,
    t: f64,
    tau: f64,
    omega_d: f64,
    alpha: Complex64,
) -> Result<Complex64> {
    check_delay_regime(cfg, tau)?;
    let reference = field_amplitude(cfg, t, alpha);
    let dphi = beat_phase(cfg, t, tau, omega_d);
    if dphi == 0.0 {
        return Ok(reference);
    }
    Ok(reference * Complex64::from_polar(1.0, -dphi))
}

// ---------------------------------------------------------------------------
// Sampling grid and spectrum

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub n_points: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(start: f64, n_points: usize, dt: f64) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::Config(format!("grid needs >= 2 points, got {n_points}")));
        }
        if !(dt > 0.0) || !dt.is_finite() || !start.is_finite() {
            return Err(Error::Config(format!("grid step must be finite and > 0, got {dt}")));
        }
        Ok(TimeGrid { start, n_points, dt })
    }

    /// j_B + 1 points covering one period end to end, dt = T_m/j_B.
    pub fn over_period(cfg: &ModulationConfig, j_b: usize) -> Result<Self> {
        Self::new(cfg.period_start(), j_b + 1, cfg.period / j_b as f64)
    }

    /// `n` cell midpoints tiling [start, start + span).
    pub fn midpoints(start: f64, span: f64, n: usize) -> Result<Self> {
        let dt = span / n as f64;
        Self::new(start + 0.5 * dt, n, dt)
    }

    /// Midpoint grid with `n` cells over the period of `cfg`.
    pub fn period_midpoints(cfg: &ModulationConfig, n: usize) -> Result<Self> {
        Self::midpoints(cfg.period_start(), cfg.period, n)
    }

    pub fn t(&self, p: usize) -> f64 {
        self.start + p as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |p| self.t(p))
    }

    pub fn span(&self) -> f64 {
        (self.n_points - 1) as f64 * self.dt
    }

    pub fn check_within_period(&self, cfg: &ModulationConfig) -> Result<()> {
        if self.span() > cfg.period * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "grid span {:e} s exceeds the period {:e} s",
                self.span(),
                cfg.period
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSample {
    /// Offset from ω₀, rad/s.
    pub omega_j: f64,
    pub amplitude: Complex64,
}

/// Discrete spectrum s(ω_j) = (1/T_m)∫E(t)e^{−iω_j t}dt of the demodulated
/// envelope, ω_j = 2πj/T_m, reported as offsets from ω₀ in ascending order and
/// normalized so Σ|s_j|² = 1.
///
/// The grid must span exactly one period; its last point duplicates the first
/// of the next period and is not used.
pub fn discrete_spectrum(cfg: &ModulationConfig, grid: &TimeGrid) -> Result<Vec<SpectrumSample>> {
    let j_b = grid.n_points - 1;
    if (grid.span() - cfg.period).abs() > 1e-9 * cfg.period {
        return Err(Error::Config(format!(
            "spectrum grid must span one period ({:e} s), spans {:e} s",
            cfg.period,
            grid.span()
        )));
    }
    let mut buf: Vec<Complex64> = (0..j_b)
        .map(|p| Complex64::from_polar(1.0, envelope_phase(cfg, grid.t(p))))
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(j_b);
    fft.process(&mut buf);

    let half = (j_b / 2) as i64;
    let lo = -half;
    let hi = j_b as i64 - half;
    let mut out = Vec::with_capacity(j_b);
    for j in lo..hi {
        let idx = j.rem_euclid(j_b as i64) as usize;
        let omega_j = 2.0 * PI * j as f64 / cfg.period;
        let shift = Complex64::from_polar(1.0, -omega_j * (grid.start - cfg.period_start()));
        out.push(SpectrumSample {
            omega_j,
            amplitude: buf[idx] * shift / j_b as f64,
        });
    }
    let norm: f64 = out.iter().map(|s| s.amplitude.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Internal("spectrum has zero power".into()));
    }
    for s in &mut out {
        s.amplitude /= norm;
    }
    Ok(out)
}

/// Fraction of spectral power with offset in [lo, hi].
pub fn band_power(spectrum: &[SpectrumSample], lo: f64, hi: f64) -> f64 {
    spectrum
        .iter()
        .filter(|s| s.omega_j >= lo && s.omega_j <= hi)
        .map(|s| s.amplitude.norm_sqr())
        .sum()
}
