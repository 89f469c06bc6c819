//! Detection statistics of chirped NOON states and coherent light.
//!
//! Probabilities are evaluated from closed-form raised-cosine laws in local
//! window time (see [`DetectionWindows`]). The rising and falling windows may
//! overlap in local time, so every evaluation names its edge explicitly.

use num_complex::Complex64;

use crate::channel::{beat_parameters, BeatParams, Target};
use crate::waveform::{echo_field, field_amplitude, Edge, Family, ModulationConfig, TimeGrid};
use crate::{Error, Result};

pub use crate::channel::DetectionWindows;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoonModel {
    pub n: u32,
    pub cfg: ModulationConfig,
    pub windows: DetectionWindows,
}

impl NoonModel {
    pub fn new(n: u32, cfg: ModulationConfig, windows: DetectionWindows) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("photon number n must be >= 1".into()));
        }
        cfg.validate()?;
        if !windows.t_d0.is_finite() || !windows.t_d1.is_finite() {
            return Err(Error::Config("detection window anchors must be finite".into()));
        }
        Ok(NoonModel { n, cfg, windows })
    }

    /// Model with the default windows of `cfg`.
    pub fn with_default_windows(n: u32, cfg: ModulationConfig) -> Result<Self> {
        Self::new(n, cfg, DetectionWindows::default_for(&cfg))
    }

    fn check_window(&self, edge: Edge, t: f64) -> Result<()> {
        if self.windows.contains(&self.cfg, edge, t) {
            Ok(())
        } else {
            let (lo, hi) = self.windows.window(&self.cfg, edge);
            Err(Error::Domain(format!(
                "t = {t:e} s is outside the {} window [{lo:e}, {hi:e}]",
                edge.name()
            )))
        }
    }
}

/// Raised-cosine outcome law of an n-photon beat with fixed beat parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatLaw {
    pub n: u32,
    pub beat: BeatParams,
}

impl BeatLaw {
    /// Fringe argument n(ω t + θ) of `edge`.
    pub fn argument(&self, edge: Edge, t: f64) -> f64 {
        let (omega, theta) = self.beat.edge_tone(edge);
        self.n as f64 * (omega * t + theta)
    }

    /// (p(1|t), p(0|t)) = (cos²(x/2), sin²(x/2)).
    pub fn outcomes(&self, edge: Edge, t: f64) -> (f64, f64) {
        let half = 0.5 * self.argument(edge, t);
        let (s, c) = half.sin_cos();
        (c * c, s * s)
    }

    pub fn p1(&self, edge: Edge, t: f64) -> f64 {
        self.outcomes(edge, t).0
    }
}

fn clamp_probability(p: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::Internal(format!("probability {p} outside [0, 1]")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// p(1|t) = ½{1 + cos[n(ω t + θ)]} on the window of `edge`, at local time t.
pub fn noon_probability(model: &NoonModel, target: &Target, edge: Edge, t: f64) -> Result<f64> {
    model.check_window(edge, t)?;
    let beat = beat_parameters(target, &model.cfg, &model.windows)?;
    clamp_probability(BeatLaw { n: model.n, beat }.p1(edge, t))
}

/// Two-photon coincidence probability in the δ-correlated limit.
pub fn coincidence_probability(
    model: &NoonModel,
    target: &Target,
    edge: Edge,
    t: f64,
) -> Result<f64> {
    if model.n != 2 {
        return Err(Error::Config(format!(
            "coincidence probability needs n = 2, model has n = {}",
            model.n
        )));
    }
    noon_probability(model, target, edge, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    PD1,
    PD2,
}

/// Mean intensity at a detector for coherent input with amplitude α.
pub fn coherent_intensity(
    alpha: Complex64,
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
    target: &Target,
    edge: Edge,
    t: f64,
    port: Port,
) -> Result<f64> {
    let model = NoonModel::new(1, *cfg, *windows)?;
    let p1 = noon_probability(&model, target, edge, t)?;
    let total = alpha.norm_sqr();
    let pd1 = total * p1;
    Ok(match port {
        Port::PD1 => pd1,
        Port::PD2 => total - pd1,
    })
}

/// 50:50 beam splitter: ((a+b)/√2, (a−b)/√2).
pub fn beamsplitter_transform(in1: Complex64, in2: Complex64) -> (Complex64, Complex64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ((in1 + in2) * s, (in1 - in2) * s)
}

/// Time-bin amplitudes of the two NOON branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchAmplitudes {
    pub grid: TimeGrid,
    pub ref_amp: Vec<Complex64>,
    pub echo_amp: Vec<Complex64>,
}

impl BranchAmplitudes {
    pub fn norm_sqr(&self) -> f64 {
        self.ref_amp
            .iter()
            .chain(&self.echo_amp)
            .map(|a| a.norm_sqr())
            .sum()
    }

    /// ⟨self|other⟩ over both branches.
    pub fn inner(&self, other: &BranchAmplitudes) -> Complex64 {
        let r: Complex64 = self.ref_amp.iter().zip(&other.ref_amp).map(|(a, b)| a.conj() * b).sum();
        let e: Complex64 = self.echo_amp.iter().zip(&other.echo_amp).map(|(a, b)| a.conj() * b).sum();
        r + e
    }

    /// Conditional probability of the constructive detection outcome in time
    /// bin `p`: the overlap of the bin's branch pair with (|ref⟩ − |echo⟩)/√2,
    /// normalized by the bin weight.
    pub fn detection_probability(&self, p: usize) -> f64 {
        let r = self.ref_amp[p];
        let e = self.echo_amp[p];
        let weight = r.norm_sqr() + e.norm_sqr();
        0.5 * (r - e).norm_sqr() / weight
    }
}

fn check_grid(cfg: &ModulationConfig, grid: &TimeGrid) -> Result<()> {
    let span = grid.n_points as f64 * grid.dt;
    if span > cfg.period * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "amplitude grid covers {span:e} s, more than one period {:e} s",
            cfg.period
        )));
    }
    Ok(())
}

/// Amplitudes E*ⁿ(t_p)/√(2N) and −E*ⁿ_echo(t_p)/√(2N) from the physical
/// echo field, with grid times in physical time.
pub fn noon_state_amplitudes(
    model: &NoonModel,
    target: &Target,
    grid: &TimeGrid,
) -> Result<BranchAmplitudes> {
    check_grid(&model.cfg, grid)?;
    let beat = beat_parameters(target, &model.cfg, &model.windows)?;
    let tau = target.tau();
    let one = Complex64::new(1.0, 0.0);
    let scale = 1.0 / (2.0 * grid.n_points as f64).sqrt();
    let mut ref_amp = Vec::with_capacity(grid.n_points);
    let mut echo_amp = Vec::with_capacity(grid.n_points);
    for t in grid.times() {
        let e_ref = field_amplitude(&model.cfg, t, one);
        let e_echo = echo_field(&model.cfg, t, tau, beat.omega_d, one)?;
        ref_amp.push(e_ref.conj().powu(model.n) * scale);
        echo_amp.push(-e_echo.conj().powu(model.n) * scale);
    }
    Ok(BranchAmplitudes {
        grid: *grid,
        ref_amp,
        echo_amp,
    })
}

/// Reference-minus-echo beat phase implied by `beat` on each edge, in local
/// time: −(θ₀ + ω_b1 t) on the rising edge, θ₁ + ω_b2 t on the falling edge,
/// θ + ω_b t for the sawtooth.
pub fn beat_phase_from_params(family: Family, beat: &BeatParams, edge: Edge, t: f64) -> f64 {
    match (family, edge) {
        (Family::Sawtooth, _) => beat.theta0 + beat.omega_b1 * t,
        (Family::Triangle, Edge::Rising) => -(beat.theta0 + beat.omega_b1 * t),
        (Family::Triangle, Edge::Falling) => beat.theta1 + beat.omega_b2 * t,
    }
}

/// NOON amplitudes parametrized directly by beat parameters, so that any
/// (ω_b, ω_d, θ₀, θ₁) can be perturbed independently. Grid times are
/// physical.
pub fn amplitudes_from_beat(
    model: &NoonModel,
    beat: &BeatParams,
    grid: &TimeGrid,
) -> Result<BranchAmplitudes> {
    check_grid(&model.cfg, grid)?;
    let one = Complex64::new(1.0, 0.0);
    let scale = 1.0 / (2.0 * grid.n_points as f64).sqrt();
    let nf = model.n as f64;
    let mut ref_amp = Vec::with_capacity(grid.n_points);
    let mut echo_amp = Vec::with_capacity(grid.n_points);
    for t in grid.times() {
        let (edge, t_local) = model.windows.locate(&model.cfg, t);
        let dphi = beat_phase_from_params(model.cfg.family, beat, edge, t_local);
        let r = field_amplitude(&model.cfg, t, one).conj().powu(model.n) * scale;
        ref_amp.push(r);
        echo_amp.push(-r * Complex64::from_polar(1.0, nf * dphi));
    }
    Ok(BranchAmplitudes {
        grid: *grid,
        ref_amp,
        echo_amp,
    })
}
