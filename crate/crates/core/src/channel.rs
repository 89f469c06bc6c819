//! Target model: delay and Doppler, beat parameters and their inversion.

use std::f64::consts::PI;

use crate::waveform::{beat_offset, check_delay_regime, Edge, Family, ModulationConfig};
use crate::{wrap_pi, Error, Result, C};

/// Point target. `velocity_v > 0` means receding (red shift).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub range_d: f64,
    pub velocity_v: f64,
}

impl Target {
    pub fn new(range_d: f64, velocity_v: f64) -> Result<Self> {
        let t = Target { range_d, velocity_v };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_d >= 0.0) || !self.range_d.is_finite() {
            return Err(Error::Config(format!("range must be finite and >= 0, got {}", self.range_d)));
        }
        if !(self.velocity_v.abs() < C / 1000.0) {
            return Err(Error::Regime(format!(
                "|velocity| must be below c/1000, got {}",
                self.velocity_v
            )));
        }
        Ok(())
    }

    /// Round-trip delay at t = 0, 2d/c.
    pub fn tau(&self) -> f64 {
        2.0 * self.range_d / C
    }
}

/// τ(t) = 2(d + vt)/c.
pub fn time_of_flight(target: &Target, t: f64) -> f64 {
    2.0 * (target.range_d + target.velocity_v * t) / C
}

/// Detection window anchors in local time.
///
/// Triangle: the rising window is [t_d0 − T_m/2, t_d0] and the falling window
/// is (t_d1, t_d1 + T_m/2]. The rising window maps onto the physical rising
/// edge [t'₀ − T_m/2, t'₀] and the falling window onto (t'₀, t'₀ + T_m/2].
///
/// Sawtooth: `t_d0` plays the role of t_d; the window is [t_d, t_d + T_m] and
/// maps onto [t₀, t₀ + T_m]. `t_d1` is unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionWindows {
    pub t_d0: f64,
    pub t_d1: f64,
}

impl DetectionWindows {
    /// Triangle: t_d0 = −t_d1 = T_m/4. Sawtooth: t_d = −T_m/2.
    pub fn default_for(cfg: &ModulationConfig) -> Self {
        match cfg.family {
            Family::Triangle => DetectionWindows {
                t_d0: 0.25 * cfg.period,
                t_d1: -0.25 * cfg.period,
            },
            Family::Sawtooth => DetectionWindows {
                t_d0: -0.5 * cfg.period,
                t_d1: -0.5 * cfg.period,
            },
        }
    }

    /// Local-time interval `(lo, hi)` of the window on `edge`.
    pub fn window(&self, cfg: &ModulationConfig, edge: Edge) -> (f64, f64) {
        match (cfg.family, edge) {
            (Family::Sawtooth, _) => (self.t_d0, self.t_d0 + cfg.period),
            (Family::Triangle, Edge::Rising) => (self.t_d0 - 0.5 * cfg.period, self.t_d0),
            (Family::Triangle, Edge::Falling) => (self.t_d1, self.t_d1 + 0.5 * cfg.period),
        }
    }

    /// Whether local time `t` lies in the window of `edge`, up to 1e-12·T_m.
    pub fn contains(&self, cfg: &ModulationConfig, edge: Edge, t: f64) -> bool {
        let (lo, hi) = self.window(cfg, edge);
        let tol = 1e-12 * cfg.period;
        t >= lo - tol && t <= hi + tol
    }

    /// Maps a physical time to its edge and local time.
    pub fn locate(&self, cfg: &ModulationConfig, t_phys: f64) -> (Edge, f64) {
        let (edge, u) = cfg.offset(t_phys);
        (edge, u + self.anchor(cfg, edge))
    }

    /// Physical time of local time `t_local` on `edge`, within the period
    /// containing the origin.
    pub fn to_physical(&self, cfg: &ModulationConfig, edge: Edge, t_local: f64) -> f64 {
        t_local - self.anchor(cfg, edge) + cfg.t_origin
    }

    fn anchor(&self, cfg: &ModulationConfig, edge: Edge) -> f64 {
        match (cfg.family, edge) {
            (Family::Sawtooth, _) => self.t_d0,
            (Family::Triangle, Edge::Rising) => self.t_d0,
            (Family::Triangle, Edge::Falling) => self.t_d1,
        }
    }
}

/// Observable beat signature of a target.
///
/// For the sawtooth, ω_d is zero, ω_b1 = ω_b, ω_b2 = −ω_b and θ₁ = θ₀ = θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatParams {
    pub omega_b: f64,
    pub omega_d: f64,
    pub omega_b1: f64,
    pub omega_b2: f64,
    pub theta0: f64,
    pub theta1: f64,
}

impl BeatParams {
    /// ω_b > |ω_d|, the regime in which ω_b2 < 0 and the magnitude-only
    /// inversion is unambiguous.
    pub fn regime_ok(&self) -> bool {
        self.omega_b > self.omega_d.abs()
    }

    /// Beat frequency and phase constant of `edge`.
    pub fn edge_tone(&self, edge: Edge) -> (f64, f64) {
        match edge {
            Edge::Rising => (self.omega_b1, self.theta0),
            Edge::Falling => (self.omega_b2, self.theta1),
        }
    }
}

/// Doppler shift ω_d = 2ω_c v/c.
pub fn doppler_shift(cfg: &ModulationConfig, velocity: f64) -> f64 {
    2.0 * cfg.omega_c() * velocity / C
}

pub fn beat_parameters(
    target: &Target,
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
) -> Result<BeatParams> {
    target.validate()?;
    let tau = target.tau();
    check_delay_regime(cfg, tau)?;
    let omega_b = cfg.chirp_rate() * tau;
    match cfg.family {
        Family::Triangle => {
            let omega_d = doppler_shift(cfg, target.velocity_v);
            let offset = beat_offset(cfg, tau, omega_d);
            let omega_b1 = omega_b + omega_d;
            let omega_b2 = -omega_b + omega_d;
            Ok(BeatParams {
                omega_b,
                omega_d,
                omega_b1,
                omega_b2,
                theta0: wrap_pi(offset - omega_b1 * windows.t_d0),
                theta1: wrap_pi(offset - omega_b2 * windows.t_d1),
            })
        }
        Family::Sawtooth => {
            let offset = beat_offset(cfg, tau, 0.0);
            let theta = wrap_pi(offset - omega_b * windows.t_d0);
            Ok(BeatParams {
                omega_b,
                omega_d: 0.0,
                omega_b1: omega_b,
                omega_b2: -omega_b,
                theta0: theta,
                theta1: theta,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub d: f64,
    pub v: f64,
    /// Set when either edge frequency is within one half-period DFT bin of
    /// zero, where the sign of ω_b2 cannot be trusted.
    pub branch_ambiguous: bool,
}

/// Recovers (d, v) from the rising-edge frequency and the falling-edge
/// frequency magnitude, assuming ω_b2 = −|ω_b2|.
pub fn invert_beat(omega_b1: f64, abs_omega_b2: f64, cfg: &ModulationConfig) -> Result<Inversion> {
    if cfg.family != Family::Triangle {
        return Err(Error::Unsupported(
            "range and velocity cannot be separated with a single sawtooth edge".into(),
        ));
    }
    if !(omega_b1 >= 0.0) || !(abs_omega_b2 >= 0.0) {
        return Err(Error::Domain(format!(
            "beat frequencies must be >= 0, got {omega_b1}, {abs_omega_b2}"
        )));
    }
    let tau = cfg.period / (2.0 * cfg.delta_omega) * 0.5 * (omega_b1 + abs_omega_b2);
    let omega_d = 0.5 * (omega_b1 - abs_omega_b2);
    let bin = 2.0 * PI / (0.5 * cfg.period);
    Ok(Inversion {
        d: C * tau / 2.0,
        v: C * omega_d / (2.0 * cfg.omega_c()),
        branch_ambiguous: omega_b1.min(abs_omega_b2) < bin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{echo_field, field_amplitude};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn tri() -> ModulationConfig {
        ModulationConfig::reference(Family::Triangle)
    }

    #[test]
    fn time_of_flight_examples() {
        let still = Target::new(0.0, 0.0).unwrap();
        assert_eq!(time_of_flight(&still, 3.0), 0.0);
        let t = Target::new(1.5, 0.0).unwrap();
        assert!((time_of_flight(&t, 0.0) - 3.0 / C).abs() < 1e-24);
        assert!((time_of_flight(&t, 0.0) - 1.0e-8).abs() < 1e-10);
        let m = Target::new(1.5, 15.0).unwrap();
        let want = (3.0 + 3e-5) / C;
        assert!((time_of_flight(&m, 1e-6) - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn target_validation() {
        assert!(Target::new(-1.0, 0.0).is_err());
        assert!(matches!(Target::new(1.0, C), Err(Error::Regime(_))));
    }

    #[test]
    fn zero_target_has_zero_signature() {
        for family in [Family::Triangle, Family::Sawtooth] {
            let cfg = ModulationConfig::reference(family);
            let w = DetectionWindows::default_for(&cfg);
            let b = beat_parameters(&Target::new(0.0, 0.0).unwrap(), &cfg, &w).unwrap();
            assert_eq!(
                [b.omega_b, b.omega_d, b.omega_b1, b.omega_b2, b.theta0, b.theta1],
                [0.0; 6]
            );
        }
    }

    #[test]
    fn reference_beat_and_doppler_frequencies() {
        let cfg = tri();
        let w = DetectionWindows::default_for(&cfg);
        let b = beat_parameters(&Target::new(1.5, 0.0).unwrap(), &cfg, &w).unwrap();
        // Δf·τ/(T/2) with τ = 3/c
        let fb = 100e9 * (3.0 / C) / 5e-6;
        assert!((b.omega_b / (2.0 * PI) - fb).abs() <= 1e-12 * fb);
        assert!((fb / 200e6 - 1.0).abs() < 2e-3);
        assert_eq!(b.omega_d, 0.0);

        let b = beat_parameters(&Target::new(1.5, 15.0).unwrap(), &cfg, &w).unwrap();
        let lambda_c = 2.0 * PI * C / cfg.omega_c();
        let fd = 2.0 * 15.0 / lambda_c;
        assert!((b.omega_d / (2.0 * PI) - fd).abs() <= 1e-12 * fd);
        assert!((fd / 19.34e6 - 1.0).abs() < 2e-3);
    }

    #[test]
    fn sawtooth_beat_is_half_rate() {
        let cfg = ModulationConfig::reference(Family::Sawtooth);
        let w = DetectionWindows::default_for(&cfg);
        let b = beat_parameters(&Target::new(1.5, 15.0).unwrap(), &cfg, &w).unwrap();
        let fb = 100e9 * (3.0 / C) / 10e-6;
        assert!((b.omega_b / (2.0 * PI) - fb).abs() <= 1e-12 * fb);
        assert_eq!(b.omega_d, 0.0);
        assert!(invert_beat(1.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn inversion_examples() {
        let cfg = tri();
        let z = invert_beat(0.0, 0.0, &cfg).unwrap();
        assert_eq!((z.d, z.v), (0.0, 0.0));
        assert!(z.branch_ambiguous);

        let r = invert_beat(2.0 * PI * 2.1934e8, 2.0 * PI * 1.8066e8, &cfg).unwrap();
        assert!((r.d / 1.5 - 1.0).abs() < 2e-3);
        assert!((r.v / 15.0 - 1.0).abs() < 2e-3);
        assert!(!r.branch_ambiguous);

        let w = DetectionWindows::default_for(&cfg);
        let b = beat_parameters(&Target::new(1.5, 15.0).unwrap(), &cfg, &w).unwrap();
        let back = invert_beat(b.omega_b1, b.omega_b2.abs(), &cfg).unwrap();
        assert!((back.d - 1.5).abs() <= 1e-12 * 1.5);
        assert!((back.v - 15.0).abs() <= 1e-12 * 15.0);
    }

    /// Phase of a·conj(b), robust to large absolute phases.
    fn phase_diff(a: Complex64, b: Complex64) -> f64 {
        (a * b.conj()).arg()
    }

    #[test]
    fn echo_phase_reproduces_theta_and_slopes() {
        let cfg = tri();
        let w = DetectionWindows::default_for(&cfg);
        let target = Target::new(1.5, 15.0).unwrap();
        let b = beat_parameters(&target, &cfg, &w).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let tau = target.tau();
        let field = |t: f64| field_amplitude(&cfg, t, one);
        let echo = |t: f64| echo_field(&cfg, t, tau, b.omega_d, one).unwrap();

        // rising edge: echo minus reference at t'₀ − T/4
        let t_r = cfg.t_origin - 0.25 * cfg.period;
        let got = phase_diff(echo(t_r), field(t_r));
        assert!((wrap_pi(got - b.theta0)).abs() < 1e-6, "{got} vs {}", b.theta0);
        // falling edge: reference minus echo at t'₀ + T/4
        let t_f = cfg.t_origin + 0.25 * cfg.period;
        let got = phase_diff(field(t_f), echo(t_f));
        assert!((wrap_pi(got - b.theta1)).abs() < 1e-6);

        let h = 1e-11;
        let slope = |t: f64, rising: bool| {
            let d = |s: f64| {
                if rising {
                    phase_diff(echo(s), field(s))
                } else {
                    phase_diff(field(s), echo(s))
                }
            };
            wrap_pi(d(t + h) - d(t - h)) / (2.0 * h)
        };
        let s1 = slope(t_r, true);
        assert!((s1 - b.omega_b1).abs() <= 1e-4 * b.omega_b1, "{s1} vs {}", b.omega_b1);
        let s2 = slope(t_f, false);
        assert!((s2 - b.omega_b2).abs() <= 1e-4 * b.omega_b2.abs());
    }

    #[test]
    fn window_mapping() {
        let mut cfg = tri();
        cfg.t_origin = 3e-6;
        let w = DetectionWindows::default_for(&cfg);
        let (e, tl) = w.locate(&cfg, cfg.t_origin - 0.25 * cfg.period);
        assert_eq!(e, Edge::Rising);
        assert!(tl.abs() < 1e-18);
        let (e, tl) = w.locate(&cfg, cfg.t_origin + 0.1 * cfg.period);
        assert_eq!(e, Edge::Falling);
        assert!((tl - (-0.15 * cfg.period)).abs() < 1e-18);
        let back = w.to_physical(&cfg, Edge::Falling, tl);
        assert!((back - (cfg.t_origin + 0.1 * cfg.period)).abs() < 1e-18);
        assert!(w.contains(&cfg, Edge::Rising, -0.25 * cfg.period));
        assert!(!w.contains(&cfg, Edge::Rising, 0.3 * cfg.period));
    }

    proptest! {
        #[test]
        fn round_trip_in_regime(d in 0.01f64..14.0, v in -100.0f64..100.0) {
            let cfg = tri();
            let w = DetectionWindows::default_for(&cfg);
            let b = beat_parameters(&Target::new(d, v).unwrap(), &cfg, &w).unwrap();
            prop_assume!(b.regime_ok());
            let r = invert_beat(b.omega_b1, b.omega_b2.abs(), &cfg).unwrap();
            prop_assert!((r.d - d).abs() <= 1e-10 * d);
            prop_assert!((r.v - v).abs() <= 1e-10 * v.abs().max(1e-3));
        }

        #[test]
        fn linear_and_decoupled(d in 0.0f64..10.0, v in -50.0f64..50.0, k in 0.1f64..1.0) {
            let cfg = tri();
            let w = DetectionWindows::default_for(&cfg);
            let a = beat_parameters(&Target::new(d, v).unwrap(), &cfg, &w).unwrap();
            let s = beat_parameters(&Target::new(k * d, k * v).unwrap(), &cfg, &w).unwrap();
            prop_assert!((s.omega_b - k * a.omega_b).abs() <= 1e-12 * a.omega_b.max(1.0));
            prop_assert!((s.omega_d - k * a.omega_d).abs() <= 1e-12 * a.omega_d.abs().max(1.0));
            // ω_b ignores v, ω_d ignores d
            let dv = beat_parameters(&Target::new(d, 0.0).unwrap(), &cfg, &w).unwrap();
            let vd = beat_parameters(&Target::new(0.0, v).unwrap(), &cfg, &w).unwrap();
            prop_assert_eq!(dv.omega_b, a.omega_b);
            prop_assert_eq!(vd.omega_d, a.omega_d);
            prop_assert_eq!(a.omega_d > 0.0, v > 0.0);
        }
    }
}
