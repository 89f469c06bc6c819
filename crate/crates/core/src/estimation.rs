//! Tone and target estimation from counting records.
//!
//! Each edge is fitted with the raised-cosine law
//! p(t) = ½(1 + a·cos ωt + b·sin ωt) under a binomial likelihood whose trial
//! count per bin is the total number of detections in that bin. The coarse
//! frequency comes from the periodogram peak. A golden-section search over
//! ±1 bin, with (a, b) profiled by weighted least squares, refines it, and
//! Fisher scoring in (ω, a, b) polishes the joint maximum.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::channel::invert_beat;
use crate::sampling::{CountRecord, EdgeSamples};
use crate::waveform::{Edge, ModulationConfig};
use crate::{wrap_pi, Error, Result, C};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    /// Golden-section stopping width, in DFT bins.
    pub golden_tol_bins: f64,
    /// Fisher-scoring iterations after the line search (0 disables polishing).
    pub scoring_iters: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            golden_tol_bins: 1e-12,
            scoring_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneEstimate {
    pub omega_hat: f64,
    pub theta_hat: f64,
    pub amplitude_hat: f64,
    pub log_likelihood: f64,
    /// Log-likelihood at the periodogram peak before refinement.
    pub coarse_log_likelihood: f64,
    pub coarse_omega: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimateFlags {
    /// Phases were divided by n ≥ 2 and are known only modulo 2π/n.
    pub phase_ambiguous: bool,
    pub d_clamped: bool,
    pub degenerate: bool,
    pub branch_ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEstimate {
    pub d_hat: f64,
    pub v_hat: f64,
    pub theta0_hat: f64,
    pub theta1_hat: f64,
    pub edge_estimates: (ToneEstimate, ToneEstimate),
    pub flags: EstimateFlags,
}

const MIN_BINS: usize = 8;

fn edge_data(record: &CountRecord, edge: Edge) -> Result<EdgeSamples> {
    let s = record.edge_samples(edge);
    if s.len() < MIN_BINS {
        return Err(Error::Config(format!(
            "{} window has {} bins, need at least {MIN_BINS}",
            edge.name(),
            s.len()
        )));
    }
    Ok(s)
}

fn periodogram_of(s: &EdgeSamples) -> Vec<(f64, f64)> {
    let m = s.len();
    let mean = s.port1.iter().sum::<f64>() / m as f64;
    let mut buf: Vec<Complex64> = s.port1.iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let span = m as f64 * (s.t[1] - s.t[0]);
    let scale = 1.0 / (m as f64 * m as f64);
    (0..=m / 2)
        .map(|k| (2.0 * PI * k as f64 / span, buf[k].norm_sqr() * scale))
        .collect()
}

/// Power |X_k|²/M² of the mean-subtracted port-1 counts on `edge`, at
/// ω_k = 2πk/(window length), k = 0..=M/2.
pub fn periodogram(record: &CountRecord, edge: Edge) -> Result<Vec<(f64, f64)>> {
    Ok(periodogram_of(&edge_data(record, edge)?))
}

/// Binomial fit data for one edge.
struct Fit<'a> {
    t: &'a [f64],
    x: Vec<f64>,
    m: Vec<f64>,
}

impl<'a> Fit<'a> {
    fn new(s: &'a EdgeSamples) -> Self {
        let m = s.port1.iter().zip(&s.port0).map(|(a, b)| a + b).collect();
        Fit {
            t: &s.t,
            x: s.port1.clone(),
            m,
        }
    }

    fn log_likelihood(&self, w: f64, a: f64, b: f64) -> f64 {
        let mut ll = 0.0;
        for k in 0..self.t.len() {
            if self.m[k] <= 0.0 {
                continue;
            }
            let (s, c) = (w * self.t[k]).sin_cos();
            let p = 0.5 * (1.0 + a * c + b * s);
            let (x, y) = (self.x[k], self.m[k] - self.x[k]);
            if x > 0.0 {
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += x * p.ln();
            }
            if y > 0.0 {
                if p >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                ll += y * (1.0 - p).ln();
            }
        }
        ll
    }

    /// Weighted least-squares (a, b) at frequency w, scaled into the open
    /// unit disc of fringe visibility on the sample set.
    fn profile(&self, w: f64) -> (f64, f64) {
        let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..self.t.len() {
            let mk = self.m[k];
            if mk <= 0.0 {
                continue;
            }
            let y = 2.0 * self.x[k] / mk - 1.0;
            let (s, c) = (w * self.t[k]).sin_cos();
            scc += mk * c * c;
            sss += mk * s * s;
            scs += mk * c * s;
            syc += mk * y * c;
            sys += mk * y * s;
        }
        let det = scc * sss - scs * scs;
        if !(det.abs() > 1e-300) {
            return (0.0, 0.0);
        }
        let a = (syc * sss - sys * scs) / det;
        let b = (sys * scc - syc * scs) / det;
        self.clip(w, a, b)
    }

    fn clip(&self, w: f64, a: f64, b: f64) -> (f64, f64) {
        let limit = 1.0 - 1e-12;
        let peak = self
            .t
            .iter()
            .map(|&t| {
                let (s, c) = (w * t).sin_cos();
                (a * c + b * s).abs()
            })
            .fold(0.0, f64::max);
        if peak > limit {
            let f = limit / peak;
            (a * f, b * f)
        } else {
            (a, b)
        }
    }

    fn profile_ll(&self, w: f64) -> (f64, f64, f64) {
        let (a, b) = self.profile(w);
        (self.log_likelihood(w, a, b), a, b)
    }

    /// Score vector and expected information in (ω, a, b).
    fn score_info(&self, w: f64, a: f64, b: f64) -> (Vector3<f64>, Matrix3<f64>) {
        let mut g = Vector3::zeros();
        let mut info = Matrix3::zeros();
        for k in 0..self.t.len() {
            let mk = self.m[k];
            if mk <= 0.0 {
                continue;
            }
            let t = self.t[k];
            let (s, c) = (w * t).sin_cos();
            let p = 0.5 * (1.0 + a * c + b * s);
            let v = p * (1.0 - p);
            if !(v > 1e-300) {
                continue;
            }
            let dp = Vector3::new(0.5 * t * (-a * s + b * c), 0.5 * c, 0.5 * s);
            g += dp * ((self.x[k] - mk * p) / v);
            info += dp * dp.transpose() * (mk / v);
        }
        (g, info)
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Maximum-likelihood tone fit on one edge of a record.
pub fn estimate_tone(record: &CountRecord, edge: Edge, search: &SearchSettings) -> Result<ToneEstimate> {
    let s = edge_data(record, edge)?;
    let spec = periodogram_of(&s);
    let fit = Fit::new(&s);
    let bin = spec[1].0;

    let (k_peak, peak_power) = spec
        .iter()
        .enumerate()
        .skip(1)
        .fold((1usize, -1.0f64), |acc, (k, &(_, p))| if p > acc.1 { (k, p) } else { acc });
    let coarse_omega = spec[k_peak].0;
    let total_trials: f64 = fit.m.iter().sum();
    if !(peak_power > 0.0) || total_trials <= 0.0 {
        return Ok(ToneEstimate {
            omega_hat: 0.0,
            theta_hat: 0.0,
            amplitude_hat: 0.0,
            log_likelihood: fit.log_likelihood(0.0, 0.0, 0.0),
            coarse_log_likelihood: fit.log_likelihood(0.0, 0.0, 0.0),
            coarse_omega: 0.0,
            degenerate: true,
        });
    }

    let (coarse_ll, ca, cb) = fit.profile_ll(coarse_omega);
    let lo = (coarse_omega - bin).max(0.0);
    let hi = coarse_omega + bin;
    let (mut w, _) = golden_max(|w| fit.profile_ll(w).0, lo, hi, search.golden_tol_bins * bin);
    let (mut ll, mut a, mut b) = fit.profile_ll(w);
    if coarse_ll > ll {
        w = coarse_omega;
        ll = coarse_ll;
        a = ca;
        b = cb;
    }

    for _ in 0..search.scoring_iters {
        let (g, info) = fit.score_info(w, a, b);
        let step = match info.cholesky() {
            Some(ch) => ch.solve(&g),
            None => break,
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let nw = w + scale * step[0];
            let (na, nb) = (a + scale * step[1], b + scale * step[2]);
            let (na, nb) = fit.clip(nw, na, nb);
            let nll = fit.log_likelihood(nw, na, nb);
            if nll >= ll && nw >= 0.0 {
                let small = (nw - w).abs() <= 1e-13 * bin && (na - a).abs() <= 1e-14 && (nb - b).abs() <= 1e-14;
                w = nw;
                a = na;
                b = nb;
                ll = nll;
                accepted = !small;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let amplitude = (a * a + b * b).sqrt();
    Ok(ToneEstimate {
        omega_hat: w,
        theta_hat: wrap_pi((-b).atan2(a)),
        amplitude_hat: amplitude,
        log_likelihood: ll,
        coarse_log_likelihood: coarse_ll,
        coarse_omega,
        degenerate: amplitude < 1e-6,
    })
}

/// Converts edge tone estimates into (d, v, θ₀, θ₁) for an n-photon record.
pub fn estimate_target(
    rising: &ToneEstimate,
    falling: &ToneEstimate,
    cfg: &ModulationConfig,
    n: u32,
) -> Result<TargetEstimate> {
    if n < 1 {
        return Err(Error::Config("photon number n must be >= 1".into()));
    }
    let nf = n as f64;
    let inv = invert_beat(rising.omega_hat / nf, falling.omega_hat / nf, cfg)?;
    let d_clamped = inv.d < 0.0;
    Ok(TargetEstimate {
        d_hat: inv.d.max(0.0),
        v_hat: inv.v,
        theta0_hat: wrap_pi(rising.theta_hat / nf),
        theta1_hat: wrap_pi(-falling.theta_hat / nf),
        edge_estimates: (*rising, *falling),
        flags: EstimateFlags {
            phase_ambiguous: n >= 2,
            d_clamped,
            degenerate: rising.degenerate || falling.degenerate,
            branch_ambiguous: inv.branch_ambiguous,
        },
    })
}

/// Fits both edges of a triangle record and inverts to the target.
pub fn estimate_record(record: &CountRecord, n: u32, search: &SearchSettings) -> Result<TargetEstimate> {
    let r = estimate_tone(record, Edge::Rising, search)?;
    let f = estimate_tone(record, Edge::Falling, search)?;
    estimate_target(&r, &f, &record.cfg, n)
}

/// Δd = (2π/n)·c/(2Δω) for both families; Δv = (2π/n)·c/(ω_c T_m) for the
/// triangle only.
pub fn resolution_limits(cfg: &ModulationConfig, n: u32) -> (f64, Option<f64>) {
    let k = 2.0 * PI / n as f64;
    let dd = k * C / (2.0 * cfg.delta_omega);
    let dv = match cfg.family {
        crate::waveform::Family::Triangle => Some(k * C / (cfg.omega_c() * cfg.period)),
        crate::waveform::Family::Sawtooth => None,
    };
    (dd, dv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseVelocity {
    pub v: f64,
    pub delta_theta: f64,
    /// |Δθ| is within 1e-9 rad of π, where the branch is undetermined.
    pub ambiguous: bool,
}

/// v = (Δθ/2π)(λ₀/2)/T_m from the sawtooth phases of two consecutive periods.
pub fn velocity_from_phase_difference(theta_a: f64, theta_b: f64, cfg: &ModulationConfig) -> PhaseVelocity {
    let dt = wrap_pi(theta_b - theta_a);
    PhaseVelocity {
        v: dt / (2.0 * PI) * (0.5 * cfg.lambda0()) / cfg.period,
        delta_theta: dt,
        ambiguous: PI - dt.abs() <= 1e-9,
    }
}
