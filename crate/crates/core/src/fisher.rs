//! Classical and quantum Fisher information, SLDs and Cramér-Rao bounds.
//!
//! All matrices are per emitted state, i.e. per unit ν·T_m. Triangle
//! parameters are ordered (ω_b, ω_d, θ₀, θ₁) or (d, v, θ₀, θ₁); sawtooth
//! parameters are (ω_b, θ).
//!
//! Closed forms integrate the fringe-phase gradients exactly over the
//! detection windows. For a phase g(t)·x the classical information of the
//! binary raised-cosine law is n²ggᵀ per instant, and the pure-state quantum
//! information of the two-branch state is 2n²⟨ggᵀ⟩ − n²⟨g⟩⟨g⟩ᵀ, with ⟨·⟩ the
//! average over the period.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::{beat_parameters, BeatParams, DetectionWindows, Target};
use crate::quantum::{amplitudes_from_beat, BeatLaw, BranchAmplitudes, NoonModel};
use crate::waveform::{Edge, Family, ModulationConfig, TimeGrid};
use crate::{Error, Result, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherKind {
    Classical,
    Quantum,
}

impl FisherKind {
    pub fn name(self) -> &'static str {
        match self {
            FisherKind::Classical => "CFI",
            FisherKind::Quantum => "QFI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    BeatFrequencies,
    RangeVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherResult {
    pub kind: FisherKind,
    pub parameter_order: Vec<String>,
    pub matrix: DMatrix<f64>,
    /// CRB per unit emissions, when the matrix is invertible.
    pub inverse: Option<DMatrix<f64>>,
    pub convention: String,
}

const BEAT_LABELS: [&str; 4] = ["omega_b", "omega_d", "theta0", "theta1"];
const RANGE_LABELS: [&str; 4] = ["d", "v", "theta0", "theta1"];
const SAW_LABELS: [&str; 2] = ["omega_b", "theta"];

fn labels(l: &[&str]) -> Vec<String> {
    l.iter().map(|s| s.to_string()).collect()
}

impl FisherResult {
    fn build(kind: FisherKind, order: Vec<String>, matrix: DMatrix<f64>, convention: String) -> Self {
        let matrix = symmetrize(&matrix);
        let inverse = invert_spd(&matrix).ok();
        FisherResult {
            kind,
            parameter_order: order,
            matrix,
            inverse,
            convention,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Rows `kind,param_i,param_j,fisher,crb`; crb is empty when singular.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,param_i,param_j,fisher,crb\n");
        let k = self.dim();
        for i in 0..k {
            for j in 0..k {
                let crb = self
                    .inverse
                    .as_ref()
                    .map(|m| format!("{}", m[(i, j)]))
                    .unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    self.kind.name(),
                    self.parameter_order[i],
                    self.parameter_order[j],
                    self.matrix[(i, j)],
                    crb
                );
            }
        }
        s
    }

    /// Parses the output of [`FisherResult::to_csv`]. The convention string
    /// is not part of the table and is left empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("kind,param_i,param_j,fisher,crb") {
            return Err(Error::Parse("unexpected fisher header".into()));
        }
        let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
        let k = (rows.len() as f64).sqrt().round() as usize;
        if k * k != rows.len() || k == 0 {
            return Err(Error::Parse(format!("{} rows is not a square matrix", rows.len())));
        }
        let kind = match rows[0][0] {
            "CFI" => FisherKind::Classical,
            "QFI" => FisherKind::Quantum,
            other => return Err(Error::Parse(format!("unknown kind {other}"))),
        };
        let order: Vec<String> = (0..k).map(|j| rows[j][2].to_string()).collect();
        let mut m = DMatrix::zeros(k, k);
        let mut inv = DMatrix::zeros(k, k);
        let mut has_inv = true;
        for (idx, r) in rows.iter().enumerate() {
            if r.len() != 5 {
                return Err(Error::Parse(format!("fisher row needs 5 columns: {r:?}")));
            }
            let (i, j) = (idx / k, idx % k);
            m[(i, j)] = r[3].parse().map_err(|e| Error::Parse(format!("{}: {e}", r[3])))?;
            if r[4].is_empty() {
                has_inv = false;
            } else {
                inv[(i, j)] = r[4].parse().map_err(|e| Error::Parse(format!("{}: {e}", r[4])))?;
            }
        }
        Ok(FisherResult {
            kind,
            parameter_order: order,
            matrix: m,
            inverse: has_inv.then_some(inv),
            convention: String::new(),
        })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn null_direction(m: &DMatrix<f64>, labels: &[String]) -> String {
    let eig = SymmetricEigen::new(m.clone());
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let v = eig.eigenvectors.column(idx);
    let parts: Vec<String> = v
        .iter()
        .zip(labels)
        .filter(|(x, _)| x.abs() > 1e-6)
        .map(|(x, l)| format!("{x:+.4}*{l}"))
        .collect();
    parts.join(" ")
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::Singular(String::new()));
    }
    m.clone()
        .cholesky()
        .map(|c| symmetrize(&c.inverse()))
        .ok_or_else(|| Error::Singular(String::new()))
}

/// inverse / total_emissions.
pub fn crb(fr: &FisherResult, total_emissions: f64) -> Result<DMatrix<f64>> {
    if !(total_emissions > 0.0) {
        return Err(Error::Config(format!("total emissions must be > 0, got {total_emissions}")));
    }
    match invert_spd(&fr.matrix) {
        Ok(inv) => Ok(inv / total_emissions),
        Err(_) => Err(Error::Singular(null_direction(&fr.matrix, &fr.parameter_order))),
    }
}

// ---------------------------------------------------------------------------
// Closed forms

/// ∫ over [lo, hi] of 1, t, t².
fn moments(lo: f64, hi: f64) -> [f64; 3] {
    [hi - lo, 0.5 * (hi * hi - lo * lo), (hi * hi * hi - lo * lo * lo) / 3.0]
}

/// Fringe-phase gradient g(t) = c0 + c1·t on one window, with its moments.
struct Piece {
    c0: Vec<f64>,
    c1: Vec<f64>,
    m: [f64; 3],
}

impl Piece {
    fn outer(&self) -> DMatrix<f64> {
        let k = self.c0.len();
        DMatrix::from_fn(k, k, |i, j| {
            self.c0[i] * self.c0[j] * self.m[0]
                + (self.c0[i] * self.c1[j] + self.c1[i] * self.c0[j]) * self.m[1]
                + self.c1[i] * self.c1[j] * self.m[2]
        })
    }

    fn mean_vec(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.c0.len(), 1, |i, _| self.c0[i] * self.m[0] + self.c1[i] * self.m[1])
    }
}

/// Phase gradients of the reference-minus-echo phase in (ω_b, ω_d, θ₀, θ₁).
fn triangle_pieces(cfg: &ModulationConfig, w: &DetectionWindows) -> [Piece; 2] {
    let (rl, rh) = w.window(cfg, Edge::Rising);
    let (fl, fh) = w.window(cfg, Edge::Falling);
    [
        Piece {
            c0: vec![0.0, 0.0, -1.0, 0.0],
            c1: vec![-1.0, -1.0, 0.0, 0.0],
            m: moments(rl, rh),
        },
        Piece {
            c0: vec![0.0, 0.0, 0.0, 1.0],
            c1: vec![-1.0, 1.0, 0.0, 0.0],
            m: moments(fl, fh),
        },
    ]
}

fn saw_pieces(cfg: &ModulationConfig, t0: f64) -> [Piece; 1] {
    [Piece {
        c0: vec![0.0, 1.0],
        c1: vec![1.0, 0.0],
        m: moments(t0, t0 + cfg.period),
    }]
}

fn cfi_from_pieces(pieces: &[Piece], period: f64, n: u32) -> DMatrix<f64> {
    let nn = (n as f64).powi(2);
    let mut f = pieces[0].outer();
    for p in &pieces[1..] {
        f += p.outer();
    }
    f * (nn / period)
}

fn qfi_from_pieces(pieces: &[Piece], period: f64, n: u32) -> DMatrix<f64> {
    let nn = (n as f64).powi(2);
    let mut outer = pieces[0].outer();
    let mut mean = pieces[0].mean_vec();
    for p in &pieces[1..] {
        outer += p.outer();
        mean += p.mean_vec();
    }
    (outer * (2.0 / period) - &mean * mean.transpose() / (period * period)) * nn
}

/// Jacobian ∂(ω_b, ω_d, θ₀, θ₁)/∂(d, v, θ₀, θ₁), diagonal.
pub fn range_velocity_jacobian(cfg: &ModulationConfig) -> DMatrix<f64> {
    let j = [
        4.0 * cfg.delta_omega / (C * cfg.period),
        2.0 * cfg.omega_c() / C,
        1.0,
        1.0,
    ];
    DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&j))
}

fn reparametrize(f: DMatrix<f64>, cfg: &ModulationConfig, p: Parametrization) -> (DMatrix<f64>, Vec<String>) {
    match p {
        Parametrization::BeatFrequencies => (f, labels(&BEAT_LABELS)),
        Parametrization::RangeVelocity => {
            let j = range_velocity_jacobian(cfg);
            (j.transpose() * f * &j, labels(&RANGE_LABELS))
        }
    }
}

fn require_family(cfg: &ModulationConfig, family: Family, what: &str) -> Result<()> {
    if cfg.family != family {
        return Err(Error::Unsupported(format!("{what} needs the {} family", family.name())));
    }
    Ok(())
}

/// Triangle CFI with explicit windows.
pub fn cfi_closed_triangle_windows(
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
    n: u32,
    p: Parametrization,
) -> Result<FisherResult> {
    require_family(cfg, Family::Triangle, "cfi_closed_triangle")?;
    let f = cfi_from_pieces(&triangle_pieces(cfg, windows), cfg.period, n);
    let (m, order) = reparametrize(f, cfg, p);
    Ok(FisherResult::build(
        FisherKind::Classical,
        order,
        m,
        format!("triangle n={n} t_d0={} t_d1={}", windows.t_d0, windows.t_d1),
    ))
}

/// Triangle CFI with t_d0 = −t_d1 = T_m/4.
pub fn cfi_closed_triangle(cfg: &ModulationConfig, n: u32, p: Parametrization) -> Result<FisherResult> {
    cfi_closed_triangle_windows(cfg, &DetectionWindows::default_for(cfg), n, p)
}

/// Triangle QFI with explicit windows.
pub fn qfi_closed_triangle_windows(
    cfg: &ModulationConfig,
    windows: &DetectionWindows,
    n: u32,
    p: Parametrization,
) -> Result<FisherResult> {
    require_family(cfg, Family::Triangle, "qfi_closed_triangle")?;
    let f = qfi_from_pieces(&triangle_pieces(cfg, windows), cfg.period, n);
    let (m, order) = reparametrize(f, cfg, p);
    Ok(FisherResult::build(
        FisherKind::Quantum,
        order,
        m,
        format!("triangle n={n} T1={} T2={}", windows.t_d0, -windows.t_d1),
    ))
}

/// Triangle QFI with T₁ = T₂ = T_m/4.
pub fn qfi_closed_triangle(cfg: &ModulationConfig, n: u32, p: Parametrization) -> Result<FisherResult> {
    qfi_closed_triangle_windows(cfg, &DetectionWindows::default_for(cfg), n, p)
}

/// Sawtooth QFI in (ω_b, θ) for the period starting at t0.
pub fn qfi_closed_sawtooth(cfg: &ModulationConfig, n: u32, t0: f64) -> Result<FisherResult> {
    require_family(cfg, Family::Sawtooth, "qfi_closed_sawtooth")?;
    let f = qfi_from_pieces(&saw_pieces(cfg, t0), cfg.period, n);
    Ok(FisherResult::build(
        FisherKind::Quantum,
        labels(&SAW_LABELS),
        f,
        format!("sawtooth n={n} t0={t0}"),
    ))
}

/// Sawtooth CFI in (ω_b, θ) for the window starting at t_d.
pub fn cfi_closed_sawtooth(cfg: &ModulationConfig, n: u32, t_d: f64) -> Result<FisherResult> {
    require_family(cfg, Family::Sawtooth, "cfi_closed_sawtooth")?;
    let f = cfi_from_pieces(&saw_pieces(cfg, t_d), cfg.period, n);
    Ok(FisherResult::build(
        FisherKind::Classical,
        labels(&SAW_LABELS),
        f,
        format!("sawtooth n={n} t_d={t_d}"),
    ))
}

/// Range variance bound of a sawtooth result, per unit emissions:
/// CRB(ω_b)·(cT_m/(2Δω))².
pub fn sawtooth_range_crb(fr: &FisherResult, cfg: &ModulationConfig) -> Result<f64> {
    let inv = crb(fr, 1.0)?;
    let s = C * cfg.period / (2.0 * cfg.delta_omega);
    Ok(inv[(0, 0)] * s * s)
}

// ---------------------------------------------------------------------------
// Numeric information

fn beat_from_vec(family: Family, x: &[f64]) -> BeatParams {
    match family {
        Family::Triangle => BeatParams {
            omega_b: x[0],
            omega_d: x[1],
            omega_b1: x[0] + x[1],
            omega_b2: -x[0] + x[1],
            theta0: x[2],
            theta1: x[3],
        },
        Family::Sawtooth => BeatParams {
            omega_b: x[0],
            omega_d: 0.0,
            omega_b1: x[0],
            omega_b2: -x[0],
            theta0: x[1],
            theta1: x[1],
        },
    }
}

fn vec_from_beat(family: Family, b: &BeatParams) -> Vec<f64> {
    match family {
        Family::Triangle => vec![b.omega_b, b.omega_d, b.theta0, b.theta1],
        Family::Sawtooth => vec![b.omega_b, b.theta0],
    }
}

/// Finite-difference step scales: 4/T_m for ω_b, 2/T_m for ω_d, 1 for phases.
fn natural_scales(cfg: &ModulationConfig) -> Vec<f64> {
    match cfg.family {
        Family::Triangle => vec![4.0 / cfg.period, 2.0 / cfg.period, 1.0, 1.0],
        Family::Sawtooth => vec![2.0 / cfg.period, 1.0],
    }
}

fn beat_labels(family: Family) -> Vec<String> {
    match family {
        Family::Triangle => labels(&BEAT_LABELS),
        Family::Sawtooth => labels(&SAW_LABELS),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// Relative tolerance per panel.
    pub tol: f64,
    /// Finite-difference step relative to each parameter's natural scale.
    pub fd_step_rel: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            tol: 1e-10,
            fd_step_rel: 1e-6,
            max_depth: 30,
        }
    }
}

/// Instantaneous binary-outcome information Σ_y ∂p_y ∂p_yᵀ / p_y at local
/// time t, with central differences for ∂p.
///
/// The difference p(x+h) − p(x−h) of cos² terms is evaluated through
/// cos²u − cos²w = sin(w+u)·sin(w−u), which is algebraically identical but
/// free of cancellation near the fringe extrema.
#[allow(clippy::too_many_arguments)]
fn instantaneous_cfi(
    n: u32,
    plus: &[BeatParams],
    minus: &[BeatParams],
    h: &[f64],
    base: &BeatParams,
    edge: Edge,
    t: f64,
    out: &mut [f64],
) -> bool {
    let law = BeatLaw { n, beat: *base };
    let x = law.argument(edge, t);
    let (s, _) = x.sin_cos();
    let pq = 0.25 * s * s;
    if pq < 1e-28 {
        return false;
    }
    let k = h.len();
    let mut dp = [0.0; 4];
    for i in 0..k {
        let u = 0.5 * BeatLaw { n, beat: plus[i] }.argument(edge, t);
        let w = 0.5 * BeatLaw { n, beat: minus[i] }.argument(edge, t);
        dp[i] = (w + u).sin() * (w - u).sin() / (2.0 * h[i]);
    }
    for i in 0..k {
        for j in 0..k {
            // p1 and p0 contribute equally: (∂p)²(1/p + 1/(1−p)) = (∂p)²/(p(1−p))
            out[i * k + j] = dp[i] * dp[j] / pq;
        }
    }
    true
}

struct CfiIntegrand {
    n: u32,
    plus: Vec<BeatParams>,
    minus: Vec<BeatParams>,
    h: Vec<f64>,
    base: BeatParams,
    edge: Edge,
    period: f64,
}

impl CfiIntegrand {
    fn eval(&self, t: f64) -> Vec<f64> {
        let k = self.h.len();
        let mut out = vec![0.0; k * k];
        let mut tt = t;
        for _ in 0..8 {
            if instantaneous_cfi(self.n, &self.plus, &self.minus, &self.h, &self.base, self.edge, tt, &mut out) {
                return out;
            }
            // node on a fringe extremum: nudge by one ulp of the period scale
            tt += f64::EPSILON * self.period;
        }
        out
    }
}

fn simpson(fa: &[f64], fm: &[f64], fb: &[f64], h: f64) -> Vec<f64> {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((a, m), b)| h / 6.0 * (a + 4.0 * m + b))
        .collect()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &CfiIntegrand,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: &[f64],
    tol: f64,
    depth: u32,
    ok: &mut bool,
) -> Vec<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f.eval(lm);
    let frm = f.eval(rm);
    let left = simpson(fa, &flm, fm, m - a);
    let right = simpson(fm, &frm, fb, b - m);
    let sum: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
    let err: Vec<f64> = sum.iter().zip(whole).map(|(s, w)| s - w).collect();
    let scale = norm_inf(&sum).max(1e-300);
    if norm_inf(&err) <= 15.0 * tol * scale {
        return sum.iter().zip(&err).map(|(s, e)| s + e / 15.0).collect();
    }
    if depth == 0 {
        *ok = false;
        return sum;
    }
    let l = adaptive(f, a, m, fa, &flm, fm, &left, tol, depth - 1, ok);
    let r = adaptive(f, m, b, fm, &frm, fb, &right, tol, depth - 1, ok);
    l.iter().zip(&r).map(|(x, y)| x + y).collect()
}

/// Numeric CFI per unit νT_m in beat-frequency parameters: the instantaneous
/// binary-outcome information integrated over both detection windows with
/// adaptive Simpson quadrature, divided by T_m.
pub fn cfi_numeric(model: &NoonModel, target: &Target, quad: &QuadratureSettings) -> Result<FisherResult> {
    let cfg = &model.cfg;
    let base = beat_parameters(target, cfg, &model.windows)?;
    let x0 = vec_from_beat(cfg.family, &base);
    let h: Vec<f64> = natural_scales(cfg).iter().map(|s| s * quad.fd_step_rel).collect();
    let k = x0.len();
    let shifted = |sign: f64| -> Vec<BeatParams> {
        (0..k)
            .map(|i| {
                let mut x = x0.clone();
                x[i] += sign * h[i];
                beat_from_vec(cfg.family, &x)
            })
            .collect()
    };
    let plus = shifted(1.0);
    let minus = shifted(-1.0);
    let edges: &[Edge] = match cfg.family {
        Family::Triangle => &[Edge::Rising, Edge::Falling],
        Family::Sawtooth => &[Edge::Rising],
    };
    let mut total = vec![0.0; k * k];
    let mut ok = true;
    for &edge in edges {
        let integrand = CfiIntegrand {
            n: model.n,
            plus: plus.clone(),
            minus: minus.clone(),
            h: h.clone(),
            base,
            edge,
            period: cfg.period,
        };
        let (lo, hi) = model.windows.window(cfg, edge);
        let (omega, _) = base.edge_tone(edge);
        // panels of at most a quarter fringe cycle, at least 16 per window
        let rate = model.n as f64 * omega.abs();
        let quarter = if rate > 0.0 { 0.25 * 2.0 * std::f64::consts::PI / rate } else { hi - lo };
        let panels = (((hi - lo) / quarter).ceil() as usize).max(16);
        let w = (hi - lo) / panels as f64;
        let mut fa = integrand.eval(lo);
        for p in 0..panels {
            let a = lo + p as f64 * w;
            let b = if p + 1 == panels { hi } else { a + w };
            let fm = integrand.eval(0.5 * (a + b));
            let fb = integrand.eval(b);
            let whole = simpson(&fa, &fm, &fb, b - a);
            let part = adaptive(&integrand, a, b, &fa, &fm, &fb, &whole, quad.tol, quad.max_depth, &mut ok);
            for (t, v) in total.iter_mut().zip(&part) {
                *t += v;
            }
            fa = fb;
        }
    }
    if !ok {
        return Err(Error::Tolerance(format!(
            "adaptive quadrature did not reach relative tolerance {} within depth {}",
            quad.tol, quad.max_depth
        )));
    }
    let m = DMatrix::from_row_slice(k, k, &total) / cfg.period;
    Ok(FisherResult::build(
        FisherKind::Classical,
        beat_labels(cfg.family),
        m,
        format!("numeric n={} tol={} fd_step_rel={}", model.n, quad.tol, quad.fd_step_rel),
    ))
}

fn qfi_at_step(
    model: &NoonModel,
    base: &BeatParams,
    grid: &TimeGrid,
    step: f64,
) -> Result<DMatrix<f64>> {
    let cfg = &model.cfg;
    let x0 = vec_from_beat(cfg.family, base);
    let scales = natural_scales(cfg);
    let k = x0.len();
    let psi = amplitudes_from_beat(model, base, grid)?;
    let check_norm = |a: &BranchAmplitudes| -> Result<()> {
        let nrm = a.norm_sqr();
        if (nrm - 1.0).abs() > 1e-10 {
            return Err(Error::Internal(format!("state norm {nrm} != 1")));
        }
        Ok(())
    };
    check_norm(&psi)?;
    let mut derivs = Vec::with_capacity(k);
    for i in 0..k {
        let h = step * scales[i];
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[i] += h;
        xm[i] -= h;
        let ap = amplitudes_from_beat(model, &beat_from_vec(cfg.family, &xp), grid)?;
        let am = amplitudes_from_beat(model, &beat_from_vec(cfg.family, &xm), grid)?;
        check_norm(&ap)?;
        check_norm(&am)?;
        let diff = |p: &[Complex64], m: &[Complex64]| -> Vec<Complex64> {
            p.iter().zip(m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        };
        derivs.push(BranchAmplitudes {
            grid: *grid,
            ref_amp: diff(&ap.ref_amp, &am.ref_amp),
            echo_amp: diff(&ap.echo_amp, &am.echo_amp),
        });
    }
    let overlaps: Vec<Complex64> = derivs.iter().map(|d| psi.inner(d)).collect();
    let mut f = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let g = derivs[i].inner(&derivs[j]) - overlaps[i].conj() * overlaps[j];
            f[(i, j)] = 4.0 * g.re;
            f[(j, i)] = f[(i, j)];
        }
    }
    Ok(f)
}

/// Relative difference between two information matrices, scaled by their
/// diagonals.
pub fn relative_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let k = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let s = (b[(i, i)] * b[(j, j)]).abs().sqrt().max(1e-300);
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / s);
        }
    }
    worst
}

/// Pure-state QFI by central differences of the discrete state on `grid`
/// (physical times, one period). Fails with a tolerance error when halving
/// the step changes the matrix by more than 1e-3 relative.
pub fn qfi_numeric(model: &NoonModel, target: &Target, grid: &TimeGrid, step: f64) -> Result<FisherResult> {
    let base = beat_parameters(target, &model.cfg, &model.windows)?;
    let f1 = qfi_at_step(model, &base, grid, step)?;
    let f2 = qfi_at_step(model, &base, grid, 0.5 * step)?;
    let diff = relative_difference(&f1, &f2);
    if diff > 1e-3 {
        return Err(Error::Tolerance(format!(
            "finite-difference step {step} too large: halving it changed the QFI by {diff:.3e} (limit 1e-3)"
        )));
    }
    Ok(FisherResult::build(
        FisherKind::Quantum,
        beat_labels(model.cfg.family),
        f2,
        format!("numeric n={} points={} step={}", model.n, grid.n_points, 0.5 * step),
    ))
}

/// QFI at step h and h/2 without the tolerance gate, for convergence studies.
pub fn qfi_numeric_pair(
    model: &NoonModel,
    target: &Target,
    grid: &TimeGrid,
    step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let base = beat_parameters(target, &model.cfg, &model.windows)?;
    Ok((
        qfi_at_step(model, &base, grid, step)?,
        qfi_at_step(model, &base, grid, 0.5 * step)?,
    ))
}

// ---------------------------------------------------------------------------
// Symmetric logarithmic derivatives

#[derive(Debug, Clone, PartialEq)]
pub struct SldPair {
    pub rho: Matrix3<Complex64>,
    pub l_d: Matrix3<Complex64>,
    pub l_v: Matrix3<Complex64>,
    pub a: f64,
    pub b: f64,
}

/// SLDs of (d, v) in the basis {ψ, a·∂_dψ, b·∂_vψ} (projected orthogonal to
/// ψ), for the triangle with T₁ = T₂ = T_m/4.
pub fn sld_pair(cfg: &ModulationConfig, n: u32) -> Result<SldPair> {
    require_family(cfg, Family::Triangle, "sld_pair")?;
    let nf = n as f64;
    let a = 6f64.sqrt() * C / (nf * cfg.delta_omega);
    let b = 2.0 * 6f64.sqrt() * C / (nf * cfg.omega_c() * cfg.period);
    let z = Complex64::new(0.0, 0.0);
    let mut rho = Matrix3::from_element(z);
    rho[(0, 0)] = Complex64::new(1.0, 0.0);
    let mut l_d = Matrix3::from_element(z);
    l_d[(0, 1)] = Complex64::new(2.0 / a, 0.0);
    l_d[(1, 0)] = Complex64::new(2.0 / a, 0.0);
    let mut l_v = Matrix3::from_element(z);
    l_v[(0, 2)] = Complex64::new(2.0 / b, 0.0);
    l_v[(2, 0)] = Complex64::new(2.0 / b, 0.0);
    Ok(SldPair { rho, l_d, l_v, a, b })
}

/// |Tr{ρ[L_d, L_v]}|.
pub fn weak_commutativity(pair: &SldPair) -> f64 {
    let comm = pair.l_d * pair.l_v - pair.l_v * pair.l_d;
    (pair.rho * comm).trace().norm()
}

/// Tr[ρ·(L_iL_j + L_jL_i)/2] for i, j ∈ {d, v}.
pub fn sld_qfi(pair: &SldPair) -> [[f64; 2]; 2] {
    let ls = [pair.l_d, pair.l_v];
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let s = (ls[i] * ls[j] + ls[j] * ls[i]) * Complex64::new(0.5, 0.0);
            out[i][j] = (pair.rho * s).trace().re;
        }
    }
    out
}

/// ½(ρL + Lρ).
pub fn sld_rhs(rho: &Matrix3<Complex64>, l: &Matrix3<Complex64>) -> Matrix3<Complex64> {
    (rho * l + l * rho) * Complex64::new(0.5, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SldCheck {
    /// Finite-difference ∂_dρ and ∂_vρ in the 3-basis.
    pub drho_d: Matrix3<Complex64>,
    pub drho_v: Matrix3<Complex64>,
    /// Largest entrywise |∂ρ − ½(ρL + Lρ)|, scaled by 1/a and 1/b.
    pub max_rel_err_d: f64,
    pub max_rel_err_v: f64,
}

/// Verifies the SLD relations against the discrete NOON state on a midpoint
/// grid of `points` bins over one period, at a target with beat parameters
/// `beat` (θ₀, θ₁ held fixed).
///
/// The basis is e₁ = ψ, e₂ = a·∂_dψ, e₃ = b·∂_vψ with analytic derivatives
/// of the echo branch. ρ(x) is projected onto the basis at d ± kh and
/// v ± kh and differentiated with the five-point stencil. The chirp factor
/// shared by both branches in every bin cancels in these inner products and
/// is omitted.
pub fn sld_derivative_check(cfg: &ModulationConfig, n: u32, beat: &BeatParams, points: usize) -> Result<SldCheck> {
    let pair = sld_pair(cfg, n)?;
    let windows = DetectionWindows::default_for(cfg);
    let grid = TimeGrid::period_midpoints(cfg, points)?;
    let nf = n as f64;
    let jd = 4.0 * cfg.delta_omega / (C * cfg.period);
    let jv = 2.0 * cfg.omega_c() / C;
    let amp = 1.0 / (2.0 * points as f64).sqrt();

    // local (edge sign of ∂Δφ/∂ω_b, ∂Δφ/∂ω_d, edge) per bin
    let locs: Vec<(Edge, f64)> = grid.times().map(|t| windows.locate(cfg, t)).collect();
    let dphi = |edge: Edge, t: f64, wb: f64, wd: f64| -> f64 {
        match edge {
            Edge::Rising => -(beat.theta0 + (wb + wd) * t),
            Edge::Falling => beat.theta1 + (-wb + wd) * t,
        }
    };
    let grads = |edge: Edge, t: f64| -> (f64, f64) {
        match edge {
            Edge::Rising => (-t, -t),
            Edge::Falling => (-t, t),
        }
    };

    // c_i(δd, δv) = ⟨e_i|ψ(d+δd, v+δv)⟩
    let project = |dd: f64, dv: f64| -> [Complex64; 3] {
        let wb = beat.omega_b + jd * dd;
        let wd = beat.omega_d + jv * dv;
        let mut c = [Complex64::new(0.0, 0.0); 3];
        for &(edge, t) in &locs {
            let e0 = Complex64::from_polar(1.0, nf * dphi(edge, t, beat.omega_b, beat.omega_d));
            let e = Complex64::from_polar(1.0, nf * dphi(edge, t, wb, wd));
            let (gb, gd) = grads(edge, t);
            // basis components: ref branch amp, echo branch −amp·e0 (·i n g for derivatives)
            let psi_ref = amp;
            let psi_echo = -e * amp;
            let b1_ref = amp;
            let b1_echo = -e0 * amp;
            let i_n = Complex64::new(0.0, nf);
            let b2_echo = b1_echo * i_n * (gb * jd) * pair.a;
            let b3_echo = b1_echo * i_n * (gd * jv) * pair.b;
            c[0] += b1_ref * psi_ref + b1_echo.conj() * psi_echo;
            c[1] += b2_echo.conj() * psi_echo;
            c[2] += b3_echo.conj() * psi_echo;
        }
        c
    };
    let rho_at = |dd: f64, dv: f64| -> Matrix3<Complex64> {
        let c = project(dd, dv);
        Matrix3::from_fn(|i, j| c[i] * c[j].conj())
    };
    let stencil = |f: &dyn Fn(f64) -> Matrix3<Complex64>, h: f64| -> Matrix3<Complex64> {
        (f(-2.0 * h) - f(-h) * Complex64::new(8.0, 0.0) + f(h) * Complex64::new(8.0, 0.0) - f(2.0 * h))
            / Complex64::new(12.0 * h, 0.0)
    };
    let hd = 1e-3 * pair.a;
    let hv = 1e-3 * pair.b;
    let drho_d = stencil(&|h| rho_at(h, 0.0), hd);
    let drho_v = stencil(&|h| rho_at(0.0, h), hv);
    let rd = sld_rhs(&pair.rho, &pair.l_d);
    let rv = sld_rhs(&pair.rho, &pair.l_v);
    let err = |a: &Matrix3<Complex64>, b: &Matrix3<Complex64>, scale: f64| -> f64 {
        (a - b).iter().fold(0.0f64, |m, z| m.max(z.norm())) / scale
    };
    Ok(SldCheck {
        max_rel_err_d: err(&drho_d, &rd, 1.0 / pair.a),
        max_rel_err_v: err(&drho_v, &rv, 1.0 / pair.b),
        drho_d,
        drho_v,
    })
}
