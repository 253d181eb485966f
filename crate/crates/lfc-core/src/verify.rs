//! Post-hoc checks on solved certificates and simulated traces.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::Schur;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dde::{random_gain_perturbation, SimulationTrace};
use crate::linalg::{zeros, Mat};
use crate::lmi::{
    closed_loop_matrices, conserved_directions, name_g2, name_r, substituted_certificate, ClosedLoopSystem,
    DecentralizedController, DelayWeight, LmiError, LmiProblem, LmiSolution,
};
use crate::model::IDX_FREQ;

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyError {
    Eigen,
    UndefinedRatio { area: usize },
    NotOptimal,
    InvalidBand(f64),
    Diverged(f64),
    Dimension(&'static str),
    Lmi(LmiError),
}

impl fmt::Display for VerifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyError::Eigen => write!(f, "eigenvalue iteration did not converge"),
            VerifyError::UndefinedRatio { area } => write!(f, "disturbance of area {area} is identically zero"),
            VerifyError::NotOptimal => write!(f, "solution is not optimal"),
            VerifyError::InvalidBand(b) => write!(f, "band {b} must be positive"),
            VerifyError::Diverged(t) => write!(f, "trace diverged at t = {t} s"),
            VerifyError::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            VerifyError::Lmi(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for VerifyError {}

impl From<LmiError> for VerifyError {
    fn from(e: LmiError) -> Self {
        VerifyError::Lmi(e)
    }
}

/// Real parts of the eigenvalues of `A_clp + Σ A_dclp`, largest first.
pub fn delay_free_spectrum(sys: &ClosedLoopSystem) -> Result<Vec<f64>, VerifyError> {
    let a = sys.frozen();
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a, f64::EPSILON, 10_000).ok_or(VerifyError::Eigen)?;
    let mut re: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.re).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    Ok(re)
}

pub fn spectral_abscissa(sys: &ClosedLoopSystem) -> Result<f64, VerifyError> {
    Ok(delay_free_spectrum(sys)?.first().copied().unwrap_or(f64::NEG_INFINITY))
}

fn trapezoid(h: f64, f: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = f.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let inner: f64 = v[1..v.len() - 1].iter().sum();
    h * (inner + 0.5 * (v[0] + v[v.len() - 1]))
}

/// Per-area `(∫yᵢ² dt, ∫wᵢ² dt)` by the trapezoid rule over the whole trace.
pub fn energy_integrals(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    (0..trace.n_areas)
        .map(|i| {
            let y = trapezoid(trace.step, trace.output_column(i).into_iter().map(|v| v * v));
            let w = trapezoid(trace.step, trace.disturbance_column(i).into_iter().map(|v| v * v));
            (y, w)
        })
        .collect()
}

/// `∫yᵢ²/∫wᵢ²` per area.
pub fn energy_ratio(trace: &SimulationTrace) -> Result<Vec<f64>, VerifyError> {
    energy_integrals(trace)
        .into_iter()
        .enumerate()
        .map(|(i, (y, w))| if w > 0.0 { Ok(y / w) } else { Err(VerifyError::UndefinedRatio { area: i }) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    State(usize),
    Output(usize),
}

impl Signal {
    /// `Δf` of an area in closed-loop coordinates.
    pub fn frequency(sys: &ClosedLoopSystem, area: usize) -> Self {
        Signal::State(sys.offsets[area].0 + IDX_FREQ)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlingMetrics {
    /// Time after the first disturbance step at which the signal last re-enters the band; `None`
    /// if it is still outside at the end of the trace.
    pub settling_time: Option<f64>,
    /// Largest `|signal|` from the first step on.
    pub overshoot: f64,
}

pub fn settling_metrics(trace: &SimulationTrace, band: f64, signal: Signal) -> Result<SettlingMetrics, VerifyError> {
    if !(band > 0.0) {
        return Err(VerifyError::InvalidBand(band));
    }
    if let Some(t) = trace.diverged_at {
        return Err(VerifyError::Diverged(t));
    }
    let s = match signal {
        Signal::State(i) if i < trace.n_states => trace.column(i),
        Signal::Output(i) if i < trace.n_areas => trace.output_column(i),
        _ => return Err(VerifyError::Dimension("signal index")),
    };
    let k0 = (0..trace.len()).find(|&k| trace.disturbance(k).iter().any(|v| *v != 0.0)).unwrap_or(0);
    let t0 = trace.times.get(k0).copied().unwrap_or(0.0);
    let overshoot = s[k0..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let last_out = (k0..s.len()).rev().find(|&k| s[k].abs() > band);
    let settling_time = match last_out {
        None => Some(0.0),
        Some(k) if k + 1 < s.len() => Some(trace.times[k + 1] - t0),
        Some(_) => None,
    };
    Ok(SettlingMetrics { settling_time, overshoot })
}

/// `xᵀH̃ᵀΓ1⁻¹H̃x`.
fn bound_value(sys: &ClosedLoopSystem, gamma1: &[f64], x: &[f64]) -> f64 {
    (0..sys.n_areas())
        .map(|i| {
            let hx: f64 = (0..sys.dim()).map(|c| sys.h_tilde[(i, c)] * x[c]).sum();
            hx * hx / gamma1[i]
        })
        .sum()
}

/// Samples at which `hᵀh > xᵀH̃ᵀΓ1⁻¹H̃x`.
pub fn bound_violations(trace: &SimulationTrace, sys: &ClosedLoopSystem, gamma1: &[f64]) -> Result<usize, VerifyError> {
    if gamma1.len() != sys.n_areas() || trace.n_states != sys.dim() {
        return Err(VerifyError::Dimension("trace, system and γ1"));
    }
    Ok((0..trace.len())
        .filter(|&k| {
            let hh: f64 = trace.nonlinear_term(k).iter().map(|v| v * v).sum();
            let b = bound_value(sys, gamma1, trace.state(k));
            hh > b * (1.0 + 1e-12) + 1e-300
        })
        .count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateAudit {
    /// (a) `λ_max` of `Π` at the solution.
    pub lambda_max: f64,
    /// (b) `λ_max` with the recovered controller substituted back.
    pub substituted: f64,
    /// (c) largest sampled `V̇ + yᵀy − wᵀΓ2w` with `hᵀh = xᵀH̃ᵀΓ1⁻¹H̃x`.
    pub sampled_max: f64,
    /// (c) with `hᵀh = s1·xᵀH̃ᵀΓ1⁻¹H̃x`, the class covered by the multiplier.
    pub sampled_max_certified: f64,
    pub samples: usize,
}

impl CertificateAudit {
    pub fn passes(&self, margin: f64, tol: f64) -> bool {
        self.lambda_max <= -margin + tol && self.substituted <= -margin + tol && self.sampled_max < 0.0
    }
}

pub fn audit_certificate(
    solution: &LmiSolution,
    problem: &LmiProblem,
    ctrl: &DecentralizedController,
    samples: usize,
    seed: u64,
) -> Result<CertificateAudit, VerifyError> {
    if !solution.is_optimal() {
        return Err(VerifyError::NotOptimal);
    }
    audit_assignment(&solution.x, problem, ctrl, samples, seed)
}

/// Same audit for a stored variable assignment, e.g. one read back from a controller file.
pub fn audit_assignment(
    x: &[f64],
    problem: &LmiProblem,
    ctrl: &DecentralizedController,
    samples: usize,
    seed: u64,
) -> Result<CertificateAudit, VerifyError> {
    if x.len() != problem.num_vars() {
        return Err(VerifyError::Dimension("assignment length differs from the problem"));
    }
    let lambda_max = crate::lmi::certificate_residual(x, problem);
    let substituted = substituted_certificate(x, problem, ctrl)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = sample_dissipation(x, problem, ctrl, samples, &mut rng)?;
    Ok(CertificateAudit { lambda_max, substituted, sampled_max: a, sampled_max_certified: b, samples })
}

/// Largest `V̇ + yᵀy − wᵀΓ2w` over random admissible points, evaluated from the closed-loop
/// dynamics rather than from `Π`. Returns the maxima for the two nonlinearity classes.
pub fn sample_dissipation<R: Rng>(
    x_sol: &[f64],
    problem: &LmiProblem,
    ctrl: &DecentralizedController,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64), VerifyError> {
    let spec = &problem.spec;
    let nominal = closed_loop_matrices(&spec.plant, ctrl)?;
    let n = nominal.dim();
    if n != spec.cl_dim {
        return Err(VerifyError::Dimension("controller orders differ from the problem"));
    }
    let n_areas = nominal.n_areas();
    let p = spec.lyapunov(x_sol)?;
    let gamma2: Vec<f64> = (0..n_areas).map(|i| spec.layout.scalar(x_sol, &name_g2(i))).collect::<Result<_, _>>()?;
    let g = spec.injection_matrix();
    let e = &nominal.e_clp;
    let l = if problem.projection.is_some() { conserved_directions(&spec.plant, &spec.cl_offsets, n) } else { zeros(n, 0) };

    // delay channels with their Lyapunov-Krasovskii weights
    struct Channel {
        ad: Mat,
        r: Mat,
        rate: f64,
    }
    let mut channels = Vec::new();
    if spec.variant.delayed {
        for &((i, j), rate) in &spec.delay_pairs {
            let r = match spec.options.delay_weight {
                DelayWeight::Full => spec.layout.get(x_sol, &name_r(i, j))?,
                DelayWeight::FrequencyChannel => {
                    let mut m = zeros(n, n);
                    let f = spec.cl_offsets[j].0 + IDX_FREQ;
                    m[(f, f)] = spec.layout.scalar(x_sol, &name_r(i, j))?;
                    m
                }
            };
            channels.push(Channel { ad: nominal.a_dclp[&(i, j)].clone(), r, rate });
        }
    }

    let perturbed = spec.variant.perturbed && !spec.bounds.is_zero();
    let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let sys = if perturbed { closed_loop_matrices(&spec.plant, &random_gain_perturbation(ctrl, &spec.bounds, rng))? } else { nominal.clone() };
        let a = if spec.variant.delayed { sys.a_clp.clone() } else { sys.frozen() };

        let mut x = Mat::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        if l.ncols() > 0 {
            x -= &l * (l.transpose() * &x);
        }
        let w = Mat::from_fn(n_areas, 1, |_, _| rng.random_range(-0.05..0.05));
        let dir = Mat::from_fn(g.ncols(), 1, |_, _| rng.random_range(-1.0..1.0));
        let dn = dir.norm();
        let bound = bound_value(&sys, &ctrl.gamma1, x.as_slice());

        let mut flow = &a * &x + e * &w;
        let mut lk = 0.0;
        for c in &channels {
            let xd = Mat::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            flow += &c.ad * &xd;
            lk += (x.transpose() * &c.r * &x)[(0, 0)] - (1.0 - c.rate) * (xd.transpose() * &c.r * &xd)[(0, 0)];
        }
        let y = &sys.c_cl * &x;
        let yy = y.norm_squared();
        let ww: f64 = (0..n_areas).map(|i| gamma2[i] * w[(i, 0)] * w[(i, 0)]).sum();
        let px = &p * &x;
        let base = 2.0 * (px.transpose() * &flow)[(0, 0)] + lk + yy - ww;
        let hp = 2.0 * (px.transpose() * &g * &dir)[(0, 0)];
        for (scale, slot) in [(1.0, &mut worst.0), (ctrl.s1, &mut worst.1)] {
            let radius = if dn > 0.0 { libm::sqrt(scale * bound) / dn } else { 0.0 };
            let v = base + hp * radius;
            if v > *slot {
                *slot = v;
            }
        }
    }
    Ok(worst)
}

/// Summary of every check for one controller and scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub label: String,
    pub certificate: Option<CertificateAudit>,
    pub robustness_degree: Vec<f64>,
    pub certified_degree: Vec<f64>,
    pub attenuation_level: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub spectral_abscissa: f64,
    /// `None` where the disturbance of the area is identically zero.
    pub energy_ratio: Vec<Option<f64>>,
    pub settling_time: Vec<Option<f64>>,
    pub overshoot: Vec<f64>,
    pub bound_violations: Option<usize>,
    pub diverged_at: Option<f64>,
    pub controller_hash: String,
    pub scenario_hash: String,
}

/// Trace-based fields of the report. Settling is measured on `Δf` of each area.
pub fn trace_report(
    trace: &SimulationTrace,
    sys: &ClosedLoopSystem,
    ctrl: &DecentralizedController,
    band: f64,
) -> Result<VerificationReport, VerifyError> {
    let n_areas = sys.n_areas();
    let mut r = VerificationReport {
        label: trace.label.clone(),
        robustness_degree: ctrl.robustness_degree.clone(),
        certified_degree: if ctrl.gamma1.is_empty() { Vec::new() } else { ctrl.certified_degree() },
        attenuation_level: ctrl.attenuation_level.clone(),
        gamma2: ctrl.gamma2.clone(),
        spectral_abscissa: spectral_abscissa(sys)?,
        diverged_at: trace.diverged_at,
        ..VerificationReport::default()
    };
    r.energy_ratio = energy_integrals(trace).into_iter().map(|(y, w)| if w > 0.0 { Some(y / w) } else { None }).collect();
    if trace.diverged() {
        r.settling_time = vec![None; n_areas];
        r.overshoot = vec![f64::NAN; n_areas];
    } else {
        for i in 0..n_areas {
            let m = settling_metrics(trace, band, Signal::frequency(sys, i))?;
            r.settling_time.push(m.settling_time);
            r.overshoot.push(m.overshoot);
        }
    }
    if ctrl.gamma1.len() == n_areas && !sys.valves.is_empty() {
        r.bound_violations = Some(bound_violations(trace, sys, &ctrl.gamma1)?);
    }
    Ok(r)
}
