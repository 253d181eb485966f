//! Fixed-step simulation of the closed loop with time-varying delays, valve saturation and
//! step load disturbances.
//!
//! Explicit RK4. Delayed states are read from the stored trajectory by cubic Hermite
//! interpolation using the stored derivative at each grid point. Disturbance step times are
//! snapped to the grid and held constant over each step (`w` on `[t_k, t_k + h)` is the value
//! at `t_k`).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::linalg::{norm2, Mat};
use crate::lmi::{AreaController, ClosedLoopSystem, DecentralizedController};
use crate::model::{valve_nonlinearity, DelayPair, DelaySpec};

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    NonPositiveStep(f64),
    HorizonTooShort { horizon: f64, step: f64 },
    StepTooCoarse { from: usize, to: usize, step: f64, limit: f64 },
    MissingDelay { from: usize, to: usize },
    InvalidDelay { from: usize, to: usize, reason: &'static str },
    Dimension(&'static str),
    Scenario(&'static str),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NonPositiveStep(h) => write!(f, "step size {h} must be positive"),
            SimError::HorizonTooShort { horizon, step } => write!(f, "horizon {horizon} s is shorter than one step ({step} s)"),
            SimError::StepTooCoarse { from, to, step, limit } => write!(
                f,
                "step {step} s resolves delay ({from}, {to}) with fewer than 10 steps (need h <= {limit})"
            ),
            SimError::MissingDelay { from, to } => write!(f, "no delay entry for coupled pair ({from}, {to})"),
            SimError::InvalidDelay { from, to, reason } => write!(f, "delay ({from}, {to}): {reason}"),
            SimError::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            SimError::Scenario(s) => write!(f, "invalid disturbance scenario: {s}"),
        }
    }
}

impl core::error::Error for SimError {}

/// Per-area load steps `(time s, ΔP_d pu)` over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceScenario {
    pub steps: Vec<Vec<(f64, f64)>>,
    pub horizon: f64,
}

impl DisturbanceScenario {
    pub fn none(n_areas: usize, horizon: f64) -> Self {
        DisturbanceScenario { steps: vec![Vec::new(); n_areas], horizon }
    }

    /// The same step in every area.
    pub fn uniform_step(n_areas: usize, time: f64, magnitude: f64, horizon: f64) -> Self {
        DisturbanceScenario { steps: vec![vec![(time, magnitude)]; n_areas], horizon }
    }

    pub fn validate(&self, n_areas: usize) -> Result<(), SimError> {
        if self.steps.len() != n_areas {
            return Err(SimError::Scenario("one step list per area"));
        }
        if !(self.horizon > 0.0) {
            return Err(SimError::Scenario("horizon must be positive"));
        }
        for list in &self.steps {
            for &(t, m) in list {
                if !(0.0..=self.horizon).contains(&t) {
                    return Err(SimError::Scenario("step time outside [0, horizon]"));
                }
                if !m.is_finite() {
                    return Err(SimError::Scenario("non-finite step magnitude"));
                }
            }
        }
        Ok(())
    }

    /// First step time over all areas.
    pub fn first_step(&self) -> Option<f64> {
        self.steps.iter().flatten().map(|s| s.0).fold(None, |a, t| Some(a.map_or(t, |v: f64| v.min(t))))
    }

    pub fn is_zero(&self) -> bool {
        self.steps.iter().flatten().all(|s| s.1 == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub step: f64,
    /// Constant history before `t = 0`, also the initial state. Zero when `None`.
    pub initial_history: Option<Vec<f64>>,
    /// Euclidean norm at which the run is declared divergent.
    pub divergence_threshold: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { step: 1e-3, initial_history: None, divergence_threshold: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub step: f64,
    pub n_states: usize,
    pub n_areas: usize,
    pub times: Vec<f64>,
    /// Row-major, `n_states` per sample.
    pub states: Vec<f64>,
    /// `C_cl x`, `n_areas` per sample.
    pub outputs: Vec<f64>,
    pub controls: Vec<f64>,
    pub disturbances: Vec<f64>,
    /// Nonlinear term `h_i = μ_i / T_t,i` per area and sample.
    pub nonlinearity: Vec<f64>,
    /// Time at which the state left the divergence threshold or became non-finite.
    pub diverged_at: Option<f64>,
    pub label: String,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_states..(k + 1) * self.n_states]
    }

    pub fn output(&self, k: usize) -> &[f64] {
        &self.outputs[k * self.n_areas..(k + 1) * self.n_areas]
    }

    pub fn disturbance(&self, k: usize) -> &[f64] {
        &self.disturbances[k * self.n_areas..(k + 1) * self.n_areas]
    }

    pub fn nonlinear_term(&self, k: usize) -> &[f64] {
        &self.nonlinearity[k * self.n_areas..(k + 1) * self.n_areas]
    }

    /// One state coordinate over time.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.states[k * self.n_states + idx]).collect()
    }

    pub fn output_column(&self, area: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.outputs[k * self.n_areas + area]).collect()
    }

    pub fn disturbance_column(&self, area: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.disturbances[k * self.n_areas + area]).collect()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// `τ_ij(t)`; `None` when the pair is not listed.
pub fn eval_delay(delays: &DelaySpec, pair: (usize, usize), t: f64) -> Option<f64> {
    delays.get(pair.0, pair.1).map(|d| d.eval(t))
}

type Triplets = Vec<(usize, usize, f64)>;

fn triplets(m: &Mat) -> Triplets {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != 0.0 {
                out.push((r, c, v));
            }
        }
    }
    out
}

fn mul_add(t: &Triplets, x: &[f64], out: &mut [f64]) {
    for &(r, c, v) in t {
        out[r] += v * x[c];
    }
}

struct Rhs<'a> {
    sys: &'a ClosedLoopSystem,
    a: Triplets,
    delayed: Vec<(DelayPair, Triplets)>,
    e: Triplets,
}

impl Rhs<'_> {
    fn eval(&self, x: &[f64], w: &[f64], delayed_states: &[Vec<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        mul_add(&self.a, x, out);
        for (k, (_, m)) in self.delayed.iter().enumerate() {
            mul_add(m, &delayed_states[k], out);
        }
        mul_add(&self.e, w, out);
        for v in &self.sys.valves {
            out[v.row] += v.gain * valve_nonlinearity(x[v.state], v.lo, v.hi);
        }
    }
}

struct History<'a> {
    h: f64,
    states: &'a [f64],
    /// Right derivative at each grid point.
    derivs: &'a [f64],
    /// Left derivative; differs from `derivs` only where the disturbance steps.
    derivs_left: &'a [f64],
    n: usize,
    initial: &'a [f64],
}

impl History<'_> {
    /// Cubic Hermite value at time `s <= t_last`.
    fn at(&self, s: f64, out: &mut [f64]) {
        if s <= 0.0 {
            out.copy_from_slice(self.initial);
            return;
        }
        let pos = s / self.h;
        let last = self.states.len() / self.n - 1;
        let mut a = libm::floor(pos) as usize;
        if a >= last {
            a = last.saturating_sub(1);
        }
        let th = pos - a as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th),
            th * (1.0 - th) * (1.0 - th),
            th * th * (3.0 - 2.0 * th),
            th * th * (th - 1.0),
        );
        let n = self.n;
        for i in 0..n {
            let xa = self.states[a * n + i];
            let xb = self.states[(a + 1) * n + i];
            let fa = self.derivs[a * n + i];
            let fb = self.derivs_left[(a + 1) * n + i];
            out[i] = h00 * xa + h10 * self.h * fa + h01 * xb + h11 * self.h * fb;
        }
    }
}

/// Times at which a delayed argument `t - τ(t)` crosses a point where the solution has a
/// derivative jump (start of the run and disturbance steps), propagated three levels deep.
fn breakpoints(delayed: &[(DelayPair, Triplets)], step_index: &[Vec<(usize, f64)>], h: f64, horizon: f64) -> Vec<f64> {
    let mut pairs: Vec<DelayPair> = Vec::new();
    for (d, _) in delayed {
        if !pairs.contains(d) {
            pairs.push(*d);
        }
    }
    if pairs.is_empty() {
        return Vec::new();
    }
    let mut level: Vec<f64> = vec![0.0];
    level.extend(step_index.iter().flatten().map(|&(k, _)| k as f64 * h));
    let mut out = Vec::new();
    for _ in 0..3 {
        let mut next = Vec::new();
        for &s in &level {
            for d in &pairs {
                // t - τ(t) is increasing, so bisect on [s + τ_min, s + τ_max]
                let (mut lo, mut hi) = (s + d.base - d.amplitude.abs(), s + d.max());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid - d.eval(mid) < s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t = 0.5 * (lo + hi);
                if t < horizon {
                    next.push(t);
                }
            }
        }
        next.sort_by(f64::total_cmp);
        next.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        out.extend_from_slice(&next);
        level = next;
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    // points on the grid need no split
    out.retain(|t| {
        let r = t / h - libm::round(t / h);
        r.abs() > 1e-9
    });
    out
}

pub fn simulate(
    sys: &ClosedLoopSystem,
    delays: &DelaySpec,
    dist: &DisturbanceScenario,
    opts: &SimulationOptions,
) -> Result<SimulationTrace, SimError> {
    let h = opts.step;
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::NonPositiveStep(h));
    }
    let n_areas = sys.n_areas();
    dist.validate(n_areas)?;
    if dist.horizon < h {
        return Err(SimError::HorizonTooShort { horizon: dist.horizon, step: h });
    }
    let n = sys.dim();
    let initial = match &opts.initial_history {
        Some(v) if v.len() != n => return Err(SimError::Dimension("initial history length")),
        Some(v) => v.clone(),
        None => vec![0.0; n],
    };

    // Delay-free runs fold every delayed block into the state matrix.
    let mut a = sys.a_clp.clone();
    let mut delayed = Vec::new();
    for (&(i, j), m) in &sys.a_dclp {
        if m.iter().all(|v| *v == 0.0) {
            continue;
        }
        if delays.is_empty() {
            a += m;
            continue;
        }
        let d = *delays.get(i, j).ok_or(SimError::MissingDelay { from: i, to: j })?;
        d.validate().map_err(|reason| SimError::InvalidDelay { from: i, to: j, reason })?;
        let limit = (d.base - d.amplitude) / 10.0;
        if h > limit * (1.0 + 1e-12) {
            return Err(SimError::StepTooCoarse { from: i, to: j, step: h, limit });
        }
        delayed.push((d, triplets(m)));
    }
    let rhs = Rhs { sys, a: triplets(&a), delayed, e: triplets(&sys.e_clp) };

    let steps = libm::round(dist.horizon / h) as usize;
    let step_index: Vec<Vec<(usize, f64)>> = dist
        .steps
        .iter()
        .map(|l| l.iter().map(|&(t, m)| (libm::round(t / h) as usize, m)).collect())
        .collect();
    let w_at = |k: usize, out: &mut [f64]| {
        for (i, l) in step_index.iter().enumerate() {
            out[i] = l.iter().filter(|(ks, _)| k >= *ks).map(|(_, m)| m).sum();
        }
    };

    let mut trace = SimulationTrace {
        step: h,
        n_states: n,
        n_areas,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity((steps + 1) * n),
        outputs: Vec::with_capacity((steps + 1) * n_areas),
        controls: Vec::with_capacity((steps + 1) * n_areas),
        disturbances: Vec::with_capacity((steps + 1) * n_areas),
        nonlinearity: Vec::with_capacity((steps + 1) * n_areas),
        diverged_at: None,
        label: String::new(),
    };
    let mut derivs: Vec<f64> = Vec::with_capacity((steps + 1) * n);
    let mut derivs_left: Vec<f64> = Vec::with_capacity((steps + 1) * n);
    let breaks = breakpoints(&rhs.delayed, &step_index, h, dist.horizon);
    let mut next_break = 0;

    let nd = rhs.delayed.len();
    let mut dstates = vec![vec![0.0; n]; nd];
    let mut x = initial.clone();
    let mut w = vec![0.0; n_areas];
    let mut w_prev = vec![0.0; n_areas];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut left = vec![0.0; n];

    let record = |trace: &mut SimulationTrace, t: f64, x: &[f64], w: &[f64]| {
        trace.times.push(t);
        trace.states.extend_from_slice(x);
        for i in 0..n_areas {
            let y: f64 = (0..n).map(|c| sys.c_cl[(i, c)] * x[c]).sum();
            let u: f64 = (0..n).map(|c| sys.control_rows[(i, c)] * x[c]).sum();
            trace.outputs.push(y);
            trace.controls.push(u);
            trace.disturbances.push(w[i]);
            let v = &sys.valves[i];
            trace.nonlinearity.push(v.gain * valve_nonlinearity(x[v.state], v.lo, v.hi));
        }
    };

    for k in 0..=steps {
        let t = k as f64 * h;
        w_prev.copy_from_slice(&w);
        w_at(k, &mut w);
        // derivative at the grid point (first RK stage), stored for interpolation
        {
            let hist = History { h, states: &trace.states, derivs: &derivs, derivs_left: &derivs_left, n, initial: &initial };
            // the current point is not yet stored; delayed times are at least 10 steps back
            if k > 0 || nd == 0 {
                for (d, (pair, _)) in rhs.delayed.iter().enumerate() {
                    hist.at(t - pair.eval(t), &mut dstates[d]);
                }
            } else {
                for ds in dstates.iter_mut() {
                    ds.copy_from_slice(&initial);
                }
            }
        }
        rhs.eval(&x, &w, &dstates, &mut k1);
        record(&mut trace, t, &x, &w);
        derivs.extend_from_slice(&k1);
        if k > 0 && w != w_prev {
            rhs.eval(&x, &w_prev, &dstates, &mut left);
            derivs_left.extend_from_slice(&left);
        } else {
            derivs_left.extend_from_slice(&k1);
        }
        let norm = libm::sqrt(x.iter().map(|v| v * v).sum::<f64>());
        if !norm.is_finite() || norm > opts.divergence_threshold || k1.iter().any(|v| !v.is_finite()) {
            trace.diverged_at = Some(t);
            break;
        }
        if k == steps {
            break;
        }

        // split the step at kinks of the delayed arguments falling strictly inside it
        let t_end = t + h;
        while next_break < breaks.len() && breaks[next_break] <= t + 1e-9 * h {
            next_break += 1;
        }
        let mut t0 = t;
        loop {
            let t1 = match breaks.get(next_break) {
                Some(&b) if b < t_end - 1e-9 * h => {
                    next_break += 1;
                    b
                }
                _ => t_end,
            };
            let dt = t1 - t0;
            let hist = History { h, states: &trace.states, derivs: &derivs, derivs_left: &derivs_left, n, initial: &initial };
            let mut stage = |ts: f64, base: &[f64], slope: &[f64], c: f64, out: &mut [f64]| {
                for i in 0..n {
                    tmp[i] = base[i] + c * slope[i];
                }
                for (d, (pair, _)) in rhs.delayed.iter().enumerate() {
                    hist.at(ts - pair.eval(ts), &mut dstates[d]);
                }
                rhs.eval(&tmp, &w, &dstates, out);
            };
            if t0 > t {
                stage(t0, &x, &k4, 0.0, &mut k1);
            }
            stage(t0 + 0.5 * dt, &x, &k1, 0.5 * dt, &mut k2);
            stage(t0 + 0.5 * dt, &x, &k2, 0.5 * dt, &mut k3);
            stage(t1, &x, &k3, dt, &mut k4);
            for i in 0..n {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if t1 >= t_end {
                break;
            }
            t0 = t1;
        }
    }
    Ok(trace)
}

/// Conventional integral control on the area control error: `A_c = 0, B_c = 1, C_c = -k_i, D_c = 0`.
/// Intended for the plant without the integrator state, whose output is the area control error.
pub fn baseline_integral_controller(k_i: f64, n_areas: usize) -> DecentralizedController {
    let area = AreaController {
        a_c: Mat::zeros(1, 1),
        b_c: Mat::from_element(1, 1, 1.0),
        c_c: Mat::from_element(1, 1, -k_i),
        d_c: Mat::zeros(1, 1),
    };
    DecentralizedController::new(vec![area; n_areas], Vec::new(), Vec::new(), 0.0)
}

/// Scale every controller matrix by `1 + fraction`.
pub fn apply_gain_perturbation(ctrl: &DecentralizedController, fraction: f64) -> Result<DecentralizedController, SimError> {
    if !(fraction > -1.0) {
        return Err(SimError::Scenario("gain perturbation fraction must exceed -1"));
    }
    let mut out = ctrl.clone();
    out.areas = ctrl.areas.iter().map(|a| a.scaled(1.0 + fraction)).collect();
    Ok(out)
}

/// Additive norm-bounded perturbation: each matrix `M` becomes `M + δ_M·F` with a random `F`,
/// `‖F‖₂ = 1`.
pub fn random_gain_perturbation<R: Rng>(
    ctrl: &DecentralizedController,
    bounds: &crate::lmi::PerturbationBounds,
    rng: &mut R,
) -> DecentralizedController {
    let mut draw = |m: &Mat, delta: f64| -> Mat {
        if m.is_empty() || delta == 0.0 {
            return m.clone();
        }
        let f = Mat::from_fn(m.nrows(), m.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let s = norm2(&f);
        if s == 0.0 {
            m.clone()
        } else {
            m + f * (delta / s)
        }
    };
    let mut out = ctrl.clone();
    out.areas = ctrl
        .areas
        .iter()
        .map(|a| AreaController {
            a_c: draw(&a.a_c, bounds.delta_ac),
            b_c: draw(&a.b_c, bounds.delta_bc),
            c_c: draw(&a.c_c, bounds.delta_cc),
            d_c: draw(&a.d_c, bounds.delta_dc),
        })
        .collect();
    out
}
