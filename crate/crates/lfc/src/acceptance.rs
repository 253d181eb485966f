//! Acceptance criteria evaluated on the shipped scenarios.

use std::time::Duration;

use lfc_core::dde::{simulate, DisturbanceScenario, SimulationOptions, SimulationTrace};
use lfc_core::linalg::Mat;
use lfc_core::lmi::{name_g1, name_s, LmiProblem};
use lfc_core::model::IDX_TIE;
use lfc_core::sdp::{smat, solve, svec, SdpStandardForm, SolveStatus, SolverOptions, SymSparse};
use lfc_core::verify::{energy_integrals, settling_metrics, Signal};

use crate::pipeline::{RunKind, ScenarioRun, SimRun};

pub const NOMINAL: &str = "two_area_nominal";
pub const PERTURBED: &str = "two_area_perturbed";
pub const DELAY: &str = "two_area_delay";
pub const THREE_AREA: &str = "three_area_delay";

pub const GAMMA_MAX: f64 = 1.0;
pub const CERTIFICATE_TOL: f64 = 1e-8;
pub const NOMINAL_SYNTH_BUDGET: Duration = Duration::from_secs(10);
pub const NOMINAL_SIM_BUDGET: Duration = Duration::from_secs(5);
pub const THREE_AREA_BUDGET: Duration = Duration::from_secs(60);
pub const TIGHT_BAND: f64 = 1e-3;
pub const LOOSE_BAND: f64 = 1e-2;
pub const NOMINAL_SETTLE_S: f64 = 20.0;
pub const DELAY_SETTLE_S: f64 = 40.0;
pub const ENERGY_SLACK_PER_S: f64 = 1e-6;
pub const SDP_TOL: f64 = 1e-6;
pub const SVEC_TOL: f64 = 1e-14;
pub const AFFINITY_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const SCHUR_TOL: f64 = 1e-8;
pub const MIN_ORDER: f64 = 3.5;
pub const RECOVERY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!("{} criterion {} ({}): {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title, self.detail)
    }
}

struct Check {
    pass: bool,
    parts: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { pass: true, parts: Vec::new() }
    }

    fn require(&mut self, ok: bool, text: String) {
        self.pass &= ok;
        self.parts.push(if ok { text } else { format!("{text} [fails]") });
    }

    fn fail(&mut self, text: String) {
        self.require(false, text);
    }

    fn finish(self, id: u8, title: &'static str) -> CriterionResult {
        CriterionResult { id, title, pass: self.pass, detail: self.parts.join("; ") }
    }
}

fn find<'a>(runs: &'a [ScenarioRun], name: &str) -> Option<&'a ScenarioRun> {
    runs.iter().find(|r| r.scenario.name() == name)
}

fn designed(r: &ScenarioRun) -> Option<&SimRun> {
    r.find(RunKind::Designed).map(|(s, _)| s)
}

fn fmt_list(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", s.join(", "))
}

/// Status, γ bounds and certificate for a scenario whose synthesis must be optimal.
fn synthesis_checks(c: &mut Check, r: &ScenarioRun, gamma2_too: bool) -> bool {
    let s = &r.synthesis;
    if !s.result.is_optimal() {
        c.fail(format!("synthesis status {} after {} solves", s.result.status, s.result.solves));
        return false;
    }
    let ctrl = s.controller().expect("optimal result has a controller");
    c.require(ctrl.gamma1.iter().all(|g| *g <= GAMMA_MAX), format!("γ1 = {}", fmt_list(&ctrl.gamma1)));
    if gamma2_too {
        c.require(ctrl.gamma2.iter().all(|g| *g <= GAMMA_MAX), format!("γ2 = {}", fmt_list(&ctrl.gamma2)));
    }
    let margin = r.scenario.config.synthesis.margin;
    let cert = s.result.solution.as_ref().map_or(f64::INFINITY, |x| x.certificate);
    c.require(cert <= -margin + CERTIFICATE_TOL, format!("λ_max(Π) = {cert:.3e}"));
    true
}

fn settles(c: &mut Check, run: &SimRun, band: f64, within: Option<f64>, what: &str) {
    if let Some(t) = run.trace.diverged_at {
        c.fail(format!("{what}: diverged at t = {t:.2} s"));
        return;
    }
    let mut signals: Vec<(String, Signal)> =
        (0..run.sys.n_areas()).map(|i| (format!("Δf{}", i + 1), Signal::frequency(&run.sys, i))).collect();
    if what.contains("tie") {
        signals = (0..run.sys.n_areas())
            .map(|i| (format!("ΔP_tie{}", i + 1), Signal::State(run.sys.offsets[i].0 + IDX_TIE)))
            .collect();
    }
    for (name, sig) in signals {
        match settling_metrics(&run.trace, band, sig) {
            Ok(m) => {
                let ok = match (m.settling_time, within) {
                    (Some(t), Some(lim)) => t <= lim,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                let t = m.settling_time.map_or("never".to_string(), |t| format!("{t:.2} s"));
                c.require(ok, format!("{name} within {band:.0e} after {t}"));
            }
            Err(e) => c.fail(format!("{name}: {e}")),
        }
    }
}

fn missing(id: u8, title: &'static str, name: &str) -> CriterionResult {
    CriterionResult { id, title, pass: false, detail: format!("scenario {name} missing or failed to run") }
}

fn criterion_1(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "two-area nominal synthesis";
    let Some(r) = find(runs, NOMINAL) else { return missing(1, title, NOMINAL) };
    let mut c = Check::new();
    synthesis_checks(&mut c, r, false);
    let t = r.synthesis.elapsed;
    c.require(t < NOMINAL_SYNTH_BUDGET, format!("{:.2} s", t.as_secs_f64()));
    c.finish(1, title)
}

fn criterion_2(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "two-area nominal load step";
    let Some(r) = find(runs, NOMINAL) else { return missing(2, title, NOMINAL) };
    let mut c = Check::new();
    match designed(r) {
        Some(run) => {
            settles(&mut c, run, TIGHT_BAND, Some(NOMINAL_SETTLE_S), "frequency");
            settles(&mut c, run, TIGHT_BAND, None, "tie");
            c.require(run.elapsed < NOMINAL_SIM_BUDGET, format!("{:.2} s", run.elapsed.as_secs_f64()));
        }
        None => c.fail("no synthesized controller".into()),
    }
    c.finish(2, title)
}

fn criterion_3(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "perturbed plant and gains";
    let Some(r) = find(runs, PERTURBED) else { return missing(3, title, PERTURBED) };
    let mut c = Check::new();
    match designed(r) {
        Some(run) => settles(&mut c, run, LOOSE_BAND, None, "frequency"),
        None => c.fail(format!("synthesis status {}", r.synthesis.result.status)),
    }
    match r.find(RunKind::Baseline) {
        Some((run, rep)) => c.require(
            run.trace.diverged(),
            format!(
                "baseline {} (frozen-delay spectral abscissa {:+.3})",
                run.trace.diverged_at.map_or("not divergent".to_string(), |t| format!("divergent at {t:.2} s")),
                rep.spectral_abscissa
            ),
        ),
        None => c.fail("no baseline run configured".into()),
    }
    c.finish(3, title)
}

fn criterion_4(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "two-area time-varying delay";
    let Some(r) = find(runs, DELAY) else { return missing(4, title, DELAY) };
    let mut c = Check::new();
    if synthesis_checks(&mut c, r, false) {
        match designed(r) {
            Some(run) => settles(&mut c, run, TIGHT_BAND, Some(DELAY_SETTLE_S), "frequency"),
            None => c.fail("no designed run".into()),
        }
    }
    c.finish(4, title)
}

fn criterion_5(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "three-area time-varying delay";
    let Some(r) = find(runs, THREE_AREA) else { return missing(5, title, THREE_AREA) };
    let mut c = Check::new();
    let mut total = r.synthesis.elapsed;
    if synthesis_checks(&mut c, r, true) {
        match designed(r) {
            Some(run) => {
                settles(&mut c, run, TIGHT_BAND, None, "frequency");
                total += run.elapsed;
            }
            None => c.fail("no designed run".into()),
        }
    }
    c.require(total < THREE_AREA_BUDGET, format!("{:.2} s", total.as_secs_f64()));
    c.finish(5, title)
}

fn energy_check(c: &mut Check, r: &ScenarioRun) {
    let Some(run) = designed(r) else {
        c.fail(format!("{}: no designed trace", r.scenario.name()));
        return;
    };
    if run.trace.diverged() {
        c.fail(format!("{}: trace diverged", r.scenario.name()));
        return;
    }
    let horizon = run.trace.times.last().copied().unwrap_or(0.0);
    let slack = ENERGY_SLACK_PER_S * horizon;
    for (i, (yy, ww)) in energy_integrals(&run.trace).into_iter().enumerate() {
        let g2 = run.ctrl.gamma2[i];
        c.require(
            yy <= g2 * ww + slack,
            format!("{} area {}: ∫y² = {yy:.3e}, γ2·∫w² = {:.3e}", r.scenario.name(), i + 1, g2 * ww),
        );
    }
}

fn criterion_6(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "energy inequality on traces";
    let mut c = Check::new();
    for name in [NOMINAL, DELAY] {
        match find(runs, name) {
            Some(r) => energy_check(&mut c, r),
            None => c.fail(format!("scenario {name} missing")),
        }
    }
    c.finish(6, title)
}

fn sdp_unit_optimum() -> (bool, String) {
    // min x subject to [[x, 1], [1, x]] ⪰ 0
    let form = SdpStandardForm {
        blocks: vec![2],
        block_names: vec!["g".into()],
        cost: vec![1.0],
        constant: vec![Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        coeffs: vec![vec![(0, SymSparse { dim: 2, entries: vec![(0, 0, 1.0), (1, 1, 1.0)] })]],
    };
    match solve(&form, &SolverOptions::default()) {
        Ok(o) if o.status == SolveStatus::Optimal => {
            let err = (o.x[0] - 1.0).abs();
            (err <= SDP_TOL, format!("SDP x* = 1 error {err:.1e}"))
        }
        Ok(o) => (false, format!("SDP x* = 1 status {}", o.status)),
        Err(e) => (false, format!("SDP x* = 1: {e}")),
    }
}

fn svec_round_trip() -> (bool, String) {
    let n = 7;
    let mut m = Mat::from_fn(n, n, |i, j| (1.3 * i as f64 + 0.7 * j as f64).sin() * 10.0);
    m = (&m + m.transpose()) / 2.0;
    let err = (&smat(&svec(&m), n) - &m).amax();
    (err <= SVEC_TOL, format!("svec round trip {err:.1e}"))
}

/// Deterministic assignment in the problem's layout.
fn probe_point(p: &LmiProblem, phase: f64) -> Vec<f64> {
    (0..p.num_vars()).map(|k| (phase + 0.37 * k as f64).sin()).collect()
}

fn pi_affinity(p: &LmiProblem) -> Vec<(bool, String)> {
    let (a, b) = (probe_point(p, 0.1), probe_point(p, 2.3));
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.25 * x + 0.75 * y).collect();
    let (pa, pb, pm) = match (p.spec.pi(&a), p.spec.pi(&b), p.spec.pi(&mid)) {
        (Ok(x), Ok(y), Ok(z)) => (x, y, z),
        _ => return vec![(false, "Π assembly failed".into())],
    };
    let scale = pa.amax().max(pb.amax()).max(1.0);
    let aff = (&pm - (&pa * 0.25 + &pb * 0.75)).amax() / scale;
    let sym = [&pa, &pb, &pm].iter().map(|m| (*m - m.transpose()).amax()).fold(0.0, f64::max) / scale;
    vec![(aff <= AFFINITY_TOL, format!("Π affinity {aff:.1e}")), (sym <= SYMMETRY_TOL, format!("Π symmetry {sym:.1e}"))]
}

/// Eliminating the nonlinearity columns of Π at the solution reproduces the quadratic terms they encode.
fn schur_consistency(p: &LmiProblem, x: &[f64]) -> (bool, String) {
    let spec = &p.spec;
    let run = || -> Option<f64> {
        let pi = spec.pi(x).ok()?;
        let dim = spec.pi_layout.dim();
        let elim: Vec<usize> = ["h", "bound"]
            .iter()
            .flat_map(|g| {
                let o = spec.pi_layout.offset(g).unwrap_or(0);
                o..o + spec.pi_layout.width(g).unwrap_or(0)
            })
            .collect();
        if elim.is_empty() {
            return None;
        }
        let keep: Vec<usize> = (0..dim).filter(|k| !elim.contains(k)).collect();
        let sub = |r: &[usize], c: &[usize]| Mat::from_fn(r.len(), c.len(), |i, j| pi[(r[i], c[j])]);
        let schur = sub(&keep, &keep) - sub(&keep, &elim) * sub(&elim, &elim).try_inverse()? * sub(&elim, &keep);
        let lyap = spec.lyapunov(x).ok()?;
        let g = spec.injection_matrix();
        let h = spec.bound_matrix();
        let s1 = spec.layout.scalar(x, &name_s(1)).ok()?;
        let na = spec.plant.n_areas;
        let mut g1 = Mat::zeros(na, na);
        for i in 0..na {
            g1[(i, i)] = 1.0 / spec.layout.scalar(x, &name_g1(i)).ok()?;
        }
        let extra = &lyap * &g * g.transpose() * &lyap / s1 + h.transpose() * g1 * &h * (s1 * s1);
        let mut expected = sub(&keep, &keep);
        let n = spec.cl_dim;
        for i in 0..n {
            for j in 0..n {
                expected[(i, j)] += extra[(i, j)];
            }
        }
        Some((&schur - &expected).amax() / expected.amax().max(1.0))
    };
    match run() {
        Some(err) => (err <= SCHUR_TOL, format!("Schur reconstruction {err:.1e}")),
        None => (false, "Schur reconstruction could not be formed".into()),
    }
}

fn observed_order(run: &SimRun, r: &ScenarioRun) -> (bool, String) {
    let cfg = &r.scenario.config;
    let dist: DisturbanceScenario = cfg.disturbance();
    let traces: Result<Vec<SimulationTrace>, _> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&h| simulate(&run.sys, &cfg.delays(), &dist, &SimulationOptions { step: h, ..cfg.simulation_options() }))
        .collect();
    let Ok(t) = traces else { return (false, "step-halving runs failed".into()) };
    let diff = |coarse: &SimulationTrace, fine: &SimulationTrace| {
        let ratio = (coarse.step / fine.step).round() as usize;
        (0..coarse.len())
            .map(|k| coarse.state(k).iter().zip(fine.state(k * ratio)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };
    let order = (diff(&t[0], &t[1]) / diff(&t[1], &t[2])).log2();
    (order >= MIN_ORDER, format!("RK4 observed order {order:.2}"))
}

fn criterion_7(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "property suites";
    let mut c = Check::new();
    for (ok, text) in [sdp_unit_optimum(), svec_round_trip()] {
        c.require(ok, text);
    }
    match find(runs, NOMINAL) {
        Some(r) => {
            if let (Some(p), Some(sol)) = (&r.synthesis.result.problem, &r.synthesis.result.solution) {
                for (ok, text) in pi_affinity(p) {
                    c.require(ok, text);
                }
                let (ok, text) = schur_consistency(p, &sol.x);
                c.require(ok, text);
            } else {
                c.fail("no nominal solution for Π checks".into());
            }
            match designed(r) {
                Some(run) => {
                    let (ok, text) = observed_order(run, r);
                    c.require(ok, text);
                }
                None => c.fail("no nominal trace for step halving".into()),
            }
        }
        None => c.fail(format!("scenario {NOMINAL} missing")),
    }

    let mut traces = 0;
    let mut violations = 0;
    let mut worst_recovery: f64 = 0.0;
    let mut controllers = 0;
    for r in runs {
        for (_, rep) in &r.runs {
            if let Some(v) = rep.bound_violations {
                traces += 1;
                violations += v;
            }
        }
        if let Some(ctrl) = r.synthesis.controller() {
            controllers += 1;
            for res in &ctrl.recovery_residuals {
                worst_recovery = worst_recovery.max(res.a_c).max(res.b_c);
            }
        }
    }
    c.require(traces > 0 && violations == 0, format!("quadratic bound violated at {violations} samples over {traces} traces"));
    c.require(
        controllers > 0 && worst_recovery <= RECOVERY_TOL,
        format!("recovery residual {worst_recovery:.1e} over {controllers} controllers"),
    );
    c.finish(7, title)
}

fn criterion_8(runs: &[ScenarioRun]) -> CriterionResult {
    let title = "sampled dissipation audit";
    let mut c = Check::new();
    for name in [NOMINAL, DELAY, THREE_AREA] {
        match find(runs, name).map(|r| &r.synthesis) {
            Some(s) => match &s.audit {
                Some(a) => c.require(
                    a.sampled_max < 0.0,
                    format!("{name}: max {:.3e} over {} samples", a.sampled_max, a.samples),
                ),
                None => c.fail(format!("{name}: no controller (status {})", s.result.status)),
            },
            None => c.fail(format!("scenario {name} missing")),
        }
    }
    c.finish(8, title)
}

pub fn evaluate(runs: &[ScenarioRun]) -> Vec<CriterionResult> {
    vec![
        criterion_1(runs),
        criterion_2(runs),
        criterion_3(runs),
        criterion_4(runs),
        criterion_5(runs),
        criterion_6(runs),
        criterion_7(runs),
        criterion_8(runs),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use lfc_core::linalg::eye;

    #[test]
    fn standalone_property_checks_pass() {
        assert!(sdp_unit_optimum().0);
        assert!(svec_round_trip().0);
    }

    #[test]
    fn missing_scenarios_fail_every_criterion() {
        let r = evaluate(&[]);
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|c| !c.pass));
        assert!(r[0].line().starts_with("FAIL criterion 1"));
    }

    #[test]
    fn identity_needs_no_svec_scaling() {
        let i = eye(3);
        assert_eq!(smat(&svec(&i), 3), i);
    }
}
