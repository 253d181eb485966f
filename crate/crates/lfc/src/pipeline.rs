//! Synthesis, simulation and verification runs for one scenario, and the batch driver.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lfc_core::dde::{apply_gain_perturbation, baseline_integral_controller, simulate, SimulationTrace};
use lfc_core::lmi::{
    assemble_synthesis_lmi, closed_loop_matrices, synthesize, ClosedLoopSystem, ControllerParam, DecentralizedController,
    LmiProblem, SynthesisResult,
};
use lfc_core::model::{build_plant, build_plant_raw, GlobalPlant};
use lfc_core::verify::{audit_assignment, audit_certificate, trace_report, CertificateAudit, VerificationReport};

use crate::config::{PerturbationScheme, ScenarioConfig};
use crate::files::{self, ControllerFile, TraceMeta};
use crate::plot::{line_plot, Series};
use crate::{sha256_hex, Error};

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub step_s: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: PathBuf,
    pub config: ScenarioConfig,
    /// SHA-256 of the scenario file as read, overrides excluded.
    pub hash: String,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        let config = ScenarioConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Scenario { path: path.to_path_buf(), config, hash: sha256_hex(text.as_bytes()) })
    }

    pub fn apply(&mut self, ov: &Overrides) -> Result<(), Error> {
        if let Some(seed) = ov.seed {
            self.config.verify.seed = seed;
        }
        if let Some(h) = ov.step_s {
            self.config.simulation.step_s = h;
        }
        if let Some(t) = ov.tol {
            self.config.synthesis.solver.gap_tol = t;
            self.config.synthesis.solver.feas_tol = t;
        }
        self.config.validate()
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn output_dir(&self, root: &Path) -> PathBuf {
        root.join(self.config.output.dir.as_deref().unwrap_or(&self.config.name))
    }

    pub fn plant(&self) -> Result<GlobalPlant, Error> {
        Ok(build_plant(&self.config.area_parameters()?, &self.config.delays())?)
    }
}

/// All `*.toml` scenario files of a directory, by file name.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io(dir.display().to_string(), e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::Io(dir.display().to_string(), e))?.path();
        if p.extension().is_some_and(|x| x == "toml") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| Scenario::load(p)).collect()
}

pub struct Synthesis {
    pub result: SynthesisResult,
    pub elapsed: Duration,
    pub file: Option<ControllerFile>,
    pub audit: Option<CertificateAudit>,
}

impl Synthesis {
    pub fn controller(&self) -> Option<&DecentralizedController> {
        self.result.controller.as_ref()
    }

    pub fn controller_hash(&self) -> Option<String> {
        self.file.as_ref().and_then(|f| f.to_toml().ok()).map(|t| sha256_hex(t.as_bytes()))
    }
}

pub fn synthesize_scenario(sc: &Scenario) -> Result<Synthesis, Error> {
    let cfg = &sc.config;
    let plant = sc.plant()?;
    let start = Instant::now();
    let result = synthesize(&plant, &cfg.delays(), &cfg.synthesis_settings())?;
    let elapsed = start.elapsed();
    let (mut file, mut audit) = (None, None);
    if let (true, Some(problem), Some(sol), Some(ctrl)) =
        (result.is_optimal(), &result.problem, &result.solution, &result.controller)
    {
        audit = Some(audit_certificate(sol, problem, ctrl, cfg.verify.samples, cfg.verify.seed)?);
        file = Some(ControllerFile::new(&cfg.name, &sc.hash, problem, &sol.x, sol.certificate, ctrl)?);
    }
    Ok(Synthesis { result, elapsed, file, audit })
}

/// The inequality of the final solve, rebuilt from the scenario and the stored parametrization.
pub fn rebuild_problem(sc: &Scenario, param: ControllerParam) -> Result<LmiProblem, Error> {
    let cfg = &sc.config;
    let settings = cfg.synthesis_settings();
    let mut opts = settings.options;
    opts.param = param;
    Ok(assemble_synthesis_lmi(&sc.plant()?, &cfg.delays(), &settings.orders, settings.bounds, settings.variant, &settings.rho, opts)?)
}

/// Audits (a)–(c) for a controller file against its scenario.
pub fn audit_controller_file(sc: &Scenario, file: &ControllerFile) -> Result<CertificateAudit, Error> {
    if file.scenario_hash != sc.hash {
        return Err(Error::Provenance(format!(
            "controller was synthesized for scenario {} ({}), not {}",
            file.scenario,
            short(&file.scenario_hash),
            short(&sc.hash)
        )));
    }
    let problem = rebuild_problem(sc, file.param.to_core()?)?;
    let x = file.assignment(&problem)?;
    let ctrl = file.controller()?;
    Ok(audit_assignment(&x, &problem, &ctrl, sc.config.verify.samples, sc.config.verify.seed)?)
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Designed,
    Baseline,
}

impl RunKind {
    pub fn label(self) -> &'static str {
        match self {
            RunKind::Designed => "designed",
            RunKind::Baseline => "baseline",
        }
    }
}

pub struct SimRun {
    pub kind: RunKind,
    pub sys: ClosedLoopSystem,
    /// Controller as simulated, perturbation included.
    pub ctrl: DecentralizedController,
    pub trace: SimulationTrace,
    pub elapsed: Duration,
    pub controller_hash: String,
}

fn run(sc: &Scenario, plant: &GlobalPlant, ctrl: DecentralizedController, kind: RunKind, hash: String) -> Result<SimRun, Error> {
    let cfg = &sc.config;
    let sys = closed_loop_matrices(plant, &ctrl)?;
    let start = Instant::now();
    let mut trace = simulate(&sys, &cfg.delays(), &cfg.disturbance(), &cfg.simulation_options())?;
    let elapsed = start.elapsed();
    trace.label = format!("{}/{}", cfg.name, kind.label());
    Ok(SimRun { kind, sys, ctrl, trace, elapsed, controller_hash: hash })
}

/// The synthesized controller as simulated, with the scenario's perturbation applied.
pub fn designed_controller(sc: &Scenario, ctrl: &DecentralizedController) -> Result<DecentralizedController, Error> {
    Ok(match sc.config.simulation.perturbation {
        PerturbationScheme::None => ctrl.clone(),
        PerturbationScheme::Scaled { fraction } => apply_gain_perturbation(ctrl, fraction)?,
    })
}

pub fn simulate_designed(sc: &Scenario, ctrl: &DecentralizedController, controller_hash: &str) -> Result<SimRun, Error> {
    run(sc, &sc.plant()?, designed_controller(sc, ctrl)?, RunKind::Designed, controller_hash.to_string())
}

/// Stands in for a controller file hash in baseline trace metadata.
pub fn baseline_hash(ki: f64) -> String {
    sha256_hex(format!("baseline-integral k_i={ki:e}").as_bytes())
}

fn baseline_parts(sc: &Scenario, ki: f64) -> Result<(GlobalPlant, DecentralizedController), Error> {
    let cfg = &sc.config;
    let plant = build_plant_raw(&cfg.area_parameters()?, &cfg.delays())?;
    Ok((plant, baseline_integral_controller(ki, cfg.n_areas())))
}

/// Conventional integral controller on the plant without the integrator state.
pub fn simulate_baseline(sc: &Scenario) -> Result<Option<SimRun>, Error> {
    let Some(ki) = sc.config.simulation.baseline_ki_per_s else {
        return Ok(None);
    };
    let (plant, ctrl) = baseline_parts(sc, ki)?;
    run(sc, &plant, ctrl, RunKind::Baseline, baseline_hash(ki)).map(Some)
}

/// Rebuild the closed loop a stored trace came from, after checking its provenance hashes.
pub fn replay(
    sc: &Scenario,
    meta: &TraceMeta,
    file: &ControllerFile,
    file_hash: &str,
) -> Result<(RunKind, ClosedLoopSystem, DecentralizedController), Error> {
    if meta.scenario_hash != sc.hash {
        return Err(Error::Provenance(format!(
            "trace {} belongs to scenario hash {}, config has {}",
            meta.label,
            short(&meta.scenario_hash),
            short(&sc.hash)
        )));
    }
    let (kind, plant, ctrl) = match meta.label.as_str() {
        "designed" => {
            if meta.controller_hash != file_hash {
                return Err(Error::Provenance(format!(
                    "trace was produced by controller {}, file hashes to {}",
                    short(&meta.controller_hash),
                    short(file_hash)
                )));
            }
            (RunKind::Designed, sc.plant()?, designed_controller(sc, &file.controller()?)?)
        }
        "baseline" => {
            let ki = sc.config.simulation.baseline_ki_per_s.ok_or_else(|| Error::Config("no baseline gain".into()))?;
            if meta.controller_hash != baseline_hash(ki) {
                return Err(Error::Provenance("baseline trace used a different integral gain".into()));
            }
            let (plant, ctrl) = baseline_parts(sc, ki)?;
            (RunKind::Baseline, plant, ctrl)
        }
        other => return Err(Error::Format(format!("unknown trace label {other}"))),
    };
    Ok((kind, closed_loop_matrices(&plant, &ctrl)?, ctrl))
}

pub fn verify_run(sc: &Scenario, run: &SimRun, audit: Option<&CertificateAudit>) -> Result<VerificationReport, Error> {
    let mut r = trace_report(&run.trace, &run.sys, &run.ctrl, sc.config.simulation.settling_band_pu)?;
    r.certificate = audit.cloned();
    r.controller_hash = run.controller_hash.clone();
    r.scenario_hash = sc.hash.clone();
    Ok(r)
}

pub struct ScenarioRun {
    pub scenario: Scenario,
    pub synthesis: Synthesis,
    pub runs: Vec<(SimRun, VerificationReport)>,
}

impl ScenarioRun {
    pub fn find(&self, kind: RunKind) -> Option<&(SimRun, VerificationReport)> {
        self.runs.iter().find(|(r, _)| r.kind == kind)
    }
}

/// Synthesis, then the designed run when a controller exists, then the baseline run.
pub fn run_scenario(scenario: Scenario) -> Result<ScenarioRun, Error> {
    let synthesis = synthesize_scenario(&scenario)?;
    let mut runs = Vec::new();
    if let (Some(ctrl), Some(hash)) = (synthesis.controller(), synthesis.controller_hash()) {
        let r = simulate_designed(&scenario, ctrl, &hash)?;
        let rep = verify_run(&scenario, &r, synthesis.audit.as_ref())?;
        runs.push((r, rep));
    }
    if let Some(r) = simulate_baseline(&scenario)? {
        let rep = verify_run(&scenario, &r, None)?;
        runs.push((r, rep));
    }
    Ok(ScenarioRun { scenario, synthesis, runs })
}

/// Scenarios run concurrently, results in input order.
pub fn run_all(scenarios: Vec<Scenario>) -> Vec<Result<ScenarioRun, Error>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = scenarios.into_iter().map(|sc| s.spawn(move || run_scenario(sc))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("scenario run panicked".into())))).collect()
    })
}

pub fn synthesis_text(sc: &Scenario, s: &Synthesis) -> String {
    use std::fmt::Write as _;
    let mut t = String::new();
    let _ = writeln!(t, "scenario = {}", sc.name());
    let _ = writeln!(t, "scenario_hash = {}", sc.hash);
    let _ = writeln!(t, "variant = {}", sc.config.synthesis.variant.core().label());
    let _ = writeln!(t, "status = {}", s.result.status);
    let _ = writeln!(t, "solves = {}", s.result.solves);
    let _ = writeln!(t, "elapsed_s = {:.3}", s.elapsed.as_secs_f64());
    if let Some(obj) = s.result.history.last() {
        let _ = writeln!(t, "objective = {obj:.11e}");
    }
    if let Some(sol) = &s.result.solution {
        let _ = writeln!(t, "certificate_residual = {:.11e}", sol.certificate);
    }
    if let Some(c) = s.controller() {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.11e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(t, "gamma1 = {}", list(&c.gamma1));
        let _ = writeln!(t, "gamma2 = {}", list(&c.gamma2));
        let _ = writeln!(t, "s1 = {:.11e}", c.s1);
        let _ = writeln!(t, "robustness_degree = {}", list(&c.robustness_degree));
        let _ = writeln!(t, "certified_degree = {}", list(&c.certified_degree()));
        let _ = writeln!(t, "attenuation_level = {}", list(&c.attenuation_level));
        let res: Vec<f64> = c.recovery_residuals.iter().map(|r| r.max()).collect();
        let _ = writeln!(t, "recovery_residual = {}", list(&res));
    }
    if let Some(a) = &s.audit {
        let _ = writeln!(t, "audit_lambda_max = {:.11e}", a.lambda_max);
        let _ = writeln!(t, "audit_substituted_lambda_max = {:.11e}", a.substituted);
        let _ = writeln!(t, "audit_sampled_max = {:.11e}", a.sampled_max);
        let _ = writeln!(t, "audit_sampled_max_multiplier_class = {:.11e}", a.sampled_max_certified);
    }
    t
}

/// Controller file (when optimal) and synthesis summary. Returns the controller path.
pub fn write_synthesis(sc: &Scenario, s: &Synthesis, dir: &Path) -> Result<Option<PathBuf>, Error> {
    files::write_text(&dir.join("synth.txt"), &synthesis_text(sc, s))?;
    match &s.file {
        Some(f) => {
            let p = dir.join("controller.toml");
            files::write_text(&p, &f.to_toml()?)?;
            Ok(Some(p))
        }
        None => Ok(None),
    }
}

/// Trace CSV, its metadata and plots. Returns the trace path.
pub fn write_run(sc: &Scenario, run: &SimRun, dir: &Path) -> Result<PathBuf, Error> {
    let label = run.kind.label();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(dir.display().to_string(), e))?;
    let formats = &sc.config.output.formats;
    let csv_path = dir.join(format!("trace_{label}.csv"));
    if formats.iter().any(|f| f == "csv") {
        files::write_trace_csv(&csv_path, &run.trace, &run.sys)?;
        let meta = TraceMeta {
            scenario: sc.name().to_string(),
            scenario_hash: sc.hash.clone(),
            controller_hash: run.controller_hash.clone(),
            label: label.to_string(),
            step_s: run.trace.step,
            diverged_at_s: run.trace.diverged_at,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        files::write_text(&csv_path.with_extension("toml"), &text)?;
    }
    if formats.iter().any(|f| f == "svg") {
        for (name, text) in plots(sc, run) {
            files::write_text(&dir.join(format!("{label}_{name}.svg")), &text)?;
        }
    }
    Ok(csv_path)
}

/// One panel for frequency deviations, one for tie-line power.
pub fn plots(sc: &Scenario, run: &SimRun) -> Vec<(&'static str, String)> {
    let t = &run.trace;
    let n = run.sys.n_areas();
    let col = |area: usize, k: usize| t.column(run.sys.offsets[area].0 + k);
    let df: Vec<Series> =
        (0..n).map(|i| Series { name: format!("area {}", i + 1), x: &t.times, y: col(i, lfc_core::model::IDX_FREQ) }).collect();
    let tie: Vec<Series> =
        (0..n).map(|i| Series { name: format!("area {}", i + 1), x: &t.times, y: col(i, lfc_core::model::IDX_TIE) }).collect();
    let title = |what: &str| format!("{} ({}): {what}", sc.name(), run.kind.label());
    vec![
        ("df", line_plot(&title("frequency deviation"), "t [s]", "Δf [Hz]", &df)),
        ("ptie", line_plot(&title("tie-line power deviation"), "t [s]", "ΔP_tie [pu]", &tie)),
    ]
}

pub fn write_reports(runs: &[(SimRun, VerificationReport)], dir: &Path) -> Result<(), Error> {
    let io = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(files::report_csv_header()).map_err(io)?;
    for (run, rep) in runs {
        files::write_text(&dir.join(format!("report_{}.txt", run.kind.label())), &files::report_text(rep))?;
        w.write_record(files::report_csv_row(rep)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    files::write_text(&dir.join("summary.csv"), &String::from_utf8_lossy(&bytes))
}

pub fn write_scenario(r: &ScenarioRun, root: &Path) -> Result<PathBuf, Error> {
    let dir = r.scenario.output_dir(root);
    write_synthesis(&r.scenario, &r.synthesis, &dir)?;
    for (run, _) in &r.runs {
        write_run(&r.scenario, run, &dir)?;
    }
    write_reports(&r.runs, &dir)?;
    Ok(dir)
}
