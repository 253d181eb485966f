use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lfc::acceptance;
use lfc::files::{self, ControllerFile, TraceMeta};
use lfc::pipeline::{self, Overrides, RunKind, Scenario, SimRun};
use lfc::Error;
use lfc_core::sdp::SolveStatus;

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_AUDIT: u8 = 5;
const EXIT_CRITERIA: u8 = 6;

/// Decentralized load-frequency controller synthesis, simulation and verification.
///
/// Exit status: 0 success, 1 error, 2 infeasible, 3 other solver failure, 4 divergent trace,
/// 5 failed audit, 6 failed acceptance criterion.
#[derive(Parser)]
#[command(name = "lfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output root; a directory per scenario is created below it.
    #[arg(long, env = "LFC_OUTPUT_ROOT", default_value = "out")]
    out_dir: PathBuf,
    /// Seed of the certificate sampling audit.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation step in seconds.
    #[arg(long)]
    step: Option<f64>,
    /// Solver gap and feasibility tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, step_s: self.step, tol: self.tol }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a controller and write controller.toml and synth.txt.
    Synth {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a controller file (and the baseline, if configured); write trace CSV and plots.
    Simulate {
        config: PathBuf,
        /// Controller file from `synth`; without it only the baseline runs.
        #[arg(long)]
        controller: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Audit a controller file and check traces written by `simulate`.
    Verify {
        config: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        traces: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every scenario of a directory end to end and evaluate the acceptance criteria.
    Report {
        scenarios: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(config: &Path, common: &Common) -> Result<Scenario, Error> {
    let mut sc = Scenario::load(config)?;
    sc.apply(&common.overrides())?;
    Ok(sc)
}

fn status_code(s: SolveStatus) -> u8 {
    match s {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_SOLVER,
    }
}

fn synth(config: &Path, common: &Common) -> Result<u8, Error> {
    let sc = load(config, common)?;
    let s = pipeline::synthesize_scenario(&sc)?;
    let dir = sc.output_dir(&common.out_dir);
    let written = pipeline::write_synthesis(&sc, &s, &dir)?;
    print!("{}", pipeline::synthesis_text(&sc, &s));
    match written {
        Some(p) => println!("controller written to {}", p.display()),
        None => println!("no controller written"),
    }
    let code = status_code(s.result.status);
    if code == 0 && s.file.is_none() {
        return Ok(EXIT_SOLVER);
    }
    Ok(code)
}

fn load_controller(path: &Path, sc: &Scenario) -> Result<(ControllerFile, String), Error> {
    let (file, hash) = ControllerFile::load(path)?;
    if file.scenario_hash != sc.hash {
        return Err(Error::Provenance(format!("{} was synthesized for a different scenario file", path.display())));
    }
    Ok((file, hash))
}

fn summarize(run: &SimRun, rep: &lfc_core::verify::VerificationReport) {
    let settle: Vec<String> =
        rep.settling_time.iter().map(|t| t.map_or("unsettled".into(), |t| format!("{t:.2}s"))).collect();
    match run.trace.diverged_at {
        Some(t) => println!("{}: diverged at t = {t:.3} s", run.kind.label()),
        None => println!("{}: settling [{}]", run.kind.label(), settle.join(", ")),
    }
}

fn simulate_cmd(config: &Path, controller: Option<&Path>, common: &Common) -> Result<u8, Error> {
    let sc = load(config, common)?;
    let dir = sc.output_dir(&common.out_dir);
    let mut runs = Vec::new();
    if let Some(path) = controller {
        let (file, hash) = load_controller(path, &sc)?;
        let run = pipeline::simulate_designed(&sc, &file.controller()?, &hash)?;
        let rep = pipeline::verify_run(&sc, &run, None)?;
        runs.push((run, rep));
    }
    if let Some(run) = pipeline::simulate_baseline(&sc)? {
        let rep = pipeline::verify_run(&sc, &run, None)?;
        runs.push((run, rep));
    }
    if runs.is_empty() {
        return Err(Error::Config("nothing to simulate: no controller file and no baseline gain".into()));
    }
    for (run, rep) in &runs {
        let p = pipeline::write_run(&sc, run, &dir)?;
        summarize(run, rep);
        println!("trace written to {}", p.display());
    }
    pipeline::write_reports(&runs, &dir)?;
    let designed_diverged = runs.iter().any(|(r, _)| r.kind == RunKind::Designed && r.trace.diverged());
    Ok(if designed_diverged { EXIT_DIVERGED } else { 0 })
}

fn verify_cmd(config: &Path, controller: &Path, traces: &[PathBuf], common: &Common) -> Result<u8, Error> {
    let sc = load(config, common)?;
    let (file, hash) = load_controller(controller, &sc)?;
    let audit = pipeline::audit_controller_file(&sc, &file)?;
    let margin = sc.config.synthesis.margin;
    let mut ok = audit.passes(margin, acceptance::CERTIFICATE_TOL);
    println!(
        "audit: λ_max = {:.3e}, substituted λ_max = {:.3e}, sampled max = {:.3e} ({})",
        audit.lambda_max,
        audit.substituted,
        audit.sampled_max,
        if ok { "pass" } else { "FAIL" }
    );
    let dir = sc.output_dir(&common.out_dir);
    let mut reports = vec![lfc_core::verify::VerificationReport {
        label: format!("{}/certificate", sc.name()),
        certificate: Some(audit.clone()),
        robustness_degree: file.robustness_degree.clone(),
        attenuation_level: file.attenuation_level.clone(),
        gamma2: file.gamma2.clone(),
        controller_hash: hash.clone(),
        scenario_hash: sc.hash.clone(),
        ..Default::default()
    }];
    for path in traces {
        let meta_path = path.with_extension("toml");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::Io(meta_path.display().to_string(), e))?;
        let meta: TraceMeta = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
        let (kind, sys, ctrl) = pipeline::replay(&sc, &meta, &file, &hash)?;
        let mut trace = files::read_trace_csv(path, &sys)?;
        trace.diverged_at = meta.diverged_at_s;
        let band = sc.config.simulation.settling_band_pu;
        let mut rep = lfc_core::verify::trace_report(&trace, &sys, &ctrl, band)?;
        rep.label = format!("{}/{}", sc.name(), kind.label());
        rep.controller_hash = meta.controller_hash.clone();
        rep.scenario_hash = sc.hash.clone();
        if kind == RunKind::Designed {
            rep.certificate = Some(audit.clone());
            let violations = rep.bound_violations.unwrap_or(0);
            ok &= violations == 0 && trace.diverged_at.is_none();
        }
        println!(
            "{}: bound violations {}, diverged {}",
            path.display(),
            rep.bound_violations.map_or("n/a".into(), |v| v.to_string()),
            trace.diverged_at.map_or("no".into(), |t| format!("at {t:.3} s"))
        );
        reports.push(rep);
    }
    for r in &reports {
        let name = r.label.rsplit('/').next().unwrap_or("report");
        files::write_text(&dir.join(format!("verify_{name}.txt")), &files::report_text(r))?;
    }
    Ok(if ok { 0 } else { EXIT_AUDIT })
}

#[derive(Default, Serialize)]
struct Manifest {
    scenario: Vec<ManifestScenario>,
    criterion: Vec<ManifestCriterion>,
}

#[derive(Serialize)]
struct ManifestScenario {
    name: String,
    file: String,
    scenario_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    controller_hash: Option<String>,
    status: String,
    output: String,
}

#[derive(Serialize)]
struct ManifestCriterion {
    id: u8,
    pass: bool,
    detail: String,
}

fn report_cmd(dir: &Path, common: &Common) -> Result<u8, Error> {
    let mut scenarios = pipeline::load_scenarios(dir)?;
    for sc in &mut scenarios {
        sc.apply(&common.overrides())?;
    }
    let mut manifest = Manifest::default();
    let mut done = Vec::new();
    for r in pipeline::run_all(scenarios) {
        let r = r?;
        let out = pipeline::write_scenario(&r, &common.out_dir)?;
        manifest.scenario.push(ManifestScenario {
            name: r.scenario.name().to_string(),
            file: r.scenario.path.display().to_string(),
            scenario_hash: r.scenario.hash.clone(),
            controller_hash: r.synthesis.controller_hash(),
            status: r.synthesis.result.status.to_string(),
            output: out.display().to_string(),
        });
        println!("{}: synthesis {}", r.scenario.name(), r.synthesis.result.status);
        done.push(r);
    }
    let results = acceptance::evaluate(&done);
    for c in &results {
        println!("{}", c.line());
        manifest.criterion.push(ManifestCriterion { id: c.id, pass: c.pass, detail: c.detail.clone() });
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    files::write_text(&common.out_dir.join("manifest.toml"), &text)?;
    Ok(if results.iter().all(|c| c.pass) { 0 } else { EXIT_CRITERIA })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Synth { config, common } => synth(config, common),
        Command::Simulate { config, controller, common } => simulate_cmd(config, controller.as_deref(), common),
        Command::Verify { config, controller, traces, common } => verify_cmd(config, controller, traces, common),
        Command::Report { scenarios, common } => report_cmd(scenarios, common),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
