use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    root().join("scenarios").join(format!("{name}.toml"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lfc-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn lfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfc")).args(args).env_remove("LFC_OUTPUT_ROOT").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenario file in `dir` built from a shipped one with text replacements.
fn variant_of(dir: &Path, base: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(scenario(base)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let p = dir.join(format!("{base}_edited.toml"));
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn nominal_pipeline_end_to_end_and_tampering() {
    let out = scratch("e2e");
    let cfg = scenario("two_area_nominal");
    let r = lfc(&["synth", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let dir = out.join("two_area_nominal");
    let ctrl = dir.join("controller.toml");
    assert!(ctrl.exists());

    let r = lfc(&["simulate", s(&cfg), "--controller", s(&ctrl), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["trace_designed.csv", "trace_baseline.csv", "designed_df.svg", "designed_ptie.svg", "summary.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }

    let traces = [dir.join("trace_designed.csv"), dir.join("trace_baseline.csv")];
    let r = lfc(&["verify", s(&cfg), "--controller", s(&ctrl), s(&traces[0]), s(&traces[1]), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    let report = std::fs::read_to_string(dir.join("verify_designed.txt")).unwrap();
    assert!(report.contains("bound_violations = 0"), "{report}");

    // one gain ×10: the substituted inequality no longer holds
    let text = std::fs::read_to_string(&ctrl).unwrap();
    let line = text.lines().find(|l| l.starts_with("d_c = [[")).unwrap();
    let v: f64 = line.trim_start_matches("d_c = [[").trim_end_matches("]]").parse().unwrap();
    let tampered = dir.join("tampered.toml");
    std::fs::write(&tampered, text.replacen(line, &format!("d_c = [[{}]]", v * 10.0), 1)).unwrap();
    let r = lfc(&["verify", s(&cfg), "--controller", s(&tampered), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(5), "{}", String::from_utf8_lossy(&r.stdout));
    let cert = std::fs::read_to_string(dir.join("verify_certificate.txt")).unwrap();
    let sub: f64 = cert
        .lines()
        .find_map(|l| l.strip_prefix("certificate_substituted_lambda_max = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(sub > 0.0, "{sub}");

    // traces are tied to the controller file that produced them
    let r = lfc(&["verify", s(&cfg), "--controller", s(&tampered), s(&traces[0]), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("provenance"));
}

#[test]
fn rate_bound_above_one_fails_validation_before_solving() {
    let out = scratch("rate");
    let cfg = variant_of(&out, "two_area_delay", &[("rate_bound = 0.3", "rate_bound = 1.5")]);
    let r = lfc(&["synth", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rate bound"));
    assert!(!out.join("two_area_delay").exists());
}

#[test]
fn infeasible_synthesis_exits_with_status_and_no_controller() {
    let out = scratch("infeasible");
    let r = lfc(&["synth", s(&scenario("two_area_delay")), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(String::from_utf8_lossy(&r.stdout).contains("status = infeasible"));
    assert!(!out.join("two_area_delay/controller.toml").exists());
    assert!(out.join("two_area_delay/synth.txt").exists());
}

#[test]
fn zero_disturbance_gives_zero_trace_and_undefined_energy_ratio() {
    let out = scratch("zero");
    let cfg = variant_of(
        &out,
        "two_area_nominal",
        &[
            ("  { area = 0, time_s = 3.0, magnitude_pu = 0.02 },\n", ""),
            ("  { area = 1, time_s = 3.0, magnitude_pu = 0.02 },\n", ""),
            ("horizon_s = 50.0", "horizon_s = 2.0"),
        ],
    );
    let r = lfc(&["simulate", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let dir = out.join("two_area_nominal");
    let csv = std::fs::read_to_string(dir.join("trace_baseline.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v == "0.00000000000e0"), "{line}");
    }
    let report = std::fs::read_to_string(dir.join("report_baseline.txt")).unwrap();
    assert!(report.contains("energy_ratio = undefined undefined"), "{report}");
}

#[test]
fn simulation_output_is_byte_identical_across_runs() {
    let out = scratch("det");
    let cfg = variant_of(&out, "two_area_nominal", &[("horizon_s = 50.0", "horizon_s = 10.0")]);
    let a = out.join("a");
    let b = out.join("b");
    assert_eq!(lfc(&["simulate", s(&cfg), "--out-dir", s(&a)]).status.code(), Some(0));
    assert_eq!(lfc(&["simulate", s(&cfg), "--out-dir", s(&b)]).status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("two_area_nominal/trace_baseline.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn output_root_from_environment_and_step_override() {
    let out = scratch("env");
    let cfg = variant_of(&out, "two_area_nominal", &[("horizon_s = 50.0", "horizon_s = 5.0")]);
    let r = Command::new(env!("CARGO_BIN_EXE_lfc"))
        .args(["simulate", s(&cfg), "--step", "0.01"])
        .env("LFC_OUTPUT_ROOT", &out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("two_area_nominal/trace_baseline.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 501);
}

#[test]
fn simulate_rejects_controller_of_another_scenario() {
    let out = scratch("mismatch");
    let r = lfc(&["synth", s(&scenario("two_area_nominal")), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(0));
    let ctrl = out.join("two_area_nominal/controller.toml");
    let r = lfc(&["simulate", s(&scenario("three_area_delay")), "--controller", s(&ctrl), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("provenance"));
}
