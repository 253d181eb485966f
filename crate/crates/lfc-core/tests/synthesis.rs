mod common;

use lfc_core::lmi::*;
use lfc_core::model::{build_plant, DelaySpec};
use lfc_core::sdp::{SolveStatus, SolverOptions};

fn plant_fixed(gain: f64) -> (LmiProblem, LmiSolution) {
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let mut opts = LmiOptions::default();
    opts.param = ControllerParam::PlantFixed(vec![AreaController::static_gain(gain, 2); 2]);
    opts.variable_bound = Some(1e2);
    let v = SynthesisVariant { delayed: false, perturbed: false };
    let p = assemble_synthesis_lmi(&plant, &DelaySpec::none(), &[2, 2], PerturbationBounds::default(), v, &[1.0, 1.0], opts)
        .unwrap();
    let s = p.solve(&SolverOptions { gap_tol: 1e-6, ..Default::default() }).unwrap();
    (p, s)
}

// Reference optimum from an independent conic-modelling prototype of the same inequality
// (different solver, different assembly code): 2.897088.
#[test]
fn plant_fixed_gain_six_matches_reference() {
    let (p, s) = plant_fixed(6.0);
    assert_eq!(s.outcome.status, SolveStatus::Optimal);
    let obj = p.objective_value(&s.x);
    assert!((obj - 2.897088).abs() < 2e-3 * 2.897088, "objective {obj}");
    assert!(s.certificate <= -p.spec.options.margin + 1e-8, "certificate {}", s.certificate);
}

#[test]
#[ignore]
fn dump_plant_fixed() {
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let mut opts = LmiOptions::default();
    opts.param = ControllerParam::PlantFixed(vec![AreaController::static_gain(6.0, 2); 2]);
    let v = SynthesisVariant { delayed: false, perturbed: false };
    let p = assemble_synthesis_lmi(&plant, &DelaySpec::none(), &[2, 2], PerturbationBounds::default(), v, &[1.0, 1.0], opts)
        .unwrap();
    let (f, _) = p.to_standard_form(2000).unwrap();
    std::fs::write("/tmp/pf.txt", f.dump()).unwrap();
}

#[test]
fn alternating_design_is_monotone_and_recovers_exactly() {
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let settings = SynthesisSettings {
        orders: vec![2, 2],
        bounds: PerturbationBounds::default(),
        variant: SynthesisVariant { delayed: false, perturbed: false },
        rho: vec![1.0, 1.0],
        options: LmiOptions {
            param: ControllerParam::PlantFixed(Vec::new()),
            variable_bound: Some(1e2),
            ..LmiOptions::default()
        },
        solver: SolverOptions { gap_tol: 1e-6, ..Default::default() },
        initial_gains: vec![4.0, 6.0, 8.0],
        initial_controllers: Vec::new(),
        max_rounds: 6,
        rel_improvement: 1e-3,
    };
    let t = std::time::Instant::now();
    let r = synthesize(&plant, &DelaySpec::none(), &settings).unwrap();
    eprintln!("history {:?} solves {} in {:?}", r.history, r.solves, t.elapsed());
    assert!(r.is_optimal());
    for w in r.history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-6));
    }
    let c = r.controller.unwrap();
    eprintln!("{:?}", c);
    for res in &c.recovery_residuals {
        assert!(res.max() < 1e-8, "{res:?}");
    }
    let sol = r.solution.unwrap();
    let p = r.problem.unwrap();
    let sub = substituted_certificate(&sol.x, &p, &c).unwrap();
    assert!(sub <= -p.spec.options.margin + 1e-8, "substituted {sub}");
    let audit = lfc_core::verify::audit_certificate(&sol, &p, &c, 1000, 7).unwrap();
    eprintln!("{audit:?}");
    assert!((audit.lambda_max - sol.certificate).abs() < 1e-12);
    assert!((audit.lambda_max - audit.substituted).abs() < 1e-8);
    assert!(audit.sampled_max_certified < 0.0);
}
