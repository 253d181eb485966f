#![allow(dead_code)]

use lfc_core::model::{tie_pair, AreaParameters, DelayPair, DelaySpec};

pub fn two_area(ke: [f64; 2]) -> Vec<AreaParameters> {
    let (t1, t2) = tie_pair(0, 1, 1.2566);
    vec![
        AreaParameters {
            tp: 11.1133,
            tt: 0.4,
            tg: 0.08,
            kp: 66.667,
            r: 3.0,
            kb: 1.0,
            ke: ke[0],
            xg_min: -0.03,
            xg_max: 0.12,
            tie_sum: 1.2566,
            tie_coeffs: t1,
        },
        AreaParameters {
            tp: 12.6,
            tt: 0.44,
            tg: 0.06,
            kp: 62.5,
            r: 2.73,
            kb: 1.0,
            ke: ke[1],
            xg_min: -0.03,
            xg_max: 0.12,
            tie_sum: 1.2566,
            tie_coeffs: t2,
        },
    ]
}

pub fn sinusoidal_delays(n: usize) -> DelaySpec {
    DelaySpec::uniform(n, DelayPair { base: 2.0, amplitude: 0.3, rate_bound: 0.3 })
}

pub fn three_area() -> Vec<AreaParameters> {
    let raw = [(20.0, 0.3, 0.08, 120.0, 2.4), (25.0, 0.33, 0.072, 112.5, 2.7), (20.0, 0.35, 0.07, 115.0, 2.5)];
    (0..3)
        .map(|i| {
            let (tp, tt, tg, kp, r) = raw[i];
            let tie_coeffs = (0..3).filter(|&j| j != i).map(|j| (j, 0.2725)).collect();
            AreaParameters {
                tp,
                tt,
                tg,
                kp,
                r,
                kb: 1.0,
                ke: -1.85,
                xg_min: -0.03,
                xg_max: 0.12,
                tie_sum: 0.545,
                tie_coeffs,
            }
        })
        .collect()
}

pub fn two_area_perturbed() -> Vec<AreaParameters> {
    let (t1, t2) = tie_pair(0, 1, 2.5132);
    let mk = |tp: f64, tt: f64, ke: f64, ties| AreaParameters {
        tp,
        tt,
        tg: 0.105,
        kp: 100.0,
        r: 3.5,
        kb: 1.5,
        ke,
        xg_min: -0.03,
        xg_max: 0.12,
        tie_sum: 2.5132,
        tie_coeffs: ties,
    };
    vec![mk(22.2266, 0.8, -4.0, t1), mk(25.2, 0.88, -3.0, t2)]
}

pub fn nominal_settings() -> lfc_core::lmi::SynthesisSettings {
    use lfc_core::lmi::*;
    SynthesisSettings {
        orders: vec![2, 2],
        bounds: PerturbationBounds::default(),
        variant: SynthesisVariant { delayed: false, perturbed: false },
        rho: vec![1.0, 1.0],
        options: LmiOptions {
            param: ControllerParam::PlantFixed(Vec::new()),
            variable_bound: Some(1e2),
            ..LmiOptions::default()
        },
        solver: lfc_core::sdp::SolverOptions { gap_tol: 1e-6, ..Default::default() },
        initial_gains: vec![4.0, 6.0, 8.0],
        initial_controllers: Vec::new(),
        max_rounds: 6,
        rel_improvement: 1e-3,
    }
}

/// Nominal two-area plant and its synthesized controller.
pub fn nominal_design() -> (lfc_core::model::GlobalPlant, lfc_core::lmi::SynthesisResult) {
    let plant = lfc_core::model::build_plant(&two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let r = lfc_core::lmi::synthesize(&plant, &DelaySpec::none(), &nominal_settings()).unwrap();
    assert!(r.is_optimal());
    (plant, r)
}
