//! Externally supplied second-order controllers checked against the plant model.

mod common;

use lfc_core::linalg::Mat;
use lfc_core::lmi::{closed_loop_matrices, AreaController, DecentralizedController};
use lfc_core::model::{build_plant, DelaySpec, GlobalPlant};
use lfc_core::verify::delay_free_spectrum;

fn structured(a: [f64; 2], skew: bool, b: [f64; 2], c: f64, d: f64) -> AreaController {
    let off = if skew { [a[1], -a[1]] } else { [a[1], a[1]] };
    AreaController {
        a_c: Mat::from_row_slice(2, 2, &[a[0], off[0], off[1], a[0]]),
        b_c: Mat::from_column_slice(2, 1, &b),
        c_c: Mat::from_row_slice(1, 2, &[c, c]),
        d_c: Mat::from_element(1, 1, d),
    }
}

fn spectrum(plant: &GlobalPlant, areas: Vec<AreaController>) -> Vec<f64> {
    let n = areas.len();
    let ctrl = DecentralizedController::new(areas, vec![1.0; n], vec![1.0; n], 1.0);
    delay_free_spectrum(&closed_loop_matrices(plant, &ctrl).unwrap()).unwrap()
}

#[test]
fn reference_nominal_controller_is_stable_up_to_conserved_mode() {
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let re = spectrum(
        &plant,
        vec![
            structured([-1.2132, -0.0497], true, [-0.3645, 0.3645], 0.9174, 4.25),
            structured([-1.2264, -0.0632], true, [-0.3741, 0.3741], 0.9617, 4.2276),
        ],
    );
    assert!(re[0].abs() < 1e-9, "{re:?}");
    assert!(re[1] < 0.0, "{re:?}");
}

fn reference_delay_controllers() -> Vec<AreaController> {
    let mk = |a: [f64; 2], b: f64, c: f64, d: f64| structured([a[0] * 1e4, a[1] * 1e4], false, [b * 1e4; 2], c * 1e4, d * 1e4);
    vec![mk([-1.5923, -1.5897], -1.5891, 0.0526, 0.0525), mk([-1.1217, -1.1176], -1.1183, 0.0283, 0.0282)]
}

// The reference controllers for the delayed cases do not stabilize the model even with every
// delay frozen at zero, for either sign of the integrator gain.
#[test]
fn reference_delay_controllers_are_unstable_at_zero_delay() {
    for ke in [-1.8, 1.8] {
        let plant = build_plant(&common::two_area([ke, ke]), &DelaySpec::none()).unwrap();
        let re = spectrum(&plant, reference_delay_controllers());
        assert!(re[0] > 0.1, "K_E {ke}: {re:?}");
    }
    let plant = build_plant(&common::three_area(), &common::sinusoidal_delays(3)).unwrap();
    let re = spectrum(
        &plant,
        vec![
            structured([-1.5923e4, -1.5897e4], false, [-1.5891e4; 2], 0.0526e4, 525.0),
            structured([-1.1217e4, -1.1176e4], false, [-1.1183e4; 2], 0.0283e4, 282.0),
            structured([-1.0817e4, -1.0676e4], false, [-1.0583e4; 2], 0.0383e4, 582.0),
        ],
    );
    assert!(re[0] > 1.0, "{re:?}");
}
