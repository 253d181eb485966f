mod common;

use lfc_core::linalg::{block_diag, eye, max_eig, Mat};
use lfc_core::lmi::*;
use lfc_core::model::*;
use lfc_core::sdp::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn matrices_reproduce_raw_area_equations() {
    let params = common::two_area([-0.03, -0.02]);
    let delays = common::sinusoidal_delays(2);
    let plant = build_plant_raw(&params, &delays).unwrap();
    let n = plant.state_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let x = Mat::from_column_slice(n, 1, &random_state(&mut rng, n));
        // one delayed copy of the state per channel
        let xd: Vec<((usize, usize), Mat)> =
            plant.a_d.keys().map(|&k| (k, Mat::from_column_slice(n, 1, &random_state(&mut rng, n)))).collect();
        let u = Mat::from_column_slice(2, 1, &random_state(&mut rng, 2));
        let w = Mat::from_column_slice(2, 1, &random_state(&mut rng, 2));
        let mut rhs = &plant.a0_glob * &x + &plant.b_glob * &u + &plant.bw_glob * &w;
        for (k, v) in &xd {
            rhs += &plant.a_d[k] * v;
        }
        for i in 0..2 {
            let o = plant.offsets[i];
            let p = &params[i];
            let xi = [x[o], x[o + 1], x[o + 2], x[o + 3]];
            let f_of = |k: (usize, usize)| xd.iter().find(|(key, _)| *key == k).unwrap().1[plant.offsets[k.1] + IDX_FREQ];
            let neighbors: Vec<(f64, f64)> = p.tie_coeffs.iter().map(|(&j, &c)| (c, f_of((i, j)))).collect();
            let raw = raw_area_rates(p, &xi, f_of((i, i)), &neighbors, u[i], w[i]);
            let h = area_nonlinearity(p, &xi);
            for r in 0..4 {
                let lin = rhs[o + r] + h[r];
                assert!((lin - raw[r]).abs() <= 1e-12 * (1.0 + raw[r].abs()), "area {i} row {r}: {lin} vs {}", raw[r]);
            }
        }
    }
}

#[test]
fn global_matrices_are_block_assembled() {
    let params = common::three_area();
    let plant = build_plant(&params, &DelaySpec::none()).unwrap();
    let a0: Vec<Mat> = plant.per_area.iter().map(|a| a.a0.clone()).collect();
    let b: Vec<Mat> = plant.per_area.iter().map(|a| a.b.clone()).collect();
    let c: Vec<Mat> = plant.per_area.iter().map(|a| a.c.clone()).collect();
    assert_eq!(plant.a0_glob, block_diag(&a0));
    assert_eq!(plant.b_glob, block_diag(&b));
    assert_eq!(plant.c_glob, block_diag(&c));
    for (&(i, j), m) in &plant.a_d {
        for r in 0..plant.state_dim {
            for k in 0..plant.state_dim {
                let inside = (plant.offsets[i]..plant.offsets[i] + plant.area_dim(i)).contains(&r)
                    && (plant.offsets[j]..plant.offsets[j] + plant.area_dim(j)).contains(&k);
                assert!(inside || m[(r, k)] == 0.0);
            }
        }
    }
}

#[test]
fn quadratic_bound_holds_on_random_states() {
    let params = common::two_area([-0.03, -0.02]);
    let plant = build_plant(&params, &DelaySpec::none()).unwrap();
    let n = plant.state_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1_000_000 {
        let x = random_state(&mut rng, n);
        let g1: Vec<f64> = (0..2).map(|_| rng.random_range(1e-3..1.0)).collect();
        let mut hh = 0.0;
        let mut bound = 0.0;
        for i in 0..2 {
            let o = plant.offsets[i];
            let h = area_nonlinearity(&params[i], &x[o..o + 5]);
            hh += h.iter().map(|v| v * v).sum::<f64>();
            let hx: f64 = (0..n).map(|k| plant.h_bound[(i, k)] * x[k]).sum();
            bound += hx * hx / g1[i];
        }
        assert!(hh <= bound * (1.0 + 1e-14));
    }
}

proptest! {
    #[test]
    fn valve_is_one_lipschitz(a in -1.0f64..1.0, b in -1.0f64..1.0, lo in -0.5f64..-1e-3, hi in 1e-3f64..0.5) {
        let d = (valve_nonlinearity(a, lo, hi) - valve_nonlinearity(b, lo, hi)).abs();
        prop_assert!(d <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn valve_vanishes_inside_limits(t in 0.0f64..1.0, lo in -0.5f64..-1e-3, hi in 1e-3f64..0.5) {
        prop_assert_eq!(valve_nonlinearity(lo + t * (hi - lo), lo, hi), 0.0);
    }

    #[test]
    fn svec_round_trip(v in proptest::collection::vec(-10.0f64..10.0, 15)) {
        let m = smat(&v, 5);
        let back = svec(&m);
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn svec_preserves_inner_product(a in proptest::collection::vec(-10.0f64..10.0, 10), b in proptest::collection::vec(-10.0f64..10.0, 10)) {
        let (ma, mb) = (smat(&a, 4), smat(&b, 4));
        let trace = (&ma * &mb).trace();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assert!((trace - dot).abs() <= 1e-12 * (1.0 + trace.abs()));
    }
}

fn problem_on_delayed_plant(variant: SynthesisVariant) -> LmiProblem {
    let delays = common::sinusoidal_delays(2);
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &delays).unwrap();
    assemble_synthesis_lmi(&plant, &delays, &[2, 2], PerturbationBounds::uniform(0.1), variant, &[1.0, 1.0], LmiOptions::default())
        .unwrap()
}

fn census(p: &LmiProblem) -> Vec<(String, usize)> {
    p.spec.pi_layout.groups.iter().map(|g| (g.name.clone(), g.width)).collect()
}

#[test]
fn variants_differ_only_by_their_channels() {
    let full = census(&problem_on_delayed_plant(SynthesisVariant { delayed: true, perturbed: true }));
    let no_delay = census(&problem_on_delayed_plant(SynthesisVariant { delayed: false, perturbed: true }));
    let nominal = census(&problem_on_delayed_plant(SynthesisVariant { delayed: true, perturbed: false }));
    let drop = |prefix: &str| -> Vec<(String, usize)> { full.iter().filter(|g| !g.0.starts_with(prefix)).cloned().collect() };
    assert_eq!(no_delay, drop("delay"));
    assert_eq!(nominal, drop("z"));
}

fn solved_nominal() -> (LmiProblem, LmiSolution) {
    let plant = build_plant(&common::two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
    let mut opts = LmiOptions::default();
    opts.param = ControllerParam::PlantFixed(vec![AreaController::static_gain(6.0, 2); 2]);
    opts.variable_bound = Some(1e2);
    let v = SynthesisVariant { delayed: false, perturbed: false };
    let p = assemble_synthesis_lmi(&plant, &DelaySpec::none(), &[2, 2], PerturbationBounds::default(), v, &[1.0, 1.0], opts)
        .unwrap();
    let s = p.solve(&SolverOptions { gap_tol: 1e-6, ..Default::default() }).unwrap();
    assert!(s.is_optimal());
    (p, s)
}

#[test]
fn schur_complement_of_nonlinearity_channels() {
    let (p, s) = solved_nominal();
    let spec = &p.spec;
    let pi = spec.pi(&s.x).unwrap();
    let dim = spec.pi_layout.dim();
    let elim: Vec<usize> = ["h", "bound"]
        .iter()
        .flat_map(|g| {
            let o = spec.pi_layout.offset(g).unwrap();
            o..o + spec.pi_layout.width(g).unwrap()
        })
        .collect();
    let keep: Vec<usize> = (0..dim).filter(|k| !elim.contains(k)).collect();
    let sub = |r: &[usize], c: &[usize]| Mat::from_fn(r.len(), c.len(), |i, j| pi[(r[i], c[j])]);
    let schur = sub(&keep, &keep) - sub(&keep, &elim) * sub(&elim, &elim).try_inverse().unwrap() * sub(&elim, &keep);

    // pre-elimination form: remaining blocks plus (1/s1)·PGGᵀP + s1²·H̃ᵀΓ1⁻¹H̃ on the state block
    let n = spec.cl_dim;
    let lyap = spec.lyapunov(&s.x).unwrap();
    let g = spec.injection_matrix();
    let h = spec.bound_matrix();
    let s1 = spec.layout.scalar(&s.x, &name_s(1)).unwrap();
    let g1 = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 / spec.layout.scalar(&s.x, &name_g1(i)).unwrap() } else { 0.0 });
    let extra = &lyap * &g * g.transpose() * &lyap / s1 + h.transpose() * g1 * &h * (s1 * s1);
    let mut expected = sub(&keep, &keep);
    for i in 0..n {
        for j in 0..n {
            expected[(i, j)] += extra[(i, j)];
        }
    }
    let scale = expected.amax().max(1.0);
    assert!((&schur - &expected).amax() <= 1e-8 * scale, "{}", (&schur - &expected).amax());
}

fn scalar_box(k: usize, lower: bool) -> (Mat, Vec<(usize, SymSparse)>) {
    let sign = if lower { 1.0 } else { -1.0 };
    (Mat::from_element(1, 1, 1.0), vec![(k, SymSparse { dim: 1, entries: vec![(0, 0, sign)] })])
}

fn random_sdp(rng: &mut ChaCha8Rng, nvars: usize) -> SdpStandardForm {
    let rand_sym = |rng: &mut ChaCha8Rng| {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Mat::from_row_slice(2, 2, &[a, b, b, c])
    };
    let mut blocks = vec![2];
    let mut names = vec!["lmi".to_string()];
    let mut constant = vec![eye(2) * rng.random_range(0.3..1.0) + rand_sym(rng) * 0.2];
    let mut coeffs: Vec<Vec<(usize, SymSparse)>> = vec![Vec::new(); nvars];
    for k in 0..nvars {
        coeffs[k].push((0, SymSparse::from_dense(&rand_sym(rng), 0.0)));
    }
    for k in 0..nvars {
        for lower in [true, false] {
            let (c, list) = scalar_box(k, lower);
            let b = blocks.len();
            blocks.push(1);
            names.push(format!("box{k}"));
            constant.push(c);
            for (v, f) in list {
                coeffs[v].push((b, f));
            }
        }
    }
    let cost = (0..nvars).map(|_| rng.random_range(-1.0..1.0)).collect();
    SdpStandardForm { blocks, block_names: names, cost, constant, coeffs }
}

fn psd2(m: &Mat) -> bool {
    m[(0, 0)] >= 0.0 && m[(1, 1)] >= 0.0 && m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(0, 1)] >= 0.0
}

#[test]
fn solver_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for nvars in [1usize, 2] {
        for _ in 0..4 {
            let form = random_sdp(&mut rng, nvars);
            let out = solve(&form, &SolverOptions::default()).unwrap();
            assert_eq!(out.status, SolveStatus::Optimal);
            let steps = 2000;
            let grid = |i: usize| -1.0 + 2.0 * i as f64 / steps as f64;
            let mut best = f64::INFINITY;
            let ny = if nvars == 2 { steps + 1 } else { 1 };
            for i in 0..=steps {
                for j in 0..ny {
                    let x: Vec<f64> = if nvars == 2 { vec![grid(i), grid(j)] } else { vec![grid(i)] };
                    let g = form.eval(&x);
                    if psd2(&g[0]) {
                        best = best.min(form.cost.iter().zip(&x).map(|(c, v)| c * v).sum());
                    }
                }
            }
            assert!((out.objective - best).abs() < 1e-2, "solver {} grid {best}", out.objective);
            assert!(out.objective >= out.dual_bound - 1e-6);
        }
    }
}

#[test]
fn solver_is_deterministic_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let form = random_sdp(&mut rng, 2);
    let a = solve(&form, &SolverOptions::default()).unwrap();
    let b = solve(&form, &SolverOptions::default()).unwrap();
    assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let mut scaled = form.clone();
    scaled.cost.iter_mut().for_each(|c| *c *= 7.5);
    let c = solve(&scaled, &SolverOptions::default()).unwrap();
    for (u, v) in a.x.iter().zip(&c.x) {
        assert!((u - v).abs() < 1e-5);
    }
}

#[test]
fn random_assignment_violates_certificate() {
    let (p, _) = solved_nominal();
    let x: Vec<f64> = (0..p.num_vars()).map(|k| libm::sin(k as f64 * 1.7)).collect();
    assert!(max_eig(&p.constrained_pi(&x)) > 0.0);
}
