//! Per-area generator-load dynamics, global assembly and the valve nonlinearity.
//!
//! Area state order is `[ΔX_g, ΔP_g, Δf, ΔP_t]`, extended with the integrated
//! area control error `y_c` once augmented.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{block_diag, put, zeros, Mat};

pub const IDX_VALVE: usize = 0;
pub const IDX_GEN: usize = 1;
pub const IDX_FREQ: usize = 2;
pub const IDX_TIE: usize = 3;
pub const IDX_INT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    NonPositive(&'static str),
    ValveLimits { lo: f64, hi: f64 },
    TieSumMismatch { area: usize, tie_sum: f64, coeff_sum: f64 },
    SelfTie(usize),
    AlreadyAugmented,
    NotAugmented,
    DimensionMismatch(&'static str),
    DanglingNeighbor { area: usize, neighbor: usize },
    MissingDelay { from: usize, to: usize },
    Delay { from: usize, to: usize, reason: &'static str },
    Empty,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NonPositive(field) => write!(f, "parameter `{field}` must be positive"),
            ModelError::ValveLimits { lo, hi } => {
                write!(f, "valve limits must bracket zero (got [{lo}, {hi}])")
            }
            ModelError::TieSumMismatch { area, tie_sum, coeff_sum } => write!(
                f,
                "area {area}: tie_sum {tie_sum} differs from the sum of tie coefficients {coeff_sum}"
            ),
            ModelError::SelfTie(i) => write!(f, "area {i} lists itself as a tie-line neighbor"),
            ModelError::AlreadyAugmented => f.write_str("area matrices are already augmented"),
            ModelError::NotAugmented => f.write_str("area matrices must be augmented"),
            ModelError::DimensionMismatch(s) => write!(f, "dimension mismatch: {s}"),
            ModelError::DanglingNeighbor { area, neighbor } => {
                write!(f, "area {area} references unknown neighbor {neighbor}")
            }
            ModelError::MissingDelay { from, to } => {
                write!(f, "no delay entry for pair ({from}, {to})")
            }
            ModelError::Delay { from, to, reason } => write!(f, "delay ({from}, {to}): {reason}"),
            ModelError::Empty => f.write_str("empty input"),
        }
    }
}

impl core::error::Error for ModelError {}

/// Physical constants of one control area. Time constants in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaParameters {
    pub tp: f64,
    pub tt: f64,
    pub tg: f64,
    pub kp: f64,
    /// Speed regulation, Hz/pu.
    pub r: f64,
    /// Frequency bias, pu/Hz.
    pub kb: f64,
    /// Integrator gain on the area control error, 1/s.
    pub ke: f64,
    pub xg_min: f64,
    pub xg_max: f64,
    /// `2π Σ_j T_ij`.
    pub tie_sum: f64,
    /// Neighbor index to `2π T_ij`.
    pub tie_coeffs: BTreeMap<usize, f64>,
}

impl AreaParameters {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("tp", self.tp), ("tt", self.tt), ("tg", self.tg), ("r", self.r)] {
            if !(v > 0.0) {
                return Err(ModelError::NonPositive(name));
            }
        }
        if !(self.xg_min < 0.0 && 0.0 < self.xg_max) {
            return Err(ModelError::ValveLimits { lo: self.xg_min, hi: self.xg_max });
        }
        let s: f64 = self.tie_coeffs.values().sum();
        if (s - self.tie_sum).abs() > 1e-9 {
            return Err(ModelError::TieSumMismatch { area: usize::MAX, tie_sum: self.tie_sum, coeff_sum: s });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaMatrices {
    pub a0: Mat,
    pub a1_self: Mat,
    pub a1_cross: BTreeMap<usize, Mat>,
    pub b: Mat,
    pub bw: Mat,
    pub c: Mat,
    pub augmented: bool,
}

impl AreaMatrices {
    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }
}

pub fn build_area_matrices(params: &AreaParameters, own_index: usize) -> Result<AreaMatrices, ModelError> {
    params.validate().map_err(|e| match e {
        ModelError::TieSumMismatch { tie_sum, coeff_sum, .. } => {
            ModelError::TieSumMismatch { area: own_index, tie_sum, coeff_sum }
        }
        other => other,
    })?;
    if params.tie_coeffs.contains_key(&own_index) {
        return Err(ModelError::SelfTie(own_index));
    }
    let p = params;
    let mut a0 = zeros(4, 4);
    a0[(0, 0)] = -1.0 / p.tg;
    a0[(1, 0)] = 1.0 / p.tt;
    a0[(1, 1)] = -1.0 / p.tt;
    a0[(2, 1)] = p.kp / p.tp;
    a0[(2, 2)] = -1.0 / p.tp;
    a0[(2, 3)] = -p.kp / p.tp;
    a0[(3, 2)] = p.tie_sum;

    let mut a1_self = zeros(4, 4);
    a1_self[(IDX_VALVE, IDX_FREQ)] = -1.0 / (p.r * p.tg);

    let a1_cross = p
        .tie_coeffs
        .iter()
        .map(|(&j, &c)| {
            let mut m = zeros(4, 4);
            m[(IDX_TIE, IDX_FREQ)] = -c;
            (j, m)
        })
        .collect();

    let mut b = zeros(4, 1);
    b[(0, 0)] = 1.0 / p.tg;
    let mut bw = zeros(4, 1);
    bw[(2, 0)] = -p.kp / p.tp;
    let mut c = zeros(1, 4);
    c[(0, IDX_FREQ)] = p.kb;
    c[(0, IDX_TIE)] = 1.0;
    Ok(AreaMatrices { a0, a1_self, a1_cross, b, bw, c, augmented: false })
}

fn pad(m: &Mat, r: usize, c: usize) -> Mat {
    let mut out = zeros(r, c);
    put(&mut out, 0, 0, m);
    out
}

pub fn augment_with_integrator(m: &AreaMatrices, ke: f64, kb: f64) -> Result<AreaMatrices, ModelError> {
    if m.augmented {
        return Err(ModelError::AlreadyAugmented);
    }
    let n = m.dim() + 1;
    let mut a0 = pad(&m.a0, n, n);
    a0[(IDX_INT, IDX_FREQ)] = ke * kb;
    a0[(IDX_INT, IDX_TIE)] = ke;
    let mut c = zeros(1, n);
    c[(0, IDX_INT)] = 1.0;
    Ok(AreaMatrices {
        a0,
        a1_self: pad(&m.a1_self, n, n),
        a1_cross: m.a1_cross.iter().map(|(&j, a)| (j, pad(a, n, n))).collect(),
        b: pad(&m.b, n, 1),
        bw: pad(&m.bw, n, 1),
        c,
        augmented: true,
    })
}

/// Delay of one ordered pair: `τ(t) = base + amplitude·sin t`, `|τ'| <= rate_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayPair {
    pub base: f64,
    pub amplitude: f64,
    pub rate_bound: f64,
}

impl DelayPair {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.base - self.amplitude > 0.0) {
            return Err("delay must stay positive (base - amplitude <= 0)");
        }
        if self.amplitude < 0.0 {
            return Err("negative amplitude");
        }
        if !(self.rate_bound >= self.amplitude) {
            return Err("rate bound below the sinusoid amplitude");
        }
        if !(self.rate_bound < 1.0) {
            return Err("rate bound must be below 1");
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.base + self.amplitude * libm::sin(t)
    }

    pub fn max(&self) -> f64 {
        self.base + self.amplitude
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelaySpec {
    pub pairs: BTreeMap<(usize, usize), DelayPair>,
}

impl DelaySpec {
    /// No delays at all (delay-free variants).
    pub fn none() -> Self {
        DelaySpec::default()
    }

    /// The same delay on every ordered pair of `n` areas.
    pub fn uniform(n: usize, pair: DelayPair) -> Self {
        let mut pairs = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                pairs.insert((i, j), pair);
            }
        }
        DelaySpec { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (&(i, j), p) in &self.pairs {
            p.validate().map_err(|reason| ModelError::Delay { from: i, to: j, reason })?;
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&DelayPair> {
        self.pairs.get(&(i, j))
    }

    pub fn max_delay(&self) -> f64 {
        self.pairs.values().map(DelayPair::max).fold(0.0, f64::max)
    }
}

/// Nonlinearity bound row for one area: `h_i^T h_i <= α² (H_i x)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaBound {
    pub h: Mat,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPlant {
    pub n_areas: usize,
    pub per_area: Vec<AreaMatrices>,
    pub a0_glob: Mat,
    pub b_glob: Mat,
    pub bw_glob: Mat,
    pub c_glob: Mat,
    pub a_d: BTreeMap<(usize, usize), Mat>,
    pub h_bound: Mat,
    pub state_dim: usize,
    pub offsets: Vec<usize>,
    pub params: Vec<AreaParameters>,
}

impl GlobalPlant {
    pub fn area_dim(&self, i: usize) -> usize {
        self.per_area[i].dim()
    }

    /// `A_0 + Σ A_d`, the plant with all delays frozen at zero.
    pub fn frozen_a(&self) -> Mat {
        let mut a = self.a0_glob.clone();
        for m in self.a_d.values() {
            a += m;
        }
        a
    }
}

pub fn assemble_global_system(
    params: &[AreaParameters],
    areas: &[AreaMatrices],
    delays: &DelaySpec,
) -> Result<GlobalPlant, ModelError> {
    if areas.is_empty() {
        return Err(ModelError::Empty);
    }
    if params.len() != areas.len() {
        return Err(ModelError::DimensionMismatch("parameter and matrix lists differ in length"));
    }
    let aug = areas[0].augmented;
    if areas.iter().any(|a| a.augmented != aug) {
        return Err(ModelError::DimensionMismatch("areas augmented inconsistently"));
    }
    let n_areas = areas.len();
    let mut offsets = Vec::with_capacity(n_areas);
    let mut acc = 0;
    for a in areas {
        offsets.push(acc);
        acc += a.dim();
    }
    let state_dim = acc;
    for (i, a) in areas.iter().enumerate() {
        for &j in a.a1_cross.keys() {
            if j >= n_areas {
                return Err(ModelError::DanglingNeighbor { area: i, neighbor: j });
            }
            if !delays.is_empty() && delays.get(i, j).is_none() {
                return Err(ModelError::MissingDelay { from: i, to: j });
            }
        }
        if !delays.is_empty() && delays.get(i, i).is_none() {
            return Err(ModelError::MissingDelay { from: i, to: i });
        }
    }

    let a0_glob = block_diag(&areas.iter().map(|a| a.a0.clone()).collect::<Vec<_>>());
    let b_glob = block_diag(&areas.iter().map(|a| a.b.clone()).collect::<Vec<_>>());
    let bw_glob = block_diag(&areas.iter().map(|a| a.bw.clone()).collect::<Vec<_>>());
    let c_glob = block_diag(&areas.iter().map(|a| a.c.clone()).collect::<Vec<_>>());

    let mut a_d = BTreeMap::new();
    for i in 0..n_areas {
        for j in 0..n_areas {
            let mut m = zeros(state_dim, state_dim);
            let blk = if i == j { Some(&areas[i].a1_self) } else { areas[i].a1_cross.get(&j) };
            if let Some(b) = blk {
                if b.nrows() != areas[i].dim() || b.ncols() != areas[j].dim() {
                    return Err(ModelError::DimensionMismatch("delay block shape"));
                }
                put(&mut m, offsets[i], offsets[j], b);
            }
            a_d.insert((i, j), m);
        }
    }

    let bounds = nonlinearity_bound(params)?;
    let h_rows: Vec<Mat> = bounds
        .iter()
        .zip(areas)
        .map(|(b, a)| pad(&b.h, 1, a.dim()))
        .collect();
    let h_bound = block_diag(&h_rows);

    Ok(GlobalPlant {
        n_areas,
        per_area: areas.to_vec(),
        a0_glob,
        b_glob,
        bw_glob,
        c_glob,
        a_d,
        h_bound,
        state_dim,
        offsets,
        params: params.to_vec(),
    })
}

/// Build, augment and assemble in one step.
pub fn build_plant(params: &[AreaParameters], delays: &DelaySpec) -> Result<GlobalPlant, ModelError> {
    let areas = params
        .iter()
        .enumerate()
        .map(|(i, p)| build_area_matrices(p, i).and_then(|m| augment_with_integrator(&m, p.ke, p.kb)))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_global_system(params, &areas, delays)
}

/// Assemble the four-state plants without the integrator; the output is the area control error.
pub fn build_plant_raw(params: &[AreaParameters], delays: &DelaySpec) -> Result<GlobalPlant, ModelError> {
    let areas = params
        .iter()
        .enumerate()
        .map(|(i, p)| build_area_matrices(p, i))
        .collect::<Result<Vec<_>, _>>()?;
    assemble_global_system(params, &areas, delays)
}

/// `μ(x) = clamp(x, lo, hi) - x`.
pub fn valve_nonlinearity(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi) - x
}

pub fn nonlinearity_bound(areas: &[AreaParameters]) -> Result<Vec<AreaBound>, ModelError> {
    areas
        .iter()
        .map(|p| {
            if !(p.xg_min < 0.0 && 0.0 < p.xg_max) {
                return Err(ModelError::ValveLimits { lo: p.xg_min, hi: p.xg_max });
            }
            if !(p.tt > 0.0) {
                return Err(ModelError::NonPositive("tt"));
            }
            let mut h = zeros(1, 4);
            h[(0, IDX_VALVE)] = 1.0 / p.tt;
            Ok(AreaBound { h, alpha: 1.0 })
        })
        .collect()
}

/// Nonlinear term of one area's state equation: `(1/T_t)·μ(ΔX_g)` on the `ΔP_g` row.
pub fn area_nonlinearity(p: &AreaParameters, x: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; x.len()];
    out[IDX_GEN] = valve_nonlinearity(x[IDX_VALVE], p.xg_min, p.xg_max) / p.tt;
    out
}

/// Right-hand side of the raw area equations with ideal valve saturation.
///
/// `f_self_delayed` is `Δf_i(t - τ_ii)`, `f_neighbors_delayed` holds `(2πT_ij, Δf_j(t - τ_ij))`.
pub fn raw_area_rates(
    p: &AreaParameters,
    x: &[f64; 4],
    f_self_delayed: f64,
    f_neighbors_delayed: &[(f64, f64)],
    u: f64,
    w: f64,
) -> [f64; 4] {
    let [xg, pg, f, pt] = *x;
    let eta = xg.clamp(p.xg_min, p.xg_max);
    let df = p.kp / p.tp * pg - p.kp / p.tp * w - f / p.tp - p.kp / p.tp * pt;
    let dpg = eta / p.tt - pg / p.tt;
    let dxg = u / p.tg - f_self_delayed / (p.r * p.tg) - xg / p.tg;
    let coupling: f64 = f_neighbors_delayed.iter().map(|(c, fj)| c * fj).sum();
    let dpt = p.tie_sum * f - coupling;
    [dxg, dpg, df, dpt]
}

/// Check `λ_max(H̄ᵀH̄)·min γ̄ <= max γ·min_i λ_min(H_i H_iᵀ)`.
///
/// The per-area minimum is taken over the row space of `H_i`, so a single nonzero row
/// contributes its squared norm.
pub fn verify_cone_condition(
    h_bar: &Mat,
    h_blocks: &[Mat],
    gamma1_bar: &[f64],
    gamma1: &[f64],
) -> Result<bool, ModelError> {
    if h_blocks.is_empty() || gamma1_bar.is_empty() || gamma1.is_empty() || h_bar.nrows() == 0 {
        return Err(ModelError::Empty);
    }
    let gram = h_bar * h_bar.transpose();
    let lmax = crate::linalg::max_eig(&gram);
    let min_bar = gamma1_bar.iter().copied().fold(f64::INFINITY, f64::min);
    let max_g = gamma1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_h = h_blocks
        .iter()
        .map(|h| crate::linalg::min_eig(&(h * h.transpose())))
        .fold(f64::INFINITY, f64::min);
    let lhs = lmax * min_bar;
    let rhs = max_g * min_h;
    Ok(lhs <= rhs * (1.0 + 1e-12) + 1e-300)
}

/// Symmetric tie maps for a line between areas `i` and `j`.
pub fn tie_pair(i: usize, j: usize, coeff: f64) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut a = BTreeMap::new();
    a.insert(j, coeff);
    let mut b = BTreeMap::new();
    b.insert(i, coeff);
    (a, b)
}

/// Unit vector for the `k`-th area state inside the global plant state.
pub fn plant_state_index(plant: &GlobalPlant, area: usize, k: usize) -> usize {
    plant.offsets[area] + k
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    pub(crate) fn table2_area1() -> AreaParameters {
        let (t1, _) = tie_pair(0, 1, 1.2566);
        AreaParameters {
            tp: 11.1133,
            tt: 0.4,
            tg: 0.08,
            kp: 66.667,
            r: 3.0,
            kb: 1.0,
            ke: -0.03,
            xg_min: -0.03,
            xg_max: 0.12,
            tie_sum: 1.2566,
            tie_coeffs: t1,
        }
    }

    #[test]
    fn area_matrices_match_hand_arithmetic() {
        let m = build_area_matrices(&table2_area1(), 0).unwrap();
        // hand arithmetic: 1/0.08, 1/0.4, 66.667/11.1133, 1/11.1133
        let expect = [
            [-12.5, 0.0, 0.0, 0.0],
            [2.5, -2.5, 0.0, 0.0],
            [0.0, 5.99884, -0.08998, -5.99884],
            [0.0, 0.0, 1.2566, 0.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!((m.a0[(r, c)] - expect[r][c]).abs() < 1e-5, "({r},{c}) {}", m.a0[(r, c)]);
            }
        }
        assert!((m.a1_self[(0, 2)] + 4.16667).abs() < 1e-5);
        assert_eq!(m.a1_self.iter().filter(|v| **v != 0.0).count(), 1);
        let cross = &m.a1_cross[&1];
        assert_eq!(cross[(3, 2)], -1.2566);
        assert_eq!(cross.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn isolated_area_has_no_coupling() {
        let mut p = table2_area1();
        p.tie_coeffs.clear();
        p.tie_sum = 0.0;
        let m = build_area_matrices(&p, 0).unwrap();
        assert!(m.a1_cross.is_empty());
        assert_eq!(m.a0[(3, 2)], 0.0);
    }

    #[test]
    fn non_positive_time_constant_is_named() {
        let mut p = table2_area1();
        p.tg = 0.0;
        assert_eq!(build_area_matrices(&p, 0), Err(ModelError::NonPositive("tg")));
        let mut p = table2_area1();
        p.tp = -1.0;
        assert_eq!(build_area_matrices(&p, 0), Err(ModelError::NonPositive("tp")));
    }

    #[test]
    fn tie_sum_must_match_coefficients() {
        let mut p = table2_area1();
        p.tie_sum = 1.3;
        assert!(matches!(build_area_matrices(&p, 0), Err(ModelError::TieSumMismatch { .. })));
    }

    #[test]
    fn augmentation_rows() {
        let m = build_area_matrices(&table2_area1(), 0).unwrap();
        let a = augment_with_integrator(&m, -0.03, 1.0).unwrap();
        let row: Vec<f64> = (0..5).map(|c| a.a0[(4, c)]).collect();
        assert_eq!(row, [0.0, 0.0, -0.03, -0.03, 0.0]);
        assert_eq!(a.c.iter().copied().collect::<Vec<_>>(), [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.a1_cross[&1][(3, 2)], -1.2566);
        assert_eq!(a.a1_cross[&1].nrows(), 5);
        let z = augment_with_integrator(&m, 0.0, 1.0).unwrap();
        assert!((0..5).all(|c| z.a0[(4, c)] == 0.0));
        assert_eq!(augment_with_integrator(&a, -0.03, 1.0), Err(ModelError::AlreadyAugmented));
    }

    #[test]
    fn valve_examples() {
        assert_eq!(valve_nonlinearity(0.05, -0.03, 0.12), 0.0);
        assert!((valve_nonlinearity(0.20, -0.03, 0.12) + 0.08).abs() < 1e-15);
        assert!((valve_nonlinearity(-0.10, -0.03, 0.12) - 0.07).abs() < 1e-15);
    }

    #[test]
    fn bound_row_and_evaluation() {
        let b = nonlinearity_bound(&[table2_area1()]).unwrap();
        assert_eq!(b[0].h.iter().copied().collect::<Vec<_>>(), [2.5, 0.0, 0.0, 0.0]);
        assert_eq!(b[0].alpha, 1.0);
        let p = table2_area1();
        let lhs = (valve_nonlinearity(0.20, p.xg_min, p.xg_max) / p.tt).powi(2);
        let rhs = (b[0].h[(0, 0)] * 0.20).powi(2);
        assert!((lhs - 0.04).abs() < 1e-12 && (rhs - 0.25).abs() < 1e-12 && lhs <= rhs);
        let mut bad = table2_area1();
        bad.xg_min = 0.01;
        assert!(nonlinearity_bound(&[bad]).is_err());
    }

    #[test]
    fn cone_condition_examples() {
        let h = Mat::from_row_slice(1, 5, &[2.5, 0.0, 0.0, 0.0, 0.0]);
        assert!(verify_cone_condition(&h, core::slice::from_ref(&h), &[0.5], &[0.5]).unwrap());
        assert!(verify_cone_condition(&h, core::slice::from_ref(&h), &[0.5], &[1.0]).unwrap());
        let z = zeros(1, 5);
        assert!(!verify_cone_condition(&h, &[z], &[0.5], &[0.5]).unwrap());
        assert!(verify_cone_condition(&h, &[], &[0.5], &[0.5]).is_err());
    }

    #[test]
    fn delay_eval() {
        let d = DelayPair { base: 2.0, amplitude: 0.3, rate_bound: 0.3 };
        assert_eq!(d.eval(0.0), 2.0);
        assert!((d.eval(PI / 2.0) - 2.3).abs() < 1e-15);
        let c = DelayPair { base: 1.0, amplitude: 0.0, rate_bound: 0.0 };
        assert!(c.validate().is_ok());
        assert_eq!(c.eval(5.0), 1.0);
        let bad = DelayPair { base: 2.0, amplitude: 0.3, rate_bound: 1.5 };
        assert!(bad.validate().is_err());
        let neg = DelayPair { base: 0.2, amplitude: 0.3, rate_bound: 0.3 };
        assert!(neg.validate().is_err());
    }
}
