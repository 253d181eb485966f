//! Synthesis matrix inequalities for decentralized fixed-order output feedback,
//! controller recovery and closed-loop assembly.
//!
//! Closed-loop state layout is `[x_p1, x_c1, ..., x_pN, x_cN]`. The Lyapunov matrix is
//! `P = diag(P_p1, P_c1, ..., P_pN, P_cN)` and the block inequality is
//!
//! ```text
//! Π = [ Π11   Π12 ]  ⪯ -ε I
//!     [ Π12ᵀ  Π22 ]
//! ```
//!
//! with `Π12` column groups ordered: delay channels `(i, j)` lexicographic, disturbance,
//! nonlinearity, the four controller-perturbation channels (perturbed variants only), and the
//! scaled bound row `s1·H̃ᵀ`.

#[allow(unused_imports)]
use nalgebra::ComplexField;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{block_diag, eye, max_eig, min_eig, norm2, null_space, pinv, put, zeros, Mat};
use crate::model::{GlobalPlant, ModelError, IDX_FREQ, IDX_GEN, IDX_VALVE};
use crate::sdp::{self, smat, svec_index, svec_len, SdpStandardForm, SolveOutcome, SolveStatus, SolverOptions, SymSparse};

#[derive(Debug, Clone, PartialEq)]
pub enum LmiError {
    Model(ModelError),
    Sdp(sdp::SdpError),
    IllPosedDelay { from: usize, to: usize, rate: f64 },
    MissingDelay { from: usize, to: usize },
    NegativeBound(&'static str),
    Dimension(String),
    CertificateInvalid(String),
    UnknownVariable(String),
    NotSolved(SolveStatus),
}

impl fmt::Display for LmiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LmiError::Model(e) => write!(f, "model: {e}"),
            LmiError::Sdp(e) => write!(f, "solver: {e}"),
            LmiError::IllPosedDelay { from, to, rate } => write!(
                f,
                "delay ({from}, {to}) has rate bound {rate} >= 1; the delay weight block cannot be negative definite"
            ),
            LmiError::MissingDelay { from, to } => write!(f, "no delay entry for coupled pair ({from}, {to})"),
            LmiError::NegativeBound(name) => write!(f, "perturbation bound `{name}` is negative"),
            LmiError::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            LmiError::CertificateInvalid(s) => write!(f, "certificate invalid: {s}"),
            LmiError::UnknownVariable(s) => write!(f, "unknown variable `{s}`"),
            LmiError::NotSolved(s) => write!(f, "solver finished with status {s}"),
        }
    }
}

impl core::error::Error for LmiError {}

impl From<ModelError> for LmiError {
    fn from(e: ModelError) -> Self {
        LmiError::Model(e)
    }
}

impl From<sdp::SdpError> for LmiError {
    fn from(e: sdp::SdpError) -> Self {
        LmiError::Sdp(e)
    }
}

/// Which terms enter the inequality: delay channels and controller-perturbation channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisVariant {
    pub delayed: bool,
    pub perturbed: bool,
}

impl SynthesisVariant {
    pub fn label(&self) -> &'static str {
        match (self.delayed, self.perturbed) {
            (true, true) => "delayed-nonfragile",
            (true, false) => "delayed",
            (false, true) => "delay-free-nonfragile",
            (false, false) => "delay-free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerturbationBounds {
    pub delta_ac: f64,
    pub delta_bc: f64,
    pub delta_cc: f64,
    pub delta_dc: f64,
}

impl PerturbationBounds {
    pub fn uniform(d: f64) -> Self {
        PerturbationBounds { delta_ac: d, delta_bc: d, delta_cc: d, delta_dc: d }
    }

    pub fn validate(&self) -> Result<(), LmiError> {
        for (n, v) in [
            ("delta_ac", self.delta_ac),
            ("delta_bc", self.delta_bc),
            ("delta_cc", self.delta_cc),
            ("delta_dc", self.delta_dc),
        ] {
            if !(v >= 0.0) {
                return Err(LmiError::NegativeBound(n));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.delta_ac == 0.0 && self.delta_bc == 0.0 && self.delta_cc == 0.0 && self.delta_dc == 0.0
    }
}

/// Where the nonlinearity enters the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearityChannel {
    /// Full-width lifted vector `h` multiplying `P` directly.
    Unstructured,
    /// One scalar per area on the generator-power row.
    ValvePath,
}

/// Shape of the delay weights `R_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayWeight {
    Full,
    /// `R_ij = r_ij·e e^T` on the delayed frequency coordinate; the only column `A_dij` reads.
    FrequencyChannel,
}

/// One area's controller `(A_c, B_c, C_c, D_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaController {
    pub a_c: Mat,
    pub b_c: Mat,
    pub c_c: Mat,
    pub d_c: Mat,
}

impl AreaController {
    pub fn order(&self) -> usize {
        self.a_c.nrows()
    }

    /// Static output feedback `u = k·y`, padded with a decoupled stable controller of order `n`.
    pub fn static_gain(k: f64, n: usize) -> Self {
        AreaController {
            a_c: -eye(n),
            b_c: zeros(n, 1),
            c_c: zeros(1, n),
            d_c: Mat::from_element(1, 1, k),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AreaController {
            a_c: &self.a_c * factor,
            b_c: &self.b_c * factor,
            c_c: &self.c_c * factor,
            d_c: &self.d_c * factor,
        }
    }
}

/// How the controller enters the inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerParam {
    /// Unconstrained change-of-variables matrices `Y, Q, W, U`.
    Free,
    /// `Y_i = v_i y_i`, `Q_i = v_i q_i` together with `P_pi B_i ∥ v_i`; recovery is exact.
    Aligned(Vec<Mat>),
    /// `C_c, D_c` fixed, `W = P_c B_c`, `U = P_c A_c` free.
    PlantFixed(Vec<AreaController>),
    /// Whole controller fixed (analysis of a given closed loop).
    Fixed(Vec<AreaController>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiOptions {
    pub channel: NonlinearityChannel,
    pub delay_weight: DelayWeight,
    /// Restrict the inequality to the complement of conserved plant directions.
    pub conserved_projection: bool,
    pub param: ControllerParam,
    /// Adds `γ1_i <= cap·s1`.
    pub robustness_cap: Option<f64>,
    /// Norm bound on every matrix variable; keeps the optimal face bounded for the solver.
    pub variable_bound: Option<f64>,
    pub margin: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions {
            channel: NonlinearityChannel::ValvePath,
            delay_weight: DelayWeight::FrequencyChannel,
            conserved_projection: true,
            param: ControllerParam::Free,
            robustness_cap: None,
            variable_bound: Some(1e4),
            margin: 1e-6,
        }
    }
}

impl LmiOptions {
    /// Inequality exactly as the change of variables states it: free `Y, Q`, full-width
    /// nonlinearity channel, full delay weights, no projection.
    pub fn literal() -> Self {
        LmiOptions {
            channel: NonlinearityChannel::Unstructured,
            delay_weight: DelayWeight::Full,
            conserved_projection: false,
            param: ControllerParam::Free,
            robustness_cap: None,
            variable_bound: None,
            margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarShape {
    Sym(usize),
    Full(usize, usize),
}

impl VarShape {
    pub fn len(&self) -> usize {
        match *self {
            VarShape::Sym(n) => svec_len(n),
            VarShape::Full(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarInfo {
    pub name: String,
    pub shape: VarShape,
    pub offset: usize,
}

/// Declaration-ordered decision variables. Symmetric matrices use svec coordinates,
/// rectangular ones column-major order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VarLayout {
    pub vars: Vec<VarInfo>,
    len: usize,
}

impl VarLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: VarShape) {
        let l = shape.len();
        self.vars.push(VarInfo { name: name.into(), shape, offset: self.len });
        self.len += l;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn find(&self, name: &str) -> Option<&VarInfo> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn get(&self, x: &[f64], name: &str) -> Result<Mat, LmiError> {
        let v = self.find(name).ok_or_else(|| LmiError::UnknownVariable(name.to_string()))?;
        Ok(read_var(v, x))
    }

    pub fn scalar(&self, x: &[f64], name: &str) -> Result<f64, LmiError> {
        Ok(self.get(x, name)?[(0, 0)])
    }

    pub fn set(&self, x: &mut [f64], name: &str, m: &Mat) -> Result<(), LmiError> {
        let v = self.find(name).ok_or_else(|| LmiError::UnknownVariable(name.to_string()))?;
        match v.shape {
            VarShape::Sym(n) => {
                let s = sdp::svec(m);
                if m.nrows() != n {
                    return Err(LmiError::Dimension(format!("variable {name}")));
                }
                x[v.offset..v.offset + s.len()].copy_from_slice(&s);
            }
            VarShape::Full(r, c) => {
                if m.nrows() != r || m.ncols() != c {
                    return Err(LmiError::Dimension(format!("variable {name}")));
                }
                for (k, val) in m.iter().enumerate() {
                    x[v.offset + k] = *val;
                }
            }
        }
        Ok(())
    }

    /// Copy every variable that exists under the same name and shape in `other`.
    pub fn transfer(&self, x: &[f64], other: &VarLayout) -> Vec<f64> {
        let mut out = vec![0.0; other.len()];
        for v in &other.vars {
            if let Some(src) = self.find(&v.name) {
                if src.shape == v.shape {
                    let n = v.shape.len();
                    out[v.offset..v.offset + n].copy_from_slice(&x[src.offset..src.offset + n]);
                }
            }
        }
        out
    }
}

fn read_var(v: &VarInfo, x: &[f64]) -> Mat {
    let s = &x[v.offset..v.offset + v.shape.len()];
    match v.shape {
        VarShape::Sym(n) => smat(s, n),
        VarShape::Full(r, c) => Mat::from_column_slice(r, c, s),
    }
}

pub fn name_pp(i: usize) -> String {
    format!("P_p[{i}]")
}
pub fn name_pc(i: usize) -> String {
    format!("P_c[{i}]")
}
pub fn name_y(i: usize) -> String {
    format!("Y[{i}]")
}
pub fn name_q(i: usize) -> String {
    format!("Q[{i}]")
}
pub fn name_w(i: usize) -> String {
    format!("W[{i}]")
}
pub fn name_u(i: usize) -> String {
    format!("U[{i}]")
}
pub fn name_r(i: usize, j: usize) -> String {
    format!("R[{i},{j}]")
}
pub fn name_g1(i: usize) -> String {
    format!("gamma1[{i}]")
}
pub fn name_g2(i: usize) -> String {
    format!("gamma2[{i}]")
}
pub fn name_s(k: usize) -> String {
    format!("s{k}")
}

/// Named column group of the block inequality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiGroup {
    pub name: String,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiLayout {
    /// First entry is the closed-loop state block.
    pub groups: Vec<PiGroup>,
}

impl PiLayout {
    pub fn dim(&self) -> usize {
        self.groups.iter().map(|g| g.width).sum()
    }

    pub fn offset(&self, name: &str) -> Option<usize> {
        let mut o = 0;
        for g in &self.groups {
            if g.name == name {
                return Some(o);
            }
            o += g.width;
        }
        None
    }

    pub fn width(&self, name: &str) -> Option<usize> {
        self.groups.iter().find(|g| g.name == name).map(|g| g.width)
    }
}

/// Matrix constraint `G(x) = constant + Σ x_k F_k ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub constant: Mat,
    pub coeffs: Vec<(usize, SymSparse)>,
}

impl LmiBlock {
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for (k, f) in &self.coeffs {
            f.add_to(&mut m, x[*k]);
        }
        m
    }
}

/// Everything needed to rebuild `Π` from a variable assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PiSpec {
    pub plant: GlobalPlant,
    pub orders: Vec<usize>,
    pub bounds: PerturbationBounds,
    pub variant: SynthesisVariant,
    pub rho: Vec<f64>,
    pub options: LmiOptions,
    /// Delay channels kept in the inequality with their rate bounds.
    pub delay_pairs: Vec<((usize, usize), f64)>,
    pub layout: VarLayout,
    pub pi_layout: PiLayout,
    /// Closed-loop offsets of each area's plant and controller states.
    pub cl_offsets: Vec<(usize, usize)>,
    pub cl_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub spec: PiSpec,
    pub objective: Vec<f64>,
    /// Coefficient form of `Π` over the original variables.
    pub pi_constant: Mat,
    pub pi_coeffs: Vec<(usize, SymSparse)>,
    /// Orthonormal basis of the subspace on which `Π` must be negative definite.
    pub projection: Option<Mat>,
    /// Linear equalities `E x = 0` on the variables.
    pub equality: Option<Mat>,
    /// Positivity and auxiliary constraints, each `⪰ 0`.
    pub side_blocks: Vec<LmiBlock>,
}

/// Affine reparametrization `x = offset + basis·ξ` removing equality constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub offset: Vec<f64>,
    pub basis: Mat,
}

impl Reduction {
    pub fn expand(&self, xi: &[f64]) -> Vec<f64> {
        let mut x = self.offset.clone();
        for (k, &v) in xi.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (r, xr) in x.iter_mut().enumerate() {
                *xr += self.basis[(r, k)] * v;
            }
        }
        x
    }
}

fn is_gain_variable(name: &str) -> bool {
    ["Y[", "Q[", "W[", "U["].iter().any(|p| name.starts_with(p))
}

pub fn conserved_directions(spec_plant: &GlobalPlant, cl_offsets: &[(usize, usize)], cl_dim: usize) -> Mat {
    // left null space of [A0 + ΣA_d | B | B_w | G] in plant coordinates, lifted to the closed loop
    let p = spec_plant;
    let n = p.state_dim;
    let nb = p.b_glob.ncols() + p.bw_glob.ncols() + p.n_areas;
    let mut m = zeros(n, n + nb);
    put(&mut m, 0, 0, &p.frozen_a());
    put(&mut m, 0, n, &p.b_glob);
    put(&mut m, 0, n + p.b_glob.ncols(), &p.bw_glob);
    for i in 0..p.n_areas {
        m[(p.offsets[i] + IDX_GEN, n + p.b_glob.ncols() + p.bw_glob.ncols() + i)] = 1.0;
    }
    let left = null_space(&m.transpose(), 1e-12);
    let mut out = zeros(cl_dim, left.ncols());
    for c in 0..left.ncols() {
        for i in 0..p.n_areas {
            for k in 0..p.area_dim(i) {
                out[(cl_offsets[i].0 + k, c)] = left[(p.offsets[i] + k, c)];
            }
        }
    }
    out
}

pub fn assemble_synthesis_lmi(
    plant: &GlobalPlant,
    delays: &crate::model::DelaySpec,
    controller_orders: &[usize],
    bounds: PerturbationBounds,
    variant: SynthesisVariant,
    rho: &[f64],
    options: LmiOptions,
) -> Result<LmiProblem, LmiError> {
    let n_areas = plant.n_areas;
    if controller_orders.len() != n_areas || rho.len() != n_areas {
        return Err(LmiError::Dimension("controller orders and weights need one entry per area".into()));
    }
    if plant.per_area.iter().any(|a| !a.augmented) {
        return Err(LmiError::Model(ModelError::NotAugmented));
    }
    bounds.validate()?;
    if !(options.margin > 0.0) {
        return Err(LmiError::Dimension("margin must be positive".into()));
    }
    match &options.param {
        ControllerParam::PlantFixed(c) | ControllerParam::Fixed(c) => {
            if c.len() != n_areas {
                return Err(LmiError::Dimension("one controller per area".into()));
            }
            for (i, k) in c.iter().enumerate() {
                if k.order() != controller_orders[i] || k.b_c.nrows() != k.order() || k.c_c.ncols() != k.order() {
                    return Err(LmiError::Dimension(format!("controller {i} order")));
                }
            }
        }
        ControllerParam::Aligned(v) => {
            if v.len() != n_areas {
                return Err(LmiError::Dimension("one alignment direction per area".into()));
            }
            for (i, d) in v.iter().enumerate() {
                if d.nrows() != plant.area_dim(i) || d.ncols() != 1 || d.norm() == 0.0 {
                    return Err(LmiError::Dimension(format!("alignment direction {i}")));
                }
            }
        }
        ControllerParam::Free => {}
    }

    // delay channels
    let mut delay_pairs = Vec::new();
    if variant.delayed {
        for (&(i, j), ad) in &plant.a_d {
            if ad.iter().all(|v| *v == 0.0) {
                continue;
            }
            let d = delays.get(i, j).ok_or(LmiError::MissingDelay { from: i, to: j })?;
            if !(d.rate_bound < 1.0) {
                return Err(LmiError::IllPosedDelay { from: i, to: j, rate: d.rate_bound });
            }
            delay_pairs.push(((i, j), d.rate_bound));
        }
    }

    let mut cl_offsets = Vec::new();
    let mut acc = 0;
    for i in 0..n_areas {
        cl_offsets.push((acc, acc + plant.area_dim(i)));
        acc += plant.area_dim(i) + controller_orders[i];
    }
    let cl_dim = acc;
    let nc_tot: usize = controller_orders.iter().sum();

    // variables
    let mut layout = VarLayout::default();
    for i in 0..n_areas {
        layout.push(name_pp(i), VarShape::Sym(plant.area_dim(i)));
        layout.push(name_pc(i), VarShape::Sym(controller_orders[i]));
    }
    for i in 0..n_areas {
        let np = plant.area_dim(i);
        let nc = controller_orders[i];
        match &options.param {
            ControllerParam::Free => {
                layout.push(name_y(i), VarShape::Full(np, 1));
                layout.push(name_q(i), VarShape::Full(np, nc));
                layout.push(name_w(i), VarShape::Full(nc, 1));
                layout.push(name_u(i), VarShape::Full(nc, nc));
            }
            ControllerParam::Aligned(_) => {
                layout.push(name_y(i), VarShape::Full(1, 1));
                layout.push(name_q(i), VarShape::Full(1, nc));
                layout.push(name_w(i), VarShape::Full(nc, 1));
                layout.push(name_u(i), VarShape::Full(nc, nc));
            }
            ControllerParam::PlantFixed(_) => {
                layout.push(name_w(i), VarShape::Full(nc, 1));
                layout.push(name_u(i), VarShape::Full(nc, nc));
            }
            ControllerParam::Fixed(_) => {}
        }
    }
    for &((i, j), _) in &delay_pairs {
        match options.delay_weight {
            DelayWeight::Full => layout.push(name_r(i, j), VarShape::Sym(cl_dim)),
            DelayWeight::FrequencyChannel => layout.push(name_r(i, j), VarShape::Full(1, 1)),
        }
    }
    for i in 0..n_areas {
        layout.push(name_g1(i), VarShape::Full(1, 1));
    }
    for i in 0..n_areas {
        layout.push(name_g2(i), VarShape::Full(1, 1));
    }
    layout.push(name_s(1), VarShape::Full(1, 1));
    if variant.perturbed {
        for k in 2..=5 {
            layout.push(name_s(k), VarShape::Full(1, 1));
        }
    }

    // block layout of Π
    let mut groups = vec![PiGroup { name: "x".into(), width: cl_dim }];
    for &((i, j), _) in &delay_pairs {
        let w = match options.delay_weight {
            DelayWeight::Full => cl_dim,
            DelayWeight::FrequencyChannel => 1,
        };
        groups.push(PiGroup { name: format!("delay({i},{j})"), width: w });
    }
    groups.push(PiGroup { name: "w".into(), width: n_areas });
    groups.push(PiGroup {
        name: "h".into(),
        width: match options.channel {
            NonlinearityChannel::Unstructured => cl_dim,
            NonlinearityChannel::ValvePath => n_areas,
        },
    });
    if variant.perturbed {
        groups.push(PiGroup { name: "z1".into(), width: n_areas });
        groups.push(PiGroup { name: "z2".into(), width: n_areas });
        groups.push(PiGroup { name: "z3".into(), width: nc_tot });
        groups.push(PiGroup { name: "z4".into(), width: nc_tot });
    }
    groups.push(PiGroup { name: "bound".into(), width: n_areas });
    let pi_layout = PiLayout { groups };

    let spec = PiSpec {
        plant: plant.clone(),
        orders: controller_orders.to_vec(),
        bounds,
        variant,
        rho: rho.to_vec(),
        options: options.clone(),
        delay_pairs,
        layout,
        pi_layout,
        cl_offsets,
        cl_dim,
    };

    let nv = spec.layout.len();
    let zero = vec![0.0; nv];
    let pi_constant = spec.pi(&zero)?;
    let mut pi_coeffs = Vec::new();
    let mut e = zero.clone();
    for k in 0..nv {
        e[k] = 1.0;
        let f = spec.pi(&e)? - &pi_constant;
        e[k] = 0.0;
        let sp = SymSparse::from_dense(&f, 0.0);
        if !sp.is_empty() {
            pi_coeffs.push((k, sp));
        }
    }

    let mut objective = vec![0.0; nv];
    for i in 0..n_areas {
        objective[spec.layout.find(&name_g1(i)).unwrap().offset] = 1.0;
        objective[spec.layout.find(&name_g2(i)).unwrap().offset] = rho[i];
    }

    let projection = if options.conserved_projection {
        let l = conserved_directions(plant, &spec.cl_offsets, cl_dim);
        if l.ncols() == 0 {
            None
        } else {
            let dim = spec.pi_layout.dim();
            let mut lt = zeros(l.ncols(), dim);
            put(&mut lt, 0, 0, &l.transpose());
            Some(null_space(&lt, 1e-12))
        }
    } else {
        None
    };

    let equality = if let ControllerParam::Aligned(dirs) = &options.param {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for i in 0..n_areas {
            let v = &dirs[i];
            let np = plant.area_dim(i);
            let proj = eye(np) - v * v.transpose() / v.norm_squared();
            let b = &plant.per_area[i].b;
            let info = spec.layout.find(&name_pp(i)).unwrap().clone();
            // (I - vvᵀ/|v|²)·P·b, one row per entry, linear in the svec coordinates of P
            for r in 0..np {
                let mut row = vec![0.0; nv];
                for a in 0..np {
                    for c in 0..np {
                        let coef = proj[(r, a)] * b[(c, 0)];
                        if coef == 0.0 {
                            continue;
                        }
                        let (k, f) = svec_index(a, c);
                        row[info.offset + k] += coef * f;
                    }
                }
                rows.push(row);
            }
        }
        let mut m = zeros(rows.len(), nv);
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        Some(m)
    } else {
        None
    };

    let side_blocks = spec.side_blocks();
    Ok(LmiProblem { spec, objective, pi_constant, pi_coeffs, projection, equality, side_blocks })
}

impl PiSpec {
    fn n_areas(&self) -> usize {
        self.plant.n_areas
    }

    /// `P = diag(P_p1, P_c1, ...)`.
    pub fn lyapunov(&self, x: &[f64]) -> Result<Mat, LmiError> {
        let mut blocks = Vec::new();
        for i in 0..self.n_areas() {
            blocks.push(self.layout.get(x, &name_pp(i))?);
            blocks.push(self.layout.get(x, &name_pc(i))?);
        }
        Ok(block_diag(&blocks))
    }

    /// Per-area `(Y, Q, W, U)` implied by the parametrization.
    pub fn change_of_variables(&self, x: &[f64], i: usize) -> Result<(Mat, Mat, Mat, Mat), LmiError> {
        let pp = self.layout.get(x, &name_pp(i))?;
        let pc = self.layout.get(x, &name_pc(i))?;
        let b = &self.plant.per_area[i].b;
        Ok(match &self.options.param {
            ControllerParam::Free => (
                self.layout.get(x, &name_y(i))?,
                self.layout.get(x, &name_q(i))?,
                self.layout.get(x, &name_w(i))?,
                self.layout.get(x, &name_u(i))?,
            ),
            ControllerParam::Aligned(v) => (
                &v[i] * self.layout.get(x, &name_y(i))?,
                &v[i] * self.layout.get(x, &name_q(i))?,
                self.layout.get(x, &name_w(i))?,
                self.layout.get(x, &name_u(i))?,
            ),
            ControllerParam::PlantFixed(c) => (
                &pp * b * &c[i].d_c,
                &pp * b * &c[i].c_c,
                self.layout.get(x, &name_w(i))?,
                self.layout.get(x, &name_u(i))?,
            ),
            ControllerParam::Fixed(c) => {
                (&pp * b * &c[i].d_c, &pp * b * &c[i].c_c, &pc * &c[i].b_c, &pc * &c[i].a_c)
            }
        })
    }

    fn delay_matrix(&self, i: usize, j: usize) -> Mat {
        // global plant delay block lifted into closed-loop coordinates
        let p = &self.plant;
        let src = &p.a_d[&(i, j)];
        let mut out = zeros(self.cl_dim, self.cl_dim);
        for a in 0..p.n_areas {
            for b in 0..p.n_areas {
                for r in 0..p.area_dim(a) {
                    for c in 0..p.area_dim(b) {
                        let v = src[(p.offsets[a] + r, p.offsets[b] + c)];
                        if v != 0.0 {
                            out[(self.cl_offsets[a].0 + r, self.cl_offsets[b].0 + c)] = v;
                        }
                    }
                }
            }
        }
        out
    }

    fn freq_unit(&self, j: usize) -> Mat {
        let mut e = zeros(self.cl_dim, 1);
        e[(self.cl_offsets[j].0 + IDX_FREQ, 0)] = 1.0;
        e
    }

    /// Disturbance input `E` in closed-loop coordinates.
    pub fn disturbance_matrix(&self) -> Mat {
        let mut e = zeros(self.cl_dim, self.n_areas());
        for i in 0..self.n_areas() {
            let bw = &self.plant.per_area[i].bw;
            for r in 0..bw.nrows() {
                e[(self.cl_offsets[i].0 + r, i)] = bw[(r, 0)];
            }
        }
        e
    }

    /// Nonlinearity injection matrix `G` (identity for the unstructured channel).
    pub fn injection_matrix(&self) -> Mat {
        match self.options.channel {
            NonlinearityChannel::Unstructured => eye(self.cl_dim),
            NonlinearityChannel::ValvePath => {
                let mut g = zeros(self.cl_dim, self.n_areas());
                for i in 0..self.n_areas() {
                    g[(self.cl_offsets[i].0 + IDX_GEN, i)] = 1.0;
                }
                g
            }
        }
    }

    /// `H̃` in closed-loop coordinates (`N x n`).
    pub fn bound_matrix(&self) -> Mat {
        let mut h = zeros(self.n_areas(), self.cl_dim);
        for i in 0..self.n_areas() {
            for k in 0..self.plant.area_dim(i) {
                h[(i, self.cl_offsets[i].0 + k)] = self.plant.h_bound[(i, self.plant.offsets[i] + k)];
            }
        }
        h
    }

    /// `[B_i; 0]` blocks (`n x N`) and `[0; I]` blocks (`n x Σ n_ci`).
    pub fn perturbation_inputs(&self) -> (Mat, Mat) {
        let nc_tot: usize = self.orders.iter().sum();
        let mut bg = zeros(self.cl_dim, self.n_areas());
        let mut ig = zeros(self.cl_dim, nc_tot);
        let mut c0 = 0;
        for i in 0..self.n_areas() {
            let b = &self.plant.per_area[i].b;
            for r in 0..b.nrows() {
                bg[(self.cl_offsets[i].0 + r, i)] = b[(r, 0)];
            }
            for k in 0..self.orders[i] {
                ig[(self.cl_offsets[i].1 + k, c0 + k)] = 1.0;
            }
            c0 += self.orders[i];
        }
        (bg, ig)
    }

    fn diag_scalars(&self, x: &[f64], f: fn(usize) -> String) -> Result<Mat, LmiError> {
        let mut d = zeros(self.n_areas(), self.n_areas());
        for i in 0..self.n_areas() {
            d[(i, i)] = self.layout.scalar(x, &f(i))?;
        }
        Ok(d)
    }

    /// Evaluate `Π(x)` directly from the block definitions.
    pub fn pi(&self, x: &[f64]) -> Result<Mat, LmiError> {
        let n = self.cl_dim;
        let dim = self.pi_layout.dim();
        let mut pi = zeros(dim, dim);
        let p = self.lyapunov(x)?;
        let perturbed = self.variant.perturbed;
        let s = |k: usize| self.layout.scalar(x, &name_s(k));
        let s1 = s(1)?;
        let (s2, s3, s4, s5) = if perturbed { (s(2)?, s(3)?, s(4)?, s(5)?) } else { (0.0, 0.0, 0.0, 0.0) };
        let bd = &self.bounds;

        // Π11 diagonal blocks
        for i in 0..self.n_areas() {
            let a = &self.plant.per_area[i];
            let np = a.dim();
            let nc = self.orders[i];
            let pp = self.layout.get(x, &name_pp(i))?;
            let (y, q, w, u) = self.change_of_variables(x, i)?;
            let ctc = a.c.transpose() * &a.c;
            let mut l11 = a.a0.transpose() * &pp + &pp * &a.a0 + &y * &a.c + a.c.transpose() * y.transpose() + &ctc;
            let mut l22 = &u + u.transpose();
            if perturbed {
                let cn2 = norm2(&a.c).powi(2);
                l11 += eye(np) * ((s3 * bd.delta_dc.powi(2) + s5 * bd.delta_bc.powi(2)) * cn2);
                l22 += eye(nc) * (s2 * bd.delta_cc.powi(2) + s4 * bd.delta_ac.powi(2));
            }
            let l12 = a.c.transpose() * w.transpose() + q;
            let (op, oc) = self.cl_offsets[i];
            put(&mut pi, op, op, &l11);
            put(&mut pi, op, oc, &l12);
            put(&mut pi, oc, op, &l12.transpose());
            put(&mut pi, oc, oc, &l22);
        }

        let mut col = 0;
        let place = |pi: &mut Mat, c12: &Mat, c22: &Mat, col: &mut usize| {
            let o = n + *col;
            put(pi, 0, o, c12);
            put(pi, o, 0, &c12.transpose());
            put(pi, o, o, c22);
            *col += c12.ncols();
        };

        if self.variant.delayed {
            for &((i, j), d) in &self.delay_pairs {
                let ad = self.delay_matrix(i, j);
                match self.options.delay_weight {
                    DelayWeight::Full => {
                        let r = self.layout.get(x, &name_r(i, j))?;
                        let mut top = pi.view((0, 0), (n, n)).into_owned();
                        top += &r;
                        put(&mut pi, 0, 0, &top);
                        place(&mut pi, &(&p * &ad), &(-(1.0 - d) * &r), &mut col);
                    }
                    DelayWeight::FrequencyChannel => {
                        let r = self.layout.scalar(x, &name_r(i, j))?;
                        let e = self.freq_unit(j);
                        let mut top = pi.view((0, 0), (n, n)).into_owned();
                        top += &e * e.transpose() * r;
                        put(&mut pi, 0, 0, &top);
                        place(&mut pi, &(&p * &ad * &e), &Mat::from_element(1, 1, -(1.0 - d) * r), &mut col);
                    }
                }
            }
        } else {
            let mut sum = zeros(n, n);
            for &(i, j) in self.plant.a_d.keys() {
                sum += self.delay_matrix(i, j);
            }
            let he = &p * &sum + (&p * &sum).transpose();
            let mut top = pi.view((0, 0), (n, n)).into_owned();
            top += he;
            put(&mut pi, 0, 0, &top);
        }

        let g2 = self.diag_scalars(x, name_g2)?;
        place(&mut pi, &(&p * self.disturbance_matrix()), &(-g2), &mut col);
        let g = self.injection_matrix();
        place(&mut pi, &(&p * &g), &(-eye(g.ncols()) * s1), &mut col);
        if perturbed {
            let (bg, ig) = self.perturbation_inputs();
            place(&mut pi, &(&p * &bg), &(-eye(bg.ncols()) * s2), &mut col);
            place(&mut pi, &(&p * &bg), &(-eye(bg.ncols()) * s3), &mut col);
            place(&mut pi, &(&p * &ig), &(-eye(ig.ncols()) * s4), &mut col);
            place(&mut pi, &(&p * &ig), &(-eye(ig.ncols()) * s5), &mut col);
        }
        let g1 = self.diag_scalars(x, name_g1)?;
        place(&mut pi, &(self.bound_matrix().transpose() * s1), &(-g1), &mut col);
        debug_assert_eq!(n + col, dim);
        Ok(pi)
    }

    fn side_blocks(&self) -> Vec<LmiBlock> {
        let eps = self.options.margin;
        let mut out = Vec::new();
        let sym_block = |name: &str, info: &VarInfo, shift: f64| -> LmiBlock {
            let n = match info.shape {
                VarShape::Sym(n) => n,
                VarShape::Full(..) => 1,
            };
            let mut coeffs = Vec::new();
            for k in 0..info.shape.len() {
                let mut e = vec![0.0; info.shape.len()];
                e[k] = 1.0;
                let m = match info.shape {
                    VarShape::Sym(n) => smat(&e, n),
                    VarShape::Full(..) => Mat::from_element(1, 1, 1.0),
                };
                coeffs.push((info.offset + k, SymSparse::from_dense(&m, 0.0)));
            }
            LmiBlock { name: name.to_string(), constant: -eye(n) * shift, coeffs }
        };
        for v in &self.layout.vars {
            let positive = v.name.starts_with("P_") || v.name.starts_with("gamma") || v.name.starts_with('s');
            let weight = v.name.starts_with("R[");
            if v.shape.is_empty() {
                continue;
            }
            if positive {
                out.push(sym_block(&v.name, v, eps));
            } else if weight {
                out.push(sym_block(&v.name, v, 0.0));
            }
        }
        if let Some(kappa) = self.options.variable_bound {
            for v in &self.layout.vars {
                if v.shape.is_empty() {
                    continue;
                }
                match v.shape {
                    VarShape::Sym(n) => {
                        let mut b = sym_block(&v.name, v, 0.0);
                        b.name = format!("bound {}", v.name);
                        b.constant = eye(n) * kappa;
                        for (_, f) in b.coeffs.iter_mut() {
                            for e in f.entries.iter_mut() {
                                e.2 = -e.2;
                            }
                        }
                        out.push(b);
                    }
                    VarShape::Full(r, c) if is_gain_variable(&v.name) => {
                        // [[κI, M], [Mᵀ, κI]] ⪰ 0
                        let n = r + c;
                        let mut coeffs = Vec::new();
                        for k in 0..r * c {
                            let (i, j) = (k % r, k / r);
                            coeffs.push((v.offset + k, SymSparse { dim: n, entries: vec![(i, r + j, 1.0)] }));
                        }
                        out.push(LmiBlock { name: format!("bound {}", v.name), constant: eye(n) * kappa, coeffs });
                    }
                    VarShape::Full(..) => {}
                }
            }
        }
        if let Some(cap) = self.options.robustness_cap {
            let s1 = self.layout.find(&name_s(1)).unwrap().offset;
            for i in 0..self.n_areas() {
                let g = self.layout.find(&name_g1(i)).unwrap().offset;
                out.push(LmiBlock {
                    name: format!("cap[{i}]"),
                    constant: zeros(1, 1),
                    coeffs: vec![
                        (s1, SymSparse { dim: 1, entries: vec![(0, 0, cap)] }),
                        (g, SymSparse { dim: 1, entries: vec![(0, 0, -1.0)] }),
                    ],
                });
            }
        }
        out
    }
}

impl LmiProblem {
    pub fn num_vars(&self) -> usize {
        self.spec.layout.len()
    }

    /// `Π(x)` from the stored coefficient form.
    pub fn pi(&self, x: &[f64]) -> Mat {
        let mut m = self.pi_constant.clone();
        for (k, f) in &self.pi_coeffs {
            f.add_to(&mut m, x[*k]);
        }
        m
    }

    /// `Π` restricted to the certified subspace.
    pub fn constrained_pi(&self, x: &[f64]) -> Mat {
        let pi = self.pi(x);
        match &self.projection {
            Some(n) => n.transpose() * pi * n,
            None => pi,
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_standard_form(&self, max_block_dim: usize) -> Result<(SdpStandardForm, Reduction), LmiError> {
        let nv = self.num_vars();
        let reduction = match &self.equality {
            Some(e) => Reduction { offset: vec![0.0; nv], basis: null_space(e, 1e-11) },
            None => Reduction { offset: vec![0.0; nv], basis: eye(nv) },
        };
        let nr = reduction.basis.ncols();
        let eps = self.spec.options.margin;

        let mut blocks = Vec::new();
        let mut names = Vec::new();
        let mut constant = Vec::new();
        let mut per_var: Vec<Vec<Mat>> = Vec::new();

        // main block: -(NᵀΠN) - εI ⪰ 0
        let congr = |m: &Mat| -> Mat {
            match &self.projection {
                Some(n) => n.transpose() * m * n,
                None => m.clone(),
            }
        };
        let pdim = match &self.projection {
            Some(n) => n.ncols(),
            None => self.pi_constant.nrows(),
        };
        if pdim > max_block_dim {
            return Err(LmiError::Sdp(sdp::SdpError::BlockTooLarge { block: 0, dim: pdim, cap: max_block_dim }));
        }
        let mut all: Vec<(String, Mat, Vec<(usize, SymSparse)>)> = Vec::new();
        {
            let c0 = -congr(&self.pi_constant) - eye(pdim) * eps;
            let coeffs = self
                .pi_coeffs
                .iter()
                .map(|(k, f)| (*k, SymSparse::from_dense(&(-congr(&f.to_dense())), 0.0)))
                .collect();
            all.push(("pi".into(), c0, coeffs));
        }
        for b in &self.side_blocks {
            all.push((b.name.clone(), b.constant.clone(), b.coeffs.clone()));
        }

        for (name, c0, coeffs) in all {
            let n = c0.nrows();
            let mut c = c0;
            // offset contribution
            for (k, f) in &coeffs {
                if reduction.offset[*k] != 0.0 {
                    f.add_to(&mut c, reduction.offset[*k]);
                }
            }
            let mut reduced: Vec<Mat> = Vec::new();
            if self.equality.is_some() {
                let mut dense: Vec<Mat> = (0..nr).map(|_| zeros(n, n)).collect();
                for (k, f) in &coeffs {
                    for (j, d) in dense.iter_mut().enumerate() {
                        let z = reduction.basis[(*k, j)];
                        if z != 0.0 {
                            f.add_to(d, z);
                        }
                    }
                }
                reduced = dense;
            } else {
                let mut dense: Vec<Option<Mat>> = vec![None; nv];
                for (k, f) in coeffs {
                    dense[k] = Some(f.to_dense());
                }
                for d in dense {
                    reduced.push(d.unwrap_or_else(|| zeros(0, 0)));
                }
            }
            blocks.push(n);
            names.push(name);
            constant.push(c);
            per_var.push(reduced);
        }

        let mut coeffs: Vec<Vec<(usize, SymSparse)>> = vec![Vec::new(); nr];
        for (b, list) in per_var.iter().enumerate() {
            for (k, m) in list.iter().enumerate() {
                if m.nrows() == 0 {
                    continue;
                }
                let sp = SymSparse::from_dense(m, 1e-14 * m.amax().max(1e-300));
                if !sp.is_empty() {
                    coeffs[k].push((b, sp));
                }
            }
        }
        let mut cost = vec![0.0; nr];
        for (j, c) in cost.iter_mut().enumerate() {
            *c = (0..nv).map(|k| self.objective[k] * reduction.basis[(k, j)]).sum();
        }
        Ok((SdpStandardForm { blocks, block_names: names, cost, constant, coeffs }, reduction))
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<LmiSolution, LmiError> {
        let (form, red) = self.to_standard_form(opts.max_block_dim)?;
        let out = sdp::solve(&form, opts)?;
        let x = red.expand(&out.x);
        let certificate = max_eig(&self.constrained_pi(&x));
        Ok(LmiSolution { x, outcome: out, certificate })
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub x: Vec<f64>,
    pub outcome: SolveOutcome,
    /// `λ_max` of the constrained `Π` at `x`.
    pub certificate: f64,
}

impl LmiSolution {
    pub fn is_optimal(&self) -> bool {
        self.outcome.status == SolveStatus::Optimal
    }
}

/// `λ_max(Π(x))` on the certified subspace.
pub fn certificate_residual(solution: &[f64], problem: &LmiProblem) -> f64 {
    max_eig(&problem.constrained_pi(solution))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryResiduals {
    /// `‖P_p B C_c - Q‖`
    pub c_c: f64,
    /// `‖P_p B D_c - Y‖`
    pub d_c: f64,
    /// `‖P_c A_c - U‖`
    pub a_c: f64,
    /// `‖P_c B_c - W‖`
    pub b_c: f64,
}

impl RecoveryResiduals {
    pub fn max(&self) -> f64 {
        self.c_c.max(self.d_c).max(self.a_c).max(self.b_c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedController {
    pub areas: Vec<AreaController>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    /// Multiplier of the nonlinearity bound; the certified class is `hᵀh <= s1·xᵀH̃ᵀΓ1⁻¹H̃x`.
    pub s1: f64,
    pub robustness_degree: Vec<f64>,
    pub attenuation_level: Vec<f64>,
    pub recovery_residuals: Vec<RecoveryResiduals>,
}

impl DecentralizedController {
    pub fn new(areas: Vec<AreaController>, gamma1: Vec<f64>, gamma2: Vec<f64>, s1: f64) -> Self {
        let n = areas.len();
        let mut c = DecentralizedController {
            areas,
            gamma1,
            gamma2,
            s1,
            robustness_degree: Vec::new(),
            attenuation_level: Vec::new(),
            recovery_residuals: vec![RecoveryResiduals::default(); n],
        };
        c.refresh_derived();
        c
    }

    pub fn refresh_derived(&mut self) {
        self.robustness_degree = self.gamma1.iter().map(|g| 1.0 / libm::sqrt(*g)).collect();
        self.attenuation_level = self.gamma2.iter().map(|g| libm::sqrt(*g)).collect();
    }

    /// Derived fields agree with the γ values.
    pub fn is_consistent(&self, tol: f64) -> bool {
        self.gamma1.len() == self.robustness_degree.len()
            && self.gamma2.len() == self.attenuation_level.len()
            && self.gamma1.iter().zip(&self.robustness_degree).all(|(g, r)| (r - 1.0 / libm::sqrt(*g)).abs() <= tol)
            && self.gamma2.iter().zip(&self.attenuation_level).all(|(g, a)| (a - libm::sqrt(*g)).abs() <= tol)
    }

    /// Robustness degree of the class the certificate actually covers, `sqrt(s1/γ1)`.
    pub fn certified_degree(&self) -> Vec<f64> {
        self.gamma1.iter().map(|g| libm::sqrt(self.s1 / g)).collect()
    }

    pub fn orders(&self) -> Vec<usize> {
        self.areas.iter().map(AreaController::order).collect()
    }
}

pub fn recover_controller(solution: &[f64], problem: &LmiProblem) -> Result<DecentralizedController, LmiError> {
    let spec = &problem.spec;
    let n_areas = spec.plant.n_areas;
    let tol = 1e-12;
    let mut areas = Vec::with_capacity(n_areas);
    let mut residuals = Vec::with_capacity(n_areas);
    for i in 0..n_areas {
        let pp = spec.layout.get(solution, &name_pp(i))?;
        let pc = spec.layout.get(solution, &name_pc(i))?;
        let lp = min_eig(&pp);
        if !(lp > tol) {
            return Err(LmiError::CertificateInvalid(format!("P_p[{i}] is not positive definite (λ_min = {lp:e})")));
        }
        if pc.nrows() > 0 {
            let lc = min_eig(&pc);
            if !(lc > tol) {
                return Err(LmiError::CertificateInvalid(format!("P_c[{i}] is not positive definite (λ_min = {lc:e})")));
            }
        }
        let (y, q, w, u) = spec.change_of_variables(solution, i)?;
        let b = &spec.plant.per_area[i].b;
        let bp = pinv(b);
        let pp_inv = pp
            .clone()
            .try_inverse()
            .ok_or_else(|| LmiError::CertificateInvalid(format!("P_p[{i}] is singular")))?;
        let (a_c, b_c) = if pc.nrows() > 0 {
            let pc_inv = pc
                .clone()
                .try_inverse()
                .ok_or_else(|| LmiError::CertificateInvalid(format!("P_c[{i}] is singular")))?;
            (&pc_inv * &u, &pc_inv * &w)
        } else {
            (zeros(0, 0), zeros(0, 1))
        };
        let c_c = &bp * &pp_inv * &q;
        let d_c = &bp * &pp_inv * &y;
        residuals.push(RecoveryResiduals {
            c_c: (&pp * b * &c_c - &q).norm(),
            d_c: (&pp * b * &d_c - &y).norm(),
            a_c: (&pc * &a_c - &u).norm(),
            b_c: (&pc * &b_c - &w).norm(),
        });
        areas.push(AreaController { a_c, b_c, c_c, d_c });
    }
    let gamma1 = (0..n_areas).map(|i| spec.layout.scalar(solution, &name_g1(i))).collect::<Result<Vec<_>, _>>()?;
    let gamma2 = (0..n_areas).map(|i| spec.layout.scalar(solution, &name_g2(i))).collect::<Result<Vec<_>, _>>()?;
    let s1 = spec.layout.scalar(solution, &name_s(1))?;
    let mut ctrl = DecentralizedController::new(areas, gamma1, gamma2, s1);
    ctrl.recovery_residuals = residuals;
    Ok(ctrl)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub a_clp: Mat,
    pub a_dclp: BTreeMap<(usize, usize), Mat>,
    pub e_clp: Mat,
    pub c_cl: Mat,
    /// `H̃ = [H_i 0]` rows in closed-loop coordinates.
    pub h_tilde: Mat,
    /// Offsets of `(x_pi, x_ci)` inside the closed-loop state.
    pub offsets: Vec<(usize, usize)>,
    pub plant_dims: Vec<usize>,
    pub orders: Vec<usize>,
    /// Per-area control law rows: `u_i = k_u[i]·x` (plant output feedback plus controller output).
    pub control_rows: Mat,
    pub valves: Vec<ValveChannel>,
}

/// Valve saturation of one area: adds `gain·μ(x[state])` to row `row`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValveChannel {
    pub state: usize,
    pub row: usize,
    pub gain: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ClosedLoopSystem {
    pub fn dim(&self) -> usize {
        self.a_clp.nrows()
    }

    pub fn n_areas(&self) -> usize {
        self.offsets.len()
    }

    /// `A_clp + Σ A_dclp`.
    pub fn frozen(&self) -> Mat {
        let mut a = self.a_clp.clone();
        for m in self.a_dclp.values() {
            a += m;
        }
        a
    }
}

pub fn closed_loop_matrices(plant: &GlobalPlant, ctrl: &DecentralizedController) -> Result<ClosedLoopSystem, LmiError> {
    let n_areas = plant.n_areas;
    if ctrl.areas.len() != n_areas {
        return Err(LmiError::Dimension("one controller per area".into()));
    }
    let mut offsets = Vec::new();
    let mut acc = 0;
    for i in 0..n_areas {
        let k = &ctrl.areas[i];
        let nc = k.order();
        if k.b_c.nrows() != nc || k.c_c.ncols() != nc || k.d_c.shape() != (1, 1) || k.a_c.ncols() != nc {
            return Err(LmiError::Dimension(format!("controller {i} matrices")));
        }
        offsets.push((acc, acc + plant.area_dim(i)));
        acc += plant.area_dim(i) + nc;
    }
    let n = acc;
    let mut a = zeros(n, n);
    let mut e = zeros(n, n_areas);
    let mut c = zeros(n_areas, n);
    let mut h = zeros(n_areas, n);
    let mut urows = zeros(n_areas, n);
    for i in 0..n_areas {
        let am = &plant.per_area[i];
        let k = &ctrl.areas[i];
        let (op, oc) = offsets[i];
        put(&mut a, op, op, &(&am.a0 + &am.b * &k.d_c * &am.c));
        put(&mut a, op, oc, &(&am.b * &k.c_c));
        put(&mut a, oc, op, &(&k.b_c * &am.c));
        put(&mut a, oc, oc, &k.a_c);
        put(&mut e, op, i, &am.bw);
        put(&mut c, i, op, &am.c);
        for kk in 0..am.dim() {
            h[(i, op + kk)] = plant.h_bound[(i, plant.offsets[i] + kk)];
        }
        put(&mut urows, i, op, &(&k.d_c * &am.c));
        put(&mut urows, i, oc, &k.c_c);
    }
    let mut a_d = BTreeMap::new();
    for (&(i, j), m) in &plant.a_d {
        let mut out = zeros(n, n);
        let blk = m.view((plant.offsets[i], plant.offsets[j]), (plant.area_dim(i), plant.area_dim(j))).into_owned();
        put(&mut out, offsets[i].0, offsets[j].0, &blk);
        a_d.insert((i, j), out);
    }
    Ok(ClosedLoopSystem {
        a_clp: a,
        a_dclp: a_d,
        e_clp: e,
        c_cl: c,
        h_tilde: h,
        offsets: offsets.clone(),
        plant_dims: (0..n_areas).map(|i| plant.area_dim(i)).collect(),
        orders: ctrl.orders(),
        control_rows: urows,
        valves: (0..n_areas)
            .map(|i| {
                let p = &plant.params[i];
                ValveChannel { state: offsets[i].0 + IDX_VALVE, row: offsets[i].0 + IDX_GEN, gain: 1.0 / p.tt, lo: p.xg_min, hi: p.xg_max }
            })
            .collect(),
    })
}

/// Settings for the iterative design loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSettings {
    pub orders: Vec<usize>,
    pub bounds: PerturbationBounds,
    pub variant: SynthesisVariant,
    pub rho: Vec<f64>,
    pub options: LmiOptions,
    pub solver: SolverOptions,
    /// Static gains tried to seed the loop; the best feasible one is kept.
    pub initial_gains: Vec<f64>,
    /// Explicit seed controllers tried before the static gains.
    pub initial_controllers: Vec<Vec<AreaController>>,
    pub max_rounds: usize,
    pub rel_improvement: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub status: SolveStatus,
    pub problem: Option<LmiProblem>,
    pub solution: Option<LmiSolution>,
    pub controller: Option<DecentralizedController>,
    /// Objective after each accepted solve.
    pub history: Vec<f64>,
    pub solves: usize,
}

impl SynthesisResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal && self.controller.is_some()
    }
}

fn assemble_with(
    plant: &GlobalPlant,
    delays: &crate::model::DelaySpec,
    s: &SynthesisSettings,
    param: ControllerParam,
) -> Result<LmiProblem, LmiError> {
    let mut opts = s.options.clone();
    opts.param = param;
    assemble_synthesis_lmi(plant, delays, &s.orders, s.bounds, s.variant, &s.rho, opts)
}

/// Design loop.
///
/// With `ControllerParam::Free` a single solve is made. Otherwise a seed controller is certified
/// with the plant-side gains held fixed, then two convex steps alternate: free `(C_c, D_c)` along the
/// current `P_p B` direction, and free `(A_c, B_c)` with `(C_c, D_c)` held. Each step keeps the
/// previous point feasible, so the objective never increases.
pub fn synthesize(
    plant: &GlobalPlant,
    delays: &crate::model::DelaySpec,
    s: &SynthesisSettings,
) -> Result<SynthesisResult, LmiError> {
    let mut solves = 0;
    if s.options.param == ControllerParam::Free {
        let prob = assemble_with(plant, delays, s, ControllerParam::Free)?;
        let sol = prob.solve(&s.solver)?;
        solves += 1;
        let status = sol.outcome.status;
        let ctrl = if status == SolveStatus::Optimal { recover_controller(&sol.x, &prob).ok() } else { None };
        let history = vec![sol.outcome.objective];
        return Ok(SynthesisResult { status, problem: Some(prob), solution: Some(sol), controller: ctrl, history, solves });
    }

    let mut seeds: Vec<Vec<AreaController>> = s.initial_controllers.clone();
    for &k in &s.initial_gains {
        seeds.push(s.orders.iter().map(|&n| AreaController::static_gain(k, n)).collect());
    }
    let mut best: Option<(LmiProblem, LmiSolution, DecentralizedController)> = None;
    let mut last_status = SolveStatus::Infeasible;
    for seed in seeds {
        let prob = assemble_with(plant, delays, s, ControllerParam::PlantFixed(seed))?;
        let sol = prob.solve(&s.solver)?;
        solves += 1;
        last_status = sol.outcome.status;
        if !sol.is_optimal() {
            continue;
        }
        let Ok(ctrl) = recover_controller(&sol.x, &prob) else { continue };
        let better = best.as_ref().is_none_or(|b| sol.outcome.objective < b.1.outcome.objective);
        if better {
            best = Some((prob, sol, ctrl));
        }
    }
    let Some((mut prob, mut sol, mut ctrl)) = best else {
        return Ok(SynthesisResult { status: last_status, problem: None, solution: None, controller: None, history: Vec::new(), solves });
    };
    let mut history = vec![sol.outcome.objective];

    for _ in 0..s.max_rounds {
        let before = sol.outcome.objective;
        // free (C_c, D_c) along the current P_p B direction
        let dirs: Vec<Mat> = (0..plant.n_areas)
            .map(|i| prob.spec.layout.get(&sol.x, &name_pp(i)).map(|pp| pp * &plant.per_area[i].b))
            .collect::<Result<_, _>>()?;
        let aligned = assemble_with(plant, delays, s, ControllerParam::Aligned(dirs))?;
        let a_sol = aligned.solve(&s.solver)?;
        solves += 1;
        if !a_sol.is_optimal() || a_sol.outcome.objective > before {
            break;
        }
        let Ok(a_ctrl) = recover_controller(&a_sol.x, &aligned) else { break };
        // free (A_c, B_c) with the new plant-side gains
        let fixed = assemble_with(plant, delays, s, ControllerParam::PlantFixed(a_ctrl.areas.clone()))?;
        let f_sol = fixed.solve(&s.solver)?;
        solves += 1;
        let (np, ns, nc) = if f_sol.is_optimal() && f_sol.outcome.objective <= a_sol.outcome.objective {
            match recover_controller(&f_sol.x, &fixed) {
                Ok(c) => (fixed, f_sol, c),
                Err(_) => (aligned, a_sol, a_ctrl),
            }
        } else {
            (aligned, a_sol, a_ctrl)
        };
        prob = np;
        sol = ns;
        ctrl = nc;
        history.push(sol.outcome.objective);
        if before - sol.outcome.objective < s.rel_improvement * before.abs() {
            break;
        }
    }
    Ok(SynthesisResult {
        status: SolveStatus::Optimal,
        problem: Some(prob),
        solution: Some(sol),
        controller: Some(ctrl),
        history,
        solves,
    })
}

/// Rebuild `Π` with the recovered controller substituted back (no change of variables) and the
/// same Lyapunov, delay-weight and multiplier values; returns `λ_max` on the certified subspace.
pub fn substituted_certificate(
    solution: &[f64],
    problem: &LmiProblem,
    ctrl: &DecentralizedController,
) -> Result<f64, LmiError> {
    let s = &problem.spec;
    let mut opts = s.options.clone();
    opts.param = ControllerParam::Fixed(ctrl.areas.clone());
    let delays = delays_from_pairs(&s.delay_pairs);
    let fixed = assemble_synthesis_lmi(&s.plant, &delays, &s.orders, s.bounds, s.variant, &s.rho, opts)?;
    let x = s.layout.transfer(solution, &fixed.spec.layout);
    Ok(certificate_residual(&x, &fixed))
}

fn delays_from_pairs(pairs: &[((usize, usize), f64)]) -> crate::model::DelaySpec {
    let mut d = crate::model::DelaySpec::none();
    for &((i, j), rate) in pairs {
        d.pairs.insert((i, j), crate::model::DelayPair { base: 1.0, amplitude: 0.0, rate_bound: rate });
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_plant, tie_pair, AreaParameters, DelayPair, DelaySpec};

    fn two_area(ke: [f64; 2]) -> Vec<AreaParameters> {
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

    fn delays() -> DelaySpec {
        DelaySpec::uniform(2, DelayPair { base: 2.0, amplitude: 0.3, rate_bound: 0.3 })
    }

    fn problem(variant: SynthesisVariant, opts: LmiOptions) -> LmiProblem {
        let d = if variant.delayed { delays() } else { DelaySpec::none() };
        let plant = build_plant(&two_area([-0.03, -0.02]), &d).unwrap();
        let bounds = if variant.perturbed { PerturbationBounds::uniform(0.1) } else { PerturbationBounds::default() };
        assemble_synthesis_lmi(&plant, &d, &[2, 2], bounds, variant, &[1.0, 1.0], opts).unwrap()
    }

    fn widths(p: &LmiProblem) -> Vec<(String, usize)> {
        p.spec.pi_layout.groups.iter().map(|g| (g.name.clone(), g.width)).collect()
    }

    #[test]
    fn census_delay_free_literal() {
        let p = problem(SynthesisVariant { delayed: false, perturbed: false }, LmiOptions::literal());
        let w = widths(&p);
        assert_eq!(w, vec![("x".into(), 14), ("w".into(), 2), ("h".into(), 14), ("bound".into(), 2)]);
        let (form, _) = p.to_standard_form(2000).unwrap();
        // Π, then P_p/P_c for both areas, four γ entries and s1
        assert_eq!(form.blocks, vec![32, 5, 2, 5, 2, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn census_delayed_nonfragile_full_weights() {
        let p = problem(SynthesisVariant { delayed: true, perturbed: true }, LmiOptions::literal());
        let w = widths(&p);
        let delay: Vec<usize> = w.iter().filter(|(n, _)| n.starts_with("delay")).map(|g| g.1).collect();
        assert_eq!(delay, vec![14; 4]);
        let z: Vec<usize> = w.iter().filter(|(n, _)| n.starts_with('z')).map(|g| g.1).collect();
        assert_eq!(z, vec![2, 2, 4, 4]);
    }

    #[test]
    fn pi_is_affine_and_symmetric() {
        let p = problem(SynthesisVariant { delayed: true, perturbed: true }, LmiOptions::default());
        let n = p.num_vars();
        let xa: Vec<f64> = (0..n).map(|k| libm::sin(k as f64 * 1.3) + 0.2).collect();
        let xb: Vec<f64> = (0..n).map(|k| libm::cos(k as f64 * 0.7) - 0.1).collect();
        let a = 0.37;
        let mix: Vec<f64> = xa.iter().zip(&xb).map(|(u, v)| a * u + (1.0 - a) * v).collect();
        let direct = p.spec.pi(&mix).unwrap();
        let comb = p.spec.pi(&xa).unwrap() * a + p.spec.pi(&xb).unwrap() * (1.0 - a);
        let scale = direct.amax().max(1.0);
        assert!((&direct - &comb).amax() <= 1e-12 * scale);
        assert!((&direct - direct.transpose()).amax() <= 1e-12 * scale);
        assert!((&direct - p.pi(&mix)).amax() <= 1e-12 * scale);
    }

    #[test]
    fn projection_removes_tie_line_sum() {
        let p = problem(SynthesisVariant { delayed: false, perturbed: false }, LmiOptions::default());
        let nb = p.projection.as_ref().unwrap();
        assert_eq!(nb.ncols(), p.spec.pi_layout.dim() - 1);
        let mut l = zeros(p.spec.pi_layout.dim(), 1);
        l[(IDX_TIE_CL0, 0)] = 1.0;
        l[(7 + IDX_TIE_CL0, 0)] = 1.0;
        assert!((l.transpose() * nb).amax() < 1e-10);
    }
    const IDX_TIE_CL0: usize = crate::model::IDX_TIE;

    #[test]
    fn rejects_rate_bound_at_one() {
        let d = DelaySpec::uniform(2, DelayPair { base: 2.0, amplitude: 0.3, rate_bound: 1.0 });
        let plant = build_plant(&two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
        let v = SynthesisVariant { delayed: true, perturbed: false };
        let e = assemble_synthesis_lmi(&plant, &d, &[2, 2], PerturbationBounds::default(), v, &[1.0, 1.0], LmiOptions::default());
        assert!(matches!(e, Err(LmiError::IllPosedDelay { .. })));
    }

    #[test]
    fn rejects_negative_bound() {
        let plant = build_plant(&two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
        let v = SynthesisVariant { delayed: false, perturbed: true };
        let mut b = PerturbationBounds::uniform(0.1);
        b.delta_bc = -0.1;
        let e = assemble_synthesis_lmi(&plant, &DelaySpec::none(), &[2, 2], b, v, &[1.0, 1.0], LmiOptions::default());
        assert_eq!(e.unwrap_err(), LmiError::NegativeBound("delta_bc"));
    }

    #[test]
    fn aligned_equality_forces_parallel_pb() {
        let plant = build_plant(&two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
        let dirs: Vec<Mat> = (0..2).map(|_| Mat::from_column_slice(5, 1, &[3.0, 1.0, 0.0, 0.5, -1.0])).collect();
        let mut opts = LmiOptions::default();
        opts.param = ControllerParam::Aligned(dirs.clone());
        let v = SynthesisVariant { delayed: false, perturbed: false };
        let p = assemble_synthesis_lmi(&plant, &DelaySpec::none(), &[2, 2], PerturbationBounds::default(), v, &[1.0, 1.0], opts)
            .unwrap();
        let (_, red) = p.to_standard_form(2000).unwrap();
        let xi: Vec<f64> = (0..red.basis.ncols()).map(|k| libm::sin(k as f64 + 0.5)).collect();
        let x = red.expand(&xi);
        for i in 0..2 {
            let pb = p.spec.layout.get(&x, &name_pp(i)).unwrap() * &plant.per_area[i].b;
            let v = &dirs[i];
            let perp = &pb - v * (v.transpose() * &pb) / v.norm_squared();
            assert!(perp.amax() < 1e-10 * pb.amax().max(1.0));
        }
    }

    #[test]
    fn layout_transfer_keeps_shared_names() {
        let a = problem(SynthesisVariant { delayed: false, perturbed: false }, LmiOptions::default());
        let mut o = LmiOptions::default();
        o.param = ControllerParam::Fixed(vec![AreaController::static_gain(2.0, 2); 2]);
        let b = problem(SynthesisVariant { delayed: false, perturbed: false }, o);
        let x: Vec<f64> = (0..a.num_vars()).map(|k| k as f64).collect();
        let y = a.spec.layout.transfer(&x, &b.spec.layout);
        assert_eq!(a.spec.layout.get(&x, "P_p[1]").unwrap(), b.spec.layout.get(&y, "P_p[1]").unwrap());
        assert_eq!(a.spec.layout.scalar(&x, "s1").unwrap(), b.spec.layout.scalar(&y, "s1").unwrap());
    }

    #[test]
    fn closed_loop_of_static_gain() {
        let plant = build_plant(&two_area([-0.03, -0.02]), &DelaySpec::none()).unwrap();
        let ctrl = DecentralizedController::new(vec![AreaController::static_gain(6.0, 2); 2], vec![1.0; 2], vec![1.0; 2], 1.0);
        let cl = closed_loop_matrices(&plant, &ctrl).unwrap();
        assert_eq!(cl.dim(), 14);
        // u = 6·y_c enters the valve row through 1/T_g
        assert!((cl.a_clp[(0, 4)] - 6.0 / 0.08).abs() < 1e-12);
        assert!((cl.a_clp[(7, 11)] - 6.0 / 0.06).abs() < 1e-12);
        assert!(ctrl.is_consistent(1e-15));
    }
}
