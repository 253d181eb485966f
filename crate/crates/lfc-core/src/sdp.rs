//! Dense primal-dual interior-point solver for small block-structured SDPs.
//!
//! Problems are stated in inequality form:
//!
//! ```text
//! minimize    cost · x
//! subject to  G_b(x) = F0_b + sum_k x_k F_kb  ⪰ 0   for every block b
//! ```
//!
//! which is the dual of the standard primal `min <C,X> s.t. <A_k,X> = b_k, X ⪰ 0`
//! with `C = F0`, `A_k = -F_k`, `b = -cost`. Iterates follow the HKM search
//! direction with a Mehrotra predictor-corrector step.

#[allow(unused_imports)]
use nalgebra::ComplexField;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Cholesky, DVector};

use crate::linalg::{eye, min_eig, symmetrize, zeros, Mat};

pub const SQRT2: f64 = core::f64::consts::SQRT_2;

/// Symmetric sparse matrix stored as upper-triangle triplets `(i, j, v)` with `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn from_dense(m: &Mat, drop_tol: f64) -> Self {
        let n = m.nrows();
        let mut entries = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v.abs() > drop_tol {
                    entries.push((i, j, v));
                }
            }
        }
        SymSparse { dim: n, entries }
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `<self, m>` for a dense symmetric `m`.
    pub fn inner(&self, m: &Mat) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * m[(i, i)] } else { v * (m[(i, j)] + m[(j, i)]) })
            .sum()
    }

    /// Accumulate `alpha * self` into a dense matrix.
    pub fn add_to(&self, m: &mut Mat, alpha: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += alpha * v;
            if i != j {
                m[(j, i)] += alpha * v;
            }
        }
    }

    /// `m * self` for dense `m`.
    fn left_mul(&self, m: &Mat) -> Mat {
        let mut out = zeros(m.nrows(), self.dim);
        for &(i, j, v) in &self.entries {
            for r in 0..m.nrows() {
                out[(r, j)] += m[(r, i)] * v;
            }
            if i != j {
                for r in 0..m.nrows() {
                    out[(r, i)] += m[(r, j)] * v;
                }
            }
        }
        out
    }

    fn fro2(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum()
    }
}

/// Number of svec coordinates for an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Column-major upper-triangle vectorization with off-diagonals scaled by sqrt(2).
pub fn svec(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push(SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> Mat {
    assert_eq!(v.len(), svec_len(n), "svec length mismatch");
    let mut m = zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] / SQRT2;
                m[(j, i)] = v[k] / SQRT2;
            }
            k += 1;
        }
    }
    m
}

/// Position of `(i, j)` (any order) inside an svec of dimension `n`, and the
/// factor relating the svec coordinate to the matrix entry.
pub fn svec_index(i: usize, j: usize) -> (usize, f64) {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    let k = j * (j + 1) / 2 + i;
    (k, if i == j { 1.0 } else { 1.0 / SQRT2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpStandardForm {
    pub blocks: Vec<usize>,
    pub block_names: Vec<String>,
    pub cost: Vec<f64>,
    pub constant: Vec<Mat>,
    /// `coeffs[k]` lists `(block, F_kb)` for every block touched by variable `k`.
    pub coeffs: Vec<Vec<(usize, SymSparse)>>,
}

impl SdpStandardForm {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    /// Evaluate `G_b(x)` for every block.
    pub fn eval(&self, x: &[f64]) -> Vec<Mat> {
        let mut out = self.constant.clone();
        for (k, list) in self.coeffs.iter().enumerate() {
            if x[k] == 0.0 {
                continue;
            }
            for (b, f) in list {
                f.add_to(&mut out[*b], x[k]);
            }
        }
        out
    }

    /// Plain-text dump: one header line per block then coordinate triplets.
    pub fn dump(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.num_vars());
        let _ = writeln!(s, "blocks {}", self.blocks.len());
        for (b, n) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "block {} {} {}", b, n, self.block_names[b]);
        }
        let _ = write!(s, "cost");
        for c in &self.cost {
            let _ = write!(s, " {:.17e}", c);
        }
        let _ = writeln!(s);
        for (b, f0) in self.constant.iter().enumerate() {
            for j in 0..f0.ncols() {
                for i in 0..=j {
                    if f0[(i, j)] != 0.0 {
                        let _ = writeln!(s, "0 {} {} {} {:.17e}", b, i, j, f0[(i, j)]);
                    }
                }
            }
        }
        for (k, list) in self.coeffs.iter().enumerate() {
            for (b, f) in list {
                for &(i, j, v) in &f.entries {
                    let _ = writeln!(s, "{} {} {} {} {:.17e}", k + 1, b, i, j, v);
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub step_fraction: f64,
    pub infeasibility_tol: f64,
    pub max_block_dim: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 120,
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            step_fraction: 0.95,
            infeasibility_tol: 1e-8,
            max_block_dim: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Lower bound on the objective from the dual multipliers.
    pub dual_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub min_block_eig: f64,
    /// Reason for an abnormal stop, empty otherwise.
    pub note: &'static str,
    pub trace: Vec<IterationLog>,
}

/// Per-iteration residuals and step lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
    pub primal_step: f64,
    pub dual_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpError {
    BlockTooLarge { block: usize, dim: usize, cap: usize },
    Dimension(&'static str),
    BadOptions(&'static str),
}

impl fmt::Display for SdpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SdpError::BlockTooLarge { block, dim, cap } => {
                write!(f, "block {block} has dimension {dim}, above the cap {cap}")
            }
            SdpError::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            SdpError::BadOptions(s) => write!(f, "invalid solver options: {s}"),
        }
    }
}

impl core::error::Error for SdpError {}

/// Minimum eigenvalue check of a symmetric matrix.
pub fn check_psd(m: &Mat, tol: f64) -> Result<(bool, f64), SdpError> {
    if m.nrows() != m.ncols() {
        return Err(SdpError::Dimension("matrix is not square"));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(SdpError::Dimension("matrix is not symmetric"));
    }
    let lmin = min_eig(m);
    Ok((lmin >= -tol, lmin))
}

// Scaled problem data used internally.
struct Scaled {
    blocks: Vec<usize>,
    c: Vec<Mat>,
    // per variable: per block entries (full symmetric expansion is done on the fly)
    a: Vec<Vec<(usize, SymSparse)>>,
    b: Vec<f64>,
    col_scale: Vec<f64>,
    c_scale: f64,
    b_scale: f64,
}

fn scale_problem(form: &SdpStandardForm) -> Scaled {
    let m = form.num_vars();
    let mut col_scale = vec![1.0; m];
    let mut a = Vec::with_capacity(m);
    for k in 0..m {
        let nrm: f64 = form.coeffs[k].iter().map(|(_, f)| f.fro2()).sum::<f64>().sqrt();
        let s = if nrm > 0.0 { nrm } else { 1.0 };
        col_scale[k] = s;
        a.push(
            form.coeffs[k]
                .iter()
                .map(|(blk, f)| {
                    let entries = f.entries.iter().map(|&(i, j, v)| (i, j, -v / s)).collect();
                    (*blk, SymSparse { dim: f.dim, entries })
                })
                .collect::<Vec<_>>(),
        );
    }
    let b: Vec<f64> = (0..m).map(|k| -form.cost[k] / col_scale[k]).collect();
    let cn: f64 = form.constant.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
    let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_scale = cn.max(1.0);
    let b_scale = bn.max(1.0);
    let c = form.constant.iter().map(|c| c / c_scale).collect();
    let b = b.iter().map(|v| v / b_scale).collect();
    Scaled { blocks: form.blocks.clone(), c, a, b, col_scale, c_scale, b_scale }
}

fn inner(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn a_op(sc: &Scaled, x: &[Mat]) -> DVector<f64> {
    DVector::from_iterator(
        sc.a.len(),
        sc.a.iter().map(|list| list.iter().map(|(b, f)| f.inner(&x[*b])).sum::<f64>()),
    )
}

fn at_op(sc: &Scaled, y: &DVector<f64>) -> Vec<Mat> {
    let mut out: Vec<Mat> = sc.blocks.iter().map(|&n| zeros(n, n)).collect();
    for (k, list) in sc.a.iter().enumerate() {
        if y[k] == 0.0 {
            continue;
        }
        for (b, f) in list {
            f.add_to(&mut out[*b], y[k]);
        }
    }
    out
}

// Largest step in (0, 1] keeping x + alpha * dx PSD, given the Cholesky factor of x.
fn max_step(l: &Mat, dx: &Mat) -> f64 {
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let t = &linv * dx * linv.transpose();
    let lmin = min_eig(&t);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn chol_lower(m: &Mat) -> Option<Mat> {
    Cholesky::new(symmetrize(m)).map(|c| c.l())
}

struct Direction {
    dx: Vec<Mat>,
    dy: DVector<f64>,
    dz: Vec<Mat>,
}

pub fn solve(form: &SdpStandardForm, opts: &SolverOptions) -> Result<SolveOutcome, SdpError> {
    if !(opts.gap_tol > 0.0 && opts.feas_tol > 0.0 && opts.infeasibility_tol > 0.0) {
        return Err(SdpError::BadOptions("tolerances must be positive"));
    }
    if !(opts.step_fraction > 0.0 && opts.step_fraction < 1.0) {
        return Err(SdpError::BadOptions("step fraction must lie in (0, 1)"));
    }
    if form.constant.len() != form.blocks.len() || form.coeffs.len() != form.cost.len() {
        return Err(SdpError::Dimension("block or variable count"));
    }
    for (b, &n) in form.blocks.iter().enumerate() {
        if n > opts.max_block_dim {
            return Err(SdpError::BlockTooLarge { block: b, dim: n, cap: opts.max_block_dim });
        }
        if form.constant[b].nrows() != n || form.constant[b].ncols() != n {
            return Err(SdpError::Dimension("constant block shape"));
        }
    }
    for list in &form.coeffs {
        for (b, f) in list {
            if *b >= form.blocks.len() || f.dim != form.blocks[*b] {
                return Err(SdpError::Dimension("coefficient block shape"));
            }
        }
    }

    let sc = scale_problem(form);
    let m = sc.b.len();
    let ntot: usize = sc.blocks.iter().sum();
    let nb = sc.blocks.len();

    let c_norm = inner(&sc.c, &sc.c).sqrt();
    let b_norm = sc.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let x0 = 10.0f64.max(b_norm.sqrt() * 10.0);
    let z0 = 10.0f64.max(c_norm * 10.0);
    let mut x: Vec<Mat> = sc.blocks.iter().map(|&n| eye(n) * x0).collect();
    let mut z: Vec<Mat> = sc.blocks.iter().map(|&n| eye(n) * z0).collect();
    let mut y = DVector::<f64>::zeros(m);
    let bvec = DVector::from_vec(sc.b.clone());

    let mut status = SolveStatus::IterationLimit;
    let mut iters = 0;
    // Gram matrix of the constraint matrices, used to pull search directions back onto A(dX) = r_p
    let gram_chol = {
        let mut g = Mat::zeros(m, m);
        let mut by_block: Vec<Vec<(usize, Mat)>> = vec![Vec::new(); nb];
        for (k, list) in sc.a.iter().enumerate() {
            for (b, f) in list {
                by_block[*b].push((k, f.to_dense()));
            }
        }
        for list in &by_block {
            for (jj, (j, aj)) in list.iter().enumerate() {
                for (i, ai) in list.iter().take(jj + 1) {
                    let v = ai.dot(aj);
                    g[(*i, *j)] += v;
                    if i != j {
                        g[(*j, *i)] += v;
                    }
                }
            }
        }
        Cholesky::new(g)
    };
    let mut note = "";
    let mut trace = Vec::new();
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for it in 0..opts.max_iterations {
        iters = it;
        let ax = a_op(&sc, &x);
        let rp = &bvec - &ax;
        let aty = at_op(&sc, &y);
        let rd: Vec<Mat> = (0..nb).map(|k| &sc.c[k] - &z[k] - &aty[k]).collect();
        let pobj = inner(&sc.c, &x);
        let dobj = bvec.dot(&y);
        let xz = inner(&x, &z);
        let mu = if ntot > 0 { xz / ntot as f64 } else { 0.0 };
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = inner(&rd, &rd).sqrt() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs().max(xz.abs()) / (1.0 + pobj.abs() + dobj.abs());
        last = (gap, pinf, dinf);

        if gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        // Unboundedness of the primal certifies an empty inequality-form problem.
        let xnorm = inner(&x, &x).sqrt();
        if pobj < 0.0 && xnorm > 1e6 {
            let ratio = ax.norm() / -pobj;
            if ratio < opts.infeasibility_tol.sqrt() && dinf > opts.feas_tol {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        if dobj > 0.0 && y.norm() > 1e12 && pinf > opts.feas_tol {
            status = SolveStatus::Unbounded;
            break;
        }
        if ntot > 0 && xnorm > 1e14 {
            status = SolveStatus::Infeasible;
            break;
        }

        let lx: Option<Vec<Mat>> = x.iter().map(chol_lower).collect();
        let lz: Option<Vec<Mat>> = z.iter().map(chol_lower).collect();
        let (lx, lz) = match (lx, lz) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                status = SolveStatus::NumericalFailure;
                note = "iterate lost positive definiteness";
                break;
            }
        };
        let lz_inv: Vec<Mat> = match lz.iter().map(|l| l.clone().try_inverse()).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => {
                status = SolveStatus::NumericalFailure;
                note = "dual slack not invertible";
                break;
            }
        };
        let zinv: Vec<Mat> = lz_inv.iter().map(|li| li.transpose() * li).collect();

        // Schur complement M_ij = sum_b tr(A_i X A_j Z^-1) as a Gram matrix of L_Z^-1 A_i L_X
        let mut mmat = Mat::zeros(m, m);
        let mut by_block: Vec<Vec<(usize, &SymSparse)>> = vec![Vec::new(); nb];
        for (k, list) in sc.a.iter().enumerate() {
            for (b, f) in list {
                by_block[*b].push((k, f));
            }
        }
        for b in 0..nb {
            let lxt = lx[b].transpose();
            let v: Vec<Mat> = by_block[b]
                .iter()
                .map(|&(_, a)| &lz_inv[b] * a.left_mul(&lxt).transpose())
                .collect();
            for (jj, &(j, _)) in by_block[b].iter().enumerate() {
                for (ii, &(i, _)) in by_block[b].iter().enumerate().take(jj + 1) {
                    let s = v[ii].dot(&v[jj]);
                    mmat[(i, j)] += s;
                    if i != j {
                        mmat[(j, i)] += s;
                    }
                }
            }
        }
        let mscale = mmat.diagonal().amax().max(1e-300);
        let mut chol = None;
        for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4] {
            let mut mm = mmat.clone();
            for d in 0..m {
                mm[(d, d)] += reg * mscale;
            }
            if let Some(c) = Cholesky::new(mm) {
                chol = Some(c);
                break;
            }
        }
        let chol = match chol {
            Some(c) => c,
            None if m == 0 => Cholesky::new(Mat::zeros(0, 0)).expect("empty"),
            None => {
                status = SolveStatus::NumericalFailure;
                note = "Schur complement not positive definite";
                break;
            }
        };

        let direction = |rc: &[Mat]| -> Direction {
            // K = (Rc - X Rd) Z^-1
            let k: Vec<Mat> = (0..nb).map(|b| (&rc[b] - &x[b] * &rd[b]) * &zinv[b]).collect();
            let rhs = &rp - a_op(&sc, &k.iter().map(symmetrize).collect::<Vec<_>>());
            let dy = if m > 0 {
                // iterative refinement against the unregularized Schur matrix
                let mut dy = chol.solve(&rhs);
                for _ in 0..2 {
                    let r = &rhs - &mmat * &dy;
                    dy += chol.solve(&r);
                }
                dy
            } else {
                DVector::zeros(0)
            };
            let atdy = at_op(&sc, &dy);
            let dz: Vec<Mat> = (0..nb).map(|b| &rd[b] - &atdy[b]).collect();
            let mut dx: Vec<Mat> = (0..nb)
                .map(|b| symmetrize(&(&k[b] + &x[b] * &atdy[b] * &zinv[b])))
                .collect();
            if let Some(g) = &gram_chol {
                let miss = &rp - a_op(&sc, &dx);
                let fix = at_op(&sc, &g.solve(&miss));
                for b in 0..nb {
                    dx[b] += &fix[b];
                }
            }
            Direction { dx, dy, dz }
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for b in 0..nb {
                ap = ap.min(max_step(&lx[b], &d.dx[b]));
                ad = ad.min(max_step(&lz[b], &d.dz[b]));
            }
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<Mat> = (0..nb).map(|b| -(&x[b] * &z[b])).collect();
        let aff = direction(&rc_aff);
        let (ap, ad) = steps(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let xz_aff: f64 = (0..nb)
            .map(|b| (&x[b] + &aff.dx[b] * ap).dot(&(&z[b] + &aff.dz[b] * ad)))
            .sum();
        let sigma = if xz > 0.0 { (xz_aff / xz).max(0.0).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let rc: Vec<Mat> = (0..nb)
            .map(|b| eye(sc.blocks[b]) * (sigma * mu) - &x[b] * &z[b] - &aff.dx[b] * &aff.dz[b])
            .collect();
        let d = direction(&rc);
        let (ap, ad) = steps(&d);
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || (ap < 1e-12 && ad < 1e-12) {
            status = SolveStatus::NumericalFailure;
            note = "step length collapsed";
            break;
        }
        trace.push(IterationLog { primal_infeasibility: pinf, dual_infeasibility: dinf, gap, primal_step: ap, dual_step: ad });
        for b in 0..nb {
            x[b] += &d.dx[b] * ap;
            z[b] += &d.dz[b] * ad;
            x[b] = symmetrize(&x[b]);
            z[b] = symmetrize(&z[b]);
        }
        y += &d.dy * ad;
        if y.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalFailure;
            note = "non-finite multipliers";
            break;
        }
        iters = it + 1;
    }

    // unscale: original variables x_k = y_k * c_scale / col_scale_k
    let xs: Vec<f64> = (0..m).map(|k| y[k] * sc.c_scale / sc.col_scale[k]).collect();
    let objective: f64 = xs.iter().zip(&form.cost).map(|(a, b)| a * b).sum();
    let dual_bound = -inner(&form.constant, &x) * sc.b_scale;
    let blocks = form.eval(&xs);
    let min_block_eig = blocks.iter().map(min_eig).fold(f64::INFINITY, f64::min);
    Ok(SolveOutcome {
        status,
        x: xs,
        objective,
        dual_bound,
        gap: last.0,
        iterations: iters,
        primal_residual: last.1,
        dual_residual: last.2,
        min_block_eig: if nb == 0 { 0.0 } else { min_block_eig },
        note,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(c0: f64, coeff: f64) -> (Mat, SymSparse) {
        let c = Mat::from_element(1, 1, c0);
        (c, SymSparse { dim: 1, entries: vec![(0, 0, coeff)] })
    }

    #[test]
    fn two_by_two_lmi_has_unit_optimum() {
        // [[x,1],[1,x]] ⪰ 0
        let c = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = SymSparse { dim: 2, entries: vec![(0, 0, 1.0), (1, 1, 1.0)] };
        let form = SdpStandardForm {
            blocks: vec![2],
            block_names: vec!["g".into()],
            cost: vec![1.0],
            constant: vec![c],
            coeffs: vec![vec![(0, f)]],
        };
        let out = solve(&form, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-6, "{}", out.x[0]);
    }

    #[test]
    fn constant_feasible_problem_without_variables() {
        // -I ⪯ 0 written as I ⪰ 0
        let form = SdpStandardForm {
            blocks: vec![3],
            block_names: vec!["g".into()],
            cost: vec![],
            constant: vec![eye(3)],
            coeffs: vec![],
        };
        let out = solve(&form, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.objective.abs() < 1e-12);
    }

    #[test]
    fn contradictory_scalars_are_infeasible() {
        // x >= 0 and -x - 1 >= 0
        let (c1, f1) = scalar_block(0.0, 1.0);
        let (c2, f2) = scalar_block(-1.0, -1.0);
        let form = SdpStandardForm {
            blocks: vec![1, 1],
            block_names: vec!["a".into(), "b".into()],
            cost: vec![1.0],
            constant: vec![c1, c2],
            coeffs: vec![vec![(0, f1), (1, f2)]],
        };
        let out = solve(&form, &SolverOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn check_psd_examples() {
        assert_eq!(check_psd(&eye(3), 0.0).unwrap(), (true, 1.0));
        let d = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (ok, l) = check_psd(&d, 1e-12).unwrap();
        assert!(!ok);
        assert!((l + 0.5).abs() < 1e-14);
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (ok, l) = check_psd(&m, 0.0).unwrap();
        assert!(ok);
        assert!((l - 1.0).abs() < 1e-14);
        let bad = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(check_psd(&bad, 0.0).is_err());
    }

    #[test]
    fn svec_of_two_by_two_has_three_coordinates() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = svec(&m);
        assert_eq!(v.len(), 3);
        assert!((v[1] - 2.0 * SQRT2).abs() < 1e-15);
    }

    #[test]
    fn oversized_block_rejected() {
        let form = SdpStandardForm {
            blocks: vec![5],
            block_names: vec!["g".into()],
            cost: vec![],
            constant: vec![eye(5)],
            coeffs: vec![],
        };
        let opts = SolverOptions { max_block_dim: 4, ..Default::default() };
        assert!(matches!(solve(&form, &opts), Err(SdpError::BlockTooLarge { .. })));
    }
}
