//! Controller files, trace CSV and verification reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lfc_core::dde::SimulationTrace;
use lfc_core::linalg::Mat;
use lfc_core::lmi::{
    AreaController, ClosedLoopSystem, ControllerParam, DecentralizedController, LmiProblem, VarShape,
};
use lfc_core::model::{valve_nonlinearity, IDX_FREQ, IDX_GEN, IDX_INT, IDX_TIE, IDX_VALVE};
use lfc_core::verify::VerificationReport;

use crate::Error;

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Mat, Error> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged matrix".into()));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub order: usize,
    pub a_c: Vec<Vec<f64>>,
    pub b_c: Vec<Vec<f64>>,
    pub c_c: Vec<Vec<f64>>,
    pub d_c: Vec<Vec<f64>>,
}

impl AreaRecord {
    pub fn from_core(a: &AreaController) -> Self {
        AreaRecord { order: a.order(), a_c: rows(&a.a_c), b_c: rows(&a.b_c), c_c: rows(&a.c_c), d_c: rows(&a.d_c) }
    }

    pub fn to_core(&self) -> Result<AreaController, Error> {
        let n = self.order;
        Ok(AreaController {
            a_c: from_rows(&self.a_c, n)?,
            b_c: from_rows(&self.b_c, 1)?,
            c_c: from_rows(&self.c_c, n)?,
            d_c: from_rows(&self.d_c, 1)?,
        })
    }
}

/// Parametrization of the final solve, enough to rebuild its inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamRecord {
    Free,
    Aligned { directions: Vec<Vec<f64>> },
    PlantFixed { areas: Vec<AreaRecord> },
    Fixed { areas: Vec<AreaRecord> },
}

impl ParamRecord {
    pub fn from_core(p: &ControllerParam) -> Self {
        let areas = |c: &[AreaController]| c.iter().map(AreaRecord::from_core).collect();
        match p {
            ControllerParam::Free => ParamRecord::Free,
            ControllerParam::Aligned(v) => {
                ParamRecord::Aligned { directions: v.iter().map(|m| m.iter().copied().collect()).collect() }
            }
            ControllerParam::PlantFixed(c) => ParamRecord::PlantFixed { areas: areas(c) },
            ControllerParam::Fixed(c) => ParamRecord::Fixed { areas: areas(c) },
        }
    }

    pub fn to_core(&self) -> Result<ControllerParam, Error> {
        let areas = |a: &[AreaRecord]| a.iter().map(AreaRecord::to_core).collect::<Result<Vec<_>, _>>();
        Ok(match self {
            ParamRecord::Free => ControllerParam::Free,
            ParamRecord::Aligned { directions } => {
                ControllerParam::Aligned(directions.iter().map(|v| Mat::from_column_slice(v.len(), 1, v)).collect())
            }
            ParamRecord::PlantFixed { areas: a } => ControllerParam::PlantFixed(areas(a)?),
            ParamRecord::Fixed { areas: a } => ControllerParam::Fixed(areas(a)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    pub scenario: String,
    pub scenario_hash: String,
    pub variant: String,
    pub objective: f64,
    pub certificate: f64,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub s1: f64,
    pub robustness_degree: Vec<f64>,
    pub attenuation_level: Vec<f64>,
    pub areas: Vec<AreaRecord>,
    pub param: ParamRecord,
    /// Solver variables by name in solver coordinates: svec for symmetric matrices
    /// (off-diagonals scaled by √2), column-major otherwise. Kept raw so that the
    /// audit sees the exact solver vector.
    pub variables: BTreeMap<String, Vec<f64>>,
}

fn coordinates(shape: &VarShape) -> usize {
    match *shape {
        VarShape::Sym(n) => n * (n + 1) / 2,
        VarShape::Full(r, c) => r * c,
    }
}

impl ControllerFile {
    pub fn new(
        scenario: &str,
        scenario_hash: &str,
        problem: &LmiProblem,
        x: &[f64],
        certificate: f64,
        ctrl: &DecentralizedController,
    ) -> Result<Self, Error> {
        let layout = &problem.spec.layout;
        let mut variables = BTreeMap::new();
        for v in &layout.vars {
            let len = coordinates(&v.shape);
            variables.insert(v.name.clone(), x[v.offset..v.offset + len].to_vec());
        }
        Ok(ControllerFile {
            scenario: scenario.into(),
            scenario_hash: scenario_hash.into(),
            variant: problem.spec.variant.label().into(),
            objective: problem.objective_value(x),
            certificate,
            gamma1: ctrl.gamma1.clone(),
            gamma2: ctrl.gamma2.clone(),
            s1: ctrl.s1,
            robustness_degree: ctrl.robustness_degree.clone(),
            attenuation_level: ctrl.attenuation_level.clone(),
            areas: ctrl.areas.iter().map(AreaRecord::from_core).collect(),
            param: ParamRecord::from_core(&problem.spec.options.param),
            variables,
        })
    }

    pub fn controller(&self) -> Result<DecentralizedController, Error> {
        let areas = self.areas.iter().map(AreaRecord::to_core).collect::<Result<Vec<_>, _>>()?;
        Ok(DecentralizedController::new(areas, self.gamma1.clone(), self.gamma2.clone(), self.s1))
    }

    /// Variable vector in the layout of `problem`.
    pub fn assignment(&self, problem: &LmiProblem) -> Result<Vec<f64>, Error> {
        let layout = &problem.spec.layout;
        let mut x = vec![0.0; layout.len()];
        for v in &layout.vars {
            let data = self.variables.get(&v.name).ok_or_else(|| Error::Format(format!("variable {} missing", v.name)))?;
            let len = coordinates(&v.shape);
            if data.len() != len {
                return Err(Error::Format(format!("variable {} has {} entries, expected {len}", v.name, data.len())));
            }
            x[v.offset..v.offset + len].copy_from_slice(data);
        }
        Ok(x)
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        let f = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok((f, crate::sha256_hex(text.as_bytes())))
    }
}

/// Written next to every trace so that `verify` can match it to its controller and scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub scenario_hash: String,
    pub controller_hash: String,
    pub label: String,
    pub step_s: f64,
    pub diverged_at_s: Option<f64>,
}

/// Plant columns per area: frequency, tie-line power, valve, generator power, integrated error.
const PLANT_COLUMNS: [(usize, &str); 5] =
    [(IDX_FREQ, "df"), (IDX_TIE, "dPtie"), (IDX_VALVE, "dXg"), (IDX_GEN, "dPg"), (IDX_INT, "yc")];

fn plant_columns(dim: usize) -> impl Iterator<Item = (usize, &'static str)> {
    PLANT_COLUMNS.into_iter().filter(move |(k, _)| *k < dim)
}

pub fn trace_header(sys: &ClosedLoopSystem) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..sys.n_areas() {
        for (_, name) in plant_columns(sys.plant_dims[i]) {
            h.push(format!("{name}{}", i + 1));
        }
        for k in 0..sys.orders[i] {
            h.push(format!("xc{}_{}", i + 1, k + 1));
        }
        h.push(format!("u{}", i + 1));
        h.push(format!("w{}", i + 1));
    }
    h
}

fn num(v: f64) -> String {
    // adding +0 turns -0 into +0
    format!("{:.11e}", v + 0.0)
}

/// Trace rows in closed-loop state order with 12 significant digits.
pub fn write_trace_csv(path: &Path, trace: &SimulationTrace, sys: &ClosedLoopSystem) -> Result<(), Error> {
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(trace_header(sys)).map_err(io)?;
    for k in 0..trace.len() {
        let x = trace.state(k);
        let mut rec = vec![num(trace.times[k])];
        for i in 0..sys.n_areas() {
            let (op, oc) = sys.offsets[i];
            for (k, _) in plant_columns(sys.plant_dims[i]) {
                rec.push(num(x[op + k]));
            }
            for j in 0..sys.orders[i] {
                rec.push(num(x[oc + j]));
            }
            rec.push(num(trace.controls[k * trace.n_areas + i]));
            rec.push(num(trace.disturbance(k)[i]));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(path.display().to_string(), e))
}

/// Rebuild a trace from its CSV; outputs and the nonlinear term are recomputed from the states.
pub fn read_trace_csv(path: &Path, sys: &ClosedLoopSystem) -> Result<SimulationTrace, Error> {
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header: Vec<String> = r.headers().map_err(io)?.iter().map(String::from).collect();
    if header != trace_header(sys) {
        return Err(Error::Format(format!("{}: columns do not match the controller", path.display())));
    }
    let n = sys.dim();
    let na = sys.n_areas();
    let mut t = SimulationTrace {
        step: 0.0,
        n_states: n,
        n_areas: na,
        times: Vec::new(),
        states: Vec::new(),
        outputs: Vec::new(),
        controls: Vec::new(),
        disturbances: Vec::new(),
        nonlinearity: Vec::new(),
        diverged_at: None,
        label: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
            .collect::<Result<_, _>>()?;
        t.times.push(v[0]);
        let mut x = vec![0.0; n];
        let mut col = 1;
        let mut u = vec![0.0; na];
        let mut w = vec![0.0; na];
        for i in 0..na {
            let (op, oc) = sys.offsets[i];
            for (k, _) in plant_columns(sys.plant_dims[i]) {
                x[op + k] = v[col];
                col += 1;
            }
            for j in 0..sys.orders[i] {
                x[oc + j] = v[col];
                col += 1;
            }
            u[i] = v[col];
            w[i] = v[col + 1];
            col += 2;
        }
        for i in 0..na {
            t.outputs.push((0..n).map(|c| sys.c_cl[(i, c)] * x[c]).sum());
            let valve = &sys.valves[i];
            t.nonlinearity.push(valve.gain * valve_nonlinearity(x[valve.state], valve.lo, valve.hi));
        }
        t.states.extend_from_slice(&x);
        t.controls.extend_from_slice(&u);
        t.disturbances.extend_from_slice(&w);
    }
    if t.times.len() >= 2 {
        t.step = t.times[1] - t.times[0];
    }
    Ok(t)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), num)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

fn opt_list(v: &[Option<f64>]) -> String {
    v.iter().map(|x| opt(*x)).collect::<Vec<_>>().join(" ")
}

/// `key = value` lines.
pub fn report_text(r: &VerificationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "label = {}", r.label);
    let _ = writeln!(s, "controller_hash = {}", r.controller_hash);
    let _ = writeln!(s, "scenario_hash = {}", r.scenario_hash);
    if let Some(a) = &r.certificate {
        let _ = writeln!(s, "certificate_lambda_max = {}", num(a.lambda_max));
        let _ = writeln!(s, "certificate_substituted_lambda_max = {}", num(a.substituted));
        let _ = writeln!(s, "certificate_sampled_max = {}", num(a.sampled_max));
        let _ = writeln!(s, "certificate_sampled_max_multiplier_class = {}", num(a.sampled_max_certified));
        let _ = writeln!(s, "certificate_samples = {}", a.samples);
    }
    let _ = writeln!(s, "robustness_degree = {}", list(&r.robustness_degree));
    let _ = writeln!(s, "certified_degree = {}", list(&r.certified_degree));
    let _ = writeln!(s, "attenuation_level = {}", list(&r.attenuation_level));
    let _ = writeln!(s, "gamma2 = {}", list(&r.gamma2));
    let _ = writeln!(s, "delay_free_spectral_abscissa = {}", num(r.spectral_abscissa));
    let _ = writeln!(s, "energy_ratio = {}", opt_list(&r.energy_ratio));
    let _ = writeln!(s, "settling_time_s = {}", opt_list(&r.settling_time));
    let _ = writeln!(s, "overshoot_pu = {}", list(&r.overshoot));
    let _ = writeln!(s, "bound_violations = {}", r.bound_violations.map_or("undefined".into(), |v| v.to_string()));
    let _ = writeln!(s, "diverged_at_s = {}", opt(r.diverged_at));
    s
}

pub fn report_csv_header() -> Vec<&'static str> {
    vec![
        "label",
        "lambda_max",
        "substituted_lambda_max",
        "sampled_max",
        "spectral_abscissa",
        "energy_ratio",
        "settling_time_s",
        "overshoot_pu",
        "bound_violations",
        "diverged_at_s",
        "controller_hash",
        "scenario_hash",
    ]
}

pub fn report_csv_row(r: &VerificationReport) -> Vec<String> {
    let cert = |f: fn(&lfc_core::verify::CertificateAudit) -> f64| r.certificate.as_ref().map_or("undefined".into(), |a| num(f(a)));
    vec![
        r.label.clone(),
        cert(|a| a.lambda_max),
        cert(|a| a.substituted),
        cert(|a| a.sampled_max),
        num(r.spectral_abscissa),
        opt_list(&r.energy_ratio),
        opt_list(&r.settling_time),
        list(&r.overshoot),
        r.bound_violations.map_or("undefined".into(), |v| v.to_string()),
        opt(r.diverged_at),
        r.controller_hash.clone(),
        r.scenario_hash.clone(),
    ]
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_record_round_trip() {
        let a = AreaController {
            a_c: Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            b_c: Mat::from_column_slice(2, 1, &[5.0, 6.0]),
            c_c: Mat::from_row_slice(1, 2, &[7.0, 8.0]),
            d_c: Mat::from_element(1, 1, 9.0),
        };
        let r = AreaRecord::from_core(&a);
        assert_eq!(r.a_c, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(r.to_core().unwrap(), a);
    }

    #[test]
    fn static_gain_record_has_empty_dynamics() {
        let a = AreaController::static_gain(3.0, 0);
        assert_eq!(AreaRecord::from_core(&a).to_core().unwrap(), a);
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(num(0.0), "0.00000000000e0");
        assert_eq!(num(-0.0), "0.00000000000e0");
    }
}
