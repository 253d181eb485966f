//! Scenario files: plant, synthesis, simulation and output sections in TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lfc_core::dde::{DisturbanceScenario, SimulationOptions};
use lfc_core::lmi::{ControllerParam, LmiOptions, PerturbationBounds, SynthesisSettings, SynthesisVariant};
use lfc_core::model::{AreaParameters, DelayPair, DelaySpec};
use lfc_core::sdp::SolverOptions;

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSection,
    pub synthesis: SynthesisSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSection {
    pub tp_s: f64,
    pub tt_s: f64,
    pub tg_s: f64,
    pub kp_hz_per_pu: f64,
    pub r_hz_per_pu: f64,
    pub kb_pu_per_hz: f64,
    pub ke_per_s: f64,
    pub xg_min_pu: f64,
    pub xg_max_pu: f64,
}

/// Symmetric tie line between two areas with synchronizing coefficient `2πT_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieSection {
    pub between: [usize; 2],
    pub coeff_pu_per_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    pub base_s: f64,
    pub amplitude_s: f64,
    /// Bound `d` on `|dτ/dt|`.
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub areas: Vec<AreaSection>,
    #[serde(default)]
    pub ties: Vec<TieSection>,
    /// Same delay on every ordered pair of areas; absent for delay-free runs.
    pub delay: Option<DelaySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DelayFree,
    DelayFreeNonfragile,
    Delayed,
    DelayedNonfragile,
}

impl Variant {
    pub fn core(self) -> SynthesisVariant {
        match self {
            Variant::DelayFree => SynthesisVariant { delayed: false, perturbed: false },
            Variant::DelayFreeNonfragile => SynthesisVariant { delayed: false, perturbed: true },
            Variant::Delayed => SynthesisVariant { delayed: true, perturbed: false },
            Variant::DelayedNonfragile => SynthesisVariant { delayed: true, perturbed: true },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSection {
    #[serde(default)]
    pub a_c: f64,
    #[serde(default)]
    pub b_c: f64,
    #[serde(default)]
    pub c_c: f64,
    #[serde(default)]
    pub d_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Relative duality gap; the synthesis problems stall between 1e-8 and 1e-7.
    #[serde(default = "default_gap")]
    pub gap_tol: f64,
    #[serde(default = "default_tol")]
    pub feas_tol: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_gap() -> f64 {
    1e-6
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iterations() -> usize {
    120
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { gap_tol: default_gap(), feas_tol: default_tol(), max_iterations: default_iterations() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub variant: Variant,
    pub orders: Vec<usize>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub delta: DeltaSection,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// `P ⪯ κI` and `‖M‖₂ ≤ κ` on gain variables; round-off in the certificate grows with κ.
    #[serde(default = "default_bound")]
    pub variable_bound: Option<f64>,
    /// Static gains used to seed the design loop.
    pub seed_gains: Vec<f64>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_improvement")]
    pub rel_improvement: f64,
    #[serde(default)]
    pub solver: SolverSection,
}

fn default_margin() -> f64 {
    1e-6
}

fn default_bound() -> Option<f64> {
    Some(1e2)
}

fn default_rounds() -> usize {
    6
}

fn default_improvement() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStep {
    pub area: usize,
    pub time_s: f64,
    pub magnitude_pu: f64,
}

/// Written `{ kind = "scaled", fraction = 0.1 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationScheme {
    None,
    /// Every controller matrix scaled by `1 + fraction`.
    Scaled { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default)]
    pub load_steps: Vec<LoadStep>,
    #[serde(default = "default_scheme")]
    pub perturbation: PerturbationScheme,
    /// Gain of the conventional integral controller run for comparison; omitted to skip it.
    pub baseline_ki_per_s: Option<f64>,
    #[serde(default = "default_band")]
    pub settling_band_pu: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_step() -> f64 {
    1e-3
}

fn default_scheme() -> PerturbationScheme {
    PerturbationScheme::None
}

fn default_band() -> f64 {
    1e-3
}

fn default_divergence() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_samples() -> usize {
    1000
}

fn default_seed() -> u64 {
    20240601
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { samples: default_samples(), seed: default_seed() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Relative to the output root.
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "svg".into()]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, formats: default_formats() }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_areas(&self) -> usize {
        self.plant.areas.len()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let n = self.n_areas();
        let bad = |s: String| Err(Error::Config(s));
        if n == 0 {
            return bad("plant.areas is empty".into());
        }
        for t in &self.plant.ties {
            let [i, j] = t.between;
            if i >= n || j >= n || i == j {
                return bad(format!("tie {:?} does not join two distinct areas of {n}", t.between));
            }
        }
        for s in &self.simulation.load_steps {
            if s.area >= n {
                return bad(format!("load step refers to area {} of {n}", s.area));
            }
            if !(0.0..=self.simulation.horizon_s).contains(&s.time_s) {
                return bad(format!("load step at {} s lies outside the {} s horizon", s.time_s, self.simulation.horizon_s));
            }
        }
        if self.synthesis.orders.len() != n || self.synthesis.rho.len() != n {
            return bad(format!("synthesis.orders and synthesis.rho need {n} entries"));
        }
        if self.synthesis.variant.core().delayed && self.plant.delay.is_none() {
            return bad("delayed variant without plant.delay".into());
        }
        if let Some(d) = &self.plant.delay {
            self.delay_pair(d).validate().map_err(|r| Error::Config(format!("plant.delay: {r}")))?;
        }
        self.bounds().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.simulation.step_s > 0.0) || !(self.simulation.horizon_s >= self.simulation.step_s) {
            return bad("simulation needs step_s > 0 and horizon_s >= step_s".into());
        }
        self.area_parameters()?;
        Ok(())
    }

    fn delay_pair(&self, d: &DelaySection) -> DelayPair {
        DelayPair { base: d.base_s, amplitude: d.amplitude_s, rate_bound: d.rate_bound }
    }

    pub fn area_parameters(&self) -> Result<Vec<AreaParameters>, Error> {
        let mut ties: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); self.n_areas()];
        for t in &self.plant.ties {
            let [i, j] = t.between;
            *ties[i].entry(j).or_insert(0.0) += t.coeff_pu_per_hz;
            *ties[j].entry(i).or_insert(0.0) += t.coeff_pu_per_hz;
        }
        let params: Vec<AreaParameters> = self
            .plant
            .areas
            .iter()
            .zip(ties)
            .map(|(a, tie_coeffs)| AreaParameters {
                tp: a.tp_s,
                tt: a.tt_s,
                tg: a.tg_s,
                kp: a.kp_hz_per_pu,
                r: a.r_hz_per_pu,
                kb: a.kb_pu_per_hz,
                ke: a.ke_per_s,
                xg_min: a.xg_min_pu,
                xg_max: a.xg_max_pu,
                tie_sum: tie_coeffs.values().sum(),
                tie_coeffs,
            })
            .collect();
        for (i, p) in params.iter().enumerate() {
            p.validate().map_err(|e| Error::Config(format!("area {i}: {e}")))?;
        }
        Ok(params)
    }

    pub fn delays(&self) -> DelaySpec {
        match &self.plant.delay {
            Some(d) => DelaySpec::uniform(self.n_areas(), self.delay_pair(d)),
            None => DelaySpec::none(),
        }
    }

    pub fn bounds(&self) -> PerturbationBounds {
        let d = &self.synthesis.delta;
        PerturbationBounds { delta_ac: d.a_c, delta_bc: d.b_c, delta_cc: d.c_c, delta_dc: d.d_c }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.synthesis.solver;
        SolverOptions { gap_tol: s.gap_tol, feas_tol: s.feas_tol, max_iterations: s.max_iterations, ..SolverOptions::default() }
    }

    pub fn synthesis_settings(&self) -> SynthesisSettings {
        let s = &self.synthesis;
        SynthesisSettings {
            orders: s.orders.clone(),
            bounds: self.bounds(),
            variant: s.variant.core(),
            rho: s.rho.clone(),
            options: LmiOptions {
                param: ControllerParam::PlantFixed(Vec::new()),
                margin: s.margin,
                variable_bound: s.variable_bound,
                ..LmiOptions::default()
            },
            solver: self.solver_options(),
            initial_gains: s.seed_gains.clone(),
            initial_controllers: Vec::new(),
            max_rounds: s.max_rounds,
            rel_improvement: s.rel_improvement,
        }
    }

    pub fn disturbance(&self) -> DisturbanceScenario {
        let mut steps = vec![Vec::new(); self.n_areas()];
        for s in &self.simulation.load_steps {
            steps[s.area].push((s.time_s, s.magnitude_pu));
        }
        DisturbanceScenario { steps, horizon: self.simulation.horizon_s }
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            step: self.simulation.step_s,
            initial_history: None,
            divergence_threshold: self.simulation.divergence_threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[plant]
areas = [
  { tp_s = 11.1133, tt_s = 0.4, tg_s = 0.08, kp_hz_per_pu = 66.667, r_hz_per_pu = 3.0, kb_pu_per_hz = 1.0, ke_per_s = -0.03, xg_min_pu = -0.03, xg_max_pu = 0.12 },
  { tp_s = 12.6, tt_s = 0.44, tg_s = 0.06, kp_hz_per_pu = 62.5, r_hz_per_pu = 2.73, kb_pu_per_hz = 1.0, ke_per_s = -0.02, xg_min_pu = -0.03, xg_max_pu = 0.12 },
]
ties = [{ between = [0, 1], coeff_pu_per_hz = 1.2566 }]
[synthesis]
variant = "delay-free"
orders = [2, 2]
rho = [1.0, 1.0]
seed_gains = [6.0]
[simulation]
horizon_s = 50.0
load_steps = [{ area = 0, time_s = 3.0, magnitude_pu = 0.02 }]
"#;

    #[test]
    fn parses_and_builds_symmetric_ties() {
        let c = ScenarioConfig::parse(MINIMAL).unwrap();
        let p = c.area_parameters().unwrap();
        assert_eq!(p[0].tie_coeffs[&1], 1.2566);
        assert_eq!(p[1].tie_sum, 1.2566);
        assert!(c.delays().is_empty());
        assert_eq!(c.simulation.step_s, 1e-3);
    }

    #[test]
    fn rate_bound_above_one_is_rejected() {
        let text = MINIMAL.replace("variant = \"delay-free\"", "variant = \"delayed\"").replace(
            "[synthesis]",
            "delay = { base_s = 2.0, amplitude_s = 0.3, rate_bound = 1.5 }\n[synthesis]",
        );
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("rate bound"), "{err}");
    }

    #[test]
    fn rejects_unknown_area_and_missing_delay() {
        let bad = MINIMAL.replace("area = 0", "area = 5");
        assert!(ScenarioConfig::parse(&bad).is_err());
        let bad = MINIMAL.replace("time_s = 3.0", "time_s = 60.0");
        assert!(ScenarioConfig::parse(&bad).unwrap_err().to_string().contains("horizon"));
        let bad = MINIMAL.replace("variant = \"delay-free\"", "variant = \"delayed\"");
        assert!(ScenarioConfig::parse(&bad).is_err());
        let bad = MINIMAL.replace("variant = \"delay-free\"", "variant = \"theorem\"");
        assert!(ScenarioConfig::parse(&bad).is_err());
    }
}
