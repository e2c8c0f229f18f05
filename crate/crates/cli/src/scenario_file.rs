//! JSON scenario and battery files.
//!
//! Files use 1-based cell indices (matching how the cells are usually
//! drawn) and a single full-length nominal inflow vector; conversion to
//! the library's 0-based split representation happens here. The gain can
//! be given either as a number or as a fraction of the largest admissible
//! gain for the instance.

use anyhow::{bail, Context, Result};
use freeway_control::controller::{tau_bound, ControllerConfig};
use freeway_control::equilibrium::EquilibriumConfig;
use freeway_control::observer::ParameterEstimate;
use freeway_control::plant::{CongestedShape, FreewayParams, Output, State};
use freeway_control::scenario::{ControlContext, DisturbancePolicy, Scenario};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub id: String,
    pub cells: CellsSection,
    pub control: ControlSection,
    pub equilibrium: EquilibriumSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub run: RunSection,
}

/// Physical cell parameters, one entry per cell unless noted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellsSection {
    /// Cell capacities (vehicles).
    pub a: Vec<f64>,
    /// Max inflow per step (vehicles/step).
    pub q: Vec<f64>,
    /// Supply slopes (1/step).
    pub c: Vec<f64>,
    /// Free-flow breakpoints (vehicles).
    pub delta: Vec<f64>,
    /// Free-flow demand slopes (1/step).
    pub r: Vec<f64>,
    /// Congested demand floors (vehicles/step).
    pub f_min: Vec<f64>,
    /// Congested demand branch per cell.
    pub congested_shape: Vec<ShapeName>,
    /// Off-ramp exit probabilities, one per mainline link (n-1 entries).
    pub p_exit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    ConstantAtCapacity,
    LinearDrop,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSection {
    /// Metered cells, 1-based.
    pub metered_cells: Vec<usize>,
    /// Metering floors, aligned with `metered_cells` (vehicles/step).
    pub b: Vec<f64>,
    /// Geometric overshoot weight in (0, 1).
    pub sigma: f64,
    /// Saturation gain: a number, or a fraction of the instance's largest
    /// admissible gain.
    pub tau: TauSpec,
    /// Margin parameter of the parameter box.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Value(f64),
    ScaleOfBound { scale_of_bound: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSection {
    /// Full nominal inflow vector, one entry per cell (vehicles/step).
    pub v_star: Vec<f64>,
    /// Low-occupancy box edges (vehicles).
    pub mu: Vec<f64>,
    /// Inflow caps, one per cell (vehicles/step).
    pub v_max: Vec<f64>,
    /// Optional target occupancies for the metered cells; defaults to the
    /// equilibrium occupancies induced by `v_star`.
    #[serde(default)]
    pub target_density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InitialSection {
    /// Initial occupancies; defaults to the true equilibrium.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Initial parameter estimate; defaults to the parameter-box center.
    #[serde(default)]
    pub theta_hat0: Option<EstimateSection>,
    /// Initial stored measurement; defaults to a warm-up step from `x0`.
    #[serde(default)]
    pub w0: Option<MeasurementSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateSection {
    pub p_exit: Vec<f64>,
    pub v_uncontrolled: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementSection {
    pub x: Vec<f64>,
    pub q_out: Vec<f64>,
    pub q_link: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: usize,
    pub policy: PolicySection,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySection {
    Constant { d: Vec<f64> },
    IidUniform,
    PerStepSeeded,
    AdversarialExtremes,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Converts to the library representation (0-based indices, split
    /// inflow vector, resolved gain).
    pub fn into_scenario(self) -> Result<Scenario> {
        let n = self.cells.a.len();
        let mut controlled: Vec<usize> = Vec::with_capacity(self.control.metered_cells.len());
        for &cell in &self.control.metered_cells {
            if cell == 0 || cell > n {
                bail!("metered cell {cell} out of range 1..={n}");
            }
            controlled.push(cell - 1);
        }
        if self.equilibrium.v_star.len() != n {
            bail!(
                "v_star has {} entries, expected {n}",
                self.equilibrium.v_star.len()
            );
        }
        let is_metered = |i: usize| controlled.contains(&i);
        let v_star_controlled: Vec<f64> = controlled
            .iter()
            .map(|&i| self.equilibrium.v_star[i])
            .collect();
        let v_star_uncontrolled: Vec<f64> = (0..n)
            .filter(|&i| !is_metered(i))
            .map(|i| self.equilibrium.v_star[i])
            .collect();
        let params = FreewayParams {
            a: self.cells.a,
            q: self.cells.q,
            c: self.cells.c,
            delta: self.cells.delta,
            r: self.cells.r,
            f_min: self.cells.f_min,
            shape: self
                .cells
                .congested_shape
                .iter()
                .map(|s| match s {
                    ShapeName::ConstantAtCapacity => CongestedShape::ConstantAtCapacity,
                    ShapeName::LinearDrop => CongestedShape::LinearDropToMin,
                })
                .collect(),
            p_exit: self.cells.p_exit,
            controlled,
            v_star_uncontrolled,
            epsilon: self.control.epsilon,
        };
        let equilibrium = EquilibriumConfig {
            v_star_controlled,
            mu: self.equilibrium.mu,
            v_max: self.equilibrium.v_max,
            target_density: self.equilibrium.target_density,
        };
        let tau = match self.control.tau {
            TauSpec::Value(t) => t,
            TauSpec::ScaleOfBound { scale_of_bound } => {
                if !(scale_of_bound > 0.0 && scale_of_bound <= 1.0) {
                    bail!("tau scale {scale_of_bound} must lie in (0, 1]");
                }
                let probe = ControlContext::assemble(
                    &params,
                    &equilibrium,
                    &ControllerConfig {
                        sigma: self.control.sigma,
                        tau: 1.0,
                        b: self.control.b.clone(),
                    },
                    vec![],
                );
                scale_of_bound * tau_bound(&probe)
            }
        };
        let controller = ControllerConfig {
            sigma: self.control.sigma,
            tau,
            b: self.control.b,
        };
        let x0 = match self.initial.x0 {
            Some(x0) => x0,
            None => {
                freeway_control::equilibrium::equilibrium_from_inflows(&params, &{
                    let mut v = vec![0.0; n];
                    for (pos, &cell) in params.controlled.iter().enumerate() {
                        v[cell] = equilibrium.v_star_controlled[pos];
                    }
                    for (pos, cell) in params.uncontrolled_cells().enumerate() {
                        v[cell] = params.v_star_uncontrolled[pos];
                    }
                    v
                })?
                .0
            }
        };
        Ok(Scenario {
            id: self.id,
            params,
            equilibrium,
            controller,
            x0,
            theta_hat0: self.initial.theta_hat0.map(|t| ParameterEstimate {
                p_exit: t.p_exit,
                v_uncontrolled: t.v_uncontrolled,
                r: t.r,
            }),
            w0: self.initial.w0.map(|w| Output {
                x: State(w.x),
                q_out: w.q_out,
                q_link: w.q_link,
            }),
            horizon: self.run.horizon,
            policy: match self.run.policy {
                PolicySection::Constant { d } => DisturbancePolicy::Constant(d),
                PolicySection::IidUniform => DisturbancePolicy::IidUniform,
                PolicySection::PerStepSeeded => DisturbancePolicy::PerStepSeeded,
                PolicySection::AdversarialExtremes => DisturbancePolicy::AdversarialExtremes,
            },
            seed: self.run.seed,
        })
    }
}

/// Loads and converts a scenario file in one go.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    ScenarioFile::load(path)?.into_scenario()
}

/// Batch description: explicit scenario files, randomly generated
/// instances, or both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryFile {
    pub id: String,
    /// Paths to scenario files, relative to the battery file.
    #[serde(default)]
    pub scenario_files: Vec<String>,
    /// Randomly generated family.
    #[serde(default)]
    pub random: Option<RandomBattery>,
    /// Tolerance for declaring the estimate locked to the truth.
    #[serde(default = "default_lock_tol")]
    pub lock_tol: f64,
    /// Minimum fraction of runs whose post-lock residual admits a clean
    /// exponential fit.
    #[serde(default = "default_fit_fraction")]
    pub min_fit_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomBattery {
    pub count: usize,
    /// Chain lengths to cycle through.
    pub sizes: Vec<usize>,
    pub horizon: usize,
    pub base_seed: u64,
}

fn default_lock_tol() -> f64 {
    1e-9
}

fn default_fit_fraction() -> f64 {
    0.95
}

impl BatteryFile {
    pub fn load(path: &Path) -> Result<BatteryFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
