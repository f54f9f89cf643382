//! Experiment configuration in TOML.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimConfig;
use crate::target::{CalibrationOptions, SelectionOptions};
use crate::torus::{CouplingFunctional, CouplingTerm, GridField, LagKernel, LagrangianSpec, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoWord {
    Auto,
}

/// A value or the keyword `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Auto<T> {
    Auto(AutoWord),
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Auto::Auto(_) => None,
            Auto::Value(v) => Some(*v),
        }
    }
}

impl<T> Default for Auto<T> {
    fn default() -> Self {
        Auto::Auto(AutoWord::Auto)
    }
}

/// `ℓ(x) = mean + Σ_k cos[k-1] cos(2πkx) + sin[k-1] sin(2πkx)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSeries {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn eval(&self, x: f64) -> f64 {
        let c = self
            .cos
            .iter()
            .enumerate()
            .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * x).cos());
        let s = self
            .sin
            .iter()
            .enumerate()
            .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * x).sin());
        self.mean + c.chain(s).sum::<f64>()
    }

    fn check(&self, what: &str) -> Result<()> {
        if std::iter::once(&self.mean).chain(&self.cos).chain(&self.sin).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: non-finite coefficient")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub series: TrigSeries,
    /// `c0`; the default is `max(0, -min ℓ)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CouplingSpec {
    Constant {
        value: f64,
    },
    /// `∫ g dm` with `g` a trigonometric series.
    Linear {
        #[serde(flatten)]
        g: TrigSeries,
    },
    /// `weight ∬ K(x - y) m(dx) m(dy)` with an even kernel given by its
    /// cosine series.
    Convolution {
        #[serde(default)]
        mean: f64,
        cos: Vec<f64>,
        weight: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub n_cells: usize,
    pub potential: PotentialSpec,
    pub coupling: Vec<CouplingSpec>,
    /// Target payoff; `auto` is the midpoint of `[e_min, e_max]`.
    #[serde(default)]
    pub e: Auto<f64>,
    pub n_players: usize,
    /// Grace period `T` of the trigger.
    pub grace: f64,
    #[serde(default)]
    pub delta: Auto<f64>,
    #[serde(default)]
    pub n_penalization: Auto<f64>,
    pub epsilon: f64,
    pub check_interval: f64,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub f_sample_interval: f64,
    pub sweep_n: Vec<usize>,
    /// Also simulate the all-conform payoff for every `N` of the sweep.
    #[serde(default)]
    pub sweep_simulate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub selection: SelectionOptions,
    #[serde(default)]
    pub calibration: CalibrationOptions,
}

pub const PRESETS: [&str; 2] = ["paper-instance", "flat"];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let sim = SimConfig::default();
        let base = Self {
            preset: Some(name.to_string()),
            n_cells: 256,
            potential: PotentialSpec {
                series: TrigSeries {
                    mean: 0.0,
                    cos: vec![0.5],
                    sin: vec![],
                },
                offset: Some(0.5),
            },
            coupling: vec![CouplingSpec::Convolution {
                mean: 0.0,
                cos: vec![1.0],
                weight: 0.5,
            }],
            e: Auto::default(),
            n_players: sim.n_players,
            grace: 200.0,
            delta: Auto::default(),
            n_penalization: Auto::default(),
            epsilon: 0.05,
            check_interval: 1.0,
            dt: sim.dt,
            horizon: sim.horizon,
            burn_in: sim.burn_in,
            n_runs: sim.n_runs,
            seed: sim.seed,
            f_sample_interval: sim.f_sample_interval,
            sweep_n: vec![8, 16, 32, 64],
            sweep_simulate: false,
            output_dir: None,
            selection: SelectionOptions::default(),
            calibration: CalibrationOptions::default(),
        };
        match name {
            "paper-instance" => Ok(base),
            "flat" => Ok(Self {
                potential: PotentialSpec {
                    series: TrigSeries::default(),
                    offset: None,
                },
                coupling: vec![CouplingSpec::Constant { value: 0.5 }],
                ..base
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        TorusGrid::new(self.n_cells).map_err(|e| Error::Config(e.to_string()))?;
        self.potential.series.check("potential")?;
        if let Some(c) = self.potential.offset {
            if !(c >= 0.0) {
                return bad(format!("potential offset {c} must be nonnegative"));
            }
        }
        if self.coupling.is_empty() {
            return bad("coupling needs at least one term".into());
        }
        for c in &self.coupling {
            match c {
                CouplingSpec::Constant { value } if !value.is_finite() => {
                    return bad("non-finite constant coupling".into())
                }
                CouplingSpec::Linear { g } => g.check("linear coupling")?,
                CouplingSpec::Convolution { mean, cos, weight } => {
                    if !(mean.is_finite() && weight.is_finite() && cos.iter().all(|c| c.is_finite())) {
                        return bad("non-finite convolution coefficient".into());
                    }
                }
                _ => {}
            }
        }
        for (name, v) in [("e", self.e.value()), ("delta", self.delta.value()), ("n_penalization", self.n_penalization.value())] {
            if let Some(v) = v {
                if !v.is_finite() || (name != "e" && v <= 0.0) {
                    return bad(format!("{name} = {v} is not admissible"));
                }
            }
        }
        for (name, v) in [
            ("grace", self.grace),
            ("epsilon", self.epsilon),
            ("check_interval", self.check_interval),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.sweep_n.iter().any(|&n| n < 2) || self.sweep_n.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sweep_n {:?} must be ascending with entries ≥ 2", self.sweep_n));
        }
        self.sim_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.n_cells)
    }

    pub fn lagrangian(&self) -> Result<LagrangianSpec> {
        let ell = GridField::from_fn(self.grid()?, |x| self.potential.series.eval(x))?;
        match self.potential.offset {
            Some(c) => LagrangianSpec::with_offset(ell, c),
            None => Ok(LagrangianSpec::new(ell)),
        }
    }

    pub fn coupling(&self) -> Result<CouplingFunctional> {
        let grid = self.grid()?;
        let terms = self
            .coupling
            .iter()
            .map(|c| {
                Ok(match c {
                    CouplingSpec::Constant { value } => CouplingTerm::Linear(GridField::constant(grid, *value)),
                    CouplingSpec::Linear { g } => CouplingTerm::Linear(GridField::from_fn(grid, |x| g.eval(x))?),
                    CouplingSpec::Convolution { mean, cos, weight } => {
                        let k = TrigSeries {
                            mean: *mean,
                            cos: cos.clone(),
                            sin: vec![],
                        };
                        CouplingTerm::Convolution {
                            kernel: LagKernel::from_fn(grid, |d| k.eval(d))?,
                            weight: *weight,
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CouplingFunctional::sum(grid, terms)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_players: self.n_players,
            dt: self.dt,
            horizon: self.horizon,
            burn_in: self.burn_in,
            n_runs: self.n_runs,
            seed: self.seed,
            f_sample_interval: self.f_sample_interval,
        }
    }

    /// Copy with every `auto` replaced by the value the run settled on.
    pub fn resolved(&self, e: f64, delta: Option<f64>, n_penalization: Option<f64>) -> Self {
        let fill = |a: Auto<f64>, v: Option<f64>| match (a, v) {
            (Auto::Auto(_), Some(v)) => Auto::Value(v),
            (a, _) => a,
        };
        Self {
            e: Auto::Value(e),
            delta: fill(self.delta, delta),
            n_penalization: fill(self.n_penalization, n_penalization),
            potential: PotentialSpec {
                offset: Some(self.lagrangian().map_or(0.0, |l| l.offset())),
                ..self.potential.clone()
            },
            ..self.clone()
        }
    }
}
