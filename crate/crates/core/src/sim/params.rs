use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{GridDrift, GridField, ProbabilityGrid};

/// Data of the trigger strategy: conform with `α̂` until some player's
/// occupation measure leaves the `δ`-ball around `m̂` after the grace
/// period, then punish with `αⁿ` forever.
#[derive(Clone, Debug)]
pub struct TriggerParams {
    pub grace: f64,
    pub delta: f64,
    pub conform: GridDrift,
    pub punish: GridDrift,
    pub target: ProbabilityGrid,
    pub check_interval: f64,
}

impl TriggerParams {
    pub fn new(
        grace: f64,
        delta: f64,
        conform: GridDrift,
        punish: GridDrift,
        target: ProbabilityGrid,
        check_interval: f64,
    ) -> Result<Self> {
        for (name, v) in [("T", grace), ("delta", delta), ("check_interval", check_interval)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} = {v} must be positive")));
            }
        }
        let g = target.grid();
        g.ensure_same(&conform.grid())?;
        g.ensure_same(&punish.grid())?;
        Ok(Self {
            grace,
            delta,
            conform,
            punish,
            target,
            check_interval,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviationKind {
    Conform,
    Selfish,
    Lazy,
    Planner,
    Custom,
}

/// Strategy of player 1. Everything but `Conform` plays a fixed feedback
/// drift regardless of the trigger.
#[derive(Clone, Debug)]
pub struct DeviationPolicy {
    pub kind: DeviationKind,
    drift: Option<GridDrift>,
}

impl DeviationPolicy {
    pub fn conform() -> Self {
        Self {
            kind: DeviationKind::Conform,
            drift: None,
        }
    }

    /// The MFG best response `-Du₀`, ignoring the coupling.
    pub fn selfish(u0: &GridField) -> Self {
        Self {
            kind: DeviationKind::Selfish,
            drift: Some(u0.neg_gradient()),
        }
    }

    pub fn lazy(like: &GridDrift) -> Self {
        Self {
            kind: DeviationKind::Lazy,
            drift: Some(GridDrift::zeros(like.grid())),
        }
    }

    pub fn planner(alpha_tilde: &GridDrift) -> Self {
        Self {
            kind: DeviationKind::Planner,
            drift: Some(alpha_tilde.clone()),
        }
    }

    pub fn custom(drift: GridDrift) -> Self {
        Self {
            kind: DeviationKind::Custom,
            drift: Some(drift),
        }
    }

    pub fn drift(&self) -> Option<&GridDrift> {
        self.drift.as_ref()
    }

    /// True when the drift exceeds the configured cap.
    pub fn exceeds_cap(&self) -> bool {
        self.drift.as_ref().is_some_and(|d| d.exceeds_cap())
    }
}

/// Numerical settings of a batch of simulated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_players: usize,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_runs: usize,
    pub seed: u64,
    /// Time between samples of the coupling cost.
    pub f_sample_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_players: 32,
            dt: 1e-3,
            horizon: 2000.0,
            burn_in: 100.0,
            n_runs: 64,
            seed: 2024,
            f_sample_interval: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players < 2 {
            return Err(Error::InvalidInput("need at least two players".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 1e-2) {
            return Err(Error::InvalidInput(format!("dt = {} outside (0, 1e-2]", self.dt)));
        }
        if !(self.burn_in >= 0.0 && self.horizon > self.burn_in) {
            return Err(Error::InvalidInput(format!(
                "need 0 ≤ burn_in < horizon, got {} and {}",
                self.burn_in, self.horizon
            )));
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidInput("n_runs must be positive".into()));
        }
        if !(self.f_sample_interval >= self.dt) {
            return Err(Error::InvalidInput("f_sample_interval must be at least dt".into()));
        }
        Ok(())
    }

    /// Number of Euler steps spanning `time`.
    pub fn steps(&self, time: f64) -> u64 {
        (time / self.dt).round() as u64
    }
}
