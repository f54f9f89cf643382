use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::sim::params::{DeviationPolicy, SimConfig, TriggerParams};
use crate::torus::{wasserstein1_masses, CouplingFunctional, GridDrift, LagrangianSpec, ProbabilityGrid, TorusGrid};

/// Independent stream of player `player` in run `run`.
pub fn player_rng(master: u64, run: usize, player: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((run as u64) << 20) | player as u64);
    rng
}

/// Step-indexed schedule of trigger evaluations.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CheckSchedule {
    first: u64,
    every: u64,
}

impl CheckSchedule {
    pub(crate) fn new(params: &TriggerParams, dt: f64) -> Self {
        let every = ((params.check_interval / dt).round() as u64).max(1);
        let grace = (params.grace / dt).round() as u64;
        Self {
            first: grace.div_ceil(every) * every,
            every,
        }
    }

    pub(crate) fn is_check(&self, step: u64) -> bool {
        step >= self.first && step % self.every == 0
    }
}

/// Whether any of the per-player histograms (rows of `occupation`, each
/// holding `steps` counts) is at W₁ distance `≥ delta` from the target.
pub(crate) fn any_exit(
    occupation: &[u64],
    steps: u64,
    target: &[f64],
    h: f64,
    delta: f64,
    masses: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) -> bool {
    let n = target.len();
    let inv = 1.0 / steps as f64;
    occupation.chunks_exact(n).any(|row| {
        masses.clear();
        masses.extend(row.iter().map(|&c| c as f64 * inv));
        wasserstein1_masses(masses, target, h, scratch) >= delta
    })
}

/// State of one run: positions, per-player occupation counts (one count
/// per elapsed step, so the weight of a count is `dt`) and the trigger.
#[derive(Clone, Debug)]
pub struct PathState {
    grid: TorusGrid,
    pub step: u64,
    pub dt: f64,
    pub positions: Vec<f64>,
    occupation: Vec<u64>,
    theta_step: Option<u64>,
    rngs: Vec<ChaCha8Rng>,
}

impl PathState {
    /// All players start at `x = 0` with fresh streams.
    pub fn new(grid: TorusGrid, n_players: usize, dt: f64, master: u64, run: usize) -> Self {
        Self::with_positions(grid, vec![0.0; n_players], dt, master, run)
    }

    pub fn with_positions(grid: TorusGrid, positions: Vec<f64>, dt: f64, master: u64, run: usize) -> Self {
        let n_players = positions.len();
        Self {
            grid,
            step: 0,
            dt,
            occupation: vec![0; n_players * grid.n_cells()],
            theta_step: None,
            rngs: (0..n_players).map(|j| player_rng(master, run, j)).collect(),
            positions,
        }
    }

    pub fn t(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn theta(&self) -> Option<f64> {
        self.theta_step.map(|s| s as f64 * self.dt)
    }

    pub fn n_players(&self) -> usize {
        self.positions.len()
    }

    /// Normalized occupation measure of `player` since `t = 0`.
    pub fn occupation(&self, player: usize) -> Result<ProbabilityGrid> {
        let n = self.grid.n_cells();
        let row = &self.occupation[player * n..(player + 1) * n];
        let inv = 1.0 / self.step.max(1) as f64;
        ProbabilityGrid::from_masses(self.grid, &row.iter().map(|&c| c as f64 * inv).collect::<Vec<_>>())
    }

    /// Drift field followed by `player` at the current step.
    pub fn drift_of<'a>(&self, player: usize, params: &'a TriggerParams, deviation: &'a DeviationPolicy) -> &'a GridDrift {
        if player == 0 {
            if let Some(d) = deviation.drift() {
                return d;
            }
        }
        if self.theta_step.is_some() {
            &params.punish
        } else {
            &params.conform
        }
    }
}

/// Per-step hooks used by the payoff estimator and the recorder.
pub(crate) trait Observer {
    /// Called before the move with the pre-step positions and drifts.
    fn before(&mut self, state: &PathState, drifts: &[f64]);
}

impl Observer for () {
    fn before(&mut self, _: &PathState, _: &[f64]) {}
}

/// Scratch buffers reused across steps.
#[derive(Default)]
pub(crate) struct StepScratch {
    drifts: Vec<f64>,
    masses: Vec<f64>,
    w1: Vec<f64>,
}

/// One synchronous Euler–Maruyama step, followed by the trigger check.
pub fn step(state: &mut PathState, params: &TriggerParams, deviation: &DeviationPolicy) {
    let schedule = CheckSchedule::new(params, state.dt);
    let target = params.target.masses();
    step_with(state, params, deviation, &schedule, &target, &mut StepScratch::default(), &mut ());
}

pub(crate) fn step_with(
    state: &mut PathState,
    params: &TriggerParams,
    deviation: &DeviationPolicy,
    schedule: &CheckSchedule,
    target: &[f64],
    scratch: &mut StepScratch,
    observer: &mut impl Observer,
) {
    let n = state.grid.n_cells();
    scratch.drifts.clear();
    for j in 0..state.n_players() {
        let a = state.drift_of(j, params, deviation).interpolate(state.positions[j]);
        scratch.drifts.push(a);
    }
    observer.before(state, &scratch.drifts);
    let sq = state.dt.sqrt();
    for j in 0..state.positions.len() {
        let x = state.positions[j];
        state.occupation[j * n + state.grid.nearest_cell(x)] += 1;
        let xi: f64 = state.rngs[j].sample(StandardNormal);
        let mut y = x + scratch.drifts[j] * state.dt + sq * xi;
        // increments are far below one period
        if y >= 1.0 {
            y -= 1.0;
        } else if y < 0.0 {
            y += 1.0;
        }
        if !(0.0..1.0).contains(&y) {
            y = crate::torus::project_to_torus(y);
        }
        state.positions[j] = y;
    }
    state.step += 1;
    if state.theta_step.is_none()
        && schedule.is_check(state.step)
        && any_exit(
            &state.occupation,
            state.step,
            target,
            state.grid.h(),
            params.delta,
            &mut scratch.masses,
            &mut scratch.w1,
        )
    {
        state.theta_step = Some(state.step);
    }
}

/// Result of one simulated run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run: usize,
    pub theta: Option<f64>,
    /// Per-player time-average of `L + F(others)` over `[burn_in, horizon]`.
    pub payoffs: Vec<f64>,
    pub l_average: Vec<f64>,
    pub f_average: Vec<f64>,
    /// W₁ between each player's final occupation measure and `m̂`.
    pub final_distance: Vec<f64>,
    /// Occupation measures of players `2..N` after the trigger fired.
    pub post_trigger: Option<Vec<ProbabilityGrid>>,
}

struct Accumulator<'a, 'w> {
    l: &'a LagrangianSpec,
    f: &'a CouplingFunctional,
    burn: u64,
    f_every: u64,
    l_sum: Vec<f64>,
    f_sum: Vec<f64>,
    f_samples: u64,
    cells: Vec<usize>,
    post: Vec<u64>,
    post_steps: u64,
    recorder: Option<(&'a mut (dyn Write + 'w), u64)>,
    io_error: Option<std::io::Error>,
}

impl Observer for Accumulator<'_, '_> {
    fn before(&mut self, s: &PathState, drifts: &[f64]) {
        if let Some((w, stride)) = self.recorder.as_mut() {
            if s.step % *stride == 0 && self.io_error.is_none() {
                let t = s.t();
                for (j, x) in s.positions.iter().enumerate() {
                    if let Err(e) = writeln!(w, "{t:?},{j},{x:?}") {
                        self.io_error = Some(e);
                        break;
                    }
                }
            }
        }
        if s.theta_step.is_some() {
            let n = s.grid.n_cells();
            for (j, x) in s.positions.iter().enumerate().skip(1) {
                self.post[(j - 1) * n + s.grid.nearest_cell(*x)] += 1;
            }
            self.post_steps += 1;
        }
        if s.step < self.burn {
            return;
        }
        for ((acc, &a), &x) in self.l_sum.iter_mut().zip(drifts).zip(&s.positions) {
            *acc += self.l.running_cost(a, x);
        }
        if (s.step - self.burn) % self.f_every == 0 {
            self.cells.clear();
            self.cells.extend(s.positions.iter().map(|&x| s.grid.nearest_cell(x)));
            for (acc, v) in self.f_sum.iter_mut().zip(self.f.leave_one_out(&self.cells)) {
                *acc += v;
            }
            self.f_samples += 1;
        }
    }
}

/// Simulates run `run` to the horizon. When `recorder` is given, writes
/// `t,player,position` rows every `stride` steps (header not included).
pub fn simulate_run(
    cfg: &SimConfig,
    params: &TriggerParams,
    deviation: &DeviationPolicy,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    run: usize,
    recorder: Option<(&mut (dyn Write + '_), u64)>,
) -> Result<RunOutcome> {
    let grid = params.target.grid();
    let mut state = PathState::new(grid, cfg.n_players, cfg.dt, cfg.seed, run);
    let schedule = CheckSchedule::new(params, cfg.dt);
    let target = params.target.masses();
    let total = cfg.steps(cfg.horizon);
    let burn = cfg.steps(cfg.burn_in);
    let mut acc = Accumulator {
        l,
        f,
        burn,
        f_every: cfg.steps(cfg.f_sample_interval).max(1),
        l_sum: vec![0.0; cfg.n_players],
        f_sum: vec![0.0; cfg.n_players],
        f_samples: 0,
        cells: Vec::with_capacity(cfg.n_players),
        post: vec![0; (cfg.n_players - 1) * grid.n_cells()],
        post_steps: 0,
        recorder,
        io_error: None,
    };
    let mut scratch = StepScratch::default();
    while state.step < total {
        step_with(&mut state, params, deviation, &schedule, &target, &mut scratch, &mut acc);
    }
    if let Some(e) = acc.io_error {
        return Err(e.into());
    }
    let window = (total - burn) as f64;
    let l_average: Vec<f64> = acc.l_sum.iter().map(|s| s / window).collect();
    let f_average: Vec<f64> = acc.f_sum.iter().map(|s| s / acc.f_samples as f64).collect();
    let payoffs = l_average.iter().zip(&f_average).map(|(a, b)| a + b).collect();
    let mut w1 = Vec::new();
    let final_distance = (0..cfg.n_players)
        .map(|j| {
            let occ = state.occupation(j)?;
            Ok(wasserstein1_masses(&occ.masses(), &target, grid.h(), &mut w1))
        })
        .collect::<Result<Vec<_>>>()?;
    let post_trigger = if acc.post_steps > 0 {
        let inv = 1.0 / acc.post_steps as f64;
        Some(
            acc.post
                .chunks_exact(grid.n_cells())
                .map(|row| ProbabilityGrid::from_masses(grid, &row.iter().map(|&c| c as f64 * inv).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(RunOutcome {
        run,
        theta: state.theta(),
        payoffs,
        l_average,
        f_average,
        final_distance,
        post_trigger,
    })
}
