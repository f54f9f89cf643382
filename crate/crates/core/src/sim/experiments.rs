use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::sim::engine::{simulate_run, RunOutcome};
use crate::sim::params::{DeviationKind, DeviationPolicy, SimConfig, TriggerParams};
use crate::target::{compute_en, ExpectationMethod, TargetPair};
use crate::torus::{CouplingFunctional, LagrangianSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_runs: usize,
    pub horizon: f64,
    pub burn_in: f64,
    pub p_trigger: f64,
}

#[derive(Clone, Debug)]
pub struct PayoffReport {
    /// One estimate per player; player 1 is index 0.
    pub estimates: Vec<PayoffEstimate>,
    pub runs: Vec<RunOutcome>,
}

#[derive(Serialize)]
struct RunLine {
    run: usize,
    player: usize,
    payoff: f64,
    theta: Option<f64>,
}

impl PayoffReport {
    pub fn p_trigger(&self) -> f64 {
        self.estimates.first().map_or(0.0, |e| e.p_trigger)
    }

    /// One JSON object `{run, player, payoff, theta}` per line.
    pub fn json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.runs {
            for (player, &payoff) in r.payoffs.iter().enumerate() {
                let line = RunLine {
                    run: r.run,
                    player: player + 1,
                    payoff,
                    theta: r.theta,
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("player,mean,stderr,n_runs,horizon,burn_in,p_trigger\n");
        for (i, e) in self.estimates.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{},{:?},{:?},{:?}",
                i + 1,
                e.mean,
                e.stderr,
                e.n_runs,
                e.horizon,
                e.burn_in,
                e.p_trigger
            );
        }
        out
    }
}

fn mean_stderr(xs: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::INFINITY);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `cfg.n_runs` independent runs in parallel and aggregates the
/// per-player payoffs. The result does not depend on the thread schedule.
pub fn estimate_payoffs(
    cfg: &SimConfig,
    params: &TriggerParams,
    deviation: &DeviationPolicy,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
) -> Result<PayoffReport> {
    cfg.validate()?;
    let runs = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| simulate_run(cfg, params, deviation, l, f, run, None))
        .collect::<Result<Vec<_>>>()?;
    let triggered = runs.iter().filter(|r| r.theta.is_some()).count();
    let p_trigger = triggered as f64 / runs.len() as f64;
    let estimates = (0..cfg.n_players)
        .map(|j| {
            let (mean, stderr) = mean_stderr(runs.iter().map(|r| r.payoffs[j]));
            PayoffEstimate {
                mean,
                stderr,
                n_runs: runs.len(),
                horizon: cfg.horizon,
                burn_in: cfg.burn_in,
                p_trigger,
            }
        })
        .collect();
    Ok(PayoffReport { estimates, runs })
}

/// Width of the statistical budget in standard errors.
pub const STAT_BUDGET_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, Serialize)]
pub struct DeviationRow {
    pub kind: DeviationKind,
    /// Player-1 payoff, or the worst conforming player for the conform row.
    pub payoff: f64,
    pub stderr: f64,
    pub p_trigger: f64,
    pub threshold: f64,
    pub exceeds_cap: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationReport {
    pub e_n: f64,
    pub epsilon: f64,
    pub rows: Vec<DeviationRow>,
}

impl DeviationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("kind,payoff,stderr,p_trigger,threshold,exceeds_cap,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{},{}",
                r.kind, r.payoff, r.stderr, r.p_trigger, r.threshold, r.exceeds_cap, r.pass
            );
        }
        out
    }
}

/// Row of the deviation table for `policy` given its payoff estimates.
/// Deviations pass when player 1 gains less than `epsilon`; the conform
/// row passes when every player is within `epsilon` of `e^N`, both up to
/// three standard errors.
pub fn deviation_row(policy: &DeviationPolicy, report: &PayoffReport, e_n: f64, epsilon: f64) -> DeviationRow {
    if policy.kind == DeviationKind::Conform {
        let (worst, gap) = report
            .estimates
            .iter()
            .map(|e| (e, (e.mean - e_n).abs() - STAT_BUDGET_SIGMAS * e.stderr))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least two players");
        DeviationRow {
            kind: policy.kind,
            payoff: worst.mean,
            stderr: worst.stderr,
            p_trigger: worst.p_trigger,
            threshold: epsilon,
            exceeds_cap: false,
            pass: gap <= epsilon,
        }
    } else {
        let e = &report.estimates[0];
        let threshold = e_n - epsilon;
        DeviationRow {
            kind: policy.kind,
            payoff: e.mean,
            stderr: e.stderr,
            p_trigger: e.p_trigger,
            threshold,
            exceeds_cap: policy.exceeds_cap(),
            pass: e.mean >= threshold - STAT_BUDGET_SIGMAS * e.stderr,
        }
    }
}

/// Estimates payoffs for each policy and tabulates [`deviation_row`]s.
pub fn deviation_suite(
    cfg: &SimConfig,
    params: &TriggerParams,
    policies: &[DeviationPolicy],
    e_n: f64,
    epsilon: f64,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
) -> Result<(DeviationReport, Vec<PayoffReport>)> {
    let mut rows = Vec::with_capacity(policies.len());
    let mut reports = Vec::with_capacity(policies.len());
    for policy in policies {
        let rep = estimate_payoffs(cfg, params, policy, l, f)?;
        rows.push(deviation_row(policy, &rep, e_n, epsilon));
        reports.push(rep);
    }
    Ok((DeviationReport { e_n, epsilon, rows }, reports))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub n_players: usize,
    pub e_n: f64,
    /// `e^N - e`.
    pub bias: f64,
    /// `(N - 1) (e^N - e)`, constant when the bias is exactly `1/(N-1)`.
    pub scaled_bias: f64,
    pub simulated: Option<PayoffEstimate>,
}

/// Closed-form `e^N` for each `N` and, when `simulate` is set, the all-conform
/// payoff of player 1 at that `N`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_n(
    cfg: &SimConfig,
    params: &TriggerParams,
    n_list: &[usize],
    target: &TargetPair,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    simulate: bool,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let en = compute_en(n, target, l, f, ExpectationMethod::ClosedForm)?;
        let bias = en.e_n - target.e;
        let simulated = if simulate {
            let c = SimConfig {
                n_players: n,
                ..cfg.clone()
            };
            let rep = estimate_payoffs(&c, params, &DeviationPolicy::conform(), l, f)?;
            Some(rep.estimates[0].clone())
        } else {
            None
        };
        rows.push(SweepRow {
            n_players: n,
            e_n: en.e_n,
            bias,
            scaled_bias: bias * (n - 1) as f64,
            simulated,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n_players,e_n,bias,scaled_bias,sim_mean,sim_stderr,p_trigger\n");
    for r in rows {
        let (m, s, p) = match &r.simulated {
            Some(e) => (format!("{:?}", e.mean), format!("{:?}", e.stderr), format!("{:?}", e.p_trigger)),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(out, "{},{:?},{:?},{:?},{m},{s},{p}", r.n_players, r.e_n, r.bias, r.scaled_bias);
    }
    out
}
