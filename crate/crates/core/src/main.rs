use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ergofolk::config::{Auto, AutoWord, ExperimentConfig};
use ergofolk::mfg::{solve_mfg, MfgEquilibrium};
use ergofolk::pipeline::{run_pipeline, PenalizedSummary, PlannerSummary, Status};
use ergofolk::planner::{solve_penalized, solve_planner, PenalizedSolution, PlannerSolution};
use ergofolk::selftest::{selftest, SelftestOptions};
use ergofolk::sim::{
    deviation_suite, estimate_payoffs, sweep_csv, sweep_n, DeviationPolicy, TriggerParams,
};
use ergofolk::target::{
    build_target, calibrate_delta, compute_en, select_penalization, ExpectationMethod, PayoffEN, TargetPair,
};
use ergofolk::torus::{CouplingFunctional, LagrangianSpec};
use ergofolk::{Error, Result};

/// Ergodic mean-field games on the circle and folk-theorem equilibria of the
/// N-player game.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset: paper-instance or flat.
    #[arg(long, global = true, default_value = "paper-instance")]
    preset: String,
    /// Output directory.
    #[arg(long, global = true, env = "ERGOFOLK_OUT", default_value = "ergofolk-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    n_cells: Option<usize>,
    /// Target payoff e, a number or `auto` for the band midpoint.
    #[arg(long, global = true)]
    e: Option<String>,
    #[arg(long, global = true)]
    n_players: Option<usize>,
    /// Grace period T of the trigger.
    #[arg(long, global = true)]
    grace: Option<f64>,
    /// Trigger tolerance, a number or `auto`.
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Penalization n, a number or `auto`.
    #[arg(long, global = true)]
    n_penalization: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    check_interval: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    burn_in: Option<f64>,
    #[arg(long, global = true)]
    n_runs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the MFG equilibrium and report the payoff band end e_max.
    Mfg,
    /// Solve the social planner problem for e_min.
    Planner,
    /// Solve the penalized problem at a given n.
    Penalized {
        #[arg(long)]
        n: f64,
    },
    /// Build the target pair (m̂, α̂) for the configured e.
    Target,
    /// Calibrate the trigger tolerance δ for the configured ε.
    Calibrate,
    /// Simulate the all-conform N-player game.
    Simulate,
    /// Run the canonical deviations against the trigger strategy.
    Deviate,
    /// Tabulate e^N over the configured list of N.
    SweepN {
        /// Also simulate the all-conform payoff at each N.
        #[arg(long)]
        simulate: bool,
    },
    /// Run every stage and write a hashed artifact bundle.
    Pipeline,
    /// Run the built-in checks.
    Selftest {
        /// Loosen the HJB tolerance; the selftest must then fail.
        #[arg(long)]
        corrupt_tolerance: bool,
    },
}

fn parse_auto(name: &str, s: &str) -> Result<Auto<f64>> {
    if s == "auto" {
        return Ok(Auto::Auto(AutoWord::Auto));
    }
    s.parse()
        .map(Auto::Value)
        .map_err(|_| Error::Config(format!("--{name} expects a number or `auto`, got {s:?}")))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(&self.preset)?,
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(n_cells, n_players, grace, epsilon, check_interval, dt, horizon, burn_in, n_runs, seed);
        if let Some(s) = &self.e {
            cfg.e = parse_auto("e", s)?;
        }
        if let Some(s) = &self.delta {
            cfg.delta = parse_auto("delta", s)?;
        }
        if let Some(s) = &self.n_penalization {
            cfg.n_penalization = parse_auto("n-penalization", s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), contents)?;
    Ok(())
}

struct Problem {
    cfg: ExperimentConfig,
    l: LagrangianSpec,
    f: CouplingFunctional,
}

impl Problem {
    fn new(cfg: ExperimentConfig) -> Result<Self> {
        Ok(Self {
            l: cfg.lagrangian()?,
            f: cfg.coupling()?,
            cfg,
        })
    }

    fn band(&self) -> Result<(MfgEquilibrium, PlannerSolution)> {
        let mfg = solve_mfg(&self.l, &self.f).map_err(|e| e.in_stage("mfg"))?;
        let planner = solve_planner(&self.l, &self.f, &self.cfg.selection.fixed_point)
            .map_err(|e| e.in_stage("planner"))?;
        Ok((mfg, planner))
    }

    fn target(&self) -> Result<Targeted> {
        let (mfg, planner) = self.band()?;
        let e = self.cfg.e.value().unwrap_or(0.5 * (planner.e_min + mfg.e_max));
        let (pen, target, e_n) = match self.cfg.n_penalization.value() {
            Some(n) => {
                let pen = solve_penalized(n, &self.l, &self.f, &self.cfg.selection.fixed_point, &[])
                    .map_err(|e| e.in_stage("penalized"))?;
                let target =
                    build_target(e, &self.l, &self.f, &planner, &pen).map_err(|e| e.in_stage("target"))?;
                let e_n = compute_en(self.cfg.n_players, &target, &self.l, &self.f, ExpectationMethod::ClosedForm)?;
                (pen, target, e_n)
            }
            None => {
                let s = select_penalization(e, self.cfg.n_players, &self.l, &self.f, &mfg, &planner, &self.cfg.selection)
                    .map_err(|e| e.in_stage("penalized"))?;
                (s.penalized, s.target, s.e_n)
            }
        };
        Ok(Targeted {
            mfg,
            planner,
            pen,
            target,
            e_n,
        })
    }

    fn trigger(&self, t: &Targeted) -> Result<TriggerParams> {
        let delta = match self.cfg.delta.value() {
            Some(d) => d,
            None => {
                calibrate_delta(self.cfg.epsilon, &t.target, &self.l, &self.cfg.calibration)
                    .map_err(|e| e.in_stage("calibrate"))?
                    .delta
            }
        };
        TriggerParams::new(
            self.cfg.grace,
            delta,
            t.target.alpha_hat.clone(),
            t.pen.alpha_n.clone(),
            t.target.m_hat.clone(),
            self.cfg.check_interval,
        )
    }
}

struct Targeted {
    mfg: MfgEquilibrium,
    planner: PlannerSolution,
    pen: PenalizedSolution,
    target: TargetPair,
    e_n: PayoffEN,
}

/// Returns whether every invariant checked by the command held.
fn run(cli: Cli) -> Result<bool> {
    if let Command::Selftest { corrupt_tolerance } = cli.command {
        let s = selftest(&SelftestOptions { corrupt_tolerance });
        print!("{}", s.render());
        return Ok(s.pass());
    }
    let cfg = cli.common.config()?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| cli.common.out.clone());
    let p = Problem::new(cfg)?;
    match cli.command {
        Command::Mfg => {
            let eq = solve_mfg(&p.l, &p.f)?;
            write(&out, "u0.csv", eq.u0.to_csv())?;
            write(&out, "mu0.csv", eq.mu0.to_csv())?;
            print_json(&eq.summary(&p.f))?;
            Ok(eq.hjb_residual < 1e-8 && eq.fp_residual < 1e-8)
        }
        Command::Planner => {
            let (mfg, planner) = p.band()?;
            write(&out, "m_tilde.csv", planner.m_tilde.to_csv())?;
            write(&out, "alpha_tilde.csv", planner.alpha_tilde.to_csv())?;
            print_json(&PlannerSummary::from(&planner))?;
            Ok(planner.e_min <= mfg.e_mfg + 1e-9)
        }
        Command::Penalized { n } => {
            let pen = solve_penalized(n, &p.l, &p.f, &p.cfg.selection.fixed_point, &[])?;
            write(&out, "m_n.csv", pen.m_n.to_csv())?;
            write(&out, "alpha_n.csv", pen.alpha_n.to_csv())?;
            let s = PenalizedSummary {
                n: pen.n,
                f_value: pen.f_value,
                kinetic: pen.kinetic,
                value: pen.value(),
                objective: pen.objective,
                max_abs_drift: pen.alpha_n.max_abs(),
                exceeds_cap: pen.alpha_n.exceeds_cap(),
                hjb_residual: pen.hjb_residual,
                fp_residual: pen.fp_residual,
                iterations: pen.iterations,
                rungs: Vec::new(),
            };
            print_json(&s)?;
            Ok(true)
        }
        Command::Target => {
            let t = p.target()?;
            write(&out, "m_hat.csv", t.target.m_hat.to_csv())?;
            write(&out, "alpha_hat.csv", t.target.alpha_hat.to_csv())?;
            print_json(&t.target.summary())?;
            print_json(&t.e_n)?;
            Ok((t.target.value - t.target.e).abs() <= ergofolk::target::TARGET_TOLERANCE)
        }
        Command::Calibrate => {
            let t = p.target()?;
            let cal = calibrate_delta(p.cfg.epsilon, &t.target, &p.l, &p.cfg.calibration)?;
            write(&out, "calibration.json", serde_json::to_string_pretty(&cal)?)?;
            println!("delta = {}", cal.delta);
            println!("holdout: {} within, {} violations", cal.holdout_within, cal.holdout_violations);
            Ok(cal.holdout_violations == 0)
        }
        Command::Simulate => {
            let t = p.target()?;
            let params = p.trigger(&t)?;
            let rep = estimate_payoffs(&p.cfg.sim_config(), &params, &DeviationPolicy::conform(), &p.l, &p.f)?;
            write(&out, "simulate_runs.jsonl", rep.json_lines()?)?;
            write(&out, "simulate.csv", rep.csv())?;
            print!("{}", rep.csv());
            println!("e^N = {}", t.e_n.e_n);
            Ok(true)
        }
        Command::Deviate => {
            let t = p.target()?;
            let params = p.trigger(&t)?;
            let policies = [
                DeviationPolicy::conform(),
                DeviationPolicy::selfish(&t.mfg.u0),
                DeviationPolicy::lazy(&t.target.alpha_hat),
                DeviationPolicy::planner(&t.planner.alpha_tilde),
            ];
            let (rep, _) = deviation_suite(
                &p.cfg.sim_config(),
                &params,
                &policies,
                t.e_n.e_n,
                p.cfg.epsilon,
                &p.l,
                &p.f,
            )?;
            write(&out, "deviation.csv", rep.table())?;
            print!("{}", rep.table());
            Ok(rep.all_pass())
        }
        Command::SweepN { simulate } => {
            let t = p.target()?;
            let params = p.trigger(&t)?;
            let rows = sweep_n(&p.cfg.sim_config(), &params, &p.cfg.sweep_n, &t.target, &p.l, &p.f, simulate)?;
            write(&out, "sweep.csv", sweep_csv(&rows))?;
            print!("{}", sweep_csv(&rows));
            Ok(true)
        }
        Command::Pipeline => {
            let report = run_pipeline(&p.cfg, &out)?;
            println!("status: {:?}", report.status);
            println!("{}", report.message);
            for c in &report.checks {
                println!("{} {:<26} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.status == Status::EmptyPayoffBand || report.all_pass())
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
