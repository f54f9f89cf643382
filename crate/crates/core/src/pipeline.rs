//! Staged experiment runner writing a hashed artifact bundle.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mfg::{solve_mfg, MfgSummary};
use crate::planner::{solve_penalized, solve_planner, CandidateRecord, PenalizedSolution, PlannerSolution};
use crate::sim::{
    deviation_row, estimate_payoffs, sweep_csv, sweep_n, DeviationPolicy, DeviationReport, PayoffEstimate,
    SweepRow, TriggerParams,
};
use crate::solvers::optimal_stationary_drift;
use crate::target::{
    build_target, calibrate_delta, compute_en, select_penalization, ExpectationMethod, PayoffEN, RungCheck,
    TargetSummary, TARGET_TOLERANCE,
};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Complete,
    EmptyPayoffBand,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlannerSummary {
    pub e_min: f64,
    pub lambda: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
    pub candidates: Vec<CandidateRecord>,
}

impl From<&PlannerSolution> for PlannerSummary {
    fn from(p: &PlannerSolution) -> Self {
        Self {
            e_min: p.e_min,
            lambda: p.lambda,
            hjb_residual: p.hjb_residual,
            fp_residual: p.fp_residual,
            iterations: p.iterations,
            candidates: p.candidates.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PenalizedSummary {
    pub n: f64,
    pub f_value: f64,
    pub kinetic: f64,
    pub value: f64,
    pub objective: f64,
    pub max_abs_drift: f64,
    pub exceeds_cap: bool,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
    pub rungs: Vec<RungCheck>,
}

impl PenalizedSummary {
    fn new(p: &PenalizedSolution, rungs: Vec<RungCheck>) -> Self {
        Self {
            n: p.n,
            f_value: p.f_value,
            kinetic: p.kinetic,
            value: p.value(),
            objective: p.objective,
            max_abs_drift: p.alpha_n.max_abs(),
            exceeds_cap: p.alpha_n.exceeds_cap(),
            hjb_residual: p.hjb_residual,
            fp_residual: p.fp_residual,
            iterations: p.iterations,
            rungs,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationSummary {
    pub delta: f64,
    pub from_config: bool,
    pub heuristic: bool,
    pub holdout_within: usize,
    pub holdout_violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub status: Status,
    pub message: String,
    pub mfg: MfgSummary,
    pub planner: PlannerSummary,
    pub e_target: Option<f64>,
    pub penalized: Option<PenalizedSummary>,
    pub target: Option<TargetSummary>,
    pub e_n: Option<PayoffEN>,
    pub calibration: Option<CalibrationSummary>,
    pub conform: Option<PayoffEstimate>,
    pub deviation: Option<DeviationReport>,
    pub sweep: Option<Vec<SweepRow>>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files whose hash no longer matches the manifest in `dir`, or which are missing.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    Ok(manifest
        .files
        .iter()
        .filter(|e| fs::read(dir.join(&e.path)).map_or(true, |b| sha256_hex(&b) != e.sha256))
        .map(|e| e.path.clone())
        .collect())
}

struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(mut self, report: &mut Report, resolved: &ExperimentConfig) -> Result<()> {
        self.write("resolved_config.toml", resolved.to_toml()?)?;
        report.artifacts = self.files.clone();
        report.artifacts.push(REPORT.to_string());
        self.json(REPORT, report)?;
        let files = self
            .files
            .iter()
            .map(|name| {
                let bytes = fs::read(self.dir.join(name))?;
                Ok(ManifestEntry {
                    path: name.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut text = serde_json::to_string_pretty(&Manifest { files })?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(())
    }
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

struct Timer(Instant);

impl Timer {
    fn lap(&mut self, stage: &str) {
        eprintln!("[{stage}] {:.2?}", self.0.elapsed());
        self.0 = Instant::now();
    }
}

/// Runs mfg → planner → penalization → target → calibration → simulation →
/// deviations → N-sweep and writes everything under `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut bundle = Bundle {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let mut timer = Timer(Instant::now());
    let l = cfg.lagrangian().map_err(|e| Error::Config(e.to_string()))?;
    let f = cfg.coupling().map_err(|e| Error::Config(e.to_string()))?;
    let mut checks = Vec::new();

    let mfg = solve_mfg(&l, &f).map_err(|e| e.in_stage("mfg"))?;
    let mfg_summary = mfg.summary(&f);
    bundle.json("mfg.json", &mfg_summary)?;
    bundle.write("u0.csv", mfg.u0.to_csv())?;
    bundle.write("mu0.csv", mfg.mu0.to_csv())?;
    checks.push(check(
        "mfg-residuals",
        mfg.hjb_residual < 1e-8 && mfg.fp_residual < 1e-8,
        format!("hjb {:e}, fp {:e}", mfg.hjb_residual, mfg.fp_residual),
    ));
    timer.lap("mfg");

    let planner = solve_planner(&l, &f, &cfg.selection.fixed_point).map_err(|e| e.in_stage("planner"))?;
    let planner_summary = PlannerSummary::from(&planner);
    bundle.json("planner.json", &planner_summary)?;
    bundle.write("m_tilde.csv", planner.m_tilde.to_csv())?;
    bundle.write("alpha_tilde.csv", planner.alpha_tilde.to_csv())?;
    checks.push(check(
        "payoff-band-order",
        planner.e_min <= mfg.e_mfg + TARGET_TOLERANCE && mfg.e_mfg <= mfg.e_max + TARGET_TOLERANCE,
        format!("e_min {} ≤ e_mfg {} ≤ e_max {}", planner.e_min, mfg.e_mfg, mfg.e_max),
    ));
    timer.lap("planner");

    let mut report = Report {
        status: Status::Complete,
        message: String::new(),
        mfg: mfg_summary,
        planner: planner_summary,
        e_target: None,
        penalized: None,
        target: None,
        e_n: None,
        calibration: None,
        conform: None,
        deviation: None,
        sweep: None,
        checks,
        artifacts: Vec::new(),
    };

    if mfg.e_max - planner.e_min <= TARGET_TOLERANCE {
        report.status = Status::EmptyPayoffBand;
        report.message = format!(
            "empty payoff band: e_min = {} and e_max = {} coincide, so F is constant on the reachable measures and only the MFG payoff is sustainable",
            planner.e_min, mfg.e_max
        );
        let resolved = cfg.resolved(planner.e_min, None, None);
        bundle.finish(&mut report, &resolved)?;
        return Ok(report);
    }

    let e = cfg.e.value().unwrap_or(0.5 * (planner.e_min + mfg.e_max));
    if !(e >= planner.e_min - TARGET_TOLERANCE && e < mfg.e_max) {
        return Err(Error::TargetOutOfBand {
            target: e,
            e_min: planner.e_min,
            e_max: mfg.e_max,
        });
    }
    report.e_target = Some(e);

    let (pen, target, e_n, rungs) = match cfg.n_penalization.value() {
        Some(n) => {
            let pen = solve_penalized(n, &l, &f, &cfg.selection.fixed_point, &[])
                .map_err(|e| e.in_stage("penalized"))?;
            let target = build_target(e, &l, &f, &planner, &pen).map_err(|e| e.in_stage("target"))?;
            let e_n = compute_en(cfg.n_players, &target, &l, &f, ExpectationMethod::ClosedForm)?;
            (pen, target, e_n, Vec::new())
        }
        None => {
            let s = select_penalization(e, cfg.n_players, &l, &f, &mfg, &planner, &cfg.selection)
                .map_err(|e| e.in_stage("penalized"))?;
            (s.penalized, s.target, s.e_n, s.rungs)
        }
    };
    report.penalized = Some(PenalizedSummary::new(&pen, rungs));
    bundle.json("penalized.json", &report.penalized)?;
    bundle.write("m_n.csv", pen.m_n.to_csv())?;
    bundle.write("alpha_n.csv", pen.alpha_n.to_csv())?;
    timer.lap("penalized");

    let target_summary = target.summary();
    let hat = optimal_stationary_drift(&l, &target.m_hat).map_err(|e| e.in_stage("target"))?;
    let drift_gap = hat.alpha.max_abs_diff(&target.alpha_hat)?;
    report.checks.push(check(
        "target-value",
        (target.value - e).abs() <= TARGET_TOLERANCE,
        format!("|value - e| = {:e}", (target.value - e).abs()),
    ));
    report.checks.push(check(
        "target-drift-consistency",
        drift_gap <= 1e-6,
        format!("max |α(m̂) - α̂| = {drift_gap:e}"),
    ));
    bundle.json("target.json", &target_summary)?;
    bundle.write("m_hat.csv", target.m_hat.to_csv())?;
    bundle.write("alpha_hat.csv", target.alpha_hat.to_csv())?;
    bundle.json("e_n.json", &e_n)?;
    report.target = Some(target_summary);
    report.e_n = Some(e_n.clone());
    timer.lap("target");

    let calibration = match cfg.delta.value() {
        Some(delta) => CalibrationSummary {
            delta,
            from_config: true,
            heuristic: false,
            holdout_within: 0,
            holdout_violations: 0,
        },
        None => {
            let cal = calibrate_delta(cfg.epsilon, &target, &l, &cfg.calibration)
                .map_err(|e| e.in_stage("calibrate"))?;
            bundle.json("calibration.json", &cal)?;
            CalibrationSummary {
                delta: cal.delta,
                from_config: false,
                heuristic: cal.heuristic,
                holdout_within: cal.holdout_within,
                holdout_violations: cal.holdout_violations,
            }
        }
    };
    let delta = calibration.delta;
    report.calibration = Some(calibration);
    timer.lap("calibrate");

    let params = TriggerParams::new(
        cfg.grace,
        delta,
        target.alpha_hat.clone(),
        pen.alpha_n.clone(),
        target.m_hat.clone(),
        cfg.check_interval,
    )?;
    let sim = cfg.sim_config();
    let conform = DeviationPolicy::conform();
    let rep = estimate_payoffs(&sim, &params, &conform, &l, &f).map_err(|e| e.in_stage("simulate"))?;
    bundle.write("simulate_runs.jsonl", rep.json_lines()?)?;
    bundle.write("simulate.csv", rep.csv())?;
    let conform_row = deviation_row(&conform, &rep, e_n.e_n, cfg.epsilon);
    report.checks.push(check(
        "conform-payoff",
        conform_row.pass,
        format!("worst player {} vs e^N {}", conform_row.payoff, e_n.e_n),
    ));
    report.checks.push(check(
        "conform-trigger-rate",
        rep.p_trigger() <= 0.05,
        format!("p_trigger {}", rep.p_trigger()),
    ));
    report.conform = Some(rep.estimates[0].clone());
    timer.lap("simulate");

    let mut rows = vec![conform_row];
    for (name, policy) in [
        ("selfish", DeviationPolicy::selfish(&mfg.u0)),
        ("lazy", DeviationPolicy::lazy(&target.alpha_hat)),
        ("planner", DeviationPolicy::planner(&planner.alpha_tilde)),
    ] {
        let rep = estimate_payoffs(&sim, &params, &policy, &l, &f).map_err(|e| e.in_stage("deviate"))?;
        bundle.write(&format!("deviation_{name}.jsonl"), rep.json_lines()?)?;
        rows.push(deviation_row(&policy, &rep, e_n.e_n, cfg.epsilon));
    }
    let deviation = DeviationReport {
        e_n: e_n.e_n,
        epsilon: cfg.epsilon,
        rows,
    };
    bundle.write("deviation.csv", deviation.table())?;
    for r in &deviation.rows[1..] {
        report.checks.push(check(
            "deviation-unprofitable",
            r.pass,
            format!("{:?}: {} vs threshold {}", r.kind, r.payoff, r.threshold),
        ));
    }
    report.deviation = Some(deviation);
    timer.lap("deviate");

    let sweep = sweep_n(&sim, &params, &cfg.sweep_n, &target, &l, &f, cfg.sweep_simulate)
        .map_err(|e| e.in_stage("sweep"))?;
    bundle.write("sweep.csv", sweep_csv(&sweep))?;
    let decreasing = sweep.windows(2).all(|w| w[1].bias.abs() < w[0].bias.abs());
    report.checks.push(check(
        "sweep-bias-decreasing",
        decreasing,
        format!("{:?}", sweep.iter().map(|r| r.bias).collect::<Vec<_>>()),
    ));
    report.sweep = Some(sweep);
    timer.lap("sweep");

    report.message = if report.all_pass() {
        "all checks passed".into()
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        format!("failed checks: {}", failed.join(", "))
    };
    let resolved = cfg.resolved(e, Some(delta), Some(pen.n));
    bundle.finish(&mut report, &resolved)?;
    Ok(report)
}
