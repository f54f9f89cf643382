use std::io::BufRead;

use crate::error::{Error, Result};
use crate::sim::engine::{any_exit, CheckSchedule};
use crate::sim::params::TriggerParams;

pub const REPLAY_HEADER: &str = "t,player,position";

/// Recomputes the trigger time from a recorded `t,player,position` path.
///
/// Every record stands for `stride` steps of length `dt`. With `stride = 1`
/// the occupation counts, and therefore `θ`, are reproduced exactly.
pub fn replay_theta(
    reader: impl BufRead,
    n_players: usize,
    params: &TriggerParams,
    dt: f64,
    stride: u64,
) -> Result<Option<f64>> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".into()));
    }
    let grid = params.target.grid();
    let n = grid.n_cells();
    let target = params.target.masses();
    let schedule = CheckSchedule::new(params, dt);
    let mut occupation = vec![0u64; n_players * n];
    let (mut masses, mut scratch) = (Vec::new(), Vec::new());
    let mut seen = 0usize;
    let mut current: Option<u64> = None;

    let mut flush = |k: u64, seen: usize, occupation: &[u64]| -> Result<Option<f64>> {
        if seen != n_players {
            return Err(Error::Parse(format!("step {k}: {seen} of {n_players} players recorded")));
        }
        let after = k + stride;
        let checked = (k + 1..=after).any(|s| schedule.is_check(s));
        if checked && any_exit(occupation, after, &target, grid.h(), params.delta, &mut masses, &mut scratch) {
            return Ok(Some(after as f64 * dt));
        }
        Ok(None)
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == REPLAY_HEADER) {
            continue;
        }
        let bad = || Error::Parse(format!("line {}: malformed record {line:?}", lineno + 1));
        let mut it = line.split(',');
        let t: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let j: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let x: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() || j >= n_players || !(0.0..1.0).contains(&x) {
            return Err(bad());
        }
        let k = (t / dt).round() as u64;
        if current != Some(k) {
            if let Some(prev) = current {
                if let Some(theta) = flush(prev, seen, &occupation)? {
                    return Ok(Some(theta));
                }
            }
            current = Some(k);
            seen = 0;
        }
        occupation[j * n + grid.nearest_cell(x)] += stride;
        seen += 1;
    }
    match current {
        Some(k) => flush(k, seen, &occupation),
        None => Ok(None),
    }
}
