//! CSV `(node, value)` and JSON `{n_cells, values}` persistence for grid data.
//!
//! Floats are written with the shortest representation that round-trips, so
//! reading back reproduces every value bit for bit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::grid::{GridDrift, GridField, ProbabilityGrid, TorusGrid};

#[derive(Serialize, Deserialize)]
struct GridValues {
    n_cells: usize,
    values: Vec<f64>,
}

fn to_csv(header: &str, positions: impl Iterator<Item = f64>, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 40);
    out.push_str(header);
    out.push('\n');
    for (x, v) in positions.zip(values) {
        let _ = writeln!(out, "{x:?},{v:?}");
    }
    out
}

fn from_csv(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (_, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: expected two columns", k + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", k + 1)))?;
        values.push(v);
    }
    Ok(values)
}

fn grid_for(len: usize) -> Result<TorusGrid> {
    TorusGrid::new(len).map_err(|e| Error::Parse(e.to_string()))
}

fn parse_json(text: &str) -> Result<(TorusGrid, Vec<f64>)> {
    let gv: GridValues = serde_json::from_str(text)?;
    if gv.values.len() != gv.n_cells {
        return Err(Error::Parse(format!(
            "n_cells = {} but {} values",
            gv.n_cells,
            gv.values.len()
        )));
    }
    Ok((grid_for(gv.n_cells)?, gv.values))
}

fn json(n_cells: usize, values: &[f64]) -> String {
    serde_json::to_string(&GridValues {
        n_cells,
        values: values.to_vec(),
    })
    .expect("plain data serializes")
}

impl GridField {
    pub fn to_csv(&self) -> String {
        to_csv("node,value", self.grid().nodes(), self.values())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let values = from_csv(text)?;
        GridField::new(grid_for(values.len())?, values)
    }

    pub fn to_json(&self) -> String {
        json(self.grid().n_cells(), self.values())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (g, v) = parse_json(text)?;
        GridField::new(g, v)
    }
}

impl GridDrift {
    /// The position column holds the faces.
    pub fn to_csv(&self) -> String {
        let g = self.grid();
        to_csv("face,value", (0..g.n_cells()).map(|i| g.face(i)), self.values())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let values = from_csv(text)?;
        GridDrift::new(grid_for(values.len())?, values)
    }

    pub fn to_json(&self) -> String {
        json(self.grid().n_cells(), self.values())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (g, v) = parse_json(text)?;
        GridDrift::new(g, v)
    }
}

impl ProbabilityGrid {
    pub fn to_csv(&self) -> String {
        to_csv("node,value", self.grid().nodes(), self.density())
    }

    /// Reads densities back without renormalizing when the mass is already
    /// within tolerance, so a written measure round-trips exactly.
    pub fn from_csv(text: &str) -> Result<Self> {
        let values = from_csv(text)?;
        ProbabilityGrid::from_density(grid_for(values.len())?, values)
    }

    pub fn to_json(&self) -> String {
        json(self.grid().n_cells(), self.density())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (g, v) = parse_json(text)?;
        ProbabilityGrid::from_density(g, v)
    }
}
