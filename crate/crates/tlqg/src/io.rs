//! CSV emission and parsing plus atomic file writes.
//!
//! Column orders are frozen (documented in `docs/config.md`) and floats are
//! serialized with 17 significant digits so that parsing them back is exact
//! and repeated runs are byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Control, State};
use crate::planner::{barrier_cost, NominalPlan, PlanProblem};

/// Serialize a float with 17 significant digits (exact f64 round trip).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().ok_or_else(|| {
        Error::InvalidArgument(format!("output path {} has no parent", path.display()))
    })?;
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub const PLAN_CSV_HEADER: &str = "t,x,y,theta,v,omega,trace_P,barrier";

/// Render a plan as CSV, one row per step t = 0..K. The terminal row has no
/// applied control; its v and omega columns are written as 0.
pub fn plan_to_csv(plan: &NominalPlan, problem: &PlanProblem) -> String {
    let mut out = String::from(PLAN_CSV_HEADER);
    out.push('\n');
    for (t, state) in plan.states.iter().enumerate() {
        let (v, omega) = if t < plan.controls.len() {
            (plan.controls[t].v, plan.controls[t].omega)
        } else {
            (0.0, 0.0)
        };
        let barrier = barrier_cost(state, &problem.world.obstacles, &problem.barrier);
        out.push_str(&format!(
            "{t},{},{},{},{},{},{},{}\n",
            format_float(state.x),
            format_float(state.y),
            format_float(state.theta),
            format_float(v),
            format_float(omega),
            format_float(plan.covariances[t].trace()),
            format_float(barrier),
        ));
    }
    out
}

/// States and controls recovered from a plan CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanCsv {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

/// Parse a plan CSV. Total: any malformed input produces a `PlanArtifact`
/// error, never a panic.
pub fn parse_plan_csv(text: &str) -> Result<PlanCsv> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim_end() == PLAN_CSV_HEADER => {}
        Some(header) => {
            return Err(Error::PlanArtifact(format!(
                "unexpected header {header:?}, expected {PLAN_CSV_HEADER:?}"
            )))
        }
        None => return Err(Error::PlanArtifact("empty plan file".into())),
    }

    let mut states = Vec::new();
    let mut raw_controls = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2; // 1-based, after the header
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::PlanArtifact(format!(
                "row {row}: expected 8 fields, got {}",
                fields.len()
            )));
        }
        let t: usize = fields[0].trim().parse().map_err(|_| {
            Error::PlanArtifact(format!("row {row}: bad step index {:?}", fields[0]))
        })?;
        if t != i {
            return Err(Error::PlanArtifact(format!(
                "row {row}: step index {t} out of order (expected {i})"
            )));
        }
        let mut nums = [0.0f64; 7];
        for (k, field) in fields[1..].iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::PlanArtifact(format!("row {row}: bad float {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::PlanArtifact(format!(
                    "row {row}: non-finite value {field:?}"
                )));
            }
            nums[k] = v;
        }
        states.push(State::new(nums[0], nums[1], nums[2]));
        raw_controls.push(Control::new(nums[3], nums[4]));
    }
    if states.len() < 2 {
        return Err(Error::PlanArtifact(format!(
            "plan must have at least 2 rows (K >= 1), got {}",
            states.len()
        )));
    }
    raw_controls.pop(); // the terminal row carries no applied control
    Ok(PlanCsv {
        states,
        controls: raw_controls,
    })
}

/// Simple CSV table builder for the other outputs.
pub struct CsvTable {
    out: String,
}

impl CsvTable {
    pub fn new(header: &str) -> Self {
        let mut out = String::from(header);
        out.push('\n');
        Self { out }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.out.push_str(&fields.join(","));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}
