//! Artifact writers: branch/oracle CSVs, per-solution dumps, run logs.

use cbc_core::continuation::{Branch, ContinuationPoint};
use cbc_core::oracle::OracleBranch;
use cbc_core::spline::{write_spline_record, PeriodicBasis, SplineCurve};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub const BRANCH_CSV_HEADER: &str =
    "index,lambda,amplitude,residual_norm,rms_control_effort,newton_iters,stepsize,flags,knot_adaptation_error";

pub const ORACLE_CSV_HEADER: &str = "lambda,x0,y0,period,amplitude,multiplier,stability";

pub const NOISE_CSV_HEADER: &str =
    "parameters,seeds,spline_rmse_mean,fourier_rmse_mean,spline_win_fraction";

fn point_flags(point: &ContinuationPoint, index: usize) -> String {
    let mut flags = Vec::new();
    if index < 2 {
        flags.push("init");
    }
    if point.converged_by_cap {
        flags.push("converged-by-cap");
    }
    flags.join(";")
}

pub fn branch_csv(branch: &Branch) -> String {
    let mut out = String::new();
    out.push_str(BRANCH_CSV_HEADER);
    out.push('\n');
    for (index, point) in branch.points.iter().enumerate() {
        let _ = writeln!(
            out,
            "{index},{},{},{},{},{},{},{},{}",
            point.lambda,
            point.amplitude,
            point.residual_norm,
            point.rms_control_effort,
            point.newton_iterations,
            point.stepsize,
            point_flags(point, index),
            point.knot_adaptation_error,
        );
    }
    out
}

pub fn oracle_csv(branch: &OracleBranch) -> String {
    let mut out = String::new();
    out.push_str(ORACLE_CSV_HEADER);
    out.push('\n');
    for orbit in &branch.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            orbit.lambda,
            orbit.anchor[0],
            orbit.anchor[1],
            orbit.period,
            orbit.amplitude,
            orbit.nontrivial_multiplier,
            if orbit.stable { "stable" } else { "unstable" },
        );
    }
    out
}

/// Per-solution dump: the spline record plus parameter and embedding state.
pub fn solution_dump(point: &ContinuationPoint) -> String {
    let basis = PeriodicBasis::cubic(point.knots.clone());
    let curve = SplineCurve::new(basis, point.coefficients.clone())
        .expect("accepted point has matching coefficient count");
    let mut out = String::new();
    let _ = writeln!(out, "lambda: {}", point.lambda);
    out.push_str(&write_spline_record(&curve, point.fit_error));
    let _ = writeln!(
        out,
        "embedding: {} mu_x={} mu_z={} sigma={}",
        point.embedding.heuristic.name(),
        point.embedding.mu_x,
        point.embedding.mu_z,
        point.embedding.sigma,
    );
    out
}

/// Structured run-log lines: `key=value` pairs, one event per line.
pub struct RunLog {
    lines: Vec<String>,
    verbose: bool,
}

impl RunLog {
    pub fn new(verbose: bool) -> Self {
        Self {
            lines: Vec::new(),
            verbose,
        }
    }

    pub fn event(&mut self, name: &str, fields: &[(&str, String)]) {
        let mut line = format!("event={name}");
        for (key, value) in fields {
            let _ = write!(line, " {key}={value}");
        }
        if self.verbose {
            eprintln!("{line}");
        }
        self.lines.push(line);
    }

    pub fn contents(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(contents.as_bytes())
}
