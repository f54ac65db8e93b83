//! Run configuration: TOML with one table per pipeline stage.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of modal directions.
    pub n: usize,
    /// Depth of the stream solution.
    pub d: f64,
    /// Fixes b instead of selecting it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// Seed for randomized bases.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub isp: IspConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    /// Newton tolerance on the shooting mismatch u(d) − 1.
    pub tol: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Offset of b above (πm/d)² when selecting b.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closeness: Option<f64>,
    /// Number of eigenpairs reported by `spectrum` (default N + 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Points per period in x (default from the largest wavenumber).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_points: Option<usize>,
    pub z_intervals: usize,
    /// Integrator substeps per z-interval (default resolves the bumps).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_points: None,
            z_intervals: 512,
            substeps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Combinations of the candidate bumps biorthogonal to the mode profiles.
    Adapted,
    /// One bump per subinterval of a partition of (0, 1).
    Partition,
    /// Seeded random combinations of the candidate bumps.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    Frozen,
    Fd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IspConfig {
    /// Number of candidate bumps (default 4N + 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<usize>,
    pub basis: BasisKind,
    /// Largest integer in the commensurate pattern search.
    pub pattern_max: u32,
    /// Search radius around the unperturbed eigenvalues.
    pub radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub refresh: Refresh,
    pub fd_step: f64,
    /// Explicit target eigenvalues for `tune-mu` instead of the nearest commensurate ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

impl Default for IspConfig {
    fn default() -> Self {
        Self {
            span: None,
            basis: BasisKind::Adapted,
            pattern_max: 6,
            radius: 5.0,
            tol: 1e-8,
            max_iter: 50,
            refresh: Refresh::Fd,
            fd_step: 1e-5,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Surface amplitudes t_j.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub delta_bound: f64,
    pub isp_tol: f64,
    pub isp_radius: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = vorwave_core::SolverOptions::default();
        Self {
            t: None,
            tol: o.tol,
            max_iter: o.max_iter,
            epsilon: o.epsilon,
            delta_bound: o.delta_bound,
            isp_tol: o.isp_tol,
            isp_radius: o.isp_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// |t| values along the direction.
    pub amplitudes: Vec<f64>,
    /// Direction of t (default all ones).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            amplitudes: vec![2e-3, 1e-3, 5e-4, 2.5e-4],
            direction: None,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(text: &str, err: toml::de::Error) -> CliError {
    let (line, column) = err.span().map_or((0, 0), |s| line_col(text, s.start));
    CliError::Parse {
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Parses, applies `key=value` overrides (dotted keys, TOML values) and validates.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    if !overrides.is_empty() {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        cfg = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::validation("--override", e.message()))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::validation(key, format!("`{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(CliError::validation("n", "must be at least 1"));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(CliError::validation("d", "must be positive"));
        }
        if let Some(b) = self.b {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::validation("b", "must be positive"));
            }
        }
        let positive = [
            ("stream.tol", self.stream.tol),
            ("isp.radius", self.isp.radius),
            ("isp.tol", self.isp.tol),
            ("isp.fd_step", self.isp.fd_step),
            ("solver.tol", self.solver.tol),
            ("solver.epsilon", self.solver.epsilon),
            ("solver.delta_bound", self.solver.delta_bound),
            ("solver.isp_tol", self.solver.isp_tol),
            ("solver.isp_radius", self.solver.isp_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::validation(name, "must be positive"));
            }
        }
        if let Some(c) = self.spectrum.closeness {
            if !(c > 0.0) {
                return Err(CliError::validation(
                    "spectrum.closeness",
                    "must be positive",
                ));
            }
        }
        if self.spectrum.count.is_some_and(|c| c < self.n) {
            return Err(CliError::validation("spectrum.count", "must be at least n"));
        }
        if let Some(m) = self.grid.x_points {
            if m < 4 || m % 2 == 1 {
                return Err(CliError::validation(
                    "grid.x_points",
                    "must be even and at least 4",
                ));
            }
        }
        if self.grid.z_intervals < 16 {
            return Err(CliError::validation(
                "grid.z_intervals",
                "must be at least 16",
            ));
        }
        if self.grid.substeps == Some(0) {
            return Err(CliError::validation("grid.substeps", "must be at least 1"));
        }
        if self.isp.span.is_some_and(|s| s < self.n + 1) {
            return Err(CliError::validation(
                "isp.span",
                "needs at least n + 1 candidate bumps",
            ));
        }
        if (self.isp.pattern_max as usize) < self.n {
            return Err(CliError::validation(
                "isp.pattern_max",
                "must be at least n",
            ));
        }
        if self.isp.max_iter == 0 || self.solver.max_iter == 0 {
            return Err(CliError::validation("max_iter", "must be at least 1"));
        }
        if let Some(t) = &self.isp.target {
            if t.len() != self.n {
                return Err(CliError::validation(
                    "isp.target",
                    format!("expected {} values, got {}", self.n, t.len()),
                ));
            }
        }
        if let Some(t) = &self.solver.t {
            if t.len() != self.n {
                return Err(CliError::validation(
                    "solver.t",
                    format!("expected {} amplitudes, got {}", self.n, t.len()),
                ));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(CliError::validation(
                    "solver.t",
                    "amplitudes must be finite",
                ));
            }
        }
        if self.scan.amplitudes.len() < 2 || self.scan.amplitudes.iter().any(|a| !(*a > 0.0)) {
            return Err(CliError::validation(
                "scan.amplitudes",
                "need at least two positive amplitudes",
            ));
        }
        if let Some(dir) = &self.scan.direction {
            if dir.len() != self.n {
                return Err(CliError::validation(
                    "scan.direction",
                    format!("expected {} components, got {}", self.n, dir.len()),
                ));
            }
        }
        Ok(())
    }

    /// Canonical TOML with every default spelled out.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
