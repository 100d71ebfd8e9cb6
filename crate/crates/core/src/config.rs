//! Run configuration: one JSON file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analytics::DEFAULT_DISTANCE_EDGES;
use crate::error::{Error, Result};
use crate::harmonize::HarmonizeOptions;
use crate::io::ConstraintPaths;
use crate::synth::{TruthSpec, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn years(&self) -> Vec<i32> {
        (self.start..=self.end).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub world: WorldSpec,
    pub truth: TruthSpec,
    pub taus: Vec<f64>,
    /// (b, sigma) pairs.
    pub bias_grid: Vec<(f64, f64)>,
    pub seeds: Vec<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut bias_grid = Vec::new();
        for b in [0.05, 0.1, 0.2] {
            for s in [0.0, 0.1, 0.2] {
                bias_grid.push((b, s));
            }
        }
        Self {
            world: WorldSpec::default(),
            truth: TruthSpec::default(),
            taus: vec![0.05, 0.1, 0.2],
            bias_grid,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub distance_edges: Vec<f64>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            distance_edges: DEFAULT_DISTANCE_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedactConfig {
    /// Rows whose top `k` destinations already hold share `q` are dropped.
    pub k: usize,
    pub q: f64,
}

impl Default for RedactConfig {
    fn default() -> Self {
        Self { k: 5, q: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub hierarchy: Option<PathBuf>,
    #[serde(default)]
    pub geography_changes: Option<PathBuf>,
    #[serde(default)]
    pub records: Option<PathBuf>,
    /// `address_id,cbg_id`
    #[serde(default)]
    pub exact_geocodes: Option<PathBuf>,
    /// `address_id,zip,tract_id,weight`
    #[serde(default)]
    pub zip_assignments: Option<PathBuf>,
    /// `cbg_id,population`, weights for spreading zip addresses over a tract.
    #[serde(default)]
    pub cbg_weights: Option<PathBuf>,
    #[serde(default)]
    pub constraints: Option<ConstraintPaths>,
    #[serde(default)]
    pub categories: Option<PathBuf>,
    #[serde(default)]
    pub regions: Option<PathBuf>,
    /// Address matrices; defaults to `<output_dir>/address`.
    #[serde(default)]
    pub address_matrix_dir: Option<PathBuf>,
    /// Block-group matrices to harmonize directly, skipping the crosswalk.
    #[serde(default)]
    pub raw_matrix_dir: Option<PathBuf>,
    /// Matrices read by validate, analyze and redact; defaults to
    /// `<output_dir>/migrate`.
    #[serde(default)]
    pub matrix_dir: Option<PathBuf>,
    /// Reference matrices for validate.
    #[serde(default)]
    pub truth_dir: Option<PathBuf>,
    pub years: YearRange,
    #[serde(default)]
    pub harmonize: HarmonizeOptions,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub redact: RedactConfig,
}

impl RunConfig {
    /// Load, apply overrides in order, resolve relative paths against the
    /// config file's directory and check.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let mut c: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        if let Some(dir) = path.parent() {
            c.resolve(dir);
        }
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<()> {
        if self.years.start > self.years.end {
            return Err(Error::InvalidInput(format!(
                "year range {}..{} is empty",
                self.years.start, self.years.end
            )));
        }
        if self.synth.taus.iter().any(|t| !(*t >= 0.0)) || self.synth.bias_grid.iter().any(|(_, s)| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("tau and sigma must be non-negative".into()));
        }
        if !(self.redact.q > 0.0 && self.redact.q <= 1.0) || self.redact.k == 0 {
            return Err(Error::InvalidInput("redact needs k ≥ 1 and 0 < q ≤ 1".into()));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.hierarchy,
            &mut self.geography_changes,
            &mut self.records,
            &mut self.exact_geocodes,
            &mut self.zip_assignments,
            &mut self.cbg_weights,
            &mut self.categories,
            &mut self.regions,
            &mut self.address_matrix_dir,
            &mut self.raw_matrix_dir,
            &mut self.matrix_dir,
            &mut self.truth_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(c) = &mut self.constraints {
            fix(&mut c.state_pops);
            fix(&mut c.state_flows);
            fix(&mut c.county_pops);
            for p in [&mut c.cbg_pops, &mut c.components].into_iter().flatten() {
                fix(p);
            }
        }
        fix(&mut self.output_dir);
    }

    pub fn address_matrix_dir(&self) -> PathBuf {
        self.address_matrix_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("address"))
    }

    pub fn matrix_dir(&self) -> PathBuf {
        self.matrix_dir.clone().unwrap_or_else(|| self.output_dir.join("migrate"))
    }

    pub fn require<'a>(&self, field: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
        v.as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("config field `{field}` is required")))
    }
}

/// `a.b.c=value`; the value is parsed as JSON and taken as a string when
/// that fails.
pub fn apply_override(v: &mut Value, o: &str) -> Result<()> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| Error::InvalidInput(format!("override `{o}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidInput(format!("override key `{key}` has an empty segment")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().unwrap()
            }
            _ => return Err(Error::InvalidInput(format!("override `{key}` descends into a non-object"))),
        };
        if k + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = obj.entry((*part).to_owned()).or_insert(Value::Null);
    }
    unreachable!()
}
