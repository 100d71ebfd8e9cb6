//! Synthetic worlds, ground-truth matrices, the two perturbation families
//! and end-to-end recovery experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::flow::{BlockPartition, FlowMatrix, Level};
use crate::geo::{build_hierarchy, CbgRecord, GeoHierarchy};
use crate::harmonize::{harmonize, HarmonizeOptions, PopulationPaths};
use crate::rng::{normal, Stream};
use crate::validate::{aggregate_matrix, aligned_entries, correlation, rmse_reduction, MetricReport};

/// Shape of a generated world. Ids follow the FIPS layout: 2-digit state,
/// 3-digit county, 6-digit tract, 1-digit block group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub states: usize,
    pub counties_per_state: usize,
    pub tracts_per_county: usize,
    pub cbgs_per_tract: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            states: 4,
            counties_per_state: 3,
            tracts_per_county: 6,
            cbgs_per_tract: 3,
            seed: 1,
        }
    }
}

/// Nested geography with jittered centroids: states on a grid a few
/// hundred miles apart, counties around their state, tracts and block
/// groups clustered inside.
pub fn generate_world(spec: &WorldSpec) -> Result<GeoHierarchy> {
    if spec.states == 0 || spec.counties_per_state == 0 || spec.tracts_per_county == 0 || spec.cbgs_per_tract == 0 {
        return Err(Error::InvalidInput("world dimensions must be positive".into()));
    }
    if spec.states > 99 || spec.counties_per_state > 999 || spec.cbgs_per_tract > 9 {
        return Err(Error::InvalidInput("world dimensions exceed the id layout".into()));
    }
    let jitter = |family: &str, ids: &[u64], scale: f64| -> (f64, f64) {
        let mut s = Stream::new(spec.seed, family, ids);
        (scale * s.normal(), scale * s.normal())
    };
    let mut records = Vec::new();
    for s in 0..spec.states {
        let (lat0, lon0) = (33.0 + 4.0 * (s / 4) as f64, -100.0 + 5.0 * (s % 4) as f64);
        let state_id = format!("{:02}", s + 1);
        for c in 0..spec.counties_per_state {
            let (dl, dn) = jitter("world_county", &[s as u64, c as u64], 1.0);
            let county_id = format!("{state_id}{:03}", 2 * c + 1);
            for t in 0..spec.tracts_per_county {
                let (tl, tn) = jitter("world_tract", &[s as u64, c as u64, t as u64], 0.15);
                let tract_id = format!("{county_id}{:06}", 100 * (t + 1));
                for g in 0..spec.cbgs_per_tract {
                    let (gl, gn) = jitter("world_cbg", &[s as u64, c as u64, t as u64, g as u64], 0.02);
                    let cbg_id = format!("{tract_id}{}", g + 1);
                    records.push(
                        CbgRecord::new(&cbg_id, &tract_id, &county_id, &state_id)
                            .with_centroid(lat0 + dl + tl + gl, lon0 + dn + tn + gn),
                    );
                }
            }
        }
    }
    build_hierarchy(&records)
}

/// Parameters of the gravity ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthSpec {
    pub year: i32,
    pub total_pop: f64,
    pub stay_rate: f64,
    pub gravity_exponent: f64,
    pub seed: u64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            year: 2015,
            total_pop: 1_000_000.0,
            stay_rate: 0.87,
            gravity_exponent: 2.0,
            seed: 1,
        }
    }
}

/// Log-normal block-group sizes used by the gravity kernel.
pub fn synthetic_populations(n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| (0.5 * normal(seed, "population", &[i as u64])).exp())
        .collect()
}

/// 5th percentile of pairwise centroid distances.
fn distance_floor(pts: &[crate::geo::Centroid]) -> f64 {
    let mut d: Vec<f64> = (0..pts.len())
        .flat_map(|i| (i + 1..pts.len()).map(move |j| (i, j)))
        .map(|(i, j)| pts[i].distance_miles(&pts[j]))
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    let k = ((d.len() - 1) as f64 * 0.05).floor() as usize;
    let (_, v, _) = d.select_nth_unstable_by(k, f64::total_cmp);
    v.max(f64::MIN_POSITIVE)
}

/// Ground truth: non-movers on the diagonal in proportion to block-group
/// size, movers spread by pop_i·pop_j / max(d_ij, floor)^exponent.
pub fn gen_ground_truth(h: &GeoHierarchy, spec: &TruthSpec) -> Result<FlowMatrix> {
    if !(spec.stay_rate > 0.0 && spec.stay_rate < 1.0) {
        return Err(Error::InvalidInput(format!("stay rate {} outside (0, 1)", spec.stay_rate)));
    }
    if !(spec.total_pop > 0.0) {
        return Err(Error::InvalidInput("total population must be positive".into()));
    }
    let pts = h.require_centroids()?;
    let n = h.len();
    let pop = synthetic_populations(n, spec.seed);
    let floor = distance_floor(&pts);
    let kernel = |i: usize, j: usize| -> f64 {
        let d = pts[i].distance_miles(&pts[j]).max(floor);
        pop[i] * pop[j] / d.powf(spec.gravity_exponent)
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { kernel(i, j) }).collect())
        .collect();
    let k_total = crate::kahan::sum(rows.iter().flat_map(|r| r.iter().copied()));
    let p_total = crate::kahan::sum(pop.iter().copied());
    let movers = (1.0 - spec.stay_rate) * spec.total_pop;
    let stayers = spec.stay_rate * spec.total_pop;
    let mut t = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &k) in row.iter().enumerate() {
            let v = if i == j {
                stayers * pop[i] / p_total
            } else if k_total > 0.0 {
                movers * k / k_total
            } else {
                0.0
            };
            t.push((i, j, v));
        }
    }
    FlowMatrix::from_triplets(n, spec.year, t)
}

/// Per-entry log-factor of the structured family: independent normals for
/// each row, each state's diagonal, each state's off-diagonal columns, each
/// state pair, each county's rows and each county's columns.
pub fn structured_log_factor(h: &GeoHierarchy, seed: u64, i: usize, j: usize) -> f64 {
    let (si, sj) = (h.parent(i, Level::State) as u64, h.parent(j, Level::State) as u64);
    let (ci, cj) = (h.parent(i, Level::County) as u64, h.parent(j, Level::County) as u64);
    let mut z = normal(seed, "row", &[i as u64]);
    z += if i == j {
        normal(seed, "state_diag", &[sj])
    } else {
        normal(seed, "state_offdiag_col", &[sj])
    };
    z += normal(seed, "state_pair", &[si, sj]);
    z += normal(seed, "county_row", &[ci]);
    z += normal(seed, "county_col", &[cj]);
    z
}

/// Multiply every entry by exp(tau · Σ group normals). tau = 0 returns the
/// input unchanged.
pub fn perturb_structured(m: &FlowMatrix, tau: f64, seed: u64, h: &GeoHierarchy) -> Result<FlowMatrix> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidInput(format!("tau {tau}")));
    }
    if m.n() != h.len() {
        return Err(Error::PartitionMismatch {
            partition: h.len(),
            matrix: m.n(),
        });
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    m.map_factors(|i, j| (tau * structured_log_factor(h, seed, i, j)).exp())
}

/// E_ij = M_ij · exp(b (w_i + w_j) + σ Z_ij), with Z drawn only on the
/// support of M.
pub fn perturb_bias_noise(m: &FlowMatrix, b: f64, sigma: f64, w: &[f64], seed: u64) -> Result<FlowMatrix> {
    if w.len() != m.n() {
        return Err(Error::LengthMismatch(w.len(), m.n()));
    }
    if !(sigma.is_finite() && sigma >= 0.0 && b.is_finite()) {
        return Err(Error::InvalidInput(format!("b {b}, sigma {sigma}")));
    }
    if b == 0.0 && sigma == 0.0 {
        return Ok(m.clone());
    }
    m.map_factors(|i, j| {
        let z = if sigma > 0.0 {
            normal(seed, "bias_noise", &[i as u64, j as u64])
        } else {
            0.0
        };
        (b * (w[i] + w[j]) + sigma * z).exp()
    })
}

/// Standardize to mean 0 and (population) standard deviation 1.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

/// A spatially clustered share in (0, 1), standing in for the white
/// population share: a state effect, a county effect and local noise
/// through a logistic link.
pub fn synthetic_share(h: &GeoHierarchy, seed: u64) -> Vec<f64> {
    (0..h.len())
        .map(|i| {
            let s = normal(seed, "share_state", &[h.parent(i, Level::State) as u64]);
            let c = normal(seed, "share_county", &[h.parent(i, Level::County) as u64]);
            let g = normal(seed, "share_cbg", &[i as u64]);
            let x = 0.8 + 0.7 * s + 0.5 * c + 0.6 * g;
            1.0 / (1.0 + (-x).exp())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Structured,
    BiasNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub family: Family,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub sigma: f64,
    /// Per-block-group z-scored covariate; required for bias-noise.
    #[serde(default)]
    pub w: Vec<f64>,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn structured(tau: f64, seed: u64) -> Self {
        Self {
            family: Family::Structured,
            tau,
            b: 0.0,
            sigma: 0.0,
            w: Vec::new(),
            seed,
        }
    }

    pub fn bias_noise(b: f64, sigma: f64, w: Vec<f64>, seed: u64) -> Self {
        Self {
            family: Family::BiasNoise,
            tau: 0.0,
            b,
            sigma,
            w,
            seed,
        }
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.tau < 0.0 || self.sigma < 0.0 {
            return Err(Error::InvalidInput("tau and sigma must be non-negative".into()));
        }
        if self.family == Family::BiasNoise {
            if self.w.len() != n {
                return Err(Error::LengthMismatch(self.w.len(), n));
            }
            let m = self.w.iter().sum::<f64>() / n as f64;
            let sd = (self.w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if m.abs() > 1e-6 || (sd - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput("covariate is not z-scored".into()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, m: &FlowMatrix, h: &GeoHierarchy) -> Result<FlowMatrix> {
        self.check(m.n())?;
        match self.family {
            Family::Structured => perturb_structured(m, self.tau, self.seed, h),
            Family::BiasNoise => perturb_bias_noise(m, self.b, self.sigma, &self.w, self.seed),
        }
    }
}

pub const RECOVERY_LEVELS: [Level; 4] = [Level::Cbg, Level::Tract, Level::County, Level::State];

/// Pearson correlation and RMSE reduction of `harmonized` against `truth`
/// at each level, over all entries and over off-diagonal (mover) entries.
/// Undefined values are reported as NaN.
pub fn recovery_metrics(h: &GeoHierarchy, truth: &FlowMatrix, raw: &FlowMatrix, harmonized: &FlowMatrix) -> Result<Vec<MetricReport>> {
    let mut out = Vec::new();
    for level in RECOVERY_LEVELS {
        let part = BlockPartition::from_hierarchy(h, level);
        let t = aggregate_matrix(truth, &part)?;
        let r = aggregate_matrix(raw, &part)?;
        let e = aggregate_matrix(harmonized, &part)?;
        for (subset, movers) in [("all", false), ("movers", true)] {
            let v = aligned_entries(&[&t, &r, &e], movers)?;
            let pearson = correlation(&v[2], &v[0], None, false).unwrap_or(f64::NAN);
            let red = rmse_reduction(&v[1], &v[2], &v[0], None).unwrap_or(f64::NAN);
            out.push(MetricReport::new(format!("pearson_{subset}"), level.as_str(), false, Some(truth.year()), pearson));
            out.push(MetricReport::new(format!("rmse_reduction_{subset}"), level.as_str(), false, Some(truth.year()), red));
        }
    }
    Ok(out)
}

/// Perturb the truth, harmonize it against the truth's own marginals and
/// compare. Block-group paths are the truth's row sums.
pub fn recovery_experiment(
    spec: &PerturbationSpec,
    h: &GeoHierarchy,
    truth: &FlowMatrix,
    opts: &HarmonizeOptions,
) -> Result<Vec<MetricReport>> {
    let c = ConstraintSet::from_matrix(truth, h)?;
    let paths = PopulationPaths::single_year(truth.year() - 1, &truth.row_sums());
    let raw = spec.apply(truth, h)?;
    let (harmonized, _) = harmonize(&raw, h, &c, Some(&paths), opts)?;
    recovery_metrics(h, truth, &raw, &harmonized)
}

/// Look up one metric value.
pub fn metric(reports: &[MetricReport], name: &str, level: Level) -> Option<f64> {
    reports
        .iter()
        .find(|r| r.metric == name && r.level == level.as_str())
        .map(|r| r.value)
}
