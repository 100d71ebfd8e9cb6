//! Per-year marginal targets and their adjustment for births, deaths and
//! international migration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{BlockPartition, BlockTable, DiagonalMode, FlowMatrix, Level};
use crate::geo::GeoHierarchy;

/// z-value of a 90% margin of error.
pub const MOE_Z: f64 = 1.645;

/// Number of yearly populations in a block-group path.
pub const PATH_YEARS: usize = 11;
/// First year of the path.
pub const PATH_BASE_YEAR: i32 = 2009;

/// Source window of a block-group population observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Window {
    /// Decennial census count for 2010.
    Census2010,
    /// Five-year estimate ending in the given year.
    Acs5 { end_year: i32 },
}

impl Window {
    /// Position in the observation vector of the population-path system.
    pub fn slot(self) -> Option<usize> {
        match self {
            Window::Census2010 => Some(0),
            Window::Acs5 { end_year } if (2010..=2019).contains(&end_year) => {
                Some((end_year - 2009) as usize)
            }
            Window::Acs5 { .. } => None,
        }
    }

    pub fn all() -> [Window; PATH_YEARS] {
        let mut w = [Window::Census2010; PATH_YEARS];
        for (k, slot) in w.iter_mut().enumerate().skip(1) {
            *slot = Window::Acs5 {
                end_year: 2009 + k as i32,
            };
        }
        w
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Census2010 => write!(f, "census 2010"),
            Window::Acs5 { end_year } => write!(f, "acs5 {}-{}", end_year - 4, end_year),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub window: Window,
    pub value: f64,
    pub moe: f64,
}

/// Observation vector b of the population-path system, in slot order.
pub fn observation_vector(cbg: &str, obs: &[Observation]) -> Result<[f64; PATH_YEARS]> {
    let mut b = [f64::NAN; PATH_YEARS];
    for o in obs {
        if let Some(k) = o.window.slot() {
            b[k] = o.value;
        }
    }
    for (k, w) in Window::all().iter().enumerate() {
        if b[k].is_nan() {
            return Err(Error::MissingObservation {
                cbg: cbg.to_owned(),
                window: w.to_string(),
            });
        }
    }
    Ok(b)
}

/// Marginal targets for the matrix of year `year` (flows from year−1 to
/// year). Area vectors are indexed like the hierarchy's blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub year: i32,
    /// Block-group population observations, per block group (may be empty
    /// when population paths are supplied directly).
    pub cbg_population_obs: Vec<Vec<Observation>>,
    /// Non-movers per state, R.
    pub state_stayers: Vec<f64>,
    /// Population per state in `year`, S.
    pub state_pops: Vec<f64>,
    /// State-to-state flows F, including within-state entries.
    pub state_flows: BlockTable,
    pub county_pops_prev: Vec<f64>,
    pub county_pops_curr: Vec<f64>,
    /// Set once components of change have been applied.
    pub adjusted: bool,
}

impl ConstraintSet {
    /// Exact marginals of a known matrix; used for semi-synthetic
    /// experiments where the truth has no births or deaths.
    pub fn from_matrix(m: &FlowMatrix, h: &GeoHierarchy) -> Result<Self> {
        let states = BlockPartition::from_hierarchy(h, Level::State);
        let counties = BlockPartition::from_hierarchy(h, Level::County);
        Ok(Self {
            year: m.year(),
            cbg_population_obs: Vec::new(),
            state_stayers: m.col_block_sums(&states, DiagonalMode::Only)?,
            state_pops: m.col_block_sums(&states, DiagonalMode::All)?,
            state_flows: m.block_sum(&states, &states)?,
            county_pops_prev: m.row_block_sums(&counties, DiagonalMode::All)?,
            county_pops_curr: m.col_block_sums(&counties, DiagonalMode::All)?,
            adjusted: true,
        })
    }

    pub fn check(&self, h: &GeoHierarchy) -> Result<()> {
        let ns = h.block_count(Level::State);
        let nc = h.block_count(Level::County);
        let dims = [
            (ns, self.state_stayers.len()),
            (ns, self.state_pops.len()),
            (ns, self.state_flows.n_rows()),
            (ns, self.state_flows.n_cols()),
            (nc, self.county_pops_prev.len()),
            (nc, self.county_pops_curr.len()),
        ];
        for (expected, found) in dims {
            if expected != found {
                return Err(Error::DimensionMismatch { expected, found });
            }
        }
        let all = self
            .state_stayers
            .iter()
            .chain(&self.state_pops)
            .chain(self.state_flows.values())
            .chain(&self.county_pops_prev)
            .chain(&self.county_pops_curr);
        for &v in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("constraint value {v}")));
            }
        }
        Ok(())
    }

    /// Remove natural increase and net international migration from the
    /// year-`t` populations and add deaths and emigrants back to the
    /// non-movers. Refuses a set that was already adjusted.
    pub fn adjust(
        &self,
        h: &GeoHierarchy,
        states: &ComponentsTable,
        counties: &ComponentsTable,
    ) -> Result<(ConstraintSet, AdjustmentLog)> {
        if self.adjusted {
            return Err(Error::AlreadyAdjusted(self.year));
        }
        let state_ids = h.ids(Level::State);
        let county_ids = h.ids(Level::County);
        let s = adjust_population_targets(&self.state_pops, &state_ids, states)?;
        let c = adjust_population_targets(&self.county_pops_curr, &county_ids, counties)?;

        let pick = |f: fn(&Components) -> f64| -> Result<Vec<f64>> {
            state_ids
                .iter()
                .map(|id| states.get(id).map(f))
                .collect()
        };
        let deaths = pick(|c| c.deaths)?;
        let net = pick(|c| c.net_international)?;
        let immigrants = pick(|c| c.immigrants)?;
        let (emigrants, emigrant_clamped) = emigrants_per_state(&net, &immigrants);

        let mut out = self.clone();
        out.state_pops = s.values;
        out.county_pops_curr = c.values;
        let mut out = add_exits_to_diagonal(&out, &deaths, &emigrants);
        out.adjusted = true;
        let log = AdjustmentLog {
            clamped_states: s.clamped.iter().map(|&i| state_ids[i].clone()).collect(),
            clamped_counties: c.clamped.iter().map(|&i| county_ids[i].clone()).collect(),
            clamped_emigrants: emigrant_clamped.iter().map(|&i| state_ids[i].clone()).collect(),
            emigrants,
        };
        Ok((out, log))
    }
}

/// Components of population change for one area and year.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub births: f64,
    pub deaths: f64,
    pub net_international: f64,
    /// Immigrants from abroad (state level only; zero elsewhere).
    pub immigrants: f64,
}

impl Components {
    pub fn natural_increase(&self) -> f64 {
        self.births - self.deaths
    }
}

/// Components keyed by area id for one level and year.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComponentsTable {
    pub by_area: BTreeMap<String, Components>,
}

impl ComponentsTable {
    pub fn get(&self, area: &str) -> Result<&Components> {
        self.by_area
            .get(area)
            .ok_or_else(|| Error::MissingComponent(area.to_owned()))
    }

    /// All-zero components for the given areas.
    pub fn zeros<'a>(areas: impl IntoIterator<Item = &'a String>) -> Self {
        Self {
            by_area: areas
                .into_iter()
                .map(|a| (a.clone(), Components::default()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdjustmentLog {
    pub clamped_states: Vec<String>,
    pub clamped_counties: Vec<String>,
    pub clamped_emigrants: Vec<String>,
    pub emigrants: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedTargets {
    pub values: Vec<f64>,
    /// Indices whose adjusted value was negative and clamped to zero.
    pub clamped: Vec<usize>,
}

/// raw − (births − deaths) − net international, clamped at zero.
pub fn adjust_population_targets(
    raw: &[f64],
    area_ids: &[String],
    components: &ComponentsTable,
) -> Result<AdjustedTargets> {
    if raw.len() != area_ids.len() {
        return Err(Error::LengthMismatch(raw.len(), area_ids.len()));
    }
    let mut values = Vec::with_capacity(raw.len());
    let mut clamped = Vec::new();
    for (i, (&r, id)) in raw.iter().zip(area_ids).enumerate() {
        let c = components.get(id)?;
        let v = r - c.natural_increase() - c.net_international;
        if v < 0.0 {
            log::warn!("adjusted population of `{id}` is {v}; clamped to 0");
            clamped.push(i);
            values.push(0.0);
        } else {
            values.push(v);
        }
    }
    Ok(AdjustedTargets { values, clamped })
}

/// Emigrants = immigrants − net international migration, clamped at zero.
/// Returns the estimates and the indices that were clamped.
pub fn emigrants_per_state(net_international: &[f64], immigrants: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut clamped = Vec::new();
    let out = net_international
        .iter()
        .zip(immigrants)
        .enumerate()
        .map(|(k, (&net, &imm))| {
            let e = imm - net;
            if e < 0.0 {
                log::warn!("state {k}: immigrants {imm} below net international migration {net}; emigrants clamped to 0");
                clamped.push(k);
                0.0
            } else {
                e
            }
        })
        .collect();
    (out, clamped)
}

/// Count deaths and emigrants as non-movers: R_k and F_kk both grow by
/// deaths[k] + emigrants[k].
pub fn add_exits_to_diagonal(c: &ConstraintSet, deaths: &[f64], emigrants: &[f64]) -> ConstraintSet {
    let mut out = c.clone();
    for k in 0..out.state_stayers.len() {
        let exits = deaths[k] + emigrants[k];
        out.state_stayers[k] += exits;
        let f = out.state_flows.get(k, k);
        out.state_flows.set(k, k, f + exits);
    }
    out
}

/// Standard error (MOE / 1.645) relative to the estimate.
pub fn coefficient_of_variation(estimate: f64, moe: f64) -> Result<f64> {
    if !(estimate > 0.0) {
        return Err(Error::ZeroEstimate);
    }
    Ok(moe / MOE_Z / estimate)
}

/// Mean coefficient of variation over the non-zero estimates.
pub fn mean_cv(obs: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let cvs: Vec<f64> = obs
        .into_iter()
        .filter_map(|(e, m)| coefficient_of_variation(e, m).ok())
        .collect();
    (!cvs.is_empty()).then(|| cvs.iter().sum::<f64>() / cvs.len() as f64)
}
