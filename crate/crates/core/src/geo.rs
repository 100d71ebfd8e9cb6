//! Block-group universe and its tract/county/state containment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan;

/// Geographic aggregation level.
///
/// `Cbg` is the identity partition and `National` the single global block;
/// both exist so that every scaling in the harmonizer can be phrased as a
/// row-partition × column-partition operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Cbg,
    Tract,
    County,
    State,
    National,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Cbg => "cbg",
            Level::Tract => "tract",
            Level::County => "county",
            Level::State => "state",
            Level::National => "national",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cbg" => Ok(Level::Cbg),
            "tract" => Ok(Level::Tract),
            "county" => Ok(Level::County),
            "state" => Ok(Level::State),
            "national" => Ok(Level::National),
            other => Err(Error::InvalidInput(format!("unknown level `{other}`"))),
        }
    }
}

/// Latitude/longitude in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub lat: f64,
    pub lon: f64,
}

/// Mean Earth radius in miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

impl Centroid {
    /// Great-circle distance in miles.
    pub fn distance_miles(&self, other: &Centroid) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_MILES * a.sqrt().min(1.0).asin()
    }
}

/// One row of the hierarchy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgRecord {
    pub cbg_id: String,
    pub tract_id: String,
    pub county_id: String,
    pub state_id: String,
    pub centroid: Option<Centroid>,
}

impl CbgRecord {
    pub fn new(cbg: &str, tract: &str, county: &str, state: &str) -> Self {
        Self {
            cbg_id: cbg.to_owned(),
            tract_id: tract.to_owned(),
            county_id: county.to_owned(),
            state_id: state.to_owned(),
            centroid: None,
        }
    }

    pub fn with_centroid(mut self, lat: f64, lon: f64) -> Self {
        self.centroid = Some(Centroid { lat, lon });
        self
    }
}

/// Immutable block-group hierarchy. Block-group ids are opaque strings kept
/// in lexicographic order; that order is the matrix index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoHierarchy {
    cbg_ids: Vec<String>,
    cbg_index: HashMap<String, usize>,
    tract_ids: Vec<String>,
    county_ids: Vec<String>,
    state_ids: Vec<String>,
    tract_of_cbg: Vec<u32>,
    county_of_tract: Vec<u32>,
    state_of_county: Vec<u32>,
    centroids: Vec<Option<Centroid>>,
}

fn check_parent<'a>(
    map: &mut BTreeMap<&'a str, &'a str>,
    child: &'a str,
    parent: &'a str,
) -> Result<()> {
    match map.insert(child, parent) {
        Some(prev) if prev != parent => Err(Error::InconsistentContainment {
            child: child.to_owned(),
            first: prev.to_owned(),
            second: parent.to_owned(),
        }),
        _ => Ok(()),
    }
}

fn index_of(ids: &[String], id: &str) -> u32 {
    ids.binary_search_by(|x| x.as_str().cmp(id))
        .expect("parent id collected from the same records") as u32
}

/// Build a hierarchy from per-block-group records.
pub fn build_hierarchy(records: &[CbgRecord]) -> Result<GeoHierarchy> {
    if records.is_empty() {
        return Err(Error::InvalidInput("hierarchy has no block groups".into()));
    }
    let mut sorted: Vec<&CbgRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.cbg_id.cmp(&b.cbg_id));
    for pair in sorted.windows(2) {
        if pair[0].cbg_id == pair[1].cbg_id {
            return Err(Error::DuplicateId(pair[0].cbg_id.clone()));
        }
    }

    let mut tract_parent = BTreeMap::new();
    let mut county_parent = BTreeMap::new();
    let mut states = BTreeSet::new();
    for r in &sorted {
        check_parent(&mut tract_parent, &r.tract_id, &r.county_id)?;
        check_parent(&mut county_parent, &r.county_id, &r.state_id)?;
        states.insert(r.state_id.as_str());
    }

    let tract_ids: Vec<String> = tract_parent.keys().map(|s| s.to_string()).collect();
    let county_ids: Vec<String> = county_parent.keys().map(|s| s.to_string()).collect();
    let state_ids: Vec<String> = states.into_iter().map(str::to_owned).collect();

    let county_of_tract = tract_parent
        .values()
        .map(|c| index_of(&county_ids, c))
        .collect();
    let state_of_county = county_parent
        .values()
        .map(|s| index_of(&state_ids, s))
        .collect();

    let cbg_ids: Vec<String> = sorted.iter().map(|r| r.cbg_id.clone()).collect();
    let cbg_index = cbg_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let tract_of_cbg = sorted
        .iter()
        .map(|r| index_of(&tract_ids, &r.tract_id))
        .collect();
    let centroids = sorted.iter().map(|r| r.centroid).collect();

    Ok(GeoHierarchy {
        cbg_ids,
        cbg_index,
        tract_ids,
        county_ids,
        state_ids,
        tract_of_cbg,
        county_of_tract,
        state_of_county,
        centroids,
    })
}

impl GeoHierarchy {
    pub fn len(&self) -> usize {
        self.cbg_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cbg_ids.is_empty()
    }

    pub fn cbg_ids(&self) -> &[String] {
        &self.cbg_ids
    }

    pub fn cbg_index(&self, id: &str) -> Option<usize> {
        self.cbg_index.get(id).copied()
    }

    pub fn require_cbg(&self, id: &str) -> Result<usize> {
        self.cbg_index(id)
            .ok_or_else(|| Error::UnknownArea(id.to_owned()))
    }

    /// Ids of the blocks at `level`, in block-index order.
    pub fn ids(&self, level: Level) -> std::borrow::Cow<'_, [String]> {
        use std::borrow::Cow;
        match level {
            Level::Cbg => Cow::Borrowed(&self.cbg_ids),
            Level::Tract => Cow::Borrowed(&self.tract_ids),
            Level::County => Cow::Borrowed(&self.county_ids),
            Level::State => Cow::Borrowed(&self.state_ids),
            Level::National => Cow::Owned(vec!["US".to_owned()]),
        }
    }

    pub fn block_count(&self, level: Level) -> usize {
        match level {
            Level::Cbg => self.cbg_ids.len(),
            Level::Tract => self.tract_ids.len(),
            Level::County => self.county_ids.len(),
            Level::State => self.state_ids.len(),
            Level::National => 1,
        }
    }

    /// Block index of block group `cbg` at `level`.
    #[inline]
    pub fn parent(&self, cbg: usize, level: Level) -> usize {
        match level {
            Level::Cbg => cbg,
            Level::Tract => self.tract_of_cbg[cbg] as usize,
            Level::County => {
                self.county_of_tract[self.tract_of_cbg[cbg] as usize] as usize
            }
            Level::State => {
                let county = self.county_of_tract[self.tract_of_cbg[cbg] as usize];
                self.state_of_county[county as usize] as usize
            }
            Level::National => 0,
        }
    }

    /// Index of a block id at `level`.
    pub fn block_index(&self, level: Level, id: &str) -> Option<usize> {
        match level {
            Level::Cbg => self.cbg_index(id),
            Level::National => (id == "US").then_some(0),
            _ => self
                .ids(level)
                .binary_search_by(|x| x.as_str().cmp(id))
                .ok(),
        }
    }

    pub fn require_block(&self, level: Level, id: &str) -> Result<usize> {
        self.block_index(level, id)
            .ok_or_else(|| Error::UnknownArea(format!("{level} {id}")))
    }

    /// County index → state index.
    pub fn state_of_county(&self, county: usize) -> usize {
        self.state_of_county[county] as usize
    }

    pub fn centroid(&self, cbg: usize) -> Option<Centroid> {
        self.centroids[cbg]
    }

    pub fn has_centroids(&self) -> bool {
        self.centroids.iter().all(Option::is_some)
    }

    /// All centroids, or `MissingCentroids` if any block group lacks one.
    pub fn require_centroids(&self) -> Result<Vec<Centroid>> {
        let missing = self.centroids.iter().filter(|c| c.is_none()).count();
        if missing > 0 {
            return Err(Error::MissingCentroids(missing));
        }
        Ok(self.centroids.iter().map(|c| c.unwrap()).collect())
    }

    /// Reconstruct the per-block-group records.
    pub fn records(&self) -> Vec<CbgRecord> {
        (0..self.len())
            .map(|i| CbgRecord {
                cbg_id: self.cbg_ids[i].clone(),
                tract_id: self.tract_ids[self.parent(i, Level::Tract)].clone(),
                county_id: self.county_ids[self.parent(i, Level::County)].clone(),
                state_id: self.state_ids[self.parent(i, Level::State)].clone(),
                centroid: self.centroids[i],
            })
            .collect()
    }

    /// Sum a per-block-group vector up to `level`.
    pub fn aggregate(&self, values: &[f64], level: Level) -> Vec<f64> {
        let mut acc = vec![kahan::KahanSum::new(); self.block_count(level)];
        for (i, v) in values.iter().enumerate() {
            acc[self.parent(i, level)].add(*v);
        }
        acc.into_iter().map(|a| a.value()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Merge,
    Split,
}

/// A boundary change resolved onto the coarser geography: every member area
/// is replaced by `survivor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeographyChange {
    pub year: i32,
    pub kind: ChangeKind,
    pub members: Vec<String>,
    pub survivor: String,
}

/// Old block-group index → new block-group index after boundary changes.
#[derive(Debug, Clone, PartialEq)]
pub struct CbgRemap {
    pub map: Vec<usize>,
    pub new_len: usize,
}

impl CbgRemap {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
            new_len: n,
        }
    }

    /// Carry a per-block-group vector onto the new geography by summation.
    pub fn aggregate(&self, values: &[f64]) -> Vec<f64> {
        let mut acc = vec![kahan::KahanSum::new(); self.new_len];
        for (old, v) in values.iter().enumerate() {
            acc[self.map[old]].add(*v);
        }
        acc.into_iter().map(|a| a.value()).collect()
    }
}

fn level_of(records: &[CbgRecord], id: &str) -> Option<Level> {
    if records.iter().any(|r| r.cbg_id == id) {
        Some(Level::Cbg)
    } else if records.iter().any(|r| r.tract_id == id) {
        Some(Level::Tract)
    } else if records.iter().any(|r| r.county_id == id) {
        Some(Level::County)
    } else if records.iter().any(|r| r.state_id == id) {
        Some(Level::State)
    } else {
        None
    }
}

fn field(r: &mut CbgRecord, level: Level) -> &mut String {
    match level {
        Level::Cbg => &mut r.cbg_id,
        Level::Tract => &mut r.tract_id,
        Level::County => &mut r.county_id,
        Level::State | Level::National => &mut r.state_id,
    }
}

/// Replace every change's member areas by its survivor and rebuild the
/// hierarchy. A change whose members are already gone while its survivor
/// exists counts as applied, so reapplying a change list is a no-op.
pub fn apply_geography_changes(
    h: &GeoHierarchy,
    changes: &[GeographyChange],
) -> Result<(GeoHierarchy, CbgRemap)> {
    if changes.is_empty() {
        return Ok((h.clone(), CbgRemap::identity(h.len())));
    }
    let mut records = h.records();
    // original cbg id -> current cbg id
    let mut resolved: Vec<String> = h.cbg_ids.clone();

    for change in changes {
        if change.members.is_empty() {
            return Err(Error::InvalidInput(format!(
                "geography change for `{}` has no members",
                change.survivor
            )));
        }
        let survivor_level = level_of(&records, &change.survivor);
        let mut level = None;
        let mut present = Vec::new();
        for m in &change.members {
            if m == &change.survivor {
                continue;
            }
            match level_of(&records, m) {
                Some(l) => {
                    if level.is_some_and(|x| x != l) {
                        return Err(Error::InvalidInput(format!(
                            "members of `{}` span several levels",
                            change.survivor
                        )));
                    }
                    level = Some(l);
                    present.push(m.as_str());
                }
                None if survivor_level.is_some() => {}
                None => return Err(Error::UnknownMember(m.clone())),
            }
        }
        let Some(level) = level else { continue };
        if survivor_level.is_some_and(|l| l != level) {
            return Err(Error::InvalidInput(format!(
                "survivor `{}` is not at the {level} level",
                change.survivor
            )));
        }

        if level == Level::Cbg {
            let mut merged: Option<CbgRecord> = None;
            let mut lat = Vec::new();
            let mut lon = Vec::new();
            let mut all_centroids = true;
            let mut kept = Vec::with_capacity(records.len());
            for r in records.into_iter() {
                if present.contains(&r.cbg_id.as_str()) || r.cbg_id == change.survivor {
                    match r.centroid {
                        Some(c) => {
                            lat.push(c.lat);
                            lon.push(c.lon);
                        }
                        None => all_centroids = false,
                    }
                    match &merged {
                        Some(m) if m.tract_id != r.tract_id => {
                            return Err(Error::InconsistentContainment {
                                child: change.survivor.clone(),
                                first: m.tract_id.clone(),
                                second: r.tract_id.clone(),
                            })
                        }
                        Some(_) => {}
                        None => merged = Some(r),
                    }
                } else {
                    kept.push(r);
                }
            }
            let mut m = merged.expect("at least one member present");
            m.cbg_id = change.survivor.clone();
            m.centroid = all_centroids.then(|| Centroid {
                lat: kahan::sum(lat.iter().copied()) / lat.len() as f64,
                lon: kahan::sum(lon.iter().copied()) / lon.len() as f64,
            });
            kept.push(m);
            records = kept;
            for id in resolved.iter_mut() {
                if present.contains(&id.as_str()) {
                    *id = change.survivor.clone();
                }
            }
        } else {
            for r in records.iter_mut() {
                let f = field(r, level);
                if present.contains(&f.as_str()) {
                    *f = change.survivor.clone();
                }
            }
        }
    }

    let rebuilt = build_hierarchy(&records)?;
    let map = resolved
        .iter()
        .map(|id| rebuilt.cbg_index(id).expect("every original id resolves"))
        .collect();
    let remap = CbgRemap {
        map,
        new_len: rebuilt.len(),
    };
    Ok((rebuilt, remap))
}

/// Combine margins of error of summed estimates in the L2 norm.
pub fn aggregate_moe(moes: &[f64]) -> f64 {
    kahan::sum(moes.iter().map(|m| m * m)).sqrt()
}
