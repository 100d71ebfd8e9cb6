//! CSV and JSON file formats.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{CategoryInput, Race};
use crate::constraints::{Components, ComponentsTable, ConstraintSet, Observation, Window};
use crate::crosswalk::ZipAssignment;
use crate::error::{Error, Result};
use crate::flow::{BlockTable, FlowMatrix, Level};
use crate::geo::{build_hierarchy, CbgRecord, ChangeKind, GeoHierarchy, GeographyChange};
use crate::records::{AddressEntry, AddressKind, AddressMatrix, PersonRecord, YearMonth};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::parse(path, e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::parse(path, format!("row {line}: {msg}"))
}

#[derive(Debug, Deserialize, Serialize)]
struct HierarchyRow {
    cbg_id: String,
    tract_id: String,
    county_id: String,
    state_id: String,
    lat: Option<f64>,
    lon: Option<f64>,
}

/// `cbg_id,tract_id,county_id,state_id,lat,lon`; coordinates may be empty.
pub fn read_hierarchy(path: &Path) -> Result<GeoHierarchy> {
    let rows: Vec<HierarchyRow> = read_rows(path)?;
    let records: Vec<CbgRecord> = rows
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let rec = CbgRecord::new(&r.cbg_id, &r.tract_id, &r.county_id, &r.state_id);
            match (r.lat, r.lon) {
                (Some(lat), Some(lon)) => Ok(rec.with_centroid(lat, lon)),
                (None, None) => Ok(rec),
                _ => Err(bad(path, k + 1, "only one of lat and lon is given")),
            }
        })
        .collect::<Result<_>>()?;
    build_hierarchy(&records)
}

pub fn write_hierarchy(path: &Path, h: &GeoHierarchy) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in h.records() {
        w.serialize(HierarchyRow {
            cbg_id: r.cbg_id,
            tract_id: r.tract_id,
            county_id: r.county_id,
            state_id: r.state_id,
            lat: r.centroid.map(|c| c.lat),
            lon: r.centroid.map(|c| c.lon),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ChangeRow {
    year: i32,
    kind: ChangeKind,
    survivor: String,
    member: String,
}

/// `year,kind,survivor,member`, one row per member; rows sharing
/// (year, kind, survivor) form one change, in order of first appearance.
pub fn read_changes(path: &Path) -> Result<Vec<GeographyChange>> {
    let rows: Vec<ChangeRow> = read_rows(path)?;
    let mut out: Vec<GeographyChange> = Vec::new();
    for r in rows {
        match out
            .iter_mut()
            .find(|c| c.year == r.year && c.kind == r.kind && c.survivor == r.survivor)
        {
            Some(c) => c.members.push(r.member),
            None => out.push(GeographyChange {
                year: r.year,
                kind: r.kind,
                members: vec![r.member],
                survivor: r.survivor,
            }),
        }
    }
    out.sort_by_key(|c| c.year);
    Ok(out)
}

/// Matrix triplets `origin_cbg,dest_cbg,value` under a `# year=<t> n=<dim>`
/// line, rows in CSR order, values with 17 significant digits.
pub fn write_matrix_to(w: impl Write, m: &FlowMatrix, ids: &[String]) -> Result<()> {
    if ids.len() != m.n() {
        return Err(Error::DimensionMismatch {
            expected: m.n(),
            found: ids.len(),
        });
    }
    let mut w = w;
    writeln!(w, "# year={} n={}", m.year(), m.n())?;
    writeln!(w, "origin_cbg,dest_cbg,value")?;
    for (r, c, v) in m.iter() {
        writeln!(w, "{},{},{:.16e}", ids[r], ids[c], v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: &Path, m: &FlowMatrix, ids: &[String]) -> Result<()> {
    write_matrix_to(create(path)?, m, ids)
}

struct RawMatrix {
    year: i32,
    n: usize,
    triplets: Vec<(String, String, f64)>,
}

fn read_raw_matrix(path: &Path) -> Result<RawMatrix> {
    let mut lines = BufReader::new(open(path)?).lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty matrix file"))??;
    let mut year = None;
    let mut n = None;
    for tok in head.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("year=") {
            year = v.parse::<i32>().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        }
    }
    let (Some(year), Some(n)) = (year, n) else {
        return Err(Error::parse(path, "first line must be `# year=<t> n=<dim>`"));
    };
    let cols = lines
        .next()
        .ok_or_else(|| Error::parse(path, "missing column header"))??;
    if cols.trim() != "origin_cbg,dest_cbg,value" {
        return Err(Error::parse(path, format!("unexpected header `{cols}`")));
    }
    let mut triplets = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split(',');
        let (Some(o), Some(d), Some(v), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad(path, k + 1, "expected three fields"));
        };
        let v: f64 = v.trim().parse().map_err(|_| bad(path, k + 1, format!("bad value `{v}`")))?;
        triplets.push((o.trim().to_owned(), d.trim().to_owned(), v));
    }
    Ok(RawMatrix { year, n, triplets })
}

/// Read a block-group matrix indexed by the hierarchy.
pub fn read_matrix(path: &Path, h: &GeoHierarchy) -> Result<FlowMatrix> {
    let raw = read_raw_matrix(path)?;
    if raw.n != h.len() {
        return Err(Error::parse(path, format!("matrix has n={} but the hierarchy has {} block groups", raw.n, h.len())));
    }
    let t = raw
        .triplets
        .iter()
        .map(|(o, d, v)| Ok((h.require_cbg(o)?, h.require_cbg(d)?, *v)))
        .collect::<Result<Vec<_>>>()?;
    FlowMatrix::from_triplets(raw.n, raw.year, t)
}

pub fn write_address_matrix(path: &Path, a: &AddressMatrix) -> Result<()> {
    write_matrix(path, &a.matrix, &a.addresses)
}

/// Address matrices carry their ids only in the triplets; every address
/// must appear at least once.
pub fn read_address_matrix(path: &Path) -> Result<AddressMatrix> {
    let raw = read_raw_matrix(path)?;
    let mut ids: Vec<String> = raw
        .triplets
        .iter()
        .flat_map(|(o, d, _)| [o.clone(), d.clone()])
        .collect();
    ids.sort();
    ids.dedup();
    if ids.len() != raw.n {
        return Err(Error::parse(path, format!("header says n={} but {} addresses appear", raw.n, ids.len())));
    }
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let t: Vec<(usize, usize, f64)> = raw
        .triplets
        .iter()
        .map(|(o, d, v)| (index[o.as_str()], index[d.as_str()], *v))
        .collect();
    let matrix = FlowMatrix::from_triplets(raw.n, raw.year, t)?;
    Ok(AddressMatrix { addresses: ids, matrix })
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    person_id: String,
    address_id: String,
    kind: String,
    effective_date: Option<String>,
    first_seen: Option<String>,
    last_seen: Option<String>,
}

fn month(path: &Path, line: usize, s: &Option<String>) -> Result<Option<YearMonth>> {
    match s.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|e: Error| bad(path, line, e)),
    }
}

fn merge_seen(path: &Path, line: usize, slot: &mut Option<YearMonth>, v: Option<YearMonth>) -> Result<()> {
    match (*slot, v) {
        (Some(a), Some(b)) if a != b => Err(bad(path, line, format!("conflicting person dates {a} and {b}"))),
        (None, Some(b)) => {
            *slot = Some(b);
            Ok(())
        }
        _ => Ok(()),
    }
}

/// `person_id,address_id,kind,effective_date,first_seen,last_seen`, one
/// row per address. Person-level dates may repeat on every row.
pub fn read_records(path: &Path) -> Result<Vec<PersonRecord>> {
    let rows: Vec<RecordRow> = read_rows(path)?;
    if rows.is_empty() {
        return Err(Error::parse(path, "no records"));
    }
    let mut people: BTreeMap<String, PersonRecord> = BTreeMap::new();
    for (k, r) in rows.iter().enumerate() {
        let line = k + 1;
        let kind: AddressKind = r.kind.parse().map_err(|e: Error| bad(path, line, e))?;
        let effective = month(path, line, &r.effective_date)?;
        let p = people.entry(r.person_id.clone()).or_insert_with(|| PersonRecord {
            person_id: r.person_id.clone(),
            addresses: Vec::new(),
            first_seen: None,
            last_seen: None,
        });
        p.addresses.push(AddressEntry::new(&r.address_id, kind, effective));
        merge_seen(path, line, &mut p.first_seen, month(path, line, &r.first_seen)?)?;
        merge_seen(path, line, &mut p.last_seen, month(path, line, &r.last_seen)?)?;
    }
    Ok(people.into_values().collect())
}

#[derive(Debug, Deserialize)]
struct ExactRow {
    address_id: String,
    cbg_id: String,
}

/// `address_id,cbg_id`.
pub fn read_exact_geocodes(path: &Path) -> Result<BTreeMap<String, String>> {
    let rows: Vec<ExactRow> = read_rows(path)?;
    let mut out = BTreeMap::new();
    for (k, r) in rows.into_iter().enumerate() {
        if out.insert(r.address_id.clone(), r.cbg_id).is_some() {
            return Err(bad(path, k + 1, format!("address `{}` listed twice", r.address_id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct FuzzyRow {
    address_id: String,
    zip: String,
    tract_id: String,
    weight: f64,
}

/// `address_id,zip,tract_id,weight`, one row per candidate tract.
pub fn read_zip_assignments(path: &Path) -> Result<Vec<ZipAssignment>> {
    let rows: Vec<FuzzyRow> = read_rows(path)?;
    let mut out: BTreeMap<String, ZipAssignment> = BTreeMap::new();
    for (k, r) in rows.into_iter().enumerate() {
        let a = out.entry(r.address_id.clone()).or_insert_with(|| ZipAssignment {
            address_id: r.address_id.clone(),
            zip: r.zip.clone(),
            tract_weights: BTreeMap::new(),
        });
        if a.zip != r.zip {
            return Err(bad(path, k + 1, format!("address `{}` has two zip codes", r.address_id)));
        }
        *a.tract_weights.entry(r.tract_id).or_insert(0.0) += r.weight;
    }
    Ok(out.into_values().collect())
}

#[derive(Debug, Deserialize)]
struct ObsRow {
    cbg_id: String,
    source: String,
    end_year: i32,
    value: f64,
    #[serde(default)]
    moe: Option<f64>,
}

/// `cbg_id,source,end_year,value,moe` with source `census` or `acs5`.
/// Returns observations indexed like the hierarchy.
pub fn read_cbg_observations(path: &Path, h: &GeoHierarchy) -> Result<Vec<Vec<Observation>>> {
    let rows: Vec<ObsRow> = read_rows(path)?;
    let mut out = vec![Vec::new(); h.len()];
    for (k, r) in rows.into_iter().enumerate() {
        let window = match r.source.as_str() {
            "census" if r.end_year == 2010 => Window::Census2010,
            "acs5" => Window::Acs5 { end_year: r.end_year },
            other => return Err(bad(path, k + 1, format!("unknown source `{other}` for {}", r.end_year))),
        };
        let i = h.require_cbg(&r.cbg_id)?;
        out[i].push(Observation {
            window,
            value: r.value,
            moe: r.moe.unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// Where the per-year constraint tables live.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPaths {
    /// `year,state_id,population,stayers`
    pub state_pops: PathBuf,
    /// `year,origin_state,dest_state,value`
    pub state_flows: PathBuf,
    /// `year,county_id,prev,curr`: county populations at the start and end
    /// of the matrix year
    pub county_pops: PathBuf,
    /// `cbg_id,source,end_year,value,moe`, optional
    #[serde(default)]
    pub cbg_pops: Option<PathBuf>,
    /// `year,level,area_id,births,deaths,net_international,immigrants`, optional
    #[serde(default)]
    pub components: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct StatePopRow {
    year: i32,
    state_id: String,
    population: f64,
    stayers: f64,
}

#[derive(Debug, Deserialize)]
struct StateFlowRow {
    year: i32,
    origin_state: String,
    dest_state: String,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct CountyPopRow {
    year: i32,
    county_id: String,
    prev: f64,
    curr: f64,
}

fn fill(path: &Path, what: &str, ids: &[String], got: BTreeMap<usize, f64>) -> Result<Vec<f64>> {
    if got.len() != ids.len() {
        let missing = (0..ids.len()).find(|k| !got.contains_key(k)).unwrap_or(0);
        return Err(Error::parse(path, format!("no {what} for `{}`", ids[missing])));
    }
    Ok(got.into_values().collect())
}

/// Unadjusted constraints for the matrix of `year`.
pub fn read_constraints(paths: &ConstraintPaths, h: &GeoHierarchy, year: i32) -> Result<ConstraintSet> {
    let states = h.ids(Level::State);
    let counties = h.ids(Level::County);

    let mut pops = BTreeMap::new();
    let mut stay = BTreeMap::new();
    for r in read_rows::<StatePopRow>(&paths.state_pops)? {
        if r.year == year {
            let k = h.require_block(Level::State, &r.state_id)?;
            pops.insert(k, r.population);
            stay.insert(k, r.stayers);
        }
    }
    let state_pops = fill(&paths.state_pops, &format!("{year} population"), &states, pops)?;
    let state_stayers = fill(&paths.state_pops, &format!("{year} stayers"), &states, stay)?;

    let ns = states.len();
    let mut flows = BlockTable::filled(ns, ns, 0.0);
    for r in read_rows::<StateFlowRow>(&paths.state_flows)? {
        if r.year == year {
            let o = h.require_block(Level::State, &r.origin_state)?;
            let d = h.require_block(Level::State, &r.dest_state)?;
            flows.set(o, d, flows.get(o, d) + r.value);
        }
    }

    let mut prev = BTreeMap::new();
    let mut curr = BTreeMap::new();
    for r in read_rows::<CountyPopRow>(&paths.county_pops)? {
        if r.year == year {
            let k = h.require_block(Level::County, &r.county_id)?;
            prev.insert(k, r.prev);
            curr.insert(k, r.curr);
        }
    }
    let county_pops_prev = fill(&paths.county_pops, &format!("{year} start population"), &counties, prev)?;
    let county_pops_curr = fill(&paths.county_pops, &format!("{year} end population"), &counties, curr)?;

    let cbg_population_obs = match &paths.cbg_pops {
        Some(p) => read_cbg_observations(p, h)?,
        None => Vec::new(),
    };
    let c = ConstraintSet {
        year,
        cbg_population_obs,
        state_stayers,
        state_pops,
        state_flows: flows,
        county_pops_prev,
        county_pops_curr,
        adjusted: false,
    };
    c.check(h)?;
    Ok(c)
}

#[derive(Debug, Deserialize)]
struct ComponentRow {
    year: i32,
    level: Level,
    area_id: String,
    births: f64,
    deaths: f64,
    net_international: f64,
    #[serde(default)]
    immigrants: Option<f64>,
}

/// Components of change for one year and level.
pub fn read_components(path: &Path, year: i32, level: Level) -> Result<ComponentsTable> {
    let mut t = ComponentsTable::default();
    for r in read_rows::<ComponentRow>(path)? {
        if r.year == year && r.level == level {
            t.by_area.insert(
                r.area_id,
                Components {
                    births: r.births,
                    deaths: r.deaths,
                    net_international: r.net_international,
                    immigrants: r.immigrants.unwrap_or(0.0),
                },
            );
        }
    }
    Ok(t)
}

#[derive(Debug, Deserialize)]
struct CategoryRow {
    cbg_id: String,
    plurality_race: String,
    urban: String,
    median_income: Option<f64>,
}

/// `cbg_id,plurality_race,urban,median_income`; income may be empty.
pub fn read_categories(path: &Path) -> Result<Vec<CategoryInput>> {
    read_rows::<CategoryRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let race: Race = r.plurality_race.parse().map_err(|e: Error| bad(path, k + 1, e))?;
            let urban = match r.urban.to_ascii_lowercase().as_str() {
                "true" | "1" | "urban" => true,
                "false" | "0" | "rural" => false,
                other => return Err(bad(path, k + 1, format!("bad urban flag `{other}`"))),
            };
            Ok(CategoryInput {
                cbg_id: r.cbg_id,
                plurality_race: race,
                urban,
                median_income: r.median_income,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct WeightRow {
    cbg_id: String,
    population: f64,
}

/// `cbg_id,population`.
pub fn read_cbg_weights(path: &Path) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (k, r) in read_rows::<WeightRow>(path)?.into_iter().enumerate() {
        if !(r.population.is_finite() && r.population >= 0.0) {
            return Err(bad(path, k + 1, format!("bad population {}", r.population)));
        }
        if out.insert(r.cbg_id.clone(), r.population).is_some() {
            return Err(bad(path, k + 1, format!("`{}` listed twice", r.cbg_id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    region: String,
    cbg_id: String,
}

/// `region,cbg_id`; regions in order of first appearance.
pub fn read_regions(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for r in read_rows::<RegionRow>(path)? {
        match out.iter_mut().find(|(n, _)| *n == r.region) {
            Some((_, ids)) => ids.push(r.cbg_id),
            None => out.push((r.region, vec![r.cbg_id])),
        }
    }
    Ok(out)
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Record of one command run: inputs and outputs with their digests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_owned(),
            config,
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, WorldSpec};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn hierarchy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = generate_world(&WorldSpec { states: 2, counties_per_state: 2, tracts_per_county: 2, cbgs_per_tract: 2, seed: 1 }).unwrap();
        let p = dir.path().join("h.csv");
        write_hierarchy(&p, &h).unwrap();
        assert_eq!(read_hierarchy(&p).unwrap(), h);
    }

    #[test]
    fn hierarchy_without_centroids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", "cbg_id,tract_id,county_id,state_id,lat,lon\na,t,c,s,,\nb,t,c,s,,\n");
        let h = read_hierarchy(&p).unwrap();
        assert_eq!(h.len(), 2);
        assert!(!h.has_centroids());
        let p = write(dir.path(), "bad.csv", "cbg_id,tract_id,county_id,state_id,lat,lon\na,t,c,s,1.0,\n");
        assert!(matches!(read_hierarchy(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let h = build_hierarchy(&[CbgRecord::new("a", "t", "c", "s"), CbgRecord::new("b", "t", "c", "s")]).unwrap();
        let m = FlowMatrix::from_dense(2016, &[vec![0.1 + 0.2, 1.0 / 3.0], vec![0.0, 1e-300]]).unwrap();
        let p = dir.path().join("m.csv");
        write_matrix(&p, &m, h.cbg_ids()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# year=2016 n=2\norigin_cbg,dest_cbg,value\n"));
        assert_eq!(read_matrix(&p, &h).unwrap(), m);
    }

    #[test]
    fn matrix_errors() {
        let dir = tempfile::tempdir().unwrap();
        let h = build_hierarchy(&[CbgRecord::new("a", "t", "c", "s")]).unwrap();
        let p = write(dir.path(), "m.csv", "origin_cbg,dest_cbg,value\na,a,1\n");
        assert!(matches!(read_matrix(&p, &h), Err(Error::Parse { .. })));
        let p = write(dir.path(), "m2.csv", "# year=2015 n=1\norigin_cbg,dest_cbg,value\na,z,1\n");
        assert!(matches!(read_matrix(&p, &h), Err(Error::UnknownArea(_))));
        let p = write(dir.path(), "m3.csv", "# year=2015 n=1\norigin_cbg,dest_cbg,value\na,a,-1\n");
        assert!(matches!(read_matrix(&p, &h), Err(Error::InvalidEntry { .. })));
    }

    #[test]
    fn records_grouped_by_person() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "r.csv",
            "person_id,address_id,kind,effective_date,first_seen,last_seen\n\
             p2,x,street,2014-03,,\n\
             p1,y,pobox,,2013-01,2018-06\n\
             p1,z,street,2015-07,2013-01,\n",
        );
        let r = read_records(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].person_id, "p1");
        assert_eq!(r[0].addresses.len(), 2);
        assert_eq!(r[0].first_seen, Some(YearMonth::new(2013, 1)));
        assert_eq!(r[0].last_seen, Some(YearMonth::new(2018, 6)));
        assert_eq!(r[1].addresses[0].effective, Some(YearMonth::new(2014, 3)));
        let empty = write(dir.path(), "e.csv", "person_id,address_id,kind,effective_date,first_seen,last_seen\n");
        assert!(read_records(&empty).is_err());
        let conflict = write(
            dir.path(),
            "c.csv",
            "person_id,address_id,kind,effective_date,first_seen,last_seen\np,x,street,,2013-01,\np,y,street,,2014-01,\n",
        );
        assert!(matches!(read_records(&conflict), Err(Error::Parse { .. })));
    }

    #[test]
    fn crosswalk_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.csv", "address_id,cbg_id\nx,a\n");
        assert_eq!(read_exact_geocodes(&e).unwrap()["x"], "a");
        let f = write(dir.path(), "f.csv", "address_id,zip,tract_id,weight\ny,10001,t1,0.3\ny,10001,t2,0.7\n");
        let z = read_zip_assignments(&f).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].tract_weights["t2"], 0.7);
    }

    #[test]
    fn constraint_tables() {
        let dir = tempfile::tempdir().unwrap();
        let h = build_hierarchy(&[CbgRecord::new("a", "t1", "c1", "s1"), CbgRecord::new("b", "t2", "c2", "s2")]).unwrap();
        let paths = ConstraintPaths {
            state_pops: write(dir.path(), "sp.csv", "year,state_id,population,stayers\n2015,s1,100,80\n2015,s2,50,45\n2014,s1,1,1\n"),
            state_flows: write(dir.path(), "sf.csv", "year,origin_state,dest_state,value\n2015,s1,s1,90\n2015,s1,s2,4\n2015,s2,s1,10\n2015,s2,s2,46\n"),
            county_pops: write(dir.path(), "cp.csv", "year,county_id,prev,curr\n2015,c1,94,100\n2015,c2,56,50\n"),
            cbg_pops: None,
            components: Some(write(
                dir.path(),
                "comp.csv",
                "year,level,area_id,births,deaths,net_international,immigrants\n2015,state,s1,3,2,1,4\n2015,county,c1,3,2,1,\n",
            )),
        };
        let c = read_constraints(&paths, &h, 2015).unwrap();
        assert_eq!(c.state_pops, vec![100.0, 50.0]);
        assert_eq!(c.state_flows.get(1, 0), 10.0);
        assert_eq!(c.county_pops_prev, vec![94.0, 56.0]);
        assert!(!c.adjusted);
        assert!(read_constraints(&paths, &h, 2016).is_err());
        let comp = read_components(paths.components.as_ref().unwrap(), 2015, Level::State).unwrap();
        assert_eq!(comp.by_area["s1"].immigrants, 4.0);
        assert_eq!(read_components(paths.components.as_ref().unwrap(), 2015, Level::County).unwrap().by_area.len(), 1);
    }

    #[test]
    fn observations_and_categories() {
        let dir = tempfile::tempdir().unwrap();
        let h = build_hierarchy(&[CbgRecord::new("a", "t", "c", "s")]).unwrap();
        let p = write(dir.path(), "o.csv", "cbg_id,source,end_year,value,moe\na,census,2010,100,\na,acs5,2012,98,12\n");
        let o = read_cbg_observations(&p, &h).unwrap();
        assert_eq!(o[0][0].window, Window::Census2010);
        assert_eq!(o[0][1].moe, 12.0);
        let c = write(dir.path(), "k.csv", "cbg_id,plurality_race,urban,median_income\na,Hispanic,true,\n");
        let k = read_categories(&c).unwrap();
        assert_eq!(k[0].plurality_race, Race::Hispanic);
        assert_eq!(k[0].median_income, None);
    }

    #[test]
    fn changes_grouped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "year,kind,survivor,member\n2012,merge,t9,t1\n2012,merge,t9,t2\n2011,split,t5,t5a\n");
        let c = read_changes(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].year, 2011);
        assert_eq!(c[1].members, vec!["t1".to_string(), "t2".to_string()]);
    }

    #[test]
    fn digest_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.txt", "abc");
        assert_eq!(file_digest(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let mut m = Manifest::new("test", serde_json::json!({"seed": 1}));
        m.input(&p).unwrap();
        let out = dir.path().join("sub/manifest.json");
        m.save(&out).unwrap();
        let back: Manifest = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
