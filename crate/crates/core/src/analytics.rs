//! National and regional statistics computed from harmonized matrices,
//! plus redaction of origins whose movers are too concentrated.
//!
//! "Movers" always means off-diagonal mass.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowMatrix, Level};
use crate::geo::GeoHierarchy;
use crate::kahan::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
    Asian,
    Hispanic,
    Other,
}

impl Race {
    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Asian => "asian",
            Race::Hispanic => "hispanic",
            Race::Other => "other",
        }
    }
}

impl FromStr for Race {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Ok(Race::White),
            "black" => Ok(Race::Black),
            "asian" => Ok(Race::Asian),
            "hispanic" => Ok(Race::Hispanic),
            "other" => Ok(Race::Other),
            other => Err(Error::InvalidInput(format!("unknown race group `{other}`"))),
        }
    }
}

/// One row of the category file.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryInput {
    pub cbg_id: String,
    pub plurality_race: Race,
    pub urban: bool,
    pub median_income: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbgCategory {
    pub plurality_race: Race,
    pub urban: bool,
    pub median_income: Option<f64>,
    pub income_quartile: Option<u8>,
    pub income_decile: Option<u8>,
    pub income_percentile: Option<u8>,
}

/// Bucket 1..=q from the number of block groups with strictly lower income,
/// unweighted; tied incomes share a bucket.
fn income_buckets(incomes: &[Option<f64>], q: usize) -> Vec<Option<u8>> {
    let mut sorted: Vec<f64> = incomes.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    incomes
        .iter()
        .map(|v| {
            v.map(|x| {
                let below = sorted.partition_point(|&y| y < x);
                (below * q / n + 1) as u8
            })
        })
        .collect()
}

/// Categories in hierarchy order. Every block group must be listed.
pub fn assign_categories(h: &GeoHierarchy, inputs: &[CategoryInput]) -> Result<Vec<CbgCategory>> {
    let mut slot: Vec<Option<&CategoryInput>> = vec![None; h.len()];
    for c in inputs {
        let i = h.require_cbg(&c.cbg_id)?;
        if slot[i].is_some() {
            return Err(Error::DuplicateId(c.cbg_id.clone()));
        }
        if let Some(m) = c.median_income {
            if !m.is_finite() {
                return Err(Error::InvalidInput(format!("median income of `{}`", c.cbg_id)));
            }
        }
        slot[i] = Some(c);
    }
    let slot: Vec<&CategoryInput> = slot
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::InvalidInput(format!("no category for `{}`", h.cbg_ids()[i]))))
        .collect::<Result<_>>()?;
    let incomes: Vec<Option<f64>> = slot.iter().map(|c| c.median_income).collect();
    let q4 = income_buckets(&incomes, 4);
    let q10 = income_buckets(&incomes, 10);
    let q100 = income_buckets(&incomes, 100);
    Ok(slot
        .iter()
        .enumerate()
        .map(|(i, c)| CbgCategory {
            plurality_race: c.plurality_race,
            urban: c.urban,
            median_income: c.median_income,
            income_quartile: q4[i],
            income_decile: q10[i],
            income_percentile: q100[i],
        })
        .collect())
}

/// The ten overlapping categories, in table order.
pub const CATEGORY_NAMES: [&str; 10] = [
    "white", "asian", "black", "hispanic", "urban", "rural", "income_q1", "income_q2", "income_q3", "income_q4",
];

pub fn in_category(c: &CbgCategory, k: usize) -> bool {
    match k {
        0 => c.plurality_race == Race::White,
        1 => c.plurality_race == Race::Asian,
        2 => c.plurality_race == Race::Black,
        3 => c.plurality_race == Race::Hispanic,
        4 => c.urban,
        5 => !c.urban,
        6..=9 => c.income_quartile == Some((k - 5) as u8),
        _ => false,
    }
}

/// Labelled table of optional values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        self.values[r][c]
    }

    pub fn row(&self, row: &str) -> Option<&[Option<f64>]> {
        let r = self.rows.iter().position(|x| x == row)?;
        Some(&self.values[r])
    }
}

pub const ALL_MOVERS: &str = "all_movers";
pub const POPULATION_SHARE: &str = "population_share";

/// Share of each origin category's movers landing in each destination
/// category, plus the all-movers row and the population-share row.
/// Categories without movers have empty rows.
pub fn category_flow_table(e: &FlowMatrix, cats: &[CbgCategory]) -> Result<Table> {
    if cats.len() != e.n() {
        return Err(Error::LengthMismatch(cats.len(), e.n()));
    }
    let nc = CATEGORY_NAMES.len();
    // movers[o][d]: mass from origin category o (or all, at nc) to dest d
    let mut num = vec![vec![KahanSum::new(); nc]; nc + 1];
    let mut den = vec![KahanSum::new(); nc + 1];
    let member: Vec<[bool; 10]> = cats
        .iter()
        .map(|c| std::array::from_fn(|k| in_category(c, k)))
        .collect();
    for (r, c, v) in e.iter() {
        if r == c {
            continue;
        }
        for o in (0..nc).filter(|&o| member[r][o]).chain([nc]) {
            den[o].add(v);
            for d in 0..nc {
                if member[c][d] {
                    num[o][d].add(v);
                }
            }
        }
    }
    let mut values: Vec<Vec<Option<f64>>> = (0..=nc)
        .map(|o| {
            let t = den[o].value();
            (0..nc).map(|d| (t > 0.0).then(|| num[o][d].value() / t)).collect()
        })
        .collect();
    let pop = e.col_sums();
    let total = crate::kahan::sum(pop.iter().copied());
    values.push(
        (0..nc)
            .map(|d| {
                (total > 0.0).then(|| {
                    crate::kahan::sum(pop.iter().enumerate().filter(|(j, _)| member[*j][d]).map(|(_, v)| *v)) / total
                })
            })
            .collect(),
    );
    let mut rows: Vec<String> = CATEGORY_NAMES.iter().map(|s| s.to_string()).collect();
    rows.push(ALL_MOVERS.into());
    rows.push(POPULATION_SHARE.into());
    Ok(Table {
        rows,
        cols: CATEGORY_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// Category rows and the all-movers row divided by the all-movers row.
pub fn homophily_ratios(table: &Table) -> Result<Table> {
    let base = table
        .row(ALL_MOVERS)
        .ok_or_else(|| Error::InvalidInput("table has no all-movers row".into()))?
        .to_vec();
    for (k, b) in base.iter().enumerate() {
        if !matches!(b, Some(v) if *v > 0.0) {
            return Err(Error::ZeroBaseShare(table.cols[k].clone()));
        }
    }
    let keep: Vec<usize> = (0..table.rows.len()).filter(|&r| table.rows[r] != POPULATION_SHARE).collect();
    Ok(Table {
        rows: keep.iter().map(|&r| table.rows[r].clone()).collect(),
        cols: table.cols.clone(),
        values: keep
            .iter()
            .map(|&r| {
                table.values[r]
                    .iter()
                    .zip(&base)
                    .map(|(v, b)| v.map(|v| v / b.unwrap()))
                    .collect()
            })
            .collect(),
    })
}

/// Entries whose origin and destination lie in different blocks at `level`.
pub fn crossing_moves(e: &FlowMatrix, h: &GeoHierarchy, level: Level) -> FlowMatrix {
    e.filter(|r, c| h.parent(r, level) != h.parent(c, level))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomeBucket {
    Decile,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityTarget {
    /// Destination median income strictly above the origin's.
    HigherIncome,
    TopQuartile,
    BottomQuartile,
}

/// Probability that a mover from each origin income bucket reaches a
/// qualifying destination, optionally restricted to origins of one race
/// group. Movers whose origin or destination income is unknown are left
/// out; buckets without movers have no value.
pub fn upward_mobility(
    e: &FlowMatrix,
    cats: &[CbgCategory],
    origin_race: Option<Race>,
    bucket: IncomeBucket,
    target: MobilityTarget,
) -> Result<Vec<Option<f64>>> {
    if cats.len() != e.n() {
        return Err(Error::LengthMismatch(cats.len(), e.n()));
    }
    let nb = match bucket {
        IncomeBucket::Decile => 10,
        IncomeBucket::Percentile => 100,
    };
    let mut num = vec![KahanSum::new(); nb];
    let mut den = vec![KahanSum::new(); nb];
    for (r, c, v) in e.iter() {
        if r == c || origin_race.is_some_and(|race| cats[r].plurality_race != race) {
            continue;
        }
        let (o, d) = (&cats[r], &cats[c]);
        let (Some(oi), Some(di)) = (o.median_income, d.median_income) else {
            continue;
        };
        let b = match bucket {
            IncomeBucket::Decile => o.income_decile,
            IncomeBucket::Percentile => o.income_percentile,
        };
        let Some(b) = b else { continue };
        let hit = match target {
            MobilityTarget::HigherIncome => di > oi,
            MobilityTarget::TopQuartile => d.income_quartile == Some(4),
            MobilityTarget::BottomQuartile => d.income_quartile == Some(1),
        };
        let k = b as usize - 1;
        den[k].add(v);
        if hit {
            num[k].add(v);
        }
    }
    Ok((0..nb)
        .map(|k| {
            let d = den[k].value();
            (d > 0.0).then(|| num[k].value() / d)
        })
        .collect())
}

pub const DEFAULT_DISTANCE_EDGES: [f64; 2] = [5.0, 50.0];

/// Share of mover mass in each distance bucket [0, e1), [e1, e2), ...,
/// [ek, ∞), counting only origins admitted by `origin`.
pub fn distance_distribution(
    e: &FlowMatrix,
    h: &GeoHierarchy,
    edges: &[f64],
    origin: impl Fn(usize) -> bool,
) -> Result<Vec<f64>> {
    if e.n() != h.len() {
        return Err(Error::PartitionMismatch {
            partition: h.len(),
            matrix: e.n(),
        });
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("distance edges must increase".into()));
    }
    let pts = h.require_centroids()?;
    let mut acc = vec![KahanSum::new(); edges.len() + 1];
    for (r, c, v) in e.iter() {
        if r == c || !origin(r) {
            continue;
        }
        let d = pts[r].distance_miles(&pts[c]);
        let k = edges.partition_point(|&x| x <= d);
        acc[k].add(v);
    }
    shares(acc)
}

fn shares(acc: Vec<KahanSum>) -> Result<Vec<f64>> {
    let vals: Vec<f64> = acc.into_iter().map(|a| a.value()).collect();
    let total = crate::kahan::sum(vals.iter().copied());
    if !(total > 0.0) {
        return Err(Error::ZeroTotal);
    }
    Ok(vals.into_iter().map(|v| v / total).collect())
}

pub const BOUNDARY_BUCKETS: [&str; 4] = ["same_tract", "same_county", "same_state", "other_state"];

/// Mover mass split into: within tract, within county but across tracts,
/// within state but across counties, and across states.
pub fn boundary_distribution(e: &FlowMatrix, h: &GeoHierarchy, origin: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
    if e.n() != h.len() {
        return Err(Error::PartitionMismatch {
            partition: h.len(),
            matrix: e.n(),
        });
    }
    let mut acc = vec![KahanSum::new(); 4];
    for (r, c, v) in e.iter() {
        if r == c || !origin(r) {
            continue;
        }
        let k = if h.parent(r, Level::Tract) == h.parent(c, Level::Tract) {
            0
        } else if h.parent(r, Level::County) == h.parent(c, Level::County) {
            1
        } else if h.parent(r, Level::State) == h.parent(c, Level::State) {
            2
        } else {
            3
        };
        acc[k].add(v);
    }
    shares(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub region: String,
    pub year: i32,
    /// Out-migration rate; absent when the region has no population.
    pub rate: Option<f64>,
}

/// Per year and region: mover mass leaving the region's block groups over
/// the region's total row mass.
pub fn region_out_migration_series(
    matrices: &[FlowMatrix],
    h: &GeoHierarchy,
    regions: &[(String, Vec<String>)],
) -> Result<Vec<SeriesPoint>> {
    let mut members = Vec::with_capacity(regions.len());
    for (name, ids) in regions {
        if ids.is_empty() {
            return Err(Error::EmptyRegion(name.clone()));
        }
        let idx: Vec<usize> = ids.iter().map(|id| h.require_cbg(id)).collect::<Result<_>>()?;
        members.push(idx);
    }
    let mut out = Vec::new();
    for m in matrices {
        if m.n() != h.len() {
            return Err(Error::PartitionMismatch {
                partition: h.len(),
                matrix: m.n(),
            });
        }
        for ((name, _), idx) in regions.iter().zip(&members) {
            let mut moved = KahanSum::new();
            let mut total = KahanSum::new();
            for &r in idx {
                let (cols, vals) = m.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    total.add(v);
                    if c as usize != r {
                        moved.add(v);
                    }
                }
            }
            let t = total.value();
            out.push(SeriesPoint {
                region: name.clone(),
                year: m.year(),
                rate: (t > 0.0).then(|| moved.value() / t),
            });
        }
    }
    Ok(out)
}

/// Fewest destinations (largest first) covering fraction `q` of a row's
/// mover mass; `None` for rows without movers.
pub fn destinations_covering(e: &FlowMatrix, r: usize, q: f64) -> Option<usize> {
    let (cols, vals) = e.row(r);
    let mut movers: Vec<f64> = cols
        .iter()
        .zip(vals)
        .filter(|(&c, _)| c as usize != r)
        .map(|(_, &v)| v)
        .collect();
    let total = crate::kahan::sum(movers.iter().copied());
    if !(total > 0.0) {
        return None;
    }
    movers.sort_by(|a, b| b.total_cmp(a));
    let goal = q * total * (1.0 - 1e-12);
    let mut cum = KahanSum::new();
    for (k, v) in movers.iter().enumerate() {
        cum.add(*v);
        if cum.value() >= goal {
            return Some(k + 1);
        }
    }
    Some(movers.len())
}

/// Remove the mover entries of every origin whose movers reach fraction `q`
/// within `k` destinations. Non-movers are kept. Returns the redacted
/// origins in index order.
pub fn redact_low_diversity(e: &FlowMatrix, k: usize, q: f64) -> Result<(FlowMatrix, Vec<usize>)> {
    if k == 0 || !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("redaction needs k >= 1 and q in (0, 1], got k={k}, q={q}")));
    }
    let redact: Vec<bool> = (0..e.n())
        .map(|r| destinations_covering(e, r, q).is_some_and(|d| d <= k))
        .collect();
    let out = e.filter(|r, c| r == c || !redact[r]);
    Ok((out, (0..e.n()).filter(|&r| redact[r]).collect()))
}

/// Plot-ready long-format record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub statistic: String,
    pub stratum: String,
    pub bucket: String,
    pub year: Option<i32>,
    pub value: Option<f64>,
}

impl LongRow {
    pub fn new(statistic: &str, stratum: &str, bucket: &str, year: Option<i32>, value: Option<f64>) -> Self {
        Self {
            statistic: statistic.to_owned(),
            stratum: stratum.to_owned(),
            bucket: bucket.to_owned(),
            year,
            value,
        }
    }
}

/// Rows of a table as long records: stratum = row label, bucket = column.
pub fn table_rows(statistic: &str, t: &Table, year: Option<i32>) -> Vec<LongRow> {
    let mut out = Vec::new();
    for (r, row) in t.rows.iter().zip(&t.values) {
        for (c, v) in t.cols.iter().zip(row) {
            out.push(LongRow::new(statistic, r, c, year, *v));
        }
    }
    out
}

/// CSV with header `statistic,stratum,bucket,year,value`; missing values
/// are empty fields.
pub fn write_long(w: impl Write, rows: &[LongRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["statistic", "stratum", "bucket", "year", "value"])?;
    for r in rows {
        wr.write_record([
            r.statistic.clone(),
            r.stratum.clone(),
            r.bucket.clone(),
            r.year.map(|y| y.to_string()).unwrap_or_default(),
            r.value.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_hierarchy, CbgRecord};

    fn cat(race: Race, urban: bool, income: f64) -> CategoryInput {
        CategoryInput {
            cbg_id: String::new(),
            plurality_race: race,
            urban,
            median_income: Some(income),
        }
    }

    fn hier(n: usize) -> GeoHierarchy {
        let recs: Vec<CbgRecord> = (0..n)
            .map(|i| {
                CbgRecord::new(&format!("g{i:03}"), &format!("t{}", i / 2), &format!("c{}", i / 4), &format!("s{}", i / 8))
                    .with_centroid(40.0 + 0.01 * i as f64, -75.0)
            })
            .collect();
        build_hierarchy(&recs).unwrap()
    }

    fn cats_for(h: &GeoHierarchy, f: impl Fn(usize) -> CategoryInput) -> Vec<CbgCategory> {
        let inputs: Vec<CategoryInput> = (0..h.len())
            .map(|i| CategoryInput {
                cbg_id: h.cbg_ids()[i].clone(),
                ..f(i)
            })
            .collect();
        assign_categories(h, &inputs).unwrap()
    }

    #[test]
    fn buckets_from_unweighted_ranks() {
        let inc: Vec<Option<f64>> = (1..=8).map(|v| Some(v as f64)).chain([None]).collect();
        assert_eq!(
            income_buckets(&inc, 4),
            vec![Some(1), Some(1), Some(2), Some(2), Some(3), Some(3), Some(4), Some(4), None]
        );
        assert_eq!(income_buckets(&[Some(5.0), Some(5.0)], 4), vec![Some(1), Some(1)]);
    }

    #[test]
    fn single_category_world() {
        let h = hier(4);
        let cats = cats_for(&h, |_| cat(Race::White, true, 50_000.0));
        let e = FlowMatrix::from_dense(2015, &vec![vec![1.0; 4]; 4]).unwrap();
        let t = category_flow_table(&e, &cats).unwrap();
        assert_eq!(t.get("white", "white"), Some(1.0));
        assert_eq!(t.get("urban", "urban"), Some(1.0));
        assert_eq!(t.get("urban", "rural"), Some(0.0));
        assert_eq!(t.get("rural", "rural"), None);
        assert_eq!(t.rows.len(), 12);
        assert_eq!(t.cols.len(), 10);
    }

    #[test]
    fn uniform_mixing_has_no_homophily() {
        // block groups i and i + 4 share categories; each half sends its
        // movers evenly to the other half, so every origin sees the same
        // destination mix
        let h = hier(8);
        let cats = cats_for(&h, |i| {
            let k = i % 4;
            cat(if k % 2 == 0 { Race::White } else { Race::Black }, k < 2, 1000.0 * k as f64)
        });
        let e = FlowMatrix::from_dense(
            2015,
            &(0..8)
                .map(|r| (0..8).map(|c| if r == c { 9.0 } else if (r < 4) != (c < 4) { 2.0 } else { 0.0 }).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let t = category_flow_table(&e, &cats).unwrap();
        let ratios = homophily_ratios(&t).unwrap_err();
        // asian and hispanic columns are empty, so the base share is zero
        assert!(matches!(ratios, Error::ZeroBaseShare(c) if c == "asian"));
        for row in ["white", "black", "urban", "rural", "income_q1", "income_q4"] {
            for col in ["white", "black", "urban", "income_q2"] {
                let (a, b) = (t.get(row, col).unwrap(), t.get(ALL_MOVERS, col).unwrap());
                assert!((a - b).abs() < 1e-12);
            }
        }
        // quartiles and urban/rural are exhaustive and disjoint
        for r in 0..11 {
            let row = &t.values[r];
            if row[0].is_none() && row[2].is_none() {
                continue;
            }
            let q: f64 = row[6..10].iter().map(|v| v.unwrap()).sum();
            let u: f64 = row[4..6].iter().map(|v| v.unwrap()).sum();
            assert!((q - 1.0).abs() < 1e-9 && (u - 1.0).abs() < 1e-9);
        }
    }

    /// Movers from group-A origins pick a group-A destination with
    /// probability p; everyone else spreads uniformly.
    fn planted(n: usize, a: &[bool], p: f64) -> FlowMatrix {
        let na = a.iter().filter(|&&x| x).count() as f64;
        let nb = n as f64 - na;
        let mut t = Vec::new();
        for r in 0..n {
            t.push((r, r, 100.0));
            for c in 0..n {
                if r == c {
                    continue;
                }
                let v = if a[r] {
                    let pool = if a[c] { na - 1.0 } else { nb };
                    if a[c] { p / pool } else { (1.0 - p) / pool }
                } else {
                    1.0 / (n as f64 - 1.0)
                };
                t.push((r, c, 10.0 * v));
            }
        }
        FlowMatrix::from_triplets(n, 2015, t).unwrap()
    }

    #[test]
    fn planted_homophily_is_recovered() {
        let n = 40;
        let h = hier(n);
        let a: Vec<bool> = (0..n).map(|i| i % 10 == 0).collect();
        let cats = cats_for(&h, |i| cat(if a[i] { Race::Black } else { Race::White }, true, i as f64));
        let e = planted(n, &a, 0.6);
        let t = category_flow_table(&e, &cats).unwrap();
        assert!((t.get("black", "black").unwrap() - 0.6).abs() < 1e-12);
        // overall share reaching group A: A origins send 0.6, others 4/39
        let base = (4.0 * 0.6 + 36.0 * 4.0 / 39.0) / 40.0;
        assert!((t.get(ALL_MOVERS, "black").unwrap() - base).abs() < 1e-12);
        let mut ratio_table = t.clone();
        // fill the empty columns so ratios are defined
        for row in ratio_table.values.iter_mut() {
            for k in [1, 3, 5] {
                row[k] = Some(1.0);
            }
        }
        let r = homophily_ratios(&ratio_table).unwrap();
        assert!((r.get("black", "black").unwrap() - 0.6 / base).abs() < 1e-9);
        for v in r.row(ALL_MOVERS).unwrap() {
            assert_eq!(*v, Some(1.0));
        }
    }

    #[test]
    fn out_of_county_filter_changes_ratios() {
        let n = 16;
        let h = hier(n);
        let a: Vec<bool> = (0..n).map(|i| i < 4).collect();
        let cats = cats_for(&h, |i| cat(if a[i] { Race::Black } else { Race::White }, true, i as f64));
        let e = planted(n, &a, 0.9);
        let all = category_flow_table(&e, &cats).unwrap();
        let far = category_flow_table(&crossing_moves(&e, &h, Level::County), &cats).unwrap();
        // group A is exactly county c0, so no out-of-county mover stays in A
        assert_eq!(far.get("black", "black"), Some(0.0));
        assert!(all.get("black", "black").unwrap() > 0.5);
    }

    #[test]
    fn mobility_strict_inequality() {
        let h = hier(4);
        let cats = cats_for(&h, |_| cat(Race::White, true, 1000.0));
        let e = FlowMatrix::from_dense(2015, &vec![vec![1.0; 4]; 4]).unwrap();
        let p = upward_mobility(&e, &cats, None, IncomeBucket::Decile, MobilityTarget::HigherIncome).unwrap();
        assert_eq!(p[0], Some(0.0));
        assert!(p[1..].iter().all(Option::is_none));
    }

    #[test]
    fn top_decile_with_poorer_destinations() {
        let h = hier(10);
        let cats = cats_for(&h, |i| cat(Race::White, true, 1000.0 * (i + 1) as f64));
        let e = FlowMatrix::from_dense(2015, &vec![vec![1.0; 10]; 10]).unwrap();
        let p = upward_mobility(&e, &cats, None, IncomeBucket::Decile, MobilityTarget::HigherIncome).unwrap();
        assert_eq!(p[9], Some(0.0));
        assert_eq!(p[0], Some(1.0));
        assert!((p[4].unwrap() - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn race_dependent_destinations_order_curves() {
        let n = 20;
        let h = hier(n);
        let race = |i: usize| if i % 2 == 0 { Race::Asian } else { Race::Black };
        let cats = cats_for(&h, |i| cat(race(i), true, 100.0 * i as f64));
        // asian origins move only upward, black origins only downward
        let mut t = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if r == c {
                    continue;
                }
                let up = c > r;
                let v = match race(r) {
                    Race::Asian if up => 1.0,
                    Race::Black if !up => 1.0,
                    _ => 0.0,
                };
                t.push((r, c, v));
            }
        }
        let e = FlowMatrix::from_triplets(n, 2015, t).unwrap();
        let all = upward_mobility(&e, &cats, None, IncomeBucket::Decile, MobilityTarget::HigherIncome).unwrap();
        let a = upward_mobility(&e, &cats, Some(Race::Asian), IncomeBucket::Decile, MobilityTarget::HigherIncome).unwrap();
        let b = upward_mobility(&e, &cats, Some(Race::Black), IncomeBucket::Decile, MobilityTarget::HigherIncome).unwrap();
        for k in 0..9 {
            assert!(a[k].unwrap() >= all[k].unwrap());
            assert!(b[k].unwrap() <= all[k].unwrap());
        }
    }

    #[test]
    fn one_mile_apart() {
        let h = build_hierarchy(&[
            CbgRecord::new("a", "t", "c", "s").with_centroid(40.0, -75.0),
            CbgRecord::new("b", "t", "c", "s").with_centroid(40.0 + 1.0 / 69.09, -75.0),
        ])
        .unwrap();
        let e = FlowMatrix::from_dense(2015, &[vec![100.0, 3.0], vec![2.0, 50.0]]).unwrap();
        assert_eq!(distance_distribution(&e, &h, &DEFAULT_DISTANCE_EDGES, |_| true).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(boundary_distribution(&e, &h, |_| true).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let stayers = FlowMatrix::from_dense(2015, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(distance_distribution(&stayers, &h, &[5.0], |_| true), Err(Error::ZeroTotal)));
        let bare = build_hierarchy(&[CbgRecord::new("a", "t", "c", "s"), CbgRecord::new("b", "t", "c", "s")]).unwrap();
        assert!(matches!(distance_distribution(&e, &bare, &[5.0], |_| true), Err(Error::MissingCentroids(2))));
    }

    #[test]
    fn shares_sum_to_one() {
        let h = hier(16);
        let e = FlowMatrix::from_dense(2015, &(0..16).map(|i| (0..16).map(|j| 1.0 + ((i * j) % 5) as f64).collect()).collect::<Vec<_>>()).unwrap();
        let d = distance_distribution(&e, &h, &[1.0, 3.0, 7.0], |_| true).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b = boundary_distribution(&e, &h, |r| r % 2 == 0).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn region_rates() {
        let h = hier(4);
        let ids = |v: &[usize]| v.iter().map(|&i| h.cbg_ids()[i].clone()).collect::<Vec<_>>();
        let e = FlowMatrix::from_dense(2015, &[vec![5.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 1.0], vec![1.0, 1.0, 2.0, 0.0], vec![0.0; 4]]).unwrap();
        let regions = vec![("still".to_string(), ids(&[0])), ("gone".to_string(), ids(&[1])), ("mixed".to_string(), ids(&[2])), ("empty".to_string(), ids(&[3]))];
        let s = region_out_migration_series(&[e], &h, &regions).unwrap();
        assert_eq!(s[0].rate, Some(0.0));
        assert_eq!(s[1].rate, Some(1.0));
        assert_eq!(s[2].rate, Some(0.5));
        assert_eq!(s[3].rate, None);
        assert!(matches!(
            region_out_migration_series(&[], &h, &[("x".into(), vec![])]),
            Err(Error::EmptyRegion(x)) if x == "x"
        ));
    }

    #[test]
    fn shock_year_spikes() {
        let h = hier(8);
        let base = |shock: f64| {
            let mut d = vec![vec![0.0; 8]; 8];
            for (i, row) in d.iter_mut().enumerate() {
                row[i] = 100.0;
                let out = if i < 2 { 5.0 * shock } else { 5.0 };
                row[(i + 3) % 8] = out;
            }
            d
        };
        let years: Vec<FlowMatrix> = (2015..2020)
            .map(|y| FlowMatrix::from_dense(y, &base(if y == 2018 { 3.0 } else { 1.0 })).unwrap())
            .collect();
        let region = vec![("fire".to_string(), h.cbg_ids()[..2].to_vec()), ("rest".to_string(), h.cbg_ids()[2..].to_vec())];
        let s = region_out_migration_series(&years, &h, &region).unwrap();
        let at = |name: &str, y: i32| s.iter().find(|p| p.region == name && p.year == y).unwrap().rate.unwrap();
        assert!(at("fire", 2018) >= 2.5 * at("rest", 2018));
        assert!(at("fire", 2018) > 2.5 * at("fire", 2017));
    }

    #[test]
    fn redaction_rules() {
        let mut t = vec![(0, 0, 10.0), (0, 1, 5.0)];
        for c in 2..102 {
            t.push((1, c, 1.0));
        }
        t.push((1, 1, 7.0));
        let e = FlowMatrix::from_triplets(102, 2015, t).unwrap();
        assert_eq!(destinations_covering(&e, 1, 0.9), Some(90));
        let (out, red) = redact_low_diversity(&e, 10, 0.9).unwrap();
        assert_eq!(red, vec![0]);
        assert_eq!(out.get(0, 0), 10.0);
        assert_eq!(out.get(0, 1), 0.0);
        assert_eq!(out.get(1, 50), 1.0);
        let (again, red2) = redact_low_diversity(&out, 10, 0.9).unwrap();
        assert_eq!(again, out);
        assert!(red2.is_empty());
    }

    #[test]
    fn planted_concentration_count() {
        let n = 1000;
        let mut t = Vec::new();
        for r in 0..n {
            t.push((r, r, 50.0));
            // five origins send everything to one place
            if r % 200 == 7 {
                t.push((r, (r + 1) % n, 8.0));
            } else {
                for k in 1..=20 {
                    t.push((r, (r + k) % n, 1.0));
                }
            }
        }
        let e = FlowMatrix::from_triplets(n, 2015, t).unwrap();
        let (_, red) = redact_low_diversity(&e, 10, 0.9).unwrap();
        assert_eq!(red.len(), 5);
        assert!((red.len() as f64 / n as f64 - 0.005).abs() < 1e-12);
    }

    #[test]
    fn long_csv() {
        let mut buf = Vec::new();
        write_long(&mut buf, &[LongRow::new("distance", "white", "lt5", Some(2015), Some(0.5)), LongRow::new("distance", "black", "lt5", None, None)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "statistic,stratum,bucket,year,value\ndistance,white,lt5,2015,0.5\ndistance,black,lt5,,\n"
        );
    }
}
