//! Address histories → monthly residence distributions → simulated
//! "where did you live one year ago" responses → address-level flow matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowMatrix;
use crate::kahan::KahanSum;

/// Calendar month, stored as a month count so arithmetic is plain integer math.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth(i32);

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        YearMonth(year * 12 + month as i32 - 1)
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn plus_months(self, k: i32) -> Self {
        YearMonth(self.0 + k)
    }

    pub fn months_until(self, other: YearMonth) -> i32 {
        other.0 - self.0
    }

    pub fn days(self) -> u32 {
        match self.month() {
            2 if is_leap(self.year()) => 29,
            2 => 28,
            4 | 6 | 9 | 11 => 30,
            _ => 31,
        }
    }
}

pub fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_year(year: i32) -> u32 {
    if is_leap(year) {
        366
    } else {
        365
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(YearMonth::new(year, month))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressKind {
    Street,
    Pobox,
    RuralRoute,
    Incomplete,
}

impl FromStr for AddressKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "street" => Ok(AddressKind::Street),
            "pobox" => Ok(AddressKind::Pobox),
            "rural_route" => Ok(AddressKind::RuralRoute),
            "incomplete" => Ok(AddressKind::Incomplete),
            other => Err(Error::InvalidInput(format!("unknown address kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddressEntry {
    pub address_id: String,
    pub kind: AddressKind,
    pub effective: Option<YearMonth>,
}

impl AddressEntry {
    pub fn new(address_id: &str, kind: AddressKind, effective: Option<YearMonth>) -> Self {
        Self {
            address_id: address_id.to_owned(),
            kind,
            effective,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub person_id: String,
    pub addresses: Vec<AddressEntry>,
    pub first_seen: Option<YearMonth>,
    pub last_seen: Option<YearMonth>,
}

/// Probability of residence per address during one month.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyResidence {
    pub person_id: String,
    pub month: YearMonth,
    pub distribution: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddressFlowTuple {
    pub origin: String,
    pub dest: String,
    pub weight: f64,
}

/// Padded interval of activity: one year either side of the reconciled
/// first and last observation.
pub fn activity_interval(r: &PersonRecord) -> Result<(YearMonth, YearMonth)> {
    let (first, last) = reconciled_dates(r)?;
    Ok((first.plus_months(-12), last.plus_months(12)))
}

fn reconciled_dates(r: &PersonRecord) -> Result<(YearMonth, YearMonth)> {
    let dates = r.addresses.iter().filter_map(|a| a.effective);
    let first = dates.clone().chain(r.first_seen).min();
    let last = dates.chain(r.last_seen).chain(r.first_seen).max();
    match (first, last) {
        (Some(f), Some(l)) => Ok((f, l)),
        _ => Err(Error::NoDates(r.person_id.clone())),
    }
}

/// Monthly residence distribution over the whole activity interval.
pub fn clean_addresses(r: &PersonRecord) -> Result<Vec<MonthlyResidence>> {
    let (start, end) = activity_interval(r)?;
    let (reconciled_first, _) = reconciled_dates(r)?;

    let dated: Vec<(&AddressEntry, YearMonth)> = if r.addresses.len() == 1 {
        let a = &r.addresses[0];
        vec![(a, a.effective.unwrap_or(reconciled_first))]
    } else {
        r.addresses
            .iter()
            .filter_map(|a| a.effective.map(|d| (a, d)))
            .collect()
    };

    // a postal box yields to any other dated address within 12 months, inclusive
    let kept: Vec<(&str, YearMonth)> = dated
        .iter()
        .filter(|(a, d)| {
            a.kind != AddressKind::Pobox
                || !dated.iter().any(|(b, e)| {
                    b.kind != AddressKind::Pobox && d.months_until(*e).abs() <= 12
                })
        })
        .map(|(a, d)| (a.address_id.as_str(), *d))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterCleaning(r.person_id.clone()));
    }

    let mut groups: BTreeMap<YearMonth, BTreeSet<&str>> = BTreeMap::new();
    for (id, d) in kept {
        groups.entry(d).or_default().insert(id);
    }
    let first_group = groups.values().next().expect("nonempty");

    let mut out = Vec::with_capacity(start.months_until(end) as usize + 1);
    let mut m = start;
    while m <= end {
        let members = groups
            .range(..=m)
            .next_back()
            .map(|(_, g)| g)
            .unwrap_or(first_group);
        let p = 1.0 / members.len() as f64;
        out.push(MonthlyResidence {
            person_id: r.person_id.clone(),
            month: m,
            distribution: members.iter().map(|a| (a.to_string(), p)).collect(),
        });
        m = m.plus_months(1);
    }
    Ok(out)
}

fn same_distribution(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|((ka, pa), (kb, pb))| ka == kb && (pa - pb).abs() <= 1e-12)
}

/// Simulated one-year-ago answers for `year`, one weighted response per
/// month of `year` in which the person is active now and a year earlier.
/// Months are weighted by their share of the year's days; tuples with the
/// same address pair are summed.
pub fn simulate_acs_year(residences: &[MonthlyResidence], year: i32) -> Result<Vec<AddressFlowTuple>> {
    if residences.is_empty() {
        return Ok(Vec::new());
    }
    let person = &residences[0].person_id;
    let by_month: BTreeMap<YearMonth, &BTreeMap<String, f64>> =
        residences.iter().map(|r| (r.month, &r.distribution)).collect();
    let lo = *by_month.keys().next().unwrap();
    let hi = *by_month.keys().next_back().unwrap();
    if by_month.len() as i32 != lo.months_until(hi) + 1 {
        let mut m = lo;
        while by_month.contains_key(&m) {
            m = m.plus_months(1);
        }
        return Err(Error::MissingMonth {
            person: person.clone(),
            month: m.to_string(),
        });
    }

    let year_days = days_in_year(year) as f64;
    let mut acc: BTreeMap<(&str, &str), KahanSum> = BTreeMap::new();
    for month in 1..=12 {
        let now = YearMonth::new(year, month);
        let before = now.plus_months(-12);
        let (Some(cur), Some(prev)) = (by_month.get(&now), by_month.get(&before)) else {
            continue;
        };
        let w = now.days() as f64 / year_days;
        if same_distribution(cur, prev) {
            for (a, p) in cur.iter() {
                acc.entry((a, a)).or_default().add(w * p);
            }
        } else {
            for (a1, p1) in prev.iter() {
                for (a2, p2) in cur.iter() {
                    acc.entry((a1, a2)).or_default().add(w * p1 * p2);
                }
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((o, d), s)| AddressFlowTuple {
            origin: o.to_owned(),
            dest: d.to_owned(),
            weight: s.value(),
        })
        .filter(|t| t.weight > 0.0)
        .collect())
}

/// Fraction of `year` (by days) in which a person with these residences
/// answers the one-year-ago question.
pub fn active_fraction(residences: &[MonthlyResidence], year: i32) -> f64 {
    let months: BTreeSet<YearMonth> = residences.iter().map(|r| r.month).collect();
    let mut acc = KahanSum::new();
    for month in 1..=12 {
        let now = YearMonth::new(year, month);
        if months.contains(&now) && months.contains(&now.plus_months(-12)) {
            acc.add(now.days() as f64 / days_in_year(year) as f64);
        }
    }
    acc.value()
}

/// Address-level flow matrix; index order is the sorted address ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressMatrix {
    pub addresses: Vec<String>,
    pub matrix: FlowMatrix,
}

impl AddressMatrix {
    pub fn index(&self, address: &str) -> Option<usize> {
        self.addresses
            .binary_search_by(|a| a.as_str().cmp(address))
            .ok()
    }
}

/// Sum every person's tuples into one address × address matrix. Tuples are
/// summed in the order given, so callers pass persons in a fixed order.
pub fn aggregate_address_flows(per_person: &[Vec<AddressFlowTuple>], year: i32) -> Result<AddressMatrix> {
    let addresses: Vec<String> = per_person
        .iter()
        .flatten()
        .flat_map(|t| [t.origin.as_str(), t.dest.as_str()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    let idx = |a: &str| {
        addresses
            .binary_search_by(|x| x.as_str().cmp(a))
            .expect("collected above")
    };
    let triplets: Vec<_> = per_person
        .iter()
        .flatten()
        .map(|t| (idx(&t.origin), idx(&t.dest), t.weight))
        .collect();
    let matrix = FlowMatrix::from_triplets(addresses.len(), year, triplets)?;
    Ok(AddressMatrix { addresses, matrix })
}

/// Counts of persons skipped while processing a batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProcessSummary {
    pub persons: usize,
    pub no_dates: usize,
    pub empty_after_cleaning: usize,
}

/// Full record pipeline for a batch: clean each person, simulate every
/// requested year, and aggregate. Persons are processed in person-id order
/// so the output does not depend on input order.
pub fn process_records(
    records: &[PersonRecord],
    years: &[i32],
) -> Result<(BTreeMap<i32, AddressMatrix>, ProcessSummary)> {
    let mut sorted: Vec<&PersonRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.person_id.cmp(&b.person_id));

    let cleaned: Vec<Result<Vec<MonthlyResidence>>> =
        sorted.par_iter().map(|r| clean_addresses(r)).collect();

    let mut summary = ProcessSummary {
        persons: records.len(),
        ..Default::default()
    };
    let mut histories = Vec::with_capacity(cleaned.len());
    for c in cleaned {
        match c {
            Ok(h) => histories.push(h),
            Err(Error::NoDates(id)) => {
                log::warn!("person `{id}` has no dates; skipped");
                summary.no_dates += 1;
            }
            Err(Error::EmptyAfterCleaning(id)) => {
                log::warn!("person `{id}` has no address after cleaning; skipped");
                summary.empty_after_cleaning += 1;
            }
            Err(e) => return Err(e),
        }
    }

    let mut out = BTreeMap::new();
    for &year in years {
        let tuples: Vec<Vec<AddressFlowTuple>> = histories
            .par_iter()
            .map(|h| simulate_acs_year(h, year))
            .collect::<Result<_>>()?;
        out.insert(year, aggregate_address_flows(&tuples, year)?);
    }
    Ok((out, summary))
}
