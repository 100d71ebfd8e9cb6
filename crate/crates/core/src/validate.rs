//! Error, correlation and bias metrics comparing estimates with a reference.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{BlockPartition, FlowMatrix};
use crate::kahan::KahanSum;

/// Multiply every entry by one scalar so the total equals `national_pop`.
pub fn national_rescale(e: &FlowMatrix, national_pop: f64) -> Result<FlowMatrix> {
    let total = e.total();
    if !(total > 0.0) {
        return Err(Error::ZeroTotal);
    }
    if !(national_pop.is_finite() && national_pop > 0.0) {
        return Err(Error::InvalidInput(format!("national population {national_pop}")));
    }
    let f = national_pop / total;
    e.map_factors(|_, _| f)
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::LengthMismatch(n, w.len()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidInput("weights must be non-negative with a positive sum".into()));
        }
    }
    Ok(())
}

/// Weighted root mean squared error; uniform weights when none are given.
pub fn rmse(est: &[f64], truth: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    check_weights(est.len(), weights)?;
    if est.is_empty() {
        return Ok(0.0);
    }
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for (k, (e, t)) in est.iter().zip(truth).enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        num.add(w * (e - t) * (e - t));
        den.add(w);
    }
    Ok((num.value() / den.value()).sqrt())
}

/// Percentage of the raw error removed by harmonization.
pub fn rmse_reduction(raw: &[f64], harmonized: &[f64], truth: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let r = rmse(raw, truth, weights)?;
    let h = rmse(harmonized, truth, weights)?;
    if r == 0.0 {
        return if h == 0.0 { Ok(0.0) } else { Err(Error::RawPerfect) };
    }
    Ok(100.0 * (1.0 - h / r))
}

/// Average ranks with ties sharing the mean of their positions (1-based).
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let w = |k: usize| weights.map_or(1.0, |w| w[k]);
    let mut sw = KahanSum::new();
    let mut sx = KahanSum::new();
    let mut sy = KahanSum::new();
    for k in 0..x.len() {
        sw.add(w(k));
        sx.add(w(k) * x[k]);
        sy.add(w(k) * y[k]);
    }
    let (mx, my) = (sx.value() / sw.value(), sy.value() / sw.value());
    let mut cxy = KahanSum::new();
    let mut cxx = KahanSum::new();
    let mut cyy = KahanSum::new();
    for k in 0..x.len() {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        cxy.add(w(k) * dx * dy);
        cxx.add(w(k) * dx * dx);
        cyy.add(w(k) * dy * dy);
    }
    if !(cxx.value() > 0.0 && cyy.value() > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((cxy.value() / (cxx.value() * cyy.value()).sqrt()).clamp(-1.0, 1.0))
}

/// Weighted Pearson correlation, or unweighted Spearman on midranks when
/// `rank` is set.
pub fn correlation(est: &[f64], truth: &[f64], weights: Option<&[f64]>, rank: bool) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    if est.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    if rank {
        return pearson(&midranks(est), &midranks(truth), None);
    }
    check_weights(est.len(), weights)?;
    pearson(est, truth, weights)
}

/// Percent difference between the group count implied by per-block-group
/// shares and the true group count.
pub fn demographic_bias(n: &[f64], p: &[f64], truth_total: f64) -> Result<f64> {
    if n.len() != p.len() {
        return Err(Error::LengthMismatch(n.len(), p.len()));
    }
    if !(truth_total > 0.0) {
        return Err(Error::InvalidInput("true group total must be positive".into()));
    }
    let est = crate::kahan::sum(n.iter().zip(p).map(|(n, p)| n * p));
    Ok(100.0 * (est - truth_total) / truth_total)
}

/// Share of each area's year-t population that lived in another area a
/// year earlier. Areas with no population have no rate.
pub fn in_migration_rate(e: &FlowMatrix, part: &BlockPartition) -> Result<Vec<Option<f64>>> {
    let t = e.block_sum(part, part)?;
    let k = part.n_blocks();
    Ok((0..k)
        .map(|c| {
            let total = crate::kahan::sum((0..k).map(|r| t.get(r, c)));
            (total > 0.0).then(|| (total - t.get(c, c)) / total)
        })
        .collect())
}

/// Block-level matrix with one row and column per block.
pub fn aggregate_matrix(e: &FlowMatrix, part: &BlockPartition) -> Result<FlowMatrix> {
    if part.len() != e.n() {
        return Err(Error::PartitionMismatch {
            partition: part.len(),
            matrix: e.n(),
        });
    }
    FlowMatrix::from_triplets(
        part.n_blocks(),
        e.year(),
        e.iter().map(|(r, c, v)| (part.block_of(r), part.block_of(c), v)),
    )
}

/// Entry vectors of several same-sized matrices over the union of their
/// supports, zero-filled. `movers_only` drops the diagonal.
pub fn aligned_entries(mats: &[&FlowMatrix], movers_only: bool) -> Result<Vec<Vec<f64>>> {
    let Some(first) = mats.first() else {
        return Ok(Vec::new());
    };
    for m in mats {
        if m.n() != first.n() {
            return Err(Error::DimensionMismatch {
                expected: first.n(),
                found: m.n(),
            });
        }
    }
    let mut out = vec![Vec::new(); mats.len()];
    let mut cols: Vec<u32> = Vec::new();
    for r in 0..first.n() {
        cols.clear();
        for m in mats {
            cols.extend_from_slice(m.row(r).0);
        }
        cols.sort_unstable();
        cols.dedup();
        for &c in &cols {
            if movers_only && c as usize == r {
                continue;
            }
            for (k, m) in mats.iter().enumerate() {
                out[k].push(m.get(r, c as usize));
            }
        }
    }
    Ok(out)
}

/// Join two keyed series on their common keys. Returns the aligned values
/// and how many keys were present on only one side.
pub fn align(est: &BTreeMap<String, f64>, truth: &BTreeMap<String, f64>) -> (Vec<String>, Vec<f64>, Vec<f64>, usize) {
    let mut keys = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (k, v) in est {
        if let Some(t) = truth.get(k) {
            keys.push(k.clone());
            a.push(*v);
            b.push(*t);
        }
    }
    let dropped = est.len() + truth.len() - 2 * keys.len();
    if dropped > 0 {
        log::info!("{dropped} areas present on only one side were dropped");
    }
    (keys, a, b, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub level: String,
    pub weighted: bool,
    pub year: Option<i32>,
    pub value: f64,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, level: impl Into<String>, weighted: bool, year: Option<i32>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            level: level.into(),
            weighted,
            year,
            value,
        }
    }
}

/// CSV with header `metric,level,weighted,year,value`.
pub fn write_metrics(w: impl Write, reports: &[MetricReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "level", "weighted", "year", "value"])?;
    for r in reports {
        wr.write_record([
            r.metric.clone(),
            r.level.clone(),
            r.weighted.to_string(),
            r.year.map(|y| y.to_string()).unwrap_or_default(),
            format!("{}", r.value),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
