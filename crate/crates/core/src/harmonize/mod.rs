//! Sequential rescaling of a raw flow matrix to census marginals.
//!
//! Stages run in a fixed order: block-group row totals, state stayers and
//! movers, state-to-state flows, then block IPF to county populations.
//! Each stage only multiplies existing entries, so the sparsity pattern of
//! the input is kept.

mod ipf;
mod nnls;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ipf::{ipf_to_county_pops, IpfReport, DEFAULT_MAX_ITER, DEFAULT_TOL_RELATIVE, MARGINAL_SLACK};
pub use nnls::{
    design_matrix, kkt, nnls, residual_summary, solve_population_path, solve_population_paths, Dense, Kkt,
    NnlsSolution, PopulationPath, PopulationPaths,
};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::flow::{BlockPartition, BlockTable, DiagonalMode, FlowMatrix, Level};
use crate::geo::GeoHierarchy;
use ipf::{block_factors, max_violation};

/// One line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub iteration: usize,
    pub l1: f64,
    pub max_violation: f64,
    pub skipped: Vec<String>,
}

impl StageRecord {
    fn new(stage: &str, iteration: usize, l1: f64, max_violation: f64, skipped: Vec<String>) -> Self {
        Self {
            stage: stage.to_owned(),
            iteration,
            l1,
            max_violation,
            skipped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizeOptions {
    pub cbg_populations: bool,
    pub state_stayers_movers: bool,
    pub state_flows: bool,
    pub county_ipf: bool,
    pub max_iter: usize,
    /// IPF stopping threshold as a fraction of total mass.
    pub tol_relative: f64,
}

impl Default for HarmonizeOptions {
    fn default() -> Self {
        Self {
            cbg_populations: true,
            state_stayers_movers: true,
            state_flows: true,
            county_ipf: true,
            max_iter: DEFAULT_MAX_ITER,
            tol_relative: DEFAULT_TOL_RELATIVE,
        }
    }
}

impl HarmonizeOptions {
    pub fn none() -> Self {
        Self {
            cbg_populations: false,
            state_stayers_movers: false,
            state_flows: false,
            county_ipf: false,
            ..Self::default()
        }
    }
}

/// Number of times each stage ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub cbg_populations: usize,
    pub state_stayers_movers: usize,
    pub state_flows: usize,
    pub ipf_iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HarmonizeReport {
    pub year: i32,
    pub counts: StageCounts,
    pub records: Vec<StageRecord>,
    pub ipf: Option<IpfReport>,
}

impl HarmonizeReport {
    /// One JSON object per line: each stage record, then each IPF half-step.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        if let Some(ipf) = &self.ipf {
            for (k, l1) in ipf.l1.iter().enumerate() {
                let last = k + 1 == ipf.l1.len();
                let rec = StageRecord::new(
                    "county_ipf",
                    k + 1,
                    *l1,
                    if last {
                        ipf.max_row_violation.max(ipf.max_col_violation)
                    } else {
                        f64::NAN
                    },
                    if last {
                        ipf.skipped_rows.iter().chain(&ipf.skipped_cols).cloned().collect()
                    } else {
                        Vec::new()
                    },
                );
                // NaN is not valid JSON; intermediate records carry null
                let mut v = serde_json::to_value(&rec)?;
                if !last {
                    v["max_violation"] = serde_json::Value::Null;
                }
                serde_json::to_writer(&mut w, &v)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }
}

fn labels_of(part: &BlockPartition, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&k| part.labels()[k].clone()).collect()
}

/// Scale each row to its block group's population. Rows with no mass or a
/// zero target are left as they are and reported.
pub fn scale_to_cbg_populations(e: &FlowMatrix, targets: &[f64], cbg_ids: &[String]) -> Result<(FlowMatrix, StageRecord)> {
    if targets.len() != e.n() {
        return Err(Error::DimensionMismatch {
            expected: e.n(),
            found: targets.len(),
        });
    }
    let sums = e.row_sums();
    let (f, skipped) = block_factors(&sums, targets);
    for &k in &skipped {
        log::debug!("row {} not rescaled: sum {} target {}", cbg_ids[k], sums[k], targets[k]);
    }
    let mut out = e.clone();
    let rows = BlockPartition::identity(e.n());
    let l1 = out.scale_blocks(&rows, &BlockPartition::global(e.n()), &BlockTable::column(f), DiagonalMode::All)?;
    let viol = max_violation(&out.row_sums(), targets, &skipped);
    let skipped = skipped.iter().map(|&k| cbg_ids[k].clone()).collect();
    Ok((out, StageRecord::new("cbg_populations", 1, l1, viol, skipped)))
}

/// Scale the diagonal of each state's columns to its stayers R and the
/// off-diagonal part to its in-movers S − R.
pub fn scale_state_stayers_movers(e: &FlowMatrix, states: &BlockPartition, c: &ConstraintSet) -> Result<(FlowMatrix, StageRecord)> {
    let (diag, off) = e.split_diag_offdiag(states)?;
    let movers: Vec<f64> = c
        .state_pops
        .iter()
        .zip(&c.state_stayers)
        .map(|(s, r)| (s - r).max(0.0))
        .collect();
    let (fd, skip_d) = block_factors(&diag, &c.state_stayers);
    let (fo, skip_o) = block_factors(&off, &movers);
    let global = BlockPartition::global(e.n());
    let mut out = e.clone();
    let mut l1 = out.scale_blocks(&global, states, &BlockTable::row(fd), DiagonalMode::Only)?;
    l1 += out.scale_blocks(&global, states, &BlockTable::row(fo), DiagonalMode::Exclude)?;
    let (d2, o2) = out.split_diag_offdiag(states)?;
    let viol = max_violation(&d2, &c.state_stayers, &skip_d).max(max_violation(&o2, &movers, &skip_o));
    let mut skipped: Vec<String> = labels_of(states, &skip_d).into_iter().map(|s| format!("{s}:stayers")).collect();
    skipped.extend(labels_of(states, &skip_o).into_iter().map(|s| format!("{s}:movers")));
    Ok((out, StageRecord::new("state_stayers_movers", 1, l1, viol, skipped)))
}

/// Scale each state-pair block with a positive target to that target.
/// Zero targets are not matched.
pub fn scale_state_flows(e: &FlowMatrix, states: &BlockPartition, c: &ConstraintSet) -> Result<(FlowMatrix, StageRecord)> {
    let sums = e.block_sum(states, states)?;
    let (f, skip) = block_factors(sums.values(), c.state_flows.values());
    let k = states.n_blocks();
    // zero targets are left alone on purpose and are not reported
    let skip: Vec<usize> = skip.into_iter().filter(|&i| c.state_flows.values()[i] > 0.0).collect();
    let mut factors = BlockTable::filled(k, k, 1.0);
    for (i, v) in f.into_iter().enumerate() {
        factors.set(i / k, i % k, v);
    }
    let mut out = e.clone();
    let l1 = out.scale_blocks(states, states, &factors, DiagonalMode::All)?;
    let after = out.block_sum(states, states)?;
    let mut viol: f64 = 0.0;
    for (i, (&s, &t)) in after.values().iter().zip(c.state_flows.values()).enumerate() {
        if t > 0.0 && !skip.contains(&i) {
            viol = viol.max((s - t).abs() / t);
        }
    }
    let labels = states.labels();
    let skipped = skip
        .iter()
        .map(|&i| format!("{}->{}", labels[i / k], labels[i % k]))
        .collect();
    Ok((out, StageRecord::new("state_flows", 1, l1, viol, skipped)))
}

/// Run the enabled stages once each, in order, then IPF.
pub fn harmonize(
    e_raw: &FlowMatrix,
    h: &GeoHierarchy,
    c: &ConstraintSet,
    paths: Option<&PopulationPaths>,
    opts: &HarmonizeOptions,
) -> Result<(FlowMatrix, HarmonizeReport)> {
    if e_raw.n() != h.len() {
        return Err(Error::PartitionMismatch {
            partition: h.len(),
            matrix: e_raw.n(),
        });
    }
    c.check(h)?;
    if !c.adjusted && (opts.state_stayers_movers || opts.state_flows) {
        log::warn!("constraints for {} were not adjusted for births, deaths and international migration", c.year);
    }
    let states = BlockPartition::from_hierarchy(h, Level::State);
    let counties = BlockPartition::from_hierarchy(h, Level::County);
    let mut report = HarmonizeReport {
        year: e_raw.year(),
        ..Default::default()
    };
    let mut m = e_raw.clone();

    if opts.cbg_populations {
        let paths = paths.ok_or_else(|| Error::InvalidInput("block-group population paths are required".into()))?;
        if paths.len() != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                found: paths.len(),
            });
        }
        let targets = paths.year(e_raw.year() - 1)?;
        let (next, rec) = scale_to_cbg_populations(&m, &targets, h.cbg_ids())?;
        m = next;
        report.records.push(rec);
        report.counts.cbg_populations += 1;
    }
    if opts.state_stayers_movers {
        let (next, rec) = scale_state_stayers_movers(&m, &states, c)?;
        m = next;
        report.records.push(rec);
        report.counts.state_stayers_movers += 1;
    }
    if opts.state_flows {
        let (next, rec) = scale_state_flows(&m, &states, c)?;
        m = next;
        report.records.push(rec);
        report.counts.state_flows += 1;
        if opts.state_stayers_movers {
            // within-state blocks include the diagonal, so stage two drifts
            let (d, o) = m.split_diag_offdiag(&states)?;
            let movers: Vec<f64> = c.state_pops.iter().zip(&c.state_stayers).map(|(s, r)| s - r).collect();
            let drift = max_violation(&d, &c.state_stayers, &[]).max(max_violation(&o, &movers, &[]));
            report.records.push(StageRecord::new("stayer_mover_drift", 1, 0.0, drift, Vec::new()));
        }
    }
    if opts.county_ipf {
        let tol = opts.tol_relative * m.total();
        let (next, ipf) = ipf_to_county_pops(&m, &counties, &c.county_pops_prev, &c.county_pops_curr, opts.max_iter, tol)?;
        m = next;
        report.counts.ipf_iterations = ipf.iterations;
        report.ipf = Some(ipf);
    }
    Ok((m, report))
}
