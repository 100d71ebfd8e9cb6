//! Block iterative proportional fitting to county populations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{BlockPartition, BlockTable, DiagonalMode, FlowMatrix};

pub const DEFAULT_MAX_ITER: usize = 6000;
/// Default stopping threshold relative to total mass.
pub const DEFAULT_TOL_RELATIVE: f64 = 1e-6;
/// Largest relative gap between the two marginal totals that is absorbed
/// by rescaling the previous-year targets.
pub const MARGINAL_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpfReport {
    pub iterations: usize,
    /// L1 change of each half-step, in order.
    pub l1: Vec<f64>,
    pub converged: bool,
    pub max_row_violation: f64,
    pub max_col_violation: f64,
    /// Counties whose rows hold no mass while their target is positive.
    pub skipped_rows: Vec<String>,
    /// Counties whose columns hold no mass while their target is positive.
    pub skipped_cols: Vec<String>,
    /// Factor applied to the previous-year targets to match totals.
    pub prev_rescale: f64,
}

/// Factor per block mapping `sums` onto `targets`; blocks that cannot be
/// scaled multiplicatively keep factor 1 and are returned as skipped.
pub(crate) fn block_factors(sums: &[f64], targets: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut skipped = Vec::new();
    let f = sums
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(k, (&s, &t))| {
            if s > 0.0 && t > 0.0 {
                t / s
            } else {
                if s != t {
                    skipped.push(k);
                }
                1.0
            }
        })
        .collect();
    (f, skipped)
}

/// Largest |sum − target| / target over blocks not in `skipped`.
pub(crate) fn max_violation(sums: &[f64], targets: &[f64], skipped: &[usize]) -> f64 {
    sums.iter()
        .zip(targets)
        .enumerate()
        .filter(|(k, _)| !skipped.contains(k))
        .map(|(_, (&s, &t))| {
            if t > 0.0 {
                (s - t).abs() / t
            } else {
                s.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Alternate column-block scaling to `p_curr` (odd iterations) and
/// row-block scaling to `p_prev` (even iterations) until `max_iter` or the
/// L1 change of a full iteration pair falls below `tol`.
pub fn ipf_to_county_pops(
    e: &FlowMatrix,
    counties: &BlockPartition,
    p_prev: &[f64],
    p_curr: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(FlowMatrix, IpfReport)> {
    let k = counties.n_blocks();
    for v in [p_prev, p_curr] {
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NonFiniteInput);
        }
    }
    let prev_total: f64 = p_prev.iter().sum();
    let curr_total: f64 = p_curr.iter().sum();
    let gap = (prev_total - curr_total).abs();
    if gap > MARGINAL_SLACK * prev_total.max(curr_total) {
        return Err(Error::InconsistentMarginals {
            prev: prev_total,
            curr: curr_total,
        });
    }
    let prev_rescale = if gap > 0.0 && prev_total > 0.0 {
        curr_total / prev_total
    } else {
        1.0
    };
    let p_prev: Vec<f64> = p_prev.iter().map(|v| v * prev_rescale).collect();

    let mut m = e.clone();
    let global = BlockPartition::global(m.n());
    let mut l1 = Vec::new();
    let mut skipped_rows = Vec::new();
    let mut skipped_cols = Vec::new();
    let mut converged = false;
    let mut n = 0;
    while n < max_iter {
        n += 1;
        let change = if n % 2 == 1 {
            let sums = m.col_block_sums(counties, DiagonalMode::All)?;
            let (f, skipped) = block_factors(&sums, p_curr);
            skipped_cols = skipped;
            m.scale_blocks(&global, counties, &BlockTable::row(f), DiagonalMode::All)?
        } else {
            let sums = m.row_block_sums(counties, DiagonalMode::All)?;
            let (f, skipped) = block_factors(&sums, &p_prev);
            skipped_rows = skipped;
            m.scale_blocks(counties, &global, &BlockTable::column(f), DiagonalMode::All)?
        };
        l1.push(change);
        if n % 2 == 0 && l1[n - 2] + l1[n - 1] < tol {
            converged = true;
            break;
        }
    }
    let labels = counties.labels();
    let row_sums = m.row_block_sums(counties, DiagonalMode::All)?;
    let col_sums = m.col_block_sums(counties, DiagonalMode::All)?;
    let report = IpfReport {
        iterations: n,
        converged,
        max_row_violation: max_violation(&row_sums, &p_prev, &skipped_rows),
        max_col_violation: max_violation(&col_sums, p_curr, &skipped_cols),
        skipped_rows: skipped_rows.iter().map(|&k| labels[k].clone()).collect(),
        skipped_cols: skipped_cols.iter().map(|&k| labels[k].clone()).collect(),
        prev_rescale,
        l1,
    };
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Level;

    fn two_counties() -> BlockPartition {
        BlockPartition::new(Level::County, vec![0, 0, 1, 1], vec!["c0".into(), "c1".into()]).unwrap()
    }

    /// Classical dense IPF on blocks, same alternation.
    fn dense_ipf(m: &[Vec<f64>], block: &[usize], prev: &[f64], curr: &[f64], iters: usize) -> Vec<Vec<f64>> {
        let mut m = m.to_vec();
        let n = m.len();
        for it in 1..=iters {
            let mut sums = vec![0.0; prev.len()];
            if it % 2 == 1 {
                for row in &m {
                    for j in 0..n {
                        sums[block[j]] += row[j];
                    }
                }
                for row in m.iter_mut() {
                    for j in 0..n {
                        row[j] *= curr[block[j]] / sums[block[j]];
                    }
                }
            } else {
                for (i, row) in m.iter().enumerate() {
                    sums[block[i]] += row.iter().sum::<f64>();
                }
                for (i, row) in m.iter_mut().enumerate() {
                    for v in row.iter_mut() {
                        *v *= prev[block[i]] / sums[block[i]];
                    }
                }
            }
        }
        m
    }

    #[test]
    fn matches_dense_oracle() {
        let dense = vec![
            vec![5.0, 1.0, 2.0, 0.5],
            vec![1.5, 7.0, 0.3, 1.0],
            vec![2.0, 0.4, 6.0, 2.0],
            vec![0.2, 1.1, 3.0, 9.0],
        ];
        let m = FlowMatrix::from_dense(2015, &dense).unwrap();
        let prev = [20.0, 25.0];
        let curr = [22.0, 23.0];
        for iters in [1, 2, 7, 40] {
            let (out, rep) = ipf_to_county_pops(&m, &two_counties(), &prev, &curr, iters, 0.0).unwrap();
            assert_eq!(rep.iterations, iters);
            let oracle = dense_ipf(&dense, &[0, 0, 1, 1], &prev, &curr, iters);
            for (i, row) in oracle.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert!((out.get(i, j) - v).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fixed_point_stops_after_two() {
        let m = FlowMatrix::from_dense(2015, &[vec![1.0, 2.0, 0.0, 1.0], vec![0.0, 3.0, 1.0, 0.0], vec![2.0, 0.0, 4.0, 1.0], vec![0.0, 1.0, 1.0, 5.0]]).unwrap();
        let p = two_counties();
        let prev = m.row_block_sums(&p, DiagonalMode::All).unwrap();
        let curr = m.col_block_sums(&p, DiagonalMode::All).unwrap();
        let (out, rep) = ipf_to_county_pops(&m, &p, &prev, &curr, 6000, 1e-6 * m.total()).unwrap();
        assert_eq!(rep.iterations, 2);
        assert!(rep.converged);
        for (a, b) in out.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn uniform_seed_gives_product() {
        let m = FlowMatrix::from_dense(2015, &vec![vec![1.0; 4]; 4]).unwrap();
        let prev = [30.0, 10.0];
        let curr = [16.0, 24.0];
        let (out, rep) = ipf_to_county_pops(&m, &two_counties(), &prev, &curr, 6000, 1e-12).unwrap();
        assert!(rep.converged);
        let b = out.block_sum(&two_counties(), &two_counties()).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((b.get(r, c) - prev[r] * curr[c] / 40.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inconsistent_totals() {
        let m = FlowMatrix::from_dense(2015, &vec![vec![1.0; 4]; 4]).unwrap();
        assert!(matches!(
            ipf_to_county_pops(&m, &two_counties(), &[10.0, 10.0], &[10.0, 11.0], 10, 0.0),
            Err(Error::InconsistentMarginals { .. })
        ));
        let (_, rep) = ipf_to_county_pops(&m, &two_counties(), &[10.0, 10.0], &[10.0, 10.00001], 10, 0.0).unwrap();
        assert!(rep.prev_rescale > 1.0);
    }

    #[test]
    fn empty_block_with_target_is_skipped() {
        let m = FlowMatrix::from_dense(2015, &[vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let (out, rep) = ipf_to_county_pops(&m, &two_counties(), &[4.0, 4.0], &[4.0, 4.0], 20, 0.0).unwrap();
        assert_eq!(rep.skipped_cols, vec!["c1".to_string()]);
        assert_eq!(rep.skipped_rows, vec!["c1".to_string()]);
        assert!(out.same_pattern(&m));
    }
}
