//! Dense reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use migrate_fuse::records::{AddressKind, PersonRecord, YearMonth};

pub type Dense = Vec<Vec<f64>>;

/// Classical IPF on county blocks: odd half-steps scale column blocks to
/// `curr`, even ones scale row blocks to `prev`. Zero-sum blocks are left.
pub fn dense_ipf(m: &Dense, block: &[usize], prev: &[f64], curr: &[f64], half_steps: usize) -> Dense {
    let n = m.len();
    let k = prev.len();
    let mut x = m.clone();
    for step in 1..=half_steps {
        let mut sums = vec![0.0; k];
        for i in 0..n {
            for j in 0..n {
                let b = if step % 2 == 1 { block[j] } else { block[i] };
                sums[b] += x[i][j];
            }
        }
        let target = if step % 2 == 1 { curr } else { prev };
        for i in 0..n {
            for j in 0..n {
                let b = if step % 2 == 1 { block[j] } else { block[i] };
                if sums[b] > 0.0 && target[b] > 0.0 {
                    x[i][j] *= target[b] / sums[b];
                }
            }
        }
    }
    x
}

pub fn block_row_sums(m: &Dense, block: &[usize], k: usize) -> Vec<f64> {
    let mut s = vec![0.0; k];
    for (i, row) in m.iter().enumerate() {
        s[block[i]] += row.iter().sum::<f64>();
    }
    s
}

pub fn block_col_sums(m: &Dense, block: &[usize], k: usize) -> Vec<f64> {
    let mut s = vec![0.0; k];
    for row in m {
        for (j, v) in row.iter().enumerate() {
            s[block[j]] += v;
        }
    }
    s
}

/// Year-population design: the census count is the 2010 population; the
/// five-year estimate ending in y is the mean of the path years in
/// [max(2009, y − 4), y].
pub fn path_design() -> Dense {
    let years: Vec<i32> = (2009..=2019).collect();
    let mut a = vec![vec![0.0; 11]; 11];
    a[0][1] = 1.0;
    for (r, end) in (2010..=2019).enumerate() {
        let lo = (end - 4).max(2009);
        let cover: Vec<usize> = years.iter().enumerate().filter(|(_, y)| **y >= lo && **y <= end).map(|(k, _)| k).collect();
        for &k in &cover {
            a[r + 1][k] = 1.0 / cover.len() as f64;
        }
    }
    a
}

fn solve_normal(a: &Dense, b: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let p = cols.len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (r, &ci) in cols.iter().enumerate() {
        for (c, &cj) in cols.iter().enumerate() {
            m[r][c] = a.iter().map(|row| row[ci] * row[cj]).sum();
        }
        m[r][p] = a.iter().zip(b).map(|(row, bi)| row[ci] * bi).sum();
    }
    // Gauss-Jordan with partial pivoting
    for c in 0..p {
        let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))?;
        if m[piv][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=p {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some((0..p).map(|r| m[r][p] / m[r][r]).collect())
}

pub fn objective(a: &Dense, b: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, bi)| {
            let r: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - bi;
            r * r
        })
        .sum()
}

/// Minimum of ‖Ax − b‖² over x ≥ 0 by trying every support set.
pub fn brute_force_nnls(a: &Dense, b: &[f64]) -> (f64, Vec<f64>) {
    let n = a[0].len();
    let mut best = (objective(a, b, &vec![0.0; n]), vec![0.0; n]);
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let Some(sol) = solve_normal(a, b, &cols) else { continue };
        if sol.iter().any(|v| *v < 0.0) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (k, &c) in cols.iter().enumerate() {
            x[c] = sol[k];
        }
        let f = objective(a, b, &x);
        if f < best.0 {
            best = (f, x);
        }
    }
    best
}

/// Address-to-block-group transform with stayers kept on the diagonal:
/// Gᵀ(A − diag A)G + diag(Gᵀ diag A).
pub fn dense_crosswalk(a: &Dense, g: &Dense) -> Dense {
    let na = a.len();
    let nc = g[0].len();
    let mut e = vec![vec![0.0; nc]; nc];
    for p in 0..na {
        for q in 0..na {
            let w = a[p][q];
            if w == 0.0 {
                continue;
            }
            if p == q {
                for c in 0..nc {
                    e[c][c] += w * g[p][c];
                }
            } else {
                for c in 0..nc {
                    for d in 0..nc {
                        e[c][d] += w * g[p][c] * g[q][d];
                    }
                }
            }
        }
    }
    e
}

fn ym_index(d: YearMonth) -> i32 {
    d.year() * 12 + d.month() as i32 - 1
}

fn month_days(year: i32, month: u32) -> f64 {
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    match month {
        2 if leap => 29.0,
        2 => 28.0,
        4 | 6 | 9 | 11 => 30.0,
        _ => 31.0,
    }
}

/// Monthly residence by the cleaning rules, keyed by absolute month index.
/// None when the person has no dates or nothing survives cleaning.
pub fn oracle_residence(r: &PersonRecord) -> Option<BTreeMap<i32, BTreeMap<String, f64>>> {
    let mut all: Vec<i32> = r.addresses.iter().filter_map(|a| a.effective).map(ym_index).collect();
    let first_seen = r.first_seen.map(ym_index);
    let last_seen = r.last_seen.map(ym_index);
    let lo = all.iter().copied().chain(first_seen).min()?;
    all.extend(last_seen);
    all.extend(first_seen);
    let hi = all.into_iter().max()?;

    let dated: Vec<(&str, AddressKind, i32)> = if r.addresses.len() == 1 {
        let a = &r.addresses[0];
        vec![(&a.address_id, a.kind, a.effective.map(ym_index).unwrap_or(lo))]
    } else {
        r.addresses
            .iter()
            .filter_map(|a| a.effective.map(|d| (a.address_id.as_str(), a.kind, ym_index(d))))
            .collect()
    };
    let kept: Vec<(&str, i32)> = dated
        .iter()
        .filter(|(_, k, d)| {
            *k != AddressKind::Pobox
                || !dated
                    .iter()
                    .any(|(_, k2, d2)| *k2 != AddressKind::Pobox && (d2 - d).abs() <= 12)
        })
        .map(|(a, _, d)| (*a, *d))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let earliest = kept.iter().map(|(_, d)| *d).min().unwrap();
    let mut out = BTreeMap::new();
    for m in (lo - 12)..=(hi + 12) {
        let anchor = kept.iter().map(|(_, d)| *d).filter(|d| *d <= m).max().unwrap_or(earliest);
        let ids: BTreeSet<&str> = kept.iter().filter(|(_, d)| *d == anchor).map(|(a, _)| *a).collect();
        let p = 1.0 / ids.len() as f64;
        out.insert(m, ids.into_iter().map(|a| (a.to_owned(), p)).collect());
    }
    Some(out)
}

/// Weighted (origin, dest, weight) answers of one person for `year`.
pub fn oracle_tuples(res: &BTreeMap<i32, BTreeMap<String, f64>>, year: i32) -> Vec<(String, String, f64)> {
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    let ydays = if leap { 366.0 } else { 365.0 };
    let mut out = Vec::new();
    for month in 1..=12u32 {
        let now = year * 12 + month as i32 - 1;
        let (Some(cur), Some(prev)) = (res.get(&now), res.get(&(now - 12))) else { continue };
        let w = month_days(year, month) / ydays;
        if cur == prev {
            for (a, p) in cur {
                out.push((a.clone(), a.clone(), w * p));
            }
        } else {
            for (a, p) in prev {
                for (b, q) in cur {
                    out.push((a.clone(), b.clone(), w * p * q));
                }
            }
        }
    }
    out
}

/// Dense address matrix for a batch; ids sorted.
pub fn oracle_address_matrix(records: &[PersonRecord], year: i32) -> (Vec<String>, Dense) {
    let tuples: Vec<(String, String, f64)> = records
        .iter()
        .filter_map(oracle_residence)
        .flat_map(|r| oracle_tuples(&r, year))
        .collect();
    let ids: Vec<String> = tuples
        .iter()
        .flat_map(|(a, b, _)| [a.clone(), b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut m = vec![vec![0.0; ids.len()]; ids.len()];
    for (a, b, w) in tuples {
        let i = ids.binary_search(&a).unwrap();
        let j = ids.binary_search(&b).unwrap();
        m[i][j] += w;
    }
    (ids, m)
}

/// Pearson correlation, plain two-pass.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}
