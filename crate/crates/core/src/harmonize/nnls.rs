//! Lawson–Hanson active-set non-negative least squares and the
//! block-group population-path system.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::{observation_vector, Observation, PATH_BASE_YEAR, PATH_YEARS};
use crate::error::{Error, Result};

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.at(r, c) * x[c]).sum())
            .collect()
    }

    /// Aᵀ v.
    pub fn tmul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.at(r, c) * v[r]).sum())
            .collect()
    }
}

/// Design matrix linking the yearly populations 2009..=2019 to the census
/// count and the ten five-year estimates.
pub fn design_matrix() -> Dense {
    let n = PATH_YEARS;
    let mut rows = vec![vec![0.0; n]; n];
    rows[0][1] = 1.0;
    // early windows reach back before 2009; average what the path covers
    for (k, row) in rows.iter_mut().enumerate().take(5).skip(1) {
        for v in row.iter_mut().take(k + 1) {
            *v = 1.0 / (k + 1) as f64;
        }
    }
    for (k, row) in rows.iter_mut().enumerate().skip(5) {
        for v in &mut row[k - 4..=k] {
            *v = 0.2;
        }
    }
    Dense::from_rows(&rows)
}

/// Least squares on the given columns of `a` by Householder QR.
/// Returns coefficients in `cols` order.
fn least_squares(a: &Dense, b: &[f64], cols: &[usize]) -> Vec<f64> {
    let m = a.rows;
    let p = cols.len();
    let mut q: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| (0..m).map(|r| a.at(r, c)).collect())
        .collect();
    let mut rhs = b.to_vec();
    let mut rank_ok = vec![true; p];
    for k in 0..p.min(m) {
        let norm = q[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            rank_ok[k] = false;
            continue;
        }
        let alpha = if q[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = q[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in q.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            for (x, vi) in col[k..].iter_mut().zip(&v) {
                *x -= s * vi;
            }
        }
        let dot: f64 = v.iter().zip(&rhs[k..]).map(|(a, b)| a * b).sum();
        let s = 2.0 * dot / vnorm2;
        for (x, vi) in rhs[k..].iter_mut().zip(&v) {
            *x -= s * vi;
        }
    }
    let mut z = vec![0.0; p];
    for k in (0..p.min(m)).rev() {
        if !rank_ok[k] || q[k][k].abs() < 1e-14 {
            continue;
        }
        let mut s = rhs[k];
        for j in k + 1..p {
            s -= q[j][k] * z[j];
        }
        z[k] = s / q[k][k];
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// ‖Ax − b‖₂.
    pub residual: f64,
    pub iterations: usize,
}

/// Minimize ‖Ax − b‖ subject to x ≥ 0. Ties among candidate columns go to
/// the lowest index.
pub fn nnls(a: &Dense, b: &[f64]) -> Result<NnlsSolution> {
    if b.len() != a.rows {
        return Err(Error::LengthMismatch(b.len(), a.rows));
    }
    if a.data.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = a.cols;
    let atb = a.tmul(b);
    let scale = atb.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-14 * scale;
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut iterations = 0;
    let max_outer = 3 * n + 10;

    let gradient = |x: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = b.iter().zip(a.mul(x)).map(|(bi, ax)| bi - ax).collect();
        a.tmul(&r)
    };

    loop {
        let w = gradient(&x);
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && best.is_none_or(|k| w[j] > w[k]) {
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        if iterations >= max_outer {
            break;
        }
        iterations += 1;
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let zp = least_squares(a, b, &cols);
            let mut z = vec![0.0; n];
            for (&c, &v) in cols.iter().zip(&zp) {
                z[c] = v;
            }
            if cols.iter().all(|&c| z[c] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &c in &cols {
                if z[c] <= 0.0 {
                    let t = x[c] / (x[c] - z[c]);
                    if t < alpha {
                        alpha = t;
                    }
                }
            }
            for k in 0..n {
                x[k] += alpha * (z[k] - x[k]);
            }
            let xmax = x.iter().copied().fold(1.0, f64::max);
            for &c in &cols {
                if x[c] <= 1e-14 * xmax {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let r: Vec<f64> = b.iter().zip(a.mul(&x)).map(|(bi, ax)| bi - ax).collect();
    let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(NnlsSolution {
        x,
        residual,
        iterations,
    })
}

/// Worst KKT violations of a candidate solution: the most negative gradient
/// component over zero coordinates and the largest gradient magnitude over
/// positive ones, where the gradient is Aᵀ(Ax − b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kkt {
    pub min_active_gradient: f64,
    pub max_free_gradient: f64,
    /// ‖Aᵀb‖₂, the scale for the free-coordinate bound.
    pub atb_norm: f64,
}

impl Kkt {
    pub fn holds(&self) -> bool {
        self.min_active_gradient >= -1e-8 && self.max_free_gradient <= 1e-8 * self.atb_norm.max(1.0)
    }
}

pub fn kkt(a: &Dense, b: &[f64], x: &[f64]) -> Kkt {
    let ax = a.mul(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let g = a.tmul(&r);
    let mut min_active = f64::INFINITY;
    let mut max_free: f64 = 0.0;
    for (xi, gi) in x.iter().zip(&g) {
        if *xi == 0.0 {
            min_active = min_active.min(*gi);
        } else {
            max_free = max_free.max(gi.abs());
        }
    }
    let atb = a.tmul(b);
    Kkt {
        min_active_gradient: min_active,
        max_free_gradient: max_free,
        atb_norm: atb.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Estimated yearly populations of one block group, 2009..=2019.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationPath {
    pub x: [f64; PATH_YEARS],
    pub residual: f64,
}

/// Fit one block group's path to its observation vector b, ordered
/// (census 2010, five-year windows ending 2010..=2019).
pub fn solve_population_path(b: &[f64; PATH_YEARS]) -> Result<PopulationPath> {
    let sol = nnls(&design_matrix(), b)?;
    let mut x = [0.0; PATH_YEARS];
    x.copy_from_slice(&sol.x);
    Ok(PopulationPath {
        x,
        residual: sol.residual,
    })
}

/// Yearly populations for every block group, indexed like the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPaths {
    pub base_year: i32,
    /// Per block group, one value per year starting at `base_year`.
    pub values: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl PopulationPaths {
    /// Paths known for a single year, e.g. the row sums of a known matrix.
    pub fn single_year(year: i32, values: &[f64]) -> Self {
        Self {
            base_year: year,
            values: values.iter().map(|&v| vec![v]).collect(),
            residuals: vec![0.0; values.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Populations of every block group in `year`.
    pub fn year(&self, year: i32) -> Result<Vec<f64>> {
        let k = year - self.base_year;
        self.values
            .iter()
            .map(|v| {
                usize::try_from(k)
                    .ok()
                    .and_then(|k| v.get(k).copied())
                    .ok_or_else(|| Error::InvalidInput(format!("no population path value for {year}")))
            })
            .collect()
    }
}

/// Solve the path of every block group in parallel. `obs` is indexed like
/// `cbg_ids`.
pub fn solve_population_paths(cbg_ids: &[String], obs: &[Vec<Observation>]) -> Result<PopulationPaths> {
    if cbg_ids.len() != obs.len() {
        return Err(Error::LengthMismatch(cbg_ids.len(), obs.len()));
    }
    let solved: Vec<PopulationPath> = cbg_ids
        .par_iter()
        .zip(obs.par_iter())
        .map(|(id, o)| solve_population_path(&observation_vector(id, o)?))
        .collect::<Result<_>>()?;
    Ok(PopulationPaths {
        base_year: PATH_BASE_YEAR,
        residuals: solved.iter().map(|p| p.residual).collect(),
        values: solved.into_iter().map(|p| p.x.to_vec()).collect(),
    })
}

/// Residual statistics for reporting.
pub fn residual_summary(paths: &PopulationPaths) -> BTreeMap<&'static str, f64> {
    let n = paths.residuals.len().max(1) as f64;
    let mean = paths.residuals.iter().sum::<f64>() / n;
    let max = paths.residuals.iter().copied().fold(0.0, f64::max);
    BTreeMap::from([("mean_residual", mean), ("max_residual", max)])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive oracle: for every subset of free coordinates solve the
    /// unconstrained problem by normal equations and keep the best feasible
    /// KKT point.
    fn brute(a: &Dense, b: &[f64]) -> Vec<f64> {
        let n = a.cols;
        let mut best = vec![0.0; n];
        let mut best_res = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let cols: Vec<usize> = (0..n).filter(|k| mask >> k & 1 == 1).collect();
            let p = cols.len();
            let mut m = vec![vec![0.0; p + 1]; p];
            for (i, &ci) in cols.iter().enumerate() {
                for (j, &cj) in cols.iter().enumerate() {
                    m[i][j] = (0..a.rows).map(|r| a.at(r, ci) * a.at(r, cj)).sum();
                }
                m[i][p] = (0..a.rows).map(|r| a.at(r, ci) * b[r]).sum();
            }
            // Gauss-Jordan with partial pivoting
            let mut ok = true;
            for k in 0..p {
                let piv = (k..p).max_by(|&x, &y| m[x][k].abs().total_cmp(&m[y][k].abs())).unwrap();
                if m[piv][k].abs() < 1e-12 {
                    ok = false;
                    break;
                }
                m.swap(k, piv);
                for i in 0..p {
                    if i != k {
                        let f = m[i][k] / m[k][k];
                        for j in k..=p {
                            m[i][j] -= f * m[k][j];
                        }
                    }
                }
            }
            if !ok {
                continue;
            }
            let mut x = vec![0.0; n];
            for (i, &c) in cols.iter().enumerate() {
                x[c] = m[i][p] / m[i][i];
            }
            if x.iter().any(|&v| v < 0.0) {
                continue;
            }
            let r: f64 = a.mul(&x).iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
            if r < best_res - 1e-12 {
                best_res = r;
                best = x;
            }
        }
        best
    }

    #[test]
    fn design_rows() {
        let a = design_matrix();
        assert_eq!(a.at(0, 1), 1.0);
        assert_eq!((0..11).map(|c| a.at(0, c)).sum::<f64>(), 1.0);
        assert_eq!(a.at(1, 0), 0.5);
        assert_eq!(a.at(1, 1), 0.5);
        assert!((a.at(4, 4) - 0.2).abs() < 1e-15);
        assert_eq!(a.at(5, 0), 0.0);
        assert_eq!(a.at(5, 1), 0.2);
        assert_eq!(a.at(5, 5), 0.2);
        assert_eq!(a.at(10, 6), 0.2);
        assert_eq!(a.at(10, 5), 0.0);
        for r in 0..11 {
            let s: f64 = (0..11).map(|c| a.at(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn consistent_system_recovers_path() {
        let a = design_matrix();
        let b: Vec<f64> = a.mul(&[500.0; 11]);
        let mut arr = [0.0; 11];
        arr.copy_from_slice(&b);
        let p = solve_population_path(&arr).unwrap();
        for v in p.x {
            assert!((v - 500.0).abs() < 1e-6);
        }
        assert!(p.residual < 1e-8);
    }

    #[test]
    fn zero_observations() {
        let p = solve_population_path(&[0.0; 11]).unwrap();
        assert_eq!(p.x, [0.0; 11]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut b = [1.0; 11];
        b[3] = f64::NAN;
        assert!(matches!(solve_population_path(&b), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn active_constraint_matches_enumeration() {
        let a = design_matrix();
        let b = [300.0, 320.0, 310.0, 0.0, 900.0, 305.0, 280.0, 250.0, 10.0, 400.0, 380.0];
        let sol = nnls(&a, &b).unwrap();
        let oracle = brute(&a, &b);
        assert!(sol.x.iter().any(|&v| v == 0.0));
        for (x, o) in sol.x.iter().zip(&oracle) {
            assert!((x - o).abs() < 1e-8, "{x} vs {o}");
        }
        assert!(kkt(&a, &b, &sol.x).holds());
    }

    #[test]
    fn general_rectangular() {
        let a = Dense::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let sol = nnls(&a, &[2.0, -1.0, 1.0]).unwrap();
        // x2 pinned at zero, x1 = mean of 2 and 1
        assert!((sol.x[0] - 1.5).abs() < 1e-12);
        assert_eq!(sol.x[1], 0.0);
    }

    #[test]
    fn paths_by_year() {
        let p = PopulationPaths::single_year(2014, &[1.0, 2.0]);
        assert_eq!(p.year(2014).unwrap(), vec![1.0, 2.0]);
        assert!(p.year(2015).is_err());
        assert!(p.year(2013).is_err());
    }
}
