//! Sparse block-group flow matrices and the block aggregation/scaling
//! primitives the harmonizer and the metrics are built from.
//!
//! Storage is CSR with sorted column indices. Row-parallel passes split the
//! rows into fixed chunks of [`ROW_CHUNK`] rows; partial sums are reduced in
//! chunk order, so results do not depend on the worker count.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{CbgRemap, GeoHierarchy};
use crate::kahan::KahanSum;

pub use crate::geo::Level;

/// Rows per parallel work unit.
pub const ROW_CHUNK: usize = 1024;

/// Which entries of a targeted block a scaling touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalMode {
    #[default]
    All,
    Only,
    Exclude,
}

impl DiagonalMode {
    #[inline]
    pub fn admits(self, row: usize, col: usize) -> bool {
        match self {
            DiagonalMode::All => true,
            DiagonalMode::Only => row == col,
            DiagonalMode::Exclude => row != col,
        }
    }
}

/// Assignment of every block group to a block at some level.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    level: Level,
    assignment: Vec<u32>,
    labels: Vec<String>,
}

impl BlockPartition {
    pub fn new(level: Level, assignment: Vec<u32>, labels: Vec<String>) -> Result<Self> {
        let mut seen = vec![false; labels.len()];
        for &b in &assignment {
            let slot = seen.get_mut(b as usize).ok_or_else(|| {
                Error::InvalidInput(format!("block index {b} out of range"))
            })?;
            *slot = true;
        }
        Ok(Self {
            level,
            assignment,
            labels,
        })
    }

    pub fn from_hierarchy(h: &GeoHierarchy, level: Level) -> Self {
        let assignment = (0..h.len()).map(|i| h.parent(i, level) as u32).collect();
        Self {
            level,
            assignment,
            labels: h.ids(level).into_owned(),
        }
    }

    /// Every block group its own block.
    pub fn identity(n: usize) -> Self {
        Self {
            level: Level::Cbg,
            assignment: (0..n as u32).collect(),
            labels: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    /// One block holding everything.
    pub fn global(n: usize) -> Self {
        Self {
            level: Level::National,
            assignment: vec![0; n],
            labels: vec!["US".to_owned()],
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// Number of block groups covered.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn n_blocks(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn block_of(&self, cbg: usize) -> usize {
        self.assignment[cbg] as usize
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn members(&self, block: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.block_of(i) == block).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::PartitionMismatch {
                partition: self.len(),
                matrix: n,
            });
        }
        Ok(())
    }
}

/// Dense rows × cols table of block totals.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTable {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl BlockTable {
    pub fn filled(n_rows: usize, n_cols: usize, value: f64) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![value; n_rows * n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.n_cols + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        crate::kahan::sum(self.values.iter().copied())
    }

    /// Row-vector table (one row) from a slice.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            n_rows: 1,
            n_cols: values.len(),
            values,
        }
    }

    /// Column-vector table (one column) from a slice.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            n_rows: values.len(),
            n_cols: 1,
            values,
        }
    }
}

/// Row or column selector for [`FlowMatrix::scale_block`].
#[derive(Debug, Clone, Copy)]
pub enum BlockSel<'a> {
    All,
    Block(&'a BlockPartition, usize),
}

impl BlockSel<'_> {
    #[inline]
    fn admits(&self, i: usize) -> bool {
        match self {
            BlockSel::All => true,
            BlockSel::Block(p, b) => p.block_of(i) == *b,
        }
    }
}

/// Square sparse matrix of expected persons: entry (i, j) counts people in
/// block group i at year t−1 and j at year t.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    n: usize,
    year: i32,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

fn check_value(row: usize, col: usize, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidEntry { row, col, value });
    }
    Ok(())
}

impl FlowMatrix {
    pub fn empty(n: usize, year: i32) -> Self {
        Self {
            n,
            year,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from (row, col, value) triplets. Duplicates are summed in input
    /// order; exact zeros are not stored.
    pub fn from_triplets(
        n: usize,
        year: i32,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &t {
            if r >= n || c >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.max(c) + 1,
                });
            }
            check_value(r, c, v)?;
        }
        t.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, _) = t[i];
            let mut acc = KahanSum::new();
            while i < t.len() && t[i].0 == r && t[i].1 == c {
                acc.add(t[i].2);
                i += 1;
            }
            let v = acc.value();
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c as u32);
                values.push(v);
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n,
            year,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(year: i32, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut t = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            t.extend(row.iter().enumerate().map(|(c, &v)| (r, c, v)));
        }
        Self::from_triplets(n, year, t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn set_year(&mut self, year: i32) {
        self.year = year;
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    pub fn same_pattern(&self, other: &FlowMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    fn chunks(&self) -> Vec<Range<usize>> {
        (0..self.n)
            .step_by(ROW_CHUNK.max(1))
            .map(|s| s..(s + ROW_CHUNK).min(self.n))
            .collect()
    }

    /// Ordered parallel map over row chunks.
    fn map_chunks<T: Send>(&self, f: impl Fn(Range<usize>) -> T + Sync + Send) -> Vec<T> {
        self.chunks().into_par_iter().map(f).collect()
    }

    fn reduce_sum(&self, f: impl Fn(usize, usize, f64) -> f64 + Sync + Send) -> f64 {
        let parts = self.map_chunks(|rows| {
            let mut acc = KahanSum::new();
            for r in rows {
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    acc.add(f(r, c as usize, v));
                }
            }
            acc
        });
        let mut total = KahanSum::new();
        for p in parts {
            total.merge(p);
        }
        total.value()
    }

    pub fn total(&self) -> f64 {
        self.reduce_sum(|_, _, v| v)
    }

    pub fn diagonal_total(&self) -> f64 {
        self.reduce_sum(|r, c, v| if r == c { v } else { 0.0 })
    }

    pub fn off_diagonal_total(&self) -> f64 {
        self.reduce_sum(|r, c, v| if r != c { v } else { 0.0 })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.map_chunks(|rows| {
            rows.map(|r| crate::kahan::sum(self.row(r).1.iter().copied()))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.col_block_sums(&BlockPartition::identity(self.n), DiagonalMode::All)
            .expect("identity partition matches")
    }

    /// Per-block totals over columns grouped by `cols`.
    pub fn col_block_sums(&self, cols: &BlockPartition, diag: DiagonalMode) -> Result<Vec<f64>> {
        cols.check(self.n)?;
        let nb = cols.n_blocks();
        let parts = self.map_chunks(|rows| {
            let mut acc = vec![KahanSum::new(); nb];
            for r in rows {
                let (cs, vs) = self.row(r);
                for (&c, &v) in cs.iter().zip(vs) {
                    if diag.admits(r, c as usize) {
                        acc[cols.block_of(c as usize)].add(v);
                    }
                }
            }
            acc
        });
        Ok(merge_partials(nb, parts))
    }

    /// Per-block totals over rows grouped by `rows`.
    pub fn row_block_sums(&self, rows: &BlockPartition, diag: DiagonalMode) -> Result<Vec<f64>> {
        rows.check(self.n)?;
        let nb = rows.n_blocks();
        let parts = self.map_chunks(|range| {
            let mut acc = vec![KahanSum::new(); nb];
            for r in range {
                let (cs, vs) = self.row(r);
                let b = rows.block_of(r);
                for (&c, &v) in cs.iter().zip(vs) {
                    if diag.admits(r, c as usize) {
                        acc[b].add(v);
                    }
                }
            }
            acc
        });
        Ok(merge_partials(nb, parts))
    }

    /// table[b1][b2] = Σ entries with row in block b1 and column in block b2.
    pub fn block_sum(&self, rows: &BlockPartition, cols: &BlockPartition) -> Result<BlockTable> {
        self.block_sum_filtered(rows, cols, DiagonalMode::All)
    }

    pub fn block_sum_filtered(
        &self,
        rows: &BlockPartition,
        cols: &BlockPartition,
        diag: DiagonalMode,
    ) -> Result<BlockTable> {
        rows.check(self.n)?;
        cols.check(self.n)?;
        let (nr, nc) = (rows.n_blocks(), cols.n_blocks());
        let parts = self.map_chunks(|range| {
            let mut acc: HashMap<(u32, u32), KahanSum> = HashMap::new();
            for r in range {
                let rb = rows.block_of(r) as u32;
                let (cs, vs) = self.row(r);
                for (&c, &v) in cs.iter().zip(vs) {
                    if diag.admits(r, c as usize) {
                        let cb = cols.block_of(c as usize) as u32;
                        acc.entry((rb, cb)).or_default().add(v);
                    }
                }
            }
            acc
        });
        let mut cells = vec![KahanSum::new(); nr * nc];
        for part in parts {
            for ((rb, cb), s) in part {
                cells[rb as usize * nc + cb as usize].merge(s);
            }
        }
        Ok(BlockTable {
            n_rows: nr,
            n_cols: nc,
            values: cells.into_iter().map(|c| c.value()).collect(),
        })
    }

    /// Per block b: diagonal mass of block groups in b, and off-diagonal
    /// mass landing in columns of b.
    pub fn split_diag_offdiag(&self, part: &BlockPartition) -> Result<(Vec<f64>, Vec<f64>)> {
        let diag = self.col_block_sums(part, DiagonalMode::Only)?;
        let off = self.col_block_sums(part, DiagonalMode::Exclude)?;
        Ok((diag, off))
    }

    /// Multiply each admitted entry (r, c) by `factor(r, c)`, in parallel
    /// over row chunks. Returns Σ |new − old| over all entries.
    fn scale_with(
        &mut self,
        diag: DiagonalMode,
        factor: impl Fn(usize, usize) -> f64 + Sync,
    ) -> f64 {
        let row_ptr = &self.row_ptr;
        let col_idx = &self.col_idx;
        let ranges = self.chunks();
        let mut slices = Vec::with_capacity(ranges.len());
        let mut rest: &mut [f64] = &mut self.values;
        for range in ranges {
            let len = row_ptr[range.end] - row_ptr[range.start];
            let (head, tail) = rest.split_at_mut(len);
            slices.push((range, head));
            rest = tail;
        }
        let parts: Vec<KahanSum> = slices
            .into_par_iter()
            .map(|(range, vals)| {
                let base = row_ptr[range.start];
                let mut l1 = KahanSum::new();
                for r in range {
                    for k in row_ptr[r]..row_ptr[r + 1] {
                        let c = col_idx[k] as usize;
                        if diag.admits(r, c) {
                            let old = vals[k - base];
                            let new = old * factor(r, c);
                            l1.add((new - old).abs());
                            vals[k - base] = new;
                        }
                    }
                }
                l1
            })
            .collect();
        let mut total = KahanSum::new();
        for p in parts {
            total.merge(p);
        }
        total.value()
    }

    /// Scale one (row selection × column selection) target by `factor`.
    /// Untargeted entries are left bit-identical.
    pub fn scale_block(
        &mut self,
        rows: BlockSel<'_>,
        cols: BlockSel<'_>,
        factor: f64,
        diag: DiagonalMode,
    ) -> Result<f64> {
        check_factor(factor)?;
        for sel in [&rows, &cols] {
            if let BlockSel::Block(p, _) = sel {
                p.check(self.n)?;
            }
        }
        Ok(self.scale_with(diag, |r, c| {
            if rows.admits(r) && cols.admits(c) {
                factor
            } else {
                1.0
            }
        }))
    }

    /// Scale every (row block, column block) cell by its factor in one pass.
    /// Returns the L1 change. A factor of exactly 1 leaves entries untouched.
    pub fn scale_blocks(
        &mut self,
        rows: &BlockPartition,
        cols: &BlockPartition,
        factors: &BlockTable,
        diag: DiagonalMode,
    ) -> Result<f64> {
        rows.check(self.n)?;
        cols.check(self.n)?;
        if factors.n_rows != rows.n_blocks() || factors.n_cols != cols.n_blocks() {
            return Err(Error::DimensionMismatch {
                expected: rows.n_blocks() * cols.n_blocks(),
                found: factors.values.len(),
            });
        }
        for &f in &factors.values {
            check_factor(f)?;
        }
        Ok(self.scale_with(diag, |r, c| {
            factors.get(rows.block_of(r), cols.block_of(c))
        }))
    }

    /// Copy with every entry multiplied by `factor(r, c)`; the sparsity
    /// pattern is kept.
    pub fn map_factors(&self, factor: impl Fn(usize, usize) -> f64 + Sync) -> Result<FlowMatrix> {
        let mut out = self.clone();
        out.scale_with(DiagonalMode::All, factor);
        for (r, c, v) in out.iter() {
            check_value(r, c, v)?;
        }
        Ok(out)
    }

    /// Copy keeping only entries for which `keep(r, c)` holds.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> FlowMatrix {
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                if keep(r, c as usize) {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        FlowMatrix {
            n: self.n,
            year: self.year,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Carry the matrix onto a coarsened geography by summation.
    pub fn remap(&self, remap: &CbgRemap) -> Result<FlowMatrix> {
        if remap.map.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: remap.map.len(),
            });
        }
        FlowMatrix::from_triplets(
            remap.new_len,
            self.year,
            self.iter().map(|(r, c, v)| (remap.map[r], remap.map[c], v)),
        )
    }

    /// Check that every stored entry is positive and finite.
    pub fn validate(&self) -> Result<()> {
        for (r, c, v) in self.iter() {
            check_value(r, c, v)?;
            if v == 0.0 {
                return Err(Error::InvalidEntry { row: r, col: c, value: v });
            }
        }
        Ok(())
    }
}

fn check_factor(f: f64) -> Result<()> {
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::NonPositiveFactor(f));
    }
    Ok(())
}

fn merge_partials(nb: usize, parts: Vec<Vec<KahanSum>>) -> Vec<f64> {
    let mut acc = vec![KahanSum::new(); nb];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            a.merge(p);
        }
    }
    acc.into_iter().map(|a| a.value()).collect()
}

/// Σ |a_ij − b_ij| over the union of both sparsity patterns.
pub fn l1_distance(a: &FlowMatrix, b: &FlowMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            expected: a.n,
            found: b.n,
        });
    }
    let parts = a.map_chunks(|rows| {
        let mut acc = KahanSum::new();
        for r in rows {
            let (ac, av) = a.row(r);
            let (bc, bv) = b.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                let ca = ac.get(i).copied().unwrap_or(u32::MAX);
                let cb = bc.get(j).copied().unwrap_or(u32::MAX);
                if ca == cb {
                    acc.add((av[i] - bv[j]).abs());
                    i += 1;
                    j += 1;
                } else if ca < cb {
                    acc.add(av[i].abs());
                    i += 1;
                } else {
                    acc.add(bv[j].abs());
                    j += 1;
                }
            }
        }
        acc
    });
    let mut total = KahanSum::new();
    for p in parts {
        total.merge(p);
    }
    Ok(total.value())
}
