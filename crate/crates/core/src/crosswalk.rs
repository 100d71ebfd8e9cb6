//! Address → block-group crosswalk and its application to address-level
//! flow matrices.
//!
//! Movers are spread over the product of their origin and destination
//! crosswalk rows; stayers are spread over the diagonal only, so a stayer at
//! an imprecise address never turns into a mover between block groups.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{FlowMatrix, Level};
use crate::geo::GeoHierarchy;
use crate::kahan::KahanSum;
use crate::records::AddressMatrix;

const ROW_TOLERANCE: f64 = 1e-9;

/// ZIP-level assignment of an address: candidate tracts with crosswalk
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipAssignment {
    pub address_id: String,
    pub zip: String,
    pub tract_weights: BTreeMap<String, f64>,
}

/// Row-stochastic sparse map from addresses to block groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosswalkMatrix {
    addresses: Vec<String>,
    n_cbg: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl CrosswalkMatrix {
    /// Build from per-address rows of (block-group index, probability).
    /// Every row must sum to 1 within 1e−9 with entries in (0, 1].
    pub fn from_rows(n_cbg: usize, rows: BTreeMap<String, Vec<(usize, f64)>>) -> Result<Self> {
        let mut addresses = Vec::with_capacity(rows.len());
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        for (address, mut row) in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut sum = KahanSum::new();
            for &(c, p) in &row {
                if c >= n_cbg {
                    return Err(Error::DimensionMismatch {
                        expected: n_cbg,
                        found: c + 1,
                    });
                }
                if !(p > 0.0 && p <= 1.0 + ROW_TOLERANCE) {
                    return Err(Error::NotRowStochastic { address, sum: p });
                }
                sum.add(p);
            }
            if (sum.value() - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::NotRowStochastic {
                    address,
                    sum: sum.value(),
                });
            }
            cols.extend(row.iter().map(|&(c, _)| c as u32));
            probs.extend(row.iter().map(|&(_, p)| p));
            row_ptr.push(cols.len());
            addresses.push(address);
        }
        Ok(Self {
            addresses,
            n_cbg,
            row_ptr,
            cols,
            probs,
        })
    }

    pub fn n_cbg(&self) -> usize {
        self.n_cbg
    }

    pub fn addresses(&self) -> &[String] {
        &self.addresses
    }

    pub fn row_index(&self, address: &str) -> Option<usize> {
        self.addresses
            .binary_search_by(|a| a.as_str().cmp(address))
            .ok()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.probs[span])
    }
}

/// Exact geocodes give point-mass rows. ZIP-level addresses are spread over
/// their tracts in proportion to the crosswalk weights, then over each
/// tract's block groups in proportion to population (uniformly when the
/// tract has no population). Exact assignments win over ZIP assignments.
pub fn build_crosswalk(
    exact: &BTreeMap<String, String>,
    fuzzy: &[ZipAssignment],
    cbg_populations: &HashMap<String, f64>,
    h: &GeoHierarchy,
) -> Result<CrosswalkMatrix> {
    let mut rows: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (address, cbg) in exact {
        let idx = h
            .cbg_index(cbg)
            .ok_or_else(|| Error::UnknownArea(cbg.clone()))?;
        rows.insert(address.clone(), vec![(idx, 1.0)]);
    }

    let mut tract_members: Vec<Vec<usize>> = vec![Vec::new(); h.block_count(Level::Tract)];
    for i in 0..h.len() {
        tract_members[h.parent(i, Level::Tract)].push(i);
    }
    let pop = |i: usize| cbg_populations.get(&h.cbg_ids()[i]).copied().unwrap_or(0.0);

    for z in fuzzy {
        if rows.contains_key(&z.address_id) {
            continue;
        }
        let total_weight: f64 = z.tract_weights.values().filter(|w| **w > 0.0).sum();
        if !(total_weight > 0.0) {
            return Err(Error::AllZeroWeights(z.address_id.clone()));
        }
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (tract, &w) in &z.tract_weights {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "tract weight {w} for address `{}`",
                    z.address_id
                )));
            }
            let t = h.require_block(Level::Tract, tract)?;
            if w == 0.0 {
                continue;
            }
            let share = w / total_weight;
            let members = &tract_members[t];
            let tract_pop: f64 = members.iter().map(|&i| pop(i)).sum();
            for &i in members {
                let within = if tract_pop > 0.0 {
                    pop(i) / tract_pop
                } else {
                    1.0 / members.len() as f64
                };
                if within > 0.0 {
                    *acc.entry(i).or_default() += share * within;
                }
            }
        }
        let sum: f64 = acc.values().sum();
        rows.insert(
            z.address_id.clone(),
            acc.into_iter().map(|(i, p)| (i, p / sum)).collect(),
        );
    }
    CrosswalkMatrix::from_rows(h.len(), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosswalkOutput {
    pub matrix: FlowMatrix,
    /// Addresses of the input matrix without a crosswalk row.
    pub dropped_addresses: usize,
    /// Mass on entries touching a dropped address.
    pub dropped_mass: f64,
}

/// E = Gᵀ·(A − diag A)·G + diag(Gᵀ·diag A), evaluated sparsely.
pub fn apply_crosswalk(a: &AddressMatrix, g: &CrosswalkMatrix) -> Result<CrosswalkOutput> {
    if a.addresses.len() != a.matrix.n() {
        return Err(Error::DimensionMismatch {
            expected: a.addresses.len(),
            found: a.matrix.n(),
        });
    }
    let lookup: Vec<Option<usize>> = a.addresses.iter().map(|x| g.row_index(x)).collect();
    let dropped_addresses = lookup.iter().filter(|x| x.is_none()).count();
    if dropped_addresses > 0 {
        log::warn!("{dropped_addresses} addresses have no block-group assignment; their flows are dropped");
    }

    let n = a.matrix.n();
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(crate::flow::ROW_CHUNK)
        .map(|s| s..(s + crate::flow::ROW_CHUNK).min(n))
        .collect();
    let parts: Vec<(Vec<(usize, usize, f64)>, KahanSum)> = chunks
        .into_par_iter()
        .map(|range| {
            let mut trips = Vec::new();
            let mut dropped = KahanSum::new();
            for r in range {
                let (cs, vs) = a.matrix.row(r);
                for (&c, &w) in cs.iter().zip(vs) {
                    let c = c as usize;
                    let (Some(gr), Some(gc)) = (lookup[r], lookup[c]) else {
                        dropped.add(w);
                        continue;
                    };
                    let (c1s, p1s) = g.row(gr);
                    if r == c {
                        for (&cbg, &p) in c1s.iter().zip(p1s) {
                            trips.push((cbg as usize, cbg as usize, w * p));
                        }
                    } else {
                        let (c2s, p2s) = g.row(gc);
                        for (&o, &po) in c1s.iter().zip(p1s) {
                            for (&d, &pd) in c2s.iter().zip(p2s) {
                                trips.push((o as usize, d as usize, w * po * pd));
                            }
                        }
                    }
                }
            }
            (trips, dropped)
        })
        .collect();

    let mut dropped_mass = KahanSum::new();
    let mut all = Vec::new();
    for (t, d) in parts {
        all.extend(t);
        dropped_mass.merge(d);
    }
    let matrix = FlowMatrix::from_triplets(g.n_cbg(), a.matrix.year(), all)?;
    Ok(CrosswalkOutput {
        matrix,
        dropped_addresses,
        dropped_mass: dropped_mass.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_hierarchy, CbgRecord};

    fn hier() -> GeoHierarchy {
        build_hierarchy(&[
            CbgRecord::new("g1", "T1", "C1", "S1"),
            CbgRecord::new("g2", "T1", "C1", "S1"),
            CbgRecord::new("g3", "T2", "C1", "S1"),
        ])
        .unwrap()
    }

    fn zip(address: &str, weights: &[(&str, f64)]) -> ZipAssignment {
        ZipAssignment {
            address_id: address.into(),
            zip: "10000".into(),
            tract_weights: weights.iter().map(|(t, w)| (t.to_string(), *w)).collect(),
        }
    }

    fn row_map(g: &CrosswalkMatrix, address: &str) -> BTreeMap<usize, f64> {
        let (c, p) = g.row(g.row_index(address).unwrap());
        c.iter().map(|&c| c as usize).zip(p.iter().copied()).collect()
    }

    #[test]
    fn exact_address_is_point_mass() {
        let exact = BTreeMap::from([("a".to_string(), "g2".to_string())]);
        let g = build_crosswalk(&exact, &[], &HashMap::new(), &hier()).unwrap();
        assert_eq!(row_map(&g, "a"), BTreeMap::from([(1, 1.0)]));
    }

    #[test]
    fn zip_single_tract_proportional() {
        let pops = HashMap::from([("g1".to_string(), 100.0), ("g2".to_string(), 300.0)]);
        let g = build_crosswalk(&BTreeMap::new(), &[zip("z", &[("T1", 1.0)])], &pops, &hier()).unwrap();
        assert_eq!(row_map(&g, "z"), BTreeMap::from([(0, 0.25), (1, 0.75)]));
    }

    #[test]
    fn zip_two_stage_allocation() {
        let pops = HashMap::from([
            ("g1".to_string(), 50.0),
            ("g2".to_string(), 50.0),
            ("g3".to_string(), 200.0),
        ]);
        let g = build_crosswalk(
            &BTreeMap::new(),
            &[zip("z", &[("T1", 0.6), ("T2", 0.4)])],
            &pops,
            &hier(),
        )
        .unwrap();
        let r = row_map(&g, "z");
        // 0.6 split evenly over T1's two block groups; 0.4 to T2's only one
        for (i, expect) in [(0, 0.3), (1, 0.3), (2, 0.4)] {
            assert!((r[&i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_population_tract_splits_uniformly() {
        let g = build_crosswalk(&BTreeMap::new(), &[zip("z", &[("T1", 1.0)])], &HashMap::new(), &hier()).unwrap();
        assert_eq!(row_map(&g, "z"), BTreeMap::from([(0, 0.5), (1, 0.5)]));
    }

    #[test]
    fn errors() {
        let exact = BTreeMap::from([("a".to_string(), "nope".to_string())]);
        assert!(matches!(
            build_crosswalk(&exact, &[], &HashMap::new(), &hier()),
            Err(Error::UnknownArea(_))
        ));
        assert!(matches!(
            build_crosswalk(&BTreeMap::new(), &[zip("z", &[("T9", 1.0)])], &HashMap::new(), &hier()),
            Err(Error::UnknownArea(_))
        ));
        assert!(matches!(
            build_crosswalk(&BTreeMap::new(), &[zip("z", &[("T1", 0.0)])], &HashMap::new(), &hier()),
            Err(Error::AllZeroWeights(_))
        ));
    }

    #[test]
    fn perturbed_row_rejected() {
        let ok = BTreeMap::from([("a".to_string(), vec![(0, 0.5), (1, 0.5)])]);
        assert!(CrosswalkMatrix::from_rows(3, ok).is_ok());
        let bad = BTreeMap::from([("a".to_string(), vec![(0, 0.5), (1, 0.5 + 1e-6)])]);
        assert!(matches!(
            CrosswalkMatrix::from_rows(3, bad),
            Err(Error::NotRowStochastic { .. })
        ));
    }

    fn addr_matrix(addresses: &[&str], trips: &[(usize, usize, f64)]) -> AddressMatrix {
        AddressMatrix {
            addresses: addresses.iter().map(|s| s.to_string()).collect(),
            matrix: FlowMatrix::from_triplets(addresses.len(), 2015, trips.iter().copied()).unwrap(),
        }
    }

    #[test]
    fn exact_only_relabels() {
        let g = CrosswalkMatrix::from_rows(
            3,
            BTreeMap::from([
                ("a".to_string(), vec![(2, 1.0)]),
                ("b".to_string(), vec![(0, 1.0)]),
                ("c".to_string(), vec![(1, 1.0)]),
            ]),
        )
        .unwrap();
        let a = addr_matrix(&["a", "b", "c"], &[(0, 0, 5.0), (0, 1, 2.0), (2, 1, 1.5)]);
        let e = apply_crosswalk(&a, &g).unwrap().matrix;
        assert_eq!(e.get(2, 2), 5.0);
        assert_eq!(e.get(2, 0), 2.0);
        assert_eq!(e.get(1, 0), 1.5);
        assert_eq!(e.nnz(), 3);
    }

    #[test]
    fn fuzzy_stayer_lands_on_diagonal() {
        let g = CrosswalkMatrix::from_rows(2, BTreeMap::from([("z".to_string(), vec![(0, 0.25), (1, 0.75)])])).unwrap();
        let a = addr_matrix(&["z"], &[(0, 0, 1.0)]);
        let e = apply_crosswalk(&a, &g).unwrap().matrix;
        assert_eq!(e.to_dense(), vec![vec![0.25, 0.0], vec![0.0, 0.75]]);
    }

    #[test]
    fn zip_to_zip_mover_fills_sub_block() {
        let g = CrosswalkMatrix::from_rows(
            4,
            BTreeMap::from([
                ("za".to_string(), vec![(0, 0.5), (1, 0.5)]),
                ("zb".to_string(), vec![(2, 0.5), (3, 0.5)]),
            ]),
        )
        .unwrap();
        let a = addr_matrix(&["za", "zb"], &[(0, 1, 1.0)]);
        let e = apply_crosswalk(&a, &g).unwrap().matrix;
        assert_eq!(e.nnz(), 4);
        for o in 0..2 {
            for d in 2..4 {
                assert_eq!(e.get(o, d), 0.25);
            }
        }
    }

    #[test]
    fn unmapped_addresses_dropped_with_count() {
        let g = CrosswalkMatrix::from_rows(1, BTreeMap::from([("a".to_string(), vec![(0, 1.0)])])).unwrap();
        let a = addr_matrix(&["a", "x"], &[(0, 0, 3.0), (0, 1, 1.0), (1, 1, 2.0)]);
        let out = apply_crosswalk(&a, &g).unwrap();
        assert_eq!(out.dropped_addresses, 1);
        assert_eq!(out.dropped_mass, 3.0);
        assert_eq!(out.matrix.total(), 3.0);
    }
}
