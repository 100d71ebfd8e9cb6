//! Subcommands behind the `migrate-fuse` binary. Each reads its inputs from
//! a [`RunConfig`], writes files under the output directory and saves a
//! manifest with input and output digests.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::analytics::{
    assign_categories, boundary_distribution, category_flow_table, distance_distribution, homophily_ratios,
    redact_low_diversity, region_out_migration_series, table_rows, upward_mobility, write_long, CategoryInput,
    CbgCategory, IncomeBucket, LongRow, MobilityTarget, Race, BOUNDARY_BUCKETS,
};
use crate::config::RunConfig;
use crate::constraints::ConstraintSet;
use crate::crosswalk::{apply_crosswalk, build_crosswalk};
use crate::error::{Error, Result};
use crate::flow::{BlockPartition, DiagonalMode, FlowMatrix, Level};
use crate::geo::{apply_geography_changes, CbgRemap, GeoHierarchy};
use crate::harmonize::{harmonize, residual_summary, solve_population_paths, PopulationPaths};
use crate::io::{self, Manifest};
use crate::records::process_records;
use crate::rng::normal;
use crate::synth::{
    gen_ground_truth, generate_world, perturb_structured, recovery_experiment, synthetic_share, zscore,
    PerturbationSpec, TruthSpec, RECOVERY_LEVELS,
};
use crate::validate::{aggregate_matrix, aligned_entries, correlation, rmse, write_metrics, MetricReport};

fn manifest(name: &str, c: &RunConfig) -> Result<Manifest> {
    Ok(Manifest::new(name, serde_json::to_value(c)?))
}

fn finish(m: Manifest, c: &RunConfig) -> Result<Manifest> {
    m.save(&c.output_dir.join(format!("manifest_{}.json", m.command)))?;
    Ok(m)
}

fn year_file(dir: &Path, year: i32) -> PathBuf {
    dir.join(format!("{year}.csv"))
}

fn save_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn save_csv(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// The hierarchy after any configured geography changes, with the map from
/// the original block groups.
fn load_hierarchy(c: &RunConfig, m: &mut Manifest) -> Result<(GeoHierarchy, GeoHierarchy, CbgRemap)> {
    let path = c.require("hierarchy", &c.hierarchy)?;
    m.input(path)?;
    let h = io::read_hierarchy(path)?;
    match &c.geography_changes {
        Some(p) => {
            m.input(p)?;
            let changes = io::read_changes(p)?;
            let (hf, remap) = apply_geography_changes(&h, &changes)?;
            Ok((h, hf, remap))
        }
        None => {
            let n = h.len();
            Ok((h.clone(), h, CbgRemap::identity(n)))
        }
    }
}

fn read_year_matrix(dir: &Path, year: i32, h: &GeoHierarchy, m: &mut Manifest) -> Result<FlowMatrix> {
    let p = year_file(dir, year);
    m.input(&p)?;
    let e = io::read_matrix(&p, h)?;
    if e.year() != year {
        return Err(Error::parse(&p, format!("file holds year {} not {year}", e.year())));
    }
    Ok(e)
}

/// Records to one address matrix per year.
pub fn cmd_process_records(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("process-records", c)?;
    let path = c.require("records", &c.records)?;
    m.input(path)?;
    let records = io::read_records(path)?;
    let (mats, summary) = process_records(&records, &c.years.years())?;
    log::info!(
        "{} persons, {} without dates, {} empty after cleaning",
        summary.persons,
        summary.no_dates,
        summary.empty_after_cleaning
    );
    let dir = c.address_matrix_dir();
    for (year, a) in &mats {
        let p = year_file(&dir, *year);
        io::write_address_matrix(&p, a)?;
        m.output(&p)?;
    }
    let p = c.output_dir.join("process_summary.json");
    save_json(&p, &summary)?;
    m.output(&p)?;
    finish(m, c)
}

/// Crosswalk (or read) raw block-group matrices and harmonize them.
pub fn cmd_harmonize(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("harmonize", c)?;
    let (h0, h, remap) = load_hierarchy(c, &mut m)?;
    let cpaths = c
        .constraints
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("config field `constraints` is required".into()))?;
    for p in [&cpaths.state_pops, &cpaths.state_flows, &cpaths.county_pops] {
        m.input(p)?;
    }

    let paths: Option<PopulationPaths> = if c.harmonize.cbg_populations {
        let p = cpaths
            .cbg_pops
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("the block-group stage needs `constraints.cbg_pops`".into()))?;
        m.input(p)?;
        let obs = io::read_cbg_observations(p, &h)?;
        let paths = solve_population_paths(h.cbg_ids(), &obs)?;
        let out = c.output_dir.join("population_paths.json");
        save_json(&out, &residual_summary(&paths))?;
        m.output(&out)?;
        Some(paths)
    } else {
        None
    };

    let crosswalk = match &c.raw_matrix_dir {
        Some(_) => None,
        None => {
            let exact = match &c.exact_geocodes {
                Some(p) => {
                    m.input(p)?;
                    io::read_exact_geocodes(p)?
                }
                None => BTreeMap::new(),
            };
            let fuzzy = match &c.zip_assignments {
                Some(p) => {
                    m.input(p)?;
                    io::read_zip_assignments(p)?
                }
                None => Vec::new(),
            };
            let weights = match &c.cbg_weights {
                Some(p) => {
                    m.input(p)?;
                    io::read_cbg_weights(p)?
                }
                None => HashMap::new(),
            };
            if exact.is_empty() && fuzzy.is_empty() {
                return Err(Error::InvalidInput(
                    "set `raw_matrix_dir` or give `exact_geocodes`/`zip_assignments`".into(),
                ));
            }
            Some(build_crosswalk(&exact, &fuzzy, &weights, &h0)?)
        }
    };

    for year in c.years.years() {
        let raw = match (&c.raw_matrix_dir, &crosswalk) {
            (Some(dir), _) => read_year_matrix(dir, year, &h0, &mut m)?.remap(&remap)?,
            (None, Some(g)) => {
                let p = year_file(&c.address_matrix_dir(), year);
                m.input(&p)?;
                let a = io::read_address_matrix(&p)?;
                let out = apply_crosswalk(&a, g)?;
                if out.dropped_addresses > 0 {
                    log::warn!(
                        "{year}: {} addresses without a geocode dropped ({} persons)",
                        out.dropped_addresses,
                        out.dropped_mass
                    );
                }
                let mut e = out.matrix.remap(&remap)?;
                e.set_year(year);
                e
            }
            (None, None) => unreachable!(),
        };
        let rp = year_file(&c.output_dir.join("raw"), year);
        io::write_matrix(&rp, &raw, h.cbg_ids())?;
        m.output(&rp)?;

        let mut cons = io::read_constraints(cpaths, &h, year)?;
        if let Some(p) = &cpaths.components {
            m.input(p)?;
            let s = io::read_components(p, year, Level::State)?;
            let k = io::read_components(p, year, Level::County)?;
            let (adj, log) = cons.adjust(&h, &s, &k)?;
            cons = adj;
            let lp = c.output_dir.join("reports").join(format!("adjustment_{year}.json"));
            save_json(&lp, &log)?;
            m.output(&lp)?;
        }

        let (e, report) = harmonize(&raw, &h, &cons, paths.as_ref(), &c.harmonize)?;
        if let Some(ipf) = &report.ipf {
            if !ipf.converged {
                log::warn!("{year}: county IPF stopped after {} iterations without converging", ipf.iterations);
            }
        }
        let ep = year_file(&c.matrix_dir(), year);
        io::write_matrix(&ep, &e, h.cbg_ids())?;
        m.output(&ep)?;
        let jp = c.output_dir.join("reports").join(format!("harmonize_{year}.jsonl"));
        std::fs::create_dir_all(jp.parent().unwrap_or(Path::new(".")))?;
        report.save_jsonl(&jp)?;
        m.output(&jp)?;
    }
    finish(m, c)
}

/// Comparison metrics of estimate against reference matrices at every level.
pub fn validation_metrics(
    h: &GeoHierarchy,
    truth: &FlowMatrix,
    est: &FlowMatrix,
    raw: Option<&FlowMatrix>,
) -> Result<Vec<MetricReport>> {
    let year = Some(truth.year());
    let mut out = match raw {
        Some(r) => crate::synth::recovery_metrics(h, truth, r, est)?,
        None => Vec::new(),
    };
    for level in RECOVERY_LEVELS {
        let part = BlockPartition::from_hierarchy(h, level);
        let t = aggregate_matrix(truth, &part)?;
        let e = aggregate_matrix(est, &part)?;
        for (subset, movers) in [("all", false), ("movers", true)] {
            let v = aligned_entries(&[&t, &e], movers)?;
            if raw.is_none() {
                let p = correlation(&v[1], &v[0], None, false).unwrap_or(f64::NAN);
                out.push(MetricReport::new(format!("pearson_{subset}"), level.as_str(), false, year, p));
            }
            let s = correlation(&v[1], &v[0], None, true).unwrap_or(f64::NAN);
            out.push(MetricReport::new(format!("spearman_{subset}"), level.as_str(), false, year, s));
            let r = rmse(&v[1], &v[0], None).unwrap_or(f64::NAN);
            out.push(MetricReport::new(format!("rmse_{subset}"), level.as_str(), false, year, r));
        }
        // populations at the end of the year
        let tp = t.col_sums();
        let ep = e.col_sums();
        let p = correlation(&ep, &tp, None, false).unwrap_or(f64::NAN);
        out.push(MetricReport::new("population_pearson", level.as_str(), false, year, p));
        {
            let rates = |m: &FlowMatrix| -> Result<Vec<Option<f64>>> {
                crate::validate::in_migration_rate(m, &BlockPartition::identity(m.n()))
            };
            let (tr, er) = (rates(&t)?, rates(&e)?);
            let (mut a, mut b, mut w) = (Vec::new(), Vec::new(), Vec::new());
            for k in 0..tr.len() {
                if let (Some(x), Some(y)) = (tr[k], er[k]) {
                    a.push(x);
                    b.push(y);
                    w.push(tp[k]);
                }
            }
            let r = rmse(&b, &a, Some(&w)).unwrap_or(f64::NAN);
            out.push(MetricReport::new("in_migration_rate_rmse", level.as_str(), true, year, r));
        }
    }
    Ok(out)
}

pub fn cmd_validate(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("validate", c)?;
    let (_, h, _) = load_hierarchy(c, &mut m)?;
    let truth_dir = c.require("truth_dir", &c.truth_dir)?.to_path_buf();
    let raw_dir = c.output_dir.join("raw");
    let mut reports = Vec::new();
    for year in c.years.years() {
        let truth = read_year_matrix(&truth_dir, year, &h, &mut m)?;
        let est = read_year_matrix(&c.matrix_dir(), year, &h, &mut m)?;
        let raw = if year_file(&raw_dir, year).exists() {
            Some(read_year_matrix(&raw_dir, year, &h, &mut m)?)
        } else {
            None
        };
        reports.extend(validation_metrics(&h, &truth, &est, raw.as_ref())?);
    }
    let p = c.output_dir.join("metrics.csv");
    save_csv(&p, |w| write_metrics(w, &reports))?;
    m.output(&p)?;
    finish(m, c)
}

/// One row of the synthetic evaluation table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SynthRow {
    pub family: String,
    pub tau: f64,
    pub b: f64,
    pub sigma: f64,
    /// Seed, or `mean` for the average over seeds.
    pub seed: String,
    pub metric: String,
    pub level: String,
    pub value: f64,
}

/// Recovery experiments over the configured grid and seeds.
pub fn synth_eval(c: &RunConfig) -> Result<Vec<SynthRow>> {
    let s = &c.synth;
    if s.seeds.is_empty() {
        return Err(Error::InvalidInput("synth.seeds is empty".into()));
    }
    let h = generate_world(&s.world)?;
    let mut cells: Vec<(PerturbationSpec, u64)> = Vec::new();
    for &seed in &s.seeds {
        for &tau in &s.taus {
            cells.push((PerturbationSpec::structured(tau, seed), seed));
        }
        if !s.bias_grid.is_empty() {
            let w = zscore(&synthetic_share(&h, seed))?;
            for &(b, sigma) in &s.bias_grid {
                cells.push((PerturbationSpec::bias_noise(b, sigma, w.clone(), seed), seed));
            }
        }
    }
    let mut truths: BTreeMap<u64, FlowMatrix> = BTreeMap::new();
    let mut rows = Vec::new();
    for (spec, seed) in &cells {
        if !truths.contains_key(seed) {
            truths.insert(*seed, gen_ground_truth(&h, &TruthSpec { seed: *seed, ..s.truth })?);
        }
        let reports = recovery_experiment(spec, &h, &truths[seed], &c.harmonize)?;
        let family = serde_json::to_value(spec.family)?.as_str().unwrap_or_default().to_owned();
        for r in reports {
            rows.push(SynthRow {
                family: family.clone(),
                tau: spec.tau,
                b: spec.b,
                sigma: spec.sigma,
                seed: seed.to_string(),
                metric: r.metric,
                level: r.level,
                value: r.value,
            });
        }
    }
    // averages over seeds, in first-appearance order
    let mut groups: Vec<(SynthRow, Vec<f64>)> = Vec::new();
    for r in &rows {
        let key = |g: &SynthRow| {
            g.family == r.family && g.tau == r.tau && g.b == r.b && g.sigma == r.sigma && g.metric == r.metric && g.level == r.level
        };
        match groups.iter_mut().find(|(g, _)| key(g)) {
            Some((_, v)) => v.push(r.value),
            None => groups.push((r.clone(), vec![r.value])),
        }
    }
    for (mut g, v) in groups {
        g.seed = "mean".into();
        g.value = v.iter().sum::<f64>() / v.len() as f64;
        rows.push(g);
    }
    Ok(rows)
}

pub fn cmd_synth_eval(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("synth-eval", c)?;
    let rows = synth_eval(c)?;
    let p = c.output_dir.join("synth_metrics.csv");
    save_csv(&p, |w| {
        let mut wr = csv::Writer::from_writer(w);
        for r in &rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    m.output(&p)?;
    finish(m, c)
}

fn bucket_labels(edges: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    let mut lo = 0.0;
    for e in edges {
        out.push(format!("[{lo},{e})"));
        lo = *e;
    }
    out.push(format!("[{lo},inf)"));
    out
}

/// Plot-ready tables for one matrix.
pub fn analyze_matrix(
    e: &FlowMatrix,
    h: &GeoHierarchy,
    cats: Option<&[CbgCategory]>,
    edges: &[f64],
) -> Result<Vec<LongRow>> {
    let year = Some(e.year());
    let mut rows = Vec::new();
    let boundary = boundary_distribution(e, h, |_| true)?;
    for (b, v) in BOUNDARY_BUCKETS.iter().zip(boundary) {
        rows.push(LongRow::new("boundary_share", "all", b, year, Some(v)));
    }
    if h.has_centroids() {
        let labels = bucket_labels(edges);
        let d = distance_distribution(e, h, edges, |_| true)?;
        for (b, v) in labels.iter().zip(d) {
            rows.push(LongRow::new("distance_share", "all", b, year, Some(v)));
        }
        if let Some(cats) = cats {
            for urban in [true, false] {
                let stratum = if urban { "urban" } else { "rural" };
                match distance_distribution(e, h, edges, |i| cats[i].urban == urban) {
                    Ok(d) => {
                        for (b, v) in labels.iter().zip(d) {
                            rows.push(LongRow::new("distance_share", stratum, b, year, Some(v)));
                        }
                    }
                    Err(Error::ZeroTotal) => {}
                    Err(err) => return Err(err),
                }
            }
        }
    }
    if let Some(cats) = cats {
        let t = category_flow_table(e, cats)?;
        rows.extend(table_rows("category_flow_share", &t, year));
        match homophily_ratios(&t) {
            Ok(r) => rows.extend(table_rows("homophily_ratio", &r, year)),
            Err(Error::ZeroBaseShare(k)) => log::warn!("{}: no homophily ratios, category `{k}` receives no movers", e.year()),
            Err(err) => return Err(err),
        }
        let targets = [
            (MobilityTarget::HigherIncome, "higher_income"),
            (MobilityTarget::TopQuartile, "top_quartile"),
            (MobilityTarget::BottomQuartile, "bottom_quartile"),
        ];
        let strata = [None, Some(Race::White), Some(Race::Black), Some(Race::Asian), Some(Race::Hispanic), Some(Race::Other)];
        for (target, name) in targets {
            for race in strata {
                let v = upward_mobility(e, cats, race, IncomeBucket::Decile, target)?;
                let stratum = race.map(Race::as_str).unwrap_or("all_movers");
                for (k, x) in v.into_iter().enumerate() {
                    rows.push(LongRow::new(&format!("mobility_{name}"), stratum, &format!("decile_{}", k + 1), year, x));
                }
            }
        }
    }
    Ok(rows)
}

pub fn cmd_analyze(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("analyze", c)?;
    let (_, h, _) = load_hierarchy(c, &mut m)?;
    let cats = match &c.categories {
        Some(p) => {
            m.input(p)?;
            Some(assign_categories(&h, &io::read_categories(p)?)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut mats = Vec::new();
    for year in c.years.years() {
        let e = read_year_matrix(&c.matrix_dir(), year, &h, &mut m)?;
        rows.extend(analyze_matrix(&e, &h, cats.as_deref(), &c.analyze.distance_edges)?);
        mats.push(e);
    }
    if let Some(p) = &c.regions {
        m.input(p)?;
        let regions = io::read_regions(p)?;
        for s in region_out_migration_series(&mats, &h, &regions)? {
            rows.push(LongRow::new("out_migration_rate", &s.region, "", Some(s.year), s.rate));
        }
    }
    let p = c.output_dir.join("analytics.csv");
    save_csv(&p, |w| write_long(w, &rows))?;
    m.output(&p)?;
    finish(m, c)
}

pub fn cmd_redact(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("redact", c)?;
    let (_, h, _) = load_hierarchy(c, &mut m)?;
    let dir = c.output_dir.join("redacted");
    let mut redacted = Vec::new();
    for year in c.years.years() {
        let e = read_year_matrix(&c.matrix_dir(), year, &h, &mut m)?;
        let (out, rows) = redact_low_diversity(&e, c.redact.k, c.redact.q)?;
        let p = year_file(&dir, year);
        io::write_matrix(&p, &out, h.cbg_ids())?;
        m.output(&p)?;
        redacted.extend(rows.into_iter().map(|r| (year, h.cbg_ids()[r].clone())));
    }
    let p = c.output_dir.join("redacted_origins.csv");
    save_csv(&p, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["year", "cbg_id"])?;
        for (y, id) in &redacted {
            wr.write_record([y.to_string(), id.clone()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    m.output(&p)?;
    finish(m, c)
}

/// Made-up block-group attributes for fixtures.
pub fn synthetic_categories(h: &GeoHierarchy, seed: u64) -> Vec<CategoryInput> {
    let share = synthetic_share(h, seed);
    (0..h.len())
        .map(|i| {
            let z = normal(seed, "category_race", &[i as u64]);
            let race = if share[i] > 0.5 {
                Race::White
            } else if z > 0.8 {
                Race::Asian
            } else if z > -0.2 {
                Race::Hispanic
            } else {
                Race::Black
            };
            let urban = normal(seed, "category_urban", &[h.parent(i, Level::County) as u64]) > -0.3;
            let income = (10.8 + 0.3 * normal(seed, "category_income", &[i as u64]) + 0.4 * (share[i] - 0.5)).exp();
            CategoryInput {
                cbg_id: h.cbg_ids()[i].clone(),
                plurality_race: race,
                urban,
                median_income: Some(income.round()),
            }
        })
        .collect()
}

/// A complete synthetic input set under `output_dir`: hierarchy, truth and
/// perturbed raw matrices, constraint tables taken from the truth,
/// categories, regions and a config pointing at all of it.
pub fn cmd_gen_fixture(c: &RunConfig) -> Result<Manifest> {
    let mut m = manifest("gen-fixture", c)?;
    let out = &c.output_dir;
    let s = &c.synth;
    let h = generate_world(&s.world)?;
    let hp = out.join("hierarchy.csv");
    io::write_hierarchy(&hp, &h)?;
    m.output(&hp)?;
    let tau = s.taus.first().copied().unwrap_or(0.1);
    let counties = BlockPartition::from_hierarchy(&h, Level::County);
    let sids = h.ids(Level::State);
    let cids = h.ids(Level::County);

    let mut state_pops = csv::Writer::from_writer(Vec::new());
    state_pops.write_record(["year", "state_id", "population", "stayers"])?;
    let mut state_flows = csv::Writer::from_writer(Vec::new());
    state_flows.write_record(["year", "origin_state", "dest_state", "value"])?;
    let mut county_pops = csv::Writer::from_writer(Vec::new());
    county_pops.write_record(["year", "county_id", "prev", "curr"])?;
    let mut first_rows: Option<Vec<f64>> = None;

    for year in c.years.years() {
        // same world every year so one population path fits all of them
        let truth = gen_ground_truth(
            &h,
            &TruthSpec {
                year,
                seed: c.seed,
                ..s.truth
            },
        )?;
        let raw = perturb_structured(&truth, tau, c.seed.wrapping_add((year - c.years.start) as u64), &h)?;
        for (dir, mat) in [("truth", &truth), ("raw_input", &raw)] {
            let p = year_file(&out.join(dir), year);
            io::write_matrix(&p, mat, h.cbg_ids())?;
            m.output(&p)?;
        }
        let cons = ConstraintSet::from_matrix(&truth, &h)?;
        for k in 0..sids.len() {
            state_pops.write_record([year.to_string(), sids[k].clone(), num(cons.state_pops[k]), num(cons.state_stayers[k])])?;
            for j in 0..sids.len() {
                state_flows.write_record([year.to_string(), sids[k].clone(), sids[j].clone(), num(cons.state_flows.get(k, j))])?;
            }
        }
        let prev = truth.row_block_sums(&counties, DiagonalMode::All)?;
        let curr = truth.col_block_sums(&counties, DiagonalMode::All)?;
        for k in 0..cids.len() {
            county_pops.write_record([year.to_string(), cids[k].clone(), num(prev[k]), num(curr[k])])?;
        }
        first_rows.get_or_insert_with(|| truth.row_sums());
    }

    let write_buf = |name: &str, w: csv::Writer<Vec<u8>>, m: &mut Manifest| -> Result<PathBuf> {
        let p = out.join(name);
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::create_dir_all(out)?;
        std::fs::write(&p, bytes)?;
        m.output(&p)?;
        Ok(p)
    };
    write_buf("state_pops.csv", state_pops, &mut m)?;
    write_buf("state_flows.csv", state_flows, &mut m)?;
    write_buf("county_pops.csv", county_pops, &mut m)?;

    // a flat population path at the starting populations
    let rows = first_rows.unwrap_or_default();
    let mut obs = csv::Writer::from_writer(Vec::new());
    obs.write_record(["cbg_id", "source", "end_year", "value", "moe"])?;
    for (i, id) in h.cbg_ids().iter().enumerate() {
        obs.write_record([id.as_str(), "census", "2010", &num(rows[i]), "0"])?;
        for end in 2010..=2019 {
            obs.write_record([id.as_str(), "acs5", &end.to_string(), &num(rows[i]), "0"])?;
        }
    }
    write_buf("cbg_pops.csv", obs, &mut m)?;

    let mut cats = csv::Writer::from_writer(Vec::new());
    cats.write_record(["cbg_id", "plurality_race", "urban", "median_income"])?;
    for k in synthetic_categories(&h, c.seed) {
        let inc = k.median_income.map(num).unwrap_or_default();
        cats.write_record([k.cbg_id.as_str(), k.plurality_race.as_str(), if k.urban { "true" } else { "false" }, &inc])?;
    }
    write_buf("categories.csv", cats, &mut m)?;

    let mut regions = csv::Writer::from_writer(Vec::new());
    regions.write_record(["region", "cbg_id"])?;
    for i in 0..h.len() {
        regions.write_record([format!("state_{}", sids[h.parent(i, Level::State)]), h.cbg_ids()[i].clone()])?;
    }
    write_buf("regions.csv", regions, &mut m)?;

    let config = serde_json::json!({
        "hierarchy": "hierarchy.csv",
        "raw_matrix_dir": "raw_input",
        "truth_dir": "truth",
        "constraints": {
            "state_pops": "state_pops.csv",
            "state_flows": "state_flows.csv",
            "county_pops": "county_pops.csv",
            "cbg_pops": "cbg_pops.csv"
        },
        "categories": "categories.csv",
        "regions": "regions.csv",
        "years": {"start": c.years.start, "end": c.years.end},
        "output_dir": "run",
        "seed": c.seed,
        "synth": s,
        "harmonize": c.harmonize,
    });
    let p = out.join("config.json");
    save_json(&p, &config)?;
    m.output(&p)?;
    finish(m, c)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

