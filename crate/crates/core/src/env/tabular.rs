//! CSV ingestion of per-user rating data.
//!
//! Schemas (header row required):
//! - `lenk`: `user_id,feat_1,...,feat_13,rating`
//! - `movielens`, `jester`: `user_id,item_id,rating`

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EnvKind, TaskInstance};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

const LENK_FEATURES: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularOptions {
    pub n_tr: usize,
    pub n_te: usize,
    /// Seed of the per-task shuffles.
    pub seed: u64,
    /// Number of most-rated items kept (recommendation kinds).
    pub top_items: usize,
    /// Minimum ratings per user among the kept items (recommendation kinds).
    pub min_ratings: usize,
}

pub fn load_tabular(path: &Path, kind: EnvKind, opts: &TabularOptions) -> Result<Vec<TaskInstance>> {
    let mut s = String::new();
    std::fs::File::open(path)?.read_to_string(&mut s)?;
    load_tabular_str(&s, kind, opts)
}

pub fn load_tabular_str(csv_text: &str, kind: EnvKind, opts: &TabularOptions) -> Result<Vec<TaskInstance>> {
    let rows = match kind {
        EnvKind::Lenk => parse_lenk(csv_text)?,
        EnvKind::Movielens | EnvKind::Jester => parse_ratings(csv_text, opts)?,
        EnvKind::Synthetic => {
            return Err(Error::InvalidArgument("synthetic environments are generated, not loaded".into()))
        }
    };
    build_tasks(rows, opts)
}

/// Rows grouped by user id in ascending order, file order within a user.
type Grouped = BTreeMap<u64, Vec<(Vec<f64>, f64)>>;

fn malformed(line: u64, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[String]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(malformed(1, format!("expected header `{}`, got `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| malformed(line, format!("missing field `{name}`")))?;
    raw.parse::<T>()
        .map_err(|_| malformed(line, format!("cannot parse `{raw}` as {name}")))
}

fn finite(v: f64, line: u64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(line, format!("non-finite {name}")))
    }
}

fn records(rdr: &mut csv::Reader<&[u8]>, width: usize) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(malformed(line, format!("expected {width} fields, got {}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_lenk(text: &str) -> Result<Grouped> {
    let mut header = vec!["user_id".to_string()];
    header.extend((1..=LENK_FEATURES).map(|i| format!("feat_{i}")));
    header.push("rating".into());
    let mut rdr = reader(text);
    check_header(&mut rdr, &header)?;
    let mut grouped = Grouped::new();
    for (line, rec) in records(&mut rdr, header.len())? {
        let user: u64 = field(&rec, 0, line, "user_id")?;
        let mut x = Vec::with_capacity(LENK_FEATURES);
        for j in 1..=LENK_FEATURES {
            x.push(finite(field(&rec, j, line, "feature")?, line, "feature")?);
        }
        let y = finite(field(&rec, LENK_FEATURES + 1, line, "rating")?, line, "rating")?;
        grouped.entry(user).or_default().push((x, y));
    }
    Ok(grouped)
}

fn parse_ratings(text: &str, opts: &TabularOptions) -> Result<Grouped> {
    let header: Vec<String> = ["user_id", "item_id", "rating"].iter().map(|s| s.to_string()).collect();
    let mut rdr = reader(text);
    check_header(&mut rdr, &header)?;
    let mut triples = Vec::new();
    for (line, rec) in records(&mut rdr, 3)? {
        let user: u64 = field(&rec, 0, line, "user_id")?;
        let item: u64 = field(&rec, 1, line, "item_id")?;
        let rating = finite(field(&rec, 2, line, "rating")?, line, "rating")?;
        triples.push((user, item, rating));
    }

    let items = top_items(triples.iter().map(|t| t.1), opts.top_items);
    let slot: HashMap<u64, usize> = items.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let d = items.len();

    let mut grouped = Grouped::new();
    for (user, item, rating) in triples {
        if let Some(&j) = slot.get(&item) {
            let mut x = vec![0.0; d];
            x[j] = 1.0;
            grouped.entry(user).or_default().push((x, rating));
        }
    }
    let before = grouped.len();
    grouped.retain(|_, rows| rows.len() >= opts.min_ratings);
    if grouped.len() < before {
        log::info!(
            "dropped {} users with fewer than {} ratings on the kept items",
            before - grouped.len(),
            opts.min_ratings
        );
    }
    Ok(grouped)
}

/// The `k` most frequent ids (ties broken by smaller id), in ascending id order.
pub(crate) fn top_items(ids: impl Iterator<Item = u64>, k: usize) -> Vec<u64> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    let mut ranked: Vec<(u64, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<u64> = ranked.into_iter().take(k).map(|(id, _)| id).collect();
    kept.sort_unstable();
    kept
}

fn build_tasks(grouped: Grouped, opts: &TabularOptions) -> Result<Vec<TaskInstance>> {
    let need = opts.n_tr + opts.n_te;
    if opts.n_tr == 0 || opts.n_te == 0 {
        return Err(Error::InvalidArgument("n_tr and n_te must be positive".into()));
    }
    let mut tasks = Vec::new();
    let mut dropped = 0usize;
    for (pos, (user, rows)) in grouped.into_iter().enumerate() {
        if rows.len() < need {
            dropped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(pos as u64);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(&mut rng);
        let pick = |ids: &[usize]| -> Result<LabeledDataset> {
            let xs: Vec<Vec<f64>> = ids.iter().map(|&i| rows[i].0.clone()).collect();
            let ys: Vec<f64> = ids.iter().map(|&i| rows[i].1).collect();
            LabeledDataset::from_rows(&xs, &ys)
        };
        tasks.push(TaskInstance {
            id: user,
            train: pick(&idx[..opts.n_tr])?,
            test: pick(&idx[opts.n_tr..need])?,
            cluster: None,
            target: None,
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} users with fewer than {need} data points");
    }
    Ok(tasks)
}

/// CSV text in the `lenk` schema with the same shape as the survey data:
/// every user rates the same 20 profiles with 13 binary attributes on a 0–10
/// scale. Users come from three preference groups.
pub fn generate_lenk_like(users: usize, seed: u64) -> String {
    const PROFILES: usize = 20;
    const GROUPS: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = DMatrix::from_fn(PROFILES, LENK_FEATURES, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    let centers: Vec<DVector<f64>> = (0..GROUPS)
        .map(|g| {
            DVector::from_fn(LENK_FEATURES, |j, _| {
                // each group cares mostly about its own block of attributes
                let own = j % GROUPS == g;
                let z: f64 = StandardNormal.sample(&mut rng);
                if own {
                    1.2 * z
                } else {
                    0.15 * z
                }
            })
        })
        .collect();

    let mut out = String::from("user_id");
    for j in 1..=LENK_FEATURES {
        write!(out, ",feat_{j}").unwrap();
    }
    out.push_str(",rating\n");
    for u in 0..users {
        let g = rng.gen_range(0..GROUPS);
        let w = DVector::from_fn(LENK_FEATURES, |j, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[g][j] + 0.2 * z
        });
        for p in 0..PROFILES {
            let x = profiles.row(p);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let score = 5.0 + 0.6 * x.transpose().dot(&w) + 0.5 * noise;
            let rating = score.round().clamp(0.0, 10.0) + 0.0;
            write!(out, "{}", u + 1).unwrap();
            for v in x.iter() {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{rating}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n_tr: usize, n_te: usize) -> TabularOptions {
        TabularOptions {
            n_tr,
            n_te,
            seed: 1,
            top_items: 20,
            min_ratings: 5,
        }
    }

    fn lenk_header() -> String {
        let mut h = "user_id".to_string();
        for j in 1..=13 {
            h.push_str(&format!(",feat_{j}"));
        }
        h + ",rating\n"
    }

    #[test]
    fn three_rows_one_user() {
        let mut text = lenk_header();
        for r in 0..3 {
            text.push_str(&format!("7{},{}\n", ",1".repeat(13), r));
        }
        let tasks = load_tabular_str(&text, EnvKind::Lenk, &opts(2, 1)).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].id, 7);
        assert_eq!(tasks[0].train.n() + tasks[0].test.n(), 3);
        assert_eq!(tasks[0].d(), 13);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = lenk_header();
        text.push_str(&format!("1{},4\n", ",0".repeat(13)));
        text.push_str(&format!("1{},x\n", ",0".repeat(13)));
        match load_tabular_str(&text, EnvKind::Lenk, &opts(1, 1)) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "user_id,item_id,rating\n1,2\n";
        assert!(matches!(
            load_tabular_str(short, EnvKind::Movielens, &opts(1, 1)),
            Err(Error::Malformed { line: 2, .. })
        ));
        let bad_header = "user,item_id,rating\n1,2,3\n";
        assert!(matches!(
            load_tabular_str(bad_header, EnvKind::Jester, &opts(1, 1)),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    fn rating_csv(n_items: u64, users: u64, seed: u64) -> (String, Vec<(u64, u64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("user_id,item_id,rating\n");
        let mut pairs = Vec::new();
        for u in 0..users {
            for item in 0..n_items {
                // item popularity decreases with id, with some randomness
                if rng.gen_bool(0.95 - 0.03 * item as f64) {
                    text.push_str(&format!("{u},{item},{}\n", rng.gen_range(1..=5)));
                    pairs.push((u, item));
                }
            }
        }
        (text, pairs)
    }

    #[test]
    fn keeps_twenty_most_rated_items() {
        let (text, pairs) = rating_csv(25, 60, 3);
        // naive filter
        let mut counts = vec![0usize; 25];
        for &(_, i) in &pairs {
            counts[i as usize] += 1;
        }
        let mut order: Vec<usize> = (0..25).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut expected: Vec<u64> = order[..20].iter().map(|&i| i as u64).collect();
        expected.sort_unstable();
        assert_eq!(top_items(pairs.iter().map(|p| p.1), 20), expected);

        let tasks = load_tabular_str(&text, EnvKind::Movielens, &opts(3, 2)).unwrap();
        assert!(!tasks.is_empty());
        for t in &tasks {
            assert_eq!(t.d(), 20);
            for ds in [&t.train, &t.test] {
                for r in ds.x().row_iter() {
                    assert_eq!(r.sum(), 1.0);
                    assert_eq!(r.iter().filter(|&&v| v == 1.0).count(), 1);
                }
            }
            let rated: f64 = t.train.x().sum() + t.test.x().sum();
            assert_eq!(rated as usize, t.train.n() + t.test.n());
        }
    }

    #[test]
    fn drops_users_below_threshold() {
        let mut text = String::from("user_id,item_id,rating\n");
        for item in 0..6 {
            text.push_str(&format!("1,{item},3\n"));
        }
        for item in 0..4 {
            text.push_str(&format!("2,{item},3\n"));
        }
        let tasks = load_tabular_str(&text, EnvKind::Jester, &opts(3, 2)).unwrap();
        assert_eq!(tasks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn reload_is_identical() {
        let text = generate_lenk_like(12, 5);
        let a = load_tabular_str(&text, EnvKind::Lenk, &opts(16, 4)).unwrap();
        let b = load_tabular_str(&text, EnvKind::Lenk, &opts(16, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a.iter().all(|t| t.train.n() == 16 && t.test.n() == 4));
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn lenk_like_ratings_in_range() {
        let text = generate_lenk_like(5, 1);
        let tasks = load_tabular_str(&text, EnvKind::Lenk, &opts(16, 4)).unwrap();
        for t in &tasks {
            assert!(t.train.y().iter().all(|&y| (0.0..=10.0).contains(&y) && y.fract() == 0.0));
        }
    }
}
