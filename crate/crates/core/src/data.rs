//! Tabular datasets: loading (CSV and LibSVM), validation and holdout splits.
//!
//! Features are stored densely in row-major order. Every other module indexes
//! samples through [`Dataset::row`] and the row indices handed out here.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A contiguous block of samples sharing one query id (ranking data).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub id: u64,
    pub start: usize,
    pub end: usize,
}

impl QueryGroup {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Dense feature matrix with one target per row and optional query groups.
///
/// Invariants, checked on construction: every feature value is finite,
/// `targets.len() == n_samples`, and query groups (when present) partition
/// `0..n_samples` into contiguous, ordered blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_samples: usize,
    n_features: usize,
    targets: Vec<f64>,
    query_groups: Option<Vec<QueryGroup>>,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(features: Vec<f64>, n_features: usize, targets: Vec<f64>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidData("dataset has no feature columns".into()));
        }
        if features.len() % n_features != 0 {
            return Err(Error::InvalidData(format!(
                "feature buffer of length {} is not a multiple of {n_features} columns",
                features.len()
            )));
        }
        let n_samples = features.len() / n_features;
        if n_samples == 0 {
            return Err(Error::InvalidData("no samples".into()));
        }
        Error::check_len(n_samples, targets.len())?;
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(
                pos / n_features + 1,
                Some(&default_feature_name(pos % n_features)),
                "non-finite feature value",
            ));
        }
        if let Some(pos) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(pos + 1, Some("target"), "non-finite target"));
        }
        Ok(Dataset {
            features,
            n_samples,
            n_features,
            targets,
            query_groups: None,
            feature_names: (0..n_features).map(default_feature_name).collect(),
            target_name: "target".to_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_features) {
            return Err(Error::parse(
                bad + 1,
                None,
                format!("expected {n_features} features, found {}", rows[bad].len()),
            ));
        }
        if rows.is_empty() {
            return Err(Error::InvalidData("no samples".into()));
        }
        Dataset::new(rows.concat(), n_features, targets)
    }

    /// Attaches query groups. They must cover every row exactly once, in order.
    pub fn with_query_groups(mut self, groups: Vec<QueryGroup>) -> Result<Self> {
        let mut next = 0;
        for g in &groups {
            if g.start != next || g.end <= g.start {
                return Err(Error::InvalidData(format!(
                    "query group {} does not continue the partition at row {next}",
                    g.id
                )));
            }
            next = g.end;
        }
        if next != self.n_samples {
            return Err(Error::InvalidData(format!(
                "query groups cover {next} rows, dataset has {}",
                self.n_samples
            )));
        }
        self.query_groups = Some(groups);
        Ok(self)
    }

    pub fn with_names(mut self, feature_names: Vec<String>, target_name: impl Into<String>) -> Result<Self> {
        Error::check_len(self.n_features, feature_names.len())?;
        self.feature_names = feature_names;
        self.target_name = target_name.into();
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.n_features + feature]
    }

    /// Row-major feature buffer.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn query_groups(&self) -> Option<&[QueryGroup]> {
        self.query_groups.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Replaces the target vector, keeping features and groups.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Error::check_len(self.n_samples, targets.len())?;
        let mut out = self.clone();
        out.targets = targets;
        Ok(out)
    }

    /// Maps binary labels from `{0, 1}` (or already `{-1, +1}`) to `{-1, +1}`.
    pub fn to_signed_labels(&self) -> Result<Self> {
        let mut targets = Vec::with_capacity(self.n_samples);
        for (i, &y) in self.targets.iter().enumerate() {
            targets.push(match y {
                1.0 => 1.0,
                0.0 | -1.0 => -1.0,
                _ => {
                    return Err(Error::parse(
                        i + 1,
                        Some(&self.target_name),
                        format!("binary label must be 0/1 or -1/+1, found {y}"),
                    ))
                }
            });
        }
        self.with_targets(targets)
    }

    /// Copies the given rows into a new dataset.
    ///
    /// For grouped data every group touched by `rows` must be included whole,
    /// with its rows kept adjacent.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n_samples {
                return Err(Error::InvalidData(format!("row index {r} out of range")));
            }
            features.extend_from_slice(self.row(r));
            targets.push(self.targets[r]);
        }
        let mut out = Dataset::new(features, self.n_features, targets)?
            .with_names(self.feature_names.clone(), self.target_name.clone())?;
        if let Some(groups) = &self.query_groups {
            let owner = group_owner(groups, self.n_samples);
            // (original group, start, end) runs over the subset
            let mut runs: Vec<(usize, usize, usize)> = Vec::new();
            for (pos, &r) in rows.iter().enumerate() {
                match runs.last_mut() {
                    Some(run) if run.0 == owner[r] => run.2 = pos + 1,
                    _ => runs.push((owner[r], pos, pos + 1)),
                }
            }
            let mut seen = vec![false; groups.len()];
            for &(g, start, end) in &runs {
                if seen[g] || end - start != groups[g].len() {
                    return Err(Error::InvalidData(format!(
                        "row subset splits query group {}",
                        groups[g].id
                    )));
                }
                seen[g] = true;
            }
            let new_groups = runs
                .into_iter()
                .map(|(g, start, end)| QueryGroup { id: groups[g].id, start, end })
                .collect();
            out = out.with_query_groups(new_groups)?;
        }
        Ok(out)
    }
}

fn group_owner(groups: &[QueryGroup], n: usize) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (gi, g) in groups.iter().enumerate() {
        owner[g.range()].fill(gi);
    }
    owner
}

fn default_feature_name(j: usize) -> String {
    format!("f{j}")
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

/// Loads a labelled CSV file.
///
/// `target_column` names a header column; without a header it is a 0-based
/// column index.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, has_header: bool) -> Result<Dataset> {
    read_csv(open(path.as_ref())?, Some(target_column), has_header)
}

/// Loads a CSV file where every column is a feature. Targets are set to 0.
pub fn load_csv_unlabeled(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset> {
    read_csv(open(path.as_ref())?, None, has_header)
}

pub fn read_csv<R: Read>(reader: R, target_column: Option<&str>, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut records = rdr.records().peekable();
    let n_columns = match (&header, records.peek()) {
        (Some(h), _) => h.len(),
        (None, Some(Ok(first))) => first.len(),
        (None, Some(Err(_))) => 0,
        (None, None) => return Err(Error::InvalidData("no samples".into())),
    };
    let names: Vec<String> = header.unwrap_or_else(|| (0..n_columns).map(default_feature_name).collect());

    let target_idx = match target_column {
        None => None,
        Some(t) => Some(
            names
                .iter()
                .position(|n| n == t)
                .or_else(|| if has_header { None } else { t.parse::<usize>().ok() })
                .filter(|&i| i < n_columns)
                .ok_or_else(|| Error::InvalidData(format!("target column '{t}' not found")))?,
        ),
    };

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in records.enumerate() {
        let record = record?;
        let row = row + 1;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(row, Some(&names[j]), format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(row, Some(&names[j]), format!("non-finite value '{cell}'")));
            }
            if Some(j) == target_idx {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
        if target_idx.is_none() {
            targets.push(0.0);
        }
    }
    if targets.is_empty() {
        return Err(Error::InvalidData("no samples".into()));
    }

    let n_features = n_columns - usize::from(target_idx.is_some());
    let (feature_names, target_name): (Vec<String>, String) = match target_idx {
        Some(t) => (
            names.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, n)| n.clone()).collect(),
            names[t].clone(),
        ),
        None => (names, "target".to_owned()),
    };
    Dataset::new(features, n_features, targets)?.with_names(feature_names, target_name)
}

/// Writes features and target as CSV with a header; reals use shortest
/// round-trip formatting so a reload is bit-identical.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(&dataset.target_name);
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(dataset.n_features + 1);
    for i in 0..dataset.n_samples {
        record.clear();
        record.extend(dataset.row(i).iter().map(f64::to_string));
        record.push(dataset.targets[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a LibSVM / SVMlight file: `<label> [qid:<q>] <idx>:<val> ...` with
/// 1-based, strictly ascending indices. Absent features are zero.
pub fn load_libsvm(path: impl AsRef<Path>, ranking: bool) -> Result<Dataset> {
    read_libsvm(BufReader::new(open(path.as_ref())?), ranking)
}

pub fn read_libsvm<R: BufRead>(reader: R, ranking: bool) -> Result<Dataset> {
    struct Line {
        label: f64,
        qid: Option<u64>,
        entries: Vec<(usize, f64)>,
    }

    let mut lines = Vec::new();
    let mut n_features = 0;
    let mut warned_qid = false;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(Error::Write)?;
        let data = line.split('#').next().unwrap_or("").trim();
        if data.is_empty() {
            continue;
        }
        let mut tokens = data.split_ascii_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(lineno, None, format!("bad label '{label_tok}'")))?;

        let mut qid = None;
        let mut entries = Vec::new();
        let mut last_idx = 0;
        for tok in tokens {
            let (key, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, None, format!("malformed pair '{tok}'")))?;
            if key == "qid" {
                let q = val
                    .parse::<u64>()
                    .map_err(|_| Error::parse(lineno, None, format!("bad qid '{val}'")))?;
                if ranking {
                    qid = Some(q);
                } else if !warned_qid {
                    log::warn!("ignoring qid fields: ranking mode is off");
                    warned_qid = true;
                }
                continue;
            }
            let idx: usize = key
                .parse()
                .map_err(|_| Error::parse(lineno, None, format!("malformed pair '{tok}'")))?;
            if idx == 0 {
                return Err(Error::parse(lineno, None, "feature indices are 1-based"));
            }
            if idx <= last_idx {
                return Err(Error::parse(lineno, None, "indices not ascending"));
            }
            last_idx = idx;
            let v: f64 = val
                .parse()
                .map_err(|_| Error::parse(lineno, None, format!("malformed pair '{tok}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, None, format!("non-finite value in '{tok}'")));
            }
            entries.push((idx - 1, v));
        }
        if ranking && qid.is_none() {
            return Err(Error::parse(lineno, None, "missing qid in ranking mode"));
        }
        n_features = n_features.max(last_idx);
        lines.push(Line { label, qid, entries });
    }
    if lines.is_empty() {
        return Err(Error::InvalidData("no samples".into()));
    }
    let n_features = n_features.max(1);

    let mut features = vec![0.0; lines.len() * n_features];
    let mut targets = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        for &(j, v) in &line.entries {
            features[i * n_features + j] = v;
        }
        targets.push(line.label);
    }
    let mut ds = Dataset::new(features, n_features, targets)?;
    if ranking {
        let mut groups: Vec<QueryGroup> = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let q = line.qid.expect("checked above");
            match groups.last_mut() {
                Some(g) if g.id == q => g.end = i + 1,
                _ => {
                    if groups.iter().any(|g| g.id == q) {
                        return Err(Error::InvalidData(format!("rows of qid {q} are not contiguous")));
                    }
                    groups.push(QueryGroup { id: q, start: i, end: i + 1 });
                }
            }
        }
        ds = ds.with_query_groups(groups)?;
    }
    Ok(ds)
}

/// Disjoint train / holdout row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Random train/holdout split with a seeded RNG.
///
/// The holdout gets `round(fraction * n)` samples. Ranking data is split by
/// whole query groups, adding shuffled groups until the holdout reaches that
/// size.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<HoldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let n = dataset.n_samples();
    let wanted = fraction * n as f64;
    if wanted < 1.0 {
        return Err(Error::InvalidData(format!(
            "holdout fraction {fraction} of {n} samples leaves the holdout empty"
        )));
    }
    let target = wanted.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut in_holdout = vec![false; n];
    match dataset.query_groups() {
        None => {
            if target >= n {
                return Err(Error::InvalidData("holdout split leaves the train side empty".into()));
            }
            for i in index::sample(&mut rng, n, target) {
                in_holdout[i] = true;
            }
        }
        Some(groups) => {
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.shuffle(&mut rng);
            let mut taken = 0;
            for gi in order {
                if taken >= target {
                    break;
                }
                in_holdout[groups[gi].range()].fill(true);
                taken += groups[gi].len();
            }
            if taken >= n {
                return Err(Error::InvalidData("holdout split leaves the train side empty".into()));
            }
        }
    }
    let (holdout_indices, train_indices): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_holdout[i]);
    Ok(HoldoutSplit { train_indices, holdout_indices })
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_all_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
