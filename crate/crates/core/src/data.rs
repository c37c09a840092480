//! Dataset ingestion, label binarization, scaling and vertical partitioning.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Train and test splits with binary `{0, 1}` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_train: Matrix,
    pub y_train: Vec<f64>,
    pub x_test: Matrix,
    pub y_test: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x_train: Matrix, y_train: Vec<f64>, x_test: Matrix, y_test: Vec<f64>) -> Result<Self> {
        if x_train.rows() != y_train.len() || x_test.rows() != y_test.len() {
            return Err(Error::Input("row counts do not match label counts".into()));
        }
        if x_train.cols() != x_test.cols() && x_test.rows() > 0 {
            return Err(Error::Input(format!(
                "train has {} features, test has {}",
                x_train.cols(),
                x_test.cols()
            )));
        }
        if x_train.as_slice().iter().chain(x_test.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x_train, y_train, x_test, y_test, feature_names: None })
    }

    pub fn n_features(&self) -> usize {
        self.x_train.cols()
    }
}

/// Maps raw labels onto `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelRule {
    /// Labels already in `{0, 1}`.
    Identity,
    /// `-1 -> 0`, `+1 -> 1`.
    PlusMinusOne,
    /// Keep only the two classes; `negative -> 0`, `positive -> 1`.
    ClassPair { negative: i64, positive: i64 },
    /// `label <= max_negative -> 0`, otherwise `1`.
    Threshold { max_negative: i64 },
}

impl LabelRule {
    /// Digits 0 vs 9.
    pub const MNIST_0_VS_9: LabelRule = LabelRule::ClassPair { negative: 0, positive: 9 };
    /// Classes 0-4 vs 5-9.
    pub const CIFAR_LOW_VS_HIGH: LabelRule = LabelRule::Threshold { max_negative: 4 };

    /// `Ok(None)` means the row is dropped.
    pub fn apply(&self, raw: f64) -> std::result::Result<Option<f64>, String> {
        let as_int = || {
            if raw.fract() == 0.0 && raw.is_finite() {
                Ok(raw as i64)
            } else {
                Err(format!("label {raw} is not an integer class"))
            }
        };
        match *self {
            LabelRule::Identity if raw == 0.0 || raw == 1.0 => Ok(Some(raw)),
            LabelRule::Identity => Err(format!("label {raw} is not in {{0, 1}}")),
            LabelRule::PlusMinusOne if raw == -1.0 => Ok(Some(0.0)),
            LabelRule::PlusMinusOne if raw == 1.0 => Ok(Some(1.0)),
            LabelRule::PlusMinusOne => Err(format!("label {raw} is not in {{-1, +1}}")),
            LabelRule::ClassPair { negative, positive } => {
                let c = as_int()?;
                Ok(if c == negative {
                    Some(0.0)
                } else if c == positive {
                    Some(1.0)
                } else {
                    None
                })
            }
            LabelRule::Threshold { max_negative } => {
                Ok(Some(if as_int()? <= max_negative { 0.0 } else { 1.0 }))
            }
        }
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelRule::Identity => write!(f, "identity"),
            LabelRule::PlusMinusOne => write!(f, "pm1"),
            LabelRule::ClassPair { negative, positive } => write!(f, "pair:{negative},{positive}"),
            LabelRule::Threshold { max_negative } => write!(f, "threshold:{max_negative}"),
        }
    }
}

impl FromStr for LabelRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let bad = || format!("unknown label rule '{s}'");
        match s {
            "identity" => return Ok(LabelRule::Identity),
            "pm1" | "plus_minus_one" => return Ok(LabelRule::PlusMinusOne),
            "mnist_0_vs_9" => return Ok(LabelRule::MNIST_0_VS_9),
            "cifar_0_4_vs_5_9" => return Ok(LabelRule::CIFAR_LOW_VS_HIGH),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("pair:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(LabelRule::ClassPair {
                negative: a.trim().parse().map_err(|_| bad())?,
                positive: b.trim().parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix("threshold:") {
            return Ok(LabelRule::Threshold { max_negative: rest.trim().parse().map_err(|_| bad())? });
        }
        Err(bad())
    }
}

impl Serialize for LabelRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Svmlight,
}

/// How to read a pair of train/test files.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub format: DataFormat,
    pub label_rule: LabelRule,
    /// CSV only: header name or 0-based index of the label column. Defaults to the last column.
    pub label_column: Option<String>,
    /// CSV only: labels live in separate one-per-line files and every column is a feature.
    pub train_labels_path: Option<String>,
    pub test_labels_path: Option<String>,
    /// svmlight only: fixes the dense width instead of inferring it from the largest index.
    pub n_features: Option<usize>,
}

impl LoadOptions {
    pub fn new(format: DataFormat, label_rule: LabelRule) -> Self {
        LoadOptions {
            format,
            label_rule,
            label_column: None,
            train_labels_path: None,
            test_labels_path: None,
            n_features: None,
        }
    }
}

struct RawTable {
    header: Option<Vec<String>>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Reads a comma- or whitespace-delimited numeric table. A first line whose
/// cells are all non-numeric is taken as a header.
fn read_table(path: &Path) -> Result<RawTable> {
    let text = read_to_string(path)?;
    let mut header = None;
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        if header.is_none() && rows.is_empty() && parsed.iter().all(Option::is_none) {
            header = Some(fields.iter().map(|s| s.to_string()).collect());
            width = Some(fields.len());
            continue;
        }
        if let Some(w) = width {
            if fields.len() != w {
                return Err(Error::parse(path, format!("row {line_no}: expected {w} fields, found {}", fields.len())));
            }
        }
        width = Some(fields.len());
        let mut values = Vec::with_capacity(fields.len());
        for (col, (p, raw)) in parsed.iter().zip(&fields).enumerate() {
            match p {
                Some(v) if v.is_finite() => values.push(*v),
                _ => {
                    return Err(Error::parse(
                        path,
                        format!("row {line_no}, column {}: cannot parse '{raw}' as a number", col + 1),
                    ))
                }
            }
        }
        rows.push((line_no, values));
    }
    Ok(RawTable { header, rows })
}

fn read_label_file(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::parse(path, format!("row {}: cannot parse label '{t}'", idx + 1)))?;
        out.push((idx + 1, v));
    }
    Ok(out)
}

fn label_index(label_column: Option<&str>, header: Option<&[String]>, width: usize) -> Result<usize> {
    let Some(col) = label_column else {
        return width.checked_sub(1).ok_or_else(|| Error::Input("table has no columns".into()));
    };
    if let Some(pos) = header.and_then(|h| h.iter().position(|n| n == col)) {
        return Ok(pos);
    }
    match col.parse::<usize>() {
        Ok(i) if i < width => Ok(i),
        _ => Err(Error::Config(format!("label_column '{col}' not found"))),
    }
}

struct Split {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    names: Option<Vec<String>>,
}

fn apply_rule(path: &Path, rule: &LabelRule, line_no: usize, raw: f64) -> Result<Option<f64>> {
    rule.apply(raw).map_err(|m| Error::parse(path, format!("row {line_no}: {m}")))
}

fn load_csv_split(path: &Path, labels_path: Option<&Path>, opts: &LoadOptions) -> Result<Split> {
    let table = read_table(path)?;
    let mut split = Split { x: Vec::new(), y: Vec::new(), names: None };
    if let Some(lp) = labels_path {
        let labels = read_label_file(lp)?;
        if labels.len() != table.rows.len() {
            return Err(Error::parse(
                lp,
                format!("{} labels for {} feature rows in {}", labels.len(), table.rows.len(), path.display()),
            ));
        }
        split.names = table.header;
        for ((_, row), (line_no, raw)) in table.rows.into_iter().zip(labels) {
            if let Some(y) = apply_rule(lp, &opts.label_rule, line_no, raw)? {
                split.x.push(row);
                split.y.push(y);
            }
        }
        return Ok(split);
    }
    let width = table.rows.first().map(|r| r.1.len()).or(table.header.as_ref().map(Vec::len)).unwrap_or(0);
    let li = label_index(opts.label_column.as_deref(), table.header.as_deref(), width)?;
    split.names = table.header.map(|mut h| {
        h.remove(li);
        h
    });
    for (line_no, mut row) in table.rows {
        let raw = row.remove(li);
        if let Some(y) = apply_rule(path, &opts.label_rule, line_no, raw)? {
            split.x.push(row);
            split.y.push(y);
        }
    }
    Ok(split)
}

type SparseRow = (usize, f64, Vec<(usize, f64)>);

fn read_svmlight(path: &Path) -> Result<Vec<SparseRow>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| Error::parse(path, format!("row {line_no}: cannot parse label '{label_tok}'")))?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(path, format!("row {line_no}: malformed entry '{tok}'")))?;
            if i == "qid" {
                continue;
            }
            let i: usize = i
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| Error::parse(path, format!("row {line_no}: bad feature index in '{tok}'")))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, format!("row {line_no}: bad value in '{tok}'")))?;
            entries.push((i - 1, v));
        }
        out.push((line_no, label, entries));
    }
    Ok(out)
}

fn densify(path: &Path, rows: Vec<SparseRow>, width: usize, rule: &LabelRule) -> Result<Split> {
    let mut split = Split { x: Vec::new(), y: Vec::new(), names: None };
    for (line_no, raw, entries) in rows {
        let Some(y) = apply_rule(path, rule, line_no, raw)? else { continue };
        let mut dense = vec![0.0; width];
        for (i, v) in entries {
            if i >= width {
                return Err(Error::parse(path, format!("row {line_no}: feature index {} exceeds width {width}", i + 1)));
            }
            dense[i] = v;
        }
        split.x.push(dense);
        split.y.push(y);
    }
    Ok(split)
}

fn to_matrix(rows: &[Vec<f64>], width: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, width));
    }
    Matrix::from_rows(rows)
}

/// Loads and binarizes a train/test pair.
pub fn load_dataset(train_path: &Path, test_path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let (train, test) = match opts.format {
        DataFormat::Csv => (
            load_csv_split(train_path, opts.train_labels_path.as_deref().map(Path::new), opts)?,
            load_csv_split(test_path, opts.test_labels_path.as_deref().map(Path::new), opts)?,
        ),
        DataFormat::Svmlight => {
            let tr = read_svmlight(train_path)?;
            let te = read_svmlight(test_path)?;
            let inferred = tr
                .iter()
                .chain(&te)
                .flat_map(|r| r.2.iter().map(|e| e.0 + 1))
                .max()
                .unwrap_or(0);
            let width = opts.n_features.unwrap_or(inferred);
            (
                densify(train_path, tr, width, &opts.label_rule)?,
                densify(test_path, te, width, &opts.label_rule)?,
            )
        }
    };
    let width = train.x.first().map_or(0, Vec::len);
    if let Some(r) = test.x.first() {
        if r.len() != width {
            return Err(Error::parse(test_path, format!("test rows have {} features, train rows have {width}", r.len())));
        }
    }
    let mut ds = Dataset::new(to_matrix(&train.x, width)?, train.y, to_matrix(&test.x, width)?, test.y)?;
    ds.feature_names = train.names;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Minmax01,
    Zscore,
    #[default]
    None,
}

/// Scales both splits with statistics computed on the train split only.
/// Constant train columns map to 0; test values are never clipped.
pub fn scale_features(ds: &Dataset, method: Scaling) -> Dataset {
    let mut out = ds.clone();
    if method == Scaling::None {
        return out;
    }
    let n = ds.x_train.rows() as f64;
    for j in 0..ds.n_features() {
        let col = ds.x_train.column(j);
        let (shift, scale) = match method {
            Scaling::Minmax01 => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            }
            Scaling::Zscore => {
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
            Scaling::None => unreachable!(),
        };
        let map = |v: f64| if scale > 0.0 && scale.is_finite() { (v - shift) / scale } else { 0.0 };
        for m in [&mut out.x_train, &mut out.x_test] {
            for i in 0..m.rows() {
                let v = m.get(i, j);
                m.set(i, j, map(v));
            }
        }
    }
    out
}

/// Fraction of the feature set shared by every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    overlap_ratio: f64,
}

impl OverlapSpec {
    pub fn new(overlap_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap_ratio) {
            return Err(Error::Config(format!("overlap_ratio {overlap_ratio} must lie in [0, 1]")));
        }
        Ok(OverlapSpec { overlap_ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.overlap_ratio
    }
}

/// Per-node feature assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalPartition {
    /// Sorted global feature indices per node.
    pub assignments: Vec<Vec<usize>>,
    /// Sorted indices held by every node.
    pub shared: Vec<usize>,
    pub n_features: usize,
    pub overlap: OverlapSpec,
    pub seed: u64,
}

impl VerticalPartition {
    pub fn nodes(&self) -> usize {
        self.assignments.len()
    }
}

/// Samples a shared subset of `round(ratio * n)` features, shuffles the rest
/// and deals them into `m` parts whose sizes differ by at most one.
pub fn make_partition(n: usize, m: usize, overlap: OverlapSpec, seed: u64) -> Result<VerticalPartition> {
    if m == 0 {
        return Err(Error::Config("node count must be at least 1".into()));
    }
    if n < m {
        return Err(Error::Config(format!("{n} features cannot be split across {m} nodes")));
    }
    let mut rng = rng::stream(seed, Stream::Partition, 0);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let n_shared = ((overlap.ratio() * n as f64).round() as usize).min(n);
    let (shared, rest) = indices.split_at(n_shared);
    let base = rest.len() / m;
    let extra = rest.len() % m;
    let mut assignments = Vec::with_capacity(m);
    let mut offset = 0;
    for node in 0..m {
        let take = base + usize::from(node < extra);
        let mut a: Vec<usize> = shared.iter().chain(&rest[offset..offset + take]).copied().collect();
        a.sort_unstable();
        assignments.push(a);
        offset += take;
    }
    let mut shared = shared.to_vec();
    shared.sort_unstable();
    Ok(VerticalPartition { assignments, shared, n_features: n, overlap, seed })
}

/// One node's column slice of both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub x_train: Matrix,
    pub x_test: Matrix,
}

pub fn project(ds: &Dataset, part: &VerticalPartition, node: usize) -> Result<NodeData> {
    let cols = part
        .assignments
        .get(node)
        .ok_or_else(|| Error::Input(format!("node {node} does not exist (partition has {} nodes)", part.nodes())))?;
    if part.n_features != ds.n_features() {
        return Err(Error::Input(format!(
            "partition covers {} features, dataset has {}",
            part.n_features,
            ds.n_features()
        )));
    }
    Ok(NodeData { x_train: ds.x_train.select_columns(cols), x_test: ds.x_test.select_columns(cols) })
}
