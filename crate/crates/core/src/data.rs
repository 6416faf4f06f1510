//! Curves, labeled datasets, CSV I/O, the piecewise-constant generator and
//! stratified fold splitting.
//!
//! Class labels are 1-based everywhere they are visible (files, `labels`
//! vectors, predictions). Internally a label `g` indexes class slot `g - 1`.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FmdaError, Result};

/// Shared sampling instants `t_1 < ... < t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(FmdaError::invalid(format!(
                "time grid needs at least 2 points, got {}",
                times.len()
            )));
        }
        if let Some(j) = times.iter().position(|t| !t.is_finite()) {
            return Err(FmdaError::invalid(format!("time {j} is not finite")));
        }
        if let Some(j) = times.windows(2).position(|w| w[0] >= w[1]) {
            return Err(FmdaError::invalid(format!(
                "times must be strictly increasing: t[{}] = {} >= t[{}] = {}",
                j,
                times[j],
                j + 1,
                times[j + 1]
            )));
        }
        Ok(TimeGrid { times })
    }

    /// `m` equispaced points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(FmdaError::invalid("time grid needs at least 2 points"));
        }
        let step = (end - start) / (m - 1) as f64;
        let mut times: Vec<f64> = (0..m).map(|j| start + step * j as f64).collect();
        times[m - 1] = end;
        TimeGrid::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// SHA-256 over the little-endian bit patterns of the times, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.times {
            hasher.update(t.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = FmdaError;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        TimeGrid::new(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.times
    }
}

/// One observed function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curve {
    values: Vec<f64>,
}

impl Curve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(FmdaError::invalid(format!("curve value {j} is not finite")));
        }
        Ok(Curve { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn lex_cmp(&self, other: &Curve) -> Ordering {
        for (a, b) in self.values.iter().zip(&other.values) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.values.len().cmp(&other.values.len())
    }
}

/// A corpus of curves on a shared grid, optionally labeled.
///
/// Unlabeled sets (prediction inputs) carry an empty `labels` vector and
/// `n_classes == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCurveSet {
    grid: TimeGrid,
    curves: Vec<Curve>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledCurveSet {
    /// Labeled set; `n_classes` is taken as the largest label.
    pub fn new(grid: TimeGrid, curves: Vec<Curve>, labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().copied().max().unwrap_or(0);
        Self::with_classes(grid, curves, labels, n_classes)
    }

    pub fn with_classes(
        grid: TimeGrid,
        curves: Vec<Curve>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if curves.len() != labels.len() {
            return Err(FmdaError::shape(format!(
                "{} curves but {} labels",
                curves.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y == 0 || y > n_classes) {
            return Err(FmdaError::invalid(format!(
                "label {} of curve {} outside 1..={}",
                labels[i], i, n_classes
            )));
        }
        check_lengths(&grid, &curves)?;
        Ok(LabeledCurveSet {
            grid,
            curves,
            labels,
            n_classes,
        })
    }

    pub fn unlabeled(grid: TimeGrid, curves: Vec<Curve>) -> Result<Self> {
        check_lengths(&grid, &curves)?;
        Ok(LabeledCurveSet {
            grid,
            curves,
            labels: Vec::new(),
            n_classes: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.n_classes > 0 && self.labels.len() == self.curves.len()
    }

    /// Curves of class `label` (1-based), in set order.
    pub fn class_curves(&self, label: usize) -> Vec<Curve> {
        self.curves
            .iter()
            .zip(&self.labels)
            .filter(|(_, &y)| y == label)
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }

    /// Subset in the given index order, keeping the class count.
    pub fn subset(&self, indices: &[usize]) -> LabeledCurveSet {
        let curves = indices.iter().map(|&i| self.curves[i].clone()).collect();
        let labels = if self.labels.is_empty() {
            Vec::new()
        } else {
            indices.iter().map(|&i| self.labels[i]).collect()
        };
        LabeledCurveSet {
            grid: self.grid.clone(),
            curves,
            labels,
            n_classes: self.n_classes,
        }
    }
}

fn check_lengths(grid: &TimeGrid, curves: &[Curve]) -> Result<()> {
    if let Some(i) = curves.iter().position(|c| c.len() != grid.len()) {
        return Err(FmdaError::shape(format!(
            "curve {} has {} values, grid has {}",
            i,
            curves[i].len(),
            grid.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV

/// Reads a dataset. The header row is an optional non-numeric label-column
/// name followed by the times; labeled files must have the name cell and
/// one leading label per row.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<LabeledCurveSet> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    parse_rows(path, rows, Some(has_labels))
}

/// Like [`load_csv`] but infers the label column from the header.
pub fn load_csv_detect(path: impl AsRef<Path>) -> Result<LabeledCurveSet> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    parse_rows(path, rows, None)
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(|e| FmdaError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| FmdaError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push(rec);
    }
    Ok(rows)
}

fn parse_rows(
    path: &Path,
    rows: Vec<csv::StringRecord>,
    has_labels: Option<bool>,
) -> Result<LabeledCurveSet> {
    let perr = |msg: String| FmdaError::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let header = rows
        .first()
        .ok_or_else(|| perr("missing header row".into()))?;
    let first_numeric = header.get(0).is_some_and(|c| c.parse::<f64>().is_ok());
    let labeled = match has_labels {
        Some(true) if first_numeric => {
            return Err(perr(
                "expected a label column: header must start with a column name".into(),
            ))
        }
        Some(false) if !first_numeric => {
            return Err(perr("unexpected label column in header".into()))
        }
        Some(flag) => flag,
        None => !first_numeric,
    };
    let offset = usize::from(labeled);
    let times = header
        .iter()
        .enumerate()
        .skip(offset)
        .map(|(c, cell)| {
            cell.parse::<f64>()
                .map_err(|_| perr(format!("header column {}: '{}' is not a time", c + 1, cell)))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::new(times)?;
    let m = grid.len();

    let mut curves = Vec::with_capacity(rows.len() - 1);
    let mut labels = Vec::new();
    for (r, rec) in rows.iter().enumerate().skip(1) {
        let line = r + 1;
        if rec.len() != m + offset {
            return Err(perr(format!(
                "row {} has {} cells, expected {}",
                line,
                rec.len(),
                m + offset
            )));
        }
        if labeled {
            let cell = &rec[0];
            let y = cell
                .parse::<usize>()
                .ok()
                .filter(|&y| y >= 1)
                .ok_or_else(|| perr(format!("row {line}, column 1: bad label '{cell}'")))?;
            labels.push(y);
        }
        let values = rec
            .iter()
            .enumerate()
            .skip(offset)
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        perr(format!(
                            "row {}, column {}: '{}' is not a number",
                            line,
                            c + 1,
                            cell
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve { values });
    }
    if labeled {
        LabeledCurveSet::new(grid, curves, labels)
    } else {
        LabeledCurveSet::unlabeled(grid, curves)
    }
}

/// Writes a dataset in the [`load_csv`] format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save_csv(set: &LabeledCurveSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FmdaError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(set, &mut out).map_err(|e| FmdaError::io(path, e))?;
    out.flush().map_err(|e| FmdaError::io(path, e))
}

fn write_csv(set: &LabeledCurveSet, out: &mut impl Write) -> std::io::Result<()> {
    let labeled = set.is_labeled() || (set.n_classes > 0 && set.is_empty());
    let mut line = String::new();
    if labeled {
        line.push_str("label");
    }
    for (j, t) in set.grid.times().iter().enumerate() {
        if labeled || j > 0 {
            line.push(',');
        }
        line.push_str(&t.to_string());
    }
    writeln!(out, "{line}")?;
    for (i, curve) in set.curves.iter().enumerate() {
        line.clear();
        if labeled {
            line.push_str(&set.labels[i].to_string());
        }
        for (j, v) in curve.values.iter().enumerate() {
            if labeled || j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generator

/// One homogeneous sub-class of piecewise-constant curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassSpec {
    pub weight: f64,
    /// Regime boundaries as fractions of `[t_1, t_m]`, strictly increasing in (0, 1).
    pub boundaries: Vec<f64>,
    /// One constant level per regime (`boundaries.len() + 1` entries).
    pub levels: Vec<f64>,
    /// Per-regime noise standard deviation.
    pub noise_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub subclasses: Vec<SubclassSpec>,
}

/// Configuration of the piecewise-constant curve generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub curves_per_class: usize,
    pub m: usize,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "one")]
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    /// Two classes: a dispersed class of three sub-classes and a homogeneous
    /// class, each curve made of three constant regimes.
    fn default() -> Self {
        let sub = |levels: [f64; 3], weight: f64| SubclassSpec {
            weight,
            boundaries: vec![1.0 / 3.0, 2.0 / 3.0],
            levels: levels.to_vec(),
            noise_std: vec![0.5; 3],
        };
        SyntheticSpec {
            classes: vec![
                ClassSpec {
                    subclasses: vec![
                        sub([5.0, 7.0, 4.0], 1.0 / 3.0),
                        sub([6.0, 9.0, 5.0], 1.0 / 3.0),
                        sub([2.0, 4.0, 1.0], 1.0 / 3.0),
                    ],
                },
                ClassSpec {
                    subclasses: vec![sub([8.0, 5.0, 6.5], 1.0)],
                },
            ],
            curves_per_class: 100,
            m: 200,
            t_start: 0.0,
            t_end: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(FmdaError::invalid("spec has no classes"));
        }
        if self.m < 2 {
            return Err(FmdaError::invalid("m must be at least 2"));
        }
        if !(self.t_start < self.t_end) {
            return Err(FmdaError::invalid("t_start must be < t_end"));
        }
        for (g, class) in self.classes.iter().enumerate() {
            let g = g + 1;
            if class.subclasses.is_empty() {
                return Err(FmdaError::invalid(format!("class {g} has no sub-classes")));
            }
            let total: f64 = class.subclasses.iter().map(|s| s.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(FmdaError::invalid(format!(
                    "class {g} sub-class weights sum to {total}, expected 1"
                )));
            }
            for (k, s) in class.subclasses.iter().enumerate() {
                let k = k + 1;
                if !(s.weight > 0.0) {
                    return Err(FmdaError::invalid(format!(
                        "class {g} sub-class {k}: weight must be positive"
                    )));
                }
                let ok_bounds = s.boundaries.iter().all(|&b| b > 0.0 && b < 1.0)
                    && s.boundaries.windows(2).all(|w| w[0] < w[1]);
                if !ok_bounds {
                    return Err(FmdaError::invalid(format!(
                        "class {g} sub-class {k}: boundaries must be strictly increasing in (0, 1)"
                    )));
                }
                let regimes = s.boundaries.len() + 1;
                if s.levels.len() != regimes || s.noise_std.len() != regimes {
                    return Err(FmdaError::invalid(format!(
                        "class {g} sub-class {k}: expected {regimes} levels and noise stds"
                    )));
                }
                if s.levels.iter().any(|v| !v.is_finite()) {
                    return Err(FmdaError::invalid(format!(
                        "class {g} sub-class {k}: levels must be finite"
                    )));
                }
                // Zero is accepted as the noiseless limit.
                if s.noise_std
                    .iter()
                    .any(|&sd| !(sd >= 0.0) || !sd.is_finite())
                {
                    return Err(FmdaError::invalid(format!(
                        "class {g} sub-class {k}: noise std must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_start, self.t_end, self.m)
    }
}

/// Generated set together with each curve's 1-based generating sub-class.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub set: LabeledCurveSet,
    pub subclasses: Vec<usize>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledCurveSet> {
    Ok(generate_synthetic_with_truth(spec)?.set)
}

pub fn generate_synthetic_with_truth(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let grid = spec.grid()?;
    let span = grid.end() - grid.start();
    let fractions: Vec<f64> = grid
        .times()
        .iter()
        .map(|t| (t - grid.start()) / span)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.curves_per_class * spec.classes.len();
    let mut curves = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut subclasses = Vec::with_capacity(n);

    for (g, class) in spec.classes.iter().enumerate() {
        let chooser = WeightedIndex::new(class.subclasses.iter().map(|s| s.weight))
            .map_err(|e| FmdaError::invalid(format!("class {}: {e}", g + 1)))?;
        for _ in 0..spec.curves_per_class {
            let k = chooser.sample(&mut rng);
            let sub = &class.subclasses[k];
            let values = fractions
                .iter()
                .map(|&u| {
                    let r = sub.boundaries.iter().filter(|&&b| b <= u).count();
                    let sd = sub.noise_std[r];
                    let noise = if sd > 0.0 {
                        Normal::new(0.0, sd)
                            .expect("validated std")
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    sub.levels[r] + noise
                })
                .collect();
            curves.push(Curve { values });
            labels.push(g + 1);
            subclasses.push(k + 1);
        }
    }
    let set = LabeledCurveSet::with_classes(grid, curves, labels, spec.classes.len())?;
    Ok(SyntheticData { set, subclasses })
}

// ---------------------------------------------------------------------------
// Folds

/// Index lists of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Within each class, curves are first put in a canonical order (by value,
/// ties by index), shuffled with `seed` and dealt round-robin into folds,
/// the deal position carrying over between classes so fold sizes stay
/// balanced. Index lists inside each fold are returned in canonical order,
/// so the fold contents do not depend on the order of curves in `set`.
pub fn split_kfold(set: &LabeledCurveSet, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(FmdaError::invalid(format!(
            "fold count must be >= 2, got {k}"
        )));
    }
    if !set.is_labeled() {
        return Err(FmdaError::invalid("k-fold split needs a labeled set"));
    }
    for (g, &count) in set.class_counts().iter().enumerate() {
        if count < k {
            return Err(FmdaError::invalid(format!(
                "class {} has {} curves, fewer than {} folds",
                g + 1,
                count,
                k
            )));
        }
    }
    let canonical = |a: &usize, b: &usize| {
        set.labels[*a]
            .cmp(&set.labels[*b])
            .then_with(|| set.curves[*a].lex_cmp(&set.curves[*b]))
            .then_with(|| a.cmp(b))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; set.len()];
    let mut position = 0usize;
    for label in 1..=set.n_classes {
        let mut members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == label).collect();
        members.sort_by(canonical);
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = position % k;
            position += 1;
        }
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(canonical);
    Ok((0..k)
        .map(|f| Fold {
            train: order
                .iter()
                .copied()
                .filter(|&i| assignment[i] != f)
                .collect(),
            test: order
                .iter()
                .copied()
                .filter(|&i| assignment[i] == f)
                .collect(),
        })
        .collect())
}
