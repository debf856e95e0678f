//! Cause-effect variable pairs: the data model, the tab-separated pairs file
//! format, a synthetic additive-noise generator and seeded splitting.
//!
//! File format, one record per line:
//!
//! ```text
//! id<TAB>label<TAB>a0 a1 ... an<TAB>b0 b1 ... bn
//! ```
//!
//! `label` is one of `1`, `-1`, `0`, or `?` for an unlabeled pair. Lines
//! starting with `#` are comments; a `# provenance: ...` comment sets the
//! dataset provenance tag.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Causal direction between variables A and B.
///
/// The class index used by the network and the tie-break priority share one
/// order: forward, backward, no-causality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Direction {
    /// A causes B (label 1).
    Forward,
    /// B causes A (label -1).
    Backward,
    /// No cause-effect relationship (label 0).
    NoCausality,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Forward, Direction::Backward, Direction::NoCausality];

    pub fn value(self) -> i8 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
            Direction::NoCausality => 0,
        }
    }

    pub fn from_value(v: i64) -> Option<Direction> {
        match v {
            1 => Some(Direction::Forward),
            -1 => Some(Direction::Backward),
            0 => Some(Direction::NoCausality),
            _ => None,
        }
    }

    /// Network output index. Also the tie-break rank (lower wins).
    pub fn class_index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
            Direction::NoCausality => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    /// Multiple-choice wording shown to annotators.
    pub fn caption(self) -> &'static str {
        match self {
            Direction::Forward => "A causes B",
            Direction::Backward => "B causes A",
            Direction::NoCausality => "None of them",
        }
    }
}

impl From<Direction> for i8 {
    fn from(d: Direction) -> i8 {
        d.value()
    }
}

impl TryFrom<i8> for Direction {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        Direction::from_value(v as i64).ok_or_else(|| format!("label {v} not in {{1, -1, 0}}"))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<i64>()
            .ok()
            .and_then(Direction::from_value)
            .ok_or_else(|| Error::invalid(format!("`{s}` is not a direction label (1, -1 or 0)")))
    }
}

/// One cause-effect sample: paired observations of A and B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariablePair {
    id: u64,
    values_a: Vec<f64>,
    values_b: Vec<f64>,
    label: Option<Direction>,
}

impl VariablePair {
    pub fn new(id: u64, values_a: Vec<f64>, values_b: Vec<f64>, label: Option<Direction>) -> Result<Self> {
        let invalid = |message: String| Error::InvalidPair { id, message };
        if values_a.len() != values_b.len() {
            return Err(invalid(format!(
                "length mismatch: {} A values vs {} B values",
                values_a.len(),
                values_b.len()
            )));
        }
        if values_a.len() < 2 {
            return Err(invalid(format!("need at least 2 observations, got {}", values_a.len())));
        }
        if values_a.iter().chain(&values_b).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value".into()));
        }
        Ok(VariablePair {
            id,
            values_a,
            values_b,
            label,
        })
    }

    /// Builds a pair from `(a, b)` points, the inverse of [`VariablePair::points`].
    pub fn from_points(id: u64, points: &[(f64, f64)], label: Option<Direction>) -> Result<Self> {
        let (a, b) = points.iter().copied().unzip();
        VariablePair::new(id, a, b, label)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn values_a(&self) -> &[f64] {
        &self.values_a
    }

    pub fn values_b(&self) -> &[f64] {
        &self.values_b
    }

    pub fn label(&self) -> Option<Direction> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.values_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_a.is_empty()
    }

    /// `(a, b)` coordinates in original units, order preserved.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.values_a
            .iter()
            .copied()
            .zip(self.values_b.iter().copied())
            .collect()
    }

    /// The same observations with A and B exchanged and the label reversed.
    pub fn swapped(&self) -> VariablePair {
        VariablePair {
            id: self.id,
            values_a: self.values_b.clone(),
            values_b: self.values_a.clone(),
            label: self.label.map(|d| match d {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
                Direction::NoCausality => Direction::NoCausality,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pairs: Vec<VariablePair>,
    provenance: String,
}

impl Dataset {
    pub fn new(pairs: Vec<VariablePair>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !seen.insert(p.id) {
                return Err(Error::InvalidPair {
                    id: p.id,
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Dataset {
            pairs,
            provenance: provenance.into(),
        })
    }

    pub fn pairs(&self) -> &[VariablePair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<VariablePair> {
        self.pairs
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&VariablePair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.id).collect()
    }

    /// Count of pairs per label in [`Direction::ALL`] order.
    pub fn label_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for d in self.pairs.iter().filter_map(|p| p.label) {
            h[d.class_index()] += 1;
        }
        h
    }

    pub fn labels(&self) -> Result<Vec<Direction>> {
        self.pairs
            .iter()
            .map(|p| {
                p.label.ok_or_else(|| Error::InvalidPair {
                    id: p.id,
                    message: "pair is unlabeled".into(),
                })
            })
            .collect()
    }

    /// Serializes to the pairs file format. Values use the shortest
    /// round-trip representation, so parsing the output is lossless.
    pub fn to_pairs_file(&self) -> String {
        let mut out = String::new();
        if !self.provenance.is_empty() {
            let _ = writeln!(out, "# provenance: {}", self.provenance);
        }
        for p in &self.pairs {
            let label = p.label.map_or_else(|| "?".to_string(), |d| d.to_string());
            let _ = write!(out, "{}\t{}\t", p.id, label);
            write_values(&mut out, &p.values_a);
            out.push('\t');
            write_values(&mut out, &p.values_b);
            out.push('\n');
        }
        out
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pairs_file()).map_err(|e| Error::file(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut d = parse_pairs_file(&content)?;
        if d.provenance.is_empty() {
            d.provenance = path.display().to_string();
        }
        Ok(d)
    }

    /// Pairs whose ids appear in `ids`, in dataset order.
    pub fn subset(&self, ids: &HashSet<u64>, provenance: impl Into<String>) -> Dataset {
        Dataset {
            pairs: self.pairs.iter().filter(|p| ids.contains(&p.id)).cloned().collect(),
            provenance: provenance.into(),
        }
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:?}");
    }
}

pub fn parse_pairs_file(content: &str) -> Result<Dataset> {
    let mut pairs = Vec::new();
    let mut provenance = String::new();
    let mut seen = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(p) = comment.trim_start().strip_prefix("provenance:") {
                provenance = p.trim().to_string();
            }
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid id `{}`", fields[0])))?;
        let label = match fields[1].trim() {
            "?" => None,
            s => Some(
                s.parse::<Direction>()
                    .map_err(|_| parse_err(format!("invalid label `{s}`")))?,
            ),
        };
        let parse_values = |field: &str, which: char| -> Result<Vec<f64>> {
            field
                .split_whitespace()
                .map(|tok| {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| parse_err(format!("invalid {which} value `{tok}`")))?;
                    if !v.is_finite() {
                        return Err(parse_err(format!("non-finite {which} value `{tok}`")));
                    }
                    Ok(v)
                })
                .collect()
        };
        let a = parse_values(fields[2], 'A')?;
        let b = parse_values(fields[3], 'B')?;
        if !seen.insert(id) {
            return Err(parse_err(format!("duplicate id {id}")));
        }
        pairs.push(VariablePair::new(id, a, b, label)?);
    }
    Ok(Dataset { pairs, provenance })
}

/// A generated pair together with its ground-truth mechanism output.
#[derive(Debug, Clone)]
pub struct TracedPair {
    pub pair: VariablePair,
    /// `f(cause)` aligned with the effect variable's observations; `None`
    /// for no-causality pairs.
    pub mechanism: Option<Vec<f64>>,
}

/// Synthetic balanced dataset of additive-noise pairs. See
/// [`generate_synthetic_traced`].
pub fn generate_synthetic(count: usize, seed: u64) -> Result<Dataset> {
    let traced = generate_synthetic_traced(count, seed)?;
    Dataset::new(
        traced.into_iter().map(|t| t.pair).collect(),
        format!("synthetic(count={count}, seed={seed})"),
    )
}

/// Generates `count` pairs with labels balanced to within one per class.
///
/// Forward pairs are `B = tanh(cubic(A)) + noise` with cubic coefficients in
/// [-1, 1] and Gaussian noise of standard deviation in [0.05, 0.3]; backward
/// pairs are forward pairs with A and B exchanged; no-causality pairs draw
/// A and B independently. Every variable is standardized to zero mean and
/// unit variance. Pair ids run from 1 to `count`.
pub fn generate_synthetic_traced(count: usize, seed: u64) -> Result<Vec<TracedPair>> {
    if count < 3 {
        return Err(Error::invalid(format!(
            "synthetic dataset needs count >= 3, got {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Direction> = (0..count).map(|i| Direction::ALL[i % 3]).collect();
    labels.shuffle(&mut rng);

    let mut out = Vec::with_capacity(count);
    for (i, label) in labels.into_iter().enumerate() {
        let id = i as u64 + 1;
        let n = rng.random_range(50..=500usize);
        let traced = match label {
            Direction::NoCausality => {
                let a = standardized(sample_cause(&mut rng, n));
                let b = standardized(sample_cause(&mut rng, n));
                TracedPair {
                    pair: VariablePair::new(id, a, b, Some(label))?,
                    mechanism: None,
                }
            }
            Direction::Forward | Direction::Backward => {
                let cause = standardized(sample_cause(&mut rng, n));
                let coeffs: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
                let sigma = rng.random_range(0.05..=0.3);
                let noise = Normal::new(0.0, sigma).expect("valid sigma");
                let signal: Vec<f64> = cause.iter().map(|&x| cubic_tanh(&coeffs, x)).collect();
                let effect = standardized(signal.iter().map(|&s| s + noise.sample(&mut rng)).collect());
                let forward = VariablePair::new(id, cause, effect, Some(Direction::Forward))?;
                let pair = if label == Direction::Backward {
                    forward.swapped()
                } else {
                    forward
                };
                TracedPair {
                    pair,
                    mechanism: Some(signal),
                }
            }
        };
        out.push(traced);
    }
    Ok(out)
}

fn cubic_tanh(c: &[f64; 4], x: f64) -> f64 {
    (((c[3] * x + c[2]) * x + c[1]) * x + c[0]).tanh()
}

/// Cause marginal: Gaussian, uniform, or a two-component Gaussian mixture.
fn sample_cause(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    match rng.random_range(0..3u8) {
        0 => (0..n).map(|_| std_normal.sample(rng)).collect(),
        1 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        _ => {
            let offset = rng.random_range(1.0..3.0);
            let weight = rng.random_range(0.2..0.8);
            (0..n)
                .map(|_| {
                    let centre = if rng.random_bool(weight) { -offset } else { offset };
                    centre + std_normal.sample(rng)
                })
                .collect()
        }
    }
}

fn standardized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in &mut v {
        *x -= mean;
        if sd > 0.0 {
            *x /= sd;
        }
    }
    v
}

/// Uniformly random disjoint partition into `(train, test)` with
/// `test_count` test pairs. Both halves keep dataset order.
pub fn split_train_test(dataset: &Dataset, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if test_count == 0 {
        return Err(Error::invalid("test_count must be positive"));
    }
    if test_count >= dataset.len() {
        return Err(Error::invalid(format!(
            "test_count {test_count} must be smaller than the dataset size {}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; dataset.len()];
    for &i in &order[..test_count] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = dataset.pairs.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    let prov = &dataset.provenance;
    Ok((
        Dataset {
            pairs: train.into_iter().map(|(p, _)| p).collect(),
            provenance: format!("{prov} | train(seed={seed})"),
        },
        Dataset {
            pairs: test.into_iter().map(|(p, _)| p).collect(),
            provenance: format!("{prov} | test(seed={seed}, count={test_count})"),
        },
    ))
}

/// Draws `per_class` labeled pairs of each direction, e.g. the nine
/// instruction exemplars (three per class). Output is ordered by class, then
/// by draw order.
pub fn select_exemplars(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * 3);
    for d in Direction::ALL {
        let mut candidates: Vec<&VariablePair> = dataset.pairs.iter().filter(|p| p.label == Some(d)).collect();
        if candidates.len() < per_class {
            return Err(Error::invalid(format!(
                "need {per_class} pairs labeled {d}, dataset has {}",
                candidates.len()
            )));
        }
        candidates.shuffle(&mut rng);
        chosen.extend(candidates[..per_class].iter().map(|p| (*p).clone()));
    }
    Dataset::new(
        chosen,
        format!("{} | exemplars(per_class={per_class}, seed={seed})", dataset.provenance),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_record() {
        let d = parse_pairs_file("1\t0\t0.1 0.2\t1.0 2.0\n").unwrap();
        assert_eq!(d.len(), 1);
        let p = &d.pairs()[0];
        assert_eq!(p.id(), 1);
        assert_eq!(p.label(), Some(Direction::NoCausality));
        assert_eq!(p.values_a(), &[0.1, 0.2]);
        assert_eq!(p.values_b(), &[1.0, 2.0]);
    }

    #[test]
    fn length_mismatch_names_record() {
        let err = parse_pairs_file("7\t1\t1 2 3\t1 2\n").unwrap_err();
        assert!(matches!(err, Error::InvalidPair { id: 7, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_pairs_file("").unwrap().is_empty());
        assert!(parse_pairs_file("# just a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_pairs_file("# header\n1\t1\t1 2\t3 4\n2\t1\t1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_pairs_file("x\t1\t1 2\t3 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_pairs_file("1\t2\t1 2\t3 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(parse_pairs_file("1\t1\t1 NaN\t3 4\n").is_err());
        assert!(parse_pairs_file("1\t1\t1 inf\t3 4\n").is_err());
        assert!(VariablePair::new(1, vec![1.0, f64::NAN], vec![0.0, 1.0], None).is_err());
    }

    #[test]
    fn unlabeled_and_duplicate_ids() {
        let d = parse_pairs_file("3\t?\t1 2\t3 4\n").unwrap();
        assert_eq!(d.pairs()[0].label(), None);
        assert!(parse_pairs_file("3\t?\t1 2\t3 4\n3\t1\t1 2\t3 4\n").is_err());
    }

    #[test]
    fn single_observation_rejected() {
        assert!(parse_pairs_file("1\t1\t1\t3\n").is_err());
    }

    #[test]
    fn three_pairs_one_per_label() {
        let d = generate_synthetic(3, 11).unwrap();
        assert_eq!(d.label_histogram(), [1, 1, 1]);
        assert!(generate_synthetic(2, 11).is_err());
    }

    #[test]
    fn synthetic_properties() {
        let d = generate_synthetic(200, 5).unwrap();
        let h = d.label_histogram();
        for c in h {
            assert!((c as i64 - 200 / 3).abs() <= 1, "{h:?}");
        }
        for p in d.pairs() {
            assert!((50..=500).contains(&p.len()));
            for v in [p.values_a(), p.values_b()] {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-9);
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_sizes_and_precondition() {
        let d = generate_synthetic(30, 1).unwrap();
        let (train, test) = split_train_test(&d, 6, 9).unwrap();
        assert_eq!((train.len(), test.len()), (24, 6));
        assert!(split_train_test(&d, 0, 9).is_err());
        assert!(split_train_test(&d, 30, 9).is_err());
    }

    #[test]
    fn exemplars_three_per_class() {
        let d = generate_synthetic(60, 2).unwrap();
        let ex = select_exemplars(&d, 3, 4).unwrap();
        assert_eq!(ex.len(), 9);
        assert_eq!(ex.label_histogram(), [3, 3, 3]);
        let tiny = generate_synthetic(3, 2).unwrap();
        assert!(select_exemplars(&tiny, 3, 4).is_err());
    }

    #[test]
    fn swap_reverses_label() {
        let p = VariablePair::new(1, vec![1.0, 2.0], vec![3.0, 4.0], Some(Direction::Forward)).unwrap();
        let s = p.swapped();
        assert_eq!(s.label(), Some(Direction::Backward));
        assert_eq!(s.values_a(), p.values_b());
        assert_eq!(s.swapped(), p);
    }
}
