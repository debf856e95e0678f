//! Annotator accuracy, bottom-third filtering, expert split, majority votes
//! and Pearson agreement between human groups and machine methods.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::pairs::Direction;
use crate::repr::MethodResult;

/// One recorded answer, as stored in the judgment log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    /// Unix time in milliseconds.
    pub timestamp: u64,
    /// The task set the item was shown in.
    pub session_id: String,
    pub annotator_id: String,
    pub item_id: u64,
    pub choice: Direction,
}

/// Keeps the last judgment (in log order) per (annotator, item). Also returns
/// the judgments that were superseded.
pub fn effective_judgments(log: &[Judgment]) -> (Vec<Judgment>, Vec<Judgment>) {
    let mut last: HashMap<(&str, u64), usize> = HashMap::new();
    for (i, j) in log.iter().enumerate() {
        last.insert((j.annotator_id.as_str(), j.item_id), i);
    }
    let (mut kept, mut superseded) = (Vec::new(), Vec::new());
    for (i, j) in log.iter().enumerate() {
        if last[&(j.annotator_id.as_str(), j.item_id)] == i {
            kept.push(j.clone());
        } else {
            superseded.push(j.clone());
        }
    }
    (kept, superseded)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnotatorAccuracy {
    pub accuracy: BTreeMap<String, f64>,
    /// Roster members without any judgment; excluded from `accuracy`.
    pub without_judgments: Vec<String>,
}

/// Fraction of correct answers per annotator. `roster` names annotators that
/// should appear even without judgments (they are reported, not scored).
pub fn annotator_accuracy(
    judgments: &[Judgment],
    truth: &BTreeMap<u64, Direction>,
    roster: &[String],
) -> Result<AnnotatorAccuracy> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        let want = truth
            .get(&j.item_id)
            .ok_or_else(|| Error::NotFound(format!("judgment on unknown item {}", j.item_id)))?;
        let t = tally.entry(j.annotator_id.as_str()).or_default();
        t.0 += usize::from(j.choice == *want);
        t.1 += 1;
    }
    Ok(AnnotatorAccuracy {
        accuracy: tally
            .iter()
            .map(|(a, &(c, n))| (a.to_string(), c as f64 / n as f64))
            .collect(),
        without_judgments: roster
            .iter()
            .filter(|a| !tally.contains_key(a.as_str()))
            .cloned()
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupSplit {
    pub experts: Vec<String>,
    pub non_experts: Vec<String>,
    pub filtered_out: Vec<String>,
}

/// Orders annotators by (accuracy, id) ascending, drops the lowest `⌊n/3⌋`
/// and makes the upper `⌈r/2⌉` of the remaining `r` experts.
pub fn filter_and_split(accuracies: &[(String, f64)]) -> Result<GroupSplit> {
    let n = accuracies.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "splitting needs at least 3 annotators, got {n}"
        )));
    }
    let distinct: BTreeSet<&str> = accuracies.iter().map(|(a, _)| a.as_str()).collect();
    if distinct.len() != n {
        return Err(Error::invalid("duplicate annotator id"));
    }
    if accuracies.iter().any(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(Error::invalid("accuracy outside [0, 1]"));
    }
    let mut order: Vec<&(String, f64)> = accuracies.iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let cut = n / 3;
    let r = n - cut;
    let experts_from = cut + r / 2;
    let ids =
        |range: std::ops::Range<usize>| -> Vec<String> { order[range].iter().rev().map(|(a, _)| a.clone()).collect() };
    Ok(GroupSplit {
        filtered_out: ids(0..cut),
        non_experts: ids(cut..experts_from),
        experts: ids(experts_from..n),
    })
}

/// A group's answer for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupVote {
    Choice(Direction),
    /// No single most frequent choice; scored as incorrect.
    Tie,
}

pub fn majority_vote(choices: &[Direction]) -> Result<GroupVote> {
    if choices.is_empty() {
        return Err(Error::invalid("majority vote over no judgments"));
    }
    let mut counts = [0usize; 3];
    for c in choices {
        counts[c.class_index()] += 1;
    }
    let best = *counts.iter().max().expect("three classes");
    let winners: Vec<usize> = (0..3).filter(|&k| counts[k] == best).collect();
    Ok(match winners.as_slice() {
        [k] => GroupVote::Choice(Direction::from_class_index(*k).expect("class index")),
        _ => GroupVote::Tie,
    })
}

/// Majority vote of `members` on each of `items`, in order.
pub fn group_predictions(judgments: &[Judgment], members: &[String], items: &[u64]) -> Result<Vec<GroupVote>> {
    let members: BTreeSet<&str> = members.iter().map(String::as_str).collect();
    let mut by_item: HashMap<u64, Vec<Direction>> = HashMap::new();
    for j in judgments.iter().filter(|j| members.contains(j.annotator_id.as_str())) {
        by_item.entry(j.item_id).or_default().push(j.choice);
    }
    items
        .iter()
        .map(|id| {
            let votes = by_item
                .get(id)
                .ok_or_else(|| Error::invalid(format!("no group member judged item {id}")))?;
            majority_vote(votes)
        })
        .collect()
}

pub fn correctness_vector(predictions: &[GroupVote], truth: &[Direction]) -> Result<Vec<u8>> {
    if predictions.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} items",
            predictions.len(),
            truth.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| u8::from(*p == GroupVote::Choice(*t)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_vectors(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::invalid(format!("correlation needs n >= 3, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in correlation input"));
    }
    Ok(())
}

fn sample_r(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "undefined correlation: a vector is constant".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of `r` from `t = r sqrt((n-2)/(1-r^2))` on `n - 2`
/// degrees of freedom.
pub fn t_test_p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::invalid(format!("p-value needs n >= 3, got {n}")));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0))
}

/// Sample Pearson correlation with the t-transform p-value.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<CorrelationReport> {
    check_vectors(a, b)?;
    let r = sample_r(a, b)?;
    Ok(CorrelationReport {
        r,
        p_value: t_test_p_value(r, a.len())?,
        n: a.len(),
    })
}

/// Pearson correlation whose p-value is the share of `resamples` random
/// permutations of `b` with `|r|` at least the observed one, counting the
/// observed arrangement: `(hits + 1) / (resamples + 1)`.
pub fn pearson_permutation(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<CorrelationReport> {
    check_vectors(a, b)?;
    if resamples == 0 {
        return Err(Error::invalid("permutation test needs resamples > 0"));
    }
    let r = sample_r(a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = b.to_vec();
    let threshold = r.abs() - 1e-12;
    let mut hits = 0usize;
    for _ in 0..resamples {
        shuffled.shuffle(&mut rng);
        if sample_r(a, &shuffled)?.abs() >= threshold {
            hits += 1;
        }
    }
    Ok(CorrelationReport {
        r,
        p_value: (hits + 1) as f64 / (resamples + 1) as f64,
        n: a.len(),
    })
}

pub fn as_reals(v: &[u8]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    /// "human" or "machine".
    pub kind: String,
    pub model: String,
    /// A task-set id, or "pooled".
    pub scope: String,
    pub accuracy: f64,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub method: String,
    pub column: String,
    /// `None` when one of the vectors is constant.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
    pub significant: bool,
    /// Highest `r` in its column.
    pub column_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSplit {
    pub set_id: String,
    pub items: Vec<u64>,
    pub split: GroupSplit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StudyReport {
    pub accuracy: Vec<AccuracyRow>,
    pub correlations: Vec<CorrelationRow>,
    pub splits: Vec<SetSplit>,
    /// Accuracy per annotator within each set, keyed `set/annotator`.
    pub annotators: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

const EXPERT: &str = "Expert";
const NON_EXPERT: &str = "Non-expert";
const POOLED: &str = "pooled";

/// Per-model group votes, truths and item ids collected across sets.
type PooledVotes = (Vec<GroupVote>, Vec<Direction>, Vec<u64>);

fn human_column(model: &str) -> String {
    format!("Human {}", model.to_lowercase())
}

/// Accuracy table and human-versus-machine correlation table.
///
/// Judgments are grouped by `session_id` into task sets whose items are
/// listed in `set_items`. Within each set with at least three complete
/// annotators the groups are split and majority-voted; the per-set group
/// predictions are concatenated into pooled expert and non-expert vectors,
/// which are correlated with every machine method over the same items.
pub fn build_report(
    truth: &BTreeMap<u64, Direction>,
    set_items: &BTreeMap<String, Vec<u64>>,
    judgments: &[Judgment],
    machine: &[MethodResult],
) -> Result<StudyReport> {
    let mut report = StudyReport::default();
    let machine_items: Option<&[u64]> = machine.first().map(|m| m.item_ids.as_slice());
    if let Some(items) = machine_items {
        let reference: BTreeSet<u64> = items.iter().copied().collect();
        for m in machine {
            if m.item_ids.iter().copied().collect::<BTreeSet<_>>() != reference || m.item_ids.len() != items.len() {
                return Err(Error::invalid(format!(
                    "method {} was evaluated on a different item set",
                    m.method
                )));
            }
        }
        for m in machine {
            report.accuracy.push(AccuracyRow {
                kind: "machine".into(),
                model: m.method.clone(),
                scope: POOLED.into(),
                accuracy: m.accuracy,
                items: m.item_ids.len(),
            });
        }
    }

    let (effective, superseded) = effective_judgments(judgments);
    if !superseded.is_empty() {
        report.notes.push(format!(
            "{} judgments superseded by later resubmissions",
            superseded.len()
        ));
    }
    let mut pooled: BTreeMap<&str, PooledVotes> = BTreeMap::new();
    for (set_id, items) in set_items {
        let in_set: Vec<Judgment> = effective.iter().filter(|j| &j.session_id == set_id).cloned().collect();
        if in_set.is_empty() {
            continue;
        }
        for j in &in_set {
            if !items.contains(&j.item_id) {
                return Err(Error::invalid(format!(
                    "item {} is not part of set {set_id}",
                    j.item_id
                )));
            }
        }
        let item_truth = items
            .iter()
            .map(|id| {
                truth
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::NotFound(format!("no ground truth for item {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(machine_items) = machine_items {
            if let Some(missing) = items.iter().find(|id| !machine_items.contains(id)) {
                return Err(Error::invalid(format!(
                    "set {set_id} item {missing} has no machine prediction"
                )));
            }
        }
        let acc = annotator_accuracy(&in_set, truth, &[])?;
        for (a, v) in &acc.accuracy {
            report.annotators.insert(format!("{set_id}/{a}"), *v);
        }
        let mut judged: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        for j in &in_set {
            judged.entry(j.annotator_id.as_str()).or_default().insert(j.item_id);
        }
        let complete: Vec<(String, f64)> = judged
            .iter()
            .filter(|(_, seen)| seen.len() == items.len())
            .map(|(a, _)| (a.to_string(), acc.accuracy[*a]))
            .collect();
        let incomplete = judged.len() - complete.len();
        if incomplete > 0 {
            report.warnings.push(format!(
                "set {set_id}: {incomplete} annotator(s) with incomplete sessions left out of the split"
            ));
        }
        if complete.len() < 3 {
            report.warnings.push(format!(
                "set {set_id}: {} complete annotator(s); expert split needs at least 3",
                complete.len()
            ));
            continue;
        }
        let split = filter_and_split(&complete)?;
        for (model, members) in [(EXPERT, &split.experts), (NON_EXPERT, &split.non_experts)] {
            let preds = group_predictions(&in_set, members, items)?;
            let correct = correctness_vector(&preds, &item_truth)?;
            report.accuracy.push(AccuracyRow {
                kind: "human".into(),
                model: model.into(),
                scope: set_id.clone(),
                accuracy: mean(&correct),
                items: items.len(),
            });
            let entry = pooled.entry(model).or_default();
            entry.0.extend(preds);
            entry.1.extend(&item_truth);
            entry.2.extend(items);
        }
        report.splits.push(SetSplit {
            set_id: set_id.clone(),
            items: items.clone(),
            split,
        });
    }
    if report.splits.len() > 1 {
        report.notes.push(
            "expert and non-expert groups are formed per task set; pooled rows concatenate the per-set majority votes"
                .into(),
        );
    }
    if report
        .splits
        .iter()
        .any(|s| s.split.experts.len() != s.split.non_experts.len())
    {
        report
            .notes
            .push("an odd remainder after filtering puts the extra annotator in the expert group".into());
    }

    for model in [EXPERT, NON_EXPERT] {
        let Some((preds, item_truth, items)) = pooled.get(model) else {
            continue;
        };
        let human = correctness_vector(preds, item_truth)?;
        report.accuracy.push(AccuracyRow {
            kind: "human".into(),
            model: model.into(),
            scope: POOLED.into(),
            accuracy: mean(&human),
            items: items.len(),
        });
        let column = human_column(model);
        for m in machine {
            let index: HashMap<u64, u8> = m.item_ids.iter().copied().zip(m.correctness.iter().copied()).collect();
            let machine_vec: Vec<u8> = items.iter().map(|id| index[id]).collect();
            let row = match pearson(&as_reals(&human), &as_reals(&machine_vec)) {
                Ok(c) => CorrelationRow {
                    method: m.method.clone(),
                    column: column.clone(),
                    r: Some(c.r),
                    p_value: Some(c.p_value),
                    n: c.n,
                    significant: c.p_value < SIGNIFICANCE,
                    column_max: false,
                },
                Err(Error::UndefinedCorrelation(_)) => {
                    report.warnings.push(format!(
                        "{column} vs {}: undefined correlation (constant vector)",
                        m.method
                    ));
                    CorrelationRow {
                        method: m.method.clone(),
                        column: column.clone(),
                        r: None,
                        p_value: None,
                        n: items.len(),
                        significant: false,
                        column_max: false,
                    }
                }
                Err(e) => return Err(e),
            };
            report.correlations.push(row);
        }
    }
    mark_column_maxima(&mut report.correlations);
    if judgments.is_empty() {
        report
            .warnings
            .push("no human judgments recorded; report has machine rows only".into());
    } else if pooled.is_empty() {
        report
            .warnings
            .push("no task set has enough complete annotators; human rows suppressed".into());
    }
    if machine.is_empty() {
        report.warnings.push("no machine method results available".into());
    }
    Ok(report)
}

fn mark_column_maxima(rows: &mut [CorrelationRow]) {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for row in rows.iter() {
        if let Some(r) = row.r {
            let e = best.entry(row.column.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(r);
        }
    }
    for row in rows.iter_mut() {
        row.column_max = row.r.is_some() && row.r == best.get(&row.column).copied();
    }
}

fn mean(v: &[u8]) -> f64 {
    v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

impl StudyReport {
    /// One table with a `table` discriminator column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,kind,model,scope,value,p_value,n,marker\n");
        for a in &self.accuracy {
            let _ = writeln!(
                out,
                "accuracy,{},{},{},{:.6},,{},",
                a.kind, a.model, a.scope, a.accuracy, a.items
            );
        }
        for c in &self.correlations {
            let mut marker = String::new();
            if c.significant {
                marker.push('*');
            }
            if c.column_max {
                marker.push_str("max");
            }
            let _ = writeln!(
                out,
                "correlation,machine,{},{},{},{},{},{}",
                c.method,
                c.column,
                opt(c.r, 6),
                opt(c.p_value, 6),
                c.n,
                marker
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("Accuracy of methods\n");
        let _ = writeln!(
            out,
            "{:<8} {:<11} {:<10} {:>8} {:>6}",
            "Type", "Model", "Scope", "Accuracy", "Items"
        );
        let mut sorted: Vec<&AccuracyRow> = self.accuracy.iter().collect();
        sorted.sort_by_key(|a| (a.kind != "human", a.scope != POOLED));
        for a in sorted {
            let kind = if a.kind == "human" { "Human" } else { "Machine" };
            let _ = writeln!(
                out,
                "{kind:<8} {:<11} {:<10} {:>8.3} {:>6}",
                a.model, a.scope, a.accuracy, a.items
            );
        }
        if !self.correlations.is_empty() {
            let columns: Vec<String> = self
                .correlations
                .iter()
                .map(|c| c.column.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            out.push_str("\nPearson correlation with human groups (* p < 0.05, [ ] column maximum)\n");
            let _ = write!(out, "{:<10}", "Methods");
            for c in &columns {
                let _ = write!(out, " {c:>18}");
            }
            out.push('\n');
            let mut methods: Vec<&str> = Vec::new();
            for c in &self.correlations {
                if !methods.contains(&c.method.as_str()) {
                    methods.push(&c.method);
                }
            }
            for m in methods {
                let _ = write!(out, "{m:<10}");
                for col in &columns {
                    let cell = self
                        .correlations
                        .iter()
                        .find(|c| c.method == m && &c.column == col)
                        .map_or_else(String::new, |c| match c.r {
                            None => "n/a".into(),
                            Some(r) => {
                                let v = if c.column_max {
                                    format!("[{r:.3}]")
                                } else {
                                    format!("{r:.3}")
                                };
                                if c.significant {
                                    format!("{v}*")
                                } else {
                                    v
                                }
                            }
                        });
                    let _ = write!(out, " {cell:>18}");
                }
                out.push('\n');
            }
        }
        if !self.splits.is_empty() {
            out.push_str("\nGroups per task set (experts / non-experts / filtered)\n");
            for s in &self.splits {
                let _ = writeln!(
                    out,
                    "{}: {} / {} / {}",
                    s.set_id,
                    s.split.experts.len(),
                    s.split.non_experts.len(),
                    s.split.filtered_out.len()
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::*;

    fn accs(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(a, x)| (a.to_string(), *x)).collect()
    }

    #[test]
    fn three_annotators_split() {
        let s = filter_and_split(&accs(&[("a", 0.1), ("b", 0.5), ("c", 0.9)])).unwrap();
        assert_eq!(s.filtered_out, ["a"]);
        assert_eq!(s.non_experts, ["b"]);
        assert_eq!(s.experts, ["c"]);
        assert!(filter_and_split(&accs(&[("a", 0.1), ("b", 0.5)])).is_err());
    }

    #[test]
    fn ties_resolve_by_id() {
        let s = filter_and_split(&accs(&[("d", 0.5), ("b", 0.5), ("a", 0.5), ("c", 0.5), ("e", 0.5)])).unwrap();
        assert_eq!(s.filtered_out, ["a"]);
        assert_eq!(s.non_experts, ["c", "b"]);
        assert_eq!(s.experts, ["e", "d"]);
    }

    #[test]
    fn votes() {
        assert_eq!(
            majority_vote(&[Forward, Forward, Backward]).unwrap(),
            GroupVote::Choice(Forward)
        );
        assert_eq!(majority_vote(&[Forward, Backward]).unwrap(), GroupVote::Tie);
        assert_eq!(
            majority_vote(&[NoCausality; 4]).unwrap(),
            GroupVote::Choice(NoCausality)
        );
        assert!(majority_vote(&[]).is_err());
        let c = correctness_vector(&[GroupVote::Tie, GroupVote::Choice(Forward)], &[Forward, Forward]).unwrap();
        assert_eq!(c, [0, 1]);
    }

    #[test]
    fn pearson_basics() {
        let v = [1.0, 0.0, 1.0, 1.0, 0.0];
        assert!((pearson(&v, &v).unwrap().r - 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&v, &[1.0; 5]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&v[..2], &v[..2]).is_err());
        assert!(pearson(&v, &v[..4]).is_err());
    }

    #[test]
    fn latest_judgment_wins() {
        let j = |t, c| Judgment {
            timestamp: t,
            session_id: "s".into(),
            annotator_id: "a".into(),
            item_id: 1,
            choice: c,
        };
        let (kept, gone) = effective_judgments(&[j(1, Forward), j(2, Backward)]);
        assert_eq!(kept, [j(2, Backward)]);
        assert_eq!(gone, [j(1, Forward)]);
    }

    #[test]
    fn zero_judgment_annotator_is_reported() {
        let truth = BTreeMap::from([(1, Forward)]);
        let j = Judgment {
            timestamp: 0,
            session_id: "s".into(),
            annotator_id: "a".into(),
            item_id: 1,
            choice: Forward,
        };
        let acc = annotator_accuracy(std::slice::from_ref(&j), &truth, &["a".into(), "z".into()]).unwrap();
        assert_eq!(acc.accuracy["a"], 1.0);
        assert!(!acc.accuracy.contains_key("z"));
        assert_eq!(acc.without_judgments, ["z"]);
        let mut bad = j;
        bad.item_id = 9;
        assert!(annotator_accuracy(&[bad], &truth, &[]).is_err());
    }
}
