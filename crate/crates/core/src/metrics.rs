//! Scoring: tag accuracy, attachment scores, span P/R/F1, Cohen's kappa,
//! pairwise F1 without the 'O' label, and multi-trial aggregation.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use crate::corpus::Span;
use crate::error::{Error, Result};

/// One named metric with optional per-trial values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricValue {
    pub mean: f64,
    pub std: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trials: Vec<f64>,
}

impl MetricValue {
    pub fn single(value: f64) -> Self {
        MetricValue { mean: value, std: 0.0, trials: Vec::new() }
    }

    pub fn from_trials(trials: Vec<f64>) -> Result<Self> {
        let (mean, std) = aggregate_trials(&trials)?;
        Ok(MetricValue { mean, std, trials })
    }
}

/// Named scalar metrics, serializable as JSON or a plain-text table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: IndexMap<String, MetricValue>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn insert(&mut self, name: impl Into<String>, value: MetricValue) {
        self.metrics.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.get(name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.metrics.keys().map(|k| k.len()).max().unwrap_or(6).max(6);
        out.push_str(&format!("{:width$}  {:>8}  {:>8}\n", "metric", "mean", "std"));
        for (name, v) in &self.metrics {
            out.push_str(&format!("{name:width$}  {:>8.4}  {:>8.4}\n", v.mean, v.std));
        }
        for note in &self.notes {
            out.push_str(&format!("# {note}\n"));
        }
        out
    }
}

/// Fraction of positions where gold and predicted tags match.
pub fn tag_accuracy<S: AsRef<str>, T: AsRef<str>>(gold: &[S], pred: &[T]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::data(format!(
            "tag sequences differ in length: {} vs {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let matches = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(matches as f64 / gold.len() as f64)
}

/// Unlabeled and labeled attachment scores over one or more sentences.
/// All tokens count, punctuation included.
pub fn attachment_scores(
    gold: &[(Vec<usize>, Vec<String>)],
    pred: &[(Vec<usize>, Vec<String>)],
) -> Result<(f64, f64)> {
    if gold.len() != pred.len() {
        return Err(Error::data("sentence counts differ"));
    }
    let mut total = 0usize;
    let mut head_ok = 0usize;
    let mut both_ok = 0usize;
    for ((gh, gl), (ph, pl)) in gold.iter().zip(pred) {
        if gh.len() != ph.len() || gl.len() != pl.len() || gh.len() != gl.len() {
            return Err(Error::data("head/label sequences differ in length"));
        }
        for i in 0..gh.len() {
            total += 1;
            if gh[i] == ph[i] {
                head_ok += 1;
                if gl[i] == pl[i] {
                    both_ok += 1;
                }
            }
        }
    }
    if total == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((head_ok as f64 / total as f64, both_ok as f64 / total as f64))
}

/// Exact-match micro precision/recall/F1 over span sets.
/// Convention: empty prediction and empty gold scores (1, 1, 1); an empty
/// side against a nonempty one scores 0 for the corresponding metric.
pub fn span_prf(gold: &[Span], pred: &[Span]) -> (f64, f64, f64) {
    let gold_set: HashSet<&Span> = gold.iter().collect();
    let tp = pred.iter().filter(|s| gold_set.contains(s)).count();
    let p = if pred.is_empty() {
        if gold.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / pred.len() as f64
    };
    let r = if gold.is_empty() {
        if pred.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / gold.len() as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Cohen's kappa over two aligned label sequences.
pub fn cohen_kappa<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::data("label sequences differ in length"));
    }
    if a.is_empty() {
        return Err(Error::data("kappa is undefined for empty sequences"));
    }
    let n = a.len() as f64;
    let mut count_a: HashMap<&str, usize> = HashMap::new();
    let mut count_b: HashMap<&str, usize> = HashMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        *count_a.entry(x).or_default() += 1;
        *count_b.entry(y).or_default() += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = count_a
        .iter()
        .map(|(label, &ca)| {
            let cb = count_b.get(label).copied().unwrap_or(0);
            (ca as f64 / n) * (cb as f64 / n)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        if p_o >= 1.0 {
            return Ok(1.0);
        }
        return Err(Error::data("kappa is degenerate: expected agreement is 1 but sequences differ"));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Token-level micro-F1 over labels excluding 'O', treating `a` as gold and
/// `b` as predicted. Symmetric in its arguments.
pub fn pairwise_f1_no_o<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::data("label sequences differ in length"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x == y {
            if x != "O" {
                tp += 1;
            }
        } else {
            if y != "O" {
                fp += 1;
            }
            if x != "O" {
                fn_ += 1;
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Inter-annotator agreement over aligned token label sequences, one per
/// annotator: pairwise kappa on all tokens, pairwise kappa on annotated-only
/// tokens (positions where at least one annotator is not 'O'), and pairwise
/// F1 without 'O', each averaged over all annotator pairs.
pub fn iaa_report(annotations: &[Vec<String>]) -> Result<MetricsReport> {
    if annotations.len() < 2 {
        return Err(Error::data("agreement needs at least 2 annotators"));
    }
    let len = annotations[0].len();
    if annotations.iter().any(|a| a.len() != len) {
        return Err(Error::data("annotator sequences are not aligned"));
    }

    let annotated: Vec<usize> = (0..len)
        .filter(|&i| annotations.iter().any(|a| a[i] != "O"))
        .collect();

    let mut kappas = Vec::new();
    let mut kappas_annotated = Vec::new();
    let mut f1s = Vec::new();
    for i in 0..annotations.len() {
        for j in (i + 1)..annotations.len() {
            let (a, b) = (&annotations[i], &annotations[j]);
            kappas.push(cohen_kappa(a, b)?);
            f1s.push(pairwise_f1_no_o(a, b)?);
            if !annotated.is_empty() {
                let sa: Vec<&String> = annotated.iter().map(|&t| &a[t]).collect();
                let sb: Vec<&String> = annotated.iter().map(|&t| &b[t]).collect();
                kappas_annotated.push(cohen_kappa(&sa, &sb)?);
            }
        }
    }

    let mut report = MetricsReport::default();
    report.insert("kappa_all_tokens", MetricValue::from_trials(kappas)?);
    if !kappas_annotated.is_empty() {
        report.insert("kappa_annotated_tokens", MetricValue::from_trials(kappas_annotated)?);
    }
    let n_pairs = f1s.len();
    report.insert("pairwise_f1_no_o", MetricValue::from_trials(f1s)?);
    report.notes.push(format!("{n_pairs} annotator pairs"));
    Ok(report)
}

/// Arithmetic mean and sample (n-1) standard deviation; std is 0 for n = 1.
pub fn aggregate_trials(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::data("cannot aggregate zero trials"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn accuracy_hand_count() {
        let acc = tag_accuracy(&strs(&["N", "V", "N"]), &strs(&["N", "V", "V"])).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(tag_accuracy(&strs(&["N"]), &strs(&["N"])).unwrap(), 1.0);
        assert_eq!(tag_accuracy(&strs(&["N", "V"]), &strs(&["V", "N"])).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_length_mismatch() {
        assert!(tag_accuracy(&strs(&["N"]), &strs(&["N", "V"])).is_err());
    }

    #[test]
    fn attachment_hand_count() {
        let gold = vec![(vec![2, 0, 2], strs(&["a", "b", "c"]))];
        let pred = vec![(vec![2, 0, 1], strs(&["a", "b", "c"]))];
        let (uas, las) = attachment_scores(&gold, &pred).unwrap();
        assert!((uas - 2.0 / 3.0).abs() < 1e-12);
        assert!((las - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn attachment_identical_and_label_split() {
        let gold = vec![(vec![2, 0], strs(&["x", "y"]))];
        assert_eq!(attachment_scores(&gold, &gold).unwrap(), (1.0, 1.0));
        let pred = vec![(vec![2, 0], strs(&["p", "q"]))];
        assert_eq!(attachment_scores(&gold, &pred).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn span_prf_hand_formula() {
        let gold = vec![Span::new(0, 2, "PER")];
        let pred = vec![Span::new(0, 2, "PER"), Span::new(3, 4, "LOC")];
        let (p, r, f1) = span_prf(&gold, &pred);
        assert!((p - 0.5).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn span_prf_conventions() {
        let s = vec![Span::new(0, 1, "PER")];
        assert_eq!(span_prf(&s, &s), (1.0, 1.0, 1.0));
        assert_eq!(span_prf(&[], &[]), (1.0, 1.0, 1.0));
        let (p, r, f1) = span_prf(&s, &[]);
        assert_eq!((p, r, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kappa_worked_example() {
        let a = strs(&["PER", "O", "O", "LOC"]);
        let b = strs(&["PER", "O", "LOC", "LOC"]);
        let kappa = cohen_kappa(&a, &b).unwrap();
        assert!((kappa - 7.0 / 11.0).abs() < 1e-9);
    }

    #[test]
    fn kappa_identical_and_symmetric() {
        let a = strs(&["A", "B", "A"]);
        assert!((cohen_kappa(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = strs(&["B", "B", "A"]);
        assert!((cohen_kappa(&a, &b).unwrap() - cohen_kappa(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate() {
        let a = strs(&["X", "X"]);
        // Identical constant sequences: full agreement.
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        // p_e = 1 but sequences differ is an error. This needs both
        // marginals concentrated on matching single labels, which forces
        // identity, so exercise the empty-input error instead.
        assert!(cohen_kappa::<String, String>(&[], &[]).is_err());
    }

    #[test]
    fn pairwise_f1_hand_count() {
        let a = strs(&["B-PER", "O", "O", "B-LOC"]);
        let b = strs(&["B-PER", "O", "B-LOC", "B-LOC"]);
        let f1 = pairwise_f1_no_o(&a, &b).unwrap();
        assert!((f1 - 0.8).abs() < 1e-12);
        assert!((pairwise_f1_no_o(&b, &a).unwrap() - f1).abs() < 1e-15);
    }

    #[test]
    fn pairwise_f1_identical() {
        let a = strs(&["B-PER", "O"]);
        assert_eq!(pairwise_f1_no_o(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iaa_three_annotators() {
        let ann = vec![
            strs(&["PER", "O", "O", "LOC"]),
            strs(&["PER", "O", "LOC", "LOC"]),
            strs(&["PER", "O", "O", "LOC"]),
        ];
        let report = iaa_report(&ann).unwrap();
        let kappa = report.get("kappa_all_tokens").unwrap();
        assert_eq!(kappa.trials.len(), 3);
        // Pairs (0,1) and (1,2) reproduce the worked 7/11 value; (0,2) is 1.
        assert!(kappa.trials.iter().any(|&v| (v - 7.0 / 11.0).abs() < 1e-9));
        assert!(kappa.trials.iter().any(|&v| (v - 1.0).abs() < 1e-12));
        assert!(report.get("kappa_annotated_tokens").is_some());
    }

    #[test]
    fn iaa_identical_pair() {
        let ann = vec![strs(&["B-PER", "O"]), strs(&["B-PER", "O"])];
        let report = iaa_report(&ann).unwrap();
        assert_eq!(report.get("kappa_all_tokens").unwrap().mean, 1.0);
        assert_eq!(report.get("pairwise_f1_no_o").unwrap().mean, 1.0);
    }

    #[test]
    fn aggregate_hand_values() {
        let (mean, std) = aggregate_trials(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((mean - 3.0).abs() < 1e-12);
        assert!((std - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate_trials(&[7.0]).unwrap(), (7.0, 0.0));
        let (_, std) = aggregate_trials(&[4.0; 6]).unwrap();
        assert_eq!(std, 0.0);
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn report_serializes() {
        let mut r = MetricsReport::default();
        r.insert("f1", MetricValue::from_trials(vec![0.5, 0.7]).unwrap());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("trials"));
        assert!(r.to_table().contains("f1"));
    }
}
