//! Accuracy, confusion matrices, penetration rate, stratified folds,
//! rejection accounting and the template-relabelling robustness protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::baseline::Rejection;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::synthgen::{FingerprintRecord, HenryClass};
use crate::tensor::Tensor;

pub const CLASSES: usize = 5;

/// Counts with rows = true class and columns = predicted class, in `A,L,R,T,W` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASSES]; CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; CLASSES]; CLASSES]) -> Self {
        Self { counts }
    }

    pub fn from_labels(truth: &[HenryClass], predicted: &[HenryClass]) -> Result<Self> {
        let t: Vec<usize> = truth.iter().map(|c| c.index()).collect();
        let p: Vec<usize> = predicted.iter().map(|c| c.index()).collect();
        Self::from_indices(&t, &p)
    }

    pub fn from_indices(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= CLASSES || p >= CLASSES {
                return Err(Error::invalid(format!("unknown class index {}", t.max(p))));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for i in 0..CLASSES {
            for j in 0..CLASSES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn correct(&self) -> u64 {
        (0..CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// `None` for classes without test records.
    pub fn class_accuracies(&self) -> [Option<f64>; CLASSES] {
        let rows = self.row_sums();
        std::array::from_fn(|i| (rows[i] > 0).then(|| self.counts[i][i] as f64 / rows[i] as f64))
    }

    /// Priors from row proportions, accuracies from the diagonal. Empty rows
    /// get `q = 1`; their prior is zero so they never contribute.
    pub fn class_stats(&self) -> Result<ClassStats> {
        let n = self.total();
        if n == 0 {
            return Err(Error::invalid("empty confusion matrix"));
        }
        let rows = self.row_sums();
        let p = rows.iter().map(|&r| r as f64 / n as f64).collect();
        let q = self.class_accuracies().iter().map(|a| a.unwrap_or(1.0)).collect();
        ClassStats::new(p, q)
    }

    /// CSV block with a `true\pred` corner cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in HenryClass::ALL {
            write!(s, ",{}", c.code()).unwrap();
        }
        s.push('\n');
        for (i, c) in HenryClass::ALL.iter().enumerate() {
            write!(s, "{}", c.code()).unwrap();
            for v in self.counts[i] {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Class priors `p` and per-class accuracies `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ClassStats {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::invalid("p and q must be non-empty and of equal length"));
        }
        for (&pi, &qi) in p.iter().zip(&q) {
            check_unit(pi, "p_i")?;
            check_unit(qi, "q_i")?;
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("priors sum to {s}, not 1")));
        }
        Ok(Self { p, q })
    }

    pub fn classes(&self) -> usize {
        self.p.len()
    }

    /// Sum of `p_i q_i`.
    pub fn overall_accuracy(&self) -> f64 {
        self.p.iter().zip(&self.q).map(|(p, q)| p * q).sum()
    }
}

fn check_unit(v: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Sign convention of the per-class penetration formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PenetrationFormula {
    /// `1 - q (1 - p)`: a correct probe searches its bin, a wrong one the whole database.
    #[default]
    Corrected,
    /// `1 + q (1 - p)`, kept only to document the misprinted sign. Never used in reports.
    AsPrinted,
}

pub fn penetration_rate_class(p: f64, q: f64) -> Result<f64> {
    penetration_rate_class_with(p, q, PenetrationFormula::Corrected)
}

pub fn penetration_rate_class_with(p: f64, q: f64, formula: PenetrationFormula) -> Result<f64> {
    check_unit(p, "p_i")?;
    check_unit(q, "q_i")?;
    Ok(match formula {
        // Equal to 1 - q (1 - p); this form returns p exactly when q = 1.
        PenetrationFormula::Corrected => p + (1.0 - q) * (1.0 - p),
        PenetrationFormula::AsPrinted => 1.0 + q * (1.0 - p),
    })
}

/// Prior-weighted mean of the per-class penetration rates.
pub fn penetration_rate_avg(stats: &ClassStats) -> Result<f64> {
    penetration_rate_avg_with(stats, PenetrationFormula::Corrected)
}

pub fn penetration_rate_avg_with(stats: &ClassStats, formula: PenetrationFormula) -> Result<f64> {
    let s: f64 = stats.p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("priors sum to {s}, not 1")));
    }
    stats
        .p
        .iter()
        .zip(&stats.q)
        .map(|(&p, &q)| Ok(p * penetration_rate_class_with(p, q, formula)?))
        .sum()
}

/// Indices into the record list for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Finger-grouped stratified k-fold: each class's fingers are shuffled and
/// dealt round-robin, continuing the deal across classes so fold sizes stay
/// balanced. Every class present needs at least `k` fingers.
pub fn stratified_kfold(records: &[FingerprintRecord], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    let mut finger_class: BTreeMap<u32, HenryClass> = BTreeMap::new();
    for r in records {
        match finger_class.insert(r.finger_id, r.class) {
            Some(c) if c != r.class => {
                return Err(Error::invalid(format!("finger {} has two classes", r.finger_id)));
            }
            _ => {}
        }
    }
    let mut by_class: [Vec<u32>; CLASSES] = Default::default();
    for (&f, c) in &finger_class {
        by_class[c.index()].push(f);
    }
    let mut fold_of: BTreeMap<u32, usize> = BTreeMap::new();
    let mut next = 0;
    for (ci, fingers) in by_class.iter_mut().enumerate() {
        if fingers.is_empty() {
            continue;
        }
        if fingers.len() < k {
            return Err(Error::Stratification(format!(
                "class {} has {} fingers, fewer than {k} folds",
                HenryClass::ALL[ci],
                fingers.len()
            )));
        }
        RngStream::new(seed, 1000 + ci as u64).shuffle(fingers);
        for &f in fingers.iter() {
            fold_of.insert(f, next);
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train) = (0..records.len()).partition(|&i| fold_of[&records[i].finger_id] == fold);
            Fold { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Class(HenryClass),
    Rejected(Rejection),
}

impl Prediction {
    pub fn class(self) -> Option<HenryClass> {
        match self {
            Prediction::Class(c) => Some(c),
            Prediction::Rejected(_) => None,
        }
    }
}

/// A trainable classifier. `predict` must not depend on call order.
pub trait Classifier: Sync {
    fn name(&self) -> String;

    fn fit(&mut self, train: &[&FingerprintRecord]) -> Result<()>;

    fn predict(&self, image: &Tensor<f32>) -> Result<Prediction>;

    fn predict_all(&self, records: &[&FingerprintRecord]) -> Result<Vec<Prediction>> {
        crate::par_map(records, |r| self.predict(&r.image))
            .into_iter()
            .collect()
    }
}

/// Fraction of impressions the extractor rejects; zero for an empty set.
pub fn rejection_rate(predictions: &[Prediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .filter(|p| matches!(p, Prediction::Rejected(_)))
        .count() as f64
        / predictions.len() as f64
}

/// Which labels define the groups behind the penetration priors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PriorGroups {
    #[default]
    Relabeled,
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    /// Inputs predicted as their finger's relabeled class, over counted inputs.
    pub accuracy: f64,
    /// Fingers whose template prediction differs from the manual label.
    pub relabeled_changes: usize,
    pub fingers_total: usize,
    /// Fingers dropped because some impression was rejected.
    pub fingers_excluded: usize,
    pub rejection_rate: f64,
    /// Rows = relabeled class, columns = prediction, counted inputs only.
    pub confusion: ConfusionMatrix,
    pub stats: ClassStats,
    pub penetration_rate: f64,
    pub train_seconds: f64,
    pub test_seconds: f64,
}

/// Trains on the templates with their manual labels, relabels every finger to
/// the class predicted for its template, then scores the remaining
/// impressions against the relabeled classes. Fingers with any rejected
/// impression are left out of accuracy and penetration.
pub fn robustness_protocol(
    templates: &[&FingerprintRecord],
    inputs: &[&FingerprintRecord],
    classifier: &mut dyn Classifier,
    groups: PriorGroups,
) -> Result<RobustnessReport> {
    let mut template_of: BTreeMap<u32, &FingerprintRecord> = BTreeMap::new();
    for t in templates {
        if template_of.insert(t.finger_id, t).is_some() {
            return Err(Error::Protocol(format!(
                "finger {} has two templates",
                t.finger_id
            )));
        }
    }
    if let Some(r) = inputs.iter().find(|r| !template_of.contains_key(&r.finger_id)) {
        return Err(Error::Protocol(format!(
            "input finger {} has no template",
            r.finger_id
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Protocol("no input impressions".into()));
    }

    let clock = std::time::Instant::now();
    classifier.fit(templates)?;
    let train_seconds = clock.elapsed().as_secs_f64();

    let clock = std::time::Instant::now();
    let template_pred = classifier.predict_all(templates)?;
    let input_pred = classifier.predict_all(inputs)?;
    let test_seconds = clock.elapsed().as_secs_f64();

    let mut relabel: BTreeMap<u32, Option<HenryClass>> = BTreeMap::new();
    let mut relabeled_changes = 0;
    for (t, p) in templates.iter().zip(&template_pred) {
        if p.class().is_some_and(|c| c != t.class) {
            relabeled_changes += 1;
        }
        relabel.insert(t.finger_id, p.class());
    }
    let mut excluded: BTreeSet<u32> = relabel
        .iter()
        .filter(|(_, c)| c.is_none())
        .map(|(&f, _)| f)
        .collect();
    for (r, p) in inputs.iter().zip(&input_pred) {
        if p.class().is_none() {
            excluded.insert(r.finger_id);
        }
    }

    let all_pred: Vec<Prediction> = template_pred.iter().chain(&input_pred).copied().collect();
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut group = Vec::new();
    for (r, p) in inputs.iter().zip(&input_pred) {
        if excluded.contains(&r.finger_id) {
            continue;
        }
        let relabeled = relabel[&r.finger_id].expect("excluded fingers skipped");
        truth.push(relabeled);
        predicted.push(p.class().expect("excluded fingers skipped"));
        group.push(match groups {
            PriorGroups::Relabeled => relabeled,
            PriorGroups::Manual => r.class,
        });
    }
    if truth.is_empty() {
        return Err(Error::Protocol("every finger has a rejected impression".into()));
    }
    let confusion = ConfusionMatrix::from_labels(&truth, &predicted)?;
    let stats = group_stats(&group, &truth, &predicted)?;
    Ok(RobustnessReport {
        accuracy: confusion.accuracy(),
        relabeled_changes,
        fingers_total: template_of.len(),
        fingers_excluded: excluded.len(),
        rejection_rate: rejection_rate(&all_pred),
        confusion,
        penetration_rate: penetration_rate_avg(&stats)?,
        stats,
        train_seconds,
        test_seconds,
    })
}

/// Priors from group sizes, accuracies as the fraction of `truth == predicted` per group.
fn group_stats(group: &[HenryClass], truth: &[HenryClass], predicted: &[HenryClass]) -> Result<ClassStats> {
    let mut size = [0u64; CLASSES];
    let mut hits = [0u64; CLASSES];
    for ((g, t), p) in group.iter().zip(truth).zip(predicted) {
        size[g.index()] += 1;
        hits[g.index()] += (t == p) as u64;
    }
    let n = group.len() as f64;
    let p = size.iter().map(|&s| s as f64 / n).collect();
    let q = size
        .iter()
        .zip(&hits)
        .map(|(&s, &h)| if s == 0 { 1.0 } else { h as f64 / s as f64 })
        .collect();
    ClassStats::new(p, q)
}

/// Accuracy, penetration and runtimes of one evaluation, with the settings
/// needed to rerun it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Echoed run settings (`seed`, `topology`, ...), in insertion order.
    pub settings: Vec<(String, String)>,
    pub confusion: ConfusionMatrix,
    pub rejection_rate: f64,
    pub fold_accuracies: Vec<f64>,
    /// Extra result lines such as robustness counts.
    pub extra: Vec<(String, String)>,
    pub train_seconds: f64,
    pub test_seconds: f64,
}

impl EvaluationReport {
    pub fn new(confusion: ConfusionMatrix) -> Self {
        Self {
            settings: Vec::new(),
            confusion,
            rejection_rate: 0.0,
            fold_accuracies: Vec::new(),
            extra: Vec::new(),
            train_seconds: 0.0,
            test_seconds: 0.0,
        }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.push((key.to_string(), value.to_string()));
        self
    }

    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn penetration_rate(&self) -> Result<f64> {
        penetration_rate_avg(&self.confusion.class_stats()?)
    }

    /// Mean and population standard deviation of the fold accuracies.
    pub fn fold_summary(&self) -> Option<(f64, f64)> {
        if self.fold_accuracies.is_empty() {
            return None;
        }
        let n = self.fold_accuracies.len() as f64;
        let mean = self.fold_accuracies.iter().sum::<f64>() / n;
        let var = self
            .fold_accuracies
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / n;
        Some((mean, var.sqrt()))
    }

    /// Ordered `(key, value)` result lines. Keys starting with `runtime.` vary
    /// between otherwise identical runs.
    pub fn entries(&self) -> Result<Vec<(String, String)>> {
        let mut e: Vec<(String, String)> = self.settings.clone();
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        put("records", self.confusion.total().to_string());
        put("accuracy", format!("{:.6}", self.accuracy()));
        for (c, a) in HenryClass::ALL.iter().zip(self.confusion.class_accuracies()) {
            put(
                &format!("accuracy.{}", c.code()),
                a.map_or("-".to_string(), |a| format!("{a:.6}")),
            );
        }
        put("rejection_rate", format!("{:.6}", self.rejection_rate));
        put("penetration_rate", format!("{:.6}", self.penetration_rate()?));
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            put(&format!("fold.{}.accuracy", i + 1), format!("{a:.6}"));
        }
        if let Some((m, s)) = self.fold_summary() {
            put("folds.mean_accuracy", format!("{m:.6}"));
            put("folds.stddev_accuracy", format!("{s:.6}"));
        }
        for (k, v) in &self.extra {
            put(k, v.clone());
        }
        put("runtime.train_seconds", format!("{:.3}", self.train_seconds));
        put("runtime.test_seconds", format!("{:.3}", self.test_seconds));
        Ok(e)
    }

    /// `key: value` lines, a blank line, then `confusion:` and the matrix CSV.
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        for (k, v) in self.entries()? {
            writeln!(s, "{k}: {v}").unwrap();
        }
        s.push_str("\nconfusion:\n");
        s.push_str(&self.confusion.to_csv());
        Ok(s)
    }

    /// `key,value` CSV; confusion cells appear as `confusion.<true>.<pred>`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut rows = self.entries()?;
        for (i, t) in HenryClass::ALL.iter().enumerate() {
            for (j, p) in HenryClass::ALL.iter().enumerate() {
                rows.push((
                    format!("confusion.{}.{}", t.code(), p.code()),
                    self.confusion.counts[i][j].to_string(),
                ));
            }
        }
        let err = |e: csv::Error| Error::InvalidArgument(format!("report CSV: {e}"));
        w.write_record(["key", "value"]).map_err(err)?;
        for (k, v) in rows {
            w.write_record([k, v]).map_err(err)?;
        }
        String::from_utf8(
            w.into_inner()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        )
        .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Parses the confusion block written by [`ConfusionMatrix::to_csv`].
pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty confusion block"))?;
    if header.split(',').count() != CLASSES + 1 {
        return Err(Error::invalid("confusion header must have 6 columns"));
    }
    let mut counts = [[0u64; CLASSES]; CLASSES];
    for (i, row) in counts.iter_mut().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| Error::invalid("confusion block too short"))?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != CLASSES + 1 || cells[0] != HenryClass::ALL[i].code().to_string() {
            return Err(Error::invalid(format!("bad confusion row {line:?}")));
        }
        for (j, c) in cells[1..].iter().enumerate() {
            row[j] = c
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad count {c:?}")))?;
        }
    }
    Ok(ConfusionMatrix { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use HenryClass::*;

    fn rec(finger: u32, imp: u32, class: HenryClass) -> FingerprintRecord {
        FingerprintRecord {
            finger_id: finger,
            impression_id: imp,
            class,
            quality: crate::synthgen::Quality::Hq,
            image: Tensor::zeros(&[1, 1, 1]).unwrap(),
        }
    }

    #[test]
    fn per_class_penetration_examples() {
        assert_eq!(penetration_rate_class(0.3, 1.0).unwrap(), 0.3);
        assert_eq!(penetration_rate_class(0.3, 0.0).unwrap(), 1.0);
        assert!((penetration_rate_class(0.2, 0.5).unwrap() - 0.6).abs() < 1e-15);
        assert!(
            (penetration_rate_class_with(0.2, 0.5, PenetrationFormula::AsPrinted).unwrap() - 1.4).abs()
                < 1e-15
        );
        assert!(penetration_rate_class(1.1, 0.5).is_err());
        assert!(penetration_rate_class(0.5, -0.1).is_err());
    }

    #[test]
    fn average_penetration_examples() {
        let s = ClassStats::new(vec![0.2; 5], vec![1.0; 5]).unwrap();
        assert!((penetration_rate_avg(&s).unwrap() - 0.2).abs() < 1e-15);
        let s = ClassStats::new(vec![0.2; 5], vec![0.0; 5]).unwrap();
        assert!((penetration_rate_avg(&s).unwrap() - 1.0).abs() < 1e-15);
        assert!(ClassStats::new(vec![0.3; 5], vec![1.0; 5]).is_err());
        let bad = ClassStats {
            p: vec![0.5, 0.6],
            q: vec![1.0, 1.0],
        };
        assert!(penetration_rate_avg(&bad).is_err());
    }

    #[test]
    fn confusion_from_labels() {
        let m = ConfusionMatrix::from_labels(&[Arch, Whorl, Whorl], &[Arch, Whorl, LeftLoop]).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.counts[4][4], 1);
        assert_eq!(m.counts[4][1], 1);
        assert_eq!(m.row_sums(), [1, 0, 0, 0, 2]);
        assert!(ConfusionMatrix::from_indices(&[0, 7], &[0, 1]).is_err());
        assert!(ConfusionMatrix::from_indices(&[0], &[0, 1]).is_err());
        assert_eq!(parse_confusion_csv(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn single_class_folds_divide_exactly() {
        let recs: Vec<_> = (1..=10).map(|f| rec(f, 1, Whorl)).collect();
        let folds = stratified_kfold(&recs, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
    }

    #[test]
    fn small_class_fails_stratification() {
        let mut recs: Vec<_> = (1..=10).map(|f| rec(f, 1, Whorl)).collect();
        recs.push(rec(11, 1, Arch));
        assert!(matches!(
            stratified_kfold(&recs, 5, 1),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn impressions_of_a_finger_share_a_fold() {
        let recs: Vec<_> = (1..=20)
            .flat_map(|f| (1..=3).map(move |i| rec(f, i, HenryClass::ALL[f as usize % 5])))
            .collect();
        let recs: Vec<_> = recs.into_iter().filter(|r| r.finger_id <= 20).collect();
        for fold in stratified_kfold(&recs, 4, 9).unwrap() {
            let test: BTreeSet<u32> = fold.test.iter().map(|&i| recs[i].finger_id).collect();
            assert!(fold.train.iter().all(|&i| !test.contains(&recs[i].finger_id)));
        }
    }

    struct Fixed(BTreeMap<(u32, u32), Prediction>);

    impl Classifier for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn fit(&mut self, _: &[&FingerprintRecord]) -> Result<()> {
            Ok(())
        }
        fn predict(&self, _: &Tensor<f32>) -> Result<Prediction> {
            unreachable!()
        }
        fn predict_all(&self, records: &[&FingerprintRecord]) -> Result<Vec<Prediction>> {
            Ok(records
                .iter()
                .map(|r| self.0[&(r.finger_id, r.impression_id)])
                .collect())
        }
    }

    #[test]
    fn rejected_fingers_are_excluded() {
        let recs = [
            rec(1, 1, Arch),
            rec(1, 2, Arch),
            rec(2, 1, Whorl),
            rec(2, 2, Whorl),
        ];
        let mut c = Fixed(BTreeMap::from([
            ((1, 1), Prediction::Class(Arch)),
            ((1, 2), Prediction::Rejected(Rejection::LowCoherence)),
            ((2, 1), Prediction::Class(Whorl)),
            ((2, 2), Prediction::Class(LeftLoop)),
        ]));
        let r = robustness_protocol(
            &[&recs[0], &recs[2]],
            &[&recs[1], &recs[3]],
            &mut c,
            PriorGroups::Relabeled,
        )
        .unwrap();
        assert_eq!(r.fingers_excluded, 1);
        assert_eq!(r.confusion.total(), 1);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.rejection_rate, 0.25);
        assert_eq!(r.penetration_rate, 1.0);
    }

    #[test]
    fn missing_template_is_protocol_error() {
        let recs = [rec(1, 1, Arch), rec(2, 2, Arch)];
        let mut c = Fixed(BTreeMap::new());
        assert!(matches!(
            robustness_protocol(&[&recs[0]], &[&recs[1]], &mut c, PriorGroups::Relabeled),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn report_text_carries_confusion_block() {
        let m = ConfusionMatrix::from_labels(&[Arch, LeftLoop], &[Arch, LeftLoop]).unwrap();
        let text = EvaluationReport::new(m).setting("seed", 7).to_text().unwrap();
        assert!(text.starts_with("seed: 7\nrecords: 2\naccuracy: 1.000000\n"));
        assert!(text.contains("penetration_rate: 0.500000\n"));
        let block = text.split("confusion:\n").nth(1).unwrap();
        assert_eq!(parse_confusion_csv(block).unwrap(), m);
        let csv = EvaluationReport::new(m).to_csv().unwrap();
        assert!(csv.starts_with("key,value\n"));
        assert!(csv.contains("confusion.A.A,1\n"));
    }

    fn stats_strategy() -> impl Strategy<Value = ClassStats> {
        (
            prop::collection::vec(0.01f64..1.0, 5),
            prop::collection::vec(0.0f64..=1.0, 5),
        )
            .prop_map(|(w, q)| {
                let s: f64 = w.iter().sum();
                ClassStats::new(w.iter().map(|x| x / s).collect(), q).unwrap()
            })
    }

    proptest! {
        #[test]
        fn penetration_monotone_in_accuracy(s in stats_strategy(), i in 0usize..5, bump in 0.0f64..1.0) {
            let base = penetration_rate_avg(&s).unwrap();
            let mut t = s.clone();
            t.q[i] = (t.q[i] + bump).min(1.0);
            prop_assert!(penetration_rate_avg(&t).unwrap() <= base + 1e-12);
        }

        #[test]
        fn penetration_bounds(s in stats_strategy()) {
            let r = penetration_rate_avg(&s).unwrap();
            let lo = s.p.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(r >= lo - 1e-12 && r <= 1.0 + 1e-12);
        }

        #[test]
        fn accuracy_is_prior_weighted(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let m = ConfusionMatrix::from_indices(&t, &p).unwrap();
            let direct = pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64;
            prop_assert!((m.class_stats().unwrap().overall_accuracy() - direct).abs() < 1e-12);
            prop_assert!((m.accuracy() - direct).abs() < 1e-15);
        }

        #[test]
        fn folds_partition_and_stratify(
            classes in prop::collection::vec(0usize..5, 25..120),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let recs: Vec<_> = classes.iter().enumerate().map(|(i, &c)| rec(i as u32 + 1, 1, HenryClass::ALL[c])).collect();
            let mut counts = [0usize; 5];
            for &c in &classes { counts[c] += 1; }
            match stratified_kfold(&recs, k, seed) {
                Err(_) => prop_assert!(counts.iter().any(|&n| n > 0 && n < k)),
                Ok(folds) => {
                    let mut seen = vec![0; recs.len()];
                    for f in &folds {
                        prop_assert_eq!(f.test.len() + f.train.len(), recs.len());
                        let mut fc = [0usize; 5];
                        for &i in &f.test { seen[i] += 1; fc[recs[i].class.index()] += 1; }
                        for c in 0..5 {
                            prop_assert!((fc[c] as f64 - counts[c] as f64 / k as f64).abs() < 1.0);
                        }
                    }
                    prop_assert!(seen.iter().all(|&s| s == 1));
                }
            }
        }
    }
}
