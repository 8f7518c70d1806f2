//! Subject-independent evaluation: fold plans, confusion matrices,
//! cross-validation runs, cross-dataset transfer and report tables.
//!
//! Pooled accuracy is the trace of the summed confusion matrix over its
//! total; it weights folds by their size. The fold mean weights every fold
//! equally. Both are reported; they differ whenever fold sizes differ.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::expression::Expression;
use crate::inference::ensemble_vote;
use crate::landmarks::Feature;
use crate::network::{Network, NetworkKind};
use crate::preprocess::Enhancement;
use crate::training::{
    landmark_l1, mean_predictor_l1, predict_in_batches, train_full_pipeline, EpochMetrics, PipelineKind, TrainConfig,
    TrainingSet,
};

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<Expression>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<Expression>) -> Self {
        let c = classes.len();
        Self {
            classes,
            counts: vec![0; c * c],
        }
    }

    pub fn from_predictions(classes: Vec<Expression>, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            m.record(a, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let c = self.size();
        if actual >= c || predicted >= c {
            return Err(Error::InvalidArgument(format!(
                "class index ({actual}, {predicted}) outside {c} classes"
            )));
        }
        self.counts[actual * c + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> &[Expression] {
        &self.classes
    }

    pub fn size(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.size() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.get(i, i)).sum()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.size().max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let c = self.size();
        (0..c).map(|j| (0..c).map(|i| self.get(i, j)).sum()).collect()
    }

    /// Element-wise sum.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::ClassMismatch(format!(
                "cannot add matrices over {:?} and {:?}",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `actual,<classes...>` header followed by one row per actual class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual");
        for c in &self.classes {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            write!(s, "{c}").unwrap();
            for j in 0..self.size() {
                write!(s, ",{}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.classes.iter().map(|c| c.name()).collect();
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
        write!(f, "{:>w$}", "")?;
        for n in &names {
            write!(f, " {n:>w$}")?;
        }
        writeln!(f)?;
        for (i, n) in names.iter().enumerate() {
            write!(f, "{n:>w$}")?;
            for j in 0..self.size() {
                write!(f, " {:>w$}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Sums per-fold matrices.
pub fn aggregate_folds(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidArgument("no matrices to aggregate".into()))?;
    let mut total = ConfusionMatrix::new(first.classes.clone());
    for m in matrices {
        total.add(m)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    fn from_test_groups(all: &[String], groups: Vec<Vec<String>>) -> Result<Self> {
        let folds = groups
            .into_iter()
            .map(|test| {
                let train = all.iter().filter(|s| !test.contains(s)).cloned().collect();
                Fold { train, test }
            })
            .collect();
        let plan = Self { folds };
        plan.check_independence()?;
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// No fold shares a subject between train and test, and every subject
    /// is tested exactly once.
    pub fn check_independence(&self) -> Result<()> {
        let mut tested = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            if let Some(s) = f.test.iter().find(|s| f.train.contains(s)) {
                return Err(Error::InvalidArgument(format!("fold {i}: subject `{s}` in both train and test")));
            }
            for s in &f.test {
                if !tested.insert(s.clone()) {
                    return Err(Error::InvalidArgument(format!("subject `{s}` tested in more than one fold")));
                }
            }
        }
        Ok(())
    }

    /// Manifest row indices `(train, test)` of fold `i`.
    pub fn split(&self, i: usize, manifest: &Manifest) -> (Vec<usize>, Vec<usize>) {
        let fold = &self.folds[i];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (k, s) in manifest.samples.iter().enumerate() {
            if fold.test.contains(&s.subject_id) {
                test.push(k);
            } else if fold.train.contains(&s.subject_id) {
                train.push(k);
            }
        }
        (train, test)
    }

    /// `fold.<i>.test = a,b,c` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(s, "fold.{i}.test = {}", f.test.join(",")).unwrap();
        }
        s
    }
}

fn sorted_unique(subjects: &[String]) -> Vec<String> {
    subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Sorts subjects ascending and cuts them into `k` test groups of
/// `group_size`; the last group takes whatever remains.
pub fn make_kfold_by_subject(subjects: &[String], k: usize, group_size: usize) -> Result<FoldPlan> {
    let all = sorted_unique(subjects);
    if k == 0 || group_size == 0 {
        return Err(Error::InvalidArgument("k and group size must be at least 1".into()));
    }
    if k > all.len() {
        return Err(Error::InvalidArgument(format!("{k} folds requested for {} subjects", all.len())));
    }
    if (k - 1) * group_size >= all.len() {
        return Err(Error::InvalidArgument(format!(
            "{k} groups of {group_size} leave the last fold empty with {} subjects",
            all.len()
        )));
    }
    let mut groups: Vec<Vec<String>> = all.chunks(group_size).take(k - 1).map(<[String]>::to_vec).collect();
    groups.push(all[(k - 1) * group_size..].to_vec());
    FoldPlan::from_test_groups(&all, groups)
}

/// One fold per subject.
pub fn make_loso(subjects: &[String]) -> Result<FoldPlan> {
    let all = sorted_unique(subjects);
    if all.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            all.len()
        )));
    }
    let groups = all.iter().map(|s| vec![s.clone()]).collect();
    FoldPlan::from_test_groups(&all, groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub matrix: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.matrix.accuracy()
    }
}

/// Per-model `[N, C]` probabilities, in f64.
fn model_probabilities(nets: &[Network<f32>], set: &TrainingSet) -> Result<Vec<Vec<Vec<f64>>>> {
    let size = nets[0].spec.input_size;
    if let Some(n) = nets.iter().find(|n| n.spec.input_size != size) {
        return Err(Error::InvalidArgument(format!(
            "mixed input sizes {size} and {} in one ensemble",
            n.spec.input_size
        )));
    }
    let inputs = set.inputs(size)?;
    nets.iter()
        .map(|net| {
            let p = predict_in_batches(net, &inputs, |n, x| n.probabilities(x))?;
            Ok((0..set.len()).map(|i| p.row(i).iter().map(|&v| v as f64).collect()).collect())
        })
        .collect()
}

/// Tallies argmax predictions of one network (a one-element slice) or the
/// summed-softmax ensemble of several.
pub fn evaluate(nets: &[Network<f32>], set: &TrainingSet) -> Result<Evaluation> {
    let first = nets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no networks to evaluate".into()))?;
    if set.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    for n in nets {
        if n.spec.classes != set.classes {
            return Err(Error::ClassMismatch(format!(
                "network classes {:?} differ from dataset classes {:?}",
                n.spec.classes, set.classes
            )));
        }
    }
    let probs = model_probabilities(nets, set)?;
    let predictions = (0..set.len())
        .map(|i| {
            let per: Vec<Vec<f64>> = probs.iter().map(|p| p[i].clone()).collect();
            Ok(ensemble_vote(&per)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = ConfusionMatrix::from_predictions(first.spec.classes.clone(), &set.labels(), &predictions)?;
    Ok(Evaluation { matrix, predictions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossDatasetReport {
    /// Over the source classes; rows of classes absent from the target
    /// stay empty.
    pub evaluation: Evaluation,
    pub evaluated: usize,
    /// Target samples whose class the source networks cannot predict.
    pub dropped: usize,
    pub dropped_classes: Vec<Expression>,
}

impl CrossDatasetReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "evaluated = {}", self.evaluated).unwrap();
        writeln!(s, "dropped = {}", self.dropped).unwrap();
        let dropped: Vec<&str> = self.dropped_classes.iter().map(|c| c.name()).collect();
        writeln!(s, "dropped_classes = {}", dropped.join(",")).unwrap();
        writeln!(s, "accuracy = {:.4}", self.evaluation.accuracy()).unwrap();
        write!(s, "\n{}", self.evaluation.matrix).unwrap();
        s
    }
}

/// Evaluates networks on a dataset with a different label set. Labels are
/// matched by class name; samples of classes the networks do not know are
/// dropped and counted.
pub fn cross_dataset_eval(nets: &[Network<f32>], target: &TrainingSet) -> Result<CrossDatasetReport> {
    let source = &nets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no networks to evaluate".into()))?
        .spec
        .classes;
    let mapping: Vec<Option<usize>> = target
        .classes
        .iter()
        .map(|c| source.iter().position(|s| s == c))
        .collect();
    if mapping.iter().all(Option::is_none) {
        return Err(Error::ClassMismatch(format!(
            "no class shared between {source:?} and {:?}",
            target.classes
        )));
    }
    let dropped_classes: Vec<Expression> = target
        .classes
        .iter()
        .zip(&mapping)
        .filter(|(_, m)| m.is_none())
        .map(|(c, _)| *c)
        .collect();
    let samples: Vec<_> = target
        .samples
        .iter()
        .filter_map(|s| {
            mapping[s.label].map(|label| {
                let mut s = s.clone();
                s.label = label;
                s
            })
        })
        .collect();
    let dropped = target.len() - samples.len();
    let remapped = TrainingSet {
        classes: source.clone(),
        samples,
    };
    let evaluation = evaluate(nets, &remapped)?;
    Ok(CrossDatasetReport {
        evaluated: remapped.len(),
        evaluation,
        dropped,
        dropped_classes,
    })
}

/// One accuracy column of the report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Column {
    Baseline,
    FullTransfer,
    Part(Feature),
    Ensemble,
}

impl Column {
    /// Report order.
    pub fn all() -> Vec<Column> {
        let mut v = vec![Column::Baseline, Column::FullTransfer];
        v.extend(Feature::ALL.iter().map(|&f| Column::Part(f)));
        v.push(Column::Ensemble);
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::Baseline => "Baseline",
            Column::FullTransfer => "FTL",
            Column::Part(Feature::Eyebrows) => "Eyebrows",
            Column::Part(Feature::Eyes) => "Eyes",
            Column::Part(Feature::Nose) => "Nose",
            Column::Part(Feature::Mouth) => "Mouth",
            Column::Part(Feature::Jaw) => "Jaw",
            Column::Ensemble => "EL",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Held-out landmark error of a phase-1 model against the mean predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkFit {
    pub kind: NetworkKind,
    pub l1: f64,
    pub mean_predictor_l1: f64,
}

impl LandmarkFit {
    /// How many times smaller the model error is than the mean predictor's.
    pub fn ratio(&self) -> f64 {
        self.mean_predictor_l1 / self.l1
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub index: usize,
    pub test_subjects: Vec<String>,
    pub columns: Vec<(Column, ConfusionMatrix)>,
    pub landmarks: Vec<LandmarkFit>,
    /// Training curves keyed by network name.
    pub metrics: Vec<(String, Vec<EpochMetrics>)>,
}

impl FoldResult {
    pub fn matrix(&self, column: Column) -> Option<&ConfusionMatrix> {
        self.columns.iter().find(|(c, _)| *c == column).map(|(_, m)| m)
    }
}

#[derive(Debug, Clone)]
pub struct CrossValRun {
    pub dataset: String,
    pub folds: Vec<FoldResult>,
}

/// Trains the requested pipelines on every fold and evaluates them on the
/// fold's held-out subjects. Phase-1 landmark error is measured on the
/// held-out subjects as well. `on_fold` sees each result as it completes.
pub fn run_crossval(
    manifest: &Manifest,
    plan: &FoldPlan,
    pipelines: &[PipelineKind],
    config: &TrainConfig,
    mut on_fold: impl FnMut(&FoldResult),
) -> Result<CrossValRun> {
    plan.check_independence()?;
    let enhancement: Enhancement = config.enhancement;
    let mut folds = Vec::with_capacity(plan.len());
    for i in 0..plan.len() {
        let (train_idx, test_idx) = plan.split(i, manifest);
        let train = TrainingSet::from_manifest(manifest, &train_idx, enhancement)?;
        let test = TrainingSet::from_manifest(manifest, &test_idx, enhancement)?;
        let mut result = FoldResult {
            index: i,
            test_subjects: plan.folds[i].test.clone(),
            columns: Vec::new(),
            landmarks: Vec::new(),
            metrics: Vec::new(),
        };
        for &pipeline in pipelines {
            let outcomes = train_full_pipeline(&train, pipeline, 1, config)?;
            for o in &outcomes {
                let kind = o.network.spec.kind;
                result.metrics.push((kind.to_string(), o.metrics.clone()));
                if let Some(p1) = &o.phase1 {
                    let idx = kind.landmark_indices().expect("two-phase networks have landmark targets");
                    result.landmarks.push(LandmarkFit {
                        kind,
                        l1: landmark_l1(p1, &test)?,
                        mean_predictor_l1: mean_predictor_l1(&train, &test, &idx)?,
                    });
                }
            }
            let nets: Vec<Network<f32>> = outcomes.into_iter().map(|o| o.network).collect();
            match pipeline {
                PipelineKind::Baseline => {
                    result.columns.push((Column::Baseline, evaluate(&nets, &test)?.matrix));
                }
                PipelineKind::FullTransfer => {
                    result.columns.push((Column::FullTransfer, evaluate(&nets, &test)?.matrix));
                }
                PipelineKind::PartEnsemble => {
                    for (net, &f) in nets.iter().zip(Feature::ALL.iter()) {
                        let m = evaluate(std::slice::from_ref(net), &test)?.matrix;
                        result.columns.push((Column::Part(f), m));
                    }
                    result.columns.push((Column::Ensemble, evaluate(&nets, &test)?.matrix));
                }
            }
        }
        result.columns.sort_by_key(|(c, _)| *c);
        on_fold(&result);
        folds.push(result);
    }
    Ok(CrossValRun {
        dataset: manifest.root.display().to_string(),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub column: Column,
    /// Sum of the per-fold matrices.
    pub pooled: ConfusionMatrix,
    pub fold_accuracies: Vec<f64>,
}

impl ColumnSummary {
    pub fn fold_mean(&self) -> f64 {
        self.fold_accuracies.iter().sum::<f64>() / self.fold_accuracies.len().max(1) as f64
    }
}

/// Accuracy table with one column per trained model family.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dataset: String,
    pub columns: Vec<ColumnSummary>,
    pub landmarks: Vec<LandmarkFit>,
}

pub fn report(run: &CrossValRun) -> Result<RunReport> {
    let mut columns = Vec::new();
    for column in Column::all() {
        let per_fold: Vec<&ConfusionMatrix> = run.folds.iter().filter_map(|f| f.matrix(column)).collect();
        if per_fold.is_empty() {
            continue;
        }
        let owned: Vec<ConfusionMatrix> = per_fold.iter().map(|m| (*m).clone()).collect();
        columns.push(ColumnSummary {
            column,
            pooled: aggregate_folds(&owned)?,
            fold_accuracies: per_fold.iter().map(|m| m.accuracy()).collect(),
        });
    }
    Ok(RunReport {
        dataset: run.dataset.clone(),
        columns,
        landmarks: run.folds.iter().flat_map(|f| f.landmarks.iter().copied()).collect(),
    })
}

impl RunReport {
    pub fn column(&self, column: Column) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.column == column)
    }

    /// Accuracy table in percent, then pooled confusion matrices.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dataset: {}", self.dataset).unwrap();
        write!(s, "{:<12}", "").unwrap();
        for c in &self.columns {
            write!(s, " {:>9}", c.column.name()).unwrap();
        }
        s.push('\n');
        let rows: [(&str, fn(&ColumnSummary) -> f64); 2] =
            [("pooled", |c| c.pooled.accuracy()), ("fold mean", ColumnSummary::fold_mean)];
        for (label, f) in rows {
            write!(s, "{label:<12}").unwrap();
            for c in &self.columns {
                write!(s, " {:>9.2}", 100.0 * f(c)).unwrap();
            }
            s.push('\n');
        }
        if !self.landmarks.is_empty() {
            writeln!(s, "\nphase-1 landmark L1 (held-out subjects)").unwrap();
            for l in &self.landmarks {
                writeln!(
                    s,
                    "{:<16} l1 {:.4}  mean predictor {:.4}  ratio {:.2}",
                    l.kind.to_string(),
                    l.l1,
                    l.mean_predictor_l1,
                    l.ratio()
                )
                .unwrap();
            }
        }
        for c in &self.columns {
            write!(s, "\n{} pooled confusion (rows actual, columns predicted)\n{}", c.column, c.pooled).unwrap();
        }
        s
    }

    /// `column,pooled_accuracy,fold_mean_accuracy,fold_0,...`.
    pub fn to_csv(&self) -> String {
        let folds = self.columns.iter().map(|c| c.fold_accuracies.len()).max().unwrap_or(0);
        let mut s = String::from("column,pooled_accuracy,fold_mean_accuracy");
        for i in 0..folds {
            write!(s, ",fold_{i}").unwrap();
        }
        s.push('\n');
        for c in &self.columns {
            write!(s, "{},{},{}", c.column, c.pooled.accuracy(), c.fold_mean()).unwrap();
            for a in &c.fold_accuracies {
                write!(s, ",{a}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Expression::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:03}")).collect()
    }

    #[test]
    fn kfold_remainder_goes_last() {
        let plan = make_kfold_by_subject(&ids(20), 2, 10).unwrap();
        assert_eq!(plan.folds.iter().map(|f| f.test.len()).collect::<Vec<_>>(), [10, 10]);
        let plan = make_kfold_by_subject(&ids(7), 3, 2).unwrap();
        assert_eq!(plan.folds.iter().map(|f| f.test.len()).collect::<Vec<_>>(), [2, 2, 3]);
    }

    #[test]
    fn kfold_rejects_impossible_plans() {
        assert!(make_kfold_by_subject(&ids(3), 4, 1).is_err());
        assert!(make_kfold_by_subject(&ids(10), 3, 5).is_err());
        assert!(make_loso(&ids(1)).is_err());
    }

    #[test]
    fn kfold_sorts_ids() {
        let subjects = vec!["b".to_string(), "a".into(), "d".into(), "c".into()];
        let plan = make_kfold_by_subject(&subjects, 2, 2).unwrap();
        assert_eq!(plan.folds[0].test, ["a", "b"]);
        assert_eq!(plan.folds[0].train, ["c", "d"]);
    }

    #[test]
    fn matrix_accuracy_and_sums() {
        let m = ConfusionMatrix::from_predictions(vec![Happy, Sad], &[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0]).unwrap();
        assert_eq!(m.row_sums(), [2, 3]);
        assert_eq!(m.column_sums(), [2, 3]);
        assert_eq!(m.trace(), 3);
        assert!((m.accuracy() - 0.6).abs() < 1e-12);
        assert_eq!(m.to_csv(), "actual,Happy,Sad\nHappy,1,1\nSad,1,2\n");
    }

    #[test]
    fn aggregate_rejects_mixed_classes() {
        let a = ConfusionMatrix::new(vec![Happy, Sad]);
        let b = ConfusionMatrix::new(vec![Sad, Happy]);
        assert!(matches!(aggregate_folds(&[a, b]), Err(Error::ClassMismatch(_))));
        assert!(aggregate_folds(&[]).is_err());
    }
}
