//! Leave-one-subject-out comparison of the three decoders.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssvep_core::analysis::trials_to_input;
use ssvep_core::cca::{build_reference_bank, cca_classify};
use ssvep_core::combined_cca::{build_prototypes, combined_cca_classify};
use ssvep_core::dataset::{loso_folds, Dataset, LosoFold, Trial};
use ssvep_core::nnet::{train, CompactCnn, ModelConfig, TrainSet};

use crate::config::{RunConfig, Scoring};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cnn,
    Cca,
    CombinedCca,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cnn, Method::Cca, Method::CombinedCca];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cnn => "cnn",
            Method::Cca => "cca",
            Method::CombinedCca => "combined_cca",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s.trim() {
            "cnn" => Ok(Method::Cnn),
            "cca" => Ok(Method::Cca),
            "combined_cca" => Ok(Method::CombinedCca),
            other => Err(HarnessError::UnknownMethod(other.to_string())),
        }
    }

    /// Parses a comma-separated list, keeping order and dropping repeats.
    pub fn parse_list<S: AsRef<str>>(items: &[S]) -> Result<Vec<Self>, HarnessError> {
        let mut out = Vec::new();
        for item in items {
            for part in item.as_ref().split(',').filter(|p| !p.trim().is_empty()) {
                let m = Method::parse(part)?;
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        if out.is_empty() {
            return Err(HarnessError::Config("no methods selected".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] ssvep_core::Error),
    #[error("leakage: trial {index} of test subject {subject} reached a training routine")]
    Leakage { index: usize, subject: usize },
    #[error("unknown method {0:?}; expected cnn, cca or combined_cca")]
    UnknownMethod(String),
    #[error("invalid harness setup: {0}")]
    Config(String),
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_subject: usize,
    /// Scored units: segments, or parent trials under majority vote.
    pub n_test: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indexed like `class_ids`.
    pub confusion: Vec<Vec<u64>>,
    /// Seed used by the fold's training routine, if it has one.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub method: Method,
    pub scoring: Scoring,
    pub class_ids: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Standard error of the mean over folds.
    pub sem: f64,
    pub config_hash: String,
    pub dataset_sha256: Option<String>,
}

impl ClassifierReport {
    fn assemble(
        method: Method,
        scoring: Scoring,
        class_ids: Vec<usize>,
        folds: Vec<FoldResult>,
        config_hash: String,
        dataset_sha256: Option<String>,
    ) -> Self {
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean_accuracy, sem) = mean_sem(&accs);
        Self {
            method,
            scoring,
            class_ids,
            folds,
            mean_accuracy,
            sem,
            config_hash,
            dataset_sha256,
        }
    }
}

pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Everything a fold needs besides its indices.
pub struct Protocol<'a> {
    pub ds: &'a Dataset,
    pub config: &'a RunConfig,
    pub class_ids: Vec<usize>,
}

impl<'a> Protocol<'a> {
    pub fn new(ds: &'a Dataset, config: &'a RunConfig) -> Result<Self, HarnessError> {
        ds.validate()?;
        if ds.layout().is_none() {
            return Err(HarnessError::Config("dataset has no trials".into()));
        }
        Ok(Self {
            ds,
            config,
            class_ids: ds.stimulus.class_ids().collect(),
        })
    }

    fn class_index(&self, class_id: usize) -> Result<usize, HarnessError> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .ok_or(HarnessError::Core(ssvep_core::Error::UnknownClass(class_id)))
    }

    /// Network configuration with the data-dependent fields filled in.
    pub fn network(&self) -> ModelConfig {
        let (c, t, _) = self.ds.layout().expect("checked non-empty");
        ModelConfig {
            channels: c,
            samples: t,
            classes: self.class_ids.len(),
            ..self.config.model.network.clone()
        }
    }

    /// Training-set view that refuses any trial of the held-out subject.
    fn training_trials(&self, fold: &LosoFold) -> Result<Vec<&'a Trial>, HarnessError> {
        fold.train_indices
            .iter()
            .map(|&i| {
                let t = self
                    .ds
                    .trials
                    .get(i)
                    .ok_or_else(|| HarnessError::Config(format!("train index {i} out of range")))?;
                if t.subject == fold.test_subject {
                    Err(HarnessError::Leakage {
                        index: i,
                        subject: fold.test_subject,
                    })
                } else {
                    Ok(t)
                }
            })
            .collect()
    }

    fn test_trials(&self, fold: &LosoFold) -> Result<Vec<&'a Trial>, HarnessError> {
        fold.test_indices
            .iter()
            .map(|&i| match self.ds.trials.get(i) {
                Some(t) if t.subject == fold.test_subject => Ok(t),
                Some(t) => Err(HarnessError::Config(format!(
                    "test index {i} belongs to subject {}, not {}",
                    t.subject, fold.test_subject
                ))),
                None => Err(HarnessError::Config(format!("test index {i} out of range"))),
            })
            .collect()
    }

    pub fn fold_seed(&self, fold: &LosoFold) -> u64 {
        self.config.model.train.seed.wrapping_add(fold.test_subject as u64)
    }

    /// Class-index predictions for every test trial of one fold.
    pub fn predict_fold(&self, method: Method, fold: &LosoFold) -> Result<Vec<usize>, HarnessError> {
        let train_set = self.training_trials(fold)?;
        let test = self.test_trials(fold)?;
        let (_, t, fs) = self.ds.layout().expect("checked non-empty");
        match method {
            Method::Cca => {
                // no training data is used
                let bank = build_reference_bank(&self.ds.stimulus, self.config.cca.n_harmonics, t, fs)?;
                test.iter()
                    .map(|tr| self.class_index(cca_classify(&tr.matrix(), &bank)?.0))
                    .collect()
            }
            Method::CombinedCca => {
                let bank = build_reference_bank(&self.ds.stimulus, self.config.cca.n_harmonics, t, fs)?;
                let protos = build_prototypes(train_set.iter().copied(), &self.class_ids)?;
                test.iter()
                    .map(|tr| {
                        let d = combined_cca_classify(&tr.matrix(), &protos, &bank, self.config.combined_cca.fusion)?;
                        self.class_index(d.class_id)
                    })
                    .collect()
            }
            Method::Cnn => {
                let net = self.network();
                let mut inputs = Vec::with_capacity(train_set.len() * net.channels * net.samples);
                let mut labels = Vec::with_capacity(train_set.len());
                for tr in &train_set {
                    inputs.extend_from_slice(&tr.data);
                    labels.push(self.class_index(tr.class_id)?);
                }
                let mut tc = self.config.model.train.clone();
                tc.seed = self.fold_seed(fold);
                let outcome = train(&net, &tc, TrainSet { inputs: &inputs, labels: &labels })?;
                predict_with(&outcome.model, &test)
            }
        }
    }

    pub fn evaluate_fold(&self, method: Method, fold: &LosoFold) -> Result<FoldResult, HarnessError> {
        let preds = self.predict_fold(method, fold)?;
        let test = self.test_trials(fold)?;
        let k = self.class_ids.len();
        let mut units: Vec<(usize, usize)> = Vec::new();
        match self.config.harness.scoring {
            Scoring::Segment => {
                for (tr, &p) in test.iter().zip(&preds) {
                    units.push((self.class_index(tr.class_id)?, p));
                }
            }
            Scoring::MajorityVote => {
                let mut groups: BTreeMap<(usize, usize), (usize, Vec<u32>)> = BTreeMap::new();
                for (tr, &p) in test.iter().zip(&preds) {
                    let truth = self.class_index(tr.class_id)?;
                    let entry = groups.entry((tr.class_id, tr.block)).or_insert((truth, vec![0; k]));
                    entry.1[p] += 1;
                }
                for (truth, votes) in groups.into_values() {
                    let best = votes.iter().max().copied().unwrap_or(0);
                    let winner = votes.iter().position(|&v| v == best).unwrap_or(0);
                    units.push((truth, winner));
                }
            }
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for &(truth, pred) in &units {
            confusion[truth][pred] += 1;
        }
        let correct = (0..k).map(|i| confusion[i][i] as usize).sum();
        let n_test = units.len();
        Ok(FoldResult {
            test_subject: fold.test_subject,
            n_test,
            correct,
            accuracy: if n_test > 0 { correct as f64 / n_test as f64 } else { 0.0 },
            confusion,
            seed: (method == Method::Cnn).then(|| self.fold_seed(fold)),
        })
    }
}

/// Argmax class indices of a trained network on trials.
pub fn predict_with(model: &CompactCnn<f32>, trials: &[&Trial]) -> Result<Vec<usize>, HarnessError> {
    if trials.is_empty() {
        return Ok(Vec::new());
    }
    let x = trials_to_input::<f32>(trials)?;
    Ok(model.predict(&x)?.labels)
}

/// Keeps the selected segment indices and, if asked, permutes class labels
/// among each subject's segments.
pub fn prepare(ds: &Dataset, config: &RunConfig) -> Result<Dataset, HarnessError> {
    let h = &config.harness;
    if h.shuffle_labels && h.scoring == Scoring::MajorityVote {
        return Err(HarnessError::Config(
            "label shuffling breaks parent-trial grouping; use segment scoring".into(),
        ));
    }
    let mut out = ds.clone();
    if let Some(keep) = &h.segments {
        out.trials.retain(|t| keep.contains(&t.segment));
    }
    if h.shuffle_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(h.shuffle_seed);
        for subject in out.subjects() {
            let idx: Vec<usize> = (0..out.trials.len()).filter(|&i| out.trials[i].subject == subject).collect();
            let mut labels: Vec<usize> = idx.iter().map(|&i| out.trials[i].class_id).collect();
            labels.shuffle(&mut rng);
            for (&i, l) in idx.iter().zip(labels) {
                out.trials[i].class_id = l;
            }
        }
    }
    Ok(out)
}

/// Runs every method over the same LOSO folds. Folds run in parallel on
/// `threads` workers; results do not depend on the thread count.
pub fn run_loso(
    ds: &Dataset,
    methods: &[Method],
    config: &RunConfig,
    threads: usize,
    dataset_sha256: Option<String>,
) -> Result<Vec<ClassifierReport>, HarnessError> {
    if methods.is_empty() {
        return Err(HarnessError::Config("no methods selected".into()));
    }
    let data = prepare(ds, config)?;
    let protocol = Protocol::new(&data, config)?;
    let folds = loso_folds(&data)?;
    for fold in &folds {
        fold.check(&data)?;
    }
    let jobs: Vec<(Method, &LosoFold)> = methods.iter().flat_map(|&m| folds.iter().map(move |f| (m, f))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let results: Vec<Result<FoldResult, HarnessError>> =
        pool.install(|| jobs.par_iter().map(|&(m, f)| protocol.evaluate_fold(m, f)).collect());
    let mut results = results.into_iter();
    let hash = config.hash();
    let mut reports = Vec::with_capacity(methods.len());
    for &m in methods {
        let folds: Vec<FoldResult> = results.by_ref().take(folds.len()).collect::<Result<_, _>>()?;
        reports.push(ClassifierReport::assemble(
            m,
            config.harness.scoring,
            protocol.class_ids.clone(),
            folds,
            hash.clone(),
            dataset_sha256.clone(),
        ));
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDifference {
    pub minuend: String,
    pub subtrahend: String,
    pub per_subject: Vec<f64>,
    pub mean: f64,
}

/// Per-subject accuracy matrix, method means and pairwise differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub subjects: Vec<usize>,
    /// `accuracy[subject][method]`
    pub accuracy: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub sems: Vec<f64>,
    pub differences: Vec<PairDifference>,
}

pub fn compare_reports(reports: &[ClassifierReport]) -> Result<Comparison, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Mismatch("no reports".into()))?;
    let layout: Vec<(usize, usize)> = first.folds.iter().map(|f| (f.test_subject, f.n_test)).collect();
    for r in reports {
        let other: Vec<(usize, usize)> = r.folds.iter().map(|f| (f.test_subject, f.n_test)).collect();
        if other != layout {
            return Err(HarnessError::Mismatch(format!(
                "{} folds differ from {}",
                r.method.name(),
                first.method.name()
            )));
        }
    }
    let methods: Vec<String> = reports.iter().map(|r| r.method.name().to_string()).collect();
    let subjects: Vec<usize> = layout.iter().map(|l| l.0).collect();
    let accuracy: Vec<Vec<f64>> = (0..subjects.len())
        .map(|s| reports.iter().map(|r| r.folds[s].accuracy).collect())
        .collect();
    let mut differences = Vec::new();
    for a in 0..reports.len() {
        for b in a + 1..reports.len() {
            let per_subject: Vec<f64> = accuracy.iter().map(|row| row[a] - row[b]).collect();
            let mean = mean_sem(&per_subject).0;
            differences.push(PairDifference {
                minuend: methods[a].clone(),
                subtrahend: methods[b].clone(),
                per_subject,
                mean,
            });
        }
    }
    Ok(Comparison {
        methods,
        subjects,
        accuracy,
        means: reports.iter().map(|r| r.mean_accuracy).collect(),
        sems: reports.iter().map(|r| r.sem).collect(),
        differences,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["subject".to_string()];
        header.extend(self.methods.iter().cloned());
        header.extend(self.differences.iter().map(|d| format!("{}-{}", d.minuend, d.subtrahend)));
        w.write_record(&header)?;
        for (s, subject) in self.subjects.iter().enumerate() {
            let mut row = vec![subject.to_string()];
            row.extend(self.accuracy[s].iter().map(|a| a.to_string()));
            row.extend(self.differences.iter().map(|d| d.per_subject[s].to_string()));
            w.write_record(&row)?;
        }
        let mut row = vec!["mean".to_string()];
        row.extend(self.means.iter().map(|m| m.to_string()));
        row.extend(self.differences.iter().map(|d| d.mean.to_string()));
        w.write_record(&row)?;
        let mut row = vec!["sem".to_string()];
        row.extend(self.sems.iter().map(|m| m.to_string()));
        row.extend(self.differences.iter().map(|_| String::new()));
        w.write_record(&row)?;
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>8}", "subject");
        for m in &self.methods {
            let _ = write!(out, " {m:>13}");
        }
        out.push('\n');
        for (s, subject) in self.subjects.iter().enumerate() {
            let _ = write!(out, "{subject:>8}");
            for a in &self.accuracy[s] {
                let _ = write!(out, " {:>12.2}%", 100.0 * a);
            }
            out.push('\n');
        }
        let _ = write!(out, "{:>8}", "mean");
        for (m, e) in self.means.iter().zip(&self.sems) {
            let _ = write!(out, " {:>6.2}%+-{:<5.2}", 100.0 * m, 100.0 * e);
        }
        out.push('\n');
        for d in &self.differences {
            let _ = writeln!(out, "{} - {}: mean {:+.2} points", d.minuend, d.subtrahend, 100.0 * d.mean);
        }
        out
    }
}

/// Writes `report_<method>.json`, `comparison.csv` and `comparison.txt`.
/// Returns the written paths.
pub fn write_reports(dir: &Path, reports: &[ClassifierReport]) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in reports {
        let path = dir.join(format!("report_{}.json", r.method.name()));
        fs::write(&path, serde_json::to_string_pretty(r)?)?;
        written.push(path);
    }
    let cmp = compare_reports(reports)?;
    let csv_path = dir.join("comparison.csv");
    fs::write(&csv_path, cmp.to_csv()?)?;
    written.push(csv_path);
    let txt = dir.join("comparison.txt");
    fs::write(&txt, cmp.to_table())?;
    written.push(txt);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssvep_core::dataset::StimulusTable;

    fn report(method: Method, accs: &[f64]) -> ClassifierReport {
        let folds = accs
            .iter()
            .enumerate()
            .map(|(s, &a)| FoldResult {
                test_subject: s,
                n_test: 10,
                correct: (a * 10.0) as usize,
                accuracy: a,
                confusion: vec![],
                seed: None,
            })
            .collect();
        ClassifierReport::assemble(method, Scoring::Segment, vec![], folds, String::new(), None)
    }

    #[test]
    fn method_lists() {
        assert_eq!(
            Method::parse_list(&["cca,cnn", "cca"]).unwrap(),
            vec![Method::Cca, Method::Cnn]
        );
        assert!(Method::parse_list(&["svm"]).is_err());
        assert!(Method::parse_list::<&str>(&[]).is_err());
    }

    #[test]
    fn identical_reports_have_zero_differences() {
        let a = report(Method::Cca, &[0.5, 0.75, 1.0]);
        let mut b = a.clone();
        b.method = Method::CombinedCca;
        let c = compare_reports(&[a, b]).unwrap();
        assert!(c.differences[0].per_subject.iter().all(|&d| d == 0.0));
        assert_eq!(c.differences[0].mean, 0.0);
    }

    #[test]
    fn single_report_and_exact_means() {
        let a = report(Method::Cnn, &[0.1, 0.2, 0.7]);
        let c = compare_reports(std::slice::from_ref(&a)).unwrap();
        assert_eq!(c.methods, vec!["cnn"]);
        assert!(c.differences.is_empty());
        assert_eq!(c.means[0], a.mean_accuracy);
        let csv = c.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert!(csv.starts_with("subject,cnn\n"));
    }

    #[test]
    fn mismatched_folds_are_rejected() {
        let a = report(Method::Cca, &[0.5, 0.75]);
        let b = report(Method::Cnn, &[0.5, 0.75, 0.1]);
        assert!(matches!(compare_reports(&[a, b]), Err(HarnessError::Mismatch(_))));
    }

    #[test]
    fn mean_and_sem() {
        let (m, s) = mean_sem(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_sem(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn leakage_guard_aborts() {
        let trial = |subject| Trial {
            data: vec![0.5; 2 * 256],
            channels: 2,
            samples: 256,
            subject,
            class_id: 0,
            block: 0,
            segment: 0,
            sample_rate_hz: 256.0,
        };
        let ds = Dataset {
            trials: vec![trial(0), trial(1), trial(1)],
            channel_names: vec!["a".into(), "b".into()],
            stimulus: StimulusTable::twelve_class(),
            provenance: String::new(),
        };
        let cfg = RunConfig::default();
        let p = Protocol::new(&ds, &cfg).unwrap();
        let bad = LosoFold {
            test_subject: 1,
            train_indices: vec![0, 2],
            test_indices: vec![1],
        };
        let err = p.predict_fold(Method::CombinedCca, &bad).unwrap_err();
        assert!(matches!(err, HarnessError::Leakage { index: 2, subject: 1 }));
    }
}
