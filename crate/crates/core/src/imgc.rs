//! Zero-shot image classification over feature datasets: linear softmax
//! classifiers, macro accuracy and the standard / generalized protocols.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ConceptEmbeddingTable;
use crate::error::{Error, Result};
use crate::gan::GanModel;
use crate::io::{read_features, read_lines, write_features, write_text};
use crate::numcore::{adam_step, AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftmaxConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 64,
            lr: 1e-2,
            seed: 7,
        }
    }
}

/// `P(y | x) = softmax(x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    /// `d x k`
    pub weights: Tensor,
    /// `1 x k`
    pub bias: Tensor,
    pub classes: Vec<String>,
}

impl SoftmaxClassifier {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn logits(&self, x: &Tensor) -> Tensor {
        let mut z = x.matmul(&self.weights);
        for i in 0..z.rows() {
            for (v, b) in z.row_slice_mut(i).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        z
    }

    pub fn log_probs(&self, x: &Tensor) -> Tensor {
        let mut z = self.logits(x);
        for i in 0..z.rows() {
            let row = z.row_slice_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        z
    }

    /// Argmax class index per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let z = self.logits(x);
        (0..z.rows())
            .map(|i| {
                let mut best = 0;
                for (j, &v) in z.row_slice(i).iter().enumerate() {
                    if v > z.get(i, best) {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean negative log-likelihood and its gradients `(dW, db)`.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> (f64, Tensor, Tensor) {
        let n = x.rows();
        let k = self.num_classes();
        let lp = self.log_probs(x);
        let mut loss = 0.0;
        let mut delta = lp.map(f64::exp);
        for (i, &y) in labels.iter().enumerate() {
            loss -= lp.get(i, y);
            delta.row_slice_mut(i)[y] -= 1.0;
        }
        let inv = 1.0 / n as f64;
        let dw = x.transpose().matmul(&delta).map(|v| v * inv);
        let mut db = Tensor::zeros(1, k);
        for i in 0..n {
            for (d, v) in db.data_mut().iter_mut().zip(delta.row_slice(i)) {
                *d += v * inv;
            }
        }
        (loss * inv, dw, db)
    }

    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> f64 {
        self.loss_and_grads(x, labels).0
    }
}

/// Fits a linear softmax by minibatch Adam on mean negative log-likelihood.
/// `labels` index into `classes`.
pub fn train_softmax(
    features: &Tensor,
    labels: &[usize],
    classes: &[String],
    config: &SoftmaxConfig,
) -> Result<SoftmaxClassifier> {
    if classes.is_empty() {
        return Err(Error::Invalid("empty label set".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if config.batch == 0 {
        return Err(Error::Config("softmax batch must be positive".into()));
    }
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Invalid(format!("label index {l} out of range")))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(classes[c].clone()));
    }

    let d = features.cols();
    let k = classes.len();
    let mut params = vec![Tensor::zeros(d, k), Tensor::zeros(1, k)];
    let mut state = AdamState::new(&params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut clf = SoftmaxClassifier {
        weights: Tensor::zeros(d, k),
        bias: Tensor::zeros(1, k),
        classes: classes.to_vec(),
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            clf.weights = params[0].clone();
            clf.bias = params[1].clone();
            let x = features.gather_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, dw, db) = clf.loss_and_grads(&x, &y);
            if !loss.is_finite() {
                return Err(Error::NonFinite("softmax loss".into()));
            }
            adam_step(&mut params, &[dw, db], &mut state, config.lr)?;
        }
    }
    clf.weights = params[0].clone();
    clf.bias = params[1].clone();
    Ok(clf)
}

/// Class-averaged accuracy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacroAccuracy {
    pub value: f64,
    pub per_class: BTreeMap<usize, f64>,
    /// Classes in the candidate set with no evaluated rows.
    pub excluded: Vec<usize>,
}

/// Mean over classes of the per-class correct ratio. Rows whose gold label
/// is outside `classes` are an error.
pub fn macro_accuracy(
    predictions: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<MacroAccuracy> {
    if classes.is_empty() {
        return Err(Error::Invalid("empty class set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &y) in predictions.iter().zip(labels) {
        let t = tally
            .get_mut(&y)
            .ok_or_else(|| Error::Invalid(format!("label {y} outside the class set")))?;
        t.1 += 1;
        if p == y {
            t.0 += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, (hit, total)) in tally {
        if total == 0 {
            excluded.push(c);
        } else {
            per_class.insert(c, hit as f64 / total as f64);
        }
    }
    let value = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(MacroAccuracy {
        value,
        per_class,
        excluded,
    })
}

/// `2ab / (a + b)`, or 0 when `a + b = 0`.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Train/test features over a fixed class list with a seen/unseen split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub classes: Vec<String>,
    pub seen: Vec<bool>,
    pub train_features: Tensor,
    pub train_labels: Vec<usize>,
    pub test_features: Tensor,
    pub test_labels: Vec<usize>,
}

pub const TRAIN_FEATURES: &str = "train.feat";
pub const TRAIN_LABELS: &str = "train.labels";
pub const TEST_FEATURES: &str = "test.feat";
pub const TEST_LABELS: &str = "test.labels";
pub const SPLIT_FILE: &str = "split.tsv";

impl FeatureDataset {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.seen.len() {
            return Err(Error::Shape("class list and split disagree".into()));
        }
        if self.train_features.rows() != self.train_labels.len()
            || self.test_features.rows() != self.test_labels.len()
        {
            return Err(Error::Shape("feature rows and labels disagree".into()));
        }
        if self.train_features.rows() > 0
            && self.test_features.rows() > 0
            && self.train_features.cols() != self.test_features.cols()
        {
            return Err(Error::Shape("train and test feature widths differ".into()));
        }
        let k = self.classes.len();
        for &l in self.train_labels.iter().chain(&self.test_labels) {
            if l >= k {
                return Err(Error::Invalid(format!("label index {l} out of range")));
            }
        }
        if let Some(&l) = self.train_labels.iter().find(|&&l| !self.seen[l]) {
            return Err(Error::Invalid(format!(
                "unseen class `{}` has training rows",
                self.classes[l]
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.train_features.cols().max(self.test_features.cols())
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| self.seen[c]).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| !self.seen[c]).collect()
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == id)
    }

    /// Seen-class training rows re-indexed to positions in `seen_classes()`.
    pub fn seen_training(&self) -> (Tensor, Vec<usize>, Vec<String>) {
        let seen = self.seen_classes();
        let remap: BTreeMap<usize, usize> = seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let labels = self.train_labels.iter().map(|l| remap[l]).collect();
        let names = seen.iter().map(|&c| self.classes[c].clone()).collect();
        (self.train_features.clone(), labels, names)
    }

    fn labels_text(&self, labels: &[usize]) -> String {
        let mut s = String::new();
        for &l in labels {
            s.push_str(&self.classes[l]);
            s.push('\n');
        }
        s
    }

    pub fn split_text(&self) -> String {
        let mut s = String::new();
        for (c, &seen) in self.classes.iter().zip(&self.seen) {
            s.push_str(c);
            s.push('\t');
            s.push_str(if seen { "seen" } else { "unseen" });
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        write_features(&dir.join(TRAIN_FEATURES), &self.train_features)?;
        write_text(
            &dir.join(TRAIN_LABELS),
            &self.labels_text(&self.train_labels),
        )?;
        write_features(&dir.join(TEST_FEATURES), &self.test_features)?;
        write_text(&dir.join(TEST_LABELS), &self.labels_text(&self.test_labels))?;
        write_text(&dir.join(SPLIT_FILE), &self.split_text())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let split_path = dir.join(SPLIT_FILE);
        let mut classes = Vec::new();
        let mut seen = Vec::new();
        for (ln, line) in read_lines(&split_path)? {
            let mut parts = line.split('\t');
            let (Some(id), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(
                    &split_path,
                    ln,
                    "expected `class<TAB>seen|unseen`",
                ));
            };
            let flag = match tag.trim() {
                "seen" => true,
                "unseen" => false,
                other => {
                    return Err(Error::parse(
                        &split_path,
                        ln,
                        format!("split tag `{other}` is neither seen nor unseen"),
                    ))
                }
            };
            let id = id.trim().to_string();
            if classes.contains(&id) {
                return Err(Error::parse(
                    &split_path,
                    ln,
                    format!("class `{id}` listed twice"),
                ));
            }
            classes.push(id);
            seen.push(flag);
        }
        let read_labels = |name: &str| -> Result<Vec<usize>> {
            let path = dir.join(name);
            read_lines(&path)?
                .into_iter()
                .map(|(ln, l)| {
                    let l = l.trim();
                    classes.iter().position(|c| c == l).ok_or_else(|| {
                        Error::parse(&path, ln, format!("class `{l}` not in split file"))
                    })
                })
                .collect()
        };
        let ds = Self {
            train_labels: read_labels(TRAIN_LABELS)?,
            test_labels: read_labels(TEST_LABELS)?,
            train_features: read_features(&dir.join(TRAIN_FEATURES))?,
            test_features: read_features(&dir.join(TEST_FEATURES))?,
            classes,
            seen,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Standard,
    Generalized,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "generalized" => Ok(Self::Generalized),
            other => Err(Error::Config(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generated features per unseen class.
    pub n_syn: usize,
    pub classifier: SoftmaxConfig,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_syn: 300,
            classifier: SoftmaxConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_u: Option<f64>,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub candidates: Vec<String>,
    pub per_class: BTreeMap<String, f64>,
    pub excluded: Vec<String>,
    pub seed: u64,
}

/// Seed for class `c`'s synthetic batch.
fn class_seed(seed: u64, c: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(c as u64 + 1)
}

/// Synthesizes `n_syn` features per unseen class, trains a softmax on them
/// (plus real seen features in generalized mode) and scores the test split.
pub fn zsl_evaluate(
    dataset: &FeatureDataset,
    gan: &GanModel,
    embeddings: &ConceptEmbeddingTable,
    mode: EvalMode,
    config: &EvalConfig,
) -> Result<EvalReport> {
    dataset.validate()?;
    if config.n_syn == 0 {
        return Err(Error::Config("n_syn must be positive".into()));
    }
    if gan.feature_dim() != dataset.dim() {
        return Err(Error::Shape(format!(
            "generator emits {} features, dataset has {}",
            gan.feature_dim(),
            dataset.dim()
        )));
    }
    let unseen = dataset.unseen_classes();
    let candidates: Vec<usize> = match mode {
        EvalMode::Standard => unseen.clone(),
        EvalMode::Generalized => (0..dataset.classes.len()).collect(),
    };
    if unseen.is_empty() {
        return Err(Error::Invalid("no unseen classes".into()));
    }
    let test_rows: Vec<usize> = (0..dataset.test_labels.len())
        .filter(|&i| candidates.contains(&dataset.test_labels[i]))
        .collect();
    if !test_rows
        .iter()
        .any(|&i| !dataset.seen[dataset.test_labels[i]])
    {
        return Err(Error::Invalid("empty unseen test split".into()));
    }

    // position in `candidates` is the classifier's class index
    let pos: BTreeMap<usize, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    if mode == EvalMode::Generalized {
        for (i, &l) in dataset.train_labels.iter().enumerate() {
            rows.push(dataset.train_features.row_slice(i).to_vec());
            labels.push(pos[&l]);
        }
    }
    for &c in &unseen {
        let emb = embeddings.require(&dataset.classes[c])?;
        let syn = gan.generate(emb, config.n_syn, class_seed(config.seed, c))?;
        for i in 0..syn.rows() {
            rows.push(syn.row_slice(i).to_vec());
            labels.push(pos[&c]);
        }
    }
    let x = Tensor::from_rows(&rows)?;
    let names: Vec<String> = candidates
        .iter()
        .map(|&c| dataset.classes[c].clone())
        .collect();
    let clf = train_softmax(
        &x,
        &labels,
        &names,
        &SoftmaxConfig {
            seed: config.seed,
            ..config.classifier.clone()
        },
    )?;

    let test_x = dataset.test_features.gather_rows(&test_rows);
    let pred: Vec<usize> = clf
        .predict(&test_x)
        .into_iter()
        .map(|p| candidates[p])
        .collect();
    let gold: Vec<usize> = test_rows.iter().map(|&i| dataset.test_labels[i]).collect();

    let name = |c: &usize| dataset.classes[*c].clone();
    let mut report = EvalReport {
        mode,
        acc: None,
        acc_s: None,
        acc_u: None,
        h: None,
        candidates: names.clone(),
        per_class: BTreeMap::new(),
        excluded: Vec::new(),
        seed: config.seed,
    };
    let absorb = |m: &MacroAccuracy, report: &mut EvalReport| {
        report
            .per_class
            .extend(m.per_class.iter().map(|(c, a)| (name(c), *a)));
        report.excluded.extend(m.excluded.iter().map(name));
    };
    match mode {
        EvalMode::Standard => {
            let m = macro_accuracy(&pred, &gold, &unseen)?;
            report.acc = Some(m.value);
            absorb(&m, &mut report);
        }
        EvalMode::Generalized => {
            let split = |want_seen: bool| {
                let idx: Vec<usize> = (0..gold.len())
                    .filter(|&i| dataset.seen[gold[i]] == want_seen)
                    .collect();
                (
                    idx.iter().map(|&i| pred[i]).collect::<Vec<_>>(),
                    idx.iter().map(|&i| gold[i]).collect::<Vec<_>>(),
                )
            };
            let (ps, gs) = split(true);
            let (pu, gu) = split(false);
            let seen = dataset.seen_classes();
            let ms = if seen.is_empty() {
                None
            } else {
                Some(macro_accuracy(&ps, &gs, &seen)?)
            };
            let mu = macro_accuracy(&pu, &gu, &unseen)?;
            let acc_s = ms.as_ref().map_or(0.0, |m| m.value);
            report.acc_s = Some(acc_s);
            report.acc_u = Some(mu.value);
            report.h = Some(harmonic_mean(acc_s, mu.value));
            if let Some(ms) = &ms {
                absorb(ms, &mut report);
            }
            absorb(&mu, &mut report);
        }
    }
    Ok(report)
}
