//! Conditional Wasserstein GAN with gradient penalty that synthesizes
//! instance features from concept embeddings.
//!
//! Generator `G([z ; o]) -> x` and critic `D([x ; o]) -> R` are both two
//! fully connected layers with a leaky-rectifier hidden layer. The generator
//! objective adds a classification term (negative log-likelihood under a
//! frozen softmax classifier trained on real seen features) and a pivot term
//! pulling per-class generated means onto real means.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ConceptEmbeddingTable;
use crate::error::{Error, Result};
use crate::imgc::{train_softmax, SoftmaxClassifier, SoftmaxConfig};
use crate::io::{create, open, read_blocks, read_header, write_blocks};
use crate::numcore::{adam_step, AdamConfig, AdamState, Graph, NodeId, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OZSL";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub noise_dim: usize,
    /// Weight of the classification loss.
    pub lambda_cls: f64,
    /// Weight of the pivot regularizer.
    pub lambda_pivot: f64,
    /// Weight of the gradient penalty.
    pub beta: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub n_critic: usize,
    pub batch: usize,
    /// Generator updates.
    pub iterations: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            generator_hidden: 4096,
            critic_hidden: 4096,
            noise_dim: 100,
            lambda_cls: 0.01,
            lambda_pivot: 5.0,
            beta: 10.0,
            lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            n_critic: 5,
            batch: 64,
            iterations: 2000,
            classifier_epochs: 50,
            classifier_lr: 1e-3,
            seed: 7,
        }
    }
}

/// Real training features with class indices into `classes`.
#[derive(Clone, Debug)]
pub struct LabeledFeatures {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl LabeledFeatures {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::Invalid(format!("label index {bad} out of range")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Per-class means of real features (pivot targets).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub means: Tensor,
}

impl ClassStats {
    pub fn from_real(data: &LabeledFeatures) -> Result<Self> {
        let d = data.dim();
        let k = data.classes.len();
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in data.labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums
                .row_slice_mut(l)
                .iter_mut()
                .zip(data.features.row_slice(i))
            {
                *s += v;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::EmptyClass(data.classes[c].clone()));
            }
            sums.row_slice_mut(c)
                .iter_mut()
                .for_each(|v| *v /= n as f64);
        }
        Ok(Self { means: sums })
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }
}

/// Two fully connected layers, leaky-rectifier hidden activation, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `[w1, b1, w2, b2]`
    pub params: Vec<Tensor>,
}

impl Mlp {
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let b1 = (1.0 / input as f64).sqrt();
        let b2 = (1.0 / hidden as f64).sqrt();
        Self {
            params: vec![
                Tensor::uniform(input, hidden, b1, rng),
                Tensor::zeros(1, hidden),
                Tensor::uniform(hidden, output, b2, rng),
                Tensor::zeros(1, output),
            ],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            params: vec![
                Tensor::zeros(input, hidden),
                Tensor::zeros(1, hidden),
                Tensor::zeros(hidden, output),
                Tensor::zeros(1, output),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.params[2].cols()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    pub fn forward(g: &mut Graph, nodes: &[NodeId], x: NodeId) -> NodeId {
        let h = g.affine(x, nodes[0], nodes[1]);
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        g.affine(h, nodes[2], nodes[3])
    }

    /// Plain forward pass without recording.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut h = x.matmul(&self.params[0]);
        add_row_inplace(&mut h, &self.params[1]);
        let h = h.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        let mut out = h.matmul(&self.params[2]);
        add_row_inplace(&mut out, &self.params[3]);
        out
    }
}

fn add_row_inplace(x: &mut Tensor, b: &Tensor) {
    let c = x.cols();
    for i in 0..x.rows() {
        for (v, bb) in x.row_slice_mut(i).iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    debug_assert_eq!(c, b.cols());
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows(), b.rows());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..a.rows() {
        data.extend_from_slice(a.row_slice(i));
        data.extend_from_slice(b.row_slice(i));
    }
    Tensor::raw(a.rows(), a.cols() + b.cols(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator: Mlp,
    pub critic: Mlp,
    /// Frozen softmax over the training classes, used by the classification loss.
    pub classifier: SoftmaxClassifier,
    pub noise_dim: usize,
}

/// Individual generator-loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GeneratorLoss {
    pub total: f64,
    pub wasserstein: f64,
    pub classification: f64,
    pub pivot: f64,
}

/// Individual critic-objective terms; `total` is the quantity the critic ascends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CriticLoss {
    pub total: f64,
    pub real: f64,
    pub fake: f64,
    pub penalty: f64,
}

/// A generator batch: one row of conditioning embedding per sample.
pub struct GeneratorBatch<'a> {
    pub embeddings: &'a Tensor,
    pub labels: &'a [usize],
    pub noise: &'a Tensor,
}

/// A critic batch of paired real and fake rows.
pub struct CriticBatch<'a> {
    pub real: &'a Tensor,
    pub fake: &'a Tensor,
    pub embeddings: &'a Tensor,
    /// Interpolation weight per row, in `[0, 1]`.
    pub epsilon: &'a [f64],
}

impl GanModel {
    pub fn new<R: Rng>(
        feature_dim: usize,
        embedding_dim: usize,
        classifier: SoftmaxClassifier,
        config: &GanConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            generator: Mlp::new(
                config.noise_dim + embedding_dim,
                config.generator_hidden,
                feature_dim,
                rng,
            ),
            critic: Mlp::new(feature_dim + embedding_dim, config.critic_hidden, 1, rng),
            classifier,
            noise_dim: config.noise_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.generator.output_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.generator.input_dim() - self.noise_dim
    }

    /// `n` synthetic features for one concept; `z ~ N(0, 1)` from a stream seeded by `seed`.
    pub fn generate(&self, embedding: &[f64], n: usize, seed: u64) -> Result<Tensor> {
        if embedding.len() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "embedding has {} entries, generator expects {}",
                embedding.len(),
                self.embedding_dim()
            )));
        }
        if n == 0 {
            return Err(Error::Invalid("generate needs n >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::standard_normal(n, self.noise_dim, &mut rng);
        let mut cond = Vec::with_capacity(n * embedding.len());
        for _ in 0..n {
            cond.extend_from_slice(embedding);
        }
        let o = Tensor::raw(n, embedding.len(), cond);
        let out = self.generator.apply(&concat(&z, &o));
        if !out.is_finite() {
            return Err(Error::NonFinite("generated features".into()));
        }
        Ok(out)
    }

    fn generator_objective(
        &self,
        g: &mut Graph,
        gen: &[NodeId],
        batch: &GeneratorBatch<'_>,
        stats: &ClassStats,
        config: &GanConfig,
    ) -> (NodeId, [NodeId; 3]) {
        let critic = self.critic.bind(g, false);
        let z = g.constant(batch.noise.clone());
        let o = g.constant(batch.embeddings.clone());
        let zo = g.concat_cols(z, o);
        let fake = Mlp::forward(g, gen, zo);

        let xo = g.concat_cols(fake, o);
        let d = Mlp::forward(g, &critic, xo);
        let d_mean = g.mean(d);
        let wass = g.neg(d_mean);

        let cw = g.constant(self.classifier.weights.clone());
        let cb = g.constant(self.classifier.bias.clone());
        let logits = g.affine(fake, cw, cb);
        let logp = g.log_softmax(logits);
        let picked = g.pick(logp, batch.labels);
        let nll = g.mean(picked);
        let cls = g.neg(nll);

        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in batch.labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        let mut pivot_terms = Vec::with_capacity(by_class.len());
        for (&c, rows) in &by_class {
            let sel = g.gather(fake, rows);
            let m = g.mean_rows(sel);
            let target = g.constant(Tensor::raw(
                1,
                stats.means.cols(),
                stats.means.row_slice(c).to_vec(),
            ));
            let diff = g.sub(m, target);
            let sq = g.square(diff);
            pivot_terms.push(g.sum(sq));
        }
        let mut pivot = pivot_terms[0];
        for &t in &pivot_terms[1..] {
            pivot = g.add(pivot, t);
        }
        let pivot = g.scale(pivot, 1.0 / pivot_terms.len() as f64);

        let a = g.scale(cls, config.lambda_cls);
        let b = g.scale(pivot, config.lambda_pivot);
        let total = g.add(wass, a);
        let total = g.add(total, b);
        (total, [wass, cls, pivot])
    }

    fn check_generator_batch(&self, batch: &GeneratorBatch<'_>, stats: &ClassStats) -> Result<()> {
        let n = batch.labels.len();
        if n == 0 || batch.embeddings.rows() != n || batch.noise.rows() != n {
            return Err(Error::Shape("generator batch rows disagree".into()));
        }
        if batch.embeddings.cols() != self.embedding_dim() || batch.noise.cols() != self.noise_dim {
            return Err(Error::Shape(
                "generator batch widths disagree with model".into(),
            ));
        }
        if let Some(&c) = batch
            .labels
            .iter()
            .find(|&&c| c >= stats.num_classes() || c >= self.classifier.num_classes())
        {
            return Err(Error::Invalid(format!("class index {c} has no statistics")));
        }
        Ok(())
    }

    /// Generator loss and its gradient with respect to the generator parameters.
    pub fn generator_loss(
        &self,
        batch: &GeneratorBatch<'_>,
        stats: &ClassStats,
        config: &GanConfig,
    ) -> Result<(GeneratorLoss, Vec<Tensor>)> {
        self.check_generator_batch(batch, stats)?;
        let mut g = Graph::new();
        let gen = self.generator.bind(&mut g, true);
        let (total, [w, c, p]) = self.generator_objective(&mut g, &gen, batch, stats, config);
        let grads = g.backward(total, &gen)?;
        Ok((
            GeneratorLoss {
                total: g.scalar_value(total),
                wasserstein: g.scalar_value(w),
                classification: g.scalar_value(c),
                pivot: g.scalar_value(p),
            },
            grads,
        ))
    }

    fn critic_objective(
        &self,
        g: &mut Graph,
        critic: &[NodeId],
        batch: &CriticBatch<'_>,
        config: &GanConfig,
    ) -> Result<(NodeId, [NodeId; 3])> {
        let n = batch.real.rows();
        let d = batch.real.cols();
        let o = g.constant(batch.embeddings.clone());

        let real = g.constant(batch.real.clone());
        let ro = g.concat_cols(real, o);
        let d_real = Mlp::forward(g, critic, ro);
        let real_mean = g.mean(d_real);

        let fake = g.constant(batch.fake.clone());
        let fo = g.concat_cols(fake, o);
        let d_fake = Mlp::forward(g, critic, fo);
        let fake_mean = g.mean(d_fake);

        let mut mixed = Vec::with_capacity(n * d);
        for i in 0..n {
            let e = batch.epsilon[i];
            for (r, f) in batch.real.row_slice(i).iter().zip(batch.fake.row_slice(i)) {
                mixed.push(e * r + (1.0 - e) * f);
            }
        }
        let interp = g.input(Tensor::raw(n, d, mixed));
        let io = g.concat_cols(interp, o);
        let d_interp = Mlp::forward(g, critic, io);
        let d_sum = g.sum(d_interp);
        let norms = g.input_grad_row_norms(d_sum, interp)?;
        let dev = g.add_scalar(norms, -1.0);
        let sq = g.square(dev);
        let penalty = g.mean(sq);

        let wass = g.sub(real_mean, fake_mean);
        let bp = g.scale(penalty, config.beta);
        let total = g.sub(wass, bp);
        Ok((total, [real_mean, fake_mean, penalty]))
    }

    /// Critic objective `E[D(x,o)] - E[D(x^,o)] - beta * E[(||grad D(x~,o)|| - 1)^2]`
    /// and the gradient of its negation (the quantity minimized) with respect
    /// to the critic parameters.
    pub fn critic_loss(
        &self,
        batch: &CriticBatch<'_>,
        config: &GanConfig,
    ) -> Result<(CriticLoss, Vec<Tensor>)> {
        let n = batch.real.rows();
        if batch.fake.shape() != batch.real.shape()
            || batch.embeddings.rows() != n
            || batch.epsilon.len() != n
        {
            return Err(Error::Shape(format!(
                "critic batch: real {:?}, fake {:?}, embeddings {:?}, {} epsilons",
                batch.real.shape(),
                batch.fake.shape(),
                batch.embeddings.shape(),
                batch.epsilon.len()
            )));
        }
        if batch.real.cols() + batch.embeddings.cols() != self.critic.input_dim() {
            return Err(Error::Shape(
                "critic input width disagrees with model".into(),
            ));
        }
        let mut g = Graph::new();
        let critic = self.critic.bind(&mut g, true);
        let (total, [r, f, p]) = self.critic_objective(&mut g, &critic, batch, config)?;
        let minimized = g.neg(total);
        let grads = g.backward(minimized, &critic)?;
        Ok((
            CriticLoss {
                total: g.scalar_value(total),
                real: g.scalar_value(r),
                fake: g.scalar_value(f),
                penalty: g.scalar_value(p),
            },
            grads,
        ))
    }

    /// Rounds every weight to `f32`, the checkpoint precision.
    pub fn quantize(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.generator.params.iter().collect();
        out.extend(self.critic.params.iter());
        out.push(&self.classifier.weights);
        out.push(&self.classifier.bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.generator.params.iter_mut().collect();
        out.extend(self.critic.params.iter_mut());
        out.push(&mut self.classifier.weights);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Writes the checkpoint: magic, version, layer count and shapes, then
    /// `f32` blocks (generator, critic, classifier) in declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let tensors = self.tensors();
        let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
            write_blocks(w, &tensors)?;
            w.flush()
        };
        run(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint. Classifier class names are not stored; they are
    /// restored as positional placeholders unless supplied.
    pub fn load(path: &Path, classes: Option<Vec<String>>) -> Result<Self> {
        let mut r = open(path)?;
        read_header(&mut r, path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let tensors = read_blocks(&mut r, path, 10)?;
        let mut it = tensors.into_iter();
        let generator = Mlp {
            params: it.by_ref().take(4).collect(),
        };
        let critic = Mlp {
            params: it.by_ref().take(4).collect(),
        };
        let weights = it.next().expect("count checked");
        let bias = it.next().expect("count checked");
        let k = weights.cols();
        let classes = classes.unwrap_or_else(|| (0..k).map(|i| format!("class{i}")).collect());
        if classes.len() != k {
            return Err(Error::Shape(format!(
                "checkpoint classifier has {k} classes, {} names supplied",
                classes.len()
            )));
        }
        // generator input = noise + embedding, critic input = feature + embedding
        let feature_dim = generator.output_dim();
        let embedding_dim = critic
            .input_dim()
            .checked_sub(feature_dim)
            .ok_or_else(|| Error::Format("critic narrower than generator output".into()))?;
        let noise_dim = generator
            .input_dim()
            .checked_sub(embedding_dim)
            .ok_or_else(|| Error::Format("generator narrower than embedding".into()))?;
        Ok(Self {
            generator,
            critic,
            classifier: SoftmaxClassifier {
                weights,
                bias,
                classes,
            },
            noise_dim,
        })
    }
}

/// Loss curves recorded once per generator update.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GanHistory {
    pub critic: Vec<f64>,
    pub penalty: Vec<f64>,
    pub generator: Vec<f64>,
    pub wasserstein: Vec<f64>,
    pub classification: Vec<f64>,
    pub pivot: Vec<f64>,
}

fn embedding_rows(table: &ConceptEmbeddingTable, classes: &[String]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = classes
        .iter()
        .map(|c| table.require(c))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

/// Trains the classifier, then alternates `n_critic` critic updates with one
/// generator update.
pub fn train_gan(
    data: &LabeledFeatures,
    embeddings: &ConceptEmbeddingTable,
    config: &GanConfig,
) -> Result<(GanModel, GanHistory)> {
    if config.batch == 0 || config.n_critic == 0 {
        return Err(Error::Config(
            "gan batch and n_critic must be positive".into(),
        ));
    }
    if [config.lambda_cls, config.lambda_pivot, config.beta]
        .iter()
        .any(|w| *w < 0.0)
    {
        return Err(Error::Config("loss weights must be non-negative".into()));
    }
    let class_emb = embedding_rows(embeddings, &data.classes)?;
    let stats = ClassStats::from_real(data)?;
    let classifier = train_softmax(
        &data.features,
        &data.labels,
        &data.classes,
        &SoftmaxConfig {
            epochs: config.classifier_epochs,
            lr: config.classifier_lr,
            seed: config.seed,
            ..Default::default()
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut model = GanModel::new(data.dim(), class_emb.cols(), classifier, config, &mut rng);
    let adam_cfg = AdamConfig {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        ..Default::default()
    };
    let mut g_state = AdamState::new(&model.generator.params, adam_cfg);
    let mut d_state = AdamState::new(&model.critic.params, adam_cfg);
    let mut history = GanHistory::default();
    let n = data.features.rows();
    let b = config.batch.min(n);

    for it in 0..config.iterations {
        let mut last_critic = CriticLoss::default();
        for _ in 0..config.n_critic {
            let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let real = data.features.gather_rows(&idx);
            let emb = class_emb.gather_rows(&labels);
            let z = Tensor::standard_normal(b, config.noise_dim, &mut rng);
            let fake = model.generator.apply(&concat(&z, &emb));
            let eps: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            let (loss, grads) = model.critic_loss(
                &CriticBatch {
                    real: &real,
                    fake: &fake,
                    embeddings: &emb,
                    epsilon: &eps,
                },
                config,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "critic objective at iteration {it}"
                )));
            }
            adam_step(&mut model.critic.params, &grads, &mut d_state, config.lr)?;
            last_critic = loss;
        }

        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let emb = class_emb.gather_rows(&labels);
        let z = Tensor::standard_normal(b, config.noise_dim, &mut rng);
        let (loss, grads) = model.generator_loss(
            &GeneratorBatch {
                embeddings: &emb,
                labels: &labels,
                noise: &z,
            },
            &stats,
            config,
        )?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at iteration {it}"
            )));
        }
        adam_step(&mut model.generator.params, &grads, &mut g_state, config.lr)?;

        history.critic.push(last_critic.total);
        history.penalty.push(last_critic.penalty);
        history.generator.push(loss.total);
        history.wasserstein.push(loss.wasserstein);
        history.classification.push(loss.classification);
        history.pivot.push(loss.pivot);
    }
    model.quantize();
    Ok((model, history))
}
