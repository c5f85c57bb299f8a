//! Translational concept encoder.
//!
//! Structural concept/property embeddings and pooled text vectors are
//! projected into one space by single fully connected layers and trained
//! jointly under the sum of five translational scores (structure, text,
//! the two crossed forms and the additive form). The output for concept
//! `i` is `[c_i^s ; c_i^t]`.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::VectorTable;
use crate::numcore::{adam_step, l2, AdamConfig, AdamState, Graph, NodeId, Tensor};
use crate::ontology::{OntologySchema, PropertyTag, SchemaTriple, TextMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Structure only: TransE on the raw embeddings.
    Default,
    /// Structure and text under the combined score.
    #[default]
    TextAware,
}

impl FromStr for EncoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Self::Default),
            "text_aware" => Ok(Self::TextAware),
            other => Err(Error::Config(format!("unknown encoder mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub margin: f64,
    /// Common-space dimension; the emitted embedding has twice this width.
    pub dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub mode: EncoderMode,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            margin: 12.0,
            dim: 100,
            epochs: 1000,
            batch: 128,
            lr: 1e-2,
            mode: EncoderMode::TextAware,
            seed: 7,
        }
    }
}

fn check_dims(vs: &[&[f64]]) -> Result<()> {
    let n = vs[0].len();
    if let Some(v) = vs.iter().find(|v| v.len() != n) {
        return Err(Error::Shape(format!(
            "score inputs differ in dimension ({} vs {n})",
            v.len()
        )));
    }
    Ok(())
}

fn translation_residual(h: &[f64], p: &[f64], t: &[f64]) -> f64 {
    let r: Vec<f64> = h
        .iter()
        .zip(p)
        .zip(t)
        .map(|((a, b), c)| a + b - c)
        .collect();
    l2(&r)
}

/// `-||c_i^s + p^s - c_j^s||`
pub fn score_structural(head: &[f64], property: &[f64], tail: &[f64]) -> Result<f64> {
    check_dims(&[head, property, tail])?;
    Ok(-translation_residual(head, property, tail))
}

/// Sum of the structural, textual, two crossed and the additive scores.
pub fn score_full(
    head_s: &[f64],
    head_t: &[f64],
    property: &[f64],
    tail_s: &[f64],
    tail_t: &[f64],
) -> Result<f64> {
    check_dims(&[head_s, head_t, property, tail_s, tail_t])?;
    let hs_ht: Vec<f64> = head_s.iter().zip(head_t).map(|(a, b)| a + b).collect();
    let ts_tt: Vec<f64> = tail_s.iter().zip(tail_t).map(|(a, b)| a + b).collect();
    Ok(-(translation_residual(head_s, property, tail_s)
        + translation_residual(head_t, property, tail_t)
        + translation_residual(head_s, property, tail_t)
        + translation_residual(head_t, property, tail_s)
        + translation_residual(&hs_ht, property, &ts_tt)))
}

/// Parameter slots, in the order they are stored in [`EncoderModel::params`].
const CONCEPTS: usize = 0;
const PROPERTIES: usize = 1;
const W_CONCEPT: usize = 2;
const B_CONCEPT: usize = 3;
const W_PROPERTY: usize = 4;
const B_PROPERTY: usize = 5;
const W_TEXT: usize = 6;
const B_TEXT: usize = 7;

#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    params: Vec<Tensor>,
    text: Tensor,
}

/// Per-epoch mean hinge loss.
#[derive(Clone, Debug, Default, Serialize)]
pub struct EncoderHistory {
    pub epoch_loss: Vec<f64>,
}

struct Projected {
    head_s: NodeId,
    head_t: NodeId,
    prop: NodeId,
    tail_s: NodeId,
    tail_t: NodeId,
}

impl EncoderModel {
    fn new(
        num_concepts: usize,
        num_properties: usize,
        text: &TextMatrix,
        config: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.dim;
        let bound = 6.0 / (d as f64).sqrt();
        let mut concepts = Tensor::uniform(num_concepts, d, bound, rng);
        normalize_rows(&mut concepts);
        let params = vec![
            concepts,
            Tensor::uniform(num_properties.max(1), d, bound, rng),
            Tensor::uniform(d, d, bound, rng),
            Tensor::uniform(1, d, bound, rng),
            Tensor::uniform(d, d, bound, rng),
            Tensor::uniform(1, d, bound, rng),
            Tensor::uniform(text.dim(), d, bound, rng),
            Tensor::uniform(1, d, bound, rng),
        ];
        Self {
            config: config.clone(),
            params,
            text: text.vectors.clone(),
        }
    }

    fn project(&self, g: &mut Graph, nodes: &[NodeId], triples: &[SchemaTriple]) -> Projected {
        let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
        let props: Vec<usize> = triples.iter().map(|t| t.property).collect();
        let hs = g.gather(nodes[CONCEPTS], &heads);
        let ts = g.gather(nodes[CONCEPTS], &tails);
        let ps = g.gather(nodes[PROPERTIES], &props);
        match self.config.mode {
            EncoderMode::Default => {
                let zero = g.constant(Tensor::zeros(triples.len(), self.config.dim));
                Projected {
                    head_s: hs,
                    head_t: zero,
                    prop: ps,
                    tail_s: ts,
                    tail_t: zero,
                }
            }
            EncoderMode::TextAware => {
                let head_s = g.affine(hs, nodes[W_CONCEPT], nodes[B_CONCEPT]);
                let tail_s = g.affine(ts, nodes[W_CONCEPT], nodes[B_CONCEPT]);
                let prop = g.affine(ps, nodes[W_PROPERTY], nodes[B_PROPERTY]);
                let hd = g.constant(self.text.gather_rows(&heads));
                let td = g.constant(self.text.gather_rows(&tails));
                let head_t = g.affine(hd, nodes[W_TEXT], nodes[B_TEXT]);
                let tail_t = g.affine(td, nodes[W_TEXT], nodes[B_TEXT]);
                Projected {
                    head_s,
                    head_t,
                    prop,
                    tail_s,
                    tail_t,
                }
            }
        }
    }

    fn residual_norm(g: &mut Graph, h: NodeId, p: NodeId, t: NodeId) -> NodeId {
        let hp = g.add(h, p);
        let r = g.sub(hp, t);
        g.row_norm(r)
    }

    /// Batched score as an `n x 1` node: `f^T` in text-aware mode, TransE otherwise.
    fn score_node(&self, g: &mut Graph, x: &Projected) -> NodeId {
        let s = Self::residual_norm(g, x.head_s, x.prop, x.tail_s);
        if self.config.mode == EncoderMode::Default {
            return g.neg(s);
        }
        let t = Self::residual_norm(g, x.head_t, x.prop, x.tail_t);
        let st = Self::residual_norm(g, x.head_s, x.prop, x.tail_t);
        let ts = Self::residual_norm(g, x.head_t, x.prop, x.tail_s);
        let ha = g.add(x.head_s, x.head_t);
        let ta = g.add(x.tail_s, x.tail_t);
        let add = Self::residual_norm(g, ha, x.prop, ta);
        let sum = g.add(s, t);
        let sum = g.add(sum, st);
        let sum = g.add(sum, ts);
        let sum = g.add(sum, add);
        g.neg(sum)
    }

    /// Mean hinge `[margin + f(neg) - f(pos)]_+` as a scalar node.
    fn hinge_loss(
        &self,
        g: &mut Graph,
        nodes: &[NodeId],
        pos: &[SchemaTriple],
        neg: &[SchemaTriple],
    ) -> NodeId {
        let p = self.project(g, nodes, pos);
        let n = self.project(g, nodes, neg);
        let fp = self.score_node(g, &p);
        let fn_ = self.score_node(g, &n);
        let diff = g.sub(fn_, fp);
        let diff = g.add_scalar(diff, self.config.margin);
        let hinge = g.relu(diff);
        g.mean(hinge)
    }

    /// Loss value and parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        pos: &[SchemaTriple],
        neg: &[SchemaTriple],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let loss = self.hinge_loss(&mut g, &nodes, pos, neg);
        let grads = g.backward(loss, &nodes)?;
        Ok((g.scalar_value(loss), grads))
    }

    /// Loss value only.
    pub fn loss(&self, pos: &[SchemaTriple], neg: &[SchemaTriple]) -> f64 {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let loss = self.hinge_loss(&mut g, &nodes, pos, neg);
        g.scalar_value(loss)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Projected structural and textual vectors of one concept.
    pub fn concept_vectors(&self, concept: usize) -> (Vec<f64>, Vec<f64>) {
        let c = Tensor::raw(
            1,
            self.config.dim,
            self.params[CONCEPTS].row_slice(concept).to_vec(),
        );
        match self.config.mode {
            EncoderMode::Default => (c.into_data(), vec![0.0; self.config.dim]),
            EncoderMode::TextAware => {
                let s = add_bias(c.matmul(&self.params[W_CONCEPT]), &self.params[B_CONCEPT]);
                let d = Tensor::raw(1, self.text.cols(), self.text.row_slice(concept).to_vec());
                let t = add_bias(d.matmul(&self.params[W_TEXT]), &self.params[B_TEXT]);
                (s.into_data(), t.into_data())
            }
        }
    }

    pub fn property_vector(&self, property: usize) -> Vec<f64> {
        let p = Tensor::raw(
            1,
            self.config.dim,
            self.params[PROPERTIES].row_slice(property).to_vec(),
        );
        match self.config.mode {
            EncoderMode::Default => p.into_data(),
            EncoderMode::TextAware => {
                add_bias(p.matmul(&self.params[W_PROPERTY]), &self.params[B_PROPERTY]).into_data()
            }
        }
    }

    /// Plausibility of a triple under the trained model.
    pub fn score(&self, head: usize, property: usize, tail: usize) -> f64 {
        let (hs, ht) = self.concept_vectors(head);
        let (ts, tt) = self.concept_vectors(tail);
        let p = self.property_vector(property);
        let s = match self.config.mode {
            EncoderMode::Default => score_structural(&hs, &p, &ts),
            EncoderMode::TextAware => score_full(&hs, &ht, &p, &ts, &tt),
        };
        s.expect("model vectors share one dimension")
    }

    /// `o_i = [c_i^s ; c_i^t]` for every concept.
    pub fn embedding_table(&self, schema: &OntologySchema) -> Result<ConceptEmbeddingTable> {
        let mut table = VectorTable::new(2 * self.config.dim);
        for (i, id) in schema.concepts().enumerate() {
            let (mut s, t) = self.concept_vectors(i);
            s.extend(t);
            table.insert(id, s)?;
        }
        Ok(ConceptEmbeddingTable { table })
    }
}

fn add_bias(mut x: Tensor, b: &Tensor) -> Tensor {
    for (v, bb) in x.data_mut().iter_mut().zip(b.data()) {
        *v += bb;
    }
    x
}

fn normalize_rows(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_slice_mut(i);
        let n = l2(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Corrupts head or tail (probability 1/2 each) with a uniform concept,
/// rejecting corruptions that are known triples. `None` when no valid
/// corruption was found.
pub fn corrupt<R: Rng>(
    triple: SchemaTriple,
    num_concepts: usize,
    known: &HashSet<SchemaTriple>,
    rng: &mut R,
) -> Option<SchemaTriple> {
    for _ in 0..64 {
        let c = rng.random_range(0..num_concepts);
        let cand = if rng.random_bool(0.5) {
            SchemaTriple { head: c, ..triple }
        } else {
            SchemaTriple { tail: c, ..triple }
        };
        if !known.contains(&cand) {
            return Some(cand);
        }
    }
    None
}

/// Structural triples used for training: everything except comment links.
pub fn training_triples(schema: &OntologySchema) -> Vec<SchemaTriple> {
    schema
        .triples()
        .iter()
        .copied()
        .filter(|t| schema.tag(t.property) != PropertyTag::Comment)
        .collect()
}

pub fn train_encoder(
    schema: &OntologySchema,
    text: &TextMatrix,
    config: &EncoderConfig,
) -> Result<(EncoderModel, EncoderHistory)> {
    if config.dim == 0 || config.batch == 0 {
        return Err(Error::Config(
            "encoder dim and batch must be positive".into(),
        ));
    }
    let triples = training_triples(schema);
    if triples.is_empty() {
        return Err(Error::EmptyTriples);
    }
    if text.vectors.rows() < schema.num_concepts() {
        return Err(Error::Shape(format!(
            "text matrix has {} rows for {} concepts",
            text.vectors.rows(),
            schema.num_concepts()
        )));
    }
    let known: HashSet<SchemaTriple> = triples.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EncoderModel::new(
        schema.num_concepts(),
        schema.num_properties(),
        text,
        config,
        &mut rng,
    );
    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    let mut history = EncoderHistory::default();
    let mut order: Vec<usize> = (0..triples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch) {
            let mut pos = Vec::with_capacity(chunk.len());
            let mut neg = Vec::with_capacity(chunk.len());
            for &i in chunk {
                if let Some(n) = corrupt(triples[i], schema.num_concepts(), &known, &mut rng) {
                    pos.push(triples[i]);
                    neg.push(n);
                }
            }
            if pos.is_empty() {
                continue;
            }
            let (loss, grads) = model.loss_and_grads(&pos, &neg)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("encoder loss at epoch {epoch}")));
            }
            adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
            total += loss * pos.len() as f64;
            count += pos.len();
        }
        normalize_rows(&mut model.params[CONCEPTS]);
        history
            .epoch_loss
            .push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    Ok((model, history))
}

/// Concept id -> concatenated embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptEmbeddingTable {
    table: VectorTable,
}

impl ConceptEmbeddingTable {
    pub fn from_table(table: VectorTable) -> Self {
        Self { table }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, concept: &str) -> Option<&[f64]> {
        self.table.get(concept)
    }

    pub fn require(&self, concept: &str) -> Result<&[f64]> {
        self.get(concept)
            .ok_or_else(|| Error::MissingEmbedding(concept.to_string()))
    }

    pub fn table(&self) -> &VectorTable {
        &self.table
    }

    pub fn read(path: &Path) -> Result<Self> {
        VectorTable::read(path).map(Self::from_table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.table.write(path)
    }
}
