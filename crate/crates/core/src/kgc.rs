//! Zero-shot knowledge graph completion: KG embedding pre-training, the
//! bag-based relation feature extractor, filtered tail ranking and metrics.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    create, open, read_blocks, read_header, read_lines, write_blocks, write_text, VectorTable,
};
use crate::numcore::{adam_step, cosine, AdamConfig, AdamState, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KgTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationSplit {
    Train,
    Validation,
    Test,
}

impl RelationSplit {
    pub const ALL: [RelationSplit; 3] = [Self::Train, Self::Validation, Self::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Self::Train => "train_relations.txt",
            Self::Validation => "validation_relations.txt",
            Self::Test => "test_relations.txt",
        }
    }
}

pub const ENTITIES_FILE: &str = "entities.txt";
pub const TRIPLES_FILE: &str = "triples.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct KgDataset {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub split: Vec<RelationSplit>,
    pub triples: Vec<KgTriple>,
}

impl KgDataset {
    /// `seen` relations train; the rest are test unless listed in `validation`.
    pub fn new(
        entities: Vec<String>,
        relations: Vec<String>,
        seen: Vec<bool>,
        validation: Vec<usize>,
        triples: Vec<KgTriple>,
    ) -> Result<Self> {
        if seen.len() != relations.len() {
            return Err(Error::Shape("relation list and split disagree".into()));
        }
        let split = seen
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                if s {
                    RelationSplit::Train
                } else if validation.contains(&r) {
                    RelationSplit::Validation
                } else {
                    RelationSplit::Test
                }
            })
            .collect();
        let ds = Self {
            entities,
            relations,
            split,
            triples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.len() != self.relations.len() {
            return Err(Error::Shape("relation list and split disagree".into()));
        }
        for t in &self.triples {
            if t.head >= self.entities.len() || t.tail >= self.entities.len() {
                return Err(Error::Invalid(format!(
                    "entity index out of range in {t:?}"
                )));
            }
            if t.relation >= self.relations.len() {
                return Err(Error::Invalid(format!(
                    "relation index out of range in {t:?}"
                )));
            }
        }
        let mut known = vec![false; self.entities.len()];
        for t in self.train_triples() {
            known[t.head] = true;
            known[t.tail] = true;
        }
        if let Some(t) = self.triples.iter().find(|t| {
            self.split[t.relation] != RelationSplit::Train && !(known[t.head] && known[t.tail])
        }) {
            return Err(Error::Invalid(format!(
                "triple ({}, {}, {}) uses an entity absent from training",
                self.entities[t.head], self.relations[t.relation], self.entities[t.tail]
            )));
        }
        Ok(())
    }

    pub fn relations_in(&self, split: RelationSplit) -> Vec<usize> {
        (0..self.relations.len())
            .filter(|&r| self.split[r] == split)
            .collect()
    }

    pub fn seen_relations(&self) -> Vec<usize> {
        self.relations_in(RelationSplit::Train)
    }

    pub fn unseen_relations(&self) -> Vec<usize> {
        self.relations_in(RelationSplit::Test)
    }

    pub fn train_triples(&self) -> impl Iterator<Item = &KgTriple> {
        self.triples
            .iter()
            .filter(|t| self.split[t.relation] == RelationSplit::Train)
    }

    pub fn triples_of(&self, relation: usize) -> Vec<KgTriple> {
        self.triples
            .iter()
            .copied()
            .filter(|t| t.relation == relation)
            .collect()
    }

    pub fn relation_index(&self, id: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == id)
    }

    pub fn triples_text(&self) -> String {
        let mut s = String::new();
        for t in &self.triples {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entities[t.head], self.relations[t.relation], self.entities[t.tail]
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        write_text(&dir.join(ENTITIES_FILE), &lines(&self.entities))?;
        for split in RelationSplit::ALL {
            let ids: Vec<String> = self
                .relations_in(split)
                .into_iter()
                .map(|r| self.relations[r].clone())
                .collect();
            write_text(&dir.join(split.file_name()), &lines(&ids))?;
        }
        write_text(&dir.join(TRIPLES_FILE), &self.triples_text())
    }

    /// Relations are ordered train, validation, test as listed in the split files.
    pub fn read(dir: &Path) -> Result<Self> {
        let entities: Vec<String> = read_optional_lines(&dir.join(ENTITIES_FILE))?;
        let ent_index: BTreeMap<&str, usize> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect();
        let mut relations = Vec::new();
        let mut split = Vec::new();
        for s in RelationSplit::ALL {
            for r in read_optional_lines(&dir.join(s.file_name()))? {
                if relations.contains(&r) {
                    return Err(Error::Invalid(format!(
                        "relation `{r}` listed in two splits"
                    )));
                }
                relations.push(r);
                split.push(s);
            }
        }
        let rel_index: BTreeMap<&str, usize> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let path = dir.join(TRIPLES_FILE);
        let mut triples = Vec::new();
        for (ln, line) in read_lines(&path)? {
            let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [h, r, t] = parts.as_slice() else {
                return Err(Error::parse(
                    &path,
                    ln,
                    "expected `head<TAB>relation<TAB>tail`",
                ));
            };
            let look = |m: &BTreeMap<&str, usize>, k: &str, what: &str| {
                m.get(k)
                    .copied()
                    .ok_or_else(|| Error::parse(&path, ln, format!("undeclared {what} `{k}`")))
            };
            triples.push(KgTriple {
                head: look(&ent_index, h, "entity")?,
                relation: look(&rel_index, r, "relation")?,
                tail: look(&ent_index, t, "entity")?,
            });
        }
        let ds = Self {
            entities,
            relations,
            split,
            triples,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn lines(ids: &[String]) -> String {
    let mut s = String::new();
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    s
}

fn read_optional_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_lines(path)?
        .into_iter()
        .map(|(_, l)| l.trim().to_string())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgeMethod {
    Transe,
    Distmult,
}

impl KgeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Transe => "transe",
            Self::Distmult => "distmult",
        }
    }
}

impl FromStr for KgeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(Self::Transe),
            "distmult" => Ok(Self::Distmult),
            other => Err(Error::Config(format!(
                "unknown KG embedding method `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgeConfig {
    pub method: KgeMethod,
    pub dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// TransE margin.
    pub margin: f64,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self {
            method: KgeMethod::Transe,
            dim: 200,
            epochs: 200,
            batch: 128,
            lr: 1e-2,
            margin: 1.0,
            seed: 7,
        }
    }
}

/// Pretrained vectors, one row per dataset entity / relation.
#[derive(Clone, Debug, PartialEq)]
pub struct KgeVectors {
    pub method: KgeMethod,
    pub entities: Tensor,
    pub relations: Tensor,
}

pub const KGE_ENTITIES: &str = "entities.vec";
pub const KGE_RELATIONS: &str = "relations.vec";
pub const KGE_METHOD: &str = "method.txt";

impl KgeVectors {
    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    /// `-||h + r - t||`
    pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        -h.iter()
            .zip(r)
            .zip(t)
            .map(|((a, b), c)| (a + b - c) * (a + b - c))
            .sum::<f64>()
            .sqrt()
    }

    /// `<h, diag(r), t>`
    pub fn distmult_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum()
    }

    pub fn score(&self, t: KgTriple) -> f64 {
        let h = self.entities.row_slice(t.head);
        let r = self.relations.row_slice(t.relation);
        let tl = self.entities.row_slice(t.tail);
        match self.method {
            KgeMethod::Transe => Self::transe_score(h, r, tl),
            KgeMethod::Distmult => Self::distmult_score(h, r, tl),
        }
    }

    pub fn write(&self, dir: &Path, ds: &KgDataset) -> Result<()> {
        let table = |names: &[String], t: &Tensor| -> Result<VectorTable> {
            let mut v = VectorTable::new(t.cols());
            for (i, n) in names.iter().enumerate() {
                v.insert(n.clone(), t.row_slice(i).to_vec())?;
            }
            Ok(v)
        };
        table(&ds.entities, &self.entities)?.write(&dir.join(KGE_ENTITIES))?;
        table(&ds.relations, &self.relations)?.write(&dir.join(KGE_RELATIONS))?;
        write_text(
            &dir.join(KGE_METHOD),
            &format!("{}\n", self.method.as_str()),
        )
    }

    pub fn read(dir: &Path, ds: &KgDataset) -> Result<Self> {
        let method_path = dir.join(KGE_METHOD);
        let method = read_lines(&method_path)?
            .first()
            .map(|(_, l)| l.trim().parse::<KgeMethod>())
            .ok_or_else(|| Error::parse(&method_path, 0, "empty method file"))??;
        let gather = |file: &str, names: &[String]| -> Result<Tensor> {
            let t = VectorTable::read(&dir.join(file))?;
            let rows: Vec<&[f64]> = names
                .iter()
                .map(|n| t.get(n).ok_or_else(|| Error::MissingVector(n.clone())))
                .collect::<Result<_>>()?;
            Tensor::from_rows(&rows)
        };
        Ok(Self {
            method,
            entities: gather(KGE_ENTITIES, &ds.entities)?,
            relations: gather(KGE_RELATIONS, &ds.relations)?,
        })
    }
}

/// Replaces the head or the tail (probability 1/2 each) with a uniform
/// entity, skipping known triples.
fn corrupt_kg<R: Rng>(
    t: KgTriple,
    n: usize,
    known: &HashSet<KgTriple>,
    rng: &mut R,
) -> Option<KgTriple> {
    for _ in 0..64 {
        let e = rng.random_range(0..n);
        let c = if rng.random_bool(0.5) {
            KgTriple { head: e, ..t }
        } else {
            KgTriple { tail: e, ..t }
        };
        if !known.contains(&c) {
            return Some(c);
        }
    }
    None
}

fn corrupt_tail<R: Rng>(
    t: KgTriple,
    n: usize,
    known: &HashSet<KgTriple>,
    rng: &mut R,
) -> Option<KgTriple> {
    for _ in 0..64 {
        let c = KgTriple {
            tail: rng.random_range(0..n),
            ..t
        };
        if !known.contains(&c) {
            return Some(c);
        }
    }
    None
}

/// Triple-level loss of a KG embedding batch, built on `g`.
/// TransE: `mean [margin + d(pos) - d(neg)]_+` with `d = ||h + r - t||`.
/// DistMult: `mean softplus(-s(pos)) + mean softplus(s(neg))`.
pub fn kge_loss(
    g: &mut Graph,
    ent: NodeId,
    rel: NodeId,
    pos: &[KgTriple],
    neg: &[KgTriple],
    method: KgeMethod,
    margin: f64,
) -> NodeId {
    let parts = |g: &mut Graph, ts: &[KgTriple]| {
        let h: Vec<usize> = ts.iter().map(|t| t.head).collect();
        let r: Vec<usize> = ts.iter().map(|t| t.relation).collect();
        let tl: Vec<usize> = ts.iter().map(|t| t.tail).collect();
        (g.gather(ent, &h), g.gather(rel, &r), g.gather(ent, &tl))
    };
    let (ph, pr, pt) = parts(g, pos);
    let (nh, nr, nt) = parts(g, neg);
    match method {
        KgeMethod::Transe => {
            let dist = |g: &mut Graph, h, r, t| {
                let s = g.add(h, r);
                let d = g.sub(s, t);
                g.row_norm(d)
            };
            let dp = dist(g, ph, pr, pt);
            let dn = dist(g, nh, nr, nt);
            let diff = g.sub(dp, dn);
            let shifted = g.add_scalar(diff, margin);
            let hinge = g.relu(shifted);
            g.mean(hinge)
        }
        KgeMethod::Distmult => {
            let score = |g: &mut Graph, h, r, t| {
                let hr = g.mul(h, r);
                let hrt = g.mul(hr, t);
                g.sum_cols(hrt)
            };
            let softplus = |g: &mut Graph, x| {
                let e = g.exp(x);
                let e1 = g.add_scalar(e, 1.0);
                g.log(e1)
            };
            let sp = score(g, ph, pr, pt);
            let sn = score(g, nh, nr, nt);
            let neg_sp = g.neg(sp);
            let lp = softplus(g, neg_sp);
            let ln = softplus(g, sn);
            let a = g.mean(lp);
            let b = g.mean(ln);
            g.add(a, b)
        }
    }
}

/// Projects every row onto the unit ball.
fn clip_rows(t: &mut Tensor) {
    for i in 0..t.rows() {
        let row = t.row_slice_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Trains entity and relation vectors on the training-relation triples.
pub fn pretrain_kge(ds: &KgDataset, config: &KgeConfig) -> Result<(KgeVectors, Vec<f64>)> {
    if config.dim == 0 || config.batch == 0 {
        return Err(Error::Config("kge dim and batch must be positive".into()));
    }
    let triples: Vec<KgTriple> = ds.train_triples().copied().collect();
    if triples.is_empty() {
        return Err(Error::EmptyTriples);
    }
    let known: HashSet<KgTriple> = triples.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / (config.dim as f64).sqrt();
    let mut params = vec![
        Tensor::uniform(ds.entities.len(), config.dim, bound, &mut rng),
        Tensor::uniform(ds.relations.len(), config.dim, bound, &mut rng),
    ];
    clip_rows(&mut params[0]);
    clip_rows(&mut params[1]);
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch) {
            let mut pos = Vec::with_capacity(chunk.len());
            let mut neg = Vec::with_capacity(chunk.len());
            for &i in chunk {
                if let Some(n) = corrupt_kg(triples[i], ds.entities.len(), &known, &mut rng) {
                    pos.push(triples[i]);
                    neg.push(n);
                }
            }
            if pos.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let e = g.param(params[0].clone());
            let r = g.param(params[1].clone());
            let loss = kge_loss(&mut g, e, r, &pos, &neg, config.method, config.margin);
            let value = g.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("kge loss at epoch {epoch}")));
            }
            let grads = g.backward(loss, &[e, r])?;
            adam_step(&mut params, &grads, &mut adam, config.lr)?;
            total += value * pos.len() as f64;
            count += pos.len();
        }
        clip_rows(&mut params[0]);
        history.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    let relations = params.pop().expect("two tensors");
    let entities = params.pop().expect("two tensors");
    Ok((
        KgeVectors {
            method: config.method,
            entities,
            relations,
        },
        history,
    ))
}

/// Per-entity mean of `[x_r ; x_t]` over at most `cap` outgoing training
/// neighbours, sampled once without replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub neighbors: Vec<Vec<(usize, usize)>>,
}

impl NeighborIndex {
    pub fn build(ds: &KgDataset, cap: usize, seed: u64) -> Self {
        let mut all: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ds.entities.len()];
        for t in ds.train_triples() {
            all[t.head].push((t.relation, t.tail));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neighbors = all
            .into_iter()
            .map(|mut n| {
                n.sort_unstable();
                if n.len() > cap {
                    let mut picked: Vec<usize> = index::sample(&mut rng, n.len(), cap).into_vec();
                    picked.sort_unstable();
                    picked.into_iter().map(|i| n[i]).collect()
                } else {
                    n
                }
            })
            .collect();
        Self { neighbors }
    }

    pub fn degree(&self, entity: usize) -> usize {
        self.neighbors[entity].len()
    }
}

/// Fixed extractor inputs: pretrained entity vectors plus per-entity
/// neighbour means and presence flags.
#[derive(Clone, Debug)]
pub struct ExtractorInputs {
    pub entities: Tensor,
    pub neighbor_mean: Tensor,
    pub has_neighbors: Vec<bool>,
}

impl ExtractorInputs {
    pub fn new(kge: &KgeVectors, index: &NeighborIndex) -> Self {
        let d = kge.dim();
        let n = kge.entities.rows();
        let mut mean = Tensor::zeros(n, 2 * d);
        let mut flags = vec![false; n];
        for (e, nb) in index.neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            flags[e] = true;
            let row = mean.row_slice_mut(e);
            for &(r, t) in nb {
                for (k, v) in kge.relations.row_slice(r).iter().enumerate() {
                    row[k] += v;
                }
                for (k, v) in kge.entities.row_slice(t).iter().enumerate() {
                    row[d + k] += v;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Self {
            entities: kge.entities.clone(),
            neighbor_mean: mean,
            has_neighbors: flags,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Width of the entity encoder `f1`.
    pub entity_hidden: usize,
    /// Width of the neighbour encoder `f2`.
    pub neighbor_hidden: usize,
    pub neighbor_cap: usize,
    /// Reference triples per bag.
    pub references: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Positives per relation per step.
    pub batch: usize,
    /// Validation check period in epochs (only when validation relations exist).
    pub eval_every: usize,
    /// Set from the run seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            entity_hidden: 100,
            neighbor_hidden: 50,
            neighbor_cap: 50,
            references: 30,
            margin: 10.0,
            lr: 5e-4,
            epochs: 50,
            batch: 64,
            eval_every: 10,
            seed: 7,
        }
    }
}

pub const EXTRACTOR_MAGIC: &[u8; 4] = b"OZEX";
pub const EXTRACTOR_VERSION: u32 = 1;

/// `f1` / `f2` weights plus the neighbour sampling rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorModel {
    /// `[W1, b1, W2, b2]`
    pub params: Vec<Tensor>,
    pub neighbor_cap: usize,
    pub neighbor_seed: u64,
    pub margin: f64,
}

impl ExtractorModel {
    pub fn new<R: Rng>(kge_dim: usize, config: &ExtractorConfig, rng: &mut R) -> Self {
        let b1 = (1.0 / kge_dim as f64).sqrt();
        let b2 = (1.0 / (2 * kge_dim) as f64).sqrt();
        Self {
            params: vec![
                Tensor::uniform(kge_dim, config.entity_hidden, b1, rng),
                Tensor::zeros(1, config.entity_hidden),
                Tensor::uniform(2 * kge_dim, config.neighbor_hidden, b2, rng),
                Tensor::zeros(1, config.neighbor_hidden),
            ],
            neighbor_cap: config.neighbor_cap,
            neighbor_seed: config.seed,
            margin: config.margin,
        }
    }

    pub fn kge_dim(&self) -> usize {
        self.params[0].rows()
    }

    /// `dim(u_ep) + dim(u_h) + dim(u_t)`
    pub fn output_dim(&self) -> usize {
        2 * self.params[0].cols() + 2 * self.params[2].cols()
    }

    pub fn neighbor_index(&self, ds: &KgDataset) -> NeighborIndex {
        NeighborIndex::build(ds, self.neighbor_cap, self.neighbor_seed)
    }

    /// `x_(h,t) = [tanh([f1(x_h); f1(x_t)]) ; u_h ; u_t]` for each pair, on `g`.
    pub fn pair_embeddings(
        g: &mut Graph,
        params: &[NodeId],
        inputs: &ExtractorInputs,
        pairs: &[(usize, usize)],
    ) -> NodeId {
        let heads: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let tails: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let h2 = g.shape(params[2])[1];
        let xh = g.constant(inputs.entities.gather_rows(&heads));
        let xt = g.constant(inputs.entities.gather_rows(&tails));
        let fh = g.affine(xh, params[0], params[1]);
        let ft = g.affine(xt, params[0], params[1]);
        let ep = g.concat_cols(fh, ft);
        let u_ep = g.tanh(ep);
        let structural = |g: &mut Graph, ids: &[usize]| {
            let m = g.constant(inputs.neighbor_mean.gather_rows(ids));
            let mut mask = Vec::with_capacity(ids.len() * h2);
            for &e in ids {
                let f = if inputs.has_neighbors[e] { 1.0 } else { 0.0 };
                mask.extend(std::iter::repeat_n(f, h2));
            }
            let mask = g.constant(Tensor::raw(ids.len(), h2, mask));
            let f2 = g.affine(m, params[2], params[3]);
            let masked = g.mul(f2, mask);
            g.tanh(masked)
        };
        let u_h = structural(g, &heads);
        let u_t = structural(g, &tails);
        let a = g.concat_cols(u_ep, u_h);
        g.concat_cols(a, u_t)
    }

    /// Plain evaluation of [`Self::pair_embeddings`].
    pub fn embed(&self, inputs: &ExtractorInputs, pairs: &[(usize, usize)]) -> Tensor {
        let mut g = Graph::new();
        let p: Vec<NodeId> = self.params.iter().map(|t| g.constant(t.clone())).collect();
        let out = Self::pair_embeddings(&mut g, &p, inputs, pairs);
        g.value(out).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let tensors: Vec<&Tensor> = self.params.iter().collect();
        let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(EXTRACTOR_MAGIC)?;
            w.write_u32::<LittleEndian>(EXTRACTOR_VERSION)?;
            w.write_u32::<LittleEndian>(self.neighbor_cap as u32)?;
            w.write_u64::<LittleEndian>(self.neighbor_seed)?;
            w.write_f64::<LittleEndian>(self.margin)?;
            write_blocks(w, &tensors)?;
            w.flush()
        };
        run(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = open(path)?;
        read_header(&mut r, path, EXTRACTOR_MAGIC, EXTRACTOR_VERSION)?;
        let io = |e| Error::io(path, e);
        let neighbor_cap = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let neighbor_seed = r.read_u64::<LittleEndian>().map_err(io)?;
        let margin = r.read_f64::<LittleEndian>().map_err(io)?;
        let params = read_blocks(&mut r, path, 4)?;
        Ok(Self {
            params,
            neighbor_cap,
            neighbor_seed,
            margin,
        })
    }

    fn quantize(&mut self) {
        for t in &mut self.params {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// Per-relation training bag with a fixed reference subset.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationBag {
    pub relation: usize,
    pub references: Vec<(usize, usize)>,
    pub positives: Vec<KgTriple>,
}

/// Splits every training relation's triples into `m` references and the
/// remaining positives. Bags with at most `m` triples are skipped and returned
/// separately.
pub fn make_bags(
    ds: &KgDataset,
    m: usize,
    split: RelationSplit,
    seed: u64,
) -> (Vec<RelationBag>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bags = Vec::new();
    let mut skipped = Vec::new();
    for r in ds.relations_in(split) {
        let mut ts = ds.triples_of(r);
        if ts.len() <= m {
            skipped.push(r);
            continue;
        }
        ts.shuffle(&mut rng);
        let positives = ts.split_off(m);
        bags.push(RelationBag {
            relation: r,
            references: ts.iter().map(|t| (t.head, t.tail)).collect(),
            positives,
        });
    }
    (bags, skipped)
}

/// `mean [margin - cos(c, x+) + cos(c, x-)]_+` with `c` the reference mean.
pub fn extractor_loss(
    g: &mut Graph,
    params: &[NodeId],
    inputs: &ExtractorInputs,
    references: &[(usize, usize)],
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    margin: f64,
) -> NodeId {
    let refs = ExtractorModel::pair_embeddings(g, params, inputs, references);
    let center = g.mean_rows(refs);
    let pos = ExtractorModel::pair_embeddings(g, params, inputs, positives);
    let neg = ExtractorModel::pair_embeddings(g, params, inputs, negatives);
    let cp = g.broadcast_rows(center, positives.len());
    let cn = g.broadcast_rows(center, negatives.len());
    let sp = g.row_cosine(pos, cp);
    let sn = g.row_cosine(neg, cn);
    let diff = g.sub(sn, sp);
    let shifted = g.add_scalar(diff, margin);
    let hinge = g.relu(shifted);
    g.mean(hinge)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExtractorHistory {
    pub epoch_loss: Vec<f64>,
    pub skipped_relations: Vec<String>,
    pub validation_mrr: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Trains `f1` and `f2` on the training-relation bags. When validation
/// relations exist, the weights with the best validation MRR are kept.
pub fn train_extractor(
    ds: &KgDataset,
    kge: &KgeVectors,
    config: &ExtractorConfig,
) -> Result<(ExtractorModel, ExtractorHistory)> {
    if config.batch == 0 || config.entity_hidden == 0 || config.neighbor_hidden == 0 {
        return Err(Error::Config(
            "extractor widths and batch must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ExtractorModel::new(kge.dim(), config, &mut rng);
    let inputs = ExtractorInputs::new(kge, &model.neighbor_index(ds));
    let (bags, skipped) = make_bags(ds, config.references, RelationSplit::Train, config.seed);
    let mut history = ExtractorHistory {
        skipped_relations: skipped.iter().map(|&r| ds.relations[r].clone()).collect(),
        ..Default::default()
    };
    for r in &history.skipped_relations {
        log::warn!("relation `{r}` has too few triples for a reference split; skipped");
    }
    if bags.is_empty() {
        return Err(Error::Invalid(
            "no training relation has more triples than the reference count".into(),
        ));
    }
    let known: HashSet<KgTriple> = ds.train_triples().copied().collect();
    let (val_bags, _) = make_bags(
        ds,
        config.references,
        RelationSplit::Validation,
        config.seed,
    );
    let all_known: HashSet<KgTriple> = ds.triples.iter().copied().collect();
    let mut best: Option<(f64, ExtractorModel)> = None;
    let mut adam = AdamState::new(&model.params, AdamConfig::default());
    let n_ent = ds.entities.len();

    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        let mut bag_order: Vec<usize> = (0..bags.len()).collect();
        bag_order.shuffle(&mut rng);
        for &b in &bag_order {
            let bag = &bags[b];
            let mut pos_triples = bag.positives.clone();
            pos_triples.shuffle(&mut rng);
            for chunk in pos_triples.chunks(config.batch) {
                let mut pos = Vec::with_capacity(chunk.len());
                let mut neg = Vec::with_capacity(chunk.len());
                for &t in chunk {
                    if let Some(n) = corrupt_tail(t, n_ent, &known, &mut rng) {
                        pos.push((t.head, t.tail));
                        neg.push((n.head, n.tail));
                    }
                }
                if pos.is_empty() {
                    continue;
                }
                let mut g = Graph::new();
                let p: Vec<NodeId> = model.params.iter().map(|t| g.param(t.clone())).collect();
                let loss = extractor_loss(
                    &mut g,
                    &p,
                    &inputs,
                    &bag.references,
                    &pos,
                    &neg,
                    config.margin,
                );
                let value = g.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("extractor loss at epoch {epoch}")));
                }
                let grads = g.backward(loss, &p)?;
                adam_step(&mut model.params, &grads, &mut adam, config.lr)?;
                total += value;
                steps += 1;
            }
        }
        history
            .epoch_loss
            .push(if steps > 0 { total / steps as f64 } else { 0.0 });

        let last = epoch + 1 == config.epochs;
        if !val_bags.is_empty()
            && config.eval_every > 0
            && ((epoch + 1) % config.eval_every == 0 || last)
        {
            let mrr = reference_mrr(&model, &inputs, &val_bags, &all_known, n_ent)?;
            history.validation_mrr.push(mrr);
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, model.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, m)) = best {
        model = m;
    }
    model.quantize();
    Ok((model, history))
}

/// MRR of ranking each validation positive's tail by cosine to its bag's
/// reference mean.
fn reference_mrr(
    model: &ExtractorModel,
    inputs: &ExtractorInputs,
    bags: &[RelationBag],
    known: &HashSet<KgTriple>,
    n_ent: usize,
) -> Result<f64> {
    let candidates: Vec<usize> = (0..n_ent).collect();
    let mut ranks = Vec::new();
    for bag in bags {
        let center = model.embed(inputs, &bag.references).mean_rows();
        for t in &bag.positives {
            let q = TailQuery {
                head: t.head,
                relation: t.relation,
                gold: t.tail,
            };
            ranks.push(rank_tail(&q, &center, model, inputs, &candidates, known)?);
        }
    }
    Ok(kgc_metrics(&ranks)?.mrr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TailQuery {
    pub head: usize,
    pub relation: usize,
    pub gold: usize,
}

/// Candidates remaining after removing tails that form other known triples.
pub fn filter_candidates(
    q: &TailQuery,
    candidates: &[usize],
    known: &HashSet<KgTriple>,
) -> Result<Vec<usize>> {
    if !candidates.contains(&q.gold) {
        return Err(Error::Invalid(format!(
            "gold tail {} is not a candidate",
            q.gold
        )));
    }
    Ok(candidates
        .iter()
        .copied()
        .filter(|&c| {
            c == q.gold
                || !known.contains(&KgTriple {
                    head: q.head,
                    relation: q.relation,
                    tail: c,
                })
        })
        .collect())
}

/// 1-based rank of `gold` by descending score, ties broken by entity id.
pub fn rank_of(gold: usize, scored: &[(usize, f64)]) -> Result<usize> {
    let g = scored
        .iter()
        .find(|(e, _)| *e == gold)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::Invalid(format!("gold tail {gold} was filtered out")))?;
    Ok(1 + scored
        .iter()
        .filter(|&&(e, s)| e != gold && (s > g || (s == g && e < gold)))
        .count())
}

/// Filtered rank of the gold tail under
/// `v(h, r, t') = mean_i cos(x^_i, x_(h,t'))` over the rows of `generated`.
pub fn rank_tail(
    q: &TailQuery,
    generated: &Tensor,
    extractor: &ExtractorModel,
    inputs: &ExtractorInputs,
    candidates: &[usize],
    known: &HashSet<KgTriple>,
) -> Result<usize> {
    if generated.rows() == 0 || generated.cols() != extractor.output_dim() {
        return Err(Error::Shape(format!(
            "generated relation embeddings {:?} vs extractor width {}",
            generated.shape(),
            extractor.output_dim()
        )));
    }
    let kept = filter_candidates(q, candidates, known)?;
    let pairs: Vec<(usize, usize)> = kept.iter().map(|&c| (q.head, c)).collect();
    let x = extractor.embed(inputs, &pairs);
    let scored: Vec<(usize, f64)> = kept
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, ranking_value(generated, x.row_slice(i))))
        .collect();
    rank_of(q.gold, &scored)
}

/// `(1/N_g) sum_i cos(x^_i, x)`
pub fn ranking_value(generated: &Tensor, x: &[f64]) -> f64 {
    let n = generated.rows();
    (0..n)
        .map(|i| cosine(generated.row_slice(i), x))
        .sum::<f64>()
        / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KgcMetrics {
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "Hit@10")]
    pub hit10: f64,
    #[serde(rename = "Hit@5")]
    pub hit5: f64,
    #[serde(rename = "Hit@1")]
    pub hit1: f64,
}

pub fn hit_at(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn kgc_metrics(ranks: &[usize]) -> Result<KgcMetrics> {
    if ranks.is_empty() {
        return Err(Error::Invalid("no ranks to summarize".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Invalid("ranks are 1-based".into()));
    }
    Ok(KgcMetrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64,
        hit10: hit_at(ranks, 10),
        hit5: hit_at(ranks, 5),
        hit1: hit_at(ranks, 1),
    })
}

/// Expected MRR of a uniformly random ranking: mean over queries of `H(n)/n`
/// with `n` the candidate count and `H` the harmonic number.
pub fn random_mrr(candidate_counts: &[usize]) -> f64 {
    let harmonic = |n: usize| (1..=n).map(|k| 1.0 / k as f64).sum::<f64>();
    candidate_counts
        .iter()
        .map(|&n| harmonic(n) / n as f64)
        .sum::<f64>()
        / candidate_counts.len() as f64
}

/// Optional per-relation candidate tails (`relation<TAB>entity` lines).
pub fn read_candidates(path: &Path, ds: &KgDataset) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ln, line) in read_lines(path)? {
        let Some((r, e)) = line.split_once('\t') else {
            return Err(Error::parse(path, ln, "expected `relation<TAB>entity`"));
        };
        let r = ds
            .relation_index(r.trim())
            .ok_or_else(|| Error::parse(path, ln, format!("unknown relation `{r}`")))?;
        let e = ds
            .entities
            .iter()
            .position(|x| x == e.trim())
            .ok_or_else(|| Error::parse(path, ln, format!("unknown entity `{e}`")))?;
        out.entry(r).or_default().push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{central_difference, max_relative_error};
    use proptest::{prop_assert, proptest};

    fn names(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    fn tri(h: usize, r: usize, t: usize) -> KgTriple {
        KgTriple {
            head: h,
            relation: r,
            tail: t,
        }
    }

    #[test]
    fn metrics_reference_values() {
        let m = kgc_metrics(&[2, 4]).unwrap();
        assert_eq!(m.mrr, 0.375);
        assert_eq!(m.hit1, 0.0);
        assert_eq!(m.hit5, 1.0);
        let ones = kgc_metrics(&[1, 1, 1]).unwrap();
        assert_eq!(
            (ones.mrr, ones.hit1, ones.hit5, ones.hit10),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(kgc_metrics(&[11; 4]).unwrap().hit10, 0.0);
        assert!(kgc_metrics(&[]).is_err());
        assert!(kgc_metrics(&[0]).is_err());
    }

    proptest! {
        #[test]
        fn hits_are_monotone(ranks in proptest::collection::vec(1usize..40, 1..50)) {
            let m = kgc_metrics(&ranks).unwrap();
            prop_assert!(m.hit1 <= m.hit5 && m.hit5 <= m.hit10);
            prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        }
    }

    #[test]
    fn random_mrr_closed_form() {
        assert_eq!(random_mrr(&[1]), 1.0);
        assert!((random_mrr(&[2]) - 0.75).abs() < 1e-15);
        assert!((random_mrr(&[2, 1]) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn rank_ties_break_by_entity_id() {
        let scored = [(5, 0.3), (2, 0.3), (7, 0.9), (1, 0.1)];
        assert_eq!(rank_of(5, &scored).unwrap(), 3);
        assert_eq!(rank_of(2, &scored).unwrap(), 2);
        assert_eq!(rank_of(7, &scored).unwrap(), 1);
        assert!(rank_of(9, &scored).is_err());
    }

    #[test]
    fn filtering_removes_other_true_tails_only() {
        let known: HashSet<KgTriple> = [tri(0, 0, 1), tri(0, 0, 2), tri(3, 0, 4)]
            .into_iter()
            .collect();
        let q = TailQuery {
            head: 0,
            relation: 0,
            gold: 1,
        };
        let kept = filter_candidates(&q, &[0, 1, 2, 3, 4], &known).unwrap();
        assert_eq!(kept, vec![0, 1, 3, 4]);
        assert!(filter_candidates(&q, &[0, 2], &known).is_err());
    }

    #[test]
    fn transe_and_distmult_reference_scores() {
        let h = [0.5, -1.0, 2.0];
        let r = [1.0, 1.0, 1.0];
        let t = [1.5, 0.0, 3.0];
        assert_eq!(KgeVectors::transe_score(&h, &r, &t), 0.0);
        let t2 = [0.3, 0.7, -0.2];
        let dot: f64 = h.iter().zip(&t2).map(|(a, b)| a * b).sum();
        assert_eq!(KgeVectors::distmult_score(&h, &r, &t2), dot);
    }

    fn cycle_dataset() -> KgDataset {
        let triples = vec![tri(0, 0, 1), tri(1, 0, 2), tri(2, 0, 3), tri(3, 0, 0)];
        KgDataset::new(names("e", 4), names("r", 1), vec![true], vec![], triples).unwrap()
    }

    #[test]
    fn transe_ranks_cycle_tails() {
        let ds = cycle_dataset();
        for seed in 0..3 {
            let cfg = KgeConfig {
                dim: 8,
                epochs: 1000,
                batch: 4,
                seed,
                ..Default::default()
            };
            let (kge, _) = pretrain_kge(&ds, &cfg).unwrap();
            let mut hits = 0;
            for t in &ds.triples {
                let best = (0..4)
                    .max_by(|&a, &b| {
                        kge.score(KgTriple { tail: a, ..*t })
                            .total_cmp(&kge.score(KgTriple { tail: b, ..*t }))
                    })
                    .unwrap();
                hits += usize::from(best == t.tail);
            }
            // a single translation cannot close a 4-cycle, so 3 of 4 is the ceiling
            assert!(hits as f64 / 4.0 >= 0.75, "seed {seed}: {hits}");
        }
    }

    #[test]
    fn kge_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ent = Tensor::uniform(5, 4, 1.0, &mut rng);
        let rel = Tensor::uniform(2, 4, 1.0, &mut rng);
        let pos = [tri(0, 0, 1), tri(2, 1, 3), tri(4, 0, 0)];
        let neg = [tri(0, 0, 3), tri(1, 1, 3), tri(4, 0, 2)];
        for method in [KgeMethod::Transe, KgeMethod::Distmult] {
            let eval = |e: &Tensor, r: &Tensor| {
                let mut g = Graph::new();
                let en = g.param(e.clone());
                let rn = g.param(r.clone());
                let l = kge_loss(&mut g, en, rn, &pos, &neg, method, 5.0);
                (g.scalar_value(l), g.backward(l, &[en, rn]).unwrap())
            };
            let (_, grads) = eval(&ent, &rel);
            let ne = central_difference(&ent, 1e-6, |e| eval(e, &rel).0);
            let nr = central_difference(&rel, 1e-6, |r| eval(&ent, r).0);
            assert!(max_relative_error(&grads[0], &ne) < 1e-5);
            assert!(max_relative_error(&grads[1], &nr) < 1e-5);
        }
    }

    fn toy_inputs(d: usize, n: usize, rng: &mut ChaCha8Rng) -> (KgeVectors, KgDataset) {
        let mut triples = Vec::new();
        for h in 0..n {
            triples.push(tri(h, h % 2, (h + 1) % n));
            triples.push(tri(h, 1 - h % 2, (h + 3) % n));
        }
        let ds = KgDataset::new(
            names("e", n),
            names("r", 2),
            vec![true, true],
            vec![],
            triples,
        )
        .unwrap();
        let kge = KgeVectors {
            method: KgeMethod::Transe,
            entities: Tensor::uniform(n, d, 1.0, rng),
            relations: Tensor::uniform(2, d, 1.0, rng),
        };
        (kge, ds)
    }

    #[test]
    fn isolated_entity_has_zero_structure() {
        let ds = KgDataset::new(
            names("e", 3),
            names("r", 1),
            vec![true],
            vec![],
            vec![tri(0, 0, 1)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kge = KgeVectors {
            method: KgeMethod::Transe,
            entities: Tensor::uniform(3, 2, 1.0, &mut rng),
            relations: Tensor::uniform(1, 2, 1.0, &mut rng),
        };
        let cfg = ExtractorConfig {
            entity_hidden: 3,
            neighbor_hidden: 2,
            ..Default::default()
        };
        let mut m = ExtractorModel::new(2, &cfg, &mut rng);
        m.params[3] = Tensor::new(1, 2, vec![0.5, -0.5]).unwrap();
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let x = m.embed(&inputs, &[(0, 1)]);
        // entity 1 has no outgoing neighbours: u_t = 0; entity 0 does: u_h != 0
        assert_eq!(&x.row_slice(0)[8..10], &[0.0, 0.0]);
        assert!(x.row_slice(0)[6..8].iter().any(|v| *v != 0.0));
        assert_eq!(m.output_dim(), 10);
    }

    #[test]
    fn zero_vectors_give_bias_images_at_dimension_one() {
        let ds = KgDataset::new(
            names("e", 2),
            names("r", 1),
            vec![true],
            vec![],
            vec![tri(0, 0, 1), tri(1, 0, 0)],
        )
        .unwrap();
        let kge = KgeVectors {
            method: KgeMethod::Transe,
            entities: Tensor::zeros(2, 1),
            relations: Tensor::zeros(1, 1),
        };
        let m = ExtractorModel {
            params: vec![
                Tensor::scalar(3.0),
                Tensor::scalar(0.4),
                Tensor::new(2, 1, vec![1.0, -2.0]).unwrap(),
                Tensor::scalar(-0.7),
            ],
            neighbor_cap: 50,
            neighbor_seed: 1,
            margin: 10.0,
        };
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let x = m.embed(&inputs, &[(0, 1)]);
        let a = 0.4f64.tanh();
        let b = (-0.7f64).tanh();
        assert_eq!(x.data(), &[a, a, b, b]);
    }

    #[test]
    fn neighbor_cap_samples_exactly_cap() {
        let triples: Vec<KgTriple> = (1..=120).map(|t| tri(0, 0, t)).collect();
        let ds =
            KgDataset::new(names("e", 121), names("r", 1), vec![true], vec![], triples).unwrap();
        let a = NeighborIndex::build(&ds, 50, 9);
        let b = NeighborIndex::build(&ds, 50, 9);
        assert_eq!(a.degree(0), 50);
        assert_eq!(a, b);
        let unique: HashSet<_> = a.neighbors[0].iter().collect();
        assert_eq!(unique.len(), 50);
    }

    #[test]
    fn extractor_outputs_stay_in_tanh_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let cfg = ExtractorConfig {
            entity_hidden: 4,
            neighbor_hidden: 3,
            ..Default::default()
        };
        let mut m = ExtractorModel::new(3, &cfg, &mut rng);
        m.params.iter_mut().for_each(|p| *p = p.map(|v| v * 50.0));
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let pairs: Vec<(usize, usize)> = (0..8).map(|i| (i, (i + 5) % 8)).collect();
        let x = m.embed(&inputs, &pairs);
        assert!(x.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn extractor_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let cfg = ExtractorConfig {
            entity_hidden: 4,
            neighbor_hidden: 3,
            ..Default::default()
        };
        let mut m = ExtractorModel::new(3, &cfg, &mut rng);
        m.params[1] = Tensor::uniform(1, 4, 0.5, &mut rng);
        m.params[3] = Tensor::uniform(1, 3, 0.5, &mut rng);
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let refs = [(0, 1), (2, 3), (4, 5)];
        let pos = [(6, 7), (1, 2)];
        let neg = [(6, 3), (1, 5)];
        let eval = |params: &[Tensor]| {
            let mut g = Graph::new();
            let p: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
            let l = extractor_loss(&mut g, &p, &inputs, &refs, &pos, &neg, 1.5);
            (g.scalar_value(l), g.backward(l, &p).unwrap())
        };
        let (_, grads) = eval(&m.params);
        for slot in 0..4 {
            let numeric = central_difference(&m.params[slot], 1e-6, |t| {
                let mut p = m.params.clone();
                p[slot] = t.clone();
                eval(&p).0
            });
            let err = max_relative_error(&grads[slot], &numeric);
            assert!(err < 1e-5, "slot {slot}: {err}");
        }
    }

    #[test]
    fn single_candidate_ranks_first_and_one_sample_is_plain_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let cfg = ExtractorConfig {
            entity_hidden: 2,
            neighbor_hidden: 2,
            ..Default::default()
        };
        let m = ExtractorModel::new(3, &cfg, &mut rng);
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let generated = Tensor::uniform(1, 8, 1.0, &mut rng);
        let q = TailQuery {
            head: 0,
            relation: 0,
            gold: 4,
        };
        let known = HashSet::new();
        assert_eq!(
            rank_tail(&q, &generated, &m, &inputs, &[4], &known).unwrap(),
            1
        );
        let x = m.embed(&inputs, &[(0, 4)]);
        assert_eq!(
            ranking_value(&generated, x.row_slice(0)),
            cosine(generated.row_slice(0), x.row_slice(0))
        );
    }

    #[test]
    fn gold_matching_generated_embedding_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let cfg = ExtractorConfig {
            entity_hidden: 3,
            neighbor_hidden: 2,
            ..Default::default()
        };
        let m = ExtractorModel::new(3, &cfg, &mut rng);
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let cands = [1, 2, 3, 5, 6];
        let gold = 5;
        let generated = m.embed(&inputs, &[(0, gold)]);
        let q = TailQuery {
            head: 0,
            relation: 0,
            gold,
        };
        let rank = rank_tail(&q, &generated, &m, &inputs, &cands, &HashSet::new()).unwrap();
        // brute force over all five
        let x = m.embed(&inputs, &cands.iter().map(|&c| (0, c)).collect::<Vec<_>>());
        let g = cosine(generated.row_slice(0), x.row_slice(3));
        let better = (0..5)
            .filter(|&i| {
                let s = cosine(generated.row_slice(0), x.row_slice(i));
                cands[i] != gold && (s > g || (s == g && cands[i] < gold))
            })
            .count();
        assert_eq!(rank, 1 + better);
        assert_eq!(rank, 1);
    }

    #[test]
    fn rank_is_invariant_to_candidate_order_and_filtering_only_helps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let cfg = ExtractorConfig {
            entity_hidden: 3,
            neighbor_hidden: 2,
            ..Default::default()
        };
        let m = ExtractorModel::new(3, &cfg, &mut rng);
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let generated = Tensor::uniform(4, 10, 1.0, &mut rng);
        let q = TailQuery {
            head: 2,
            relation: 0,
            gold: 6,
        };
        let a = rank_tail(
            &q,
            &generated,
            &m,
            &inputs,
            &[0, 1, 3, 4, 5, 6, 7],
            &HashSet::new(),
        )
        .unwrap();
        let b = rank_tail(
            &q,
            &generated,
            &m,
            &inputs,
            &[7, 6, 5, 4, 3, 1, 0],
            &HashSet::new(),
        )
        .unwrap();
        assert_eq!(a, b);
        let known: HashSet<KgTriple> = [0, 1, 3, 4].iter().map(|&t| tri(2, 0, t)).collect();
        let c = rank_tail(&q, &generated, &m, &inputs, &[0, 1, 3, 4, 5, 6, 7], &known).unwrap();
        assert!(c <= a);
    }

    #[test]
    fn extractor_separates_two_relations() {
        // relation A: cluster 0 -> cluster 1; relation B: cluster 1 -> cluster 0
        let n = 40;
        let cluster = |e: usize| e % 2;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut triples = BTreeMap::new();
        while triples.len() < 160 {
            let h = rng.random_range(0..n);
            let t = rng.random_range(0..n);
            if cluster(h) != cluster(t) {
                let r = cluster(h);
                triples.insert((h, r, t), ());
            }
        }
        let triples: Vec<KgTriple> = triples.keys().map(|&(h, r, t)| tri(h, r, t)).collect();
        let ds = KgDataset::new(
            names("e", n),
            names("r", 2),
            vec![true, true],
            vec![],
            triples.clone(),
        )
        .unwrap();
        let (kge, _) = pretrain_kge(
            &ds,
            &KgeConfig {
                dim: 8,
                epochs: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = ExtractorConfig {
            entity_hidden: 8,
            neighbor_hidden: 4,
            references: 20,
            epochs: 20,
            lr: 5e-3,
            ..Default::default()
        };
        let (m, _) = train_extractor(&ds, &kge, &cfg).unwrap();
        let inputs = ExtractorInputs::new(&kge, &m.neighbor_index(&ds));
        let (bags, _) = make_bags(&ds, 20, RelationSplit::Train, cfg.seed);
        let centers: Vec<Tensor> = bags
            .iter()
            .map(|b| m.embed(&inputs, &b.references).mean_rows())
            .collect();
        let mut within = 0.0;
        let mut cross = 0.0;
        let mut count = 0.0;
        for (i, b) in bags.iter().enumerate() {
            let pairs: Vec<(usize, usize)> = b.positives.iter().map(|t| (t.head, t.tail)).collect();
            let x = m.embed(&inputs, &pairs);
            for k in 0..x.rows() {
                within += cosine(centers[i].data(), x.row_slice(k));
                cross += cosine(centers[1 - i].data(), x.row_slice(k));
                count += 1.0;
            }
        }
        assert!(
            within / count > cross / count,
            "{} vs {}",
            within / count,
            cross / count
        );
    }

    #[test]
    fn dataset_and_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (kge, ds) = toy_inputs(3, 8, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = KgDataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);

        let kge = KgeVectors {
            entities: kge.entities.map(|v| (v * 1e4).round() / 1e4),
            relations: kge.relations.map(|v| (v * 1e4).round() / 1e4),
            ..kge
        };
        kge.write(dir.path(), &ds).unwrap();
        assert_eq!(KgeVectors::read(dir.path(), &ds).unwrap(), kge);

        let cfg = ExtractorConfig {
            entity_hidden: 3,
            neighbor_hidden: 2,
            ..Default::default()
        };
        let mut m = ExtractorModel::new(3, &cfg, &mut rng);
        m.quantize();
        let p = dir.path().join("x.ckpt");
        m.save(&p).unwrap();
        let loaded = ExtractorModel::load(&p).unwrap();
        assert_eq!(loaded, m);
        let p2 = dir.path().join("y.ckpt");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn unseen_entities_in_test_triples_are_rejected() {
        let r = KgDataset::new(
            names("e", 3),
            names("r", 2),
            vec![true, false],
            vec![],
            vec![tri(0, 0, 1), tri(0, 1, 2)],
        );
        assert!(r.is_err());
    }
}
