//! Synthetic fixtures with known ground truth.
//!
//! IMGC: each class owns a fixed-size attribute set; its prototype is a
//! random linear map applied to the attribute indicator, and instances are
//! the prototype plus isotropic Gaussian noise. The schema carries the
//! attribute links, a shallow hierarchy and short descriptions made of
//! attribute tokens.
//!
//! KGC: entities fall into typed clusters; each relation links a domain
//! cluster to a range cluster, and the schema declares those types.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgc::FeatureDataset;
use crate::io::{write_text, VectorTable};
use crate::kgc::{KgDataset, KgTriple};
use crate::numcore::Tensor;
use crate::ontology::{OntologySchema, PropertyTag};

pub const SUBCLASS: &str = "rdfs:subClassOf";
pub const HAS_ATTRIBUTE: &str = "hasAttribute";
pub const DOMAIN: &str = "rdfs:domain";
pub const RANGE: &str = "rdfs:range";
pub const COMMENT: &str = "rdfs:comment";
pub const ROOT: &str = "animal";
pub const THING: &str = "thing";

/// Relative file layout shared by the fixture writers and the pipelines.
pub mod layout {
    pub const SCHEMA_TRIPLES: &str = "schema/triples.tsv";
    pub const SCHEMA_DESCRIPTIONS: &str = "schema/descriptions.tsv";
    pub const SCHEMA_TAGS: &str = "schema/tags.tsv";
    pub const WORDS: &str = "words.txt";
    pub const FEATURES: &str = "features";
    pub const KG: &str = "kg";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImgcSpec {
    pub classes: usize,
    pub unseen: usize,
    pub attributes: usize,
    pub attributes_per_class: usize,
    /// Parent concepts under the root; each contributes one shared attribute
    /// to its members.
    pub groups: usize,
    pub dim: usize,
    pub word_dim: usize,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Flat hierarchy and identical descriptions, so attribute links are the
    /// only class-discriminative schema content.
    pub attribute_only: bool,
    /// Explicit attribute sets, one per class, overriding random assignment.
    pub attribute_sets: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for ImgcSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            unseen: 2,
            attributes: 8,
            attributes_per_class: 3,
            groups: 2,
            dim: 32,
            word_dim: 16,
            noise: 0.1,
            train_per_class: 100,
            test_per_class: 50,
            attribute_only: false,
            attribute_sets: None,
            seed: 1,
        }
    }
}

impl ImgcSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("imgc fixture: {m}")));
        if self.classes < 2 || self.unseen == 0 || self.unseen >= self.classes {
            return bad("need at least one seen and one unseen class");
        }
        if self.dim == 0 || self.word_dim == 0 || self.attributes == 0 {
            return bad("dimensions and attribute count must be positive");
        }
        if self.attributes_per_class == 0 || self.attributes_per_class > self.attributes {
            return bad("attributes_per_class must be in 1..=attributes");
        }
        if !self.attribute_only && (self.groups == 0 || self.groups > self.attributes) {
            return bad("groups must be in 1..=attributes");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("per-class sample counts must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and non-negative");
        }
        if let Some(sets) = &self.attribute_sets {
            if sets.len() != self.classes {
                return bad("attribute_sets needs one entry per class");
            }
            if sets.iter().flatten().any(|&a| a >= self.attributes) {
                return bad("attribute index out of range");
            }
        }
        Ok(())
    }

    pub fn class_name(i: usize) -> String {
        format!("class{i:02}")
    }

    pub fn attribute_name(a: usize) -> String {
        format!("attr{a:02}")
    }

    pub fn group_name(g: usize) -> String {
        format!("group{g}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImgcGroundTruth {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub attributes: BTreeMap<String, Vec<String>>,
    pub prototypes: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ImgcFixture {
    pub spec: ImgcSpec,
    pub schema: OntologySchema,
    pub words: VectorTable,
    pub dataset: FeatureDataset,
    /// Row `c` is the prototype of class `c`.
    pub prototypes: Tensor,
    pub attribute_sets: Vec<BTreeSet<usize>>,
}

fn attribute_sets<R: Rng>(spec: &ImgcSpec, rng: &mut R) -> Result<Vec<BTreeSet<usize>>> {
    if let Some(sets) = &spec.attribute_sets {
        return Ok(sets.iter().map(|s| s.iter().copied().collect()).collect());
    }
    let mut out: Vec<BTreeSet<usize>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let mut found = None;
        for _ in 0..1000 {
            let mut set = BTreeSet::new();
            let mut pool: Vec<usize> = (0..spec.attributes).collect();
            if !spec.attribute_only {
                let g = c % spec.groups;
                set.insert(g);
                pool.retain(|&a| a != g);
            }
            pool.shuffle(rng);
            set.extend(pool.into_iter().take(spec.attributes_per_class - set.len()));
            if !out.contains(&set) {
                found = Some(set);
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            Error::Config(
                "imgc fixture: too few attributes for distinct class attribute sets".into(),
            )
        })?);
    }
    Ok(out)
}

pub fn make_imgc_fixture(spec: &ImgcSpec) -> Result<ImgcFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sets = attribute_sets(spec, &mut rng)?;

    let scale = 1.0 / (spec.attributes_per_class as f64).sqrt();
    let map = Tensor::standard_normal(spec.attributes, spec.dim, &mut rng).map(|v| v * scale);
    let mut indicator = Tensor::zeros(spec.classes, spec.attributes);
    for (c, set) in sets.iter().enumerate() {
        for &a in set {
            indicator.row_slice_mut(c)[a] = 1.0;
        }
    }
    let prototypes = indicator.matmul(&map);

    let mut schema = OntologySchema::new();
    schema.add_property(SUBCLASS, PropertyTag::Hierarchy)?;
    schema.add_property(HAS_ATTRIBUTE, PropertyTag::Attribute)?;
    schema.add_property(COMMENT, PropertyTag::Comment)?;
    schema.add_concept(ROOT)?;
    for c in 0..spec.classes {
        schema.add_concept(&ImgcSpec::class_name(c))?;
    }
    for a in 0..spec.attributes {
        schema.add_concept(&ImgcSpec::attribute_name(a))?;
    }
    if !spec.attribute_only {
        for g in 0..spec.groups {
            schema.add_triple(&ImgcSpec::group_name(g), SUBCLASS, ROOT)?;
        }
    }
    for (c, set) in sets.iter().enumerate() {
        let name = ImgcSpec::class_name(c);
        let parent = if spec.attribute_only {
            ROOT.to_string()
        } else {
            ImgcSpec::group_name(c % spec.groups)
        };
        schema.add_triple(&name, SUBCLASS, &parent)?;
        for &a in set {
            schema.add_triple(&name, HAS_ATTRIBUTE, &ImgcSpec::attribute_name(a))?;
        }
        let text = if spec.attribute_only {
            "an animal".to_string()
        } else {
            let tokens: Vec<String> = set.iter().map(|&a| ImgcSpec::attribute_name(a)).collect();
            format!("an animal with {}", tokens.join(" "))
        };
        schema.set_description(&name, &text)?;
    }

    let mut words = VectorTable::new(spec.word_dim);
    let mut vocab: Vec<String> = ["an", "animal", "with"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    vocab.extend((0..spec.attributes).map(ImgcSpec::attribute_name));
    let wscale = 1.0 / (spec.word_dim as f64).sqrt();
    for w in vocab {
        let v: Vec<f64> = (0..spec.word_dim)
            .map(|_| round6(wscale * Distribution::<f64>::sample(&StandardNormal, &mut rng)))
            .collect();
        words.insert(w, v)?;
    }

    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("validated noise");
    let sample = |c: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                prototypes
                    .row_slice(c)
                    .iter()
                    .map(|&p| {
                        let v = if spec.noise > 0.0 {
                            p + noise.sample(rng)
                        } else {
                            p
                        };
                        v as f32 as f64
                    })
                    .collect()
            })
            .collect()
    };
    let seen: Vec<bool> = (0..spec.classes)
        .map(|c| c < spec.classes - spec.unseen)
        .collect();
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for (c, &is_seen) in seen.iter().enumerate() {
        if is_seen {
            train_rows.extend(sample(c, spec.train_per_class, &mut rng));
            train_labels.extend(std::iter::repeat_n(c, spec.train_per_class));
        }
        test_rows.extend(sample(c, spec.test_per_class, &mut rng));
        test_labels.extend(std::iter::repeat_n(c, spec.test_per_class));
    }
    let dataset = FeatureDataset {
        classes: (0..spec.classes).map(ImgcSpec::class_name).collect(),
        seen,
        train_features: Tensor::from_rows(&train_rows)?,
        train_labels,
        test_features: Tensor::from_rows(&test_rows)?,
        test_labels,
    };
    dataset.validate()?;
    Ok(ImgcFixture {
        spec: spec.clone(),
        schema,
        words,
        dataset,
        prototypes,
        attribute_sets: sets,
    })
}

/// Six decimals keeps the text formats short and exact under round trips.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl ImgcFixture {
    pub fn ground_truth(&self) -> ImgcGroundTruth {
        let ds = &self.dataset;
        ImgcGroundTruth {
            seen: ds
                .seen_classes()
                .iter()
                .map(|&c| ds.classes[c].clone())
                .collect(),
            unseen: ds
                .unseen_classes()
                .iter()
                .map(|&c| ds.classes[c].clone())
                .collect(),
            attributes: self
                .attribute_sets
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    (
                        ds.classes[c].clone(),
                        s.iter().map(|&a| ImgcSpec::attribute_name(a)).collect(),
                    )
                })
                .collect(),
            prototypes: (0..ds.classes.len())
                .map(|c| (ds.classes[c].clone(), self.prototypes.row_slice(c).to_vec()))
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_schema(&self.schema, dir)?;
        self.words.write(&dir.join(layout::WORDS))?;
        self.dataset.write(&dir.join(layout::FEATURES))?;
        write_json(&dir.join(layout::GROUND_TRUTH), &self.ground_truth())
    }

    /// Fraction of unseen test rows whose nearest ground-truth prototype
    /// (among unseen classes) is their own.
    pub fn nearest_prototype_accuracy(&self) -> f64 {
        let ds = &self.dataset;
        let unseen = ds.unseen_classes();
        let mut hit = 0usize;
        let mut total = 0usize;
        for (i, &y) in ds.test_labels.iter().enumerate() {
            if ds.seen[y] {
                continue;
            }
            let row = ds.test_features.row_slice(i);
            let best = unseen
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    sq_dist(row, self.prototypes.row_slice(a))
                        .total_cmp(&sq_dist(row, self.prototypes.row_slice(b)))
                })
                .expect("unseen classes exist");
            total += 1;
            hit += usize::from(best == y);
        }
        hit as f64 / total as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn write_schema(schema: &OntologySchema, dir: &Path) -> Result<()> {
    schema.save(
        &dir.join(layout::SCHEMA_TRIPLES),
        &dir.join(layout::SCHEMA_DESCRIPTIONS),
        &dir.join(layout::SCHEMA_TAGS),
    )
}

pub fn schema_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(layout::SCHEMA_TRIPLES),
        dir.join(layout::SCHEMA_DESCRIPTIONS),
        dir.join(layout::SCHEMA_TAGS),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgcSpec {
    pub entities: usize,
    /// Entity type clusters.
    pub clusters: usize,
    pub relations: usize,
    pub unseen: usize,
    /// Unseen relations that copy the domain and range of a seen relation.
    pub siblings: usize,
    pub triples_per_relation: usize,
    /// Distinct tails a head may take under one relation.
    pub tails_per_head: usize,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for KgcSpec {
    fn default() -> Self {
        Self {
            entities: 200,
            clusters: 5,
            relations: 10,
            unseen: 2,
            siblings: 1,
            triples_per_relation: 60,
            tails_per_head: 2,
            word_dim: 16,
            seed: 1,
        }
    }
}

impl KgcSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("kgc fixture: {m}")));
        if self.clusters < 2 || self.entities < 2 * self.clusters {
            return bad("need at least two clusters of two entities");
        }
        if self.relations < 2 || self.unseen == 0 || self.unseen >= self.relations {
            return bad("need at least one seen and one unseen relation");
        }
        if self.siblings > self.unseen {
            return bad("siblings cannot exceed unseen relations");
        }
        if self.relations - self.siblings > self.clusters * (self.clusters - 1) {
            return bad("too many relations for distinct domain/range pairs");
        }
        if self.triples_per_relation == 0 || self.tails_per_head == 0 || self.word_dim == 0 {
            return bad("counts must be positive");
        }
        Ok(())
    }

    pub fn entity_name(e: usize) -> String {
        format!("e{e:03}")
    }

    pub fn relation_name(r: usize) -> String {
        format!("rel{r:02}")
    }

    pub fn cluster_name(c: usize) -> String {
        format!("type{c}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KgcGroundTruth {
    pub clusters: BTreeMap<String, String>,
    pub domain_range: BTreeMap<String, (String, String)>,
    /// Unseen relation -> the seen relation whose domain and range it shares.
    pub siblings: BTreeMap<String, String>,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct KgcFixture {
    pub spec: KgcSpec,
    pub schema: OntologySchema,
    pub words: VectorTable,
    pub dataset: KgDataset,
    pub cluster_of: Vec<usize>,
    pub domain_range: Vec<(usize, usize)>,
    pub siblings: BTreeMap<usize, usize>,
}

pub fn make_kgc_fixture(spec: &KgcSpec) -> Result<KgcFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cluster_of: Vec<usize> = (0..spec.entities).map(|e| e % spec.clusters).collect();
    let members: Vec<Vec<usize>> = (0..spec.clusters)
        .map(|c| (0..spec.entities).filter(|&e| cluster_of[e] == c).collect())
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..spec.clusters)
        .flat_map(|a| {
            (0..spec.clusters)
                .filter(move |&b| b != a)
                .map(move |b| (a, b))
        })
        .collect();
    pairs.shuffle(&mut rng);
    let seen_count = spec.relations - spec.unseen;
    let mut domain_range: Vec<(usize, usize)> = Vec::with_capacity(spec.relations);
    let mut siblings = BTreeMap::new();
    let mut next = pairs.into_iter();
    for r in 0..spec.relations {
        let unseen_pos = r.checked_sub(seen_count);
        match unseen_pos {
            Some(u) if u < spec.siblings => {
                let twin = u % seen_count;
                siblings.insert(r, twin);
                domain_range.push(domain_range[twin]);
            }
            _ => domain_range.push(next.next().expect("validated pair budget")),
        }
    }

    let mut triples = Vec::new();
    let mut in_training = BTreeSet::new();
    for (r, &(d, g)) in domain_range.iter().enumerate() {
        // each relation maps a head to a fixed small set of tails; unseen
        // relations only use entities that training triples mention
        let restrict = |pool: &Vec<usize>| -> Vec<usize> {
            if r < seen_count {
                pool.clone()
            } else {
                pool.iter()
                    .copied()
                    .filter(|e| in_training.contains(e))
                    .collect()
            }
        };
        let heads = restrict(&members[d]);
        let tails = restrict(&members[g]);
        if heads.is_empty() || tails.is_empty() {
            return Err(Error::Config(format!(
                "kgc fixture: relation {r} has no trained entities to link"
            )));
        }
        let mut set = BTreeSet::new();
        let mut attempts = 0;
        while set.len() < spec.triples_per_relation && attempts < spec.triples_per_relation * 50 {
            attempts += 1;
            let h = *heads.choose(&mut rng).expect("non-empty cluster");
            let offset = rng.random_range(0..spec.tails_per_head);
            let t = tails[(h * 7 + r * 3 + offset) % tails.len()];
            if r >= seen_count && !in_training.contains(&t) {
                continue;
            }
            set.insert((h, t));
        }
        if r < seen_count {
            for &(h, t) in &set {
                in_training.insert(h);
                in_training.insert(t);
            }
        }
        triples.extend(set.into_iter().map(|(h, t)| KgTriple {
            head: h,
            relation: r,
            tail: t,
        }));
    }

    let entities: Vec<String> = (0..spec.entities).map(KgcSpec::entity_name).collect();
    let relations: Vec<String> = (0..spec.relations).map(KgcSpec::relation_name).collect();
    let seen: Vec<bool> = (0..spec.relations).map(|r| r < seen_count).collect();
    let dataset = KgDataset::new(entities, relations, seen, Vec::new(), triples)?;

    let mut schema = OntologySchema::new();
    schema.add_property(SUBCLASS, PropertyTag::Hierarchy)?;
    schema.add_property(DOMAIN, PropertyTag::DomainRange)?;
    schema.add_property(RANGE, PropertyTag::DomainRange)?;
    schema.add_property(COMMENT, PropertyTag::Comment)?;
    for r in 0..spec.relations {
        schema.add_concept(&KgcSpec::relation_name(r))?;
    }
    for c in 0..spec.clusters {
        schema.add_triple(&KgcSpec::cluster_name(c), SUBCLASS, THING)?;
    }
    for (r, &(d, g)) in domain_range.iter().enumerate() {
        let name = KgcSpec::relation_name(r);
        schema.add_triple(&name, DOMAIN, &KgcSpec::cluster_name(d))?;
        schema.add_triple(&name, RANGE, &KgcSpec::cluster_name(g))?;
        let text = format!(
            "relates {} to {}",
            KgcSpec::cluster_name(d),
            KgcSpec::cluster_name(g)
        );
        schema.set_description(&name, &text)?;
    }

    let mut words = VectorTable::new(spec.word_dim);
    let mut vocab = vec!["relates".to_string(), "to".to_string()];
    vocab.extend((0..spec.clusters).map(KgcSpec::cluster_name));
    let wscale = 1.0 / (spec.word_dim as f64).sqrt();
    for w in vocab {
        let v: Vec<f64> = (0..spec.word_dim)
            .map(|_| round6(wscale * Distribution::<f64>::sample(&StandardNormal, &mut rng)))
            .collect();
        words.insert(w, v)?;
    }

    Ok(KgcFixture {
        spec: spec.clone(),
        schema,
        words,
        dataset,
        cluster_of,
        domain_range,
        siblings,
    })
}

impl KgcFixture {
    pub fn ground_truth(&self) -> KgcGroundTruth {
        let ds = &self.dataset;
        KgcGroundTruth {
            clusters: self
                .cluster_of
                .iter()
                .enumerate()
                .map(|(e, &c)| (ds.entities[e].clone(), KgcSpec::cluster_name(c)))
                .collect(),
            domain_range: self
                .domain_range
                .iter()
                .enumerate()
                .map(|(r, &(d, g))| {
                    (
                        ds.relations[r].clone(),
                        (KgcSpec::cluster_name(d), KgcSpec::cluster_name(g)),
                    )
                })
                .collect(),
            siblings: self
                .siblings
                .iter()
                .map(|(&u, &s)| (ds.relations[u].clone(), ds.relations[s].clone()))
                .collect(),
            seen: ds
                .seen_relations()
                .iter()
                .map(|&r| ds.relations[r].clone())
                .collect(),
            unseen: ds
                .unseen_relations()
                .iter()
                .map(|&r| ds.relations[r].clone())
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_schema(&self.schema, dir)?;
        self.words.write(&dir.join(layout::WORDS))?;
        self.dataset.write(&dir.join(layout::KG))?;
        write_json(&dir.join(layout::GROUND_TRUTH), &self.ground_truth())
    }
}

/// Breadth-first hop count between two concepts, treating schema triples as
/// undirected edges.
pub fn schema_distance(schema: &OntologySchema, a: &str, b: &str) -> Option<usize> {
    let start = schema.concept_index(a)?;
    let goal = schema.concept_index(b)?;
    let mut adj = vec![Vec::new(); schema.num_concepts()];
    for t in schema.triples() {
        adj[t.head].push(t.tail);
        adj[t.tail].push(t.head);
    }
    let mut dist = vec![usize::MAX; schema.num_concepts()];
    let mut queue = std::collections::VecDeque::from([start]);
    dist[start] = 0;
    while let Some(n) = queue.pop_front() {
        if n == goal {
            return Some(dist[n]);
        }
        for &m in &adj[n] {
            if dist[m] == usize::MAX {
                dist[m] = dist[n] + 1;
                queue.push_back(m);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgc::RelationSplit;

    #[test]
    fn six_class_fixture_is_prototype_separable() {
        let fx = make_imgc_fixture(&ImgcSpec::default()).unwrap();
        assert!(fx.nearest_prototype_accuracy() >= 0.95);
        assert_eq!(fx.dataset.unseen_classes().len(), 2);
        assert!(fx.dataset.validate().is_ok());
    }

    #[test]
    fn zero_noise_reproduces_prototypes() {
        let fx = make_imgc_fixture(&ImgcSpec {
            noise: 0.0,
            ..Default::default()
        })
        .unwrap();
        let ds = &fx.dataset;
        for (i, &y) in ds.train_labels.iter().enumerate() {
            let proto: Vec<f64> = fx
                .prototypes
                .row_slice(y)
                .iter()
                .map(|v| *v as f32 as f64)
                .collect();
            assert_eq!(ds.train_features.row_slice(i), proto.as_slice());
        }
    }

    #[test]
    fn identical_attribute_sets_give_identical_prototypes() {
        let spec = ImgcSpec {
            classes: 3,
            unseen: 2,
            attribute_only: true,
            attribute_sets: Some(vec![vec![0, 1], vec![2, 3], vec![2, 3]]),
            attributes_per_class: 2,
            ..Default::default()
        };
        let fx = make_imgc_fixture(&spec).unwrap();
        assert_eq!(fx.prototypes.row_slice(1), fx.prototypes.row_slice(2));
    }

    #[test]
    fn attribute_only_schema_has_no_other_class_signal() {
        let spec = ImgcSpec {
            attribute_only: true,
            ..Default::default()
        };
        let fx = make_imgc_fixture(&spec).unwrap();
        let descs: BTreeSet<&str> = (0..spec.classes)
            .map(|c| {
                let i = fx.schema.concept_index(&ImgcSpec::class_name(c)).unwrap();
                fx.schema.description(i).unwrap()
            })
            .collect();
        assert_eq!(descs.len(), 1);
        let ablated = fx
            .schema
            .ablate(&BTreeSet::from([PropertyTag::Attribute]))
            .unwrap();
        for (h, p, t) in ablated.triple_ids() {
            assert!(h.starts_with("class"));
            assert_eq!((p, t), (SUBCLASS, ROOT));
        }
    }

    #[test]
    fn fixtures_are_seed_deterministic() {
        let a = make_imgc_fixture(&ImgcSpec::default()).unwrap();
        let b = make_imgc_fixture(&ImgcSpec::default()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.words, b.words);
        let c = make_imgc_fixture(&ImgcSpec {
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        assert!(make_imgc_fixture(&ImgcSpec {
            unseen: 6,
            ..Default::default()
        })
        .is_err());
        assert!(make_imgc_fixture(&ImgcSpec {
            attributes: 3,
            attributes_per_class: 3,
            attribute_only: true,
            ..Default::default()
        })
        .is_err());
        assert!(make_kgc_fixture(&KgcSpec {
            relations: 30,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn kgc_relations_respect_domain_and_range() {
        let fx = make_kgc_fixture(&KgcSpec {
            clusters: 2,
            relations: 2,
            unseen: 1,
            siblings: 0,
            entities: 20,
            ..Default::default()
        })
        .unwrap();
        for t in &fx.dataset.triples {
            let (d, g) = fx.domain_range[t.relation];
            assert_eq!(fx.cluster_of[t.head], d);
            assert_eq!(fx.cluster_of[t.tail], g);
        }
    }

    #[test]
    fn kgc_fixture_is_closed_over_entities() {
        let fx = make_kgc_fixture(&KgcSpec::default()).unwrap();
        let ds = &fx.dataset;
        assert_eq!(ds.seen_relations().len(), 8);
        assert_eq!(ds.unseen_relations().len(), 2);
        let mut train_entities = BTreeSet::new();
        for t in ds
            .triples
            .iter()
            .filter(|t| ds.split[t.relation] == RelationSplit::Train)
        {
            train_entities.insert(t.head);
            train_entities.insert(t.tail);
        }
        for t in ds
            .triples
            .iter()
            .filter(|t| ds.split[t.relation] != RelationSplit::Train)
        {
            assert!(train_entities.contains(&t.head));
            assert!(train_entities.contains(&t.tail));
        }
    }

    #[test]
    fn sibling_relation_is_two_hops_from_its_twin() {
        let fx = make_kgc_fixture(&KgcSpec::default()).unwrap();
        let (&u, &s) = fx.siblings.iter().next().unwrap();
        let d = schema_distance(
            &fx.schema,
            &KgcSpec::relation_name(u),
            &KgcSpec::relation_name(s),
        );
        assert_eq!(d, Some(2));
    }
}
