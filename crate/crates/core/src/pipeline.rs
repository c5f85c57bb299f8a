//! Command implementations shared by the binary and the tests. Each command
//! reads its inputs from `paths.data` / `paths.out`, writes artifacts to
//! `paths.out`, and returns a JSON report that is also written there.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RunConfig, Task};
use crate::encoder::{train_encoder, ConceptEmbeddingTable, EncoderMode};
use crate::error::{Error, Result};
use crate::gan::{train_gan, GanModel, LabeledFeatures};
use crate::imgc::{zsl_evaluate, EvalMode, FeatureDataset};
use crate::io::{read_features, read_id_list, write_features, write_id_list, VectorTable};
use crate::kgc::{
    kgc_metrics, pretrain_kge, random_mrr, rank_tail, read_candidates, train_extractor,
    ExtractorInputs, ExtractorModel, KgDataset, KgTriple, KgeVectors, TailQuery,
};
use crate::ontology::{
    ablation_label, parse_drop_set, text_vectors, LoadOptions, OntologySchema, PropertyTag,
    TextMatrix,
};
use crate::zoo::{
    layout, make_imgc_fixture, make_kgc_fixture, schema_paths, write_json, ImgcSpec, KgcSpec,
};

pub mod artifacts {
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const GAN: &str = "gan.ckpt";
    pub const KGE_DIR: &str = "kge";
    pub const EXTRACTOR: &str = "extractor.ckpt";
    pub const RELATION_FEATURES: &str = "relation_features.feat";
    pub const RELATION_LABELS: &str = "relation_features.labels";
    pub const ABLATION_DIR: &str = "ablation";
}

/// Fixture spec file for `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthSpec {
    Imgc(ImgcSpec),
    Kgc(KgcSpec),
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Imgc(s) => s.seed = seed,
            Self::Kgc(s) => s.seed = seed,
        }
    }
}

/// Writes a fixture into `out` and returns its report.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<Value> {
    let (task, gt) = match spec {
        SynthSpec::Imgc(s) => {
            let fx = make_imgc_fixture(s)?;
            fx.write(out)?;
            (
                "imgc",
                json!({ "nearest_prototype_accuracy": fx.nearest_prototype_accuracy() }),
            )
        }
        SynthSpec::Kgc(s) => {
            let fx = make_kgc_fixture(s)?;
            fx.write(out)?;
            ("kgc", json!({ "triples": fx.dataset.triples.len() }))
        }
    };
    let report = json!({
        "command": "synth",
        "task": task,
        "spec": spec,
        "summary": gt,
        "meta": meta(),
    });
    write_json(&out.join("synth.json"), &report)?;
    Ok(report)
}

fn meta() -> Value {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({ "timestamp_unix": secs })
}

fn drop_set(cfg: &RunConfig) -> Result<BTreeSet<PropertyTag>> {
    parse_drop_set(&cfg.ablate)
}

fn base_report(command: &str, cfg: &RunConfig) -> Result<serde_json::Map<String, Value>> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("task".into(), json!(cfg.task));
    m.insert("ablation".into(), json!(ablation_label(&drop_set(cfg)?)));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert(
        "config".into(),
        serde_json::to_value(cfg).expect("config serializes"),
    );
    Ok(m)
}

fn finish(mut m: serde_json::Map<String, Value>, path: PathBuf) -> Result<Value> {
    m.insert("meta".into(), meta());
    let v = Value::Object(m);
    write_json(&path, &v)?;
    Ok(v)
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.out.join(name)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "missing {what}: {}",
            path.display()
        )))
    }
}

pub fn load_schema(data: &Path) -> Result<OntologySchema> {
    let (t, d, g) = schema_paths(data);
    let d = d.exists().then_some(d);
    let g = g.exists().then_some(g);
    OntologySchema::load(&t, d.as_deref(), g.as_deref(), LoadOptions::default())
}

/// Learns concept embeddings from the (possibly ablated) schema.
pub fn train_onto(cfg: &RunConfig) -> Result<Value> {
    let schema = load_schema(&cfg.paths.data)?.ablate(&drop_set(cfg)?)?;
    let words_path = cfg.paths.data.join(layout::WORDS);
    let text = match cfg.encoder.mode {
        EncoderMode::TextAware => {
            require_file(&words_path, "word vector file")?;
            text_vectors(&schema, &VectorTable::read(&words_path)?)?
        }
        EncoderMode::Default => TextMatrix::zeros(schema.num_concepts(), 1),
    };
    let (model, history) = train_encoder(&schema, &text, &cfg.encoder)?;
    let mut table = model.embedding_table(&schema)?;
    table = quantize_table(&table)?;
    table.write(&out_path(cfg, artifacts::EMBEDDINGS))?;
    let mut m = base_report("train-onto", cfg)?;
    m.insert("concepts".into(), json!(schema.num_concepts()));
    m.insert("triples".into(), json!(schema.triples().len()));
    m.insert("embedding_dim".into(), json!(table.dim()));
    m.insert("final_loss".into(), json!(history.epoch_loss.last()));
    m.insert("loss_curve".into(), json!(history.epoch_loss));
    finish(m, out_path(cfg, "train_onto.json"))
}

/// Rounds to `f32` so the text table re-reads to identical values.
fn quantize_table(t: &ConceptEmbeddingTable) -> Result<ConceptEmbeddingTable> {
    let mut out = VectorTable::new(t.dim());
    for (id, v) in t.table().iter() {
        out.insert(id, v.iter().map(|x| *x as f32 as f64).collect())?;
    }
    Ok(ConceptEmbeddingTable::from_table(out))
}

fn load_embeddings(cfg: &RunConfig) -> Result<ConceptEmbeddingTable> {
    let p = out_path(cfg, artifacts::EMBEDDINGS);
    if !p.exists() {
        return Err(Error::Invalid(format!(
            "missing embedding table {} (run train-onto first)",
            p.display()
        )));
    }
    ConceptEmbeddingTable::read(&p)
}

fn imgc_training(cfg: &RunConfig) -> Result<(FeatureDataset, LabeledFeatures)> {
    let ds = FeatureDataset::read(&cfg.paths.data.join(layout::FEATURES))?;
    let (x, y, names) = ds.seen_training();
    Ok((ds, LabeledFeatures::new(x, y, names)?))
}

fn kgc_training(cfg: &RunConfig) -> Result<LabeledFeatures> {
    let fp = out_path(cfg, artifacts::RELATION_FEATURES);
    let lp = out_path(cfg, artifacts::RELATION_LABELS);
    require_file(&fp, "relation features (run train-extractor first)")?;
    let x = read_features(&fp)?;
    let ids = read_id_list(&lp)?;
    let mut classes: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let i = match classes.iter().position(|c| *c == id) {
            Some(i) => i,
            None => {
                classes.push(id);
                classes.len() - 1
            }
        };
        labels.push(i);
    }
    LabeledFeatures::new(x, labels, classes)
}

pub fn cmd_train_gan(cfg: &RunConfig) -> Result<Value> {
    let embeddings = load_embeddings(cfg)?;
    let data = match cfg.task {
        Task::Imgc => imgc_training(cfg)?.1,
        Task::Kgc => kgc_training(cfg)?,
    };
    let (model, history) = train_gan(&data, &embeddings, &cfg.gan)?;
    model.save(&out_path(cfg, artifacts::GAN))?;
    let mut m = base_report("train-gan", cfg)?;
    m.insert("classes".into(), json!(data.classes));
    m.insert("feature_dim".into(), json!(data.dim()));
    m.insert(
        "history".into(),
        serde_json::to_value(&history).expect("history serializes"),
    );
    finish(m, out_path(cfg, "train_gan.json"))
}

fn load_kg(cfg: &RunConfig) -> Result<KgDataset> {
    KgDataset::read(&cfg.paths.data.join(layout::KG))
}

pub fn cmd_pretrain_kge(cfg: &RunConfig) -> Result<Value> {
    let ds = load_kg(cfg)?;
    let (kge, history) = pretrain_kge(&ds, &cfg.kge)?;
    let kge = KgeVectors {
        entities: kge.entities.map(|v| v as f32 as f64),
        relations: kge.relations.map(|v| v as f32 as f64),
        ..kge
    };
    kge.write(&out_path(cfg, artifacts::KGE_DIR), &ds)?;
    let mut m = base_report("pretrain-kge", cfg)?;
    m.insert("method".into(), json!(kge.method));
    m.insert("loss_curve".into(), json!(history));
    finish(m, out_path(cfg, "pretrain_kge.json"))
}

fn load_kge(cfg: &RunConfig, ds: &KgDataset) -> Result<KgeVectors> {
    let dir = out_path(cfg, artifacts::KGE_DIR);
    require_file(&dir, "pretrained KG vectors (run pretrain-kge first)")?;
    KgeVectors::read(&dir, ds)
}

pub fn cmd_train_extractor(cfg: &RunConfig) -> Result<Value> {
    let ds = load_kg(cfg)?;
    let kge = load_kge(cfg, &ds)?;
    let (model, history) = train_extractor(&ds, &kge, &cfg.extractor)?;
    model.save(&out_path(cfg, artifacts::EXTRACTOR))?;

    // real relation embeddings for every training triple feed the GAN
    let inputs = ExtractorInputs::new(&kge, &model.neighbor_index(&ds));
    let train: Vec<KgTriple> = ds.train_triples().copied().collect();
    let pairs: Vec<(usize, usize)> = train.iter().map(|t| (t.head, t.tail)).collect();
    let x = model.embed(&inputs, &pairs);
    write_features(&out_path(cfg, artifacts::RELATION_FEATURES), &x)?;
    let labels: Vec<String> = train
        .iter()
        .map(|t| ds.relations[t.relation].clone())
        .collect();
    write_id_list(&out_path(cfg, artifacts::RELATION_LABELS), &labels)?;

    let mut m = base_report("train-extractor", cfg)?;
    m.insert("feature_dim".into(), json!(model.output_dim()));
    m.insert(
        "history".into(),
        serde_json::to_value(&history).expect("history serializes"),
    );
    finish(m, out_path(cfg, "train_extractor.json"))
}

fn load_gan(cfg: &RunConfig) -> Result<GanModel> {
    let p = out_path(cfg, artifacts::GAN);
    require_file(&p, "generator checkpoint (run train-gan first)")?;
    GanModel::load(&p, None)
}

pub fn eval_report_name(cfg: &RunConfig) -> String {
    match cfg.task {
        Task::Imgc => match cfg.mode {
            EvalMode::Standard => "eval_standard.json".into(),
            EvalMode::Generalized => "eval_generalized.json".into(),
        },
        Task::Kgc => "eval_kgc.json".into(),
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Value> {
    let embeddings = load_embeddings(cfg)?;
    let gan = load_gan(cfg)?;
    if gan.embedding_dim() != embeddings.dim() {
        return Err(Error::Shape(format!(
            "generator expects {}-dim embeddings, table has {}",
            gan.embedding_dim(),
            embeddings.dim()
        )));
    }
    let mut m = base_report("eval", cfg)?;
    match cfg.task {
        Task::Imgc => {
            let ds = FeatureDataset::read(&cfg.paths.data.join(layout::FEATURES))?;
            let report = zsl_evaluate(&ds, &gan, &embeddings, cfg.mode, &cfg.eval)?;
            m.insert("mode".into(), json!(cfg.mode));
            m.insert(
                "metrics".into(),
                serde_json::to_value(&report).expect("report serializes"),
            );
        }
        Task::Kgc => {
            let (metrics, extra) = eval_kgc(cfg, &gan, &embeddings)?;
            m.insert("metrics".into(), metrics);
            for (k, v) in extra {
                m.insert(k, v);
            }
        }
    }
    finish(m, out_path(cfg, &eval_report_name(cfg)))
}

fn eval_kgc(
    cfg: &RunConfig,
    gan: &GanModel,
    embeddings: &ConceptEmbeddingTable,
) -> Result<(Value, BTreeMap<String, Value>)> {
    let ds = load_kg(cfg)?;
    let kge = load_kge(cfg, &ds)?;
    let extractor = ExtractorModel::load(&out_path(cfg, artifacts::EXTRACTOR))?;
    if extractor.kge_dim() != kge.dim() || extractor.output_dim() != gan.feature_dim() {
        return Err(Error::Shape(
            "extractor, KG vectors and generator widths disagree".into(),
        ));
    }
    let inputs = ExtractorInputs::new(&kge, &extractor.neighbor_index(&ds));
    let known: HashSet<KgTriple> = ds.triples.iter().copied().collect();
    let constrained = match &cfg.paths.candidates {
        Some(p) => Some(read_candidates(p, &ds)?),
        None => None,
    };
    let all: Vec<usize> = (0..ds.entities.len()).collect();
    let n_gen = cfg.kgc_eval.n_generated;
    if n_gen == 0 {
        return Err(Error::Config(
            "kgc_eval.n_generated must be positive".into(),
        ));
    }

    let mut ranks = Vec::new();
    let mut sizes = Vec::new();
    let mut per_relation = BTreeMap::new();
    for r in ds.unseen_relations() {
        let name = &ds.relations[r];
        let emb = embeddings.require(name)?;
        let generated = gan.generate(emb, n_gen, cfg.seed.wrapping_add(r as u64))?;
        let cands = constrained
            .as_ref()
            .and_then(|c| c.get(&r))
            .map(Vec::as_slice)
            .unwrap_or(&all);
        let mut rel_ranks = Vec::new();
        for t in ds.triples_of(r) {
            let q = TailQuery {
                head: t.head,
                relation: r,
                gold: t.tail,
            };
            let rank = rank_tail(&q, &generated, &extractor, &inputs, cands, &known)?;
            sizes.push(crate::kgc::filter_candidates(&q, cands, &known)?.len());
            rel_ranks.push(rank);
        }
        if !rel_ranks.is_empty() {
            per_relation.insert(name.clone(), kgc_metrics(&rel_ranks)?);
            ranks.extend(rel_ranks);
        }
    }
    let metrics = kgc_metrics(&ranks)?;
    let mut extra = BTreeMap::new();
    extra.insert("queries".into(), json!(ranks.len()));
    extra.insert("random_mrr".into(), json!(random_mrr(&sizes)));
    extra.insert(
        "per_relation".into(),
        serde_json::to_value(&per_relation).expect("metrics serialize"),
    );
    Ok((
        serde_json::to_value(metrics).expect("metrics serialize"),
        extra,
    ))
}

/// Runs the full pipeline once per drop set: the intact schema and each
/// single-tag ablation whose tag occurs in the schema.
pub fn cmd_ablate_suite(cfg: &RunConfig) -> Result<Value> {
    let schema = load_schema(&cfg.paths.data)?;
    let present: BTreeSet<PropertyTag> = schema
        .triples()
        .iter()
        .map(|t| schema.tag(t.property))
        .chain((schema.num_descriptions() > 0).then_some(PropertyTag::Comment))
        .collect();
    let mut sets: Vec<Vec<String>> = vec![Vec::new()];
    for tag in PropertyTag::DROPPABLE {
        if present.contains(&tag) {
            sets.push(vec![tag.as_str().to_string()]);
        }
    }
    let mut rows = Vec::new();
    for set in sets {
        let mut run = cfg.clone();
        run.ablate = set;
        let label = ablation_label(&drop_set(&run)?);
        run.paths.out = cfg
            .paths
            .out
            .join(artifacts::ABLATION_DIR)
            .join(label.trim_start_matches('-'));
        let report = run_pipeline(&run)?;
        rows.push(json!({ "ablation": label, "metrics": report["metrics"].clone() }));
    }
    let mut m = base_report("ablate-suite", cfg)?;
    m.insert("rows".into(), Value::Array(rows));
    finish(m, out_path(cfg, "ablate_suite.json"))
}

/// Every stage for the configured task, ending with the evaluation report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Value> {
    if cfg.task == Task::Kgc {
        cmd_pretrain_kge(cfg)?;
        cmd_train_extractor(cfg)?;
    }
    train_onto(cfg)?;
    cmd_train_gan(cfg)?;
    cmd_eval(cfg)
}

/// Drops report fields that legitimately differ between identical runs.
pub fn strip_meta(v: &Value) -> Value {
    let mut v = v.clone();
    if let Some(o) = v.as_object_mut() {
        o.remove("meta");
    }
    v
}
