//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 2 9`.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use ontogan::config::RunConfig;
use ontogan::encoder::{
    corrupt, train_encoder, ConceptEmbeddingTable, EncoderConfig, EncoderModel,
};
use ontogan::gan::{ClassStats, CriticBatch, GanConfig, GanModel, GeneratorBatch};
use ontogan::imgc::{harmonic_mean, EvalMode, FeatureDataset, SoftmaxClassifier};
use ontogan::io::{read_features, write_features, VectorTable};
use ontogan::kgc::{
    extractor_loss, hit_at, kgc_metrics, rank_tail, ExtractorInputs, ExtractorModel, KgDataset,
    KgTriple, KgeVectors, TailQuery,
};
use ontogan::numcore::gradcheck::{central_difference, max_relative_error};
use ontogan::numcore::{cosine, Graph, NodeId, Tensor};
use ontogan::ontology::{
    text_vectors, LoadOptions, OntologySchema, PropertyTag, SchemaTriple, TextMatrix,
};
use ontogan::pipeline::{self, artifacts, strip_meta, SynthSpec};
use ontogan::zoo::{layout, schema_paths};

const SEEDS: [u64; 3] = [1, 2, 3];

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Writes a fixture from one of the repo's spec files with `seed`.
fn fixture(spec: &str, seed: u64, root: &Path) -> PathBuf {
    let mut s = SynthSpec::load(&repo_file(spec)).expect("fixture spec");
    s.set_seed(seed);
    let dir = root.join(format!("fixture_{seed}"));
    pipeline::synth(&s, &dir).expect("synth");
    dir
}

fn run_config(file: &str, seed: u64, data: &Path, out: &Path, extra: &[&str]) -> RunConfig {
    let mut overrides = vec![
        format!("--seed={seed}"),
        format!("--paths.data=\"{}\"", data.display()),
        format!("--paths.out=\"{}\"", out.display()),
    ];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(Some(&repo_file(file)), &overrides).expect("run config")
}

fn metric(report: &Value, key: &str) -> f64 {
    report["metrics"][key]
        .as_f64()
        .unwrap_or_else(|| panic!("report lacks {key}"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// 1 ---------------------------------------------------------------------------

fn metric_formulas() -> Verdict {
    let h = harmonic_mean(64.90, 49.35);
    let mrr = kgc_metrics(&[2, 4]).unwrap().mrr;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut monotone = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=100)).collect();
        let hits: Vec<f64> = (1..=100).map(|k| hit_at(&ranks, k)).collect();
        monotone &= hits.windows(2).all(|w| w[0] <= w[1]) && hits[99] == 1.0;
    }
    verdict(
        (h - 56.06).abs() <= 0.01 && mrr == 0.375 && monotone,
        format!("H={h:.4} MRR={mrr} hit@k monotone={monotone}"),
    )
}

// 2 ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const FD_INSTANCES: u64 = 50;

fn fd_schema(rng: &mut ChaCha8Rng) -> (OntologySchema, TextMatrix) {
    let mut s = OntologySchema::new();
    s.add_property("subClassOf", PropertyTag::Hierarchy)
        .unwrap();
    s.add_property("hasAttr", PropertyTag::Attribute).unwrap();
    s.add_triple("a", "subClassOf", "b").unwrap();
    s.add_triple("b", "subClassOf", "c").unwrap();
    s.add_triple("a", "hasAttr", "d").unwrap();
    s.add_triple("b", "hasAttr", "e").unwrap();
    let words = ["striped", "small", "wings", "fast", "tail"];
    for (i, c) in ["a", "b", "c", "d", "e"].iter().enumerate() {
        s.set_description(c, &format!("{} {}", words[i], words[(i + 2) % 5]))
            .unwrap();
    }
    let mut table = VectorTable::new(3);
    for w in words {
        table
            .insert(w, (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
    }
    let text = text_vectors(&s, &table).unwrap();
    (s, text)
}

fn fd_encoder(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (schema, text) = fd_schema(&mut rng);
    let cfg = EncoderConfig {
        dim: 3,
        epochs: 0,
        seed,
        ..Default::default()
    };
    let (model, _) = train_encoder(&schema, &text, &cfg).unwrap();
    let pos: Vec<SchemaTriple> = schema.triples().to_vec();
    let known: HashSet<SchemaTriple> = pos.iter().copied().collect();
    let neg: Vec<SchemaTriple> = pos
        .iter()
        .map(|t| corrupt(*t, schema.num_concepts(), &known, &mut rng).unwrap())
        .collect();
    let (_, grads) = model.loss_and_grads(&pos, &neg).unwrap();
    let mut worst: f64 = 0.0;
    for slot in 0..model.params().len() {
        let numeric = central_difference(&model.params()[slot], FD_STEP, |p| {
            let mut m: EncoderModel = model.clone();
            m.params_mut()[slot] = p.clone();
            m.loss(&pos, &neg)
        });
        worst = worst.max(max_relative_error(&grads[slot], &numeric));
    }
    worst
}

fn fd_gan_model(rng: &mut ChaCha8Rng) -> (GanModel, GanConfig) {
    let cfg = GanConfig {
        generator_hidden: 5,
        critic_hidden: 5,
        noise_dim: 3,
        ..Default::default()
    };
    let clf = SoftmaxClassifier {
        weights: Tensor::uniform(4, 3, 1.0, rng),
        bias: Tensor::uniform(1, 3, 1.0, rng),
        classes: vec!["x".into(), "y".into(), "z".into()],
    };
    let mut m = GanModel::new(4, 2, clf, &cfg, rng);
    for p in m
        .generator
        .params
        .iter_mut()
        .chain(m.critic.params.iter_mut())
    {
        *p = Tensor::uniform(p.rows(), p.cols(), 1.0, rng);
    }
    (m, cfg)
}

fn fd_generator(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, cfg) = fd_gan_model(&mut rng);
    let n = 6;
    let emb = Tensor::uniform(n, 2, 1.0, &mut rng);
    let z = Tensor::standard_normal(n, 3, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let stats = ClassStats {
        means: Tensor::uniform(3, 4, 1.0, &mut rng),
    };
    let batch = GeneratorBatch {
        embeddings: &emb,
        labels: &labels,
        noise: &z,
    };
    let (_, grads) = m.generator_loss(&batch, &stats, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for slot in 0..4 {
        let numeric = central_difference(&m.generator.params[slot], FD_STEP, |p| {
            let mut mm = m.clone();
            mm.generator.params[slot] = p.clone();
            mm.generator_loss(&batch, &stats, &cfg).unwrap().0.total
        });
        worst = worst.max(max_relative_error(&grads[slot], &numeric));
    }
    worst
}

fn fd_critic(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, cfg) = fd_gan_model(&mut rng);
    let n = 6;
    let real = Tensor::uniform(n, 4, 1.0, &mut rng);
    let fake = Tensor::uniform(n, 4, 1.0, &mut rng);
    let emb = Tensor::uniform(n, 2, 1.0, &mut rng);
    let eps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let batch = CriticBatch {
        real: &real,
        fake: &fake,
        embeddings: &emb,
        epsilon: &eps,
    };
    let (_, grads) = m.critic_loss(&batch, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for slot in 0..4 {
        let numeric = central_difference(&m.critic.params[slot], FD_STEP, |p| {
            let mut mm = m.clone();
            mm.critic.params[slot] = p.clone();
            -mm.critic_loss(&batch, &cfg).unwrap().0.total
        });
        worst = worst.max(max_relative_error(&grads[slot], &numeric));
    }
    worst
}

fn fd_softmax(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clf = SoftmaxClassifier {
        weights: Tensor::uniform(5, 4, 1.0, &mut rng),
        bias: Tensor::uniform(1, 4, 1.0, &mut rng),
        classes: (0..4).map(|i| format!("c{i}")).collect(),
    };
    let x = Tensor::uniform(8, 5, 2.0, &mut rng);
    let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
    let (_, dw, db) = clf.loss_and_grads(&x, &y);
    let nw = central_difference(&clf.weights, FD_STEP, |w| {
        SoftmaxClassifier {
            weights: w.clone(),
            ..clf.clone()
        }
        .loss(&x, &y)
    });
    let nb = central_difference(&clf.bias, FD_STEP, |b| {
        SoftmaxClassifier {
            bias: b.clone(),
            ..clf.clone()
        }
        .loss(&x, &y)
    });
    max_relative_error(&dw, &nw).max(max_relative_error(&db, &nb))
}

fn fd_extractor(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, ents) = (3, 8);
    let inputs = ExtractorInputs {
        entities: Tensor::uniform(ents, d, 1.0, &mut rng),
        neighbor_mean: Tensor::uniform(ents, 2 * d, 1.0, &mut rng),
        has_neighbors: (0..ents).map(|e| e % 3 != 0).collect(),
    };
    let params = vec![
        Tensor::uniform(d, 4, 1.0, &mut rng),
        Tensor::uniform(1, 4, 1.0, &mut rng),
        Tensor::uniform(2 * d, 2, 1.0, &mut rng),
        Tensor::uniform(1, 2, 1.0, &mut rng),
    ];
    let mut pairs = |n: usize| -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| (rng.random_range(0..ents), rng.random_range(0..ents)))
            .collect()
    };
    let (refs, pos, neg) = (pairs(3), pairs(4), pairs(4));
    let eval = |ps: &[Tensor], trainable: bool| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = ps
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        let loss = extractor_loss(&mut g, &nodes, &inputs, &refs, &pos, &neg, 10.0);
        let grads = if trainable {
            g.backward(loss, &nodes).unwrap()
        } else {
            Vec::new()
        };
        (g.scalar_value(loss), grads)
    };
    let (_, grads) = eval(&params, true);
    let mut worst: f64 = 0.0;
    for slot in 0..4 {
        let numeric = central_difference(&params[slot], FD_STEP, |p| {
            let mut ps = params.clone();
            ps[slot] = p.clone();
            eval(&ps, false).0
        });
        worst = worst.max(max_relative_error(&grads[slot], &numeric));
    }
    worst
}

fn differentiation_suite() -> Verdict {
    type Check = (&'static str, fn(u64) -> f64);
    let checks: [Check; 5] = [
        ("encoder", fd_encoder),
        ("generator", fd_generator),
        ("critic+gp", fd_critic),
        ("softmax", fd_softmax),
        ("extractor", fd_extractor),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in checks {
        let worst = (0..FD_INSTANCES).map(|s| f(100 + s)).fold(0.0, f64::max);
        pass &= worst < 1e-3;
        parts.push(format!("{name} {worst:.1e}"));
    }
    verdict(
        pass,
        format!(
            "max rel err over {FD_INSTANCES} instances: {}",
            parts.join(", ")
        ),
    )
}

// 3 ---------------------------------------------------------------------------

fn encoder_oracle() -> Verdict {
    let mut s = OntologySchema::new();
    s.add_property("subClassOf", PropertyTag::Hierarchy)
        .unwrap();
    s.add_property("hasAttr", PropertyTag::Attribute).unwrap();
    s.add_triple("a", "subClassOf", "b").unwrap();
    s.add_triple("b", "subClassOf", "c").unwrap();
    s.add_triple("a", "hasAttr", "d").unwrap();
    s.add_triple("b", "hasAttr", "e").unwrap();
    let text = TextMatrix::zeros(s.num_concepts(), 8);
    let mut hits = Vec::new();
    for seed in SEEDS {
        let cfg = EncoderConfig {
            dim: 16,
            epochs: 500,
            seed,
            ..Default::default()
        };
        let (model, _) = train_encoder(&s, &text, &cfg).unwrap();
        let mut h = 0;
        for t in s.triples() {
            let gold = model.score(t.head, t.property, t.tail);
            let beaten = (0..s.num_concepts())
                .any(|c| c != t.tail && model.score(t.head, t.property, c) >= gold);
            h += usize::from(!beaten);
        }
        hits.push(h as f64 / s.triples().len() as f64);
    }
    let m = mean(&hits);
    verdict(m >= 0.8, format!("mean Hit@1 {m:.3} per seed {hits:?}"))
}

// 4, 5 ------------------------------------------------------------------------

struct ImgcRuns {
    _root: TempDir,
    ten_class: Vec<(PathBuf, PathBuf)>,
}

fn imgc_pipeline(spec: &str, root: &Path, seed: u64) -> (f64, PathBuf, PathBuf) {
    let data = fixture(spec, seed, root);
    let out = root.join(format!("run_{seed}"));
    let cfg = run_config("configs/desk_imgc.toml", seed, &data, &out, &[]);
    let report = pipeline::run_pipeline(&cfg).expect("imgc pipeline");
    (metric(&report, "acc"), data, out)
}

fn imgc_transfer(runs: &mut Option<ImgcRuns>) -> Verdict {
    let root = TempDir::new().unwrap();
    let six: Vec<f64> = SEEDS
        .iter()
        .map(|&s| imgc_pipeline("configs/zoo_imgc6.toml", &root.path().join("six"), s).0)
        .collect();
    let mut ten = Vec::new();
    let mut dirs = Vec::new();
    for s in SEEDS {
        let (acc, data, out) =
            imgc_pipeline("configs/zoo_imgc10.toml", &root.path().join("ten"), s);
        ten.push(acc);
        dirs.push((data, out));
    }
    *runs = Some(ImgcRuns {
        _root: root,
        ten_class: dirs,
    });
    let (m6, m10) = (mean(&six), mean(&ten));
    verdict(
        m6 >= 0.75 && m10 >= 0.50,
        format!("6-class unseen acc {m6:.3} {six:?} (need >= 0.75); 10-class {m10:.3} {ten:?} (need >= 0.50)"),
    )
}

fn gzsl_bias(runs: &Option<ImgcRuns>) -> Verdict {
    let Some(runs) = runs else {
        return verdict(false, "needs criterion 4's 10-class runs");
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (&seed, (data, out)) in SEEDS.iter().zip(&runs.ten_class) {
        let cfg = run_config(
            "configs/desk_imgc.toml",
            seed,
            data,
            out,
            &["--mode=generalized"],
        );
        assert_eq!(cfg.mode, EvalMode::Generalized);
        let report = pipeline::cmd_eval(&cfg).expect("generalized eval");
        let (u, s, h) = (
            metric(&report, "acc_u"),
            metric(&report, "acc_s"),
            metric(&report, "H"),
        );
        pass &= u > 0.0 && h > 0.0;
        parts.push(format!("seed {seed}: acc_s {s:.3} acc_u {u:.3} H {h:.3}"));
    }
    verdict(pass, parts.join("; "))
}

// 6 ---------------------------------------------------------------------------

fn ablation_direction() -> Verdict {
    let root = TempDir::new().unwrap();
    let spec = SynthSpec::load(&repo_file("configs/zoo_attribute_only.toml")).unwrap();
    let SynthSpec::Imgc(imgc) = spec else {
        unreachable!()
    };
    let chance = 1.0 / imgc.unseen as f64;
    let (mut full, mut att) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let data = fixture("configs/zoo_attribute_only.toml", seed, root.path());
        let out = root.path().join(format!("run_{seed}"));
        let cfg = run_config("configs/desk_imgc.toml", seed, &data, &out, &[]);
        let report = pipeline::cmd_ablate_suite(&cfg).expect("ablate-suite");
        let rows: BTreeMap<String, f64> = report["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                (
                    r["ablation"].as_str().unwrap().to_string(),
                    r["metrics"]["acc"].as_f64().unwrap(),
                )
            })
            .collect();
        full.push(rows["all"]);
        att.push(rows["-att"]);
    }
    let (f, a) = (mean(&full), mean(&att));
    verdict(
        a <= chance + 0.10 && f > 2.0 * chance,
        format!("chance {chance:.3}; full {f:.3} {full:?} (need > {:.3}); -att {a:.3} {att:?} (need <= {:.3})", 2.0 * chance, chance + 0.10),
    )
}

// 7 ---------------------------------------------------------------------------

/// Independent scorer: recomputes `x_(h,t)` from the raw weights and
/// neighbor lists, then ranks every filtered candidate by sorting.
fn brute_rank(
    q: &TailQuery,
    generated: &Tensor,
    ex: &ExtractorModel,
    kge: &KgeVectors,
    neighbors: &[Vec<(usize, usize)>],
    known: &HashSet<KgTriple>,
) -> usize {
    let affine = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
        (0..w.cols())
            .map(|j| {
                b.get(0, j)
                    + x.iter()
                        .enumerate()
                        .map(|(i, v)| v * w.get(i, j))
                        .sum::<f64>()
            })
            .collect()
    };
    let d = kge.dim();
    let structural = |e: usize| -> Vec<f64> {
        let nb = &neighbors[e];
        if nb.is_empty() {
            return vec![0.0; ex.params[2].cols()];
        }
        let mut m = vec![0.0; 2 * d];
        for &(r, t) in nb {
            for k in 0..d {
                m[k] += kge.relations.get(r, k);
                m[d + k] += kge.entities.get(t, k);
            }
        }
        m.iter_mut().for_each(|v| *v /= nb.len() as f64);
        affine(&m, &ex.params[2], &ex.params[3])
            .into_iter()
            .map(f64::tanh)
            .collect()
    };
    let embed = |h: usize, t: usize| -> Vec<f64> {
        let mut x: Vec<f64> = affine(kge.entities.row_slice(h), &ex.params[0], &ex.params[1]);
        x.extend(affine(
            kge.entities.row_slice(t),
            &ex.params[0],
            &ex.params[1],
        ));
        let mut x: Vec<f64> = x.into_iter().map(f64::tanh).collect();
        x.extend(structural(h));
        x.extend(structural(t));
        x
    };
    let score = |t: usize| -> f64 {
        let x = embed(q.head, t);
        (0..generated.rows())
            .map(|i| cosine(generated.row_slice(i), &x))
            .sum::<f64>()
            / generated.rows() as f64
    };
    let mut scored: Vec<(usize, f64)> = (0..kge.entities.rows())
        .filter(|&t| {
            t == q.gold
                || !known.contains(&KgTriple {
                    head: q.head,
                    relation: q.relation,
                    tail: t,
                })
        })
        .map(|t| (t, score(t)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    1 + scored.iter().position(|(t, _)| *t == q.gold).unwrap()
}

fn ranks_match_brute_force(data: &Path, out: &Path, seed: u64) -> (usize, usize) {
    let ds = KgDataset::read(&data.join(layout::KG)).unwrap();
    let kge = KgeVectors::read(&out.join(artifacts::KGE_DIR), &ds).unwrap();
    let ex = ExtractorModel::load(&out.join(artifacts::EXTRACTOR)).unwrap();
    let gan = GanModel::load(&out.join(artifacts::GAN), None).unwrap();
    let table = ConceptEmbeddingTable::read(&out.join(artifacts::EMBEDDINGS)).unwrap();
    let index = ex.neighbor_index(&ds);
    let inputs = ExtractorInputs::new(&kge, &index);
    let known: HashSet<KgTriple> = ds.triples.iter().copied().collect();
    let all: Vec<usize> = (0..ds.entities.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unseen = ds.unseen_relations();
    let generated: BTreeMap<usize, Tensor> = unseen
        .iter()
        .map(|&r| {
            (
                r,
                gan.generate(table.require(&ds.relations[r]).unwrap(), 20, r as u64)
                    .unwrap(),
            )
        })
        .collect();
    let mut agree = 0;
    for _ in 0..100 {
        let r = unseen[rng.random_range(0..unseen.len())];
        let triples = ds.triples_of(r);
        let t = triples[rng.random_range(0..triples.len())];
        let q = TailQuery {
            head: t.head,
            relation: r,
            gold: t.tail,
        };
        let fast = rank_tail(&q, &generated[&r], &ex, &inputs, &all, &known).unwrap();
        let slow = brute_rank(&q, &generated[&r], &ex, &kge, &index.neighbors, &known);
        agree += usize::from(fast == slow);
    }
    (agree, 100)
}

fn kgc_transfer() -> Verdict {
    let root = TempDir::new().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut first = None;
    for seed in SEEDS {
        let data = fixture("configs/zoo_kgc.toml", seed, root.path());
        let out = root.path().join(format!("run_{seed}"));
        let cfg = run_config("configs/desk_kgc.toml", seed, &data, &out, &[]);
        let report = pipeline::run_pipeline(&cfg).expect("kgc pipeline");
        let mrr = metric(&report, "MRR");
        let random = report["random_mrr"].as_f64().unwrap();
        pass &= mrr > random;
        parts.push(format!("seed {seed}: MRR {mrr:.4} vs random {random:.4}"));
        first.get_or_insert((data, out));
    }
    let (data, out) = first.unwrap();
    let (agree, total) = ranks_match_brute_force(&data, &out, 11);
    pass &= agree == total;
    parts.push(format!(
        "rank_tail = brute force on {agree}/{total} queries"
    ));
    verdict(pass, parts.join("; "))
}

// 8 ---------------------------------------------------------------------------

/// Every artifact under `dir`; JSON reports lose their `meta` block.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let bytes = std::fs::read(&p).unwrap();
            let bytes = if p.extension().is_some_and(|e| e == "json") {
                let v: Value = serde_json::from_slice(&bytes).unwrap();
                serde_json::to_vec(&strip_meta(&v)).unwrap()
            } else {
                bytes
            };
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn determinism() -> Verdict {
    let root = TempDir::new().unwrap();
    let data = fixture("configs/zoo_imgc6.toml", 1, root.path());
    let out = root.path().join("run");
    let cfg = run_config("configs/desk_imgc.toml", 1, &data, &out, &[]);
    pipeline::run_pipeline(&cfg).unwrap();
    let first = snapshot(&out);
    pipeline::run_pipeline(&cfg).unwrap();
    let second = snapshot(&out);
    let differing: Vec<_> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let has = |name: &str| first.contains_key(Path::new(name));
    let complete = has(artifacts::GAN) && has(artifacts::EMBEDDINGS) && has("eval_standard.json");
    verdict(
        differing.is_empty() && complete && first.len() == second.len(),
        format!(
            "{} artifacts compared, differing: {differing:?}",
            first.len()
        ),
    )
}

// 9 ---------------------------------------------------------------------------

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

fn same_dirs(a: &Path, b: &Path) -> bool {
    let (x, y) = (snapshot(a), snapshot(b));
    !x.is_empty() && x == y
}

fn round_trip() -> Verdict {
    let root = TempDir::new().unwrap();
    let r = root.path();
    let mut ok = BTreeMap::new();

    let imgc = fixture("configs/zoo_imgc6.toml", 4, &r.join("imgc"));
    let (t, d, g) = schema_paths(&imgc);
    let schema = OntologySchema::load(&t, Some(&d), Some(&g), LoadOptions::default()).unwrap();
    let s1 = r.join("s1");
    std::fs::create_dir_all(&s1).unwrap();
    schema
        .save(&s1.join("t"), &s1.join("d"), &s1.join("g"))
        .unwrap();
    let back = OntologySchema::load(
        &s1.join("t"),
        Some(&s1.join("d")),
        Some(&s1.join("g")),
        LoadOptions::default(),
    )
    .unwrap();
    let s2 = r.join("s2");
    std::fs::create_dir_all(&s2).unwrap();
    back.save(&s2.join("t"), &s2.join("d"), &s2.join("g"))
        .unwrap();
    ok.insert("schema", same_dirs(&s1, &s2));

    let fds = FeatureDataset::read(&imgc.join(layout::FEATURES)).unwrap();
    fds.write(&r.join("f1")).unwrap();
    FeatureDataset::read(&r.join("f1"))
        .unwrap()
        .write(&r.join("f2"))
        .unwrap();
    let raw = read_features(&r.join("f1/train.feat")).unwrap();
    write_features(&r.join("raw.feat"), &raw).unwrap();
    ok.insert(
        "features",
        same_dirs(&r.join("f1"), &r.join("f2"))
            && same_bytes(&r.join("f1/train.feat"), &r.join("raw.feat")),
    );

    let words = VectorTable::read(&imgc.join(layout::WORDS)).unwrap();
    words.write(&r.join("w1.txt")).unwrap();
    VectorTable::read(&r.join("w1.txt"))
        .unwrap()
        .write(&r.join("w2.txt"))
        .unwrap();
    ok.insert(
        "word vectors",
        same_bytes(&r.join("w1.txt"), &r.join("w2.txt")),
    );

    let kgc = fixture("configs/zoo_kgc.toml", 4, &r.join("kgc"));
    let ds = KgDataset::read(&kgc.join(layout::KG)).unwrap();
    ds.write(&r.join("k1")).unwrap();
    KgDataset::read(&r.join("k1"))
        .unwrap()
        .write(&r.join("k2"))
        .unwrap();
    ok.insert("triples", same_dirs(&r.join("k1"), &r.join("k2")));

    let out = r.join("run");
    let cfg = run_config(
        "configs/desk_kgc.toml",
        4,
        &kgc,
        &out,
        &[
            "--kge.epochs=5",
            "--extractor.epochs=2",
            "--encoder.epochs=5",
            "--gan.iterations=5",
        ],
    );
    pipeline::cmd_pretrain_kge(&cfg).unwrap();
    pipeline::cmd_train_extractor(&cfg).unwrap();
    pipeline::train_onto(&cfg).unwrap();
    pipeline::cmd_train_gan(&cfg).unwrap();

    let table = ConceptEmbeddingTable::read(&out.join(artifacts::EMBEDDINGS)).unwrap();
    table.write(&r.join("e1.txt")).unwrap();
    ConceptEmbeddingTable::read(&r.join("e1.txt"))
        .unwrap()
        .write(&r.join("e2.txt"))
        .unwrap();
    let kge = KgeVectors::read(&out.join(artifacts::KGE_DIR), &ds).unwrap();
    kge.write(&r.join("v1"), &ds).unwrap();
    KgeVectors::read(&r.join("v1"), &ds)
        .unwrap()
        .write(&r.join("v2"), &ds)
        .unwrap();
    ok.insert(
        "embeddings",
        same_bytes(&out.join(artifacts::EMBEDDINGS), &r.join("e1.txt"))
            && same_bytes(&r.join("e1.txt"), &r.join("e2.txt"))
            && same_dirs(&out.join(artifacts::KGE_DIR), &r.join("v1"))
            && same_dirs(&r.join("v1"), &r.join("v2")),
    );

    let gan = GanModel::load(&out.join(artifacts::GAN), None).unwrap();
    gan.save(&r.join("g1.ckpt")).unwrap();
    GanModel::load(&r.join("g1.ckpt"), None)
        .unwrap()
        .save(&r.join("g2.ckpt"))
        .unwrap();
    let ex = ExtractorModel::load(&out.join(artifacts::EXTRACTOR)).unwrap();
    ex.save(&r.join("x1.ckpt")).unwrap();
    ExtractorModel::load(&r.join("x1.ckpt"))
        .unwrap()
        .save(&r.join("x2.ckpt"))
        .unwrap();
    ok.insert(
        "checkpoints",
        same_bytes(&out.join(artifacts::GAN), &r.join("g1.ckpt"))
            && same_bytes(&r.join("g1.ckpt"), &r.join("g2.ckpt"))
            && same_bytes(&out.join(artifacts::EXTRACTOR), &r.join("x1.ckpt"))
            && same_bytes(&r.join("x1.ckpt"), &r.join("x2.ckpt")),
    );

    let failed: Vec<_> = ok.iter().filter(|(_, v)| !**v).map(|(k, _)| *k).collect();
    verdict(
        failed.is_empty(),
        format!(
            "formats {:?}, failed {failed:?}",
            ok.keys().collect::<Vec<_>>()
        ),
    )
}

// -----------------------------------------------------------------------------

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut imgc_runs = None;
    let mut failures = 0;
    let mut stdout = std::io::stdout();

    let mut report = |n: u32, name: &str, budget_s: Option<f64>, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let in_time = budget_s.is_none_or(|b| secs < b);
        let pass = v.pass && in_time;
        if !pass {
            failures += 1;
        }
        let budget = budget_s
            .map(|b| format!(" / budget {b:.0}s"))
            .unwrap_or_default();
        writeln!(
            stdout,
            "{} [{n}] {name}: {} ({secs:.1}s{budget})",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        )
        .unwrap();
    };

    if run(1) {
        report(1, "metric formulas", Some(1.0), &mut metric_formulas);
    }
    if run(2) {
        report(
            2,
            "finite-difference checks",
            Some(120.0),
            &mut differentiation_suite,
        );
    }
    if run(3) {
        report(
            3,
            "ontology encoder oracle",
            Some(30.0),
            &mut encoder_oracle,
        );
    }
    if run(4) || run(5) {
        report(4, "IMGC transfer", Some(300.0), &mut || {
            imgc_transfer(&mut imgc_runs)
        });
    }
    if run(5) {
        report(5, "GZSL bias", None, &mut || gzsl_bias(&imgc_runs));
    }
    if run(6) {
        report(
            6,
            "ablation direction",
            Some(600.0),
            &mut ablation_direction,
        );
    }
    if run(7) {
        report(7, "zero-shot KGC transfer", Some(600.0), &mut kgc_transfer);
    }
    if run(8) {
        report(8, "determinism", None, &mut determinism);
    }
    if run(9) {
        report(9, "round trip", None, &mut round_trip);
    }

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
