use std::ffi::{CStr, CString};
use std::ptr;

use ontogan::encoder::ConceptEmbeddingTable;
use ontogan::gan::{GanConfig, GanModel};
use ontogan::imgc::SoftmaxClassifier;
use ontogan::io::VectorTable;
use ontogan::numcore::Tensor;
use ontogan_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn generated_rows_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GanConfig {
        generator_hidden: 8,
        critic_hidden: 8,
        noise_dim: 4,
        ..Default::default()
    };
    let clf = SoftmaxClassifier {
        weights: Tensor::uniform(5, 2, 1.0, &mut rng),
        bias: Tensor::zeros(1, 2),
        classes: vec!["a".into(), "b".into()],
    };
    let mut model = GanModel::new(5, 3, clf, &cfg, &mut rng);
    model.quantize();
    let path = dir.path().join("gan.ckpt");
    model.save(&path).unwrap();

    let mut gan = ptr::null_mut();
    assert_eq!(
        unsafe { oz_gan_load(c_path(&path).as_ptr(), &mut gan) },
        OzStatus::Ok
    );
    assert_eq!(unsafe { oz_gan_feature_dim(gan) }, 5);
    assert_eq!(unsafe { oz_gan_embedding_dim(gan) }, 3);

    let emb = [0.1, -0.4, 0.7];
    let mut out = vec![0.0; 4 * 5];
    let st = unsafe { oz_gan_generate(gan, emb.as_ptr(), 3, 4, 11, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OzStatus::Ok);
    assert_eq!(out, model.generate(&emb, 4, 11).unwrap().data());

    let st = unsafe { oz_gan_generate(gan, emb.as_ptr(), 2, 4, 11, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OzStatus::Shape);
    let st = unsafe { oz_gan_generate(gan, emb.as_ptr(), 3, 5, 11, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, OzStatus::Shape);
    unsafe { oz_gan_free(gan) };
}

#[test]
fn embeddings_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = VectorTable::new(2);
    t.insert("zebra", vec![0.5, -1.0]).unwrap();
    let path = dir.path().join("embeddings.txt");
    ConceptEmbeddingTable::from_table(t).write(&path).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { oz_embeddings_load(c_path(&path).as_ptr(), &mut h) },
        OzStatus::Ok
    );
    assert_eq!(unsafe { oz_embeddings_dim(h) }, 2);
    assert_eq!(unsafe { oz_embeddings_len(h) }, 1);
    let mut v = [0.0; 2];
    let zebra = CString::new("zebra").unwrap();
    assert_eq!(
        unsafe { oz_embeddings_get(h, zebra.as_ptr(), v.as_mut_ptr(), 2) },
        OzStatus::Ok
    );
    assert_eq!(v, [0.5, -1.0]);
    let horse = CString::new("horse").unwrap();
    assert_eq!(
        unsafe { oz_embeddings_get(h, horse.as_ptr(), v.as_mut_ptr(), 2) },
        OzStatus::NotFound
    );
    let msg = unsafe { CStr::from_ptr(oz_last_error_message()) }
        .to_str()
        .unwrap();
    assert!(msg.contains("horse"), "{msg}");
    unsafe { oz_embeddings_free(h) };
}

#[test]
fn header_declares_the_surface() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ontogan.h")).unwrap();
    for name in [
        "oz_gan_load",
        "oz_gan_generate",
        "oz_gan_free",
        "oz_embeddings_get",
        "oz_kgc_metrics",
        "oz_last_error_message",
        "OZ_STATUS_NULL_POINTER",
        "typedef struct OzGan OzGan",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
