use ctda_core::discrepancy::{cmmd_sq, immd_sq};
use ctda_core::kernels::EmbeddingBatch;
use ctda_core::synthgen::{generate_dataset, DatasetMode, GeneratorConfig};
use ctda_core::theory::decompose;
use ctda_core::trainer::{evaluate, load_dataset, train, Checkpoint, InputEncoding, Strategy as Objective, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::strategy::Strategy;

fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        patch_size: 64,
        ..GeneratorConfig::default()
    }
}

#[test]
fn generate_train_checkpoint_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    generate_dataset(&small_generator(), 60, DatasetMode::Mixed, 3, tmp.path()).unwrap();
    let data = load_dataset(tmp.path(), InputEncoding::Descriptor).unwrap();
    assert_eq!(data.n_classes, 3);
    assert!(data.train.len() + data.validation.len() + data.test.len() > 60);

    let config = TrainConfig {
        strategy: Objective::SupContrCe,
        epochs: 3,
        probe_epochs: 2,
        base_lr: 0.05,
        hidden_dim: 16,
        embedding_dim: 8,
        ..TrainConfig::default()
    };
    let out = train(&config, &data).unwrap();
    assert_eq!(out.log.records.len(), 3 + 2 + 3);
    let before = evaluate(&out.feature_map, &out.head, &data.test).unwrap();

    let ckpt = Checkpoint {
        encoding: data.encoding,
        feature_map: out.feature_map,
        head: out.head,
        normalizer: data.normalizer.clone(),
    };
    let path = tmp.path().join("model.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let after = evaluate(&back.feature_map, &back.head, &data.test).unwrap();
    assert_eq!(before, after);
    assert_eq!(back.normalizer.knots(), data.normalizer.knots());
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_dataset(tmp.path(), InputEncoding::Descriptor).unwrap_err();
    assert!(err.is_io());
}

fn batch_strategy() -> impl Strategy<Value = EmbeddingBatch> {
    (2usize..4, 2usize..4, 2usize..6).prop_flat_map(|(k, per_cell, m)| {
        let n = 2 * k * per_cell;
        prop::collection::vec(-1.0f64..1.0, n * m).prop_map(move |v| {
            let z = Array2::from_shape_vec((n, m), v).unwrap().mapv(|x| x + 1e-3);
            let classes = (0..n).map(|i| i % k).collect();
            let domains = (0..n).map(|i| ((i / k) % 2) as u8).collect();
            EmbeddingBatch::normalized(z, classes, domains).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn decomposition_reassembles_the_loss(b in batch_strategy(), tau in 0.05f64..5.0) {
        let r = decompose(&b, tau).unwrap();
        let rhs = r.cmmd_quarter + r.term_a - r.term_b / 2.0 + r.term_c / (2.0 * tau) + r.log_const + r.residual;
        prop_assert!((r.scaled_loss() - rhs).abs() < 1e-9);
    }

    #[test]
    fn discrepancies_are_nonnegative_and_domain_symmetric(b in batch_strategy()) {
        let c = cmmd_sq(&b).unwrap();
        prop_assert!(c >= -1e-12);
        prop_assert!(immd_sq(&b).unwrap() >= -1e-12);
        prop_assert!((cmmd_sq(&b.with_swapped_domains()).unwrap() - c).abs() < 1e-12);
    }
}
