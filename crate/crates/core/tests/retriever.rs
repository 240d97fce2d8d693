mod common;

use nextverse::retriever::{
    batch_loss, prob_batch, train, DualEncoder, EncodedExample, EncoderConfig, LossOptions,
    Suggester, Tower, TrainConfig, VerseIndex,
};
use nextverse::tokenizer::train_subword;
use proptest::prelude::*;

#[test]
fn gradients_match_finite_differences_for_each_loss_variant() {
    let model = DualEncoder::new(common::grad_check_config(), 41).unwrap();
    let mut rng = common::seeded(42);
    for opts in [
        LossOptions::in_batch_only(),
        LossOptions {
            self_negative: true,
            hard_negatives: false,
        },
    ] {
        let batch = common::random_batch(&mut rng, 3, 24, false);
        let gc = common::finite_difference_check(&model, &batch, opts, 1e-5);
        assert!(
            gc.fraction_below(1e-4) >= 0.99,
            "{opts:?}: {}",
            gc.fraction_below(1e-4)
        );
        assert!(gc.max_error() < 1e-3, "{opts:?}: {}", gc.max_error());
    }
}

fn tiny_examples() -> (Vec<EncodedExample>, EncoderConfig) {
    let cfg = EncoderConfig {
        vocab_size: 24,
        max_len: 8,
        model_dim: 8,
        layers: 1,
        heads: 2,
        transformer_hidden: 8,
        head_hidden: 8,
        embed_dim: 8,
        attention_dropout: 0.1,
    };
    let mut rng = common::seeded(3);
    let batch = common::random_batch(&mut rng, 16, 24, true);
    let examples = batch
        .rows()
        .iter()
        .map(|r| EncodedExample {
            input: r.input.clone(),
            response: r.response.clone(),
            hard_negatives: r.hard_negatives.clone(),
        })
        .collect();
    (examples, cfg)
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (examples, enc) = tiny_examples();
    let cfg = TrainConfig {
        steps: 30,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (a, ra) = train(enc, &examples, &cfg).unwrap();
    let (b, rb) = train(enc, &examples, &cfg).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(ra, rb);
    let (c, _) = train(
        enc,
        &examples,
        &TrainConfig {
            seed: cfg.seed + 1,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn too_few_examples_for_a_batch_are_rejected() {
    let (examples, enc) = tiny_examples();
    let cfg = TrainConfig {
        steps: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    assert!(train(enc, &examples, &cfg).is_err());
}

#[test]
fn checkpoint_survives_a_file_round_trip() {
    let model = DualEncoder::new(common::grad_check_config(), 9).unwrap();
    let dir = tempfile_dir();
    let path = dir.join("model.bin");
    std::fs::write(&path, model.to_bytes()).unwrap();
    let back = DualEncoder::from_bytes(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(back.hash(), model.hash());
    assert_eq!(
        back.embed(Tower::Input, &[2, 5, 3]),
        model.embed(Tower::Input, &[2, 5, 3])
    );
    let mut corrupt = model.to_bytes();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 1;
    assert!(DualEncoder::from_bytes(&corrupt).is_err());
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("nextverse-retriever-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn embeddings_stay_inside_the_unit_cube(seed in 0u64..1000, ids in prop::collection::vec(0u32..40, 0..12)) {
        let model = DualEncoder::new(common::grad_check_config(), seed).unwrap();
        for tower in [Tower::Input, Tower::Response] {
            let h = model.embed(tower, &ids);
            prop_assert_eq!(h.len(), 16);
            prop_assert!(h.iter().all(|x| x.is_finite() && x.abs() < 1.0));
        }
    }

    #[test]
    fn batch_probabilities_are_proper(seed in 0u64..1000, k in 2usize..8, hard in any::<bool>()) {
        let model = DualEncoder::new(common::grad_check_config(), seed).unwrap();
        let mut rng = common::seeded(seed);
        let batch = common::random_batch(&mut rng, k, 24, hard);
        let opts = LossOptions::default();
        let mut nll = 0.0;
        for i in 0..k {
            let p = prob_batch(&model, &batch, i, opts);
            prop_assert!(p > 0.0 && p < 1.0);
            nll -= p.ln();
        }
        prop_assert!((batch_loss(&model, &batch, opts) - nll / k as f64).abs() < 1e-9);
    }
}

#[test]
fn pages_concatenate_to_the_full_ranking() {
    let pool: Vec<String> = (0..40)
        .map(|i| format!("verse number {i} of the pool"))
        .collect();
    let vocab = train_subword(&pool, 300).unwrap();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        ..common::grad_check_config()
    };
    let model = DualEncoder::new(cfg, 4).unwrap();
    let index = VerseIndex::build(&model, &vocab, &pool).unwrap();
    let s = Suggester::new(model, vocab, index).unwrap();
    let all = s.suggest("The women", 40).unwrap();
    for n in [1, 3, 7, 10] {
        let mut paged = Vec::new();
        let mut offset = 0;
        while offset < 40 {
            paged.extend(s.suggest_page("The women", offset, n).unwrap());
            offset += n;
        }
        assert_eq!(paged, all);
    }
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(s.suggest_page("The women", 0, 0).is_err());
    assert!(s.suggest_page("The women", 100, 5).unwrap().is_empty());
}
