use proptest::prelude::*;
use tallrec::model::{attach_lora, forward, init_model, merge_lora, LanguageModel, LoraConfig, ModelConfig};
use tallrec::tokenizer::{TokenId, TokenSequence, BOS, VOCAB_SIZE};
use tallrec::train::{lm_loss, randomize_adapters};

fn config() -> ModelConfig {
    ModelConfig { d_model: 16, n_layers: 2, n_heads: 2, d_ff: 32, max_seq: 64, ..ModelConfig::default() }
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(0..VOCAB_SIZE as TokenId, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prefix_logits_ignore_the_suffix(prefix in tokens(24), a in tokens(24), b in tokens(24), seed in 0u64..4) {
        let mut model = attach_lora(init_model(config(), seed).unwrap(), &LoraConfig::default(), seed).unwrap();
        randomize_adapters(&mut model, 0.2, seed).unwrap();
        let with = |suffix: &[TokenId]| {
            let ids: Vec<TokenId> = prefix.iter().chain(suffix).copied().collect();
            forward(&model, &ids).unwrap()
        };
        let (la, lb) = (with(&a), with(&b));
        let p = prefix.len();
        prop_assert_eq!(la.slice(ndarray::s![..p, ..]), lb.slice(ndarray::s![..p, ..]));
    }

    #[test]
    fn loss_reads_only_supervised_rows(
        ids in tokens(40),
        split in 0.0f64..1.0,
        noise in prop::collection::vec(-50.0f64..50.0, VOCAB_SIZE),
        seed in 0u64..4,
    ) {
        let mut ids = ids;
        ids.insert(0, BOS);
        let boundary = 1 + ((ids.len() - 1) as f64 * split) as usize;
        prop_assume!(boundary < ids.len());
        let seq = TokenSequence { ids, boundary };
        let model = init_model(config(), seed).unwrap();
        let logits = forward(&model, &seq.ids).unwrap();
        let base = lm_loss(&logits, &seq).unwrap();
        let mut perturbed = logits.clone();
        for (row, mut r) in perturbed.rows_mut().into_iter().enumerate() {
            if row + 1 < boundary || row + 1 == seq.len() {
                r.iter_mut().zip(&noise).for_each(|(x, n)| *x = n * (row + 1) as f64);
            }
        }
        prop_assert_eq!(lm_loss(&perturbed, &seq).unwrap(), base);
        // A supervised row does move the loss.
        let mut touched = logits.clone();
        touched[[boundary - 1, seq.ids[boundary] as usize]] -= 1.0;
        prop_assert!(lm_loss(&touched, &seq).unwrap() > base);
    }

    #[test]
    fn fresh_adapters_and_merges_are_equivalent(ids in tokens(40), seed in 0u64..8) {
        let base = init_model(config(), seed).unwrap();
        let mut adapted = attach_lora(base.clone(), &LoraConfig::default(), seed).unwrap();
        prop_assert_eq!(forward(&adapted, &ids).unwrap(), forward(&base, &ids).unwrap());
        randomize_adapters(&mut adapted, 0.2, seed).unwrap();
        let merged = merge_lora(&adapted);
        let diff = (forward(&merged, &ids).unwrap() - forward(&adapted, &ids).unwrap()).mapv(f64::abs);
        prop_assert!(diff.iter().all(|&d| d < 1e-10));
        prop_assert_eq!(adapted.base(), &base);
    }
}
