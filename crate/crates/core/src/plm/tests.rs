use super::*;
use crate::data::PromptOrder;
use crate::numcore::gradcheck::{check_params, FD_STEP};
use crate::spans::IoTag;

fn config(vocab: usize, d: usize, heads: usize) -> PlmConfig {
    PlmConfig {
        vocab_size: vocab,
        hidden_dim: d,
        ff_dim: 2 * d,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        num_heads: heads,
        max_seq_len: 32,
        seed: 11,
    }
}

fn example(ids: &[usize], answer: &[usize]) -> TokenizedExample {
    let n = ids.len();
    let segs: Vec<Segment> = (0..n)
        .map(|i| if i < n / 2 { Segment::Context } else { Segment::Question })
        .collect();
    TokenizedExample {
        id: "t".into(),
        prompt: String::new(),
        prompt_token_ids: ids.to_vec(),
        prompt_token_offsets: (0..n).map(|i| (i, i + 1)).collect(),
        gold_tags: vec![IoTag::O; n / 2],
        segment_labels: segs,
        context_char_base: 0,
        answer_token_ids: answer.to_vec(),
        prompt_order: PromptOrder::ContextFirst,
    }
}

fn build(cfg: PlmConfig) -> (Plm, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = Prng::new(cfg.seed);
    let plm = Plm::register(cfg, &mut store, &mut rng).unwrap();
    (plm, store)
}

#[test]
fn encoder_shape_is_tokens_by_hidden() {
    let (plm, store) = build(config(12, 8, 2));
    let mut g = Graph::new();
    let enc = plm.encode(&mut g, &store, &example(&[5, 6, 7, 8, 9, 10, 11], &[5, EOS])).unwrap();
    assert_eq!(g.shape(enc.hidden), &[7, 8]);
    assert_eq!(enc.segments.len(), 7);
}

#[test]
fn same_seed_same_model() {
    let (a, sa) = build(config(12, 8, 2));
    let (b, sb) = build(config(12, 8, 2));
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let ex = example(&[5, 6, 7, 8], &[9, EOS]);
    let mut g1 = Graph::new();
    let mut g2 = Graph::new();
    let h1 = a.encode(&mut g1, &sa, &ex).unwrap().hidden;
    let h2 = b.encode(&mut g2, &sb, &ex).unwrap().hidden;
    assert_eq!(g1.value(h1), g2.value(h2));
}

#[test]
fn zero_weights_leave_positional_encoding() {
    let (plm, mut store) = build(config(12, 8, 2));
    for p in store.iter_mut() {
        p.tensor.values_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let enc = plm.encode(&mut g, &store, &example(&[5, 6, 7], &[5, EOS])).unwrap();
    let pe = positional_encoding(3, 8);
    for (a, b) in g.value(enc.hidden).iter().zip(&pe) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn uniform_output_gives_log_vocab_loss() {
    let (plm, mut store) = build(config(4, 4, 1));
    store.get_mut(plm.out_w).values_mut().fill(0.0);
    store.get_mut(plm.out_b).values_mut().fill(0.0);
    let ex = example(&[3, 3, 1, 2], &[3, EOS]);
    let mut g = Graph::new();
    let enc = plm.encode(&mut g, &store, &ex).unwrap();
    let loss = plm.lm_loss(&mut g, &store, &ex, &enc).unwrap();
    assert!((g.scalar(loss) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn malformed_answers_rejected() {
    let (plm, store) = build(config(12, 8, 2));
    for answer in [&[][..], &[5, 6][..]] {
        let ex = example(&[5, 6, 7, 8], answer);
        let mut g = Graph::new();
        let enc = plm.encode(&mut g, &store, &ex).unwrap();
        assert!(matches!(plm.lm_loss(&mut g, &store, &ex, &enc), Err(Error::Contract(_))));
    }
}

#[test]
fn bad_inputs_rejected() {
    let (plm, store) = build(config(12, 8, 2));
    let mut g = Graph::new();
    let long: Vec<usize> = vec![5; 33];
    assert!(matches!(
        plm.encode(&mut g, &store, &example(&long, &[EOS])),
        Err(Error::Truncation { len: 33, limit: 32 })
    ));
    assert!(matches!(
        plm.encode(&mut g, &store, &example(&[5, 12], &[EOS])),
        Err(Error::Index { index: 12, .. })
    ));
}

#[test]
fn decoder_is_causal() {
    let (plm, store) = build(config(12, 8, 2));
    let ex = example(&[5, 6, 7, 8], &[9, EOS]);
    let mut g = Graph::new();
    let enc = plm.encode(&mut g, &store, &ex).unwrap();
    let a = plm.decode_logits(&mut g, &store, enc.hidden, &[BOS, 5, 6]).unwrap();
    let b = plm.decode_logits(&mut g, &store, enc.hidden, &[BOS, 5, 11]).unwrap();
    let (va, vb) = (g.value(a), g.value(b));
    assert_eq!(&va[..24], &vb[..24]);
    assert_ne!(&va[24..], &vb[24..]);
}

#[test]
fn lm_loss_gradients_match_finite_differences() {
    let (plm, mut store) = build(config(8, 4, 1));
    let ex = example(&[5, 6, 7, 4, 3], &[6, 7, EOS]);
    let ids = plm.param_ids();
    assert_eq!(ids.len(), store.len());
    let report = check_params(&mut store, &ids, FD_STEP, |g, s| {
        let enc = plm.encode(g, s, &ex)?;
        plm.lm_loss(g, s, &ex, &enc)
    })
    .unwrap();
    for r in report {
        assert!(r.max_rel_err < 1e-5, "{} {:e}", r.name, r.max_rel_err);
    }
}

#[test]
fn generation_respects_budget_and_skips_pad() {
    let (plm, store) = build(config(12, 8, 2));
    let ex = example(&[5, 6, 7, 8], &[9, EOS]);
    assert!(plm.generate(&store, &ex, 0).unwrap().is_empty());
    assert!(plm.generate(&store, &ex, 1).unwrap().len() <= 1);
    let out = plm.generate(&store, &ex, 10).unwrap();
    assert!(out.len() <= 10);
    assert!(!out.contains(&PAD) && !out.contains(&EOS));
    assert_eq!(out, plm.generate(&store, &ex, 10).unwrap());
}

#[test]
fn argmax_ties_go_low_and_pad_is_skipped() {
    assert_eq!(argmax_skipping_pad(&[9.0, 1.0, 3.0, 3.0]), 2);
    assert_eq!(argmax_skipping_pad(&[9.0, 1.0]), 1);
}
