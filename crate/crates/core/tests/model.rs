mod oracles;
mod support;

use anchorlm::cache::AnchorKVCache;
use anchorlm::infer::append_output;
use anchorlm::mask::{anchor_mask, causal_mask, chunk_mask, MaskMatrix};
use anchorlm::model::{forward, ModelConfig};
use rand::Rng;

fn grid(m: &MaskMatrix) -> Vec<Vec<bool>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

#[test]
fn forward_matches_naive_attention() {
    let mut rng = support::rng(11);
    for case in 0..20 {
        let cfg = support::random_config(&mut rng, 64);
        let w = support::random_weights(&mut rng, &cfg);
        let len = rng.random_range(1..=24);
        let mut seg = support::random_segmentation(&mut rng, len, 0.25);
        support::random_ids(&mut rng, &mut seg, cfg.vocab_size, 0);
        let positions: Vec<usize> = (0..len).collect();
        let mask = anchor_mask(&seg);
        let out = forward(&w, &seg.ids, &positions, &mask, None).unwrap();
        let naive = oracles::naive_attention(&support::naive_model(&w), &seg.ids, &grid(&mask), &positions);
        for (t, row) in naive.values.iter().enumerate() {
            let err = support::max_rel_err(out.logits.row(t).as_slice().unwrap(), row, 1e-6);
            assert!(err < 1e-6, "case {case} row {t}: {err}");
        }
    }
}

#[test]
fn single_token_and_self_only_masks() {
    let mut rng = support::rng(5);
    let cfg = ModelConfig {
        context_len: 16,
        ..support::random_config(&mut rng, 16)
    };
    let w = support::random_weights(&mut rng, &cfg);
    let naive = support::naive_model(&w);
    let one = forward(&w, &[3], &[0], &causal_mask(1), None).unwrap();
    let n = oracles::naive_attention(&naive, &[3], &[vec![true]], &[0]);
    assert!(support::max_rel_err(one.logits.row(0).as_slice().unwrap(), &n.values[0], 1e-6) < 1e-9);

    // With only the diagonal visible each token is transformed on its own.
    let ids = [1, 4, 2];
    let mut diag = MaskMatrix::zeros(3, 3);
    for i in 0..3 {
        diag.set(i, i, true);
    }
    let out = forward(&w, &ids, &[0, 1, 2], &diag, None).unwrap();
    for (i, &id) in ids.iter().enumerate() {
        let alone = forward(&w, &[id], &[i], &causal_mask(1), None).unwrap();
        let err = support::max_rel_err(out.logits.row(i).as_slice().unwrap(), alone.logits.row(0).as_slice().unwrap(), 1e-6);
        assert!(err < 1e-9);
    }
}

#[test]
fn cached_chunks_match_one_pass() {
    let mut rng = support::rng(21);
    for _ in 0..10 {
        let cfg = support::random_config(&mut rng, 64);
        let w = support::random_weights(&mut rng, &cfg);
        let len = rng.random_range(4..=30);
        let mut seg = support::random_segmentation(&mut rng, len, 0.2);
        support::random_ids(&mut rng, &mut seg, cfg.vocab_size, 0);
        let positions: Vec<usize> = (0..len).collect();
        let full = forward(&w, &seg.ids, &positions, &anchor_mask(&seg), None).unwrap();

        let cut = rng.random_range(1..len);
        let flags = seg.all_flags();
        let mut cache = AnchorKVCache::new();
        let head = forward(&w, &seg.ids[..cut], &positions[..cut], &chunk_mask(&[], &flags[..cut], true), None).unwrap();
        append_output(&mut cache, &head, &positions[..cut], &flags[..cut]).unwrap();
        let tail_mask = chunk_mask(&cache.live_flags(), &flags[cut..], true);
        let tail = forward(&w, &seg.ids[cut..], &positions[cut..], &tail_mask, Some(&cache)).unwrap();
        for t in cut..len {
            let err = support::max_rel_err(
                tail.logits.row(t - cut).as_slice().unwrap(),
                full.logits.row(t).as_slice().unwrap(),
                1e-6,
            );
            assert!(err < 1e-9, "{err}");
        }
    }
}
