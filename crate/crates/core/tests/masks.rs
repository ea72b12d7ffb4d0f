mod oracles;
mod support;

use anchorlm::mask::{anchor_mask, causal_mask, chunk_mask, decode_mask_row, MaskMatrix, MaskRow};
use proptest::prelude::*;

fn grid(m: &MaskMatrix) -> Vec<Vec<bool>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

proptest! {
    #[test]
    fn anchor_mask_matches_oracle(seed in any::<u64>(), len in 1usize..=64, p in 0.0f64..0.6) {
        let seg = support::random_segmentation(&mut support::rng(seed), len, p);
        let expected = oracles::naive_anchor_mask(&seg.is_anchor, &seg.seq_index).values;
        prop_assert_eq!(grid(&anchor_mask(&seg)), expected);
    }

    #[test]
    fn decode_rows_rebuild_the_matrix(seed in any::<u64>(), len in 1usize..=64) {
        let seg = support::random_segmentation(&mut support::rng(seed), len, 0.2);
        let flags = seg.all_flags();
        let rows: Vec<MaskRow> = (0..len).map(|i| decode_mask_row(flags[i], &flags[..i])).collect();
        prop_assert_eq!(MaskMatrix::from_rows(&rows).unwrap(), anchor_mask(&seg));
    }

    #[test]
    fn chunks_match_the_full_matrix(seed in any::<u64>(), len in 2usize..=48, cut in 0usize..48) {
        let seg = support::random_segmentation(&mut support::rng(seed), len, 0.2);
        let cut = cut % len;
        let flags = seg.all_flags();
        let full = anchor_mask(&seg);
        let part = chunk_mask(&flags[..cut], &flags[cut..], true);
        for i in 0..len - cut {
            prop_assert_eq!(part.row(i), full.row(cut + i));
        }
    }
}

#[test]
fn trivial_cases() {
    let seg = support::random_segmentation(&mut support::rng(0), 1, 0.0);
    assert_eq!(grid(&anchor_mask(&seg)), vec![vec![true]]);
    let seg = anchorlm::corpus::SegmentedText::plain(vec![0; 9]);
    assert_eq!(anchor_mask(&seg), causal_mask(9));
    assert_eq!(
        grid(&causal_mask(9)),
        oracles::naive_anchor_mask(&[false; 9], &[0; 9]).values
    );
}
