use neurogpt::chunk::{fixed_sequence, sample_sequence, ChunkConfig, ChunkSequence};
use neurogpt::signal::Recording;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ramp_rec(c: usize, s: usize) -> Recording {
    // distinct values per (channel, sample) make misplacement visible
    let rows = (0..c)
        .map(|ch| (0..s).map(|t| (ch * 100_000 + t) as f64 + 0.25).collect())
        .collect();
    let labels = (0..c).map(|i| format!("c{i}")).collect();
    Recording::new(labels, rows, 250.0).unwrap()
}

fn cfg(n: usize, len_s: f64, overlap: f64) -> ChunkConfig {
    ChunkConfig {
        n_chunks: n,
        chunk_len_s: len_s,
        overlap_ratio: overlap,
        sample_rate_hz: 250.0,
    }
}

#[test]
fn default_span_is_57_8_seconds() {
    let c = ChunkConfig::default();
    assert_eq!(c.chunk_len_samples(), 500);
    assert_eq!(c.stride_samples(), 450);
    assert_eq!(c.required_span(), 14_450);
    assert_eq!(c.required_span() as f64 / 250.0, 57.8);
}

#[test]
fn small_spans() {
    assert_eq!(cfg(1, 2.0, 0.1).required_span(), 500);
    assert_eq!(cfg(4, 1.0, 0.0).required_span(), 250 + 3 * 250);
}

#[test]
fn exact_fit_is_all_real() {
    let rec = ramp_rec(2, 14_450);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = sample_sequence(&rec, &ChunkConfig::default(), &mut rng).unwrap();
    assert_eq!(seq.n_chunks(), 32);
    assert!(seq.pad_mask.iter().all(|&m| m));
    assert_eq!(seq.source.start, 0);
}

#[test]
fn short_trial_is_zero_padded() {
    let rec = ramp_rec(3, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = sample_sequence(&rec, &ChunkConfig::default(), &mut rng).unwrap();
    // chunk i starts at 450 i: chunks 0 and 1 are full, chunk 2 starts at 900
    // and carries the last 100 samples
    let expect_mask: Vec<bool> = (0..32).map(|i| i < 3).collect();
    assert_eq!(seq.pad_mask, expect_mask);
    let c2 = seq.chunk(2);
    for ch in 0..3 {
        let row = &c2[ch * 500..(ch + 1) * 500];
        assert_eq!(&row[..100], &rec.channel(ch)[900..1000]);
        assert!(row[100..].iter().all(|&v| v == 0.0));
    }
    for i in 3..32 {
        assert!(seq.chunk(i).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn adjacent_chunks_share_50_samples() {
    let rec = ramp_rec(2, 20_000);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = sample_sequence(&rec, &ChunkConfig::default(), &mut rng).unwrap();
    for i in 0..31 {
        let (a, b) = (seq.chunk(i), seq.chunk(i + 1));
        for ch in 0..2 {
            let tail = &a[ch * 500 + 450..ch * 500 + 500];
            let head = &b[ch * 500..ch * 500 + 50];
            assert_eq!(tail, head);
            assert_ne!(a[ch * 500 + 449], b[ch * 500]);
        }
    }
}

#[test]
fn two_second_halves_of_a_trial() {
    let rec = ramp_rec(2, 1000);
    let seq = fixed_sequence(&rec, &cfg(2, 2.0, 0.0)).unwrap();
    assert_eq!(seq.pad_mask, vec![true, true]);
    assert_eq!(&seq.chunk(1)[..500], &rec.channel(0)[500..]);

    let short = ramp_rec(2, 999);
    let seq = fixed_sequence(&short, &cfg(2, 2.0, 0.0)).unwrap();
    assert_eq!(seq.pad_mask, vec![true, true]);
    assert_eq!(&seq.chunk(1)[..499], &short.channel(0)[500..]);
    assert_eq!(seq.chunk(1)[499], 0.0);
    assert_eq!(seq, fixed_sequence(&short, &cfg(2, 2.0, 0.0)).unwrap());
}

#[test]
fn recording_shorter_than_one_chunk() {
    let rec = ramp_rec(1, 120);
    let seq = fixed_sequence(&rec, &cfg(4, 2.0, 0.1)).unwrap();
    assert_eq!(seq.pad_mask, vec![true, false, false, false]);
    assert_eq!(&seq.chunk(0)[..120], rec.channel(0));
}

fn reassembles(seq: &ChunkSequence, rec: &Recording) -> bool {
    let (c, t) = (seq.n_channels(), seq.chunk_len());
    for i in 0..seq.n_chunks() {
        let off = seq.source.start + i * seq.source.stride;
        for ch in 0..c {
            let row = &seq.chunk(i)[ch * t..(ch + 1) * t];
            for (j, &v) in row.iter().enumerate() {
                let expect = rec.channel(ch).get(off + j).copied().unwrap_or(0.0);
                if v.to_bits() != expect.to_bits() {
                    return false;
                }
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_properties(
        s in 1usize..3000,
        n in 1usize..12,
        len_s in prop::sample::select(vec![0.2, 0.5, 1.0, 2.0]),
        overlap in prop::sample::select(vec![0.0, 0.1, 0.5, 0.75]),
        seed in any::<u64>(),
    ) {
        let rec = ramp_rec(2, s);
        let cfg = cfg(n, len_s, overlap);
        let seq = sample_sequence(&rec, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(reassembles(&seq, &rec));
        // padding is a suffix and padded chunks are all zero
        let first_pad = seq.pad_mask.iter().position(|&m| !m).unwrap_or(n);
        prop_assert!(seq.pad_mask[first_pad..].iter().all(|&m| !m));
        for i in first_pad..n {
            prop_assert!(seq.chunk(i).iter().all(|&v| v == 0.0));
        }
        prop_assert!(seq.pad_mask[0]);
        let again = sample_sequence(&rec, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&seq, &again);
        if s >= cfg.required_span() {
            prop_assert!(seq.source.start + cfg.required_span() <= s);
            prop_assert_eq!(seq.n_real(), n);
        } else {
            prop_assert_eq!(seq.source.start, 0);
        }
    }
}
