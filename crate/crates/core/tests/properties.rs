use loopfm::infotheory::{InfoMeasure, JointTable};
use loopfm::metrics::auc;
use loopfm::quantization::{pack_nibbles, unpack_nibbles, Codec};
use loopfm::seqstore::SeqStore;
use proptest::prelude::*;

fn table(cards: &[usize], weights: &[f64]) -> JointTable {
    let names = ["a", "b", "c"][..cards.len()].iter().map(|s| s.to_string()).collect();
    let total: f64 = weights.iter().sum();
    JointTable::new(names, cards.to_vec(), weights.iter().map(|w| w / total).collect()).unwrap()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conditioning_never_raises_entropy(w in weights(2 * 3 * 2)) {
        let t = table(&[2, 3, 2], &w);
        let h_a = t.entropy(&["a"]).unwrap();
        let h_a_b = t.cond_entropy(&["a"], &["b"]).unwrap();
        let h_a_bc = t.cond_entropy(&["a"], &["b", "c"]).unwrap();
        prop_assert!(h_a_b <= h_a + 1e-9);
        prop_assert!(h_a_bc <= h_a_b + 1e-9);
    }

    #[test]
    fn data_processing_on_markov_chains(
        pa in weights(3),
        kb in weights(3 * 3),
        kc in weights(3 * 2),
    ) {
        // a -> b -> c with row-normalized kernels
        let sa: f64 = pa.iter().sum();
        let mut probs = vec![0.0; 3 * 3 * 2];
        for a in 0..3 {
            let rb: f64 = kb[a * 3..a * 3 + 3].iter().sum();
            for b in 0..3 {
                let rc: f64 = kc[b * 2..b * 2 + 2].iter().sum();
                for c in 0..2 {
                    probs[(a * 3 + b) * 2 + c] = pa[a] / sa * kb[a * 3 + b] / rb * kc[b * 2 + c] / rc;
                }
            }
        }
        let t = table(&[3, 3, 2], &probs);
        let i_ab = t.mutual_info(&["a"], &["b"]).unwrap();
        let i_ac = t.mutual_info(&["a"], &["c"]).unwrap();
        prop_assert!(i_ac <= i_ab + 1e-9);
        prop_assert!(t.cond_mutual_info(&["a"], &["c"], &["b"]).unwrap() < 1e-9);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        pairs in prop::collection::vec((-5.0f64..5.0, 0u8..2), 4..60),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let a = auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| scale * s.exp() + shift).collect();
        let b = auc(&warped, &labels).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn codecs_are_idempotent_and_bounded(z in prop::collection::vec(-1.5f64..1.5, 1..40)) {
        for codec in [Codec::Fp32, Codec::Int8Uniform, Codec::Int4Uniform] {
            let once = codec.round_trip(&z);
            prop_assert_eq!(codec.round_trip(&once), once.clone());
            let bound = match codec {
                Codec::Int8Uniform => 1.0 / 254.0 + 1e-12,
                Codec::Int4Uniform => 1.0 / 8.0 + 1e-12,
                _ => 1e-6,
            };
            for (a, b) in z.iter().zip(&once) {
                let target = if codec == Codec::Fp32 { *a } else { a.clamp(-1.0, 1.0) };
                prop_assert!((target - b).abs() <= bound, "{:?} {a} -> {b}", codec);
            }
        }
        let q = Codec::Int4Uniform.quantize(&z);
        prop_assert_eq!(q.payload.len(), z.len().div_ceil(2));
    }

    #[test]
    fn nibble_packing_round_trips(codes in prop::collection::vec(-8i8..8, 0..33)) {
        let packed = pack_nibbles(&codes).unwrap();
        prop_assert_eq!(packed.len(), codes.len().div_ceil(2));
        prop_assert_eq!(unpack_nibbles(&packed, codes.len()).unwrap(), codes);
    }

    #[test]
    fn sequences_are_strict_past_and_recent_first(
        recs in prop::collection::vec((0u64..3, 0i64..50), 0..60),
        key in 0u64..3,
        t_cur in 0i64..60,
        max_len in 1usize..8,
        window in 1i64..60,
    ) {
        let mut store = SeqStore::new(2, Codec::Fp32);
        for (n, &(k, t)) in recs.iter().enumerate() {
            store.append_vector(k, t, &[n as f64 / 64.0, 0.0], None).unwrap();
        }
        let seq = store.build_sequence(key, t_cur, max_len, window);
        let mut want: Vec<(i64, usize)> = recs
            .iter()
            .enumerate()
            .filter(|(_, &(k, t))| k == key && t < t_cur && t >= t_cur - window)
            .map(|(n, &(_, t))| (t, n))
            .collect();
        want.sort_by(|x, y| y.cmp(x));
        want.truncate(max_len);
        let got: Vec<(i64, usize)> = seq
            .timestamps
            .iter()
            .zip(&seq.entries)
            .map(|(&t, e)| (t, (e[0] * 64.0).round() as usize))
            .collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(seq.mask.len(), max_len);
        prop_assert_eq!(seq.mask.iter().filter(|m| **m).count(), seq.entries.len());
    }
}
