use proptest::prelude::*;

use logitgate::data::LogitVector;
use logitgate::ensemble::{combine_logits, softmax};
use logitgate::gp::{gate_threshold_from_values, rbf_kernel, KernelParams};
use logitgate::oracle::{align_topk, default_floor, observed_mask, truncate_topk};
use logitgate::selection::{
    greedy_filter, input_distance, lower_quantile, output_distance, DistanceMetric, SelectionThresholds,
};

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn pair_of(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| (vec_of(n), vec_of(n)))
}

proptest! {
    #[test]
    fn kernel_symmetric_and_bounded((a, b) in pair_of(1..8), sf2 in 0.01f64..10.0, ls in 0.05f64..5.0) {
        let k = KernelParams::new(sf2, ls);
        let ab = rbf_kernel(&a, &b, &k).unwrap();
        prop_assert_eq!(ab, rbf_kernel(&b, &a, &k).unwrap());
        prop_assert!(ab >= 0.0 && ab <= sf2);
        prop_assert_eq!(rbf_kernel(&a, &a, &k).unwrap(), sf2);
    }

    #[test]
    fn distances_are_metrics(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = || (0..n).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect::<Vec<f64>>();
        let (a, b, c) = (draw(), draw(), draw());
        for metric in [DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
            let d = |x: &[f64], y: &[f64]| input_distance(x, y, metric).unwrap();
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
        prop_assert!((output_distance(&a, &c).unwrap()
            - input_distance(&a, &c, DistanceMetric::Euclidean).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-700.0f64..700.0, 1..30)) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn combined_logits_shift_invariant((plus, minus) in pair_of(2..10), c in -100.0f64..100.0, alpha in 0.0f64..2.0) {
        let large: Vec<f64> = plus.iter().map(|x| x * 0.5).collect();
        let shifted: Vec<f64> = large.iter().map(|x| x + c).collect();
        let a = softmax(&combine_logits(&plus, &minus, &large, alpha).unwrap()).unwrap();
        let b = softmax(&combine_logits(&plus, &minus, &shifted, alpha).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn topk_keeps_the_largest(v in prop::collection::vec(-20.0f64..20.0, 2..20), k_frac in 0.0f64..1.0) {
        let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
        let sparse = truncate_topk(&v, k).unwrap();
        prop_assert_eq!(sparse.k(), k);
        let kept = sparse.token_ids();
        let worst_kept = kept.iter().map(|&i| v[i]).fold(f64::INFINITY, f64::min);
        for i in 0..v.len() {
            if !kept.contains(&i) {
                prop_assert!(v[i] <= worst_kept);
            }
        }
        let dense = align_topk(&sparse, v.len(), default_floor(&sparse)).unwrap();
        let mask = observed_mask(&sparse, v.len());
        prop_assert_eq!(mask.iter().filter(|m| **m).count(), k);
        prop_assert_eq!(LogitVector(dense.0.clone()).argmax(), LogitVector(v.clone()).argmax());
        prop_assert!(sparse.entries().iter().all(|e| e.logprob <= 0.0));
    }

    #[test]
    fn quantile_rank(values in prop::collection::vec(-5.0f64..5.0, 1..200), p in 0.001f64..1.0) {
        let q = lower_quantile(&values, p).unwrap();
        let rank = ((p * values.len() as f64).ceil() as usize).max(1);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(q, sorted[rank - 1]);
    }

    #[test]
    fn gate_threshold_leaves_at_most_the_target_above(values in prop::collection::vec(0.0f64..3.0, 1..300), p in 0.001f64..0.5) {
        let theta = gate_threshold_from_values(&values, p).unwrap();
        let above = values.iter().filter(|v| **v > theta).count();
        let target = (p * values.len() as f64).ceil() as usize;
        prop_assert!(above <= target);
        let distinct: std::collections::BTreeSet<u64> = values.iter().map(|v| v.to_bits()).collect();
        if distinct.len() == values.len() {
            prop_assert_eq!(above, target.min(values.len() - 1));
        }
    }

    #[test]
    fn filter_output_is_separated_and_maximal(
        points in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40),
        tau_in in 0.0f64..2.0,
        tau_out in 0.0f64..2.0,
    ) {
        let inputs: Vec<Vec<f64>> = points.iter().map(|(a, b)| vec![*a, *b]).collect();
        let outputs: Vec<Vec<f64>> = points.iter().map(|(a, b)| vec![a.sin(), b * a]).collect();
        let th = SelectionThresholds::new(tau_in, tau_out);
        let chosen = greedy_filter(&inputs, &outputs, &th, |_, _| {}).unwrap();
        prop_assert_eq!(chosen.first(), Some(&0));
        let din = |i: usize, j: usize| input_distance(&inputs[i], &inputs[j], DistanceMetric::Euclidean).unwrap();
        let dout = |i: usize, j: usize| output_distance(&outputs[i], &outputs[j]).unwrap();
        for (a, &i) in chosen.iter().enumerate() {
            for &j in &chosen[a + 1..] {
                prop_assert!(din(i, j) > tau_in && dout(i, j) > tau_out);
            }
        }
        for k in 0..inputs.len() {
            if !chosen.contains(&k) {
                prop_assert!(chosen.iter().any(|&s| din(s, k) <= tau_in || dout(s, k) <= tau_out));
            }
        }
    }
}
