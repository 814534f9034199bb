use actg_core::accountant::{compose, delta_rule, rdp_to_dp, MechanismSpec};
use actg_core::eval::js_distance;
use actg_core::gen::{nucleus, Vocab};
use actg_core::schema::{FeatureRecord, Schema, TextRecord};
use actg_core::synth::exp_mech_probs;
use proptest::prelude::*;

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn nucleus_is_a_renormalized_prefix(p in distribution(12), top_p in 0.05f64..1.0, top_k in 0usize..6) {
        let out = nucleus(&p, top_k, top_p);
        let total: f64 = out.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap();
        prop_assert!(out[argmax] > 0.0);
        let kept = out.iter().filter(|&&x| x > 0.0).count();
        if top_k > 0 {
            prop_assert!(kept <= top_k);
        }
        // Every kept token is at least as likely as every dropped one.
        let min_kept = (0..p.len()).filter(|&i| out[i] > 0.0).map(|i| p[i]).fold(f64::INFINITY, f64::min);
        let max_dropped = (0..p.len()).filter(|&i| out[i] == 0.0).map(|i| p[i]).fold(0.0, f64::max);
        prop_assert!(min_kept >= max_dropped);
    }

    #[test]
    fn js_distance_is_bounded_and_symmetric(p in distribution(7), q in distribution(7)) {
        let d = js_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, js_distance(&q, &p).unwrap());
    }

    #[test]
    fn more_steps_never_cost_less(sigma in 0.6f64..4.0, q in 0.001f64..0.3, steps in 1u64..500) {
        let eps = |t| rdp_to_dp(&compose(&[MechanismSpec::subsampled_gaussian(sigma, q, t)]).unwrap(), 1e-6).unwrap().epsilon;
        prop_assert!(eps(steps + 1) >= eps(steps));
    }

    #[test]
    fn delta_rule_shrinks_with_n(n in 3u64..10_000_000) {
        prop_assert!(delta_rule(n + 1).unwrap() < delta_rule(n).unwrap());
    }

    #[test]
    fn joint_index_round_trips(a in 0usize..3, b in 0usize..5, c in 0usize..2) {
        let schema = Schema::from_pairs("p", &[("a", &["x", "y", "z"][..]), ("b", &["1", "2", "3", "4", "5"][..]), ("c", &["u", "v"][..])]).unwrap();
        let r = FeatureRecord::new(vec![a, b, c]);
        let i = schema.joint_index(&r);
        prop_assert!(i < schema.domain_size());
        prop_assert_eq!(schema.record_from_joint(i), r);
    }

    #[test]
    fn encode_decode_round_trips(words in prop::collection::vec(0usize..5, 0..20)) {
        let pool = ["alpha", "beta", "gamma", "delta", "."];
        let vocab = Vocab::new(&pool).unwrap();
        let text = TextRecord::from_tokens(words.iter().map(|&i| pool[i].to_string()).collect());
        let ids = vocab.encode(&text).unwrap();
        prop_assert_eq!(ids.len(), words.len() + 1);
        prop_assert_eq!(vocab.decode(&ids).tokens, text.tokens);
    }

    #[test]
    fn exponential_mechanism_prefers_better_candidates(q in prop::collection::vec(-5.0f64..5.0, 2..8), eps in 0.01f64..10.0) {
        let p = exp_mech_probs(&q, eps, 1.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..q.len() {
            for j in 0..q.len() {
                if q[i] > q[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}
