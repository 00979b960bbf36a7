use dualgrad_core::dual::{
    build_dual_attention, descend, dual_forward, grad_full, with_value_regularization, DescentState, Schedule,
};
use dualgrad_core::metric::{effect_d, hit_position, ndcg_at_k, recall_at_k};
use dualgrad_core::model::rope::rotation;
use dualgrad_core::model::{decode, kernel_attention, Vocabulary};
use dualgrad_core::optimizer::MemoryBank;
use dualgrad_core::testkit::{random_vector, rel_diff, rel_diff_matrix, AttentionCase, CaseShape};
use dualgrad_core::FourierFeatureMap;
use nalgebra::DVector;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn feature_norm_identity(seed in any::<u64>(), dim in 1usize..8, half in 1usize..64, scale in 0.0f64..3.0) {
        let map = FourierFeatureMap::sample(dim, 2 * half, 1.0, seed).unwrap();
        let x = random_vector(seed, "x", dim, scale);
        let want = x.norm_squared().exp() / 2.0;
        prop_assert!((map.phi(&x).unwrap().norm_squared() - want).abs() <= 1e-12 * want);
        prop_assert!((map.exp_estimate(&x, &x).unwrap() - 2.0 * want).abs() <= 1e-12 * want);
    }

    #[test]
    fn rotations_compose_relatively(dim in 1usize..10, m in 0i64..500, n in 0i64..500) {
        let lhs = rotation(m, dim, 10_000.0).unwrap().transpose() * rotation(n, dim, 10_000.0).unwrap();
        prop_assert!((lhs - rotation(n - m, dim, 10_000.0).unwrap()).amax() <= 1e-12);
    }

    #[test]
    fn dual_reproduces_kernel_attention(seed in any::<u64>()) {
        let cs = AttentionCase::sample(seed, 128);
        let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos()).unwrap();
        let h = kernel_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos()).unwrap();
        prop_assert!(rel_diff(&dual_forward(&dual, dual.query()).unwrap(), &h) <= 1e-9);
    }

    #[test]
    fn descent_endpoint_is_schedule_free(seed in any::<u64>(), sub in 1usize..5) {
        let cs = AttentionCase::sample(seed, 64);
        let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos()).unwrap();
        let target = dual.w0() - grad_full(&dual);
        let per_token = descend(&dual, DescentState::new(&dual, Schedule::PerTokenSequential).unwrap(), usize::MAX);
        prop_assert_eq!(per_token.weights(&dual), target.clone());
        let frac = descend(&dual, DescentState::new(&dual, Schedule::FractionalUniform(sub)).unwrap(), usize::MAX);
        prop_assert!(rel_diff_matrix(&frac.weights(&dual), &target) <= 1e-12);
    }

    #[test]
    fn full_regularization_removes_task_values(seed in any::<u64>()) {
        let cs = AttentionCase::new(seed, CaseShape { n_lead: 1, ..CaseShape::sample(seed) }, 128);
        let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos()).unwrap();
        let reg = with_value_regularization(&dual, 1.0).unwrap();
        let (_, demo) = dualgrad_core::model::split_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos()).unwrap();
        prop_assert!(rel_diff(&reg.forward_at_build(), &demo) <= 1e-10);
    }

    #[test]
    fn effect_d_is_strictly_decreasing(p in 1usize..100_000) {
        prop_assert!(effect_d(Some(p)).unwrap() > effect_d(Some(p + 1)).unwrap());
        prop_assert!(effect_d(Some(p)).unwrap() <= 1.0);
    }

    #[test]
    fn ranking_metrics_agree_with_linear_scan(ids in prop::collection::vec(0usize..20, 1..60), target in 0usize..20, k in 1usize..30) {
        let scan = ids.iter().enumerate().find(|(_, &id)| id == target).map(|(i, _)| i + 1);
        prop_assert_eq!(hit_position(&ids, target), scan);
        let within = scan.is_some_and(|r| r <= k);
        prop_assert_eq!(recall_at_k(&ids, target, k).unwrap(), if within { 1.0 } else { 0.0 });
        let want = if within { effect_d(scan).unwrap() } else { 0.0 };
        prop_assert_eq!(ndcg_at_k(&ids, target, k).unwrap(), want);
    }

    #[test]
    fn decode_returns_the_masked_argmax(seed in any::<u64>(), size in 1usize..30) {
        let rows: Vec<DVector<f64>> = (0..size).map(|i| random_vector(seed, &format!("r{i}"), 3, 1.0)).collect();
        let vocab = Vocabulary::new(rows.clone(), rows.clone()).unwrap();
        let h = random_vector(seed, "h", 3, 1.0);
        let id = decode(&vocab, &h, None).unwrap();
        prop_assert!(rows.iter().all(|r| r.dot(&h) <= rows[id].dot(&h)));
    }

    #[test]
    fn memory_never_drops_its_best(hits in prop::collection::vec(prop::option::of(1usize..20), 1..40), cap in 1usize..6) {
        let mut mem = MemoryBank::new(cap);
        let mut best_seen: f64 = 0.0;
        for (i, hit) in hits.iter().enumerate() {
            let demo = dualgrad_core::optimizer::Demonstration { id: i as u64, current: vec![i], perturbation: vec![], origin: (0, i) };
            let score = dualgrad_core::metric::EffectDScore::from_hit(*hit).unwrap();
            mem.admit(demo, score, i);
            best_seen = best_seen.max(score.value);
            prop_assert_eq!(mem.best_score(), best_seen);
            prop_assert!(mem.len() <= cap);
            prop_assert!(mem.entries().iter().all(|e| e.score.is_hit()));
        }
    }
}
