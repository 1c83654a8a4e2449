mod common;

use common::*;
use glow_core::classes::*;
use glow_core::coverage::{mixture_occupancy, occupancy, Occupancy};
use glow_core::env::{combination_lock, random_mdp};
use glow_core::math::{clip, ratio};
use glow_core::mdp::*;
use glow_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tabular_class_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mdp = random_mdp(3, 2, 3, 0.2, &mut rng).unwrap();
    let solo = tabular_value_class(&mdp, 0, false, &mut rng);
    assert_eq!(solo.len(), 1);
    assert_eq!(solo.members()[0], q_star(&mdp));
    for extras in [1, 4, 9] {
        let class = tabular_value_class(&mdp, extras, true, &mut rng);
        assert_eq!(class.len(), extras + 1);
        assert!(class.members().iter().all(|f| f.values().iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(class.policy_class().len() <= extras + 1);
        let q = class.qstar_index().unwrap();
        assert_eq!(class.members()[q], q_star(&mdp));
    }
}

#[test]
fn induced_policies_dedup_in_first_seen_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mdp = random_mdp(3, 3, 2, 0.0, &mut rng).unwrap();
    let class = tabular_value_class(&mdp, 12, true, &mut rng);
    let greedy: Vec<Policy> = class.members().iter().map(greedy_policy).collect();
    let mut expected: Vec<Policy> = Vec::new();
    for p in greedy {
        if !expected.contains(&p) {
            expected.push(p);
        }
    }
    assert_eq!(class.policy_class().policies(), expected.as_slice());
}

#[test]
fn shuffled_class_tracks_qstar() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mdp = combination_lock(2, &[1, 0, 1]).unwrap();
    for _ in 0..20 {
        let class = complete_value_class(&mdp, 2, &mut rng).shuffled(&mut rng);
        let q = class.qstar_index().unwrap();
        assert_eq!(class.members()[q], q_star(&mdp));
    }
}

#[test]
fn complete_class_is_closed_under_backup() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mdp = random_mdp(3, 2, 3, 0.0, &mut rng).unwrap();
    let class = complete_value_class(&mdp, 2, &mut rng);
    for g in class.members() {
        for h in 0..2 {
            let back = bellman_apply(&mdp, g, h).unwrap();
            assert!(class.members().iter().any(|f| f.layer(h) == back.as_slice()));
        }
    }
}

#[test]
fn truncated_values_are_consistent_on_their_own_path() {
    // Action 0 is never correct, so every truncation's tie-broken greedy policy falls off.
    let mdp = combination_lock(2, &[1, 1, 1]).unwrap();
    let class = truncated_value_class(&mdp, false, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(class.qstar_index(), Some(0));
    assert_eq!(class.len(), 4);
    for f in &class.members()[1..] {
        let pi = greedy_policy(f);
        assert!(j_value(&mdp, &pi) < 1.0);
        let d = occupancy(&mdp, &pi);
        for h in 0..3 {
            assert!(dot(d.layer(h), &bellman_residual(&mdp, f, h)).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_weights_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mdp = random_mdp(2, 2, 3, 0.0, &mut rng).unwrap();
    let p1 = randomized_policy(&mut rng, 2, 2, 3);
    let p2 = deterministic_policy(&mut rng, 2, 2, 3);
    let d1 = occupancy(&mdp, &p1);
    let d2 = occupancy(&mdp, &p2);

    let solo = PolicyClass::explicit(vec![p1.clone()]).unwrap();
    let w = oracle_weights(&mdp, &solo, &d1, 10.0).unwrap();
    assert_eq!(w.len(), 1);
    for (b, m) in w[0].base().iter().zip(d1.mass()) {
        if *m > 0.0 {
            assert!((b - 1.0).abs() < 1e-12);
        }
    }

    let pair = PolicyClass::explicit(vec![p1, p2]).unwrap();
    let gamma = 1.5;
    let rho = mixture_occupancy(&[&d1, &d2]).unwrap();
    let w = oracle_weights(&mdp, &pair, &rho, gamma).unwrap();
    for (wi, d) in w.iter().zip([&d1, &d2]) {
        for (z, &b) in wi.base().iter().enumerate() {
            let hand = clip(ratio(d.mass()[z], (d1.mass()[z] + d2.mass()[z]) / 2.0), gamma);
            assert_eq!(b, hand);
            assert!(b <= gamma);
        }
    }
}

#[test]
fn prospective_weights_contain_the_analysis_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mdp = random_mdp(3, 2, 3, 0.3, &mut rng).unwrap();
    let pis: Vec<Policy> = (0..4).map(|_| deterministic_policy(&mut rng, 3, 2, 3)).collect();
    let occs: Vec<Occupancy> = pis.iter().map(|p| occupancy(&mdp, p)).collect();
    let played = [0usize, 2, 2];
    let mut past = vec![0.0; occs[0].mass().len()];
    for &i in &played {
        for (s, v) in past.iter_mut().zip(occs[i].mass()) {
            *s += v;
        }
    }
    let t = played.len() + 1;
    let w = prospective_weights(&occs, &past, t);
    for (k, d) in occs.iter().enumerate() {
        let mut history: Vec<&Occupancy> = played.iter().map(|&i| &occs[i]).collect();
        history.push(d);
        let dbar = mixture_occupancy(&history).unwrap();
        for (z, &b) in w[k].base().iter().enumerate() {
            let expect = ratio(d.mass()[z], dbar.mass()[z]);
            assert!((b - expect).abs() <= 1e-12 * expect.max(1.0) || b == expect);
        }
    }
}

fn static_class(members: Vec<Vec<f64>>, s: usize, a: usize, h: usize) -> WeightClass {
    WeightClass::from_static(members.into_iter().map(|b| WeightFunction::new(s, a, h, b).unwrap()).collect()).unwrap()
}

#[test]
fn mixture_augment_examples() {
    let w = static_class(vec![vec![0.5, 2.0, 4.0, 1.0], vec![1.0, 1.0, 2.0, 0.0]], 2, 1, 2);
    let one = mixture_augment(&w, 1, DEFAULT_MIXTURE_BUDGET).unwrap();
    let members = one.static_members().unwrap();
    assert_eq!(members[0].base(), &[2.0, 0.5, 0.25, 1.0]);
    assert_eq!(members[1].base(), &[1.0, 1.0, 0.5, f64::INFINITY]);

    assert_eq!(mixture_candidate_count(2, 2), 6);
    let two = mixture_augment(&w, 2, DEFAULT_MIXTURE_BUDGET).unwrap();
    // (w1, w1) and (w2, w2) collapse onto the single-element mixtures; (w1, w2) = (w2, w1).
    assert_eq!(two.static_members().unwrap().len(), 3);
    assert!((two.nominal_log_size() - 2.0 * (4.0f64).ln()).abs() < 1e-12);

    let err = mixture_augment(&w, 30, 1000).unwrap_err();
    assert!(matches!(err, Error::BudgetExceeded { budget: 1000, .. }));
}

#[test]
fn mixture_of_history_ratios_recovers_the_analysis_weight() {
    // Base ratios w^{s,t} = d^s / d^t; their mixture is d^t / dbar.
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let mdp = random_mdp(2, 2, 2, 0.0, &mut rng).unwrap();
    let occs: Vec<Occupancy> = (0..3).map(|_| occupancy(&mdp, &randomized_policy(&mut rng, 2, 2, 2))).collect();
    let target = &occs[2];
    let bases: Vec<Vec<f64>> = occs
        .iter()
        .map(|d| d.mass().iter().zip(target.mass()).map(|(&p, &q)| ratio(p, q)).collect())
        .collect();
    let w = static_class(bases, 2, 2, 2);
    let aug = mixture_augment(&w, 3, DEFAULT_MIXTURE_BUDGET).unwrap();
    let dbar = mixture_occupancy(&occs).unwrap();
    let analysis: Vec<f64> = target.mass().iter().zip(dbar.mass()).map(|(&p, &q)| ratio(p, q)).collect();
    assert!(aug
        .static_members()
        .unwrap()
        .iter()
        .any(|m| m.base().iter().zip(&analysis).all(|(a, b)| (a - b).abs() < 1e-12)));
}

#[test]
fn mabo_augment_examples() {
    let w = static_class(vec![vec![0.5, 3.0, 2.0, f64::INFINITY]], 2, 1, 2);
    let aug = mabo_augment(&w).unwrap();
    let members = aug.static_members().unwrap();
    assert!(members.len() <= 6);
    assert!((aug.nominal_log_size() - (8.0f64.ln() + 0.0)).abs() < 1e-12);
    for m in members {
        if let Some(h) = m.mask() {
            for other in (0..2).filter(|&o| o != h) {
                assert!(m.eval_layer(other, 1.0).iter().all(|&v| v == 0.0));
            }
        }
    }
    let gamma = 1.5;
    let neg_masked = members.iter().find(|m| m.is_negative() && m.mask() == Some(1)).unwrap();
    assert_eq!(neg_masked.eval_layer(1, gamma), vec![-1.5, -1.5]);
    assert_eq!(neg_masked.eval_layer(0, gamma), vec![0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sign_flip_negates_evaluation(seed in any::<u64>(), gamma in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..12).map(|_| if rng.gen_bool(0.1) { f64::INFINITY } else { rng.gen::<f64>() * 5.0 }).collect();
        let w = WeightFunction::new(2, 2, 3, base).unwrap();
        let neg = w.clone().with_sign(true);
        for h in 0..3 {
            for x in 0..2 {
                for a in 0..2 {
                    prop_assert_eq!(neg.eval(h, x, a, gamma), -w.eval(h, x, a, gamma));
                    prop_assert!(w.eval(h, x, a, gamma).abs() <= gamma);
                }
            }
        }
    }

    #[test]
    fn signed_closure_has_bounded_size(n in 1usize..4, h in 1usize..5) {
        let members: Vec<WeightFunction> = (0..n).map(|i| WeightFunction::constant(1, 1, h, i as f64)).collect();
        prop_assert_eq!(signed_closure(&members).len(), 2 * (h + 1) * n);
    }
}
