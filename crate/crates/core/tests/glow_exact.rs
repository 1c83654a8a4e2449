mod common;

use common::*;
use glow_core::classes::*;
use glow_core::data::{Evidence, LayeredDataset, Provenance};
use glow_core::env::{combination_lock, random_mdp};
use glow_core::glow::*;
use glow_core::math::clip;
use glow_core::mdp::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn manual(iterations: usize, batch: usize, gamma: f64, horizon: usize) -> GlowConfig {
    GlowConfig {
        iterations,
        batch,
        gamma,
        delta: 0.1,
        log_f: 2f64.ln(),
        log_w: 2f64.ln(),
        horizon,
        exact: false,
        preset: Preset::Manual,
        epsilon: None,
    }
}

#[test]
fn schedule_examples() {
    let cfg = manual(4, 1, 0.1, 2);
    let s = schedule(&cfg, 3).unwrap();
    assert!((s.gamma_t - 0.3).abs() < 1e-15);
    assert!((s.alpha_t - 26.666666666666668).abs() < 1e-12);
    assert!(schedule(&cfg, 1).unwrap().beta_t.is_none());
    assert!(schedule(&cfg, 0).is_err());
    assert!(schedule(&cfg, 5).is_err());

    // beta_2 = 36 * 0.4 * ln(6 * 2 * 2 * 4 * 2 / 0.1), evaluated separately.
    let cfg = manual(4, 1, 0.2, 2);
    let beta = schedule(&cfg, 2).unwrap().beta_t.unwrap();
    assert!((beta - 108.86515869631431).abs() < 1e-10);
}

#[test]
fn residual_statistic_by_hand() {
    let mut data = LayeredDataset::new(2, 2, 1);
    let tuples = [(0, 1, 0.5), (1, 0, 0.0), (0, 1, 1.0)];
    for (i, &(state, action, reward)) in tuples.iter().enumerate() {
        let t = Transition {
            state,
            action,
            reward,
            next_state: 2,
        };
        data.push(0, t, Provenance::Offline { source: 0, index: i }).unwrap();
    }
    let f = ValueFunction::from_values(2, 2, 1, vec![0.2, 0.6, 0.3, 0.9]).unwrap();
    let w = WeightFunction::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    // Residuals 0.1, 0.3, -0.4 against clipped weights 2, 2.5, 2.
    let stat = residual_statistic(&Evidence::Sampled(&data), &f, &w, 0, 2.5, 0.5).unwrap();
    assert!((stat - (0.05 - 0.5 * 4.75)).abs() < 1e-12);

    let zero = WeightFunction::constant(2, 2, 1, 0.0);
    assert_eq!(residual_statistic(&Evidence::Sampled(&data), &f, &zero, 0, 2.5, 0.5).unwrap(), 0.0);
}

#[test]
fn qstar_statistic_is_nonpositive_in_exact_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..50 {
        let mdp = mdp(&mut rng, 4, 3, 4);
        let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let mu = random_occupancy(&mut rng, s, a, h, true);
        let ev = Evidence::Exact {
            mdp: &mdp,
            distribution: &mu,
            nominal_size: 10,
        };
        let q = q_star(&mdp);
        let w = WeightFunction::new(s, a, h, (0..s * a * h).map(|_| rng.gen::<f64>() * 3.0).collect()).unwrap();
        let alpha = rng.gen::<f64>();
        for layer in 0..h {
            let stat = residual_statistic(&ev, &q, &w, layer, 2.0, alpha).unwrap();
            let quad: f64 = mu.layer(layer).iter().zip(w.eval_layer(layer, 2.0)).map(|(m, v)| m * v * v).sum();
            assert!((stat + alpha * quad).abs() < 1e-12);
        }
    }
}

/// Independent sup: loops over raw samples instead of summaries.
fn brute_max_statistic(data: &LayeredDataset, f: &ValueFunction, weights: &[WeightFunction], gamma_t: f64, alpha_t: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for h in 0..data.horizon() {
        let samples = data.layer(h);
        for w in weights {
            let mut total = 0.0;
            for s in samples {
                let t = s.transition;
                let next = if h + 1 < data.horizon() { f.state_value(h + 1, t.next_state) } else { 0.0 };
                let delta = f.get(h, t.state, t.action) - t.reward - next;
                let wv = w.eval(h, t.state, t.action, gamma_t);
                total += delta * wv - alpha_t * wv * wv;
            }
            worst = worst.max(total / samples.len() as f64);
        }
    }
    worst
}

#[test]
fn confidence_set_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let mdp = random_mdp(2, 2, 3, 0.0, &mut rng).unwrap();
        let class = tabular_value_class(&mdp, 6, true, &mut rng);
        let weights: Vec<WeightFunction> = (0..4)
            .map(|_| WeightFunction::new(2, 2, 3, (0..12).map(|_| rng.gen::<f64>() * 4.0).collect()).unwrap())
            .collect();
        let mut data = LayeredDataset::for_mdp(&mdp);
        for round in 1..=2 {
            let pi = deterministic_policy(&mut rng, 2, 2, 3);
            data.push_trajectory(&sample_trajectory(&mdp, &pi, &mut rng).steps, round, 1).unwrap();
        }
        let cfg = manual(8, 1, 0.05, 3);
        let t = 3;
        let sched = schedule(&cfg, t).unwrap();
        let ev = Evidence::Sampled(&data);
        let summaries: Vec<_> = (0..3).map(|h| ev.summary(h).unwrap()).collect();
        let fast = max_statistics(&class, &weights, &summaries, sched.gamma_t, sched.alpha_t);
        let mut expected = Vec::new();
        for (i, f) in class.members().iter().enumerate() {
            let slow = brute_max_statistic(&data, f, &weights, sched.gamma_t, sched.alpha_t);
            assert!((fast[i] - slow).abs() < 1e-12);
            if slow <= sched.beta_t.unwrap() {
                expected.push(i);
            }
        }
        assert_eq!(confidence_set(&class, &weights, &ev, &cfg, t).unwrap(), expected);
        let zero = vec![WeightFunction::constant(2, 2, 3, 0.0)];
        assert_eq!(confidence_set(&class, &zero, &ev, &cfg, t).unwrap().len(), class.len());
        assert_eq!(confidence_set(&class, &weights, &ev, &cfg, 1).unwrap().len(), class.len());
    }
}

#[test]
fn optimistic_select_examples() {
    let mdp = combination_lock(2, &[0, 1]).unwrap();
    let lo = ValueFunction::from_values(2, 2, 2, vec![0.2; 8]).unwrap();
    let hi = ValueFunction::from_values(2, 2, 2, vec![0.7; 8]).unwrap();
    let class = ValueClass::new(vec![lo.clone(), hi, lo]).unwrap();
    let mu = random_occupancy(&mut ChaCha8Rng::seed_from_u64(1), 2, 2, 2, false);
    let d1 = Evidence::Exact {
        mdp: &mdp,
        distribution: &mu,
        nominal_size: 1,
    }
    .summary(0)
    .unwrap();
    assert_eq!(optimistic_select(&[2], Some(&d1), &class).unwrap(), 2);
    assert_eq!(optimistic_select(&[0, 1, 2], Some(&d1), &class).unwrap(), 1);
    assert_eq!(optimistic_select(&[2, 0], Some(&d1), &class).unwrap(), 0);
    assert_eq!(optimistic_select(&[2, 1], None, &class).unwrap(), 1);
    assert!(optimistic_select(&[], Some(&d1), &class).is_err());
}

#[test]
fn singleton_class_plays_optimally() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mdp = random_mdp(3, 2, 3, 0.3, &mut rng).unwrap();
    let class = ValueClass::with_qstar(q_star(&mdp), Vec::new(), false, &mut rng).unwrap();
    let w = WeightClass::oracle(&mdp, &class.policy_class(), 16);
    let rec = glow_run(&mdp, &class, &w, &manual(16, 1, 0.5, 3), &mut rng).unwrap();
    assert_eq!(rec.rounds(), 16);
    assert!(rec.iterations.iter().all(|r| r.inst_regret.abs() < 1e-12));
}

#[test]
fn glow_runs_are_seed_deterministic_and_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mdp = random_mdp(3, 2, 3, 0.3, &mut rng).unwrap();
    let class = tabular_value_class(&mdp, 4, true, &mut rng);
    let w = WeightClass::oracle(&mdp, &class.policy_class(), 24);
    let cfg = manual(24, 2, 1.0, 3);
    let a = glow_run(&mdp, &class, &w, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = glow_run(&mdp, &class, &w, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
    assert!((a.risk() * 24.0 - a.cumulative_regret()).abs() < 1e-10);
    for r in &a.iterations {
        if r.t > 1 && r.qstar_in_set == Some(true) {
            assert_eq!(r.optimism_ok, Some(true));
        }
    }
    let exact = GlowConfig { exact: true, ..cfg };
    let e1 = glow_run(&mdp, &class, &w, &exact, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let e2 = glow_run(&mdp, &class, &w, &exact, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn preset_formulas() {
    let delta = (-1.0f64).exp();
    // log|F| + log|W| + ln(1/delta) = 3.
    let c1 = preset_thm1(0.1, 4.0, 1.0, 1.0, delta, 3, 1.0).unwrap();
    assert_eq!(c1.iterations, 10800);
    assert_eq!(c1.batch, 1);
    assert!((c1.gamma - 0.011111111111111112).abs() < 1e-15);
    let wide = preset_thm1(0.2, 4.0, 1.0, 1.0, delta, 3, 1.0).unwrap();
    assert_eq!(wide.batch, 1);

    let c2 = preset_thm2(0.1, 4.0, 1.0, 1.0, delta, 3, 1.0).unwrap();
    assert_eq!(c2.iterations, 3600);
    assert_eq!(c2.batch, 10800);
    assert!((c2.gamma - 1.0 / 30.0).abs() < 1e-15);
    assert!((c2.batch as f64 / c2.iterations as f64 - 3.0).abs() < 1e-12);

    let big = preset_thm1(10.0, 1.0, 0.0, 0.0, 0.5, 1, 1.0).unwrap();
    assert!(big.gamma <= 1.0 && big.gamma > 0.0);
    assert!(preset_thm1(0.0, 1.0, 1.0, 1.0, 0.1, 3, 1.0).is_err());

    let oracle = preset_thm1_oracle(0.5, 2.0, 1.0, 5, 0.05, 2, 1.0).unwrap();
    let fixed = preset_thm1(0.5, 2.0, 1.0, (5.0 * oracle.iterations as f64).ln(), 0.05, 2, 1.0).unwrap();
    assert_eq!(fixed.iterations, oracle.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_times_gamma_is_eight(gamma in 0.001f64..1.0, t in 1usize..500) {
        let cfg = manual(500, 1, gamma, 2);
        let s = schedule(&cfg, t).unwrap();
        prop_assert!((s.alpha_t * s.gamma_t - 8.0).abs() < 1e-12);
        prop_assert!(s.gamma_t <= gamma * 500.0 + 1e-12);
    }

    #[test]
    fn clipped_weights_never_exceed_scale(v in 0.0f64..1e6, g in 0.001f64..100.0) {
        prop_assert!(clip(v, g) <= g);
    }
}
