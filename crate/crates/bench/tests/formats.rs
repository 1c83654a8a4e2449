use glow_bench::formats::*;
use glow_core::classes::{tabular_value_class, WeightClass, WeightFunction};
use glow_core::coverage::{occupancy, Occupancy};
use glow_core::env::random_mdp;
use glow_core::mdp::{Policy, PolicyClass, RewardDist, TabularMdp};
use glow_core::record::{IterationRecord, RunRecord};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn with_bernoulli_rewards(mdp: &TabularMdp) -> TabularMdp {
    let rewards = (0..mdp.rewards().len())
        .map(|i| RewardDist::bernoulli(1.0 / (3.0 * mdp.horizon() as f64), (i as f64 * 0.1) % 1.0))
        .collect();
    TabularMdp::new(
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon(),
        mdp.transitions().to_vec(),
        rewards,
        mdp.initial_dist().to_vec(),
    )
    .unwrap()
}

#[test]
fn mdp_json_layout() {
    let mdp = random_mdp(2, 3, 2, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&mdp_to_json(&mdp)).unwrap();
    assert_eq!(v["num_states"], 2);
    assert_eq!(v["transitions"].as_array().unwrap().len(), 2);
    assert_eq!(v["transitions"][1][0].as_array().unwrap().len(), 3);
    assert_eq!(v["transitions"][1][0][2].as_array().unwrap().len(), 2);
    assert_eq!(v["transitions"][1][0][2][1].as_f64().unwrap(), mdp.transition(1, 0, 2)[1]);
    assert_eq!(v["rewards"][0][1][2][0]["value"].as_f64().unwrap(), mdp.reward(0, 1, 2).atoms()[0].value);
}

#[test]
fn mdp_json_rejects_bad_shapes() {
    let mdp = random_mdp(2, 2, 2, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&mdp_to_json(&mdp)).unwrap();
    v["horizon"] = 3.into();
    assert!(mdp_from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&mdp_to_json(&mdp)).unwrap();
    v["transitions"][0][0][0] = serde_json::json!([0.7, 0.7]);
    assert!(mdp_from_json(&v.to_string()).is_err());
    assert!(mdp_from_json("{\"num_states\": 1}").is_err());
}

#[test]
fn infinite_weights_use_strings() {
    let w = WeightFunction::new(1, 2, 1, vec![f64::INFINITY, 0.5]).unwrap().with_sign(true);
    let class = WeightClass::from_static(vec![w.clone()]).unwrap();
    let file = ClassFile::from_weights(&class).unwrap();
    let text = String::from_utf8(to_json_bytes(&file)).unwrap();
    assert!(text.contains("\"inf\""));
    let back: ClassFile = serde_json::from_str(&text).unwrap();
    let members = back.into_weights().unwrap();
    assert_eq!(members.static_members().unwrap(), &[w]);
    assert!(ClassFile::from_weights(&WeightClass::oracle(
        &random_mdp(1, 2, 1, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap(),
        &PolicyClass::all_deterministic(1, 2, 1, 8).unwrap(),
        4
    ))
    .is_err());
    let num: Num = serde_json::from_str("\"-inf\"").unwrap();
    assert_eq!(f64::from(num), f64::NEG_INFINITY);
}

#[test]
fn class_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mdp = random_mdp(3, 2, 2, 0.0, &mut rng).unwrap();
    let class = tabular_value_class(&mdp, 3, true, &mut rng);
    let file = ClassFile::from_values(&class);
    assert_eq!(file.shape(), (3, 2, 2));
    let back: ClassFile = serde_json::from_slice(&to_json_bytes(&file)).unwrap();
    assert_eq!(back.clone().into_values().unwrap().members(), class.members());
    assert_eq!(back.into_policy_class().unwrap(), class.policy_class());

    let pis = PolicyClass::explicit(vec![
        Policy::deterministic(3, 2, vec![0, 1, 0, 1, 1, 0]).unwrap(),
        Policy::uniform(3, 2, 2),
    ])
    .unwrap();
    let file = ClassFile::from_policies(&pis, 3, 2, 2);
    let back: ClassFile = serde_json::from_slice(&to_json_bytes(&file)).unwrap();
    assert_eq!(back.into_policy_class().unwrap().policies(), pis.policies());
}

#[test]
fn occupancy_csv_and_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mdp = random_mdp(3, 2, 3, 0.3, &mut rng).unwrap();
    let d = occupancy(&mdp, &Policy::uniform(3, 2, 3));
    let csv = occupancy_to_csv(&d);
    let text = String::from_utf8(csv.clone()).unwrap();
    assert!(text.starts_with("layer,state,action,mass\n"));
    assert_eq!(text.lines().count(), 1 + 18);
    assert_eq!(occupancy_from_csv(&csv, 3, 2, 3).unwrap().mass(), d.mass());
    let missing: Vec<&str> = text.lines().take(18).collect();
    assert!(occupancy_from_csv(missing.join("\n").as_bytes(), 3, 2, 3).is_err());

    let json = to_json_bytes(&OccupancyFile::from(&d));
    let back: OccupancyFile = serde_json::from_slice(&json).unwrap();
    assert_eq!(Occupancy::try_from(back).unwrap().mass(), d.mass());
}

fn record() -> RunRecord {
    let mut rec = RunRecord::new(0.75);
    for t in 1..=3 {
        let mut it = IterationRecord::new(t, t % 2, Policy::uniform(1, 2, 1), 0.25 * t as f64);
        it.confset_size = Some(4 - t);
        it.optimism_ok = Some(true);
        rec.push_round(it);
    }
    rec
}

#[test]
fn run_csv_columns() {
    let online = String::from_utf8(run_to_csv("glow-T3-s0", &record(), false)).unwrap();
    let header = online.lines().next().unwrap();
    assert_eq!(
        header,
        "run_id,t,f_index,j_pi_t,inst_regret,cum_regret,confset_size,optimism_ok"
    );
    assert_eq!(online.lines().nth(1).unwrap(), "glow-T3-s0,1,1,0.25,0.5,0.5,3,true");
    let hybrid = String::from_utf8(run_to_csv("x", &record(), true)).unwrap();
    assert!(hybrid
        .lines()
        .next()
        .unwrap()
        .ends_with("optimism_ok,offline_size,hybrid_size,solver_objective"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    write_atomic(&path, online.as_bytes()).unwrap();
    let rows = read_run_csv(&path).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].cum_regret, 0.75);
    assert_eq!(rows[2].offline_size, None);
}

#[test]
fn atomic_write_replaces() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.json");
    write_atomic(&path, b"one").unwrap();
    write_atomic(&path, b"two").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mdp_round_trip_is_value_exact(seed in any::<u64>(), s in 1usize..5, a in 1usize..4, h in 1usize..5, bern in any::<bool>()) {
        let mut mdp = random_mdp(s, a, h, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if bern {
            mdp = with_bernoulli_rewards(&mdp);
        }
        let text = mdp_to_json(&mdp);
        let back = mdp_from_json(&text).unwrap();
        prop_assert_eq!(&back, &mdp);
        prop_assert_eq!(mdp_to_json(&back), text);
    }

    #[test]
    fn num_round_trips(v in prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), Just(f64::INFINITY), Just(f64::NEG_INFINITY)]) {
        let text = serde_json::to_string(&Num::from(v)).unwrap();
        let back: Num = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(f64::from(back).to_bits(), v.to_bits());
    }
}

