use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sculpt::densities::{nary_posterior, DensityTable, LabelModel};
use sculpt::dsl::{eval_exact, lower, parse};
use sculpt::gflownet::{
    composed_policy, enumerate_distribution, exact_classifier, realize_plan_exact, sample_trajectory, Action,
    ForwardPolicy, GridDag, NUM_ACTIONS,
};

fn policy_from(dag: GridDag, raw: &[f64]) -> ForwardPolicy {
    let logits = raw.chunks_exact(NUM_ACTIONS).take(dag.num_cells()).map(|c| [c[0], c[1], c[2]]).collect();
    ForwardPolicy::from_logits(dag, logits).unwrap()
}

fn random_policy(dag: GridDag, rng: &mut ChaCha8Rng) -> ForwardPolicy {
    let raw: Vec<f64> = (0..dag.num_cells() * NUM_ACTIONS).map(|_| rng.gen_range(-2.0..2.0)).collect();
    policy_from(dag, &raw)
}

#[test]
fn sampled_terminals_match_enumeration() {
    let dag = GridDag::new(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let policy = random_policy(dag, &mut rng);
    let exact = enumerate_distribution(&policy).unwrap();
    let n = 200_000;
    let mut counts = vec![0usize; dag.num_cells()];
    for _ in 0..n {
        let t = sample_trajectory(&policy, &mut rng).unwrap();
        counts[t.terminal() % dag.num_cells()] += 1;
    }
    for (cell, &c) in counts.iter().enumerate() {
        let p = exact.get(cell);
        let freq = c as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sd + 1e-12, "cell {cell}: {freq} vs {p} (sd {sd})");
    }
}

#[test]
fn composed_policies_are_valid_distributions() {
    let dag = GridDag::new(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bases: Vec<ForwardPolicy> = (0..3).map(|_| random_policy(dag, &mut rng)).collect();
    let dists: Vec<DensityTable> = bases.iter().map(|b| enumerate_distribution(b).unwrap()).collect();
    let table = exact_classifier(&bases, &dists, &LabelModel::uniform(3, 3)).unwrap();
    for obs in [vec![0], vec![0, 1], vec![2, 2, 1]] {
        let composed = composed_policy(&bases, &table, &obs).unwrap();
        for (s, row) in composed.log_prob_table().unwrap().iter().enumerate() {
            let total: f64 = row.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "state {s} sums to {total}");
            for a in Action::ALL {
                if !dag.is_legal(s, a) {
                    assert_eq!(row[a.index()], f64::NEG_INFINITY);
                }
            }
        }
    }
}

fn setup() -> impl Strategy<Value = (usize, usize, Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..=3, 2usize..=8).prop_flat_map(|(m, h)| {
        let cells = h * h * NUM_ACTIONS;
        (
            Just(m),
            Just(h),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, cells), m),
            prop::collection::vec(0..m, 1..=3),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn guided_composition_equals_the_posterior((m, h, raw, obs) in setup()) {
        let dag = GridDag::new(h).unwrap();
        let bases: Vec<ForwardPolicy> = raw.iter().map(|r| policy_from(dag, r)).collect();
        let dists: Vec<DensityTable> = bases.iter().map(|b| enumerate_distribution(b).unwrap()).collect();
        let table = exact_classifier(&bases, &dists, &LabelModel::uniform(m, obs.len())).unwrap();
        let got = enumerate_distribution(&composed_policy(&bases, &table, &obs).unwrap()).unwrap();
        let want = nary_posterior(&dists, &obs).unwrap();
        prop_assert!(got.l1_distance(&want).unwrap() <= 1e-9);
    }
}

#[test]
fn chained_expressions_are_realized_exactly() {
    let dag = GridDag::new(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names = ["a", "b", "c"];
    let policies: HashMap<String, ForwardPolicy> =
        names.iter().map(|n| (n.to_string(), random_policy(dag, &mut rng))).collect();
    let tables: HashMap<String, DensityTable> =
        policies.iter().map(|(n, p)| (n.clone(), enumerate_distribution(p).unwrap())).collect();
    for text in ["(a hm b) hm c", "(a con b) hm c", "a con[0.3] (b hm[0.8] c)", "post(y=[1,2,2]; a, b, c) con a"] {
        let expr = parse(text).unwrap();
        let realized = realize_plan_exact(&lower(&expr), &policies).unwrap();
        let got = enumerate_distribution(&realized.policy).unwrap();
        let want = eval_exact(&expr, &tables).unwrap();
        assert!(got.l1_distance(&want).unwrap() <= 1e-9, "{text}");
    }
}
