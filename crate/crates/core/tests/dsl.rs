use std::collections::HashMap;

use proptest::prelude::*;
use sculpt::densities::{contrast, harmonic_mean, DensityTable};
use sculpt::dsl::{eval_exact, lower, parse, Expr};
use sculpt::Error;

const NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0..NAMES.len()).prop_map(|i| Expr::base(NAMES[i])),
        (1usize..=3)
            .prop_flat_map(|m| (Just(m), prop::collection::vec(0..m, 1..=3)))
            .prop_map(|(m, obs)| Expr::post(obs, &NAMES[..m])),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        (inner.clone(), inner, any::<bool>(), prop::option::of(0.001f64..0.999)).prop_map(
            |(l, r, hm, bracket)| if hm { Expr::hm(l, r, bracket) } else { Expr::con(l, r, bracket) },
        )
    })
}

fn positive_table(n: usize) -> impl Strategy<Value = DensityTable> {
    prop::collection::vec(0.01f64..1.0, n)
        .prop_map(move |w| DensityTable::from_unnormalized(vec![n], w).unwrap())
}

fn bindings() -> impl Strategy<Value = HashMap<String, DensityTable>> {
    prop::collection::vec(positive_table(6), NAMES.len()).prop_map(|ts| {
        NAMES.iter().map(|n| n.to_string()).zip(ts).collect()
    })
}

proptest! {
    #[test]
    fn pretty_print_round_trips(e in expr()) {
        prop_assert!(e.depth() <= 5);
        let text = e.to_string();
        prop_assert_eq!(parse(&text).unwrap(), e);
    }

    #[test]
    fn lowered_plan_agrees_with_direct_evaluation(e in expr(), b in bindings()) {
        let direct = eval_exact(&e, &b).unwrap();
        let staged = lower(&e).execute_exact(&b).unwrap();
        prop_assert!(direct.l1_distance(&staged.table).unwrap() <= 1e-10);
    }

    #[test]
    fn harmonic_mean_chains_are_associative(b in bindings()) {
        let l = eval_exact(&parse("(a hm b) hm c").unwrap(), &b).unwrap();
        let r = eval_exact(&parse("a hm (b hm c)").unwrap(), &b).unwrap();
        for (x, y) in l.mass().iter().zip(r.mass()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

fn table(v: &[f64]) -> DensityTable {
    DensityTable::from_unnormalized(vec![v.len()], v.to_vec()).unwrap()
}

fn fixed_bindings() -> HashMap<String, DensityTable> {
    [
        ("p1", table(&[0.5, 0.3, 0.2])),
        ("p2", table(&[0.1, 0.6, 0.3])),
        ("p3", table(&[0.25, 0.25, 0.5])),
        ("z1", table(&[1.0, 0.0, 0.0])),
        ("z2", table(&[0.0, 1.0, 0.0])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[test]
fn eval_examples() {
    let b = fixed_bindings();
    assert_eq!(eval_exact(&parse("p1").unwrap(), &b).unwrap(), b["p1"]);

    // Three-way harmonic mean p1 p2 p3 / (p1 p2 + p1 p3 + p2 p3), evaluated directly.
    let raw: Vec<f64> = (0..3)
        .map(|x| {
            let (a, c, d) = (b["p1"].get(x), b["p2"].get(x), b["p3"].get(x));
            a * c * d / (a * c + a * d + c * d)
        })
        .collect();
    let expected = table(&raw);
    let got = eval_exact(&parse("(p1 hm p2) hm p3").unwrap(), &b).unwrap();
    assert!(got.l1_distance(&expected).unwrap() < 1e-12);

    let post = eval_exact(&parse("post(y=[1,2]; p1,p2)").unwrap(), &b).unwrap();
    let hm = harmonic_mean(&b["p1"], &b["p2"], 0.5).unwrap();
    assert!(post.l1_distance(&hm).unwrap() < 1e-14);

    let con = eval_exact(&parse("p1 con[0.95] p2").unwrap(), &b).unwrap();
    let direct = contrast(&b["p1"], &b["p2"], 0.05).unwrap();
    assert!(con.l1_distance(&direct).unwrap() < 1e-14);
}

#[test]
fn errors_carry_the_ast_path() {
    let b = fixed_bindings();
    let err = eval_exact(&parse("p1 hm (z1 hm z2)").unwrap(), &b).unwrap_err();
    match &err {
        Error::AtPath { path, source } => {
            assert_eq!(path, "$.right");
            assert_eq!(**source, Error::DisjointSupport);
        }
        other => panic!("unexpected {other:?}"),
    }
    let err = eval_exact(&parse("p1 con nope").unwrap(), &b).unwrap_err();
    assert_eq!(err.root(), &Error::UnknownIdentifier("nope".into()));
    assert!(matches!(err, Error::AtPath { ref path, .. } if path == "$.right"));
}
