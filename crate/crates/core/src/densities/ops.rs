//! Exact composition operators on finite density tables.
//!
//! Every operator works in log space over the union of the input supports and
//! returns a normalized table. States outside the union get mass exactly zero.

use super::table::DensityTable;
use crate::error::{Error, Result};

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

fn ensure_shapes(dists: &[&DensityTable]) -> Result<()> {
    if let Some((first, rest)) = dists.split_first() {
        for d in rest {
            first.ensure_same_shape(d)?;
        }
    }
    Ok(())
}

/// `p(x) q(x) / (alpha p(x) + (1 - alpha) q(x))`, normalized.
///
/// `alpha = 0.5` is the plain harmonic mean; `alpha -> 0` recovers `p` and
/// `alpha -> 1` recovers `q`.
pub fn harmonic_mean(p: &DensityTable, q: &DensityTable, alpha: f64) -> Result<DensityTable> {
    check_alpha(alpha)?;
    p.ensure_same_shape(q)?;
    let logw: Vec<f64> = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&a, &b)| {
            if a > 0.0 && b > 0.0 {
                a.ln() + b.ln() - (alpha * a + (1.0 - alpha) * b).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    DensityTable::from_log_weights(p.shape().to_vec(), &logw)
}

/// `p(x)^2 / (alpha p(x) + (1 - alpha) q(x))`, normalized. Never identically
/// zero since `p` carries mass somewhere. Swap the arguments for the reverse
/// contrast.
pub fn contrast(p: &DensityTable, q: &DensityTable, alpha: f64) -> Result<DensityTable> {
    check_alpha(alpha)?;
    p.ensure_same_shape(q)?;
    let logw: Vec<f64> = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&a, &b)| {
            if a > 0.0 {
                2.0 * a.ln() - (alpha * a + (1.0 - alpha) * b).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    DensityTable::from_log_weights(p.shape().to_vec(), &logw)
}

/// Posterior of the uniform mixture of `dists` given observations
/// `y_k = observations[k]` (zero-based labels):
/// `prod_k p_{i_k}(x) / (sum_j p_j(x))^(n-1)`, normalized.
pub fn nary_posterior(dists: &[DensityTable], observations: &[usize]) -> Result<DensityTable> {
    if observations.is_empty() {
        return Err(Error::EmptyObservations);
    }
    if dists.is_empty() {
        return Err(Error::InvalidArgument("no base distributions".into()));
    }
    let refs: Vec<&DensityTable> = dists.iter().collect();
    ensure_shapes(&refs)?;
    let m = dists.len();
    if let Some(&label) = observations.iter().find(|&&l| l >= m) {
        return Err(Error::LabelOutOfRange { label, num_bases: m });
    }
    if observations.len() == 1 {
        return Ok(dists[observations[0]].clone());
    }
    let exponent = (observations.len() - 1) as f64;
    let logw: Vec<f64> = (0..dists[0].len())
        .map(|x| {
            let mut num = 0.0;
            for &label in observations {
                let v = dists[label].get(x);
                if v <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                num += v.ln();
            }
            let denom: f64 = dists.iter().map(|d| d.get(x)).sum();
            num - exponent * denom.ln()
        })
        .collect();
    DensityTable::from_log_weights(dists[0].shape().to_vec(), &logw)
}

/// Energy-model product `p(x) q(x)`, normalized.
pub fn energy_product(p: &DensityTable, q: &DensityTable) -> Result<DensityTable> {
    p.ensure_same_shape(q)?;
    let logw: Vec<f64> = p
        .mass()
        .iter()
        .zip(q.mass())
        .map(|(&a, &b)| if a > 0.0 && b > 0.0 { a.ln() + b.ln() } else { f64::NEG_INFINITY })
        .collect();
    DensityTable::from_log_weights(p.shape().to_vec(), &logw)
}

/// Energy-model negation `p(x) / q(x)^gamma`, normalized.
///
/// A state where `q` vanishes but `p` does not makes the ratio unbounded and
/// is reported as [`Error::UnboundedRatio`].
pub fn energy_negation(p: &DensityTable, q: &DensityTable, gamma: f64) -> Result<DensityTable> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    p.ensure_same_shape(q)?;
    let mut logw = Vec::with_capacity(p.len());
    for (index, (&a, &b)) in p.mass().iter().zip(q.mass()).enumerate() {
        if a <= 0.0 {
            logw.push(f64::NEG_INFINITY);
        } else if b <= 0.0 {
            return Err(Error::UnboundedRatio { index });
        } else {
            logw.push(a.ln() - gamma * b.ln());
        }
    }
    DensityTable::from_log_weights(p.shape().to_vec(), &logw)
}

/// Weighted mixture `sum_i w_i p_i`.
pub fn mixture(dists: &[DensityTable], weights: &[f64]) -> Result<DensityTable> {
    validate_simplex(weights)?;
    if dists.len() != weights.len() {
        return Err(Error::BadWeights(format!(
            "{} weights for {} distributions",
            weights.len(),
            dists.len()
        )));
    }
    let refs: Vec<&DensityTable> = dists.iter().collect();
    ensure_shapes(&refs)?;
    let mut out = vec![0.0; dists[0].len()];
    for (d, &w) in dists.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(d.mass()) {
            *o += w * v;
        }
    }
    DensityTable::from_unnormalized(dists[0].shape().to_vec(), out)
}

/// Checks that `weights` is a nonempty probability vector.
pub fn validate_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::BadWeights("empty weight vector".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::BadWeights(format!("negative or non-finite entry in {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

/// `sum_x p(x) q(x) / (p(x) + q(x))`: the mass the harmonic mean takes in the
/// decomposition `p = Z * (p hm q) + (1 - Z) * (p con q)`.
pub fn harmonic_mass(p: &DensityTable, q: &DensityTable) -> Result<f64> {
    p.ensure_same_shape(q)?;
    Ok(p.mass()
        .iter()
        .zip(q.mass())
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| a * b / (a + b))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> DensityTable {
        DensityTable::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn close(a: &DensityTable, b: &[f64], tol: f64) -> bool {
        a.mass().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn harmonic_mean_examples() {
        let u = t(&[0.5, 0.5]);
        assert!(close(&harmonic_mean(&u, &u, 0.5).unwrap(), &[0.5, 0.5], 1e-15));
        assert_eq!(
            harmonic_mean(&t(&[1.0, 0.0]), &t(&[0.0, 1.0]), 0.5),
            Err(Error::DisjointSupport)
        );
        let hm = harmonic_mean(&t(&[0.8, 0.2]), &t(&[0.2, 0.8]), 0.5).unwrap();
        assert!(close(&hm, &[0.5, 0.5], 1e-15));
        assert!(matches!(
            harmonic_mean(&u, &t(&[1.0, 0.0, 0.0]), 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(harmonic_mean(&u, &u, 1.0), Err(Error::InvalidAlpha(1.0)));
    }

    #[test]
    fn contrast_examples() {
        let p = t(&[0.3, 0.7]);
        assert!(close(&contrast(&p, &p, 0.5).unwrap(), &[0.3, 0.7], 1e-15));
        let c = contrast(&t(&[0.8, 0.2]), &t(&[0.2, 0.8]), 0.5).unwrap();
        assert!(close(&c, &[16.0 / 17.0, 1.0 / 17.0], 1e-15));
        assert!((c.get(0) - 0.9412).abs() < 5e-5);
        let d = contrast(&t(&[1.0, 0.0]), &t(&[0.0, 1.0]), 0.5).unwrap();
        assert_eq!(d.mass(), &[1.0, 0.0]);
    }

    #[test]
    fn contrast_is_not_symmetric() {
        let p = t(&[0.8, 0.2]);
        let q = t(&[0.2, 0.8]);
        let a = contrast(&p, &q, 0.5).unwrap();
        let b = contrast(&q, &p, 0.5).unwrap();
        assert!(a.l1_distance(&b).unwrap() > 0.1);
    }

    #[test]
    fn nary_posterior_examples() {
        let p1 = t(&[0.5, 0.3, 0.2]);
        let p2 = t(&[0.1, 0.6, 0.3]);
        assert_eq!(nary_posterior(&[p1.clone()], &[0]).unwrap(), p1);
        let pair = nary_posterior(&[p1.clone(), p2.clone()], &[0, 1]).unwrap();
        let hm = harmonic_mean(&p1, &p2, 0.5).unwrap();
        assert!(pair.l1_distance(&hm).unwrap() < 1e-14);

        assert_eq!(nary_posterior(&[p1.clone()], &[]), Err(Error::EmptyObservations));
        assert!(matches!(
            nary_posterior(&[p1.clone(), p2.clone()], &[2]),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        assert_eq!(
            nary_posterior(&[t(&[1.0, 0.0]), t(&[0.0, 1.0])], &[0, 1]),
            Err(Error::DisjointSupport)
        );
    }

    #[test]
    fn repeated_observation_is_contrast() {
        let p1 = t(&[0.1, 0.2, 0.3, 0.4]);
        let p2 = t(&[0.4, 0.1, 0.1, 0.4]);
        let post = nary_posterior(&[p1.clone(), p2.clone()], &[0, 0]).unwrap();
        let con = contrast(&p1, &p2, 0.5).unwrap();
        assert!(post.l1_distance(&con).unwrap() <= 1e-12);
    }

    #[test]
    fn energy_examples() {
        let u = t(&[0.5, 0.5]);
        assert!(close(&energy_product(&u, &u).unwrap(), &[0.5, 0.5], 1e-15));
        let prod = energy_product(&t(&[0.8, 0.2]), &t(&[0.2, 0.8])).unwrap();
        assert!(close(&prod, &[0.5, 0.5], 1e-15));
        assert_eq!(
            energy_product(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])),
            Err(Error::DisjointSupport)
        );
        let neg = energy_negation(&t(&[0.8, 0.2]), &t(&[0.2, 0.8]), 1.0).unwrap();
        assert!(close(&neg, &[16.0 / 17.0, 1.0 / 17.0], 1e-15));
        assert_eq!(
            energy_negation(&u, &t(&[0.0, 1.0]), 0.5),
            Err(Error::UnboundedRatio { index: 0 })
        );
        let p = t(&[0.3, 0.7]);
        let almost = energy_negation(&p, &t(&[0.9, 0.1]), 1e-12).unwrap();
        assert!(close(&almost, &[0.3, 0.7], 1e-10));
    }

    #[test]
    fn mixture_examples() {
        let p1 = t(&[0.8, 0.2]);
        let p2 = t(&[0.2, 0.8]);
        assert_eq!(mixture(&[p1.clone(), p2.clone()], &[1.0, 0.0]).unwrap(), p1);
        let m = mixture(&[t(&[1.0, 0.0]), t(&[0.0, 1.0])], &[0.5, 0.5]).unwrap();
        assert!(close(&m, &[0.5, 0.5], 1e-15));
        let m = mixture(&[p1.clone(), p2.clone()], &[0.25, 0.75]).unwrap();
        assert!(close(&m, &[0.35, 0.65], 1e-15));
        assert!(matches!(mixture(&[p1.clone(), p2.clone()], &[0.5, 0.6]), Err(Error::BadWeights(_))));
        assert!(matches!(mixture(&[p1], &[0.5, 0.5]), Err(Error::BadWeights(_))));
    }

    fn random_table(n: usize) -> impl Strategy<Value = DensityTable> {
        proptest::collection::vec(0.01f64..1.0, n)
            .prop_map(move |w| DensityTable::from_unnormalized(vec![w.len()], w).unwrap())
    }

    proptest! {
        #[test]
        fn harmonic_mean_commutes(p in random_table(6), q in random_table(6)) {
            let a = harmonic_mean(&p, &q, 0.5).unwrap();
            let b = harmonic_mean(&q, &p, 0.5).unwrap();
            for (x, y) in a.mass().iter().zip(b.mass()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn mixture_decomposition_identity(p in random_table(8), q in random_table(8)) {
            let z = harmonic_mass(&p, &q).unwrap();
            let hm = harmonic_mean(&p, &q, 0.5).unwrap();
            let con = contrast(&p, &q, 0.5).unwrap();
            for x in 0..p.len() {
                let rebuilt = z * hm.get(x) + (1.0 - z) * con.get(x);
                prop_assert!((rebuilt - p.get(x)).abs() <= 1e-10);
            }
        }

        #[test]
        fn harmonic_interpolation_limits(p in random_table(5), q in random_table(5)) {
            let near_p = harmonic_mean(&p, &q, 1e-6).unwrap();
            let near_q = harmonic_mean(&p, &q, 1.0 - 1e-6).unwrap();
            prop_assert!(near_p.l1_distance(&p).unwrap() <= 1e-4);
            prop_assert!(near_q.l1_distance(&q).unwrap() <= 1e-4);
        }

        #[test]
        fn outputs_are_normalized(p in random_table(7), q in random_table(7), alpha in 0.01f64..0.99) {
            for out in [
                harmonic_mean(&p, &q, alpha).unwrap(),
                contrast(&p, &q, alpha).unwrap(),
                energy_product(&p, &q).unwrap(),
                nary_posterior(&[p.clone(), q.clone()], &[1, 1, 0]).unwrap(),
            ] {
                prop_assert!((out.total() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
