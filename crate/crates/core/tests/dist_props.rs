use conflict_decode_core::dist::{contrastive_combine, jsd, kl_divergence, Alpha, TokenDistribution, PROB_FLOOR};
use proptest::prelude::*;

fn probs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 2..max_len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max_len).prop_flat_map(|n| {
        let v = prop::collection::vec(0.001f64..1.0, n);
        (v.clone(), v).prop_map(|(a, b)| {
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            (
                a.into_iter().map(|x| x / sa).collect(),
                b.into_iter().map(|x| x / sb).collect(),
            )
        })
    })
}

fn d(p: &[f64]) -> TokenDistribution {
    TokenDistribution::from_probs(p).unwrap()
}

fn total(p: &TokenDistribution) -> f64 {
    p.log_probs().iter().map(|l| l.exp()).sum()
}

fn oracle_combine(pc: &[f64], pn: &[f64], alpha: f64) -> Vec<f64> {
    let u: Vec<f64> = pc.iter().zip(pn).map(|(c, n)| c * (c / n).powf(alpha)).collect();
    let s: f64 = u.iter().sum();
    u.into_iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn logits_normalize(logits in prop::collection::vec(-50.0f64..50.0, 2..64)) {
        let p = TokenDistribution::from_logits(&logits).unwrap();
        prop_assert!((total(&p) - 1.0).abs() <= 1e-9);
        prop_assert!(p.probs().iter().all(|&x| x >= PROB_FLOOR * 0.999));
    }

    #[test]
    fn extreme_logits_stay_finite(logits in prop::collection::vec(-1e300f64..1e300, 2..16)) {
        let p = TokenDistribution::from_logits(&logits).unwrap();
        prop_assert!(p.log_probs().iter().all(|l| l.is_finite()));
        prop_assert!((total(&p) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn jsd_bounded_and_symmetric((a, b) in pair(40)) {
        let (p, q) = (d(&a), d(&b));
        let pq = jsd(&p, &q).unwrap();
        let qp = jsd(&q, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert_eq!(pq.to_bits(), qp.to_bits());
        prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn jsd_is_average_kl_to_mixture((a, b) in pair(20)) {
        let (p, q) = (d(&a), d(&b));
        let m: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(x, y)| 0.5 * (x + y)).collect();
        let m = d(&m);
        let expected = 0.5 * (kl_divergence(&p, &m).unwrap() + kl_divergence(&q, &m).unwrap());
        prop_assert!((jsd(&p, &q).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn jsd_of_a_distribution_with_itself_is_exactly_zero(a in probs(30)) {
        let p = d(&a);
        prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(jsd(&p, &p.clone()).unwrap(), 0.0);
    }

    #[test]
    fn jsd_vanishes_for_nearby_distributions(a in probs(30), eps in prop::collection::vec(-1.0f64..1.0, 30)) {
        // perturb by at most 1e-10 per entry, keeping the sum fixed
        let n = a.len();
        let mut shift: Vec<f64> = eps[..n].iter().map(|e| e * 1e-10).collect();
        let mean: f64 = shift.iter().sum::<f64>() / n as f64;
        shift.iter_mut().for_each(|s| *s -= mean);
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let (p, q) = (d(&a), d(&b));
        let max_norm = p.probs().iter().zip(q.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(max_norm <= 1e-9);
        prop_assert!(jsd(&p, &q).unwrap() <= 1e-9);
    }

    #[test]
    fn small_jsd_bounds_max_norm((a, b) in pair(30)) {
        let (p, q) = (d(&a), d(&b));
        let div = jsd(&p, &q).unwrap();
        let max_norm = p.probs().iter().zip(q.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // Pinsker bound through the smaller of KL(p || m) and KL(q || m)
        prop_assert!(max_norm <= (2.0 * std::f64::consts::LN_2 * div).sqrt() + 1e-12);
    }

    #[test]
    fn combine_at_zero_is_identity((a, b) in pair(40)) {
        let (p, q) = (d(&a), d(&b));
        let out = contrastive_combine(&p, &q, Alpha::ZERO).unwrap();
        for (x, y) in out.probs().iter().zip(p.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn combine_matches_probability_domain((a, b) in pair(40), idx in 0usize..5) {
        let alpha = [0.0, 0.25, 0.5, 1.0, 2.0][idx];
        let (p, q) = (d(&a), d(&b));
        let out = contrastive_combine(&p, &q, Alpha::new(alpha).unwrap()).unwrap();
        let expected = oracle_combine(p.probs(), q.probs(), alpha);
        prop_assert!((total(&out) - 1.0).abs() <= 1e-9);
        for (x, y) in out.probs().iter().zip(&expected) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn shared_argmax_survives_combination(a in probs(20), gamma in 0.0f64..1.0, alpha in 0.0f64..5.0) {
        // q ∝ p^gamma shares p's argmax, which then also carries the largest PMI
        let w: Vec<f64> = a.iter().map(|x| x.powf(gamma)).collect();
        let s: f64 = w.iter().sum();
        let b: Vec<f64> = w.iter().map(|x| x / s).collect();
        let (p, q) = (d(&a), d(&b));
        prop_assume!(p.argmax() == q.argmax());
        let out = contrastive_combine(&p, &q, Alpha::new(alpha).unwrap()).unwrap();
        prop_assert_eq!(out.argmax(), p.argmax());
    }

    #[test]
    fn combine_of_equal_pair_is_identity(a in probs(30), alpha in 0.0f64..4.0) {
        let p = d(&a);
        let out = contrastive_combine(&p, &p, Alpha::new(alpha).unwrap()).unwrap();
        for (x, y) in out.probs().iter().zip(p.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_k_sorted_with_id_tiebreak(a in probs(30), k in 1usize..30) {
        let p = d(&a);
        prop_assume!(k <= p.vocab_size());
        let top = p.top_k(k).unwrap();
        prop_assert_eq!(top.len(), k);
        for w in top.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert_eq!(top[0].0, p.argmax());
    }

    #[test]
    fn kl_is_non_negative((a, b) in pair(30)) {
        prop_assert!(kl_divergence(&d(&a), &d(&b)).unwrap() >= 0.0);
    }
}

#[test]
fn disjoint_point_masses_saturate() {
    let div = jsd(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
    assert!((div - 1.0).abs() <= 1e-9);
}
