use proptest::prelude::*;

use mmsvae_core::critique::{margin_loss, uac_blend, Polarity};
use mmsvae_core::evalsim::rank_desc;
use mmsvae_core::model::{moe_combine, GaussianPosterior};
use mmsvae_core::numerics::{gaussian_kl, multinomial_loglik};

fn gaussian(d: usize) -> impl Strategy<Value = GaussianPosterior> {
    (prop::collection::vec(-4.0..4.0f64, d), prop::collection::vec(-5.0..5.0f64, d))
        .prop_map(|(mu, logvar)| GaussianPosterior { mu, logvar })
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_even_in_mu(pairs in prop::collection::vec((-5.0..5.0f64, -6.0..6.0f64), 1..8)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let kl = gaussian_kl(&mu, &lv).unwrap();
        prop_assert!(kl >= 0.0);
        let neg: Vec<f64> = mu.iter().map(|m| -m).collect();
        prop_assert_eq!(kl, gaussian_kl(&neg, &lv).unwrap());
    }

    #[test]
    fn loglik_ignores_constant_shift(
        logits in prop::collection::vec(-8.0..8.0f64, 2..12),
        c in -100.0..100.0f64,
        seed in any::<u64>(),
    ) {
        let targets: Vec<f64> = (0..logits.len()).map(|i| ((seed >> (i % 64)) & 1) as f64).collect();
        prop_assume!(targets.iter().any(|&t| t > 0.0));
        let a = multinomial_loglik(&logits, &targets).unwrap().value;
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let b = multinomial_loglik(&shifted, &targets).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        prop_assert!(a <= 0.0);
    }

    #[test]
    fn moe_is_order_free_and_idempotent(experts in prop::collection::vec(gaussian(3), 2..5), copies in 1usize..5) {
        let base = moe_combine(&experts).unwrap();
        let mut rev = experts.clone();
        rev.reverse();
        prop_assert_eq!(&moe_combine(&rev).unwrap(), &base);
        let mut rot = experts.clone();
        rot.rotate_left(1);
        prop_assert_eq!(&moe_combine(&rot).unwrap(), &base);
        prop_assert_eq!(moe_combine(&vec![experts[0].clone(); copies]).unwrap(), experts[0].clone());
    }

    #[test]
    fn margin_loss_zero_iff_all_margins_met(
        r0 in prop::collection::vec(-3.0..3.0f64, 6),
        r1 in prop::collection::vec(-3.0..3.0f64, 6),
        positive in any::<bool>(),
        h in 0.0..1.0f64,
    ) {
        let polarity = if positive { Polarity::Positive } else { Polarity::Negative };
        let (aff, unaff) = (vec![0, 1, 2], vec![3, 4, 5]);
        let loss = margin_loss(polarity, &r0, &r1, &aff, &unaff, h).unwrap();
        prop_assert!(loss >= 0.0);
        let s_aff = if positive { 1.0 } else { -1.0 };
        let met = aff.iter().all(|&i| s_aff * (r1[i] - r0[i]) >= h)
            && unaff.iter().all(|&i| -s_aff * (r1[i] - r0[i]) >= h);
        prop_assert_eq!(loss == 0.0, met);
    }

    #[test]
    fn uac_is_the_arithmetic_mean(z_u in prop::collection::vec(-2.0..2.0f64, 4), zs in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 0..4)) {
        let got = uac_blend(&z_u, &zs).unwrap();
        let n = 1.0 + zs.len() as f64;
        for d in 0..4 {
            let want = (z_u[d] + zs.iter().map(|z| z[d]).sum::<f64>()) / n;
            prop_assert!((got[d] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn ranking_is_descending_with_index_ties(scores in prop::collection::vec(0u8..4, 1..12)) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let order = rank_desc(&s);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..s.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
    }
}

#[test]
fn uac_fixed_cases() {
    assert_eq!(uac_blend(&[0.5, -1.0], &[]).unwrap(), vec![0.5, -1.0]);
    assert_eq!(uac_blend(&[0.0], &[vec![2.0]]).unwrap(), vec![1.0]);
    assert_eq!(uac_blend(&[0.3], &[vec![0.3]]).unwrap(), vec![0.3]);
}
