use proptest::prelude::*;

use signadam_core::diagnostics::{check_condition1, check_condition3, check_lemma4};
use signadam_core::optimizer::{step_preconditioned, step_sign_form, AdamParams, AdamState};
use signadam_core::schedules::{compute_r, r_upper};
use signadam_core::stats::{kolmogorov_tail, ks_two_sample};
use signadam_core::{norm, Norm, SampleStats, Vector};

fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..max_len)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn norm_sandwich(v in finite_vec(64)) {
        let l1 = norm(&v, Norm::L1).unwrap();
        let l2 = norm(&v, Norm::L2).unwrap();
        let sd = (v.len() as f64).sqrt();
        prop_assert!(l2 <= l1 * (1.0 + 1e-12));
        prop_assert!(l1 <= sd * l2 * (1.0 + 1e-12));
    }

    #[test]
    fn ks_is_symmetric(a in finite_vec(80), b in finite_vec(80)) {
        let (a, b) = (sorted(a), sorted(b));
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab.statistic) && (0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn ks_p_nonincreasing_in_d(l1 in 0.0f64..4.0, l2 in 0.0f64..4.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        prop_assert!(kolmogorov_tail(hi) <= kolmogorov_tail(lo));
    }

    #[test]
    fn c0_at_least_one(v in prop::collection::vec(0.0f64..1e3, 1..200)) {
        prop_assert!(check_condition1(&v).unwrap().c0 >= 1.0);
    }

    #[test]
    fn c1_in_range(v in finite_vec(100)) {
        let c = check_condition3(&v).unwrap();
        let sd = (v.len() as f64).sqrt();
        prop_assert!(c.c1 >= 1.0 && c.c1 <= sd);
    }

    #[test]
    fn variance_nonnegative(v in finite_vec(100)) {
        let s = SampleStats::from_slice(&v);
        let m = s.mean();
        prop_assert!(s.second_moment() >= m * m - 1e-12 * s.second_moment().abs());
    }

    #[test]
    fn r_bracket(b2 in 0.001f64..0.9999, frac in 0.0f64..0.999) {
        // any beta1 in [0, sqrt(beta2))
        let b1 = frac * b2.sqrt();
        let r = compute_r(b1, b2).unwrap();
        prop_assert!(r >= 1.0 - 1e-12);
        if b1 <= b2 {
            prop_assert!(r <= r_upper(b1, b2) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn threshold_inequality(
        la in -3.0f64..3.0,
        lb in -3.0f64..3.0,
        alpha in 0.01f64..3.9,
        gap in 0.01f64..1.0,
    ) {
        let (a, b) = (10f64.powf(la), 10f64.powf(lb));
        let beta = (alpha + gap * (4.0 - alpha)).min(4.0);
        prop_assume!(beta > alpha);
        let c = check_lemma4(a, b, alpha, beta).unwrap();
        prop_assert!(c.holds, "{:?}", c);
        prop_assert!(c.halved_violates, "{:?}", c);
    }

    #[test]
    fn forms_agree_step_by_step(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 5), 1..200),
        b1 in 0.0f64..0.99,
        b2 in 0.0f64..0.999,
        lr in 1e-4f64..1.0,
    ) {
        let p = AdamParams::constant(lr, b1, b2, 1e-8);
        let (mut sa, mut sb) = (AdamState::new(5), AdamState::new(5));
        let (mut xa, mut xb) = (Vector::zeros(5), Vector::zeros(5));
        for g in grads {
            let g = Vector::from_vec(g).unwrap();
            let (na, ra) = step_preconditioned(&mut sa, &p, &g, &xa).unwrap();
            let (nb, rb) = step_sign_form(&mut sb, &p, &g, &xb).unwrap();
            for j in 0..5 {
                let scale = na[j].abs().max(1e-300);
                prop_assert!((na[j] - nb[j]).abs() <= 1e-12 * scale);
            }
            prop_assert_eq!(&sa, &sb);
            prop_assert_eq!(ra.u, rb.u);
            xa = na;
            xb = nb;
        }
    }

    #[test]
    fn u_never_exceeds_r(
        grads in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 3), 1..300),
        b2 in 0.01f64..0.999,
        frac in 0.0f64..0.999,
    ) {
        let b1 = frac * b2.sqrt();
        let r = compute_r(b1, b2).unwrap();
        let p = AdamParams::constant(0.0, b1, b2, 1e-12);
        let mut s = AdamState::new(3);
        let x = Vector::zeros(3);
        for g in grads {
            let (_, rec) = step_preconditioned(&mut s, &p, &Vector::from_vec(g).unwrap(), &x).unwrap();
            prop_assert!(rec.u.iter().all(|&u| u <= r * (1.0 + 1e-12)));
            prop_assert!(s.v().iter().all(|&v| v >= 0.0));
        }
    }
}
