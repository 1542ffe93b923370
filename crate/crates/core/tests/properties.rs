//! Property tests for invariants that hold for every input.

use std::cmp::Ordering;

use henon_lab::critical::{tunnel_membership, Chart, TunnelSide, TunnelSpec};
use henon_lab::dynamics::{HenonLikeMap, PlaneBox};
use henon_lab::lab::{fmt_real, random_pliss_sequence, Command, ExperimentConfig};
use henon_lab::odometer::{
    blowup_compare, odometer_add, order_axiom_violations, random_blowup_order, symbolic_cmp, OdometerState,
};
use henon_lab::pesin::{pliss_density_check, pliss_moments, PlissKind, PlissQuery};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn digits_and_radices() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    prop::collection::vec(2u32..7, 1..14).prop_flat_map(|radices| {
        let digits: Vec<_> = radices.iter().map(|&r| 0..r).collect();
        (digits, Just(radices))
    })
}

proptest! {
    #[test]
    fn odometer_is_increment_mod_modulus((digits, radices) in digits_and_radices()) {
        let value = digits.iter().zip(&radices).rev().fold(0u128, |v, (&d, &r)| v * r as u128 + d as u128);
        let modulus: u128 = radices.iter().map(|&r| r as u128).product();
        let s = OdometerState::new(digits, radices.clone()).unwrap();
        prop_assert_eq!(s.to_index(), value);
        let next = odometer_add(&s);
        prop_assert_eq!(next.to_index(), (value + 1) % modulus);
        prop_assert_eq!(OdometerState::from_index(value, radices), s);
    }

    #[test]
    fn odometer_commutes_with_truncation((digits, radices) in digits_and_radices(), cut in 1usize..14) {
        let s = OdometerState::new(digits, radices).unwrap();
        let k = cut.min(s.depth());
        prop_assert_eq!(odometer_add(&s).truncate(k), odometer_add(&s.truncate(k)));
    }

    #[test]
    fn tunnels_shrink_as_omega_grows(x in -0.5f64..0.5, y in -0.5f64..0.5, w1 in 1.0f64..3.0, dw in 0.0f64..2.0) {
        let spec = |omega| TunnelSpec {
            omega,
            t: 0.5,
            truncation: 0.0,
            chart: Chart::identity([0.0, 0.0], 1.0),
            side: TunnelSide::Critical,
        };
        let wide = tunnel_membership(&spec(w1), [x, y]).unwrap();
        let narrow = tunnel_membership(&spec(w1 + dw), [x, y]).unwrap();
        prop_assert!(!narrow || wide);
    }

    #[test]
    fn random_blowup_orders_are_total(seed in any::<u64>(), leaves in 1usize..40, depth in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = random_blowup_order(&mut rng, leaves, depth);
        prop_assert_eq!(order_axiom_violations(&o), 0);
        let l = o.leaves();
        for w in l.windows(2) {
            prop_assert_eq!(blowup_compare(&o, &w[0], &w[1]).unwrap(), Ordering::Less);
        }
    }

    #[test]
    fn symbolic_order_is_a_total_order(
        a in prop::collection::vec(0u32..2, 6),
        b in prop::collection::vec(0u32..2, 6),
        c in prop::collection::vec(0u32..2, 6),
    ) {
        prop_assert_eq!(symbolic_cmp(&a, &b), symbolic_cmp(&b, &a).reverse());
        prop_assert_eq!(symbolic_cmp(&a, &b) == Ordering::Equal, a == b);
        if symbolic_cmp(&a, &b) == Ordering::Less && symbolic_cmp(&b, &c) == Ordering::Less {
            prop_assert_eq!(symbolic_cmp(&a, &c), Ordering::Less);
        }
    }

    #[test]
    fn pliss_bounds_hold(seed in any::<u64>(), n in 1usize..120, a2 in 10i64..200, gap in 1i64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_pliss_sequence(&mut rng, n, 0, a2, 4 * (a2 + gap));
        let q = PlissQuery::new(seq, 0, a2, a2 + gap).unwrap();
        for kind in [PlissKind::Preserving, PlissKind::Reversing, PlissKind::Absolute] {
            let c = pliss_density_check(&q, kind).unwrap();
            prop_assert!(c.holds, "{kind:?} margin {}", c.margin);
        }
    }

    #[test]
    fn pliss_moments_are_scale_invariant(seed in any::<u64>(), n in 1usize..80, k in 2i64..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_pliss_sequence(&mut rng, n, 0, 100, 600);
        let q = PlissQuery::new(seq.clone(), 0, 100, 150).unwrap();
        let scaled = PlissQuery::new(seq.iter().map(|v| v * k).collect(), 0, 100 * k, 150 * k).unwrap();
        for kind in [PlissKind::Preserving, PlissKind::Reversing, PlissKind::Absolute] {
            prop_assert_eq!(pliss_moments(&q, kind), pliss_moments(&scaled, kind));
        }
    }

    #[test]
    fn henon_inverse_round_trip(a in -1.9f64..-1.0, b in 0.01f64..0.3, x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let dom = PlaneBox::square([0.0, 0.0], 10.0);
        let f = HenonLikeMap::henon(a, b).with_domain(dom);
        let g = f.inverse_map(dom);
        let q = g.eval(f.eval([x, y]).unwrap()).unwrap();
        prop_assert!((q[0] - x).abs() < 1e-10 && (q[1] - y).abs() < 1e-10);
        prop_assert!((f.log_abs_det([x, y]).unwrap() - b.ln()).abs() < 1e-12);
    }

    #[test]
    fn real_text_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_real(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn config_hash_survives_canonical_text(trials in 1i64..100_000, n in 1i64..500, seed in any::<u64>()) {
        let text = format!("trials = {trials}\nN = {n}\nseed = {seed}\n");
        let cfg = ExperimentConfig::parse(Command::Pliss, &text).unwrap();
        let again = ExperimentConfig::parse(Command::Pliss, &cfg.canonical()).unwrap();
        prop_assert_eq!(cfg.hash(), again.hash());
    }
}
