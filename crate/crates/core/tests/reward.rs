use metagrating::reward::{list_kinds, reward, RewardKind};
use proptest::prelude::*;

#[test]
fn catalog_has_twelve_kinds_in_table_order() {
    let kinds = list_kinds();
    assert_eq!(kinds.len(), 12);
    assert_eq!(kinds.first(), Some(&RewardKind::Step));
    assert_eq!(kinds.last(), Some(&RewardKind::FinalSigmoid));
}

#[test]
fn final_sigmoid_reference_value() {
    let want = 1000.0 / (1.0 + (-1.0f64).exp()) - 500.0;
    let got = reward(RewardKind::FinalSigmoid, -0.05).unwrap();
    assert!((got - want).abs() < 1e-9);
    assert!((got - 231.06).abs() < 5e-3);
}

#[test]
fn documented_values() {
    assert_eq!(reward(RewardKind::Step, -0.01).unwrap(), 10.0);
    assert_eq!(reward(RewardKind::Step, 0.02).unwrap(), -10.0);
    assert_eq!(reward(RewardKind::FinalSigmoid, 0.0).unwrap(), 0.0);
    assert!((reward(RewardKind::Quadratic, -0.001).unwrap() - 1.0).abs() < 1e-12);
    assert!((reward(RewardKind::Linear, -1e-5).unwrap() - 20.0).abs() < 1e-12);
    assert!((reward(RewardKind::FifthPower, -0.1).unwrap() - 20.0).abs() < 1e-9);
    let tan = reward(RewardKind::Tangent, -0.001).unwrap();
    assert!((tan - 0.1f64.tan()).abs() < 1e-12);
}

#[test]
fn sign_convention_for_every_kind() {
    for k in list_kinds() {
        assert!(reward(k, -1e-3).unwrap() > 0.0, "{k} improvement");
        assert!(reward(k, 1e-3).unwrap() < 0.0, "{k} deterioration");
    }
}

#[test]
fn no_change_earns_nothing_except_step() {
    for k in list_kinds() {
        let r = reward(k, 0.0).unwrap();
        if k == RewardKind::Step {
            assert_eq!(r, 10.0);
        } else {
            assert_eq!(r, 0.0, "{k}");
        }
    }
}

#[test]
fn final_sigmoid_scan_is_monotone_and_bounded() {
    let mut prev = f64::INFINITY;
    for i in 0..1000 {
        let d = -1.0 + 2.0 * i as f64 / 999.0;
        let r = reward(RewardKind::FinalSigmoid, d).unwrap();
        assert!(r > -500.0 && r < 500.0);
        assert!(r <= prev, "not monotone at {d}");
        prev = r;
    }
    for d in [-1e6, -50.0, 50.0, 1e6] {
        let r = reward(RewardKind::FinalSigmoid, d).unwrap();
        assert!(r > -500.0 && r < 500.0, "{d} -> {r}");
    }
}

#[test]
fn non_finite_change_is_rejected() {
    assert!(reward(RewardKind::Linear, f64::NAN).is_err());
    assert!(reward(RewardKind::Step, f64::INFINITY).is_err());
}

proptest! {
    #[test]
    fn continuous_kinds_are_sign_odd(d in prop_oneof![-0.01f64..-1e-9, 1e-9f64..0.01]) {
        for k in list_kinds().into_iter().filter(|k| k.is_continuous()) {
            let r = reward(k, d).unwrap();
            prop_assert!(r.signum() == -d.signum(), "{} at {}: {}", k, d, r);
        }
    }

    #[test]
    fn reward_is_pure(d in -1.0f64..1.0) {
        for k in list_kinds() {
            prop_assert_eq!(reward(k, d).unwrap().to_bits(), reward(k, d).unwrap().to_bits());
        }
    }
}
