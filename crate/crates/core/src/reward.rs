//! Reward functions of the merit change δ (negative δ = improvement).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardKind {
    Step,
    Sigmoid1,
    Sigmoid2,
    Sigmoid3,
    Sigmoid4,
    Sigmoid5,
    Quadratic,
    Linear,
    FifthPower,
    Tangent,
    StepSigmoid,
    FinalSigmoid,
}

const ALL: [RewardKind; 12] = [
    RewardKind::Step,
    RewardKind::Sigmoid1,
    RewardKind::Sigmoid2,
    RewardKind::Sigmoid3,
    RewardKind::Sigmoid4,
    RewardKind::Sigmoid5,
    RewardKind::Quadratic,
    RewardKind::Linear,
    RewardKind::FifthPower,
    RewardKind::Tangent,
    RewardKind::StepSigmoid,
    RewardKind::FinalSigmoid,
];

/// All kinds in catalog order.
pub fn list_kinds() -> Vec<RewardKind> {
    ALL.to_vec()
}

const TANGENT_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-3;

impl RewardKind {
    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Step => "Step",
            RewardKind::Sigmoid1 => "Sigmoid1",
            RewardKind::Sigmoid2 => "Sigmoid2",
            RewardKind::Sigmoid3 => "Sigmoid3",
            RewardKind::Sigmoid4 => "Sigmoid4",
            RewardKind::Sigmoid5 => "Sigmoid5",
            RewardKind::Quadratic => "Quadratic",
            RewardKind::Linear => "Linear",
            RewardKind::FifthPower => "FifthPower",
            RewardKind::Tangent => "Tangent",
            RewardKind::StepSigmoid => "StepSigmoid",
            RewardKind::FinalSigmoid => "FinalSigmoid",
        }
    }

    /// Slope constant of the recentered sigmoid rows.
    fn sigmoid_rate(self) -> Option<f64> {
        match self {
            RewardKind::Sigmoid1 => Some(1000.0),
            RewardKind::Sigmoid2 => Some(500.0),
            RewardKind::Sigmoid3 => Some(450.0),
            RewardKind::Sigmoid4 => Some(400.0),
            RewardKind::Sigmoid5 => Some(1200.0),
            _ => None,
        }
    }

    /// Whether the reward varies continuously through δ = 0.
    pub fn is_continuous(self) -> bool {
        !matches!(
            self,
            RewardKind::Step | RewardKind::Linear | RewardKind::FifthPower | RewardKind::StepSigmoid
        )
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL.iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward kind {s:?}")))
    }
}

/// Magnitude-split helper: `+base + f` for improvements, `−base + f` for
/// deteriorations, 0 when nothing changed.
fn split(delta: f64, base: f64, f: f64) -> f64 {
    if delta < 0.0 {
        base + f
    } else if delta > 0.0 {
        -base + f
    } else {
        0.0
    }
}

/// Reward for a merit change `delta`.
pub fn reward(kind: RewardKind, delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::Numeric(format!("non-finite merit change {delta}")));
    }
    let r = match kind {
        RewardKind::Step => {
            if delta <= 0.0 {
                10.0
            } else {
                -10.0
            }
        }
        RewardKind::Sigmoid1
        | RewardKind::Sigmoid2
        | RewardKind::Sigmoid3
        | RewardKind::Sigmoid4
        | RewardKind::Sigmoid5 => {
            // 1/(1+e^{cδ}) − 1/2, written without overflow
            let c = kind.sigmoid_rate().expect("sigmoid kind");
            -0.5 * (0.5 * c * delta).tanh()
        }
        RewardKind::Quadratic => -1e6 * delta * delta.abs(),
        RewardKind::Linear => split(delta, 10.0, -1e6 * delta),
        RewardKind::FifthPower => split(delta, 10.0, -1e6 * delta.powi(5)),
        RewardKind::Tangent => -(100.0 * delta).clamp(-TANGENT_LIMIT, TANGENT_LIMIT).tan(),
        RewardKind::StepSigmoid => {
            let s = 10.0 / (1.0 + (-delta).exp());
            split(delta, 0.0, if delta < 0.0 { s } else { -s })
        }
        RewardKind::FinalSigmoid => {
            // 1000/(1+e^{20δ}) − 500 = −500·tanh(10δ), kept strictly inside (−500, 500)
            let r = -500.0 * (10.0 * delta).tanh();
            r.clamp(f64::next_up(-500.0), f64::next_down(500.0))
        }
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_order() {
        let kinds = list_kinds();
        assert_eq!(kinds.len(), 12);
        assert_eq!(kinds[0], RewardKind::Step);
        assert_eq!(kinds[11], RewardKind::FinalSigmoid);
        for k in kinds {
            assert_eq!(k.name().parse::<RewardKind>().unwrap(), k);
        }
        assert!("Cubic".parse::<RewardKind>().is_err());
    }

    #[test]
    fn documented_values() {
        assert_eq!(reward(RewardKind::Step, -0.01).unwrap(), 10.0);
        assert_eq!(reward(RewardKind::Step, 0.01).unwrap(), -10.0);
        assert_eq!(reward(RewardKind::Step, 0.0).unwrap(), 10.0);
        assert_eq!(reward(RewardKind::FinalSigmoid, 0.0).unwrap(), 0.0);
        assert!((reward(RewardKind::Quadratic, -0.001).unwrap() - 1.0).abs() < 1e-12);
        assert!((reward(RewardKind::Linear, -1e-5).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn final_sigmoid_matches_logistic_form() {
        for &d in &[-0.3, -0.05, -0.001, 0.002, 0.07, 0.4] {
            let logistic = 1000.0 / (1.0 + (20.0 * d as f64).exp()) - 500.0;
            assert!((reward(RewardKind::FinalSigmoid, d).unwrap() - logistic).abs() < 1e-9);
        }
        let r = reward(RewardKind::FinalSigmoid, 5.0).unwrap();
        assert!(r > -500.0 && r < -499.0);
    }

    #[test]
    fn sigmoid_rows_are_recentered() {
        let r = reward(RewardKind::Sigmoid2, -0.001).unwrap();
        let expected = 1.0 / (1.0 + (500.0f64 * -0.001).exp()) - 0.5;
        assert!((r - expected).abs() < 1e-15);
    }

    #[test]
    fn tangent_is_clamped() {
        let r = reward(RewardKind::Tangent, -1.0).unwrap();
        assert!((r - TANGENT_LIMIT.tan()).abs() < 1e-9);
        assert!(r.is_finite() && r > 900.0);
    }

    #[test]
    fn non_finite_delta_rejected() {
        assert!(reward(RewardKind::Linear, f64::NAN).is_err());
    }
}
