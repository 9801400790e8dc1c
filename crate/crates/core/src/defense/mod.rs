//! Client-side defense ladder: privacy-loss links, the simulated worst-case
//! decoder, the naive and basic defenses, the proximal privacy step, the
//! minimax alternation, and the forward-backward-split training loop.

pub mod basic;
pub mod fbs;
pub mod minimax;
pub mod naive;
pub mod prox;
pub mod simulated;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basic::{basic_defense_step, BasicDefense};
pub use fbs::{train_vfl_fbs, DefenseDiagRow, FbsDefense};
pub use minimax::{minimax, MinimaxConfig, MinimaxDiag, TauState};
pub use naive::{naive_defense_gradient, NaiveDefense};
pub use prox::{fbs_solve, prox_descent, prox_privacy, soft_threshold, ProxKind};
pub use simulated::{train_simulated_decoder, DecoderState};

/// Monotone non-increasing link from reconstruction loss `l` to privacy
/// loss `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyLossKind {
    /// `g = -l`
    Neg,
    /// `g = 1 / l`, clamped away from the singularity at 0.
    Inv,
    /// `g = exp(-l)`
    Exp,
}

/// Clamp floor for the `Inv` link.
pub const INV_CLAMP: f64 = 1e-8;

/// Value of the privacy link and its derivative in `l`.
#[derive(Debug, Clone, Copy)]
pub struct PrivacyLossValue {
    pub g: f64,
    pub dg_dl: f64,
    /// Set when `Inv` hit its clamp; surfaced in run diagnostics.
    pub clamped: bool,
}

/// Evaluates `g(l)` and `dg/dl`.
pub fn privacy_loss(l: f64, kind: PrivacyLossKind) -> Result<PrivacyLossValue> {
    if !l.is_finite() || l < 0.0 {
        return Err(Error::domain(format!(
            "reconstruction loss {l} outside [0, inf)"
        )));
    }
    Ok(match kind {
        PrivacyLossKind::Neg => PrivacyLossValue {
            g: -l,
            dg_dl: -1.0,
            clamped: false,
        },
        PrivacyLossKind::Inv => {
            let clamped = l < INV_CLAMP;
            let l = l.max(INV_CLAMP);
            PrivacyLossValue {
                g: 1.0 / l,
                dg_dl: -1.0 / (l * l),
                clamped,
            }
        }
        PrivacyLossKind::Exp => {
            let e = (-l).exp();
            PrivacyLossValue {
                g: e,
                dg_dl: -e,
                clamped: false,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_link_at_zero() {
        let v = privacy_loss(0.0, PrivacyLossKind::Exp).unwrap();
        assert_eq!(v.g, 1.0);
        assert_eq!(v.dg_dl, -1.0);
        assert!(!v.clamped);
    }

    #[test]
    fn neg_link() {
        let v = privacy_loss(2.0, PrivacyLossKind::Neg).unwrap();
        assert_eq!(v.g, -2.0);
        assert_eq!(v.dg_dl, -1.0);
    }

    #[test]
    fn inv_link_and_clamp() {
        let v = privacy_loss(0.5, PrivacyLossKind::Inv).unwrap();
        assert_eq!(v.g, 2.0);
        assert_eq!(v.dg_dl, -4.0);
        let c = privacy_loss(0.0, PrivacyLossKind::Inv).unwrap();
        assert!(c.clamped);
        assert!(c.g.is_finite());
    }

    #[test]
    fn links_are_non_increasing_in_l() {
        for kind in [PrivacyLossKind::Neg, PrivacyLossKind::Inv, PrivacyLossKind::Exp] {
            for l in [0.0, 1e-6, 0.1, 1.0, 10.0] {
                let v = privacy_loss(l, kind).unwrap();
                assert!(v.dg_dl <= 0.0, "{kind:?} at l={l}");
            }
        }
    }

    #[test]
    fn rejects_negative_loss() {
        assert!(privacy_loss(-1.0, PrivacyLossKind::Exp).is_err());
    }
}
