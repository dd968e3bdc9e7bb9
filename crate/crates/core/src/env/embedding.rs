use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hash::{hash_tokens, mix, signed_unit};
use crate::seq::{canonical, Token};
use crate::utility::{Embedding, Query, SequenceUtility};

/// Embedding that linearly realizes a given utility:
/// `e(x, y) = w(x, y) + (u(x, y) / |theta|^2) theta`, where `w` is a seeded
/// pseudorandom vector orthogonal to `theta`.
///
/// The query only affects `w`, so contexts differ across rounds while
/// `<theta, e>` stays equal to `u`.
pub struct TargetEmbedding {
    utility: Arc<dyn SequenceUtility>,
    theta: DVector<f64>,
    theta_sq: f64,
    seed: u64,
    w_scale: f64,
}

/// Builds a [`TargetEmbedding`]. `u_bound` is an upper bound on `|u|`; it must
/// not exceed `|theta|` so that `|e| <= 1`. `w_scale` in `[0, 1]` sets the
/// size of the orthogonal part; zero gives `e = (u / |theta|^2) theta`.
pub fn embed_with_target(
    utility: Arc<dyn SequenceUtility>,
    theta: DVector<f64>,
    u_bound: f64,
    w_scale: f64,
    seed: u64,
) -> Result<TargetEmbedding> {
    let norm = theta.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidParam("theta must be nonzero".into()));
    }
    if u_bound > norm * (1.0 + 1e-12) {
        return Err(Error::InvalidParam(format!(
            "utility bound {u_bound} exceeds |theta| = {norm}; embeddings would leave the unit ball"
        )));
    }
    if !(0.0..=1.0).contains(&w_scale) {
        return Err(Error::InvalidParam(format!("w_scale must be in [0, 1], got {w_scale}")));
    }
    Ok(TargetEmbedding { utility, theta_sq: norm * norm, theta, seed, w_scale })
}

impl TargetEmbedding {
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    fn orthogonal(&self, q: Query, tokens: &[Token], u: f64) -> DVector<f64> {
        let d = self.theta.len();
        if self.w_scale == 0.0 || d < 2 {
            return DVector::zeros(d);
        }
        let eos = self.utility.vocab().eos();
        let h = hash_tokens(mix(self.seed, q.0 as u64), canonical(tokens, eos));
        let mut w = DVector::from_fn(d, |i, _| signed_unit(mix(h, i as u64)));
        let proj = w.dot(&self.theta) / self.theta_sq;
        w.axpy(-proj, &self.theta, 1.0);
        let n = w.norm();
        if n < 1e-12 {
            return DVector::zeros(d);
        }
        let target = self.w_scale * (1.0 - u * u / self.theta_sq).max(0.0).sqrt();
        w * (target / n)
    }
}

impl Embedding for TargetEmbedding {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        let u = self.utility.utility(q, tokens);
        let mut e = self.orthogonal(q, tokens, u);
        e.axpy(u / self.theta_sq, &self.theta, 1.0);
        e
    }
}
