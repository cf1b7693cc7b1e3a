//! Policy network: 4 inputs → 128 ReLU units → 2 softmax outputs
//! (no-infuse, infuse). Forward pass and backprop are hand-rolled; the
//! network is small enough that plain loops beat any framework.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const OBS_DIM: usize = 4;
pub const HIDDEN_DIM: usize = 128;
pub const OUTPUT_DIM: usize = 2;
/// (4+1)·128 + (128+1)·2 = 898.
pub const PARAM_COUNT: usize = (OBS_DIM + 1) * HIDDEN_DIM + (HIDDEN_DIM + 1) * OUTPUT_DIM;

/// All 898 network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    /// Hidden layer weights, row-major `HIDDEN_DIM × OBS_DIM`.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// Output layer weights, row-major `OUTPUT_DIM × HIDDEN_DIM`.
    pub output_w: Vec<f64>,
    pub output_b: Vec<f64>,
}

impl PolicyWeights {
    pub fn zeros() -> Self {
        Self {
            hidden_w: vec![0.0; HIDDEN_DIM * OBS_DIM],
            hidden_b: vec![0.0; HIDDEN_DIM],
            output_w: vec![0.0; OUTPUT_DIM * HIDDEN_DIM],
            output_b: vec![0.0; OUTPUT_DIM],
        }
    }

    /// Seeded initialization, uniform in ±1/√fan_in per layer.
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        let mut w = Self::zeros();
        let hidden_bound = 1.0 / (OBS_DIM as f64).sqrt();
        let output_bound = 1.0 / (HIDDEN_DIM as f64).sqrt();
        for v in w.hidden_w.iter_mut().chain(w.hidden_b.iter_mut()) {
            *v = rng.random_range(-hidden_bound..=hidden_bound);
        }
        for v in w.output_w.iter_mut().chain(w.output_b.iter_mut()) {
            *v = rng.random_range(-output_bound..=output_bound);
        }
        w
    }

    pub fn param_count(&self) -> usize {
        self.hidden_w.len() + self.hidden_b.len() + self.output_w.len() + self.output_b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_w.len() != HIDDEN_DIM * OBS_DIM
            || self.hidden_b.len() != HIDDEN_DIM
            || self.output_w.len() != OUTPUT_DIM * HIDDEN_DIM
            || self.output_b.len() != OUTPUT_DIM
        {
            return Err(Error::Checkpoint(format!(
                "weight shape mismatch: got {} parameters, expected {PARAM_COUNT}",
                self.param_count()
            )));
        }
        let finite = self
            .iter_params()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("policy weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn iter_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.hidden_w
            .iter()
            .chain(self.hidden_b.iter())
            .chain(self.output_w.iter())
            .chain(self.output_b.iter())
            .copied()
    }
}

/// Gradient with the same layout as [`PolicyWeights`].
#[derive(Debug, Clone)]
pub struct PolicyGradient {
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub output_w: Vec<f64>,
    pub output_b: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros() -> Self {
        Self {
            hidden_w: vec![0.0; HIDDEN_DIM * OBS_DIM],
            hidden_b: vec![0.0; HIDDEN_DIM],
            output_w: vec![0.0; OUTPUT_DIM * HIDDEN_DIM],
            output_b: vec![0.0; OUTPUT_DIM],
        }
    }

    pub fn iter_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.hidden_w
            .iter()
            .chain(self.hidden_b.iter())
            .chain(self.output_w.iter())
            .chain(self.output_b.iter())
            .copied()
    }
}

/// Post-ReLU activations and output probabilities for one observation.
pub struct ForwardTrace {
    pub hidden: [f64; HIDDEN_DIM],
    pub probs: [f64; 2],
}

/// Forward pass returning `(p_no_infuse, p_infuse)`.
pub fn forward(weights: &PolicyWeights, obs: [f64; OBS_DIM]) -> Result<[f64; 2]> {
    Ok(forward_with_trace(weights, obs)?.probs)
}

/// Forward pass keeping the hidden activations for backprop.
pub fn forward_with_trace(weights: &PolicyWeights, obs: [f64; OBS_DIM]) -> Result<ForwardTrace> {
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite observation {obs:?}")));
    }
    let mut hidden = [0.0f64; HIDDEN_DIM];
    for (i, h) in hidden.iter_mut().enumerate() {
        let row = &weights.hidden_w[i * OBS_DIM..(i + 1) * OBS_DIM];
        let mut z = weights.hidden_b[i];
        for (w, o) in row.iter().zip(obs.iter()) {
            z += w * o;
        }
        *h = z.max(0.0);
    }
    let mut logits = [0.0f64; 2];
    for (i, logit) in logits.iter_mut().enumerate() {
        let row = &weights.output_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
        let mut z = weights.output_b[i];
        for (w, h) in row.iter().zip(hidden.iter()) {
            z += w * h;
        }
        *logit = z;
    }
    let m = logits[0].max(logits[1]);
    if !m.is_finite() {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let sum = e0 + e1;
    Ok(ForwardTrace { hidden, probs: [e0 / sum, e1 / sum] })
}

/// Accumulate the gradient of a scalar loss with known logit gradient
/// `d_logits` into `grad` (backprop through the output layer, ReLU mask,
/// and hidden layer).
#[allow(clippy::needless_range_loop)] // parallel indexing across three arrays
pub fn accumulate_gradient(
    weights: &PolicyWeights,
    obs: [f64; OBS_DIM],
    trace: &ForwardTrace,
    d_logits: [f64; 2],
    grad: &mut PolicyGradient,
) {
    let mut d_hidden = [0.0f64; HIDDEN_DIM];
    for i in 0..OUTPUT_DIM {
        grad.output_b[i] += d_logits[i];
        let row = &mut grad.output_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
        let w_row = &weights.output_w[i * HIDDEN_DIM..(i + 1) * HIDDEN_DIM];
        for j in 0..HIDDEN_DIM {
            row[j] += d_logits[i] * trace.hidden[j];
            d_hidden[j] += w_row[j] * d_logits[i];
        }
    }
    for j in 0..HIDDEN_DIM {
        // ReLU: units that ended at zero pass no gradient.
        if trace.hidden[j] > 0.0 {
            grad.hidden_b[j] += d_hidden[j];
            let row = &mut grad.hidden_w[j * OBS_DIM..(j + 1) * OBS_DIM];
            for (g, o) in row.iter_mut().zip(obs.iter()) {
                *g += d_hidden[j] * o;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn parameter_count_is_898() {
        assert_eq!(PARAM_COUNT, 898);
        let mut rng = seeds::rng(1, &[seeds::stream::WEIGHT_INIT]);
        assert_eq!(PolicyWeights::init(&mut rng).param_count(), 898);
        assert_eq!(PolicyWeights::zeros().param_count(), 898);
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let w = PolicyWeights::zeros();
        let p = forward(&w, [0.3, -0.1, 0.05, 0.5]).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut rng = seeds::rng(2, &[seeds::stream::WEIGHT_INIT]);
        let mut w = PolicyWeights::init(&mut rng);
        let obs = [0.2, -0.05, 0.1, 0.5];
        let p0 = forward(&w, obs).unwrap();
        w.output_b[0] += 3.7;
        w.output_b[1] += 3.7;
        let p1 = forward(&w, obs).unwrap();
        assert_relative_eq!(p0[0], p1[0], max_relative = 1e-12);
        assert_relative_eq!(p0[1], p1[1], max_relative = 1e-12);
    }

    /// Duplicate-implementation oracle: an independently written forward pass
    /// with a different loop structure and an unshifted softmax.
    fn forward_oracle(w: &PolicyWeights, obs: [f64; OBS_DIM]) -> [f64; 2] {
        let hidden: Vec<f64> = (0..HIDDEN_DIM)
            .map(|i| {
                let z = w.hidden_b[i]
                    + (0..OBS_DIM).map(|j| w.hidden_w[i * OBS_DIM + j] * obs[j]).sum::<f64>();
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let z0 = w.output_b[0]
            + (0..HIDDEN_DIM).map(|j| w.output_w[j] * hidden[j]).sum::<f64>();
        let z1 = w.output_b[1]
            + (0..HIDDEN_DIM).map(|j| w.output_w[HIDDEN_DIM + j] * hidden[j]).sum::<f64>();
        let (e0, e1) = (z0.exp(), z1.exp());
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    }

    #[test]
    fn forward_matches_independent_reimplementation() {
        let mut rng = seeds::rng(3, &[seeds::stream::WEIGHT_INIT]);
        for _ in 0..50 {
            let w = PolicyWeights::init(&mut rng);
            let obs = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let p = forward(&w, obs).unwrap();
            let q = forward_oracle(&w, obs);
            assert_relative_eq!(p[0], q[0], max_relative = 1e-10);
            assert_relative_eq!(p[1], q[1], max_relative = 1e-10);
        }
    }

    #[test]
    fn non_finite_observation_is_an_error() {
        let w = PolicyWeights::zeros();
        assert!(forward(&w, [f64::NAN, 0.0, 0.0, 0.5]).is_err());
        let mut bad = PolicyWeights::zeros();
        bad.output_b[0] = f64::INFINITY;
        assert!(forward(&bad, [0.0; 4]).is_err());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = seeds::rng(4, &[seeds::stream::WEIGHT_INIT]);
        let w = PolicyWeights::init(&mut rng);
        assert!(w.hidden_w.iter().chain(w.hidden_b.iter()).all(|v| v.abs() <= 0.5));
        let ob = 1.0 / (HIDDEN_DIM as f64).sqrt();
        assert!(w.output_w.iter().chain(w.output_b.iter()).all(|v| v.abs() <= ob));
    }

    proptest! {
        #[test]
        fn probabilities_normalize(seed in 0u64..2000, o1 in -1.0f64..1.0, o2 in -0.5f64..0.5, o3 in -1.0f64..1.0, o4 in 0.0f64..1.0) {
            let mut rng = seeds::rng(seed, &[seeds::stream::WEIGHT_INIT]);
            let w = PolicyWeights::init(&mut rng);
            let p = forward(&w, [o1, o2, o3, o4]).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            prop_assert!(p[0] > 0.0 && p[0] < 1.0);
            prop_assert!(p[1] > 0.0 && p[1] < 1.0);
        }
    }
}
