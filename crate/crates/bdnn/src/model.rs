//! Network data types and the forward-pass semantics of binary activations.
//!
//! A model is a stack of `K` weight matrices together with one threshold per
//! layer. Every unit outputs `1` when its pre-activation reaches the layer
//! threshold and `0` otherwise; the single output unit is the predicted class.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Domain the weight entries live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDomain {
    /// Continuous weights in `[-1, 1]`.
    ContinuousBox,
    /// Weights restricted to `{0, 1}`.
    Binary,
}

/// Whether the per-layer thresholds are trained or pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Trainable,
    FixedZero,
}

/// Layer widths plus the variable domains used when training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Widths `d_0 .. d_K`; `d_0` is the input dimension.
    dims: Vec<usize>,
    pub weight_domain: WeightDomain,
    pub lambda_mode: LambdaMode,
}

impl Architecture {
    /// Builds an architecture for binary classification (`d_K` must be 1).
    pub fn new(dims: Vec<usize>, weight_domain: WeightDomain, lambda_mode: LambdaMode) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArchitecture(
                "need at least one layer (dims must list d_0 and d_K)".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArchitecture("all layer widths must be >= 1".into()));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture(
                "classification requires an output width of 1".into(),
            ));
        }
        Ok(Self { dims, weight_domain, lambda_mode })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of layers `K`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Width of layer `k` for `k in 1..=K` (`width(0)` is the input dimension).
    pub fn width(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Number of weight entries in layer `k`, `k in 1..=K`.
    pub fn layer_weight_count(&self, k: usize) -> usize {
        self.dims[k] * self.dims[k - 1]
    }

    fn weight_bounds(&self) -> (f64, f64) {
        match self.weight_domain {
            WeightDomain::ContinuousBox => (-1.0, 1.0),
            WeightDomain::Binary => (0.0, 1.0),
        }
    }
}

/// A trained binary-activation network.
///
/// Weight matrices are stored row-major: entry `(j, l)` of layer `k` is
/// `weights[k-1][j * d_{k-1} + l]`, row `j` feeding output unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdnnModel {
    arch: Architecture,
    weights: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
}

/// Slack allowed when validating stored weights against their bounds.
const BOUND_SLACK: f64 = 1e-9;

impl BdnnModel {
    pub fn new(arch: Architecture, weights: Vec<Vec<f64>>, lambdas: Vec<f64>) -> Result<Self> {
        let depth = arch.depth();
        if weights.len() != depth {
            return Err(Error::InvalidModel(format!(
                "expected {depth} weight matrices, got {}",
                weights.len()
            )));
        }
        if lambdas.len() != depth {
            return Err(Error::InvalidModel(format!(
                "expected {depth} thresholds, got {}",
                lambdas.len()
            )));
        }
        let (w_lo, w_hi) = arch.weight_bounds();
        for (k, layer) in weights.iter().enumerate() {
            let want = arch.layer_weight_count(k + 1);
            if layer.len() != want {
                return Err(Error::InvalidModel(format!(
                    "layer {} has {} entries, expected {}",
                    k + 1,
                    layer.len(),
                    want
                )));
            }
            for (idx, &w) in layer.iter().enumerate() {
                if !w.is_finite() || w < w_lo - BOUND_SLACK || w > w_hi + BOUND_SLACK {
                    return Err(Error::BoundViolation {
                        name: format!("w[{}][{}]", k + 1, idx),
                        value: w,
                        lower: w_lo,
                        upper: w_hi,
                    });
                }
                if arch.weight_domain == WeightDomain::Binary
                    && (w - w.round()).abs() > BOUND_SLACK
                {
                    return Err(Error::InvalidModel(format!(
                        "binary-domain weight w[{}][{}] = {w} is not 0/1",
                        k + 1,
                        idx
                    )));
                }
            }
        }
        for (k, &l) in lambdas.iter().enumerate() {
            if !l.is_finite() || l < -1.0 - BOUND_SLACK || l > 1.0 + BOUND_SLACK {
                return Err(Error::BoundViolation {
                    name: format!("lambda[{}]", k + 1),
                    value: l,
                    lower: -1.0,
                    upper: 1.0,
                });
            }
            if arch.lambda_mode == LambdaMode::FixedZero && l != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "lambda[{}] = {l} but thresholds are fixed to zero",
                    k + 1
                )));
            }
        }
        // Clamp tolerance-level overshoot so stored entries honor the bounds.
        let mut weights = weights;
        for layer in &mut weights {
            for w in layer.iter_mut() {
                *w = w.clamp(w_lo, w_hi);
            }
        }
        let lambdas = lambdas.into_iter().map(|l| l.clamp(-1.0, 1.0)).collect();
        Ok(Self { arch, weights, lambdas })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Weight entry `(j, l)` of layer `k`, `k in 1..=K`.
    pub fn weight(&self, k: usize, j: usize, l: usize) -> f64 {
        self.weights[k - 1][j * self.arch.dims[k - 1] + l]
    }

    /// Runs the network on one input.
    ///
    /// Returns the activation vector of every layer plus the prediction,
    /// which is the single output unit.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<Vec<u8>>, u8)> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        let outputs = threshold_forward(&self.arch, &self.weights, &self.lambdas, x);
        let prediction = *outputs.last().unwrap().first().unwrap();
        Ok((outputs, prediction))
    }

    /// Prediction only.
    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(self.forward(x)?.1)
    }

    /// Predictions for a whole dataset, in order.
    pub fn predictions(&self, data: &Dataset) -> Result<Vec<u8>> {
        data.points().iter().map(|x| self.predict(x)).collect()
    }

    /// Number of misclassified points: `sum_i 1[forward(x^i) != y^i]`.
    pub fn empirical_loss(&self, data: &Dataset) -> Result<usize> {
        let mut wrong = 0;
        for (x, &y) in data.points().iter().zip(data.labels()) {
            if self.predict(x)? != y {
                wrong += 1;
            }
        }
        Ok(wrong)
    }
}

/// Threshold forward pass over raw (unvalidated) weights.
///
/// Unit `j` of layer `k` fires exactly when its pre-activation is `>=` the
/// layer threshold; the boundary itself activates. Summation runs over the
/// input index in increasing order, which downstream feasibility checks
/// replicate term for term.
pub(crate) fn threshold_forward(
    arch: &Architecture,
    weights: &[Vec<f64>],
    lambdas: &[f64],
    x: &[f64],
) -> Vec<Vec<u8>> {
    let mut outputs: Vec<Vec<u8>> = Vec::with_capacity(arch.depth());
    let mut prev_real: Vec<f64> = x.to_vec();
    for k in 1..=arch.depth() {
        let d_out = arch.dims[k];
        let d_in = arch.dims[k - 1];
        let layer = &weights[k - 1];
        let lambda = lambdas[k - 1];
        let mut out = Vec::with_capacity(d_out);
        for j in 0..d_out {
            let mut alpha = 0.0;
            for l in 0..d_in {
                alpha += layer[j * d_in + l] * prev_real[l];
            }
            out.push(u8::from(alpha >= lambda));
        }
        prev_real = out.iter().map(|&u| f64::from(u)).collect();
        outputs.push(out);
    }
    outputs
}

/// Pre-activations of every unit on one input, layer by layer.
///
/// Uses the same summation order as [`threshold_forward`].
pub(crate) fn pre_activations(
    arch: &Architecture,
    weights: &[Vec<f64>],
    lambdas: &[f64],
    x: &[f64],
) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(arch.depth());
    let mut prev_real: Vec<f64> = x.to_vec();
    for k in 1..=arch.depth() {
        let d_out = arch.dims[k];
        let d_in = arch.dims[k - 1];
        let layer = &weights[k - 1];
        let lambda = lambdas[k - 1];
        let mut alphas = Vec::with_capacity(d_out);
        let mut out = Vec::with_capacity(d_out);
        for j in 0..d_out {
            let mut alpha = 0.0;
            for l in 0..d_in {
                alpha += layer[j * d_in + l] * prev_real[l];
            }
            out.push(f64::from(u8::from(alpha >= lambda)));
            alphas.push(alpha);
        }
        prev_real = out;
        acts.push(alphas);
    }
    acts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arch(dims: &[usize]) -> Architecture {
        Architecture::new(dims.to_vec(), WeightDomain::ContinuousBox, LambdaMode::Trainable).unwrap()
    }

    #[test]
    fn boundary_activates() {
        // W = 0, lambda = 0: pre-activation 0 lands in the ">=" branch.
        let m = BdnnModel::new(arch(&[1, 1]), vec![vec![0.0]], vec![0.0]).unwrap();
        assert_eq!(m.predict(&[5.0]).unwrap(), 1);
    }

    #[test]
    fn sign_threshold() {
        let m = BdnnModel::new(arch(&[1, 1]), vec![vec![1.0]], vec![0.0]).unwrap();
        assert_eq!(m.predict(&[-0.5]).unwrap(), 0);
        assert_eq!(m.predict(&[0.5]).unwrap(), 1);
    }

    #[test]
    fn handwritten_xor_witness() {
        // h1 = [x1 + x2 <= 0.75], h2 = [x1 + x2 <= 1.5] via negative rows,
        // output fires only on the (0,1) hidden pattern.
        let a = arch(&[2, 2, 1]);
        let m = BdnnModel::new(
            a,
            vec![vec![-1.0, -1.0, -0.5, -0.5], vec![-0.5, 0.5]],
            vec![-0.75, 0.25],
        )
        .unwrap();
        let pts = [
            (vec![0.0, 0.0], 0),
            (vec![0.0, 1.0], 1),
            (vec![1.0, 0.0], 1),
            (vec![1.0, 1.0], 0),
        ];
        for (x, y) in pts {
            assert_eq!(m.predict(&x).unwrap(), y, "point {x:?}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = BdnnModel::new(arch(&[2, 1]), vec![vec![1.0, 1.0]], vec![0.0]).unwrap();
        assert!(matches!(
            m.predict(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rejects_out_of_bound_weight() {
        let err = BdnnModel::new(arch(&[1, 1]), vec![vec![1.5]], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::BoundViolation { .. }));
    }

    #[test]
    fn rejects_nonzero_lambda_in_fixed_zero_mode() {
        let a = Architecture::new(vec![1, 1], WeightDomain::ContinuousBox, LambdaMode::FixedZero).unwrap();
        assert!(BdnnModel::new(a, vec![vec![1.0]], vec![0.1]).is_err());
    }

    #[test]
    fn empirical_loss_counts_mismatches() {
        // All-ones predictor: W = 0 gives pre-activation 0 >= 0 everywhere.
        let m = BdnnModel::new(arch(&[1, 1]), vec![vec![0.0]], vec![0.0]).unwrap();
        let data = Dataset::new(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1, 1, 0]).unwrap();
        assert_eq!(m.empirical_loss(&data).unwrap(), 1);
    }

    #[test]
    fn conflicting_duplicates_cost_at_least_one() {
        let data = Dataset::new(vec![vec![0.3, -0.2], vec![0.3, -0.2]], vec![0, 1]).unwrap();
        for w in [vec![1.0, -1.0], vec![-0.4, 0.9], vec![0.0, 0.0]] {
            let m = BdnnModel::new(arch(&[2, 1]), vec![w], vec![0.25]).unwrap();
            assert!(m.empirical_loss(&data).unwrap() >= 1);
        }
    }

    proptest! {
        // Scaling one layer's weights and threshold by beta > 0 never changes
        // any activation (knife-edge pre-activations are excluded since the
        // float comparison may tip either way there).
        #[test]
        fn scale_invariance(
            ws in proptest::collection::vec(-1.0f64..1.0, 6),
            wo in proptest::collection::vec(-1.0f64..1.0, 2),
            l1 in -0.9f64..0.9,
            l2 in -0.9f64..0.9,
            x in proptest::collection::vec(-3.0f64..3.0, 3),
            beta in 0.05f64..0.95,
            layer in 0usize..2,
        ) {
            let a = arch(&[3, 2, 1]);
            let weights = vec![ws.clone(), wo.clone()];
            let lambdas = vec![l1, l2];
            let acts = pre_activations(&a, &weights, &lambdas, &x);
            for (k, layer_acts) in acts.iter().enumerate() {
                for &alpha in layer_acts {
                    prop_assume!((alpha - lambdas[k]).abs() > 1e-9);
                }
            }
            let mut scaled = weights.clone();
            let mut scaled_l = lambdas.clone();
            for w in &mut scaled[layer] {
                *w *= beta;
            }
            scaled_l[layer] *= beta;
            let base = threshold_forward(&a, &weights, &lambdas, &x);
            let alt = threshold_forward(&a, &scaled, &scaled_l, &x);
            prop_assert_eq!(base, alt);
        }

        // Normalizing an unbounded layer by its largest magnitude, as in the
        // admissibility argument, keeps the forward outputs.
        #[test]
        fn normalization_preserves_forward(
            ws in proptest::collection::vec(-5.0f64..5.0, 6),
            l1 in -4.0f64..4.0,
            x in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let a = arch(&[3, 2, 1]);
            let weights = vec![ws.clone(), vec![0.5, -0.5]];
            let lambdas = vec![l1, 0.1];
            let acts = pre_activations(&a, &weights, &lambdas, &x);
            for (k, layer_acts) in acts.iter().enumerate() {
                for &alpha in layer_acts {
                    prop_assume!((alpha - lambdas[k]).abs() > 1e-6);
                }
            }
            let beta = ws.iter().fold(l1.abs(), |m, w| m.max(w.abs()));
            prop_assume!(beta > 1e-6);
            let mut norm = weights.clone();
            for w in &mut norm[0] {
                *w /= beta;
            }
            let mut norm_l = lambdas.clone();
            norm_l[0] /= beta;
            prop_assert_eq!(
                threshold_forward(&a, &weights, &lambdas, &x),
                threshold_forward(&a, &norm, &norm_l, &x)
            );
        }
    }
}
