//! Comparison network: one ReLU hidden layer, softmax output, binary
//! cross-entropy, mini-batch SGD with momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Real-valued two-layer network with a two-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    /// Hidden weights, row-major `hidden_dim x input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, row-major `2 x hidden_dim`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpModel {
    pub fn from_parts(
        input_dim: usize,
        hidden_dim: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if w1.len() != hidden_dim * input_dim
            || b1.len() != hidden_dim
            || w2.len() != 2 * hidden_dim
            || b2.len() != 2
        {
            return Err(Error::InvalidModel("mlp weight shapes are inconsistent".into()));
        }
        if w1.iter().chain(&b1).chain(&w2).chain(&b2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("mlp weights must be finite".into()));
        }
        Ok(Self { input_dim, hidden_dim, w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn forward_parts(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, [f64; 2], [f64; 2]) {
        let d1 = self.hidden_dim;
        let n = self.input_dim;
        let mut pre = vec![0.0f64; d1];
        for j in 0..d1 {
            let mut acc = self.b1[j];
            for l in 0..n {
                acc += self.w1[j * n + l] * x[l];
            }
            pre[j] = acc;
        }
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = [self.b2[0], self.b2[1]];
        for c in 0..2 {
            for j in 0..d1 {
                logits[c] += self.w2[c * d1 + j] * hidden[j];
            }
        }
        let m = logits[0].max(logits[1]);
        let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
        let z = e[0] + e[1];
        (pre, hidden, logits, [e[0] / z, e[1] / z])
    }
}

/// Class probabilities and the argmax class; ties go to class 0.
pub fn mlp_predict(model: &MlpModel, x: &[f64]) -> Result<(u8, [f64; 2])> {
    if x.len() != model.input_dim {
        return Err(Error::DimensionMismatch { expected: model.input_dim, got: x.len() });
    }
    let (_, _, _, probs) = model.forward_parts(x);
    let class = u8::from(probs[1] > probs[0]);
    Ok((class, probs))
}

const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of the class-1 probability, clamped away from 0/1.
fn sample_loss(probs: &[f64; 2], y: u8) -> f64 {
    let p1 = probs[1].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -p1.ln()
    } else {
        -(1.0 - p1).ln()
    }
}

/// Flat parameter gradients in the model's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dw1: Vec<f64>,
    pub db1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub db2: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &MlpModel) -> Self {
        Self {
            dw1: vec![0.0; model.w1.len()],
            db1: vec![0.0; model.b1.len()],
            dw2: vec![0.0; model.w2.len()],
            db2: vec![0.0; model.b2.len()],
        }
    }
}

/// Mean loss of a batch.
pub fn batch_loss(model: &MlpModel, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
    let mut acc = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (_, _, _, probs) = model.forward_parts(x);
        acc += sample_loss(&probs, y);
    }
    acc / xs.len() as f64
}

/// Backpropagated gradients of the mean batch loss.
///
/// The softmax/cross-entropy pair gives `dlogits = p - onehot(y)`; the ReLU
/// subgradient at zero is taken as zero.
pub fn analytic_gradients(model: &MlpModel, xs: &[Vec<f64>], ys: &[u8]) -> Gradients {
    let d1 = model.hidden_dim;
    let n = model.input_dim;
    let mut g = Gradients::zeros(model);
    let scale = 1.0 / xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let (pre, hidden, _, probs) = model.forward_parts(x);
        let target = [f64::from(y == 0), f64::from(y == 1)];
        let dlogits = [probs[0] - target[0], probs[1] - target[1]];
        for c in 0..2 {
            g.db2[c] += scale * dlogits[c];
            for j in 0..d1 {
                g.dw2[c * d1 + j] += scale * dlogits[c] * hidden[j];
            }
        }
        for j in 0..d1 {
            if pre[j] <= 0.0 {
                continue;
            }
            let dh = model.w2[j] * dlogits[0] + model.w2[d1 + j] * dlogits[1];
            g.db1[j] += scale * dh;
            for l in 0..n {
                g.dw1[j * n + l] += scale * dh * x[l];
            }
        }
    }
    g
}

/// Central finite differences of the mean batch loss.
pub fn numeric_gradients(model: &MlpModel, xs: &[Vec<f64>], ys: &[u8], step: f64) -> Gradients {
    let mut g = Gradients::zeros(model);
    let mut probe = model.clone();
    macro_rules! diff {
        ($field:ident, $out:ident) => {
            for i in 0..probe.$field.len() {
                let orig = probe.$field[i];
                probe.$field[i] = orig + step;
                let up = batch_loss(&probe, xs, ys);
                probe.$field[i] = orig - step;
                let down = batch_loss(&probe, xs, ys);
                probe.$field[i] = orig;
                g.$out[i] = (up - down) / (2.0 * step);
            }
        };
    }
    diff!(w1, dw1);
    diff!(b1, db1);
    diff!(w2, dw2);
    diff!(b2, db2);
    g
}

/// Largest relative disagreement between two gradient sets.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    let pairs = a
        .dw1
        .iter()
        .zip(&b.dw1)
        .chain(a.db1.iter().zip(&b.db1))
        .chain(a.dw2.iter().zip(&b.dw2))
        .chain(a.db2.iter().zip(&b.db2));
    let mut worst = 0.0f64;
    for (&x, &y) in pairs {
        let denom = x.abs().max(y.abs()).max(1.0);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

/// Backprop-vs-finite-difference check with step `1e-5`; returns the max
/// relative error over all parameters.
pub fn grad_check(model: &MlpModel, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
    let analytic = analytic_gradients(model, xs, ys);
    let numeric = numeric_gradients(model, xs, ys, 1e-5);
    max_relative_error(&analytic, &numeric)
}

/// Training knobs; the optimizer is SGD with momentum.
#[derive(Debug, Clone)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self { hidden: 25, epochs: 100, lr: 0.01, momentum: 0.9, batch_size: 32, seed: 0 }
    }
}

/// Weights drawn uniformly within `1/sqrt(fan_in)`, biases zero.
pub fn mlp_init(input_dim: usize, hidden: usize, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s1 = 1.0 / (input_dim as f64).sqrt();
    let w1 = (0..hidden * input_dim).map(|_| rng.gen_range(-s1..=s1)).collect();
    let s2 = 1.0 / (hidden as f64).sqrt();
    let w2 = (0..2 * hidden).map(|_| rng.gen_range(-s2..=s2)).collect();
    MlpModel {
        input_dim,
        hidden_dim: hidden,
        w1,
        b1: vec![0.0; hidden],
        w2,
        b2: vec![0.0; 2],
    }
}

/// Trains the baseline and returns the model with its per-epoch mean loss
/// curve. Deterministic per seed; `epochs = 0` returns the initialization.
pub fn mlp_train(data: &Dataset, config: &MlpTrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::InvalidModel("hidden width and batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut model = mlp_init(data.dim(), config.hidden, config.seed);
    let mut vel = Gradients::zeros(&model);
    let mut curve = Vec::with_capacity(config.epochs);
    let m = data.len();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.point(i).to_vec()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| data.label(i)).collect();
            epoch_loss += batch_loss(&model, &xs, &ys);
            batches += 1;
            let g = analytic_gradients(&model, &xs, &ys);
            let step = |param: &mut [f64], grad: &[f64], vel: &mut [f64]| {
                for i in 0..param.len() {
                    vel[i] = config.momentum * vel[i] - config.lr * grad[i];
                    param[i] += vel[i];
                }
            };
            step(&mut model.w1, &g.dw1, &mut vel.dw1);
            step(&mut model.b1, &g.db1, &mut vel.db1);
            step(&mut model.w2, &g.dw2, &mut vel.dw2);
            step(&mut model.b2, &g.db2, &mut vel.db2);
        }
        let mean = epoch_loss / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        curve.push(mean);
    }
    Ok((model, curve))
}

/// 0/1 predictions over a dataset.
pub fn mlp_predictions(model: &MlpModel, data: &Dataset) -> Result<Vec<u8>> {
    data.points().iter().map(|x| mlp_predict(model, x).map(|(c, _)| c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_random;

    #[test]
    fn zero_weights_tie_breaks_to_class_zero() {
        let model = MlpModel::from_parts(2, 3, vec![0.0; 6], vec![0.0; 3], vec![0.0; 6], vec![0.0; 2])
            .unwrap();
        let (class, probs) = mlp_predict(&model, &[0.3, -0.8]).unwrap();
        assert_eq!(class, 0);
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probabilities_normalize() {
        let model = mlp_init(4, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (_, probs) = mlp_predict(&model, &x).unwrap();
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_built_step_function() {
        // Hidden unit = relu(x); output favors class 1 when the unit fires.
        let model = MlpModel::from_parts(
            1,
            1,
            vec![1.0],
            vec![0.0],
            vec![-5.0, 5.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(mlp_predict(&model, &[0.5]).unwrap().0, 1);
        assert_eq!(mlp_predict(&model, &[-0.5]).unwrap().0, 0);
    }

    #[test]
    fn epochs_zero_returns_initialization() {
        let data = generate_random(3, 12, 5).unwrap();
        let cfg = MlpTrainConfig { hidden: 4, epochs: 0, seed: 9, ..Default::default() };
        let (model, curve) = mlp_train(&data, &cfg).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model, mlp_init(3, 4, 9));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = generate_random(3, 30, 5).unwrap();
        let cfg = MlpTrainConfig { hidden: 4, epochs: 5, seed: 11, ..Default::default() };
        let (a, ca) = mlp_train(&data, &cfg).unwrap();
        let (b, cb) = mlp_train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = mlp_init(3, 5, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let ys: Vec<u8> = (0..6).map(|_| rng.gen_range(0..=1) as u8).collect();
        let err = grad_check(&model, &xs, &ys);
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn sign_bug_is_caught_by_the_check() {
        let model = mlp_init(3, 5, 33);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let ys: Vec<u8> = (0..6).map(|_| rng.gen_range(0..=1) as u8).collect();
        let mut broken = analytic_gradients(&model, &xs, &ys);
        for v in &mut broken.dw1 {
            *v = -*v;
        }
        let numeric = numeric_gradients(&model, &xs, &ys, 1e-5);
        let err = max_relative_error(&broken, &numeric);
        assert!(err > 1e-2, "sign mutation must inflate the error, got {err}");
    }

    #[test]
    fn near_symmetric_point_has_tiny_gradient() {
        // Zero weights, balanced labels at mirrored inputs: the analytic
        // gradient of the output layer vanishes by symmetry.
        let model =
            MlpModel::from_parts(1, 2, vec![0.0; 2], vec![0.0; 2], vec![0.0; 4], vec![0.0; 2])
                .unwrap();
        let xs = vec![vec![1.0], vec![-1.0]];
        let ys = vec![0, 1];
        let g = analytic_gradients(&model, &xs, &ys);
        assert!(g.dw2.iter().all(|v| v.abs() < 1e-12));
        assert!(g.db2.iter().all(|v| v.abs() < 1e-12));
    }
}
