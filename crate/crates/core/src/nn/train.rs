use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{clip, sample_loss};
use super::{
    forward_trace, optimizer_step, Activation, AdamParams, ClassWeights, Matrix, ModelParams,
    OptimizerKind, OptimizerState,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let a = &self.adam;
        // negated comparisons so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Activations of one sample through a network, kept for backprop.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    acts: Vec<Vec<f64>>,
}

impl SampleGrad {
    pub fn record(params: &ModelParams, x: &[f64]) -> Result<Self> {
        Ok(Self {
            acts: forward_trace(params, x)?,
        })
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn last_hidden(&self) -> Option<&[f64]> {
        let n = self.acts.len();
        (n >= 3).then(|| self.acts[n - 2].as_slice())
    }

    /// Accumulates `scale * dL/dtheta` into `grad`, given the loss gradient
    /// at the output pre-activation and, optionally, an extra gradient
    /// arriving at the last hidden layer's output.
    pub fn backprop(
        &self,
        params: &ModelParams,
        output_delta: &[f64],
        hidden_grad: Option<&[f64]>,
        scale: f64,
        grad: &mut ModelParams,
    ) {
        let n_layers = params.layers.len();
        let mut delta: Vec<f64> = output_delta.iter().map(|d| d * scale).collect();
        for k in (0..n_layers).rev() {
            let layer = &params.layers[k];
            let input = &self.acts[k];
            let g = &mut grad.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
                g.bias[o] += d;
            }
            if k == 0 {
                break;
            }
            let mut upstream = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (u, &w) in upstream.iter_mut().zip(row) {
                    *u += d * w;
                }
            }
            if k == n_layers - 1 {
                if let Some(h) = hidden_grad {
                    for (u, &hg) in upstream.iter_mut().zip(h) {
                        *u += scale * hg;
                    }
                }
            }
            let prev_act = params.layers[k - 1].activation;
            delta = upstream
                .iter()
                .zip(input)
                .map(|(&u, &a)| u * prev_act.derivative_from_output(a))
                .collect();
        }
    }
}

pub(crate) fn check_binary_head(params: &ModelParams) -> Result<()> {
    let last = params
        .layers
        .last()
        .ok_or_else(|| Error::Shape("empty network".into()))?;
    if last.n_out != 1 || last.activation != Activation::Sigmoid {
        return Err(Error::Shape(
            "binary cross-entropy needs a single sigmoid output unit".into(),
        ));
    }
    Ok(())
}

/// dL/dz at a sigmoid output for one sample; zero when the probability was
/// clipped, since the clamp is flat there.
#[inline]
pub(crate) fn bce_output_delta(p: f64, y: u8, w: &ClassWeights) -> f64 {
    if clip(p) != p {
        return 0.0;
    }
    w.for_label(y) * (p - f64::from(y))
}

fn check_batch(params: &ModelParams, x: &Matrix, y: &[u8]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    check_binary_head(params)
}

/// Mean weighted BCE over the batch and its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    x: &Matrix,
    y: &[u8],
    weights: &ClassWeights,
) -> Result<(f64, ModelParams)> {
    check_batch(params, x, y)?;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (row, &label) in x.iter_rows().zip(y) {
        let tape = SampleGrad::record(params, row)?;
        let p = tape.output()[0];
        loss += sample_loss(p, label, weights);
        tape.backprop(
            params,
            &[bce_output_delta(p, label, weights)],
            None,
            1.0,
            &mut grad,
        );
    }
    let n = x.rows() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

pub fn backward(
    params: &ModelParams,
    x: &Matrix,
    y: &[u8],
    weights: &ClassWeights,
) -> Result<ModelParams> {
    loss_and_grad(params, x, y, weights).map(|(_, g)| g)
}

/// Seeded permutation of `0..n` cut into batches; the last batch may be short.
pub fn shuffled_batches(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Mini-batch trainer whose optimizer moments and shuffle stream persist
/// across calls, so several short runs equal one long run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: OptimizerState,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: OptimizerState::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
        })
    }

    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        shuffled_batches(&mut self.rng, n, self.cfg.batch_size)
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        optimizer_step(params, grads, &mut self.state, &self.cfg)
    }

    /// One pass over the data; returns the sample-weighted mean batch loss.
    pub fn run_epoch(
        &mut self,
        params: &mut ModelParams,
        x: &Matrix,
        y: &[u8],
        weights: &ClassWeights,
    ) -> Result<f64> {
        check_batch(params, x, y)?;
        let mut total = 0.0;
        for batch in self.epoch_batches(x.rows()) {
            let bx = x.select_rows(&batch);
            let by: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grad) = loss_and_grad(params, &bx, &by, weights)?;
            total += loss * batch.len() as f64;
            self.apply(params, &grad)?;
        }
        Ok(total / x.rows() as f64)
    }
}

/// Trains for `cfg.epochs` epochs and returns the per-epoch loss trace.
pub fn train(
    params: &mut ModelParams,
    x: &Matrix,
    y: &[u8],
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(*cfg)?;
    (0..cfg.epochs)
        .map(|_| trainer.run_epoch(params, x, y, weights))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, weighted_bce_loss, Layer};
    use rand::Rng;

    fn loss_of(params: &ModelParams, x: &Matrix, y: &[u8], w: &ClassWeights) -> f64 {
        let probs = crate::nn::predict_proba(params, x).unwrap();
        weighted_bce_loss(&probs, y, w).unwrap()
    }

    #[test]
    fn zero_net_bias_gradient_is_mean_residual() {
        let p = ModelParams::new(vec![Layer::zeros(2, 1, Activation::Sigmoid)]).unwrap();
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let y = [1, 0, 1, 0];
        let g = backward(&p, &x, &y, &ClassWeights::UNIFORM).unwrap();
        let expected = y.iter().map(|&l| 0.5 - f64::from(l)).sum::<f64>() / 4.0;
        assert_eq!(g.layers[0].bias[0], expected);
        assert_eq!(expected, 0.0);
        // unbalanced check so the value is not trivially zero
        let y = [1, 1, 1, 0];
        let g = backward(&p, &x, &y, &ClassWeights::UNIFORM).unwrap();
        assert_eq!(g.layers[0].bias[0], (0.5 * 1.0 - 0.5 * 3.0) / 4.0);
    }

    #[test]
    fn dead_relu_unit_has_zero_gradient() {
        // hidden unit 1 has a large negative bias: never active
        let l1 = Layer {
            n_in: 2,
            n_out: 2,
            weights: vec![0.5, -0.3, 0.1, 0.2],
            bias: vec![0.1, -100.0],
            activation: Activation::Relu,
        };
        let l2 = Layer {
            n_in: 2,
            n_out: 1,
            weights: vec![0.7, -0.4],
            bias: vec![0.0],
            activation: Activation::Sigmoid,
        };
        let p = ModelParams::new(vec![l1, l2]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let g = backward(&p, &x, &[1, 0, 1], &ClassWeights::UNIFORM).unwrap();
        assert_eq!(g.layers[0].weights[2], 0.0);
        assert_eq!(g.layers[0].weights[3], 0.0);
        assert_eq!(g.layers[0].bias[1], 0.0);
        assert_eq!(g.layers[1].weights[1], 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = init_params(
            &[4, 7, 5, 1],
            &[Activation::Relu, Activation::Sigmoid, Activation::Sigmoid],
            5,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = [1, 0, 0, 1, 1, 0, 1, 0];
        let w = ClassWeights { neg: 0.7, pos: 1.3 };
        let g = backward(&p, &x, &y, &w).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = g.values().collect();
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            let mut minus = p.clone();
            *minus.values_mut().nth(i).unwrap() -= h;
            let fd = (loss_of(&plus, &x, &y, &w) - loss_of(&minus, &x, &y, &w)) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(
                err < 1e-4 || (a - fd).abs() < 1e-10,
                "param {i}: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| u8::from(r[0] + 0.5 * r[1] > 0.2))
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let init = init_params(&[3, 8, 1], &[Activation::Relu, Activation::Sigmoid], 1).unwrap();
        let mut a = init.clone();
        let mut b = init;
        let ta = train(&mut a, &x, &y, &ClassWeights::UNIFORM, &cfg).unwrap();
        let tb = train(&mut b, &x, &y, &ClassWeights::UNIFORM, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.last().unwrap() < ta.first().unwrap());
    }

    #[test]
    fn short_last_batch_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = shuffled_batches(&mut rng, 10, 4);
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn non_binary_head_is_rejected() {
        let p = init_params(&[2, 2], &[Activation::Sigmoid], 0).unwrap();
        let x = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(backward(&p, &x, &[1], &ClassWeights::UNIFORM).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(Trainer::new(cfg).is_err());
    }
}
