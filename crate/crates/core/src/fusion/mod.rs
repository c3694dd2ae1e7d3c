//! Loss-fusion training: a client's main net on its full local feature group,
//! guided by a one-layer prune net that reads embeddings from the frozen
//! federated model. The total loss is `l_main + beta * l_prune`, with `beta`
//! learned and clamped to `[0, beta_max]`. Predictions come from the main
//! net alone.

mod baselines;
mod grouping;

pub use baselines::{
    baseline_centralized, baseline_hfl_predict, baseline_localized, init_main, CentralizedOutcome,
};
pub use grouping::{group_features, union_schema, ClientFeatures, FeatureGrouping};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    bce_output_delta, check_binary_head, forward, init_params, optimizer_step, predict_proba,
    sample_loss, weighted_bce_loss, Activation, ClassWeights, Matrix, ModelParams, OptimizerKind,
    OptimizerState, SampleGrad, ScalarOptimizer, TrainConfig, Trainer,
};

/// What the prune net reads, and therefore how its loss reaches the main net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionCoupling {
    /// Embedding only. The prune loss then shares no parameters with the
    /// main net, so it cannot change the main net's gradients.
    Separate,
    /// Embedding concatenated with the main net's last hidden activations;
    /// the prune loss backpropagates into the main net through that slot.
    Concat,
    /// The prune head scores both the embedding and the main net's last
    /// hidden layer (which must have the embedding's width), and the prune
    /// loss averages the two. The main net is thereby pulled towards a
    /// representation the head learned on the global embedding.
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub beta_init: f64,
    pub beta_max: f64,
    pub beta_optimizer: OptimizerKind,
    pub beta_learning_rate: f64,
    pub freeze_beta: bool,
    pub coupling: FusionCoupling,
    /// Compute embeddings once up front instead of per batch. The values are
    /// identical since the global model is frozen.
    pub cache_embeddings: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta_init: 1.0,
            beta_max: 10.0,
            beta_optimizer: OptimizerKind::Sgd,
            beta_learning_rate: 1e-3,
            freeze_beta: false,
            coupling: FusionCoupling::Probe,
            cache_embeddings: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("fusion config: {what}")));
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return bad("beta_max must be finite and nonnegative");
        }
        if !(0.0..=self.beta_max).contains(&self.beta_init) {
            return bad("beta_init must lie in [0, beta_max]");
        }
        if !(self.beta_learning_rate >= 0.0 && self.beta_learning_rate.is_finite()) {
            return bad("beta_learning_rate must be finite and nonnegative");
        }
        Ok(())
    }
}

/// One client's fusion-training state.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub global: ModelParams,
    pub main: ModelParams,
    pub prune: ModelParams,
    pub beta: f64,
    pub coupling: FusionCoupling,
    pub main_opt: OptimizerState,
    pub prune_opt: OptimizerState,
    pub beta_opt: ScalarOptimizer,
}

impl FusionState {
    /// Builds the state with a freshly initialised one-layer prune net.
    pub fn new(
        global: ModelParams,
        main: ModelParams,
        cfg: &FusionConfig,
        prune_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = global
            .last_hidden_dim()
            .ok_or_else(|| Error::Shape("global model has no hidden layer to embed from".into()))?;
        check_binary_head(&main)?;
        let main_hidden = main.last_hidden_dim();
        let width = match cfg.coupling {
            FusionCoupling::Separate => h,
            FusionCoupling::Concat => {
                h + main_hidden.ok_or_else(|| {
                    Error::Shape("concat coupling needs a main net with a hidden layer".into())
                })?
            }
            FusionCoupling::Probe => {
                if main_hidden != Some(h) {
                    return Err(Error::Shape(format!(
                        "probe coupling needs the main net's last hidden width ({main_hidden:?}) to equal the embedding width {h}"
                    )));
                }
                h
            }
        };
        let prune = init_params(&[width, 1], &[Activation::Sigmoid], prune_seed)?;
        Ok(Self {
            global,
            main,
            prune,
            beta: cfg.beta_init,
            coupling: cfg.coupling,
            main_opt: OptimizerState::new(),
            prune_opt: OptimizerState::new(),
            beta_opt: ScalarOptimizer::new(cfg.beta_optimizer, cfg.beta_learning_rate),
        })
    }

    fn validate(&self) -> Result<()> {
        let h = self
            .global
            .last_hidden_dim()
            .ok_or_else(|| Error::Shape("global model has no hidden layer to embed from".into()))?;
        check_binary_head(&self.main)?;
        let expected = match self.coupling {
            FusionCoupling::Separate => Some(h),
            FusionCoupling::Concat => self.main.last_hidden_dim().map(|m| h + m),
            FusionCoupling::Probe => (self.main.last_hidden_dim() == Some(h)).then_some(h),
        };
        let layer = &self.prune.layers[0];
        if self.prune.layers.len() != 1
            || layer.n_out != 1
            || layer.activation != Activation::Sigmoid
            || Some(layer.n_in) != expected
        {
            return Err(Error::Shape(format!(
                "prune net must be one sigmoid layer {expected:?} -> 1"
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Per-epoch means of both loss terms, and `beta` at the end of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub l_main: f64,
    pub l_prune: f64,
    pub beta: f64,
}

/// Last-hidden-layer activations of the global model, one per row.
pub fn extract_embeddings(global: &ModelParams, x_global: &Matrix) -> Result<Vec<Vec<f64>>> {
    if global.last_hidden_dim().is_none() {
        return Err(Error::Shape(
            "global model has no hidden layer to embed from".into(),
        ));
    }
    if x_global.cols() != global.input_dim() {
        return Err(Error::Shape(format!(
            "embedding input has {} columns, global model expects {}",
            x_global.cols(),
            global.input_dim()
        )));
    }
    x_global
        .iter_rows()
        .map(|row| {
            Ok(forward(global, row)?
                .hidden
                .pop()
                .expect("checked hidden layer"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionLoss {
    pub total: f64,
    pub l_main: f64,
    pub l_prune: f64,
}

/// `l_main + beta * l_prune`, both weighted BCE under the same class weights.
pub fn fusion_loss(
    main_probs: &[f64],
    prune_probs: &[f64],
    labels: &[u8],
    weights: &ClassWeights,
    beta: f64,
) -> Result<FusionLoss> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "beta must be finite and nonnegative, got {beta}"
        )));
    }
    if prune_probs.len() != main_probs.len() {
        return Err(Error::Shape(format!(
            "{} main probabilities but {} prune probabilities",
            main_probs.len(),
            prune_probs.len()
        )));
    }
    let l_main = weighted_bce_loss(main_probs, labels, weights)?;
    let l_prune = weighted_bce_loss(prune_probs, labels, weights)?;
    Ok(FusionLoss {
        total: l_main + beta * l_prune,
        l_main,
        l_prune,
    })
}

/// Trains main net, prune net and `beta` jointly for `cfg.epochs` epochs.
///
/// Batches come from the same seeded shuffle as plain training, and the main
/// net's gradient is accumulated in the same order, so with `beta` frozen at
/// zero the main net ends bitwise equal to [`baseline_localized`]. The global
/// model is only read.
pub fn fusion_train(
    mut state: FusionState,
    x_local: &Matrix,
    x_global: &Matrix,
    labels: &[u8],
    weights: &ClassWeights,
    cfg: &TrainConfig,
    fusion: &FusionConfig,
) -> Result<(FusionState, Vec<EpochTrace>)> {
    fusion.validate()?;
    state.validate()?;
    let n = labels.len();
    if n == 0 || x_local.rows() != n || x_global.rows() != n {
        return Err(Error::Shape(format!(
            "fusion rows misaligned: {} local, {} global, {n} labels",
            x_local.rows(),
            x_global.rows()
        )));
    }
    if x_local.cols() != state.main.input_dim() {
        return Err(Error::Shape(format!(
            "local matrix has {} columns, main net expects {}",
            x_local.cols(),
            state.main.input_dim()
        )));
    }
    let cache = if fusion.cache_embeddings {
        Some(extract_embeddings(&state.global, x_global)?)
    } else {
        if x_global.cols() != state.global.input_dim() {
            return Err(Error::Shape(format!(
                "global matrix has {} columns, global model expects {}",
                x_global.cols(),
                state.global.input_dim()
            )));
        }
        None
    };
    let h_global = state.global.last_hidden_dim().expect("validated");

    let mut trainer = Trainer::new(*cfg)?;
    trainer.state = std::mem::take(&mut state.main_opt);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut prune_input = Vec::new();
    let mut hidden_grad = Vec::new();

    for epoch in 0..cfg.epochs {
        let (mut sum_main, mut sum_prune) = (0.0, 0.0);
        for batch in trainer.epoch_batches(n) {
            let mut g_main = state.main.zeros_like();
            let mut g_prune = state.prune.zeros_like();
            let (mut l_main, mut l_prune) = (0.0, 0.0);
            let beta = state.beta;
            for &i in &batch {
                let y = labels[i];
                let main_tape = SampleGrad::record(&state.main, x_local.row(i))?;
                let p_main = main_tape.output()[0];
                l_main += sample_loss(p_main, y, weights);

                prune_input.clear();
                match &cache {
                    Some(c) => prune_input.extend_from_slice(&c[i]),
                    None => prune_input.extend(
                        forward(&state.global, x_global.row(i))?
                            .hidden
                            .pop()
                            .expect("validated"),
                    ),
                }
                let main_hidden = main_tape.last_hidden();
                if state.coupling == FusionCoupling::Concat {
                    prune_input.extend_from_slice(main_hidden.expect("validated"));
                }
                let prune_tape = SampleGrad::record(&state.prune, &prune_input)?;
                let p_prune = prune_tape.output()[0];
                // the probe reads the main net's hidden layer with the same head
                let probe = match state.coupling {
                    FusionCoupling::Probe => {
                        let tape =
                            SampleGrad::record(&state.prune, main_hidden.expect("validated"))?;
                        let p = tape.output()[0];
                        Some((tape, p))
                    }
                    _ => None,
                };
                let share = if probe.is_some() { 0.5 } else { 1.0 };
                l_prune += share * sample_loss(p_prune, y, weights);
                if let Some((_, p)) = &probe {
                    l_prune += share * sample_loss(*p, y, weights);
                }

                let coupled = if beta != 0.0 {
                    let d_prune = bce_output_delta(p_prune, y, weights);
                    prune_tape.backprop(&state.prune, &[d_prune], None, share * beta, &mut g_prune);
                    let head = &state.prune.layers[0].weights;
                    match (state.coupling, &probe) {
                        (FusionCoupling::Concat, _) => {
                            hidden_grad.clear();
                            hidden_grad.extend(head[h_global..].iter().map(|w| beta * d_prune * w));
                            Some(hidden_grad.as_slice())
                        }
                        (FusionCoupling::Probe, Some((tape, p))) => {
                            let d_probe = bce_output_delta(*p, y, weights);
                            tape.backprop(
                                &state.prune,
                                &[d_probe],
                                None,
                                share * beta,
                                &mut g_prune,
                            );
                            hidden_grad.clear();
                            hidden_grad.extend(head.iter().map(|w| share * beta * d_probe * w));
                            Some(hidden_grad.as_slice())
                        }
                        _ => None,
                    }
                } else {
                    None
                };
                main_tape.backprop(
                    &state.main,
                    &[bce_output_delta(p_main, y, weights)],
                    coupled,
                    1.0,
                    &mut g_main,
                );
            }
            let m = batch.len() as f64;
            g_main.scale(1.0 / m);
            g_prune.scale(1.0 / m);
            l_main /= m;
            l_prune /= m;
            sum_main += l_main * m;
            sum_prune += l_prune * m;

            trainer.apply(&mut state.main, &g_main)?;
            optimizer_step(&mut state.prune, &g_prune, &mut state.prune_opt, cfg)?;
            if !fusion.freeze_beta {
                // d(total)/d(beta) is the batch prune loss
                state.beta_opt.step(&mut state.beta, l_prune);
                state.beta = state.beta.clamp(0.0, fusion.beta_max);
            }
        }
        trace.push(EpochTrace {
            epoch,
            l_main: sum_main / n as f64,
            l_prune: sum_prune / n as f64,
            beta: state.beta,
        });
    }
    state.main_opt = trainer.state;
    Ok((state, trace))
}

/// Probabilities from the main net alone.
pub fn predict_lf2l(state: &FusionState, x_local: &Matrix) -> Result<Vec<f64>> {
    predict_proba(&state.main, x_local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::{classifier_shape, encode_params};
    use crate::nn::{ClassWeightConfig, Layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Matrix, Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut local = Vec::new();
        let mut global = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let c: f64 = rng.random_range(-1.0..1.0);
            local.push(vec![a, b, c]);
            global.push(vec![a, b]);
            y.push(u8::from(a + 0.5 * c > 0.3 || i % 11 == 0));
        }
        (
            Matrix::from_rows(&local).unwrap(),
            Matrix::from_rows(&global).unwrap(),
            y,
        )
    }

    fn nets(coupling: FusionCoupling, beta_init: f64) -> (FusionState, FusionConfig) {
        let (d, a) = classifier_shape(2, &[5, 4]);
        let global = init_params(&d, &a, 1).unwrap();
        let main = init_main(3, &[6, 4], 2).unwrap();
        let cfg = FusionConfig {
            coupling,
            beta_init,
            ..FusionConfig::default()
        };
        (FusionState::new(global, main, &cfg, 3).unwrap(), cfg)
    }

    fn weights(y: &[u8]) -> ClassWeights {
        crate::nn::class_balanced_weights(&ClassWeightConfig::from_labels(0.99, y)).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 8,
            rng_seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identity_hidden_layer_embeds_previous_activation() {
        let first = Layer {
            n_in: 2,
            n_out: 2,
            weights: vec![1.0, 2.0, -1.0, 0.5],
            bias: vec![0.1, 0.2],
            activation: Activation::Relu,
        };
        let ident = Layer {
            n_in: 2,
            n_out: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        let head = Layer::zeros(2, 1, Activation::Sigmoid);
        let net = ModelParams::new(vec![first, ident, head]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.5], vec![1.0, 0.5]]).unwrap();
        let e = extract_embeddings(&net, &x).unwrap();
        assert_eq!(e[0], e[1]);
        // relu([1 + 1 + 0.1, -1 + 0.25 + 0.2])
        assert!((e[0][0] - 2.1).abs() < 1e-12);
        assert_eq!(e[0][1], 0.0);
    }

    #[test]
    fn embedding_of_hand_two_layer_net() {
        let net = ModelParams::new(vec![
            Layer {
                n_in: 2,
                n_out: 2,
                weights: vec![0.5, -0.25, 1.5, 0.75],
                bias: vec![0.1, -0.3],
                activation: Activation::Relu,
            },
            Layer {
                n_in: 2,
                n_out: 1,
                weights: vec![1.0, 1.0],
                bias: vec![0.0],
                activation: Activation::Sigmoid,
            },
        ])
        .unwrap();
        let e = extract_embeddings(&net, &Matrix::from_rows(&[vec![0.8, 0.4]]).unwrap()).unwrap();
        assert!((e[0][0] - (0.5 * 0.8 - 0.25 * 0.4 + 0.1)).abs() < 1e-12);
        assert!((e[0][1] - (1.5 * 0.8 + 0.75 * 0.4 - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn embedding_layout_mismatch() {
        let (state, _) = nets(FusionCoupling::Separate, 1.0);
        let x = Matrix::zeros(2, 3);
        assert!(matches!(
            extract_embeddings(&state.global, &x),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fusion_loss_arithmetic() {
        let w = ClassWeights::UNIFORM;
        let y = [1u8, 0];
        let pm = [0.7, 0.2];
        let pp = [0.6, 0.4];
        let off = fusion_loss(&pm, &pp, &y, &w, 0.0).unwrap();
        assert_eq!(off.total, off.l_main);
        let on = fusion_loss(&pm, &pp, &y, &w, 1.0).unwrap();
        assert_eq!(on.total, on.l_main + on.l_prune);
        assert!(fusion_loss(&pm, &pp[..1], &y, &w, 1.0).is_err());
        assert!(fusion_loss(&pm, &pp, &y, &w, -0.1).is_err());
    }

    #[test]
    fn beta_gradient_is_prune_loss() {
        let w = ClassWeights { neg: 0.4, pos: 1.6 };
        let y = [1u8, 0, 0, 1];
        let pm = [0.7, 0.2, 0.1, 0.4];
        let pp = [0.6, 0.4, 0.35, 0.55];
        let beta = 0.8;
        let h = 1e-6;
        let up = fusion_loss(&pm, &pp, &y, &w, beta + h).unwrap().total;
        let down = fusion_loss(&pm, &pp, &y, &w, beta - h).unwrap().total;
        let fd = (up - down) / (2.0 * h);
        let l_prune = fusion_loss(&pm, &pp, &y, &w, beta).unwrap().l_prune;
        assert!(l_prune > 0.0);
        assert!(((fd - l_prune) / l_prune).abs() < 1e-6);
    }

    #[test]
    fn beta_sgd_steps_by_lr_times_prune_loss() {
        // the update rule in isolation: constant prune loss 0.4, lr 0.1
        let mut opt = ScalarOptimizer::new(OptimizerKind::Sgd, 0.1);
        let mut beta = 1.0;
        let mut seen = vec![beta];
        for _ in 0..30 {
            opt.step(&mut beta, 0.4);
            beta = f64::clamp(beta, 0.0, 10.0);
            seen.push(beta);
        }
        for (k, b) in seen.iter().enumerate().take(26) {
            assert!((b - (1.0 - 0.04 * k as f64)).abs() < 1e-12, "{k}");
        }
        assert_eq!(seen[30], 0.0);
    }

    fn fusion_off_matches_localized(coupling: FusionCoupling) {
        let (x_local, x_global, y) = toy(40, 5);
        let w = weights(&y);
        let cfg = small_cfg();
        let (state, mut fcfg) = nets(coupling, 0.0);
        fcfg.freeze_beta = true;
        let main0 = state.main.clone();
        let (trained, trace) =
            fusion_train(state, &x_local, &x_global, &y, &w, &cfg, &fcfg).unwrap();
        let (baseline, _) = baseline_localized(main0, &x_local, &y, &w, &cfg).unwrap();
        assert_eq!(encode_params(&trained.main), encode_params(&baseline));
        assert!(trace.iter().all(|t| t.beta == 0.0));
    }

    #[test]
    fn fusion_off_is_localized_training() {
        fusion_off_matches_localized(FusionCoupling::Concat);
        fusion_off_matches_localized(FusionCoupling::Separate);
        fusion_off_matches_localized(FusionCoupling::Probe);
    }

    #[test]
    fn separate_coupling_leaves_main_net_untouched_by_prune_loss() {
        let (x_local, x_global, y) = toy(40, 6);
        let w = weights(&y);
        let cfg = small_cfg();
        let (state, fcfg) = nets(FusionCoupling::Separate, 1.0);
        let main0 = state.main.clone();
        let (trained, _) = fusion_train(state, &x_local, &x_global, &y, &w, &cfg, &fcfg).unwrap();
        let (baseline, _) = baseline_localized(main0, &x_local, &y, &w, &cfg).unwrap();
        assert_eq!(trained.main, baseline);
    }

    #[test]
    fn coupled_variants_change_main_net() {
        let (x_local, x_global, y) = toy(40, 6);
        let w = weights(&y);
        let cfg = small_cfg();
        for coupling in [FusionCoupling::Concat, FusionCoupling::Probe] {
            let (state, fcfg) = nets(coupling, 1.0);
            let main0 = state.main.clone();
            let (trained, _) =
                fusion_train(state, &x_local, &x_global, &y, &w, &cfg, &fcfg).unwrap();
            let (baseline, _) = baseline_localized(main0, &x_local, &y, &w, &cfg).unwrap();
            assert_ne!(trained.main, baseline, "{coupling:?}");
        }
    }

    /// Total loss on one full batch, recomputed from plain forward passes.
    fn total_loss(
        state: &FusionState,
        main: &ModelParams,
        x_local: &Matrix,
        x_global: &Matrix,
        y: &[u8],
        w: &ClassWeights,
    ) -> f64 {
        let emb = extract_embeddings(&state.global, x_global).unwrap();
        let (mut pm, mut pe, mut ph) = (Vec::new(), Vec::new(), Vec::new());
        for (i, e) in emb.iter().enumerate() {
            let f = forward(main, x_local.row(i)).unwrap();
            pm.push(f.output[0]);
            let hidden = f.last_hidden().unwrap();
            match state.coupling {
                FusionCoupling::Concat => {
                    let mut inp = e.clone();
                    inp.extend_from_slice(hidden);
                    pe.push(forward(&state.prune, &inp).unwrap().output[0]);
                }
                _ => {
                    pe.push(forward(&state.prune, e).unwrap().output[0]);
                    ph.push(forward(&state.prune, hidden).unwrap().output[0]);
                }
            }
        }
        let l_main = weighted_bce_loss(&pm, y, w).unwrap();
        let l_prune = if state.coupling == FusionCoupling::Probe {
            0.5 * (weighted_bce_loss(&pe, y, w).unwrap() + weighted_bce_loss(&ph, y, w).unwrap())
        } else {
            weighted_bce_loss(&pe, y, w).unwrap()
        };
        l_main + state.beta * l_prune
    }

    fn hidden_gradient_matches_finite_differences(coupling: FusionCoupling) {
        let (x_local, x_global, y) = toy(12, 8);
        let w = weights(&y);
        let (state, _) = nets(coupling, 0.7);
        // analytic gradient via one sgd step with lr 1 on a copy
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: y.len(),
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let fcfg = FusionConfig {
            freeze_beta: true,
            beta_init: 0.7,
            coupling,
            ..FusionConfig::default()
        };
        let (after, _) =
            fusion_train(state.clone(), &x_local, &x_global, &y, &w, &cfg, &fcfg).unwrap();
        let analytic: Vec<f64> = state
            .main
            .values()
            .zip(after.main.values())
            .map(|(a, b)| a - b)
            .collect();
        let h = 1e-6;
        for (k, &g) in analytic.iter().enumerate() {
            let mut up = state.main.clone();
            let mut down = state.main.clone();
            *up.values_mut().nth(k).unwrap() += h;
            *down.values_mut().nth(k).unwrap() -= h;
            let fd = (total_loss(&state, &up, &x_local, &x_global, &y, &w)
                - total_loss(&state, &down, &x_local, &x_global, &y, &w))
                / (2.0 * h);
            assert!(
                (fd - g).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{coupling:?} param {k}: fd {fd} vs {g}"
            );
        }
    }

    #[test]
    fn concat_main_gradient_matches_finite_differences() {
        hidden_gradient_matches_finite_differences(FusionCoupling::Concat);
    }

    #[test]
    fn probe_main_gradient_matches_finite_differences() {
        hidden_gradient_matches_finite_differences(FusionCoupling::Probe);
    }

    #[test]
    fn probe_prune_gradient_matches_finite_differences() {
        let (x_local, x_global, y) = toy(12, 15);
        let w = weights(&y);
        let (state, _) = nets(FusionCoupling::Probe, 0.7);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: y.len(),
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let fcfg = FusionConfig {
            freeze_beta: true,
            beta_init: 0.7,
            ..FusionConfig::default()
        };
        let (after, _) =
            fusion_train(state.clone(), &x_local, &x_global, &y, &w, &cfg, &fcfg).unwrap();
        let analytic: Vec<f64> = state
            .prune
            .values()
            .zip(after.prune.values())
            .map(|(a, b)| a - b)
            .collect();
        let h = 1e-6;
        for (k, &g) in analytic.iter().enumerate() {
            let mut up = state.clone();
            let mut down = state.clone();
            *up.prune.values_mut().nth(k).unwrap() += h;
            *down.prune.values_mut().nth(k).unwrap() -= h;
            let fd = (total_loss(&up, &state.main, &x_local, &x_global, &y, &w)
                - total_loss(&down, &state.main, &x_local, &x_global, &y, &w))
                / (2.0 * h);
            assert!(
                (fd - g).abs() <= 1e-6 * (1.0 + fd.abs()),
                "prune param {k}: fd {fd} vs {g}"
            );
        }
    }

    #[test]
    fn probe_requires_matching_widths() {
        let (d, a) = classifier_shape(2, &[5, 4]);
        let global = init_params(&d, &a, 1).unwrap();
        let main = init_main(3, &[6, 3], 2).unwrap();
        let cfg = FusionConfig::default();
        assert!(FusionState::new(global.clone(), main.clone(), &cfg, 3).is_err());
        let concat = FusionConfig {
            coupling: FusionCoupling::Concat,
            ..cfg
        };
        assert!(FusionState::new(global, main, &concat, 3).is_ok());
    }

    #[test]
    fn beta_trace_non_increasing_and_bounded() {
        let (x_local, x_global, y) = toy(60, 10);
        let w = weights(&y);
        let (state, mut fcfg) = nets(FusionCoupling::Concat, 1.0);
        fcfg.beta_learning_rate = 0.05;
        let (_, trace) =
            fusion_train(state, &x_local, &x_global, &y, &w, &small_cfg(), &fcfg).unwrap();
        let mut prev = 1.0;
        for t in &trace {
            assert!(t.beta <= prev && t.beta >= 0.0);
            prev = t.beta;
        }
        assert!(trace.last().unwrap().beta < 1.0);
    }

    #[test]
    fn global_model_is_frozen_and_cache_is_transparent() {
        let (x_local, x_global, y) = toy(30, 11);
        let w = weights(&y);
        let (state, mut fcfg) = nets(FusionCoupling::Concat, 1.0);
        let before = encode_params(&state.global);
        let (a, ta) = fusion_train(
            state.clone(),
            &x_local,
            &x_global,
            &y,
            &w,
            &small_cfg(),
            &fcfg,
        )
        .unwrap();
        assert_eq!(encode_params(&a.global), before);
        fcfg.cache_embeddings = false;
        let (b, tb) =
            fusion_train(state, &x_local, &x_global, &y, &w, &small_cfg(), &fcfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn prediction_ignores_everything_but_main_net() {
        let (x_local, x_global, y) = toy(30, 12);
        let w = weights(&y);
        let (state, fcfg) = nets(FusionCoupling::Concat, 1.0);
        let (trained, _) =
            fusion_train(state, &x_local, &x_global, &y, &w, &small_cfg(), &fcfg).unwrap();
        let before = predict_lf2l(&trained, &x_local).unwrap();
        let mut other = trained.clone();
        other.prune.values_mut().for_each(|v| *v = -*v + 0.3);
        other.global.values_mut().for_each(|v| *v *= 2.0);
        other.beta = 7.5;
        assert_eq!(predict_lf2l(&other, &x_local).unwrap(), before);
        assert_eq!(before, predict_proba(&trained.main, &x_local).unwrap());
    }

    #[test]
    fn zero_main_net_predicts_one_half() {
        let (x_local, ..) = toy(5, 13);
        let (mut state, _) = nets(FusionCoupling::Separate, 1.0);
        state.main = state.main.zeros_like();
        assert!(predict_lf2l(&state, &x_local)
            .unwrap()
            .iter()
            .all(|&p| p == 0.5));
    }

    #[test]
    fn misaligned_rows_rejected() {
        let (x_local, x_global, y) = toy(20, 14);
        let (state, fcfg) = nets(FusionCoupling::Concat, 1.0);
        let short = x_global.select_rows(&[0, 1, 2]);
        let err = fusion_train(
            state,
            &x_local,
            &short,
            &y,
            &weights(&y),
            &small_cfg(),
            &fcfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn prune_net_is_one_layer() {
        let (state, _) = nets(FusionCoupling::Concat, 1.0);
        assert_eq!(state.prune.layers.len(), 1);
        assert_eq!(state.prune.layers[0].n_in, 4 + 4);
        for coupling in [FusionCoupling::Separate, FusionCoupling::Probe] {
            let (state, _) = nets(coupling, 1.0);
            assert_eq!(state.prune.layers.len(), 1);
            assert_eq!(state.prune.layers[0].n_in, 4);
        }
    }
}
