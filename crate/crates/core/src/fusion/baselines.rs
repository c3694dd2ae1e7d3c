use super::grouping::union_schema;
use crate::datasets::{Dataset, Encoder, FeatureSchema};
use crate::error::{Error, Result};
use crate::fed::classifier_shape;
use crate::nn::{
    class_balanced_weights, init_params, predict_proba, train, ClassWeightConfig, ClassWeights,
    Matrix, ModelParams, TrainConfig,
};

/// Fresh relu MLP with a sigmoid head over `input_dim` columns.
pub fn init_main(input_dim: usize, hidden: &[usize], seed: u64) -> Result<ModelParams> {
    let (dims, acts) = classifier_shape(input_dim, hidden);
    init_params(&dims, &acts, seed)
}

/// Plain training on the client's own feature group. Returns the model and
/// its per-epoch loss trace.
pub fn baseline_localized(
    mut init: ModelParams,
    x_local: &Matrix,
    labels: &[u8],
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    let trace = train(&mut init, x_local, labels, weights, cfg)?;
    Ok((init, trace))
}

/// The federated model applied to the shared feature group.
pub fn baseline_hfl_predict(global: &ModelParams, x_global: &Matrix) -> Result<Vec<f64>> {
    predict_proba(global, x_global)
}

#[derive(Debug, Clone)]
pub struct CentralizedOutcome {
    pub schema: FeatureSchema,
    pub model: ModelParams,
    pub pooled_rows: usize,
    /// Cells marked unknown because the row's client lacks the feature.
    pub unknown_cells: usize,
    pub loss_trace: Vec<f64>,
    /// Test probabilities, one vector per client in input order.
    pub test_probs: Vec<Vec<f64>>,
}

/// Pools every client's training rows under the union schema, marking
/// features a client lacks as unknown, trains one model, and scores each
/// client's test rows.
pub fn baseline_centralized(
    clients: &[(Dataset, Dataset)],
    hidden: &[usize],
    cfg: &TrainConfig,
    beta_cb: f64,
    init_seed: u64,
) -> Result<CentralizedOutcome> {
    if clients.len() < 2 {
        return Err(Error::Config(format!(
            "centralized pooling needs at least 2 clients, got {}",
            clients.len()
        )));
    }
    let schema = union_schema(clients.iter().map(|(train, _)| &train.schema))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut unknown_cells = 0;
    for (train, _) in clients {
        let conformed = train.conform_to(&schema)?;
        unknown_cells += conformed.unknown_count() - train.unknown_count();
        rows.extend(conformed.rows);
        labels.extend(conformed.labels);
    }
    let pooled = Dataset::new(schema.clone(), rows, labels)?;
    let encoder = Encoder::fit(&pooled)?;
    let enc = encoder.encode(&pooled)?;
    let weights = class_balanced_weights(&ClassWeightConfig::from_labels(beta_cb, &pooled.labels))?;
    let (model, loss_trace) = baseline_localized(
        init_main(enc.cols(), hidden, init_seed)?,
        &enc.x,
        &enc.labels,
        &weights,
        cfg,
    )?;
    let test_probs = clients
        .iter()
        .map(|(_, test)| predict_proba(&model, &encoder.encode(&test.conform_to(&schema)?)?.x))
        .collect::<Result<_>>()?;
    Ok(CentralizedOutcome {
        schema,
        model,
        pooled_rows: pooled.len(),
        unknown_cells,
        loss_trace,
        test_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Cell, Feature};
    use crate::nn::ClassWeights;

    fn ds(names: &[&str], n: usize, offset: f64) -> Dataset {
        let schema =
            FeatureSchema::new(names.iter().map(|s| Feature::numeric(*s)).collect()).unwrap();
        let rows = (0..n)
            .map(|i| {
                names
                    .iter()
                    .enumerate()
                    .map(|(j, _)| Cell::Numeric(offset + (i * (j + 1)) as f64 * 0.1))
                    .collect()
            })
            .collect();
        let labels = (0..n).map(|i| u8::from(i % 4 == 0)).collect();
        Dataset::new(schema, rows, labels).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            rng_seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn localized_is_deterministic_and_learns() {
        let d = ds(&["a", "b"], 40, 0.0);
        let enc = Encoder::fit(&d).unwrap().encode(&d).unwrap();
        let init = init_main(enc.cols(), &[8, 4], 1).unwrap();
        let cfg = TrainConfig { epochs: 5, ..cfg() };
        let (m1, t1) = baseline_localized(
            init.clone(),
            &enc.x,
            &enc.labels,
            &ClassWeights::UNIFORM,
            &cfg,
        )
        .unwrap();
        let (m2, t2) =
            baseline_localized(init, &enc.x, &enc.labels, &ClassWeights::UNIFORM, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
        assert!(t1[4] < t1[0]);
    }

    #[test]
    fn hfl_prediction_is_a_forward_pass() {
        let g = init_main(3, &[4], 2).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]]).unwrap();
        let p = baseline_hfl_predict(&g, &x).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            assert_eq!(p[i], crate::nn::forward(&g, row).unwrap().output[0]);
        }
    }

    #[test]
    fn pooling_marks_absent_features_unknown() {
        let a = ds(&["f1", "f4"], 20, 0.0);
        let b = ds(&["f1", "f6"], 12, 1.0);
        let clients = vec![(a.clone(), a.clone()), (b.clone(), b.clone())];
        let out = baseline_centralized(&clients, &[4], &cfg(), 0.9, 3).unwrap();
        assert_eq!(out.pooled_rows, 32);
        assert_eq!(out.schema.names(), ["f1", "f4", "f6"]);
        // every row lacks exactly one of f4/f6
        assert_eq!(out.unknown_cells, 32);
        assert_eq!(out.test_probs[0].len(), 20);
        assert_eq!(out.test_probs[1].len(), 12);
        assert!(out.test_probs.iter().flatten().all(|p| p.is_finite()));
    }

    #[test]
    fn identical_schemas_pool_like_concatenation() {
        let a = ds(&["x", "y"], 16, 0.0);
        let b = ds(&["x", "y"], 8, 0.5);
        let out = baseline_centralized(
            &[(a.clone(), a.clone()), (b.clone(), b.clone())],
            &[4],
            &cfg(),
            0.9,
            3,
        )
        .unwrap();
        assert_eq!(out.unknown_cells, 0);
        let mut rows = a.rows.clone();
        rows.extend(b.rows.clone());
        let mut labels = a.labels.clone();
        labels.extend(&b.labels);
        let concat = Dataset::new(a.schema.clone(), rows, labels).unwrap();
        let enc = Encoder::fit(&concat).unwrap().encode(&concat).unwrap();
        let w =
            class_balanced_weights(&ClassWeightConfig::from_labels(0.9, &concat.labels)).unwrap();
        let (direct, _) = baseline_localized(
            init_main(enc.cols(), &[4], 3).unwrap(),
            &enc.x,
            &enc.labels,
            &w,
            &cfg(),
        )
        .unwrap();
        assert_eq!(out.model, direct);
    }

    #[test]
    fn conflicting_kinds_rejected() {
        let a = ds(&["f1"], 8, 0.0);
        let schema = FeatureSchema::new(vec![Feature::categorical("f1", ["u"])]).unwrap();
        let b = Dataset::new(
            schema,
            (0..8).map(|_| vec![Cell::Category("u".into())]).collect(),
            vec![0, 1, 0, 0, 1, 0, 0, 0],
        )
        .unwrap();
        let err = baseline_centralized(&[(a.clone(), a), (b.clone(), b)], &[2], &cfg(), 0.9, 1)
            .unwrap_err();
        assert!(matches!(err, Error::SchemaConflict { .. }));
    }
}
