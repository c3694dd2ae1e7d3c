//! Config-driven experiment runner: per seed, split every client, group
//! features, run FedAvg on the shared group, then score all four methods on
//! each client's held-out rows.

mod artifacts;

pub use artifacts::{load_config, write_artifacts, write_json, RunArtifacts};

use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    generate_synthetic, load_csv, stratified_split, Dataset, EncodedMatrix, Encoder, FeatureSchema,
    SchemaFile, SyntheticSpec,
};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{aggregate_report, auprc, auroc, Method, MetricReport, MetricSample};
use crate::fed::{run_federated, ClientData, FedConfig, RoundRecord, Transport};
use crate::fusion::{
    baseline_centralized, baseline_hfl_predict, baseline_localized, fusion_train, group_features,
    init_main, predict_lf2l, EpochTrace, FeatureGrouping, FusionConfig, FusionCoupling,
    FusionState,
};
use crate::nn::{class_balanced_weights, ClassWeightConfig, TrainConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvClient {
    pub id: String,
    pub data: PathBuf,
    pub schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Two generated clients, `small` and `large`.
    Synthetic(SyntheticSpec),
    Csv {
        clients: Vec<CsvClient>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_frac: f64,
    pub seeds: Vec<u64>,
    /// Class-balancing hyperparameter of the effective-number weights.
    pub beta_cb: f64,
    /// FedAvg over the shared feature group; `fed.hidden` shapes the global
    /// model.
    pub fed: FedConfig,
    /// Training of the main, prune and centralized nets.
    pub local: TrainConfig,
    pub main_hidden: Vec<usize>,
    pub fusion: FusionConfig,
    pub transport: Transport,
    pub out_dir: PathBuf,
    /// Defaults to a name derived from the config contents.
    pub run_id: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            train_frac: 0.7,
            seeds: (1..=30).collect(),
            beta_cb: 0.999,
            fed: FedConfig::default(),
            local: TrainConfig::default(),
            main_hidden: vec![64, 32],
            fusion: FusionConfig::default(),
            transport: Transport::Inproc,
            out_dir: PathBuf::from("out"),
            run_id: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!(
                "train_frac must lie in (0, 1), got {}",
                self.train_frac
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(0.0..1.0).contains(&self.beta_cb) {
            return bad(format!("beta_cb must lie in [0, 1), got {}", self.beta_cb));
        }
        if self.main_hidden.is_empty() || self.main_hidden.contains(&0) {
            return bad("main_hidden needs at least one nonzero width".into());
        }
        if self.fed.hidden.is_empty() {
            return bad("fed.hidden needs a hidden layer to take embeddings from".into());
        }
        self.fed.validate()?;
        self.local.validate()?;
        self.fusion.validate()?;
        if self.fusion.coupling == FusionCoupling::Probe
            && self.main_hidden.last() != self.fed.hidden.last()
        {
            return bad(format!(
                "probe coupling needs the main net's last hidden width ({:?}) to match the global model's ({:?})",
                self.main_hidden.last(),
                self.fed.hidden.last()
            ));
        }
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate()?,
            DataSource::Csv { clients } => {
                if clients.len() < 2 {
                    return bad(format!(
                        "need at least 2 csv clients, got {}",
                        clients.len()
                    ));
                }
                let ids: BTreeSet<&str> = clients.iter().map(|c| c.id.as_str()).collect();
                if ids.len() != clients.len() {
                    return bad("csv client ids must be distinct".into());
                }
                for c in clients {
                    for p in [&c.data, &c.schema] {
                        if !p.is_file() {
                            return bad(format!(
                                "client {}: file {} does not exist",
                                c.id,
                                p.display()
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Stable name for the output directory.
    pub fn effective_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let json = serde_json::to_string(&ExperimentConfig {
                run_id: None,
                ..self.clone()
            })
            .unwrap_or_default();
            format!("run-{:016x}", derive_seed(0, &json))
        })
    }
}

/// Full datasets of every client, in a fixed order.
pub fn load_clients(source: &DataSource) -> Result<Vec<(String, Dataset)>> {
    match source {
        DataSource::Synthetic(spec) => {
            let (small, large) = generate_synthetic(spec)?;
            Ok(vec![("small".into(), small), ("large".into(), large)])
        }
        DataSource::Csv { clients } => clients
            .iter()
            .map(|c| {
                let ds = load_csv(&c.data, &c.schema).context(|| format!("client {}", c.id))?;
                Ok((c.id.clone(), ds))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientTraces {
    pub client_id: String,
    pub localized_loss: Vec<f64>,
    pub fusion: Vec<EpochTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedTraces {
    pub seed: u64,
    pub fed_rounds: Vec<RoundRecord>,
    pub centralized_loss: Vec<f64>,
    pub pooled_rows: usize,
    pub unknown_cells: usize,
    pub clients: Vec<ClientTraces>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub samples: Vec<MetricSample>,
    pub traces: SeedTraces,
}

fn sample(
    method: Method,
    client_id: &str,
    seed: u64,
    probs: &[f64],
    labels: &[u8],
) -> Result<MetricSample> {
    let ctx = || format!("seed {seed}, method {method}, client {client_id}");
    Ok(MetricSample {
        method,
        client_id: client_id.to_string(),
        seed,
        auroc: auroc(probs, labels).context(ctx)?,
        auprc: auprc(probs, labels).context(ctx)?,
    })
}

/// Feature schemas of every client, without loading CSV rows.
pub fn client_schemas(source: &DataSource) -> Result<Vec<(String, FeatureSchema)>> {
    match source {
        DataSource::Synthetic(_) => Ok(load_clients(source)?
            .into_iter()
            .map(|(id, ds)| (id, ds.schema))
            .collect()),
        DataSource::Csv { clients } => clients
            .iter()
            .map(|c| {
                let schema = SchemaFile::load(&c.schema)
                    .and_then(|f| f.schema())
                    .context(|| format!("client {}", c.id))?;
                Ok((c.id.clone(), schema))
            })
            .collect(),
    }
}

/// Grouping of the clients' full schemas. Splitting keeps schemas, so this
/// is the same for every seed.
pub fn grouping_for(schemas: &[(String, FeatureSchema)]) -> Result<FeatureGrouping> {
    let refs: Vec<(&str, &FeatureSchema)> =
        schemas.iter().map(|(id, s)| (id.as_str(), s)).collect();
    group_features(&refs)
}

/// Federated config of one seed with `n_clients` participants.
pub fn seed_fed_config(cfg: &ExperimentConfig, seed: u64, n_clients: usize) -> FedConfig {
    FedConfig {
        train: cfg.fed.train.with_seed(derive_seed(seed, "fed")),
        expected_clients: n_clients,
        ..cfg.fed.clone()
    }
}

/// One client's split and its shared-group view, standardised with the
/// client's own training statistics.
pub struct PreparedClient {
    pub id: String,
    pub train: Dataset,
    pub test: Dataset,
    pub fed: ClientData,
    pub global_test: EncodedMatrix,
}

pub fn prepare_client(
    cfg: &ExperimentConfig,
    id: &str,
    ds: &Dataset,
    grouping: &FeatureGrouping,
    seed: u64,
) -> Result<PreparedClient> {
    let ctx = || format!("seed {seed}, client {id}");
    let (train, test) = stratified_split(
        ds,
        cfg.train_frac,
        derive_seed(seed, &format!("split:{id}")),
    )
    .context(ctx)?;
    let train_view = train.conform_to(&grouping.global_schema).context(ctx)?;
    let test_view = test.conform_to(&grouping.global_schema).context(ctx)?;
    let enc = Encoder::fit(&train_view).context(ctx)?;
    let train_x = enc.encode(&train_view).context(ctx)?;
    let global_test = enc.encode(&test_view).context(ctx)?;
    let weights =
        class_balanced_weights(&ClassWeightConfig::from_labels(cfg.beta_cb, &train.labels))
            .context(ctx)?;
    Ok(PreparedClient {
        id: id.to_string(),
        fed: ClientData {
            client_id: id.to_string(),
            layout: enc.column_names().to_vec(),
            x: train_x.x,
            labels: train_x.labels,
            weights,
        },
        train,
        test,
        global_test,
    })
}

/// All four methods for one seed.
pub fn run_seed(
    cfg: &ExperimentConfig,
    clients: &[(String, Dataset)],
    seed: u64,
) -> Result<SeedOutcome> {
    let schemas: Vec<(String, FeatureSchema)> = clients
        .iter()
        .map(|(id, ds)| (id.clone(), ds.schema.clone()))
        .collect();
    let grouping = grouping_for(&schemas).context(|| format!("seed {seed}: grouping"))?;
    let prepared: Vec<PreparedClient> = clients
        .iter()
        .map(|(id, ds)| prepare_client(cfg, id, ds, &grouping, seed))
        .collect::<Result<_>>()?;
    let fed_clients: Vec<ClientData> = prepared.iter().map(|p| p.fed.clone()).collect();
    let fed_cfg = seed_fed_config(cfg, seed, fed_clients.len());
    let outcome = run_federated(fed_clients, &fed_cfg, cfg.transport)
        .context(|| format!("seed {seed}, method hfl: federated training"))?;

    let mut samples = Vec::new();
    let mut client_traces = Vec::new();
    for c in &prepared {
        let id = c.id.as_str();
        let probs = baseline_hfl_predict(&outcome.global, &c.global_test.x)
            .context(|| format!("seed {seed}, method hfl, client {id}"))?;
        samples.push(sample(Method::Hfl, id, seed, &probs, &c.test.labels)?);

        let ctx = |m: Method| format!("seed {seed}, method {m}, client {id}");
        let enc = Encoder::fit(&c.train).context(|| ctx(Method::Localized))?;
        let train_x = enc.encode(&c.train).context(|| ctx(Method::Localized))?;
        let test_x = enc.encode(&c.test).context(|| ctx(Method::Localized))?;
        let init = init_main(
            train_x.cols(),
            &cfg.main_hidden,
            derive_seed(seed, &format!("main-init:{id}")),
        )?;
        let local_cfg = cfg
            .local
            .with_seed(derive_seed(seed, &format!("local:{id}")));

        let (local_model, localized_loss) = baseline_localized(
            init.clone(),
            &train_x.x,
            &train_x.labels,
            &c.fed.weights,
            &local_cfg,
        )
        .context(|| ctx(Method::Localized))?;
        let probs =
            crate::nn::predict_proba(&local_model, &test_x.x).context(|| ctx(Method::Localized))?;
        samples.push(sample(Method::Localized, id, seed, &probs, &c.test.labels)?);

        let state = FusionState::new(
            outcome.global.clone(),
            init,
            &cfg.fusion,
            derive_seed(seed, &format!("prune-init:{id}")),
        )
        .context(|| ctx(Method::Lf2l))?;
        let (state, fusion) = fusion_train(
            state,
            &train_x.x,
            &c.fed.x,
            &train_x.labels,
            &c.fed.weights,
            &local_cfg,
            &cfg.fusion,
        )
        .context(|| ctx(Method::Lf2l))?;
        let probs = predict_lf2l(&state, &test_x.x).context(|| ctx(Method::Lf2l))?;
        samples.push(sample(Method::Lf2l, id, seed, &probs, &c.test.labels)?);

        client_traces.push(ClientTraces {
            client_id: id.to_string(),
            localized_loss,
            fusion,
        });
    }

    let pairs: Vec<(Dataset, Dataset)> = prepared
        .iter()
        .map(|c| (c.train.clone(), c.test.clone()))
        .collect();
    let central = baseline_centralized(
        &pairs,
        &cfg.main_hidden,
        &cfg.local.with_seed(derive_seed(seed, "central")),
        cfg.beta_cb,
        derive_seed(seed, "central-init"),
    )
    .context(|| format!("seed {seed}, method centralized"))?;
    for (c, probs) in prepared.iter().zip(&central.test_probs) {
        samples.push(sample(
            Method::Centralized,
            &c.id,
            seed,
            probs,
            &c.test.labels,
        )?);
    }

    Ok(SeedOutcome {
        samples,
        traces: SeedTraces {
            seed,
            fed_rounds: outcome.history,
            centralized_loss: central.loss_trace,
            pooled_rows: central.pooled_rows,
            unknown_cells: central.unknown_cells,
            clients: client_traces,
        },
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub seeds: Vec<SeedOutcome>,
}

/// Runs every seed (in parallel) and aggregates the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let clients = load_clients(&cfg.data)?;
    let seeds: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &clients, s))
        .collect::<Result<_>>()?;
    let samples: Vec<MetricSample> = seeds
        .iter()
        .flat_map(|s| s.samples.iter().cloned())
        .collect();
    Ok(ExperimentOutput {
        report: aggregate_report(&samples)?,
        seeds,
    })
}
