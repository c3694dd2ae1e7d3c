use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cell, Dataset, Feature, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Category labels for binned categorical views, lowest bin first.
pub const CATEGORY_LEVELS: [&str; 3] = ["low", "mid", "high"];

// standard-normal tertiles
const BIN_EDGES: [f64; 2] = [-0.430_727_299_295_457_5, 0.430_727_299_295_457_5];

const PREVALENCE_TOL: f64 = 0.01;
const BISECTION_ITERS: usize = 100;

/// Two-client latent-factor benchmark.
///
/// Each row draws `z ~ N(0, I)` and a label `y ~ Bernoulli(sigmoid(w.z + b))`
/// where `w` puts equal weight `signal_scale / sqrt(latent_dim)` on every
/// latent coordinate and `b` is tuned per client to the target prevalence.
/// Every feature is a noisy view of one latent coordinate. Common features
/// view coordinates `0..n_common`; unique features view the coordinates after
/// that, with the small client's unique views observed at
/// `unique_noise_factor * noise_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub n_small: usize,
    pub n_large: usize,
    pub prevalence_target: f64,
    pub n_common: usize,
    pub n_unique_small: usize,
    pub n_unique_large: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub signal_scale: f64,
    pub unique_noise_factor: f64,
    /// Leading common features emitted as three-level categoricals.
    pub n_categorical: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            latent_dim: 12,
            n_small: 1_000,
            n_large: 8_000,
            prevalence_target: 0.08,
            n_common: 6,
            n_unique_small: 6,
            n_unique_large: 2,
            noise_sd: 1.0,
            seed: 20_240_601,
            signal_scale: 2.0,
            unique_noise_factor: 0.5,
            n_categorical: 2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.n_small == 0 || self.n_large == 0 {
            return bad("client sizes must be positive".into());
        }
        if !(self.prevalence_target > 0.0 && self.prevalence_target < 0.5) {
            return bad(format!(
                "prevalence_target must lie in (0, 0.5), got {}",
                self.prevalence_target
            ));
        }
        if self.n_common == 0 {
            return bad("n_common must be at least 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and nonnegative".into());
        }
        if !(self.unique_noise_factor >= 0.0 && self.unique_noise_factor.is_finite()) {
            return bad("unique_noise_factor must be finite and nonnegative".into());
        }
        if !self.signal_scale.is_finite() {
            return bad("signal_scale must be finite".into());
        }
        if self.n_categorical > self.n_common {
            return bad("n_categorical cannot exceed n_common".into());
        }
        Ok(())
    }

    pub fn common_names(&self) -> Vec<String> {
        (0..self.n_common)
            .map(|j| format!("common_{j:02}"))
            .collect()
    }
}

struct ViewSpec {
    feature: Feature,
    latent: usize,
    noise_sd: f64,
}

fn client_views(
    spec: &SyntheticSpec,
    prefix: &str,
    n_unique: usize,
    unique_noise: f64,
) -> Vec<ViewSpec> {
    let l = spec.latent_dim;
    let common = spec
        .common_names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| ViewSpec {
            feature: if j < spec.n_categorical {
                Feature::categorical(name, CATEGORY_LEVELS)
            } else {
                Feature::numeric(name)
            },
            latent: j % l,
            noise_sd: spec.noise_sd,
        });
    let unique = (0..n_unique).map(|j| ViewSpec {
        feature: Feature::numeric(format!("{prefix}_{j:02}")),
        latent: (spec.n_common + j) % l,
        noise_sd: unique_noise,
    });
    common.chain(unique).collect()
}

fn bin(v: f64) -> &'static str {
    if v < BIN_EDGES[0] {
        CATEGORY_LEVELS[0]
    } else if v < BIN_EDGES[1] {
        CATEGORY_LEVELS[1]
    } else {
        CATEGORY_LEVELS[2]
    }
}

/// Intercept whose labels hit `target` within tolerance. Labels are
/// `u < sigmoid(score + b)` with fixed uniforms, so prevalence is monotone in
/// `b`.
fn tune_intercept(scores: &[f64], uniforms: &[f64], target: f64) -> Result<f64> {
    let n = scores.len() as f64;
    let prevalence = |b: f64| {
        scores
            .iter()
            .zip(uniforms)
            .filter(|(&s, &u)| u < sigmoid(s + b))
            .count() as f64
            / n
    };
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let p = prevalence(mid);
        if (p - target).abs() <= PREVALENCE_TOL {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Generation(format!(
        "could not reach prevalence {target} +/- {PREVALENCE_TOL} over {} rows",
        scores.len()
    )))
}

fn generate_client(
    rng: &mut ChaCha8Rng,
    n: usize,
    weights: &[f64],
    views: &[ViewSpec],
    target: f64,
) -> Result<Dataset> {
    let l = weights.len();
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let scores: Vec<f64> = z
        .iter()
        .map(|zi| zi.iter().zip(weights).map(|(a, b)| a * b).sum())
        .collect();
    let b = tune_intercept(&scores, &uniforms, target)?;
    let labels = scores
        .iter()
        .zip(&uniforms)
        .map(|(&s, &u)| u8::from(u < sigmoid(s + b)))
        .collect();
    let rows = z
        .iter()
        .map(|zi| {
            views
                .iter()
                .map(|v| {
                    let eps: f64 = rng.sample(StandardNormal);
                    let value = zi[v.latent] + v.noise_sd * eps;
                    match v.feature.kind {
                        super::FeatureKind::Numeric => Cell::Numeric(value),
                        super::FeatureKind::Categorical => Cell::Category(bin(value).to_string()),
                    }
                })
                .collect()
        })
        .collect();
    let schema = FeatureSchema::new(views.iter().map(|v| v.feature.clone()).collect())?;
    Dataset::new(schema, rows, labels)
}

/// Returns `(small_client, large_client)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let magnitude = spec.signal_scale / (spec.latent_dim as f64).sqrt();
    let weights: Vec<f64> = (0..spec.latent_dim)
        .map(|_| {
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let small_views = client_views(
        spec,
        "small",
        spec.n_unique_small,
        spec.noise_sd * spec.unique_noise_factor,
    );
    let large_views = client_views(spec, "large", spec.n_unique_large, spec.noise_sd);
    let small = generate_client(
        &mut rng,
        spec.n_small,
        &weights,
        &small_views,
        spec.prevalence_target,
    )
    .map_err(|e| e.context("small client"))?;
    let large = generate_client(
        &mut rng,
        spec.n_large,
        &weights,
        &large_views,
        spec.prevalence_target,
    )
    .map_err(|e| e.context("large client"))?;
    Ok((small, large))
}
