use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::welch::{welch_t_test, WelchResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Localized,
    Hfl,
    Centralized,
    Lf2l,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Localized,
        Method::Hfl,
        Method::Centralized,
        Method::Lf2l,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Localized => "localized",
            Method::Hfl => "hfl",
            Method::Centralized => "centralized",
            Method::Lf2l => "lf2l",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Report(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub method: Method,
    pub client_id: String,
    pub seed: u64,
    pub auroc: f64,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub client_id: String,
    pub n: usize,
    pub auroc_mean: f64,
    pub auroc_sd: f64,
    pub auprc_mean: f64,
    pub auprc_sd: f64,
    /// False when `n < 2`; the SDs are then reported as 0.
    pub sd_defined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Auprc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub client_id: String,
    pub metric: Metric,
    pub method: Method,
    pub baseline: Method,
    pub mean_method: f64,
    pub mean_baseline: f64,
    #[serde(flatten)]
    pub test: WelchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seeds: Vec<u64>,
    /// Kept in `samples.csv`; not repeated in the JSON report.
    #[serde(skip_serializing, default)]
    pub samples: Vec<MetricSample>,
    pub aggregates: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
}

impl MetricReport {
    pub fn aggregate(&self, method: Method, client_id: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.client_id == client_id)
    }

    pub fn comparison(
        &self,
        client_id: &str,
        metric: Metric,
        baseline: Method,
    ) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.client_id == client_id && c.metric == metric && c.baseline == baseline)
    }

    /// Per-seed values of one cell, in seed order.
    pub fn values(&self, method: Method, client_id: &str, metric: Metric) -> Vec<f64> {
        let mut v: Vec<(u64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.method == method && s.client_id == client_id)
            .map(|s| {
                (
                    s.seed,
                    match metric {
                        Metric::Auroc => s.auroc,
                        Metric::Auprc => s.auprc,
                    },
                )
            })
            .collect();
        v.sort_by_key(|&(seed, _)| seed);
        v.into_iter().map(|(_, x)| x).collect()
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates per-seed samples into mean and sample SD per (method, client),
/// plus Welch comparisons of LF2L against every other method present.
pub fn aggregate_report(samples: &[MetricSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Report("no samples".into()));
    }
    let mut cells: BTreeMap<(String, Method), BTreeMap<u64, &MetricSample>> = BTreeMap::new();
    for s in samples {
        if !(0.0..=1.0).contains(&s.auroc) || !(0.0..=1.0).contains(&s.auprc) {
            return Err(Error::Report(format!(
                "{} / {} / seed {}: metric outside [0, 1]",
                s.method, s.client_id, s.seed
            )));
        }
        let cell = cells.entry((s.client_id.clone(), s.method)).or_default();
        if cell.insert(s.seed, s).is_some() {
            return Err(Error::Report(format!(
                "duplicate sample for {} / {} / seed {}",
                s.method, s.client_id, s.seed
            )));
        }
    }
    let seeds: BTreeSet<u64> = samples.iter().map(|s| s.seed).collect();
    let clients: BTreeSet<&str> = samples.iter().map(|s| s.client_id.as_str()).collect();
    let methods: BTreeSet<Method> = samples.iter().map(|s| s.method).collect();
    let mut gaps = Vec::new();
    for &c in &clients {
        for &m in &methods {
            let present = cells.get(&(c.to_string(), m));
            for seed in &seeds {
                if present.is_none_or(|p| !p.contains_key(seed)) {
                    gaps.push(format!("{m}/{c}/seed {seed}"));
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Report(format!("missing cells: {}", gaps.join(", "))));
    }

    let values = |c: &str, m: Method, metric: Metric| -> Vec<f64> {
        cells[&(c.to_string(), m)]
            .values()
            .map(|s| match metric {
                Metric::Auroc => s.auroc,
                Metric::Auprc => s.auprc,
            })
            .collect()
    };

    let mut aggregates = Vec::new();
    for &c in &clients {
        for &m in &methods {
            let (auroc_mean, auroc_sd) = mean_sd(&values(c, m, Metric::Auroc));
            let (auprc_mean, auprc_sd) = mean_sd(&values(c, m, Metric::Auprc));
            aggregates.push(Aggregate {
                method: m,
                client_id: c.to_string(),
                n: seeds.len(),
                auroc_mean,
                auroc_sd,
                auprc_mean,
                auprc_sd,
                sd_defined: seeds.len() >= 2,
            });
        }
    }

    let mut comparisons = Vec::new();
    if seeds.len() >= 2 && methods.contains(&Method::Lf2l) {
        for &c in &clients {
            for &baseline in methods.iter().filter(|&&m| m != Method::Lf2l) {
                for metric in [Metric::Auroc, Metric::Auprc] {
                    let a = values(c, Method::Lf2l, metric);
                    let b = values(c, baseline, metric);
                    comparisons.push(Comparison {
                        client_id: c.to_string(),
                        metric,
                        method: Method::Lf2l,
                        baseline,
                        mean_method: mean_sd(&a).0,
                        mean_baseline: mean_sd(&b).0,
                        test: welch_t_test(&a, &b)?,
                    });
                }
            }
        }
    }

    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| (a.seed, &a.client_id, a.method).cmp(&(b.seed, &b.client_id, b.method)));
    Ok(MetricReport {
        seeds: seeds.into_iter().collect(),
        samples: sorted,
        aggregates,
        comparisons,
    })
}

const SAMPLE_HEADER: [&str; 5] = ["method", "client", "seed", "auroc", "auprc"];

pub fn write_samples_csv<W: Write>(samples: &[MetricSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SAMPLE_HEADER)?;
    for s in samples {
        w.write_record([
            s.method.as_str().to_string(),
            s.client_id.clone(),
            s.seed.to_string(),
            format!("{}", s.auroc),
            format!("{}", s.auprc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<MetricSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SAMPLE_HEADER {
        return Err(Error::Report(format!(
            "unexpected samples header {header:?}"
        )));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let bad = |what: &str| Error::Report(format!("samples row {}: bad {what}", i + 1));
            Ok(MetricSample {
                method: rec[0].parse()?,
                client_id: rec[1].to_string(),
                seed: rec[2].parse().map_err(|_| bad("seed"))?,
                auroc: rec[3].parse().map_err(|_| bad("auroc"))?,
                auprc: rec[4].parse().map_err(|_| bad("auprc"))?,
            })
        })
        .collect()
}
