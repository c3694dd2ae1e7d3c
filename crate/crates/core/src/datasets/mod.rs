//! Tabular data: schemas, raw cells, encoding, splitting, CSV ingestion and
//! the synthetic two-client benchmark.

mod csv_io;
mod encode;
mod split;
mod synthetic;

pub use csv_io::{load_csv, write_csv, write_schema, SchemaFile};
pub use encode::{ColumnGroup, EncodedMatrix, Encoder, NumericStats};
pub use split::{stratified_indices, stratified_split, train_count, SplitIndices};
pub use synthetic::{generate_synthetic, SyntheticSpec, CATEGORY_LEVELS};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token for a missing or absent cell, both in CSV files and in memory.
pub const UNKNOWN_TOKEN: &str = "UNKNOWN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Feature {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }
}

/// Ordered feature descriptors of one client's raw column space.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let s = Self { features };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            match f.kind {
                FeatureKind::Categorical if f.categories.is_empty() => {
                    return Err(Error::Config(format!(
                        "categorical feature `{}` has no categories",
                        f.name
                    )));
                }
                FeatureKind::Categorical => {
                    let uniq: HashSet<_> = f.categories.iter().collect();
                    if uniq.len() != f.categories.len() {
                        return Err(Error::Config(format!(
                            "feature `{}` repeats a category",
                            f.name
                        )));
                    }
                }
                FeatureKind::Numeric if !f.categories.is_empty() => {
                    return Err(Error::Config(format!(
                        "numeric feature `{}` lists categories",
                        f.name
                    )));
                }
                FeatureKind::Numeric => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Numeric(f64),
    Category(String),
    Unknown,
}

impl Cell {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Cell::Unknown)
    }
}

/// Raw rows plus binary labels over one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Vec<Cell>>, labels: Vec<u8>) -> Result<Self> {
        let ds = Self {
            schema,
            rows,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.rows.len() != self.labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                self.rows.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&y| y > 1) {
            return Err(Error::Shape(format!("label at row {i} is not 0 or 1")));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.schema.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} cells, schema has {} features",
                    row.len(),
                    self.schema.len()
                )));
            }
            for (cell, f) in row.iter().zip(&self.schema.features) {
                let ok = match (cell, f.kind) {
                    (Cell::Unknown, _) => true,
                    (Cell::Numeric(v), FeatureKind::Numeric) => v.is_finite(),
                    (Cell::Category(_), FeatureKind::Categorical) => true,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Shape(format!(
                        "row {i}: cell {cell:?} does not fit {:?} feature `{}`",
                        f.kind, f.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[negatives, positives]`
    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        [self.labels.len() - pos, pos]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Re-expresses the rows over `target`: features are matched by name,
    /// and features absent from this dataset become `Unknown`.
    pub fn conform_to(&self, target: &FeatureSchema) -> Result<Dataset> {
        let mapping: Vec<Option<usize>> = target
            .features
            .iter()
            .map(|f| match self.schema.index_of(&f.name) {
                Some(i) if self.schema.features[i].kind != f.kind => Err(Error::SchemaConflict {
                    feature: f.name.clone(),
                    detail: format!(
                        "{:?} here, {:?} in target",
                        self.schema.features[i].kind, f.kind
                    ),
                }),
                other => Ok(other),
            })
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|row| {
                mapping
                    .iter()
                    .map(|m| m.map_or(Cell::Unknown, |i| row[i].clone()))
                    .collect()
            })
            .collect();
        Ok(Dataset {
            schema: target.clone(),
            rows,
            labels: self.labels.clone(),
        })
    }

    pub fn unknown_count(&self) -> usize {
        self.rows
            .iter()
            .flatten()
            .filter(|c| c.is_unknown())
            .count()
    }
}
