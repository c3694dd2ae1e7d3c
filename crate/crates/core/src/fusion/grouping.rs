use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::datasets::{Feature, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientFeatures {
    pub client_id: String,
    /// Everything the client holds, in its own schema order.
    pub local_features: Vec<String>,
    pub unique_features: Vec<String>,
}

/// Split of each client's features into the shared group used for
/// federated training and the client's own local group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureGrouping {
    /// Intersection of all schemas, sorted by name.
    pub global_features: Vec<String>,
    /// Schema of the shared group, with categorical vocabularies merged.
    pub global_schema: FeatureSchema,
    pub clients: Vec<ClientFeatures>,
}

impl FeatureGrouping {
    pub fn client(&self, client_id: &str) -> Option<&ClientFeatures> {
        self.clients.iter().find(|c| c.client_id == client_id)
    }
}

/// Merges same-named features across schemas, failing on a kind mismatch.
/// Categorical vocabularies are unioned and sorted.
fn merge_features<'a>(
    schemas: impl IntoIterator<Item = &'a FeatureSchema>,
) -> Result<BTreeMap<String, (Feature, usize)>> {
    let mut merged: BTreeMap<String, (Feature, usize)> = BTreeMap::new();
    for schema in schemas {
        for f in &schema.features {
            match merged.get_mut(&f.name) {
                None => {
                    merged.insert(f.name.clone(), (f.clone(), 1));
                }
                Some((seen, count)) => {
                    if seen.kind != f.kind {
                        return Err(Error::SchemaConflict {
                            feature: f.name.clone(),
                            detail: format!("declared {:?} and {:?}", seen.kind, f.kind),
                        });
                    }
                    seen.categories.extend(f.categories.iter().cloned());
                    *count += 1;
                }
            }
        }
    }
    for (f, _) in merged.values_mut() {
        if f.kind == FeatureKind::Categorical {
            let cats: BTreeSet<String> = f.categories.drain(..).collect();
            f.categories = cats.into_iter().collect();
        }
    }
    Ok(merged)
}

/// Shared (intersection) and per-client local/unique feature groups.
pub fn group_features(schemas: &[(&str, &FeatureSchema)]) -> Result<FeatureGrouping> {
    if schemas.len() < 2 {
        return Err(Error::Grouping(format!(
            "need at least 2 clients to group features, got {}",
            schemas.len()
        )));
    }
    let ids: BTreeSet<&str> = schemas.iter().map(|(id, _)| *id).collect();
    if ids.len() != schemas.len() {
        return Err(Error::Grouping("duplicate client id".into()));
    }
    let merged = merge_features(schemas.iter().map(|(_, s)| *s))?;
    let global: Vec<Feature> = merged
        .into_values()
        .filter(|(_, count)| *count == schemas.len())
        .map(|(f, _)| f)
        .collect();
    if global.is_empty() {
        return Err(Error::Grouping(
            "clients share no features; federated training is impossible".into(),
        ));
    }
    let global_features: Vec<String> = global.iter().map(|f| f.name.clone()).collect();
    let clients = schemas
        .iter()
        .map(|(id, s)| ClientFeatures {
            client_id: id.to_string(),
            local_features: s.features.iter().map(|f| f.name.clone()).collect(),
            unique_features: s
                .features
                .iter()
                .filter(|f| global_features.binary_search(&f.name).is_err())
                .map(|f| f.name.clone())
                .collect(),
        })
        .collect();
    Ok(FeatureGrouping {
        global_features,
        global_schema: FeatureSchema::new(global)?,
        clients,
    })
}

/// Union of all schemas, sorted by name, for pooled training.
pub fn union_schema<'a>(
    schemas: impl IntoIterator<Item = &'a FeatureSchema>,
) -> Result<FeatureSchema> {
    FeatureSchema::new(
        merge_features(schemas)?
            .into_values()
            .map(|(f, _)| f)
            .collect(),
    )
}
