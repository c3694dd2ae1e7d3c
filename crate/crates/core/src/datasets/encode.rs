use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Cell, Dataset, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Standardization statistics for one numeric feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub mean: f64,
    pub sd: f64,
}

/// Encoded columns belonging to one raw feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnGroup {
    pub feature: String,
    pub columns: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub x: Matrix,
    pub labels: Vec<u8>,
    pub column_map: Vec<ColumnGroup>,
}

impl EncodedMatrix {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.x.cols()
    }

    pub fn group(&self, feature: &str) -> Option<&ColumnGroup> {
        self.column_map.iter().find(|g| g.feature == feature)
    }
}

/// Encoding layout for one schema, with numeric statistics fitted on a
/// training split.
///
/// Numeric features take two columns, the standardized value and a
/// presence indicator; an unknown numeric cell encodes as `(0, 0)`.
/// Categorical features are one-hot in schema category order; an unknown
/// cell is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    schema: FeatureSchema,
    stats: Vec<Option<NumericStats>>,
    column_map: Vec<ColumnGroup>,
    column_names: Vec<String>,
}

impl Encoder {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let stats = train
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| match f.kind {
                FeatureKind::Categorical => None,
                FeatureKind::Numeric => {
                    let values: Vec<f64> = train
                        .rows
                        .iter()
                        .filter_map(|r| match r[j] {
                            Cell::Numeric(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    Some(numeric_stats(&values))
                }
            })
            .collect();
        Self::with_stats(train.schema.clone(), stats)
    }

    pub fn with_stats(schema: FeatureSchema, stats: Vec<Option<NumericStats>>) -> Result<Self> {
        schema.validate()?;
        if stats.len() != schema.len() {
            return Err(Error::Shape(
                "one statistics slot per feature required".into(),
            ));
        }
        let mut column_map = Vec::with_capacity(schema.len());
        let mut column_names = Vec::new();
        for (f, s) in schema.features.iter().zip(&stats) {
            let start = column_names.len();
            match f.kind {
                FeatureKind::Numeric => {
                    if s.is_none() {
                        return Err(Error::Shape(format!(
                            "numeric feature `{}` lacks statistics",
                            f.name
                        )));
                    }
                    column_names.push(f.name.clone());
                    column_names.push(format!("{}#present", f.name));
                }
                FeatureKind::Categorical => {
                    column_names.extend(f.categories.iter().map(|c| format!("{}={c}", f.name)));
                }
            }
            column_map.push(ColumnGroup {
                feature: f.name.clone(),
                columns: start..column_names.len(),
            });
        }
        Ok(Self {
            schema,
            stats,
            column_map,
            column_names,
        })
    }

    /// Encoded column names for `schema`, without fitting any statistics.
    pub fn layout(schema: &FeatureSchema) -> Result<Vec<String>> {
        let unit = schema
            .features
            .iter()
            .map(|f| {
                (f.kind == FeatureKind::Numeric).then_some(NumericStats { mean: 0.0, sd: 1.0 })
            })
            .collect();
        Ok(Self::with_stats(schema.clone(), unit)?.column_names)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn stats(&self) -> &[Option<NumericStats>] {
        &self.stats
    }

    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    /// Encoded column names in layout order; two encoders with equal names
    /// produce interchangeable matrices.
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn encode(&self, ds: &Dataset) -> Result<EncodedMatrix> {
        if ds.schema != self.schema {
            return Err(Error::Shape(
                "dataset schema differs from the encoder's".into(),
            ));
        }
        let width = self.width();
        let mut data = Vec::with_capacity(ds.len() * width);
        for row in &ds.rows {
            let start = data.len();
            data.resize(start + width, 0.0);
            let out = &mut data[start..];
            for ((cell, f), (group, stats)) in row
                .iter()
                .zip(&self.schema.features)
                .zip(self.column_map.iter().zip(&self.stats))
            {
                let c = group.columns.start;
                match (cell, f.kind) {
                    (Cell::Unknown, _) => {}
                    (Cell::Numeric(v), FeatureKind::Numeric) => {
                        let s = stats.expect("numeric stats present");
                        out[c] = (v - s.mean) / s.sd;
                        out[c + 1] = 1.0;
                    }
                    (Cell::Category(v), FeatureKind::Categorical) => {
                        let k = f
                            .categories
                            .iter()
                            .position(|cat| cat == v)
                            .ok_or_else(|| Error::Encoding {
                                feature: f.name.clone(),
                                value: v.clone(),
                            })?;
                        out[c + k] = 1.0;
                    }
                    _ => {
                        return Err(Error::Shape(format!(
                            "cell {cell:?} does not fit feature `{}`",
                            f.name
                        )))
                    }
                }
            }
        }
        Ok(EncodedMatrix {
            x: Matrix::new(ds.len(), width, data)?,
            labels: ds.labels.clone(),
            column_map: self.column_map.clone(),
        })
    }

    /// Inverse of [`Encoder::encode`], up to floating-point rounding of
    /// numeric values.
    pub fn decode(&self, enc: &EncodedMatrix) -> Result<Dataset> {
        if enc.cols() != self.width() {
            return Err(Error::Shape(
                "encoded width differs from the encoder's".into(),
            ));
        }
        let rows = enc
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| {
                self.schema
                    .features
                    .iter()
                    .zip(self.column_map.iter().zip(&self.stats))
                    .map(|(f, (g, stats))| {
                        let cols = &r[g.columns.clone()];
                        match f.kind {
                            FeatureKind::Numeric => {
                                if cols[1] == 0.0 {
                                    Ok(Cell::Unknown)
                                } else {
                                    let s = stats.expect("numeric stats present");
                                    Ok(Cell::Numeric(cols[0] * s.sd + s.mean))
                                }
                            }
                            FeatureKind::Categorical => {
                                let hot: Vec<usize> =
                                    (0..cols.len()).filter(|&k| cols[k] != 0.0).collect();
                                match hot.as_slice() {
                                    [] => Ok(Cell::Unknown),
                                    [k] => Ok(Cell::Category(f.categories[*k].clone())),
                                    _ => Err(Error::Shape(format!(
                                        "row {i}: feature `{}` has {} hot columns",
                                        f.name,
                                        hot.len()
                                    ))),
                                }
                            }
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.schema.clone(), rows, enc.labels.clone())
    }
}

/// Mean and population SD; an SD of zero (or no values) falls back to 1.
fn numeric_stats(values: &[f64]) -> NumericStats {
    if values.is_empty() {
        return NumericStats { mean: 0.0, sd: 1.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    NumericStats {
        mean,
        sd: if sd > 1e-12 { sd } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Feature;
    use proptest::prelude::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature::categorical("grade", ["A", "B"]),
            Feature::numeric("size"),
        ])
        .unwrap()
    }

    fn ds(rows: Vec<Vec<Cell>>) -> Dataset {
        let n = rows.len();
        Dataset::new(schema(), rows, vec![0; n]).unwrap()
    }

    fn cat(s: &str) -> Cell {
        Cell::Category(s.into())
    }

    #[test]
    fn one_hot_and_unknown_columns() {
        let enc = Encoder::with_stats(
            schema(),
            vec![
                None,
                Some(NumericStats {
                    mean: 10.0,
                    sd: 2.0,
                }),
            ],
        )
        .unwrap();
        let m = enc
            .encode(&ds(vec![
                vec![cat("B"), Cell::Numeric(14.0)],
                vec![Cell::Unknown, Cell::Unknown],
            ]))
            .unwrap();
        assert_eq!(m.x.row(0), &[0.0, 1.0, 2.0, 1.0]);
        assert_eq!(m.x.row(1), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.group("size").unwrap().columns, 2..4);
        assert_eq!(
            enc.column_names(),
            &["grade=A", "grade=B", "size", "size#present"]
        );
    }

    #[test]
    fn out_of_vocabulary_names_feature_and_value() {
        let train = ds(vec![vec![cat("A"), Cell::Numeric(1.0)]]);
        let enc = Encoder::fit(&train).unwrap();
        let err = enc
            .encode(&ds(vec![vec![cat("Z"), Cell::Numeric(1.0)]]))
            .unwrap_err();
        match err {
            Error::Encoding { feature, value } => {
                assert_eq!(feature, "grade");
                assert_eq!(value, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let train = ds(vec![
            vec![cat("A"), Cell::Numeric(8.0)],
            vec![cat("A"), Cell::Numeric(12.0)],
        ]);
        let enc = Encoder::fit(&train).unwrap();
        assert_eq!(
            enc.stats()[1],
            Some(NumericStats {
                mean: 10.0,
                sd: 2.0
            })
        );
        let m = enc
            .encode(&ds(vec![vec![cat("B"), Cell::Numeric(14.0)]]))
            .unwrap();
        assert_eq!(m.x.row(0)[2], 2.0);
    }

    fn arb_cell_pair() -> impl Strategy<Value = (Cell, Cell)> {
        let c = prop_oneof![Just(cat("A")), Just(cat("B")), Just(Cell::Unknown)];
        let n = prop_oneof![(-1e3..1e3f64).prop_map(Cell::Numeric), Just(Cell::Unknown)];
        (c, n)
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(cells in prop::collection::vec(arb_cell_pair(), 1..40)) {
            let rows: Vec<Vec<Cell>> = cells.into_iter().map(|(a, b)| vec![a, b]).collect();
            let d = ds(rows);
            let enc = Encoder::fit(&d).unwrap();
            let m = enc.encode(&d).unwrap();
            for r in m.x.iter_rows() {
                let s: f64 = r[0..2].iter().sum();
                prop_assert!(s == 0.0 || s == 1.0);
            }
            let back = enc.decode(&m).unwrap();
            for (a, b) in d.rows.iter().flatten().zip(back.rows.iter().flatten()) {
                match (a, b) {
                    (Cell::Numeric(x), Cell::Numeric(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                    _ => prop_assert_eq!(a, b),
                }
            }
        }
    }
}
