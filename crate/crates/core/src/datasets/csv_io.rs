use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cell, Dataset, Feature, FeatureKind, FeatureSchema, UNKNOWN_TOKEN};
use crate::error::{Error, Result};

/// On-disk schema: `{"label": name, "features": [{"name", "kind", "categories"?}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub label: String,
    pub features: Vec<Feature>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let s: SchemaFile = serde_json::from_reader(File::open(path)?)?;
        s.schema()?;
        Ok(s)
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        FeatureSchema::new(self.features.clone())
    }
}

fn ingest_err(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

/// Reads a headered CSV whose columns the schema declares. Data rows are
/// numbered from 1; header problems report row 0.
pub fn read_csv<R: Read>(reader: R, schema_file: &SchemaFile) -> Result<Dataset> {
    let schema = schema_file.schema()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest_err(0, format!("missing column `{name}`")))
    };
    let label_col = find(&schema_file.label)?;
    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| find(&f.name))
        .collect::<Result<_>>()?;
    if let Some(extra) = header
        .iter()
        .find(|h| **h != schema_file.label && schema.index_of(h).is_none())
    {
        return Err(ingest_err(
            0,
            format!("column `{extra}` is not declared in the schema"),
        ));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| ingest_err(row_no, e.to_string()))?;
        if record.len() != header.len() {
            return Err(ingest_err(
                row_no,
                format!("{} fields, header has {}", record.len(), header.len()),
            ));
        }
        let label = match &record[label_col] {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(ingest_err(row_no, format!("label `{other}` is not 0 or 1"))),
        };
        let cells = schema
            .features
            .iter()
            .zip(&feature_cols)
            .map(|(f, &c)| {
                let raw = &record[c];
                if raw.is_empty() || raw == UNKNOWN_TOKEN {
                    return Ok(Cell::Unknown);
                }
                match f.kind {
                    FeatureKind::Numeric => raw
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Cell::Numeric)
                        .ok_or_else(|| {
                            ingest_err(
                                row_no,
                                format!("`{raw}` is not a number in column `{}`", f.name),
                            )
                        }),
                    FeatureKind::Categorical => Ok(Cell::Category(raw.to_string())),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(cells);
        labels.push(label);
    }
    Dataset::new(schema, rows, labels)
}

pub fn load_csv(path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema = SchemaFile::load(schema_path)
        .map_err(|e| e.context(format!("schema {}", schema_path.display())))?;
    read_csv(File::open(path)?, &schema).map_err(|e| e.context(format!("csv {}", path.display())))
}

/// Writes the dataset with the label as the last column.
pub fn write_csv<W: Write>(ds: &Dataset, label: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = ds.schema.names();
    header.push(label);
    w.write_record(&header)?;
    for (row, y) in ds.rows.iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Numeric(v) => format!("{v}"),
                Cell::Category(s) => s.clone(),
                Cell::Unknown => UNKNOWN_TOKEN.to_string(),
            })
            .collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schema<W: Write>(schema: &FeatureSchema, label: &str, out: W) -> Result<()> {
    let file = SchemaFile {
        label: label.to_string(),
        features: schema.features.clone(),
    };
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaFile {
        serde_json::from_str(
            r#"{"label": "spc", "features": [
                {"name": "age", "kind": "numeric"},
                {"name": "stage", "kind": "categorical", "categories": ["I", "II", "III"]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_file() {
        let csv = "age,stage,spc\n61.5,I,0\n70,III,1\n,UNKNOWN,0\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(
            ds.rows[0],
            vec![Cell::Numeric(61.5), Cell::Category("I".into())]
        );
        assert_eq!(ds.rows[2], vec![Cell::Unknown, Cell::Unknown]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
    }

    #[test]
    fn empty_categorical_is_unknown() {
        let ds = read_csv("stage,age,spc\n,3,1\n".as_bytes(), &schema()).unwrap();
        assert_eq!(ds.rows[0], vec![Cell::Numeric(3.0), Cell::Unknown]);
    }

    #[test]
    fn unknown_token_is_case_sensitive() {
        let ds = read_csv("age,stage,spc\n1,unknown,1\n".as_bytes(), &schema()).unwrap();
        assert_eq!(ds.rows[0][1], Cell::Category("unknown".into()));
    }

    #[test]
    fn bad_numeric_cites_row() {
        let err = read_csv("age,stage,spc\n1,I,0\nabc,II,1\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 2, .. }), "{err}");
    }

    #[test]
    fn bad_label_and_missing_column() {
        let err = read_csv("age,stage,spc\n1,I,2\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 1, .. }));
        let err = read_csv("age,spc\n1,0\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 0, .. }));
        let err = read_csv("age,stage,spc,extra\n1,I,0,x\n".as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 0, .. }));
    }

    #[test]
    fn write_then_read_back() {
        let ds = read_csv("age,stage,spc\n61.5,I,0\n,II,1\n".as_bytes(), &schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, "spc", &mut buf).unwrap();
        let again = read_csv(buf.as_slice(), &schema()).unwrap();
        assert_eq!(ds, again);
    }
}
