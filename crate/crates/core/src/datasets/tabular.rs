//! Tabular CSV ingestion: z-scored numeric columns, one-hot categorical
//! columns, and a categorical label mapped to `0..N` in first-appearance
//! order. Encoders are fitted once and reused for later files, where an
//! unseen category is an error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureMeta, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
}

/// Feature columns to use, in output order. The label column is separate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<ColumnSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum ColumnCodec {
    Numeric { mean: f64, std: f64 },
    Categorical { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoder {
    schema: TabularSchema,
    label_column: String,
    codecs: Vec<ColumnCodec>,
    label_levels: Vec<String>,
}

struct RawTable {
    /// Selected feature cells per record, in schema order.
    cells: Vec<Vec<String>>,
    labels: Vec<String>,
    /// 1-based file line of each record, for error messages.
    lines: Vec<usize>,
}

fn read_table(path: &Path, schema: &TabularSchema, label_column: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("header has no column {name:?}"),
        })
    };
    let columns: Vec<usize> = schema.columns.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let label_idx = find(label_column)?;

    let mut table = RawTable {
        cells: Vec::new(),
        labels: Vec::new(),
        lines: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        table.cells.push(columns.iter().map(|&i| cell(i)).collect());
        table.labels.push(cell(label_idx));
        table.lines.push(line);
    }
    if table.labels.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    Ok(table)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn parse_numeric(table: &RawTable, col: usize, name: &str) -> Result<Vec<f64>> {
    table
        .cells
        .iter()
        .zip(&table.lines)
        .map(|(row, &line)| {
            row[col]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: line,
                    reason: format!("column {name:?}: {:?} is not a finite number", row[col]),
                })
        })
        .collect()
}

fn first_appearance(values: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut levels: Vec<String> = Vec::new();
    for v in values {
        if !levels.contains(&v) {
            levels.push(v);
        }
    }
    levels
}

impl TabularEncoder {
    fn fit(table: &RawTable, schema: &TabularSchema, label_column: &str) -> Result<Self> {
        let codecs = schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, spec)| match spec.kind {
                ColumnType::Numeric => {
                    let values = parse_numeric(table, c, &spec.name)?;
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    // A constant column is centred only.
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    Ok(ColumnCodec::Numeric { mean, std })
                }
                ColumnType::Categorical => Ok(ColumnCodec::Categorical {
                    levels: first_appearance(table.cells.iter().map(|r| r[c].clone())),
                }),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema: schema.clone(),
            label_column: label_column.to_string(),
            codecs,
            label_levels: first_appearance(table.labels.iter().cloned()),
        })
    }

    pub fn label_levels(&self) -> &[String] {
        &self.label_levels
    }

    pub fn schema(&self) -> &TabularSchema {
        &self.schema
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn width(&self) -> usize {
        self.codecs
            .iter()
            .map(|c| match c {
                ColumnCodec::Numeric { .. } => 1,
                ColumnCodec::Categorical { levels } => levels.len(),
            })
            .sum()
    }

    fn feature_meta(&self) -> Vec<FeatureMeta> {
        let mut meta = Vec::with_capacity(self.width());
        for (spec, codec) in self.schema.columns.iter().zip(&self.codecs) {
            match codec {
                ColumnCodec::Numeric { .. } => meta.push(FeatureMeta::Numeric {
                    name: spec.name.clone(),
                }),
                ColumnCodec::Categorical { levels } => meta.extend(levels.iter().map(|l| FeatureMeta::OneHot {
                    group: spec.name.clone(),
                    level: l.clone(),
                })),
            }
        }
        meta
    }

    fn encode(&self, table: &RawTable, id: String) -> Result<LabeledDataset> {
        let n = table.labels.len();
        let width = self.width();
        let mut data = vec![0.0; n * width];
        let mut offset = 0;
        for (c, (spec, codec)) in self.schema.columns.iter().zip(&self.codecs).enumerate() {
            match codec {
                ColumnCodec::Numeric { mean, std } => {
                    let values = parse_numeric(table, c, &spec.name)?;
                    for (r, v) in values.iter().enumerate() {
                        data[r * width + offset] = (v - mean) / std;
                    }
                    offset += 1;
                }
                ColumnCodec::Categorical { levels } => {
                    for (r, row) in table.cells.iter().enumerate() {
                        let level = levels.iter().position(|l| *l == row[c]).ok_or_else(|| {
                            Error::UnseenCategory {
                                column: spec.name.clone(),
                                value: row[c].clone(),
                            }
                        })?;
                        data[r * width + offset + level] = 1.0;
                    }
                    offset += levels.len();
                }
            }
        }
        let labels = table
            .labels
            .iter()
            .map(|l| {
                self.label_levels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::UnseenCategory {
                        column: self.label_column.clone(),
                        value: l.clone(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(
            Tensor::matrix(n, width, data),
            labels,
            self.label_levels.clone(),
            self.feature_meta(),
            id,
        )
    }
}

/// Reads a CSV, fits the encoder on it and returns the encoded dataset.
pub fn load_tabular_csv(
    path: &Path,
    schema: &TabularSchema,
    label_column: &str,
) -> Result<(LabeledDataset, TabularEncoder)> {
    let table = read_table(path, schema, label_column)?;
    let encoder = TabularEncoder::fit(&table, schema, label_column)?;
    let ds = encoder.encode(&table, path.display().to_string())?;
    Ok((ds, encoder))
}

/// Encodes another CSV with an already-fitted encoder.
pub fn transform_tabular_csv(path: &Path, encoder: &TabularEncoder) -> Result<LabeledDataset> {
    let table = read_table(path, &encoder.schema, &encoder.label_column)?;
    encoder.encode(&table, path.display().to_string())
}

const INSTRUMENTS: [&str; 4] = ["bond", "equity", "fx_forward", "rate_swap"];
const CURRENCIES: [&str; 4] = ["SEK", "EUR", "USD", "NOK"];
const COUNTERPARTIES: [&str; 3] = ["bank", "corporate", "fund"];

/// Synthetic trade blotter with two numeric and two categorical features
/// whose distributions depend on the instrument type (the label column
/// `instrument`). Schema: `margin, nominal_value, currency, counterparty`.
pub fn synthetic_trading_csv(per_class: usize, seed: u64) -> (String, TabularSchema) {
    let mut rng = RngState::new(seed);
    let margin_mean = [0.02, 0.15, 0.05, 0.08];
    let margin_sd = [0.005, 0.04, 0.01, 0.02];
    let nominal_log_mean = [13.0, 11.0, 14.5, 16.0];
    // Per-instrument probabilities over CURRENCIES / COUNTERPARTIES.
    let currency_p = [
        [0.70, 0.15, 0.10, 0.05],
        [0.40, 0.30, 0.25, 0.05],
        [0.10, 0.35, 0.45, 0.10],
        [0.55, 0.30, 0.10, 0.05],
    ];
    let counterparty_p = [[0.2, 0.3, 0.5], [0.1, 0.2, 0.7], [0.6, 0.3, 0.1], [0.7, 0.2, 0.1]];
    let pick = |rng: &mut RngState, p: &[f64]| {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut rows = Vec::with_capacity(per_class * INSTRUMENTS.len());
    for (k, instrument) in INSTRUMENTS.iter().enumerate() {
        for _ in 0..per_class {
            let margin = margin_mean[k] + margin_sd[k] * rng.normal();
            let nominal = (nominal_log_mean[k] + 0.5 * rng.normal()).exp();
            let currency = CURRENCIES[pick(&mut rng, &currency_p[k])];
            let counterparty = COUNTERPARTIES[pick(&mut rng, &counterparty_p[k])];
            rows.push(format!("{margin:.6},{nominal:.2},{currency},{counterparty},{instrument}"));
        }
    }
    rng.shuffle(&mut rows);
    let mut csv = String::from("margin,nominal_value,currency,counterparty,instrument\n");
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    let schema = TabularSchema {
        columns: vec![
            ColumnSpec { name: "margin".into(), kind: ColumnType::Numeric },
            ColumnSpec { name: "nominal_value".into(), kind: ColumnType::Numeric },
            ColumnSpec { name: "currency".into(), kind: ColumnType::Categorical },
            ColumnSpec { name: "counterparty".into(), kind: ColumnType::Categorical },
        ],
    };
    (csv, schema)
}
