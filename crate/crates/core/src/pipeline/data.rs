use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FeatureSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column description read from the schema JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default)]
    pub label_column: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn all_continuous(names: &[String]) -> Self {
        Self {
            id_column: None,
            label_column: None,
            columns: names
                .iter()
                .map(|n| ColumnSpec {
                    name: n.clone(),
                    kind: ColumnKind::Continuous,
                })
                .collect(),
        }
    }
}

/// Raw cells of the schema columns, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub row_ids: Vec<String>,
    pub cells: Vec<Vec<String>>,
    pub labels: Option<Vec<usize>>,
}

pub fn read_table(path: &Path, schema: &Schema) -> Result<RawTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: HashMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("column {name:?} not found in {}", path.display())))
    };
    let cols = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let id_col = schema.id_column.as_deref().map(find).transpose()?;
    let label_col = schema.label_column.as_deref().map(find).transpose()?;
    let mut table = RawTable {
        row_ids: Vec::new(),
        cells: Vec::new(),
        labels: label_col.map(|_| Vec::new()),
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        table
            .row_ids
            .push(id_col.map_or_else(|| r.to_string(), get));
        table.cells.push(cols.iter().map(|&i| get(i)).collect());
        if let (Some(c), Some(labels)) = (label_col, table.labels.as_mut()) {
            let v = get(c);
            labels.push(
                v.parse().map_err(|_| {
                    Error::Data(format!("row {r}: label {v:?} is not a class index"))
                })?,
            );
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Continuous {
        name: String,
        mean: f64,
        std: f64,
    },
    Categorical {
        name: String,
        categories: Vec<String>,
    },
}

/// Standardisation and one-hot encoding with statistics from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<ColumnTransform>,
}

fn parse_num(v: &str, name: &str, row: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| {
            Error::Data(format!(
                "row {row}: column {name:?} value {v:?} is not numeric"
            ))
        })
}

impl Preprocessor {
    pub fn fit(table: &RawTable, schema: &Schema, rows: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(schema.columns.len());
        for (c, spec) in schema.columns.iter().enumerate() {
            match spec.kind {
                ColumnKind::Continuous => {
                    let v = rows
                        .iter()
                        .map(|&r| parse_num(&table.cells[r][c], &spec.name, r))
                        .collect::<Result<Vec<_>>>()?;
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    columns.push(ColumnTransform::Continuous {
                        name: spec.name.clone(),
                        mean,
                        std,
                    });
                }
                ColumnKind::Categorical => {
                    let mut cats: Vec<String> =
                        rows.iter().map(|&r| table.cells[r][c].clone()).collect();
                    cats.sort();
                    cats.dedup();
                    columns.push(ColumnTransform::Categorical {
                        name: spec.name.clone(),
                        categories: cats,
                    });
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnTransform::Continuous { .. } => 1,
                ColumnTransform::Categorical { categories, .. } => categories.len(),
            })
            .sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            match c {
                ColumnTransform::Continuous { name, .. } => out.push(name.clone()),
                ColumnTransform::Categorical { name, categories } => {
                    out.extend(categories.iter().map(|v| format!("{name}={v}")))
                }
            }
        }
        out
    }

    pub fn feature_schema(&self) -> Result<FeatureSchema> {
        let mut groups = Vec::new();
        let mut at = 0;
        for c in &self.columns {
            match c {
                ColumnTransform::Continuous { .. } => at += 1,
                ColumnTransform::Categorical { categories, .. } => {
                    groups.push((at..at + categories.len()).collect());
                    at += categories.len();
                }
            }
        }
        FeatureSchema::with_groups(at, groups)
    }

    /// Encodes one row of raw cells. Unseen categories become an all-zero
    /// group and are logged.
    pub fn transform_row(&self, cells: &[String], row: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        for (c, t) in self.columns.iter().enumerate() {
            match t {
                ColumnTransform::Continuous { name, mean, std } => {
                    out.push((parse_num(&cells[c], name, row)? - mean) / std);
                }
                ColumnTransform::Categorical { name, categories } => {
                    let hit = categories.iter().position(|v| *v == cells[c]);
                    if hit.is_none() {
                        log::warn!(
                            "row {row}: unseen category {:?} in column {name:?}",
                            cells[c]
                        );
                    }
                    out.extend((0..categories.len()).map(|i| f64::from(u8::from(hit == Some(i)))));
                }
            }
        }
        Ok(out)
    }

    pub fn transform(&self, table: &RawTable) -> Result<Vec<Vec<f64>>> {
        table
            .cells
            .iter()
            .enumerate()
            .map(|(r, cells)| self.transform_row(cells, r))
            .collect()
    }
}

/// Seeded split into sorted `(train, test)` index lists with
/// `round(test_fraction * n)` test rows.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub row_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub schema: FeatureSchema,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub preprocessor: Option<Preprocessor>,
}

impl Dataset {
    pub fn rows(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.x[i].clone()).collect()
    }

    /// Rows already in model space, with no preprocessing.
    pub fn from_rows(x: Vec<Vec<f64>>, split_seed: u64) -> Self {
        let n = x.len();
        let m = x.first().map_or(0, Vec::len);
        let (train, test) = split_indices(n, TEST_FRACTION, split_seed);
        Self {
            row_ids: (0..n).map(|i| i.to_string()).collect(),
            x,
            schema: FeatureSchema::all_continuous(m),
            feature_names: (0..m).map(|j| format!("x{j}")).collect(),
            labels: None,
            train,
            test,
            preprocessor: None,
        }
    }
}

/// Reads a CSV, splits it 80/20 and fits preprocessing on the training
/// rows, or applies `fitted` when given.
pub fn load_dataset(
    csv_path: &Path,
    schema_path: &Path,
    split_seed: u64,
    fitted: Option<&Preprocessor>,
) -> Result<Dataset> {
    let schema = Schema::load(schema_path)?;
    let table = read_table(csv_path, &schema)?;
    let (train, test) = split_indices(table.row_ids.len(), TEST_FRACTION, split_seed);
    let pre = match fitted {
        Some(p) => p.clone(),
        None => Preprocessor::fit(&table, &schema, &train)?,
    };
    let x = pre.transform(&table)?;
    Ok(Dataset {
        row_ids: table.row_ids,
        x,
        schema: pre.feature_schema()?,
        feature_names: pre.feature_names(),
        labels: table.labels,
        train,
        test,
        preprocessor: Some(pre),
    })
}
