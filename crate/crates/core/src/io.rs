//! File formats: dataset CSV with a schema sidecar, parameter JSON, and
//! imputation stack directories with a digest manifest.
//!
//! Dataset CSV: one column per item holding codes `1..=c_j` (empty field =
//! missing) and one `x_`-prefixed column per covariate. An `intercept`
//! covariate is prepended unless some covariate column is identically 1.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MvopError, Result};
use crate::model::{IdentificationMode, Level, MvopParams, OrdinalDataset};
use crate::nested::{NestedStack, StackEntry};

pub const COVARIATE_PREFIX: &str = "x_";
pub const INTERCEPT: &str = "intercept";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSchema {
    pub name: String,
    pub levels: Level,
}

/// Sidecar listing the number of levels of every item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub items: Vec<ItemSchema>,
}

impl Schema {
    pub fn of(data: &OrdinalDataset) -> Self {
        Schema {
            items: data
                .item_names()
                .iter()
                .zip(data.levels())
                .map(|(n, &c)| ItemSchema {
                    name: n.clone(),
                    levels: c,
                })
                .collect(),
        }
    }
}

/// Conventional sidecar path: `data.csv` -> `data.schema.json`.
pub fn schema_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(schema)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parse a dataset. Without a schema the number of levels of each item is
/// its largest observed code.
pub fn parse_dataset<R: Read>(input: R, schema: Option<&Schema>) -> Result<OrdinalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut item_cols = Vec::new();
    let mut cov_cols = Vec::new();
    for (c, h) in header.iter().enumerate() {
        match h.strip_prefix(COVARIATE_PREFIX) {
            Some(name) if !name.is_empty() => cov_cols.push((c, name.to_string())),
            _ => item_cols.push((c, h.clone())),
        }
    }
    if item_cols.is_empty() {
        return Err(MvopError::validation("dataset has no item columns"));
    }
    let mut responses = Vec::new();
    let mut covs: Vec<f64> = Vec::new();
    let mut n = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        for &(c, ref name) in &item_cols {
            let field = rec.get(c).unwrap_or("");
            if field.is_empty() {
                responses.push(None);
            } else {
                let v: Level = field.parse().map_err(|_| {
                    MvopError::validation(format!(
                        "row {row}, item {name}: '{field}' is not a positive integer code"
                    ))
                })?;
                responses.push(Some(v));
            }
        }
        for &(c, ref name) in &cov_cols {
            let field = rec.get(c).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                MvopError::validation(format!("row {row}, covariate {name}: '{field}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(MvopError::validation(format!(
                    "row {row}, covariate {name}: non-finite value"
                )));
            }
            covs.push(v);
        }
        n += 1;
    }
    let names: Vec<String> = item_cols.iter().map(|(_, n)| n.clone()).collect();
    let levels: Vec<Level> = match schema {
        Some(s) => names
            .iter()
            .map(|name| {
                s.items
                    .iter()
                    .find(|it| &it.name == name)
                    .map(|it| it.levels)
                    .ok_or_else(|| MvopError::validation(format!("item {name} is not listed in the schema")))
            })
            .collect::<Result<_>>()?,
        None => {
            warn!("no schema given; inferring item levels from the largest observed code");
            (0..names.len())
                .map(|j| {
                    responses
                        .iter()
                        .skip(j)
                        .step_by(names.len())
                        .flatten()
                        .copied()
                        .max()
                        .unwrap_or(0)
                })
                .collect()
        }
    };
    let mut cov_names: Vec<String> = cov_cols.iter().map(|(_, n)| n.clone()).collect();
    let mut x = DMatrix::from_row_slice(n, cov_names.len(), &covs);
    let has_intercept = n > 0 && (0..x.ncols()).any(|c| x.column(c).iter().all(|&v| v == 1.0));
    if !has_intercept {
        x = x.insert_column(0, 1.0);
        cov_names.insert(0, INTERCEPT.into());
    }
    OrdinalDataset::new(names, levels, responses, cov_names, x)
}

/// Read `path`, using `schema` or else the conventional sidecar if present.
pub fn read_dataset(path: &Path, schema: Option<&Path>) -> Result<OrdinalDataset> {
    let sidecar = schema.map(Path::to_path_buf).unwrap_or_else(|| schema_path_for(path));
    let schema = if sidecar.exists() {
        Some(read_schema(&sidecar)?)
    } else {
        None
    };
    parse_dataset(fs::File::open(path)?, schema.as_ref())
}

/// Serialise with every covariate (including the intercept) as an `x_`
/// column, so that reading the output back reproduces the dataset.
pub fn format_dataset<W: Write>(data: &OrdinalDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = data.item_names().to_vec();
    header.extend(data.covariate_names().iter().map(|n| format!("{COVARIATE_PREFIX}{n}")));
    w.write_record(&header)?;
    let x = data.covariates();
    for i in 0..data.n_units() {
        let mut rec: Vec<String> = data
            .row(i)
            .iter()
            .map(|c| c.map_or(String::new(), |v| v.to_string()))
            .collect();
        rec.extend((0..x.ncols()).map(|c| x[(i, c)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the dataset CSV and its schema sidecar.
pub fn write_dataset(data: &OrdinalDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    format_dataset(data, &mut buf)?;
    fs::write(path, buf)?;
    write_schema(&Schema::of(data), &schema_path_for(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsFile {
    mode: IdentificationMode,
    items: Vec<String>,
    covariates: Vec<String>,
    gamma: Vec<Vec<f64>>,
    /// Row-major, one row per item.
    beta: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(MvopError::validation(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

pub fn params_to_json(params: &MvopParams, items: &[String], covariates: &[String]) -> Result<String> {
    let file = ParamsFile {
        mode: params.mode(),
        items: items.to_vec(),
        covariates: covariates.to_vec(),
        gamma: params.gamma().to_vec(),
        beta: rows(params.beta()),
        sigma: rows(params.sigma()),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// Parameters with the item and covariate names they were fitted to.
pub fn params_from_json(text: &str) -> Result<(MvopParams, Vec<String>, Vec<String>)> {
    let f: ParamsFile = serde_json::from_str(text)?;
    let params = MvopParams::new(f.mode, f.gamma, matrix(&f.beta, "beta")?, matrix(&f.sigma, "sigma")?)?;
    Ok((params, f.items, f.covariates))
}

/// Stack manifest stored as `manifest.json` in the stack directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub root_seed: u64,
    pub k: usize,
    pub l: usize,
    pub engine: String,
    /// SHA-256 of the canonical JSON configuration.
    pub config_hash: String,
    pub entries: Vec<StackFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFile {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub file: String,
    pub sha256: String,
}

pub const MANIFEST: &str = "manifest.json";

pub fn stack_file_name(k: usize, l: usize) -> String {
    format!("k{k:03}_l{l:03}.csv")
}

/// Write each completed dataset and the manifest; returns the manifest.
pub fn write_stack(
    dir: &Path,
    stack: &NestedStack<OrdinalDataset>,
    root_seed: u64,
    engine: &str,
    config_hash: &str,
) -> Result<StackManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(stack.len());
    for e in &stack.entries {
        let file = stack_file_name(e.k, e.l);
        let mut buf = Vec::new();
        format_dataset(&e.data, &mut buf)?;
        fs::write(dir.join(&file), &buf)?;
        entries.push(StackFile {
            k: e.k,
            l: e.l,
            seed: e.seed,
            file,
            sha256: sha256_hex(&buf),
        });
    }
    if let Some(first) = stack.entries.first() {
        write_schema(&Schema::of(&first.data), &dir.join("schema.json"))?;
    }
    let manifest = StackManifest {
        root_seed,
        k: stack.k,
        l: stack.l,
        engine: engine.into(),
        config_hash: config_hash.into(),
        entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<StackManifest> {
    Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?)
}

/// Read a stack, verifying its shape and every file digest.
pub fn read_stack(dir: &Path) -> Result<(NestedStack<OrdinalDataset>, StackManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.entries.len() != manifest.k * manifest.l {
        return Err(MvopError::validation(format!(
            "manifest lists {} datasets for K = {}, L = {}",
            manifest.entries.len(),
            manifest.k,
            manifest.l
        )));
    }
    let schema_file = dir.join("schema.json");
    let schema = if schema_file.exists() {
        Some(read_schema(&schema_file)?)
    } else {
        None
    };
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for (idx, f) in manifest.entries.iter().enumerate() {
        if (f.k, f.l) != (idx / manifest.l, idx % manifest.l) {
            return Err(MvopError::validation(format!(
                "manifest entry {idx} is out of (k, l) order"
            )));
        }
        let bytes = fs::read(dir.join(&f.file))?;
        let digest = sha256_hex(&bytes);
        if digest != f.sha256 {
            return Err(MvopError::validation(format!(
                "digest mismatch for {}: manifest {}, file {digest}",
                f.file, f.sha256
            )));
        }
        let data = parse_dataset(bytes.as_slice(), schema.as_ref())?;
        entries.push(StackEntry {
            k: f.k,
            l: f.l,
            seed: f.seed,
            data,
        });
    }
    Ok((
        NestedStack {
            k: manifest.k,
            l: manifest.l,
            entries,
        },
        manifest,
    ))
}
