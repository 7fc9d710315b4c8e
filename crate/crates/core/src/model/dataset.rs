use nalgebra::DMatrix;

use crate::error::{MvopError, Result};

/// Ordinal response code, `1..=c_j`.
pub type Level = u16;

/// N x J ordinal responses (row-major, `None` = missing) with an N x P
/// covariate matrix whose first column is conventionally the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDataset {
    item_names: Vec<String>,
    levels: Vec<Level>,
    responses: Vec<Option<Level>>,
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
}

impl OrdinalDataset {
    pub fn new(
        item_names: Vec<String>,
        levels: Vec<Level>,
        responses: Vec<Option<Level>>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let j = levels.len();
        if item_names.len() != j {
            return Err(MvopError::validation(format!(
                "{} item names for {} items",
                item_names.len(),
                j
            )));
        }
        if let Some(pos) = levels.iter().position(|&c| c < 2) {
            return Err(MvopError::validation(format!(
                "item {} has {} levels; at least 2 required",
                item_names[pos], levels[pos]
            )));
        }
        let n = covariates.nrows();
        if responses.len() != n * j {
            return Err(MvopError::validation(format!(
                "response matrix has {} cells, expected {} x {}",
                responses.len(),
                n,
                j
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(MvopError::validation("covariate names do not match covariate columns"));
        }
        for (idx, r) in responses.iter().enumerate() {
            if let Some(l) = *r {
                let item = idx % j.max(1);
                if l < 1 || l > levels[item] {
                    return Err(MvopError::validation(format!(
                        "unit {} item {}: level {} outside 1..={}",
                        idx / j,
                        item_names[item],
                        l,
                        levels[item]
                    )));
                }
            }
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(MvopError::validation("covariates must be complete and finite"));
        }
        Ok(Self {
            item_names,
            levels,
            responses,
            covariate_names,
            covariates,
        })
    }

    /// Convenience constructor with generated names and an intercept-only design.
    pub fn intercept_only(levels: Vec<Level>, responses: Vec<Option<Level>>) -> Result<Self> {
        let j = levels.len();
        let n = if j == 0 { 0 } else { responses.len() / j };
        let names = (0..j).map(|k| format!("y{}", k + 1)).collect();
        Self::new(
            names,
            levels,
            responses,
            vec!["intercept".into()],
            DMatrix::from_element(n, 1, 1.0),
        )
    }

    pub fn n_units(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.levels.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.item_names.iter().position(|n| n == name)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn response(&self, i: usize, j: usize) -> Option<Level> {
        self.responses[i * self.n_items() + j]
    }

    pub fn responses(&self) -> &[Option<Level>] {
        &self.responses
    }

    pub fn row(&self, i: usize) -> &[Option<Level>] {
        let j = self.n_items();
        &self.responses[i * j..(i + 1) * j]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.response(i, j).is_none()
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        self.responses.iter().map(Option::is_none).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.responses.iter().filter(|r| r.is_none()).count()
    }

    pub fn has_missing(&self) -> bool {
        self.responses.iter().any(Option::is_none)
    }

    /// Observed counts per level of item `j` (index 0 is level 1).
    pub fn level_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.levels[j] as usize];
        for i in 0..self.n_units() {
            if let Some(l) = self.response(i, j) {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    /// Index of the first all-ones covariate column, if any.
    pub fn intercept_column(&self) -> Option<usize> {
        (0..self.n_covariates()).find(|&p| self.covariates.column(p).iter().all(|&v| v == 1.0))
    }

    /// Items with only two levels; their latent scale is not pinned by the
    /// threshold constraints.
    pub fn binary_items(&self) -> Vec<usize> {
        (0..self.n_items()).filter(|&j| self.levels[j] == 2).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> OrdinalDataset {
        let j = self.n_items();
        let mut responses = Vec::with_capacity(rows.len() * j);
        for &i in rows {
            responses.extend_from_slice(self.row(i));
        }
        let covariates = self.covariates.select_rows(rows.iter());
        OrdinalDataset {
            item_names: self.item_names.clone(),
            levels: self.levels.clone(),
            responses,
            covariate_names: self.covariate_names.clone(),
            covariates,
        }
    }

    pub fn select_items(&self, items: &[usize]) -> OrdinalDataset {
        let mut responses = Vec::with_capacity(self.n_units() * items.len());
        for i in 0..self.n_units() {
            for &j in items {
                responses.push(self.response(i, j));
            }
        }
        OrdinalDataset {
            item_names: items.iter().map(|&j| self.item_names[j].clone()).collect(),
            levels: items.iter().map(|&j| self.levels[j]).collect(),
            responses,
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.clone(),
        }
    }

    /// Replace the responses of the listed items (all units) with the
    /// corresponding columns of `source`, which must have the same units.
    pub fn with_items_from(&self, items: &[usize], source: &OrdinalDataset) -> Result<OrdinalDataset> {
        if source.n_units() != self.n_units() || source.n_items() != items.len() {
            return Err(MvopError::validation("item block shape mismatch"));
        }
        let mut out = self.clone();
        let j = self.n_items();
        for i in 0..self.n_units() {
            for (s, &t) in items.iter().enumerate() {
                if source.levels[s] != self.levels[t] {
                    return Err(MvopError::validation("item block level mismatch"));
                }
                out.responses[i * j + t] = source.response(i, s);
            }
        }
        Ok(out)
    }

    /// Fill every missing cell from a complete response matrix; observed
    /// cells must agree with it.
    pub fn with_completed(&self, completed: &ResponseMatrix) -> Result<OrdinalDataset> {
        if completed.n_units() != self.n_units() || completed.n_items() != self.n_items() {
            return Err(MvopError::validation("completed matrix shape mismatch"));
        }
        let mut out = self.clone();
        for (idx, cell) in out.responses.iter_mut().enumerate() {
            let v = completed.codes()[idx];
            match cell {
                Some(obs) if *obs != v => {
                    return Err(MvopError::validation(format!(
                        "completed matrix disagrees with observed cell {idx}"
                    )))
                }
                _ => *cell = Some(v),
            }
        }
        Ok(out)
    }

    /// Delete the listed items for every unit flagged in `rows_missing`.
    pub fn with_rows_masked(&self, items: &[usize], rows_missing: &[bool]) -> OrdinalDataset {
        let mut out = self.clone();
        let j = self.n_items();
        for (i, &m) in rows_missing.iter().enumerate() {
            if m {
                for &t in items {
                    out.responses[i * j + t] = None;
                }
            }
        }
        out
    }

    /// Complete response matrix; fails if any cell is missing.
    pub fn to_complete(&self) -> Result<ResponseMatrix> {
        let codes = self
            .responses
            .iter()
            .map(|r| r.ok_or_else(|| MvopError::validation("dataset has missing cells")))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResponseMatrix::new(self.n_units(), self.n_items(), codes))
    }

    /// Per-unit total score over `items`; fails if a needed cell is missing.
    pub fn totals(&self, items: &[usize]) -> Result<Vec<f64>> {
        (0..self.n_units())
            .map(|i| {
                items.iter().try_fold(0.0, |acc, &j| {
                    self.response(i, j)
                        .map(|l| acc + l as f64)
                        .ok_or_else(|| MvopError::validation(format!("unit {i} item {j} missing")))
                })
            })
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<Option<Level>> {
        (0..self.n_units()).map(|i| self.response(i, j)).collect()
    }

    /// Items of `self` followed by items of `other`; units and covariates
    /// must coincide.
    pub fn hstack(&self, other: &OrdinalDataset) -> Result<OrdinalDataset> {
        if self.n_units() != other.n_units()
            || self.covariate_names != other.covariate_names
            || self.covariates != other.covariates
        {
            return Err(MvopError::validation("item blocks disagree on units or covariates"));
        }
        let j = self.n_items() + other.n_items();
        let mut responses = Vec::with_capacity(self.n_units() * j);
        for i in 0..self.n_units() {
            responses.extend_from_slice(self.row(i));
            responses.extend_from_slice(other.row(i));
        }
        let mut item_names = self.item_names.clone();
        item_names.extend(other.item_names.iter().cloned());
        if let Some(dup) = item_names
            .iter()
            .enumerate()
            .find(|(k, n)| item_names[..*k].contains(n))
        {
            return Err(MvopError::validation(format!("duplicate item name {}", dup.1)));
        }
        let mut levels = self.levels.clone();
        levels.extend_from_slice(&other.levels);
        Ok(OrdinalDataset {
            item_names,
            levels,
            responses,
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.clone(),
        })
    }

    pub fn same_schema(&self, other: &OrdinalDataset) -> bool {
        self.item_names == other.item_names
            && self.levels == other.levels
            && self.covariate_names == other.covariate_names
    }
}

/// A complete N x J matrix of ordinal codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponseMatrix {
    n: usize,
    j: usize,
    codes: Vec<Level>,
}

impl ResponseMatrix {
    pub fn new(n: usize, j: usize, codes: Vec<Level>) -> Self {
        assert_eq!(codes.len(), n * j, "response matrix shape");
        Self { n, j, codes }
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.j
    }

    pub fn get(&self, i: usize, j: usize) -> Level {
        self.codes[i * self.j + j]
    }

    pub fn codes(&self) -> &[Level] {
        &self.codes
    }

    pub fn row(&self, i: usize) -> &[Level] {
        &self.codes[i * self.j..(i + 1) * self.j]
    }

    pub fn column(&self, j: usize) -> Vec<Level> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn totals(&self, items: &[usize]) -> Vec<f64> {
        (0..self.n)
            .map(|i| items.iter().map(|&j| self.get(i, j) as f64).sum())
            .collect()
    }
}
