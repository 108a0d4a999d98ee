//! Pearson correlation analysis and correlation-driven feature selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("vector lengths differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    SampleSize(usize),
    #[error("vector is constant; variance is zero")]
    DegenerateVariance,
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cell ({row}, {col}) is not finite")]
    NonFiniteCell { row: usize, col: usize },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
}

/// A column-named numeric matrix; rows are observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Name of the response column, when the matrix carries one.
    pub target: Option<String>,
}

impl FeatureMatrix {
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
        target: Option<String>,
    ) -> Result<Self, StatsError> {
        for (i, a) in columns.iter().enumerate() {
            if columns[i + 1..].contains(a) {
                return Err(StatsError::DuplicateColumn(a.clone()));
            }
        }
        if let Some(t) = &target {
            if !columns.contains(t) {
                return Err(StatsError::UnknownColumn(t.clone()));
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(StatsError::RaggedRow {
                    row: r,
                    got: row.len(),
                    expected: columns.len(),
                });
            }
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(StatsError::NonFiniteCell { row: r, col: c });
                }
            }
        }
        Ok(Self {
            columns,
            rows,
            target,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, StatsError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| StatsError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, StatsError> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// A new matrix holding only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            target: self.target.clone(),
        }
    }

    /// A new matrix holding only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix, StatsError> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| indices.iter().map(|&i| r[i]).collect())
            .collect();
        FeatureMatrix::new(names.to_vec(), rows, None)
    }
}

/// Sample Pearson correlation coefficient.
///
/// Both vectors must have the same length of at least 2 and be
/// non-constant. The result is clamped to `[-1, 1]` against floating-point
/// drift.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::ShapeMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::SampleSize(x.len()));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0))
}

/// Symmetric matrix of pairwise Pearson coefficients.
///
/// Pairs involving a constant column are undefined; they are rendered as 0
/// and listed in `undefined_pairs` so reports can warn instead of aborting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Vec<Vec<f64>>,
    pub undefined_pairs: Vec<(String, String)>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Result<f64, StatsError> {
        let i = self
            .names
            .iter()
            .position(|n| n == a)
            .ok_or_else(|| StatsError::UnknownColumn(a.to_string()))?;
        let j = self
            .names
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| StatsError::UnknownColumn(b.to_string()))?;
        Ok(self.r[i][j])
    }

    /// CSV rendering: header row of names, then one row per feature.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(n);
            for v in &self.r[i] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise Pearson correlation over all columns of `m`.
pub fn correlation_matrix(m: &FeatureMatrix) -> Result<CorrelationMatrix, StatsError> {
    if m.n_rows() < 2 {
        return Err(StatsError::SampleSize(m.n_rows()));
    }
    let p = m.n_cols();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|i| m.rows.iter().map(|r| r[i]).collect())
        .collect();
    let mut r = vec![vec![0.0; p]; p];
    let mut undefined = Vec::new();
    for i in 0..p {
        for j in i..p {
            match pearson(&cols[i], &cols[j]) {
                Ok(v) => {
                    r[i][j] = v;
                    r[j][i] = v;
                }
                Err(StatsError::DegenerateVariance) => {
                    r[i][j] = 0.0;
                    r[j][i] = 0.0;
                    undefined.push((m.columns[i].clone(), m.columns[j].clone()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CorrelationMatrix {
        names: m.columns.clone(),
        r,
        undefined_pairs: undefined,
    })
}

/// Selects features by absolute correlation with `target`.
///
/// Keeps features with `|r| >= threshold`, always including `must_keep`,
/// excluding the target itself and every name in `banned` (the leakage
/// guard). Order is descending `|r|` with a lexicographic tie-break.
pub fn select_features(
    cm: &CorrelationMatrix,
    target: &str,
    threshold: f64,
    must_keep: &[String],
    banned: &[String],
) -> Result<Vec<String>, StatsError> {
    let t = cm
        .names
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| StatsError::UnknownColumn(target.to_string()))?;
    let mut chosen: Vec<(String, f64)> = Vec::new();
    for (i, name) in cm.names.iter().enumerate() {
        if i == t || banned.contains(name) {
            continue;
        }
        let score = cm.r[i][t].abs();
        if score >= threshold || must_keep.contains(name) {
            chosen.push((name.clone(), score));
        }
    }
    for name in must_keep {
        if name != target
            && !banned.contains(name)
            && !chosen.iter().any(|(n, _)| n == name)
            && !cm.names.contains(name)
        {
            return Err(StatsError::UnknownColumn(name.clone()));
        }
    }
    chosen.sort_by(|(an, ar), (bn, br)| {
        br.partial_cmp(ar)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| an.cmp(bn))
    });
    Ok(chosen.into_iter().map(|(n, _)| n).collect())
}
