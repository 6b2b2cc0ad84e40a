use std::fmt::Write as _;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a subband frame is laid out as a regressor.
///
/// `TwoSided` appends the conjugate (negative-frequency) bins so that input
/// column `c` sits at signed frequency `c - num_bins + 1/2` bins. Column `c <
/// num_bins` holds `conj X[num_bins - 1 - c]`, column `c >= num_bins` holds
/// `X[c - num_bins]`. This lets a complex-linear filter act widely linearly,
/// which modulation-type systems need.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputLayout {
    Positive,
    #[default]
    TwoSided,
}

impl InputLayout {
    pub fn width(self, num_bins: usize) -> usize {
        match self {
            InputLayout::Positive => num_bins,
            InputLayout::TwoSided => 2 * num_bins,
        }
    }

    pub fn regressor(self, bins: &[Complex64]) -> Vec<Complex64> {
        match self {
            InputLayout::Positive => bins.to_vec(),
            InputLayout::TwoSided => bins
                .iter()
                .rev()
                .map(|z| z.conj())
                .chain(bins.iter().copied())
                .collect(),
        }
    }

    /// Signed bin index of an input column (frequency minus the half-bin offset).
    pub fn signed_bin(self, num_bins: usize, column: usize) -> isize {
        match self {
            InputLayout::Positive => column as isize,
            InputLayout::TwoSided => column as isize - num_bins as isize,
        }
    }

    /// Column holding bin `k`, or its conjugate when `conjugate` is set.
    pub fn column(self, num_bins: usize, k: usize, conjugate: bool) -> Option<usize> {
        match (self, conjugate) {
            (InputLayout::Positive, false) => Some(k),
            (InputLayout::Positive, true) => None,
            (InputLayout::TwoSided, false) => Some(num_bins + k),
            (InputLayout::TwoSided, true) => Some(num_bins - 1 - k),
        }
    }

    /// Map linking each output bin only to the same input bin.
    pub fn identity_map(self, num_bins: usize) -> DependencyMap {
        let mut map = DependencyMap::empty(num_bins, self.width(num_bins));
        for k in 0..num_bins {
            map.set(k, self.column(num_bins, k, false).unwrap(), true);
        }
        map
    }
}

/// Boolean matrix; entry `(k_o, c)` set means input column `c` drives output bin `k_o`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyMap {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl DependencyMap {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("dependency map rows have unequal lengths"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Active input columns of one output row, ascending.
    pub fn support(&self, row: usize) -> Vec<usize> {
        self.row(row)
            .iter()
            .enumerate()
            .filter_map(|(c, &on)| on.then_some(c))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn row_density(&self, row: usize) -> f64 {
        if self.cols == 0 {
            return 0.0;
        }
        self.row(row).iter().filter(|&&b| b).count() as f64 / self.cols as f64
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&r| !self.row(r).contains(&true)).collect()
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::config(format!(
                "dependency map is {}x{}, expected {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        other.check_shape(self.rows, self.cols)
    }

    /// One CSV line per output row of 0/1 entries.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in 0..self.rows {
            let mut line = String::with_capacity(2 * self.cols);
            for (c, &on) in self.row(r).iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                line.push(if on { '1' } else { '0' });
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Inverse of [`DependencyMap::write_csv`].
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| match f.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::format(format!("line {}: bad map entry {other:?}", i + 1))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

/// Element-wise mean of several same-shape maps, as a CSV matrix of fractions.
pub fn write_mean_csv<W: Write>(maps: &[DependencyMap], mut out: W) -> Result<()> {
    let Some(first) = maps.first() else {
        return Ok(());
    };
    for m in maps {
        first.check_same_shape(m)?;
    }
    let n = maps.len() as f64;
    for r in 0..first.rows {
        let mut line = String::new();
        for c in 0..first.cols {
            if c > 0 {
                line.push(',');
            }
            let v = maps.iter().filter(|m| m.get(r, c)).count() as f64 / n;
            write!(line, "{v}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
