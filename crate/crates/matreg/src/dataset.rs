//! Datasets of paired response/predictor matrices, plus the long-format
//! plain-text interchange format.
//!
//! Each experimental unit carries a response `Y_i` (`r x m`) and a predictor
//! `X_i` (`p1 x p2`); vectors and scalars are degenerate shapes. Predictors
//! are centered before fitting; the removed mean is kept so fitted models can
//! predict on the original scale.
//!
//! The file format is one row per matrix cell with header
//! `unit,block,row,col,value` (1-based indices, `block` is `Y` or `X`).
//! Every cell must be present exactly once; missing, duplicate, or ragged
//! entries are reported with the offending cell.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MatrixDataset {
    ys: Vec<DMatrix<f64>>,
    xs: Vec<DMatrix<f64>>,
    centered: bool,
    /// Predictor mean removed by centering, on the original scale.
    x_mean: Option<DMatrix<f64>>,
}

impl MatrixDataset {
    pub fn new(ys: Vec<DMatrix<f64>>, xs: Vec<DMatrix<f64>>) -> Result<Self> {
        if ys.is_empty() || ys.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                context: "MatrixDataset::new",
                expected: "equal nonzero numbers of responses and predictors".into(),
                found: format!("{} responses, {} predictors", ys.len(), xs.len()),
            });
        }
        let (r, m) = ys[0].shape();
        let (p1, p2) = xs[0].shape();
        for (i, y) in ys.iter().enumerate() {
            if y.shape() != (r, m) {
                return Err(Error::DimensionMismatch {
                    context: "MatrixDataset::new",
                    expected: format!("Y {r}x{m}"),
                    found: format!("unit {} has Y {}x{}", i + 1, y.nrows(), y.ncols()),
                });
            }
        }
        for (i, x) in xs.iter().enumerate() {
            if x.shape() != (p1, p2) {
                return Err(Error::DimensionMismatch {
                    context: "MatrixDataset::new",
                    expected: format!("X {p1}x{p2}"),
                    found: format!("unit {} has X {}x{}", i + 1, x.nrows(), x.ncols()),
                });
            }
        }
        Ok(Self {
            ys,
            xs,
            centered: false,
            x_mean: None,
        })
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn r(&self) -> usize {
        self.ys[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.ys[0].ncols()
    }

    pub fn p1(&self) -> usize {
        self.xs[0].nrows()
    }

    pub fn p2(&self) -> usize {
        self.xs[0].ncols()
    }

    pub fn ys(&self) -> &[DMatrix<f64>] {
        &self.ys
    }

    pub fn xs(&self) -> &[DMatrix<f64>] {
        &self.xs
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Mean removed from the predictors, when centering has been applied.
    pub fn x_mean(&self) -> Option<&DMatrix<f64>> {
        self.x_mean.as_ref()
    }

    pub fn response_mean(&self) -> DMatrix<f64> {
        let mut mean = DMatrix::zeros(self.r(), self.m());
        for y in &self.ys {
            mean += y;
        }
        mean / self.n() as f64
    }

    /// Predictors shifted to mean zero; responses untouched. The removed
    /// mean is retained for prediction. Centering twice is a no-op.
    pub fn center_predictors(&self) -> MatrixDataset {
        if self.centered {
            return self.clone();
        }
        let n = self.n() as f64;
        let mut mean = DMatrix::zeros(self.p1(), self.p2());
        for x in &self.xs {
            mean += x;
        }
        mean /= n;
        let xs = self.xs.iter().map(|x| x - &mean).collect();
        MatrixDataset {
            ys: self.ys.clone(),
            xs,
            centered: true,
            x_mean: Some(mean),
        }
    }

    /// Rebuilds a dataset with new responses against the same predictors and
    /// centering metadata (bootstrap resampling keeps the design fixed).
    pub fn with_responses(&self, ys: Vec<DMatrix<f64>>) -> Result<MatrixDataset> {
        if ys.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "with_responses",
                expected: format!("{} responses", self.n()),
                found: format!("{}", ys.len()),
            });
        }
        Ok(MatrixDataset {
            ys,
            xs: self.xs.clone(),
            centered: self.centered,
            x_mean: self.x_mean.clone(),
        })
    }

    /// Selects units by index, with repetition allowed (pairs resampling).
    pub fn select_units(&self, idx: &[usize]) -> MatrixDataset {
        MatrixDataset {
            ys: idx.iter().map(|&i| self.ys[i].clone()).collect(),
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            centered: false,
            x_mean: None,
        }
    }

    /// Scalar predictor value of unit `i`; requires `p1 = p2 = 1`.
    pub fn x_scalar(&self, i: usize) -> Result<f64> {
        if self.p1() != 1 || self.p2() != 1 {
            return Err(Error::DimensionMismatch {
                context: "x_scalar",
                expected: "1x1 predictor".into(),
                found: format!("{}x{}", self.p1(), self.p2()),
            });
        }
        Ok(self.xs[i][(0, 0)])
    }
}

const HEADER: &str = "unit,block,row,col,value";

/// Serializes a dataset to the long format, one row per cell, full `f64`
/// round-trip precision.
pub fn write_dataset_string(data: &MatrixDataset) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (u, (y, x)) in data.ys.iter().zip(&data.xs).enumerate() {
        for (block, mat) in [("Y", y), ("X", x)] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    writeln!(out, "{},{},{},{},{}", u + 1, block, i + 1, j + 1, mat[(i, j)])
                        .expect("string write");
                }
            }
        }
    }
    out
}

pub fn write_dataset(data: &MatrixDataset, path: &Path) -> Result<()> {
    std::fs::write(path, write_dataset_string(data))?;
    Ok(())
}

/// Parses the long format, inferring dimensions and validating that every
/// cell of every unit is present exactly once.
pub fn read_dataset_str(text: &str) -> Result<MatrixDataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((_, h)) => {
            return Err(Error::DatasetParse {
                line: 1,
                message: format!("expected header '{HEADER}', got '{}'", h.trim()),
            })
        }
        None => {
            return Err(Error::DatasetParse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }

    // (unit, is_y, row, col) -> value, all 1-based as read
    let mut cells: HashMap<(usize, bool, usize, usize), f64> = HashMap::new();
    let mut n = 0usize;
    let mut dims_y = (0usize, 0usize);
    let mut dims_x = (0usize, 0usize);

    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |msg: String| Error::DatasetParse {
            line: lineno + 1,
            message: msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(parse(format!("expected 5 fields, got {}", fields.len())));
        }
        let unit: usize = fields[0]
            .parse()
            .map_err(|_| parse(format!("bad unit index '{}'", fields[0])))?;
        let is_y = match fields[1] {
            "Y" => true,
            "X" => false,
            other => return Err(parse(format!("block must be Y or X, got '{other}'"))),
        };
        let row: usize = fields[2]
            .parse()
            .map_err(|_| parse(format!("bad row index '{}'", fields[2])))?;
        let col: usize = fields[3]
            .parse()
            .map_err(|_| parse(format!("bad col index '{}'", fields[3])))?;
        let value: f64 = fields[4]
            .parse()
            .map_err(|_| parse(format!("bad value '{}'", fields[4])))?;
        if unit == 0 || row == 0 || col == 0 {
            return Err(parse("indices are 1-based; got 0".into()));
        }
        if cells.insert((unit, is_y, row, col), value).is_some() {
            return Err(Error::DuplicateCell {
                unit,
                block: if is_y { "Y".into() } else { "X".into() },
                row,
                col,
            });
        }
        n = n.max(unit);
        let dims = if is_y { &mut dims_y } else { &mut dims_x };
        dims.0 = dims.0.max(row);
        dims.1 = dims.1.max(col);
    }

    if n == 0 {
        return Err(Error::DatasetParse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    for (block, dims) in [("Y", dims_y), ("X", dims_x)] {
        if dims.0 == 0 || dims.1 == 0 {
            return Err(Error::DatasetParse {
                line: 2,
                message: format!("no {block} cells found"),
            });
        }
    }

    let mut ys = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for unit in 1..=n {
        for (is_y, dims, out) in [(true, dims_y, &mut ys), (false, dims_x, &mut xs)] {
            let mut mat = DMatrix::zeros(dims.0, dims.1);
            for row in 1..=dims.0 {
                for col in 1..=dims.1 {
                    match cells.get(&(unit, is_y, row, col)) {
                        Some(&v) => mat[(row - 1, col - 1)] = v,
                        None => {
                            return Err(Error::MissingCell {
                                unit,
                                block: if is_y { "Y".into() } else { "X".into() },
                                row,
                                col,
                            })
                        }
                    }
                }
            }
            out.push(mat);
        }
    }
    MatrixDataset::new(ys, xs)
}

pub fn read_dataset(path: &Path) -> Result<MatrixDataset> {
    read_dataset_str(&std::fs::read_to_string(path)?)
}
