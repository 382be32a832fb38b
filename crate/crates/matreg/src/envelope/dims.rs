//! Envelope dimension selection by information criteria, over a full grid or
//! by greedy stepwise search.

use crate::bilinear::{count_params, CountConvention, ModelKind};
use crate::dataset::MatrixDataset;
use crate::error::{Error, Result};
use crate::exec;

use super::fit::{fit_envelope, EnvelopeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    /// The complexity weight `h(n)`.
    pub fn penalty_weight(&self, n: usize) -> f64 {
        match self {
            Criterion::Aic => 2.0,
            Criterion::Bic => (n as f64).ln(),
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone)]
pub struct DimCell {
    pub u1: usize,
    pub u2: usize,
    pub loglik: Option<f64>,
    pub param_count: usize,
    pub score: Option<f64>,
    pub error: Option<String>,
}

/// Selection result: the chosen dimensions plus the full evaluation table.
#[derive(Debug, Clone)]
pub struct DimSelection {
    pub u1: usize,
    pub u2: usize,
    pub criterion: Criterion,
    pub table: Vec<DimCell>,
}

/// Every pair in `[0..=r] x [0..=m]`.
pub fn full_grid(r: usize, m: usize) -> Vec<(usize, usize)> {
    let mut grid = Vec::with_capacity((r + 1) * (m + 1));
    for u1 in 0..=r {
        for u2 in 0..=m {
            grid.push((u1, u2));
        }
    }
    grid
}

fn evaluate_cell(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    criterion: Criterion,
    opts: &EnvelopeOptions,
    convention: CountConvention,
) -> DimCell {
    let (r, m, p1, p2) = (data.r(), data.m(), data.p1(), data.p2());
    let t = count_params(ModelKind::Envelope, r, m, p1, p2, u1, u2, convention)
        .expect("grid bounds validated");
    match fit_envelope(data, u1, u2, opts) {
        Ok(fit) => {
            let score = -2.0 * fit.loglik + criterion.penalty_weight(data.n()) * t as f64;
            DimCell {
                u1,
                u2,
                loglik: Some(fit.loglik),
                param_count: t,
                score: Some(score),
                error: None,
            }
        }
        Err(e) => DimCell {
            u1,
            u2,
            loglik: None,
            param_count: t,
            score: None,
            error: Some(e.to_string()),
        },
    }
}

/// Ties go to the smaller total dimension, then to the smaller `u1`.
fn pick_best(table: &[DimCell]) -> Option<(usize, usize)> {
    table
        .iter()
        .filter_map(|c| c.score.filter(|s| s.is_finite()).map(|s| (s, c.u1, c.u2)))
        .min_by(|a, b| {
            (a.0, a.1 + a.2, a.1)
                .partial_cmp(&(b.0, b.1 + b.2, b.1))
                .expect("finite scores")
        })
        .map(|(_, u1, u2)| (u1, u2))
}

/// Full-grid information-criterion selection. Cells run independently (in
/// parallel when enabled) and per-cell failures are recorded in the table
/// without aborting the search.
pub fn select_dims_ic(
    data: &MatrixDataset,
    criterion: Criterion,
    grid: &[(usize, usize)],
    opts: &EnvelopeOptions,
    convention: CountConvention,
) -> Result<DimSelection> {
    let (r, m) = (data.r(), data.m());
    for &(u1, u2) in grid {
        if u1 > r {
            return Err(Error::DimensionOutOfRange { u: u1, max: r });
        }
        if u2 > m {
            return Err(Error::DimensionOutOfRange { u: u2, max: m });
        }
    }
    let table = exec::map_slice(grid, |&(u1, u2)| {
        evaluate_cell(data, u1, u2, criterion, opts, convention)
    });
    let (u1, u2) = pick_best(&table).ok_or(Error::FitFailed {
        context: "select_dims_ic",
        message: "no grid cell produced a finite criterion value".into(),
    })?;
    Ok(DimSelection {
        u1,
        u2,
        criterion,
        table,
    })
}

/// Greedy stepwise search: start at `(1,1)` and raise whichever dimension
/// most improves the criterion, stopping at a local minimum.
pub fn select_dims_stepwise(
    data: &MatrixDataset,
    criterion: Criterion,
    opts: &EnvelopeOptions,
    convention: CountConvention,
) -> Result<DimSelection> {
    let (r, m) = (data.r(), data.m());
    let start = (1.min(r), 1.min(m));
    let mut table: Vec<DimCell> = Vec::new();
    let score_of = |table: &mut Vec<DimCell>, u1: usize, u2: usize| -> Option<f64> {
        if let Some(cell) = table.iter().find(|c| c.u1 == u1 && c.u2 == u2) {
            return cell.score;
        }
        let cell = evaluate_cell(data, u1, u2, criterion, opts, convention);
        let score = cell.score;
        table.push(cell);
        score
    };

    let (mut u1, mut u2) = start;
    let mut current = score_of(&mut table, u1, u2).ok_or(Error::FitFailed {
        context: "select_dims_stepwise",
        message: "starting cell failed to fit".into(),
    })?;
    loop {
        let mut best_move: Option<(usize, usize, f64)> = None;
        let mut candidates = Vec::new();
        if u1 < r {
            candidates.push((u1 + 1, u2));
        }
        if u2 < m {
            candidates.push((u1, u2 + 1));
        }
        for (c1, c2) in candidates {
            if let Some(s) = score_of(&mut table, c1, c2) {
                if s < current && best_move.map(|(_, _, b)| s < b).unwrap_or(true) {
                    best_move = Some((c1, c2, s));
                }
            }
        }
        match best_move {
            Some((c1, c2, s)) => {
                u1 = c1;
                u2 = c2;
                current = s;
            }
            None => break,
        }
    }
    table.sort_by_key(|c| (c.u1, c.u2));
    Ok(DimSelection {
        u1,
        u2,
        criterion,
        table,
    })
}
