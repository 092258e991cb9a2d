//! Sparse rate matrices on a region plus an absorbing coffin state.

use std::io::Write;

use ndarray::Array2;

use crate::error::Result;
use crate::network::ReactionNetwork;
use crate::region::{Enumeration, Region};

/// Generator `Q_r` in compressed-row form. Off-diagonal entries (including
/// the coffin column) live in the CSR arrays; the diagonal is stored apart.
#[derive(Debug, Clone)]
pub struct SparseRateMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    rho: f64,
}

impl SparseRateMatrix {
    /// Build from per-row off-diagonal entries; the diagonal makes rows sum to 0.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(dim);
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.retain(|&(j, q)| j != i && q != 0.0);
            row.sort_by_key(|&(j, _)| j);
            let mut out = 0.0;
            let mut last: Option<usize> = None;
            for (j, q) in row {
                debug_assert!(q > 0.0 && j < dim);
                out += q;
                if last == Some(j) {
                    *vals.last_mut().expect("merged entry") += q;
                } else {
                    cols.push(j);
                    vals.push(q);
                    last = Some(j);
                }
            }
            diag.push(-out);
            row_ptr.push(cols.len());
        }
        let rho = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            diag,
            rho,
        }
    }

    /// Build from a dense generator (off-diagonals must be non-negative).
    pub fn from_dense(q: &Array2<f64>) -> Self {
        let rows = q
            .outer_iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    /// Matrix dimension, coffin included.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored entries: off-diagonals plus the diagonal.
    pub fn nnz(&self) -> usize {
        self.vals.len() + self.dim
    }

    /// `max_i |Q_ii|`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut q = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            q[[i, i]] = self.diag[i];
            for (j, v) in self.row(i) {
                q[[i, j]] += v;
            }
        }
        q
    }

    /// Coordinate list `row col value`, one entry per line, diagonal included.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.dim {
            let mut entries: Vec<(usize, f64)> = self.row(i).collect();
            if self.diag[i] != 0.0 {
                entries.push((i, self.diag[i]));
            }
            entries.sort_by_key(|&(j, _)| j);
            for (j, v) in entries {
                writeln!(w, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Assemble `Q_r` for `region` at rates `theta`.
///
/// Transitions that leave the region (but respect the hard bounds) are
/// redirected to the coffin state, which is absorbing.
pub fn build_generator(
    net: &ReactionNetwork,
    theta: &[f64],
    region: &Region,
) -> Result<(SparseRateMatrix, Enumeration)> {
    let en = region.enumerate()?;
    let d = en.volume();
    let coffin = en.coffin();
    let strides = en.strides();
    let offsets: Vec<isize> = net
        .reactions
        .iter()
        .map(|rx| {
            rx.delta
                .iter()
                .zip(strides)
                .map(|(&dl, &st)| dl as isize * st as isize)
                .sum()
        })
        .collect();

    let mut rows = Vec::with_capacity(d + 1);
    let mut x = region.lower.clone();
    for k in 0..d {
        let mut row = Vec::with_capacity(net.n_reactions());
        for (j, rx) in net.reactions.iter().enumerate() {
            let h = net.rate(j, &x, theta[j]);
            if h <= 0.0 {
                continue;
            }
            let inside = x
                .iter()
                .zip(&rx.delta)
                .enumerate()
                .all(|(s, (&v, &dl))| {
                    let y = v + dl;
                    y >= region.lower[s] && y <= region.upper[s]
                });
            if inside {
                let target = (k as isize + offsets[j]) as usize;
                if target != k {
                    row.push((target, h));
                }
            } else {
                row.push((coffin, h));
            }
        }
        rows.push(row);
        // odometer step, last species fastest
        for s in (0..x.len()).rev() {
            if x[s] < region.upper[s] {
                x[s] += 1;
                break;
            }
            x[s] = region.lower[s];
        }
    }
    rows.push(Vec::new());
    Ok((SparseRateMatrix::from_rows(rows), en))
}
