//! Sinkhorn-Knopp matrix scaling.
//!
//! [`scale_matrix`] alternately rescales rows and columns of a non-negative
//! matrix until its margins match the targets. The result is the
//! KL-projection of the input onto the transport polytope, which is what both
//! the discrete solver and the neural estimator rely on.
//!
//! The reported residual is the L1 distance between the row sums and the row
//! targets measured right after a column sweep (columns are then exact). For
//! positive matrices this quantity is non-increasing in the sweep count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of a scaling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub sweeps: usize,
    pub residual: f64,
}

/// Scales `m` (row-major, `rows x cols`) in place towards margins `r` and `c`.
///
/// Rows or columns with a zero target are zeroed and stay frozen. Runs until the
/// residual drops to `tol` or `max_sweeps` sweeps are done.
pub fn scale_matrix(
    m: &mut [f64],
    rows: usize,
    cols: usize,
    r: &[f64],
    c: &[f64],
    max_sweeps: usize,
    tol: f64,
) -> ScalingReport {
    scale_matrix_traced(m, rows, cols, r, c, max_sweeps, tol, |_| {})
}

/// As [`scale_matrix`], calling `observe` with the residual after each sweep.
#[allow(clippy::too_many_arguments)]
pub fn scale_matrix_traced(
    m: &mut [f64],
    rows: usize,
    cols: usize,
    r: &[f64],
    c: &[f64],
    max_sweeps: usize,
    tol: f64,
    mut observe: impl FnMut(f64),
) -> ScalingReport {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(r.len(), rows);
    debug_assert_eq!(c.len(), cols);

    let mut residual = row_residual(m, rows, cols, r) + col_residual(m, rows, cols, c);
    if residual <= tol {
        return ScalingReport {
            sweeps: 0,
            residual,
        };
    }
    let mut col_sums = vec![0.0; cols];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for i in 0..rows {
            let row = &mut m[i * cols..(i + 1) * cols];
            if r[i] <= 0.0 {
                row.fill(0.0);
                continue;
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                let f = r[i] / s;
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        col_sums.fill(0.0);
        for i in 0..rows {
            for (j, v) in m[i * cols..(i + 1) * cols].iter().enumerate() {
                col_sums[j] += v;
            }
        }
        let factors: Vec<f64> = col_sums
            .iter()
            .zip(c)
            .map(|(&s, &t)| if t <= 0.0 || s <= 0.0 { 0.0 } else { t / s })
            .collect();
        for i in 0..rows {
            for (j, v) in m[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                // A column that is empty but has positive target cannot be
                // fixed by scaling; leave it and let the residual show it.
                if col_sums[j] > 0.0 || c[j] <= 0.0 {
                    *v *= factors[j];
                }
            }
        }
        residual = row_residual(m, rows, cols, r);
        observe(residual);
        if residual <= tol {
            break;
        }
    }
    ScalingReport { sweeps, residual }
}

/// Scales `m` to margins `r`, `c` by damped Newton steps on the dual potentials.
///
/// Converges quadratically where Sinkhorn stalls on badly conditioned blocks.
/// Needs strictly positive targets and no empty row or column; otherwise `m`
/// is left untouched. Residual is the L1 error over rows and columns.
pub fn scale_matrix_newton(
    m: &mut [f64],
    rows: usize,
    cols: usize,
    r: &[f64],
    c: &[f64],
    max_iters: usize,
    tol: f64,
) -> ScalingReport {
    let residual_of = |m: &[f64]| row_residual(m, rows, cols, r) + col_residual(m, rows, cols, c);
    let mut residual = residual_of(m);
    let usable = r.iter().chain(c).all(|&t| t > 0.0)
        && (0..rows).all(|i| m[i * cols..(i + 1) * cols].iter().any(|&v| v > 0.0))
        && (0..cols).all(|j| (0..rows).any(|i| m[i * cols + j] > 0.0));
    if residual <= tol || !usable || cols == 0 {
        return ScalingReport { sweeps: 0, residual };
    }

    // Potentials u (rows) and v (cols), last column potential pinned at 0.
    let n = rows + cols - 1;
    let base = m.to_vec();
    let mut pot = vec![0.0; rows + cols];
    let dual = |pot: &[f64], out: &mut [f64]| -> f64 {
        let mut phi = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let v = base[i * cols + j] * (pot[i] + pot[rows + j]).exp();
                out[i * cols + j] = v;
                phi += v;
            }
        }
        phi - pot[..rows].iter().zip(r).map(|(u, t)| u * t).sum::<f64>()
            - pot[rows..].iter().zip(c).map(|(v, t)| v * t).sum::<f64>()
    };
    let mut scaled = vec![0.0; m.len()];
    let mut trial = vec![0.0; m.len()];
    let mut phi = dual(&pot, &mut scaled);
    let mut hess = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        hess.fill(0.0);
        for i in 0..rows {
            let row = &scaled[i * cols..(i + 1) * cols];
            let s: f64 = row.iter().sum();
            grad[i] = s - r[i];
            hess[i * n + i] = s;
            for (j, &v) in row.iter().enumerate().take(cols - 1) {
                hess[i * n + rows + j] = v;
                hess[(rows + j) * n + i] = v;
            }
        }
        for j in 0..cols - 1 {
            let s: f64 = (0..rows).map(|i| scaled[i * cols + j]).sum();
            grad[rows + j] = s - c[j];
            hess[(rows + j) * n + rows + j] = s;
        }
        let Some(step) = cholesky_solve(&mut hess, &grad, n) else {
            break;
        };
        let slope: f64 = -step.iter().zip(&grad).map(|(d, g)| d * g).sum::<f64>();
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let mut cand = pot.clone();
            for (k, d) in step.iter().enumerate() {
                cand[k] -= t * d;
            }
            let next = dual(&cand, &mut trial);
            // Near the solution the dual moves below its rounding noise, so a
            // shrinking residual also counts as progress.
            if next.is_finite()
                && (next <= phi + 1e-4 * t * slope || residual_of(&trial) < 0.5 * residual)
            {
                pot = cand;
                phi = next;
                std::mem::swap(&mut scaled, &mut trial);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        residual = residual_of(&scaled);
        if residual <= tol {
            break;
        }
    }
    if residual_of(&scaled) <= residual_of(m) {
        m.copy_from_slice(&scaled);
    }
    ScalingReport {
        sweeps: iters,
        residual: residual_of(m),
    }
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `n x n`),
/// overwriting `a` with its Cholesky factor. `None` if `a` is not SPD.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[i * n + k] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= a[k * n + i] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    Some(x)
}

fn row_residual(m: &[f64], rows: usize, cols: usize, r: &[f64]) -> f64 {
    (0..rows)
        .map(|i| (m[i * cols..(i + 1) * cols].iter().sum::<f64>() - r[i]).abs())
        .sum()
}

fn col_residual(m: &[f64], rows: usize, cols: usize, c: &[f64]) -> f64 {
    (0..cols)
        .map(|j| ((0..rows).map(|i| m[i * cols + j]).sum::<f64>() - c[j]).abs())
        .sum()
}

/// A tensor over (first-batch index `i`, second-batch index `j`, label `y`).
///
/// Stored as one `rows x cols` block per label so that per-label scaling works
/// on contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTensor {
    rows: usize,
    cols: usize,
    labels: usize,
    data: Vec<f64>,
}

impl PairTensor {
    pub fn zeros(rows: usize, cols: usize, labels: usize) -> Self {
        PairTensor {
            rows,
            cols,
            labels,
            data: vec![0.0; rows * cols * labels],
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        labels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = PairTensor::zeros(rows, cols, labels);
        for y in 0..labels {
            for i in 0..rows {
                for j in 0..cols {
                    t.data[(y * rows + i) * cols + j] = f(i, j, y);
                }
            }
        }
        t
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.labels)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, y: usize) -> f64 {
        self.data[(y * self.rows + i) * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, y: usize, v: f64) {
        self.data[(y * self.rows + i) * self.cols + j] = v;
    }

    pub fn block(&self, y: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[y * n..(y + 1) * n]
    }

    pub fn block_mut(&mut self, y: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.data[y * n..(y + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        crate::info::pairwise_sum(&self.data)
    }

    /// `(i, y)` margin as a `rows x labels` table.
    pub fn row_margin(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.labels];
        for y in 0..self.labels {
            for i in 0..self.rows {
                out[i * self.labels + y] = self.block(y)[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .sum();
            }
        }
        out
    }

    /// `(j, y)` margin as a `cols x labels` table.
    pub fn col_margin(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * self.labels];
        for y in 0..self.labels {
            let b = self.block(y);
            for i in 0..self.rows {
                for j in 0..self.cols {
                    out[j * self.labels + y] += b[i * self.cols + j];
                }
            }
        }
        out
    }
}

/// A tensor projected onto prescribed `(i, y)` and `(j, y)` margins.
#[derive(Debug, Clone)]
pub struct ProjectedCoupling {
    pub coupling: PairTensor,
    /// Largest per-label L1 row residual left after the final sweep.
    pub residual: f64,
    pub sweeps: usize,
}

/// Checks that a `(index, label)` target table is a joint distribution.
fn check_target(t: &[f64], what: &str) -> Result<()> {
    if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = t.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

/// Projects a strictly positive tensor so its `(i, y)` margin equals
/// `row_targets` (`rows x labels`) and its `(j, y)` margin equals `col_targets`
/// (`cols x labels`), label by label.
pub fn project_pairs(
    a: &PairTensor,
    row_targets: &[f64],
    col_targets: &[f64],
    max_sweeps: usize,
    tol: f64,
) -> Result<ProjectedCoupling> {
    let (rows, cols, labels) = a.shape();
    if row_targets.len() != rows * labels || col_targets.len() != cols * labels {
        return Err(Error::domain("sinkhorn target shape does not match tensor"));
    }
    check_target(row_targets, "row target")?;
    check_target(col_targets, "column target")?;
    if let Some(pos) = a.values().iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!(
            "similarity entry {pos} is not strictly positive"
        )));
    }

    let mut coupling = a.clone();
    let mut worst = 0.0f64;
    let mut max_used = 0;
    for y in 0..labels {
        let r: Vec<f64> = (0..rows).map(|i| row_targets[i * labels + y]).collect();
        let c: Vec<f64> = (0..cols).map(|j| col_targets[j * labels + y]).collect();
        let (rs, cs): (f64, f64) = (r.iter().sum(), c.iter().sum());
        if (rs - cs).abs() > 1e-9 {
            return Err(Error::Infeasible(format!(
                "label {y}: row mass {rs} differs from column mass {cs}"
            )));
        }
        let report = scale_matrix(coupling.block_mut(y), rows, cols, &r, &c, max_sweeps, tol);
        worst = worst.max(report.residual);
        max_used = max_used.max(report.sweeps);
    }
    Ok(ProjectedCoupling {
        coupling,
        residual: worst,
        sweeps: max_used,
    })
}
