//! Exhaustive reference decomposition for small discrete systems.
//!
//! Every label's coupling `Q(x1, x2, y)` is parameterized by its top-left
//! `(a-1) x (b-1)` block, the remaining row and column being fixed by the
//! margins. The objective `I_Q(X1, X2; Y)` is evaluated on a dense grid over
//! all free coordinates, then refined twice around the best point with a
//! ten times finer grid. Nothing here shares code with the mirror-descent
//! solver beyond the final atom identities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::info::{self, Axis, JointPmf, ZERO_MASS};
use crate::solver::{atoms_from_information, Decomposition};

/// Default grid points per free coordinate (plus the endpoint).
pub const DEFAULT_RESOLUTION: usize = 50;
/// Largest number of free coupling coordinates searched exhaustively.
pub const MAX_FREE_COORDS: usize = 3;
const REFINE_ROUNDS: usize = 2;
const REFINE_FACTOR: usize = 10;

struct Block {
    y: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    r: Vec<f64>,
    c: Vec<f64>,
}

impl Block {
    fn free(&self) -> usize {
        (self.rows.len() - 1) * (self.cols.len() - 1)
    }

    /// Fills the full block from its free coordinates; `None` if infeasible.
    fn fill(&self, free: &[f64], out: &mut [f64]) -> Option<()> {
        let (a, b) = (self.rows.len(), self.cols.len());
        for i in 0..a - 1 {
            let mut rest = self.r[i];
            for j in 0..b - 1 {
                let v = free[i * (b - 1) + j];
                out[i * b + j] = v;
                rest -= v;
            }
            out[i * b + b - 1] = rest;
        }
        let mut corner = self.r[a - 1];
        for j in 0..b - 1 {
            let used: f64 = (0..a - 1).map(|i| out[i * b + j]).sum();
            let v = self.c[j] - used;
            out[(a - 1) * b + j] = v;
            corner -= v;
        }
        out[(a - 1) * b + b - 1] = corner;
        for v in out.iter_mut() {
            if *v < -1e-13 {
                return None;
            }
            *v = v.max(0.0);
        }
        Some(())
    }

    /// Per-coordinate Fréchet bounds `[max(0, r+c-p(y)), min(r, c)]`.
    fn bounds(&self, mass: f64) -> Vec<(f64, f64)> {
        let b = self.cols.len();
        let mut out = Vec::with_capacity(self.free());
        for i in 0..self.rows.len() - 1 {
            for j in 0..b - 1 {
                out.push(((self.r[i] + self.c[j] - mass).max(0.0), self.r[i].min(self.c[j])));
            }
        }
        out
    }
}

struct Problem {
    n1: usize,
    n2: usize,
    k: usize,
    py: Vec<f64>,
    blocks: Vec<Block>,
    bounds: Vec<(f64, f64)>,
}

impl Problem {
    fn new(p: &JointPmf) -> Self {
        let dims = p.dims();
        let py = p.marginal(&[Axis::Y]);
        let x1y = p.source_target(Axis::X1);
        let x2y = p.source_target(Axis::X2);
        let blocks: Vec<Block> = (0..dims.k)
            .filter(|&y| py[y] > ZERO_MASS)
            .map(|y| {
                let rows: Vec<usize> = (0..dims.n1).filter(|&a| x1y[a * dims.k + y] > ZERO_MASS).collect();
                let cols: Vec<usize> = (0..dims.n2).filter(|&b| x2y[b * dims.k + y] > ZERO_MASS).collect();
                let r = rows.iter().map(|&a| x1y[a * dims.k + y]).collect();
                let c = cols.iter().map(|&b| x2y[b * dims.k + y]).collect();
                Block { y, rows, cols, r, c }
            })
            .collect();
        let bounds = blocks.iter().flat_map(|b| b.bounds(py[b.y])).collect();
        Problem {
            n1: dims.n1,
            n2: dims.n2,
            k: dims.k,
            py,
            blocks,
            bounds,
        }
    }

    fn free(&self) -> usize {
        self.bounds.len()
    }

    /// `I_Q(X1, X2; Y)` in bits at a free-coordinate point, `None` if infeasible.
    fn objective(&self, point: &[f64]) -> Option<f64> {
        let mut q = vec![0.0; self.n1 * self.n2 * self.k];
        let mut offset = 0;
        let mut buf = Vec::new();
        for b in &self.blocks {
            let f = b.free();
            buf.resize(b.rows.len() * b.cols.len(), 0.0);
            b.fill(&point[offset..offset + f], &mut buf)?;
            offset += f;
            for (ri, &x1) in b.rows.iter().enumerate() {
                for (ci, &x2) in b.cols.iter().enumerate() {
                    q[(x1 * self.n2 + x2) * self.k + b.y] = buf[ri * b.cols.len() + ci];
                }
            }
        }
        let mut total = 0.0;
        for cell in q.chunks(self.k) {
            let qx: f64 = cell.iter().sum();
            if qx <= ZERO_MASS {
                continue;
            }
            for (y, &v) in cell.iter().enumerate() {
                if v > ZERO_MASS {
                    total += v * (v / (qx * self.py[y])).log2();
                }
            }
        }
        Some(total)
    }

    /// Free coordinates of the per-label product coupling (always feasible).
    fn product_point(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free());
        for b in &self.blocks {
            let mass = self.py[b.y];
            for i in 0..b.rows.len() - 1 {
                for j in 0..b.cols.len() - 1 {
                    out.push(b.r[i] * b.c[j] / mass);
                }
            }
        }
        out
    }

    /// Best point on a tensor grid; axes given as explicit coordinate lists.
    fn search(&self, axes: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .into_par_iter()
            .filter_map(|flat| {
                let mut rem = flat;
                let mut point = vec![0.0; axes.len()];
                for d in (0..axes.len()).rev() {
                    point[d] = axes[d][rem % axes[d].len()];
                    rem /= axes[d].len();
                }
                self.objective(&point).map(|v| (v, flat, point))
            })
            // Ties resolve to the lowest grid index so the result is independent
            // of thread scheduling.
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(v, _, p)| (v, p))
    }
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    (0..=steps)
        .map(|s| lo + (hi - lo) * s as f64 / steps as f64)
        .collect()
}

/// Reference PID by exhaustive search.
///
/// Refuses systems larger than 4x4x4 or with more than [`MAX_FREE_COORDS`]
/// free coupling coordinates after removing zero-mass states.
pub fn brute_force_pid(p: &JointPmf, grid_resolution: usize) -> Result<Decomposition> {
    let dims = p.dims();
    if dims.n1 > 4 || dims.n2 > 4 || dims.k > 4 {
        return Err(Error::Capability(format!(
            "oracle handles at most 4x4x4 joints, got {}x{}x{}",
            dims.n1, dims.n2, dims.k
        )));
    }
    if grid_resolution == 0 {
        return Err(Error::domain("grid resolution must be positive"));
    }
    let xy = [Axis::X1, Axis::X2];
    let total = info::mutual_information(p, &xy, &[Axis::Y])?;
    let source1 = info::mutual_information(p, &[Axis::X1], &[Axis::Y])?;
    let source2 = info::mutual_information(p, &[Axis::X2], &[Axis::Y])?;

    let problem = Problem::new(p);
    if problem.blocks.len() <= 1 {
        return atoms_from_information(total, source1, source2, total);
    }
    let free = problem.free();
    if free > MAX_FREE_COORDS {
        return Err(Error::Capability(format!(
            "oracle search over {free} free coordinates exceeds the limit of {MAX_FREE_COORDS}"
        )));
    }

    let start = problem.product_point();
    let mut best_value = problem
        .objective(&start)
        .ok_or_else(|| Error::numeric("product coupling is infeasible"))?;
    let mut best = start;

    let mut spacing: Vec<f64> = problem
        .bounds
        .iter()
        .map(|(lo, hi)| (hi - lo) / grid_resolution as f64)
        .collect();
    if free > 0 {
        let axes: Vec<Vec<f64>> = problem
            .bounds
            .iter()
            .map(|&(lo, hi)| linspace(lo, hi, grid_resolution))
            .collect();
        if let Some((v, pt)) = problem.search(&axes) {
            if v < best_value {
                best_value = v;
                best = pt;
            }
        }
        for _ in 0..REFINE_ROUNDS {
            let axes: Vec<Vec<f64>> = (0..free)
                .map(|d| {
                    let (lo, hi) = problem.bounds[d];
                    let a = (best[d] - spacing[d]).max(lo);
                    let b = (best[d] + spacing[d]).min(hi);
                    linspace(a, b, 2 * REFINE_FACTOR)
                })
                .collect();
            if let Some((v, pt)) = problem.search(&axes) {
                if v < best_value {
                    best_value = v;
                    best = pt;
                }
            }
            spacing.iter_mut().for_each(|s| *s /= REFINE_FACTOR as f64);
        }
    }
    // The minimum can never exceed the data distribution's own value.
    let minimized = best_value.min(total).max(0.0);
    atoms_from_information(total, source1, source2, minimized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::Dims;
    use crate::synth::gates::{gate_joint, Gate, GateSpec};

    fn atoms(g: Gate, noise: f64) -> [f64; 4] {
        let p = gate_joint(&GateSpec::exact(g, noise)).unwrap();
        brute_force_pid(&p, DEFAULT_RESOLUTION).unwrap().atoms.as_array()
    }

    fn close(a: [f64; 4], b: [f64; 4], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn noiseless_gates() {
        assert!(close(atoms(Gate::Xor, 0.0), [0.0, 0.0, 0.0, 1.0], 1e-9));
        assert!(close(atoms(Gate::Unq1, 0.0), [0.0, 1.0, 0.0, 0.0], 1e-9));
        assert!(close(atoms(Gate::Unq2, 0.0), [0.0, 0.0, 1.0, 0.0], 1e-9));
        assert!(close(atoms(Gate::Copy, 0.0), [1.0, 0.0, 0.0, 0.0], 1e-9));
        // Closed form: R = 3/2 - (3/4) log2 3, S = 1/2.
        let r = 1.5 - 0.75 * 3f64.log2();
        assert!(close(atoms(Gate::And, 0.0), [r, 0.0, 0.0, 0.5], 1e-9));
        assert!(close(atoms(Gate::Or, 0.0), [r, 0.0, 0.0, 0.5], 1e-9));
    }

    #[test]
    fn noise_shrinks_and_gate() {
        let clean = atoms(Gate::And, 0.0);
        let noisy = atoms(Gate::And, 0.1);
        assert!(noisy[0] < clean[0]);
        assert!(noisy[3] < clean[3]);
    }

    #[test]
    fn capability_limits() {
        let big = JointPmf::from_fn(Dims::new(5, 2, 2), |_, _, _| 1.0).unwrap();
        assert!(matches!(brute_force_pid(&big, 10), Err(Error::Capability(_))));
        let many = JointPmf::from_fn(Dims::new(3, 3, 2), |_, _, _| 1.0).unwrap();
        assert!(matches!(brute_force_pid(&many, 10), Err(Error::Capability(_))));
    }

    #[test]
    fn three_by_two_system_is_searched() {
        // Two labels, one with a 2x2 support (1 free coord), one with 3x2 (2 free).
        let p = JointPmf::from_fn(Dims::new(3, 2, 2), |a, b, y| match y {
            0 if a < 2 => 1.0 + (a + b) as f64,
            0 => 0.0,
            _ => 2.0 + (a * b) as f64,
        })
        .unwrap();
        let d = brute_force_pid(&p, DEFAULT_RESOLUTION).unwrap();
        assert!(d.residuals.max_identity_residual() < 1e-12);
        assert!(d.raw.as_array().iter().all(|v| *v > -1e-6));
    }
}
