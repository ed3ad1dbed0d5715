//! Exact PID atoms for discrete systems.
//!
//! The admissible set fixes `P(y)` and, for every label `y`, constrains the
//! conditional coupling `Q(x1, x2 | y)` to the transportation polytope with
//! margins `P(x1 | y)` and `P(x2 | y)`. Minimizing `I_Q(X1, X2; Y)` over it is
//! done by entropic mirror descent: a multiplicative gradient step on every
//! per-label table followed by a Sinkhorn re-projection, so every iterate is
//! feasible. The first iterate is the per-label product coupling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{self, Axis, Dims, JointPmf, ZERO_MASS};
use crate::sinkhorn::{scale_matrix, scale_matrix_newton};

/// Tolerance used when asserting membership of the admissible set.
pub const ADMISSIBLE_TOL: f64 = 1e-6;
/// A consistency identity off by more than this is treated as a bug.
pub const CONSISTENCY_FAIL: f64 = 1e-4;

/// The four PID atoms plus the total `I(X1, X2; Y)` they partition, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidAtoms {
    pub redundancy: f64,
    pub unique1: f64,
    pub unique2: f64,
    pub synergy: f64,
    pub total: f64,
}

impl PidAtoms {
    pub fn zero() -> Self {
        PidAtoms {
            redundancy: 0.0,
            unique1: 0.0,
            unique2: 0.0,
            synergy: 0.0,
            total: 0.0,
        }
    }

    /// `[R, U1, U2, S]`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.redundancy, self.unique1, self.unique2, self.synergy]
    }

    pub fn clamped(&self) -> Self {
        PidAtoms {
            redundancy: self.redundancy.max(0.0),
            unique1: self.unique1.max(0.0),
            unique2: self.unique2.max(0.0),
            synergy: self.synergy.max(0.0),
            total: self.total,
        }
    }

    /// Index into `[R, U1, U2, S]` of the largest atom.
    pub fn dominant(&self) -> usize {
        let a = self.as_array();
        (0..4).fold(0, |best, i| if a[i] > a[best] { i } else { best })
    }
}

/// Signed residuals of the consistency identities linking atoms to plain
/// information terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `R + U1 + U2 + S - I(X1, X2; Y)`
    pub sum: f64,
    /// `R + U1 - I(X1; Y)`
    pub source1: f64,
    /// `R + U2 - I(X2; Y)`
    pub source2: f64,
    /// `R - S - CoI(X1; X2; Y)`
    pub co_information: f64,
    /// `I_Q(X1, X2; Y) - R`: how far the shortcut `R = I_Q(Y; X1, X2)` is
    /// from the redundancy implied by the identities. Diagnostic only.
    pub redundancy_shortcut: f64,
}

impl Residuals {
    pub fn max_identity_residual(&self) -> f64 {
        self.sum
            .abs()
            .max(self.source1.abs())
            .max(self.source2.abs())
            .max(self.co_information.abs())
    }
}

/// Atoms with the information terms they were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Atoms clamped at zero.
    pub atoms: PidAtoms,
    /// Atoms before clamping.
    pub raw: PidAtoms,
    /// `I(X1; Y)` under the data distribution.
    pub source1_information: f64,
    /// `I(X2; Y)` under the data distribution.
    pub source2_information: f64,
    /// `min I_Q(X1, X2; Y)` as reached by the optimizer.
    pub minimized_information: f64,
    pub residuals: Residuals,
}

/// Builds atoms from the five information terms via the consistency identities.
///
/// `S = I_P - I_Q`, `U1 = I_Q - I(X2;Y)`, `U2 = I_Q - I(X1;Y)`,
/// `R = I(X1;Y) - U1`. Shared by the discrete solver and the batch estimator.
pub fn atoms_from_information(
    total: f64,
    source1: f64,
    source2: f64,
    minimized: f64,
) -> Result<Decomposition> {
    let synergy = total - minimized;
    let unique1 = minimized - source2;
    let unique2 = minimized - source1;
    let redundancy = source1 - unique1;
    let raw = PidAtoms {
        redundancy,
        unique1,
        unique2,
        synergy,
        total,
    };
    let co_info = source1 + source2 - total;
    let residuals = Residuals {
        sum: redundancy + unique1 + unique2 + synergy - total,
        source1: redundancy + unique1 - source1,
        source2: redundancy + unique2 - source2,
        co_information: redundancy - synergy - co_info,
        redundancy_shortcut: minimized - redundancy,
    };
    for (name, v) in [
        ("R + U1 + U2 + S = I(X1,X2;Y)", residuals.sum),
        ("R + U1 = I(X1;Y)", residuals.source1),
        ("R + U2 = I(X2;Y)", residuals.source2),
        ("R - S = I(X1;X2;Y)", residuals.co_information),
    ] {
        if !(v.abs() <= CONSISTENCY_FAIL) {
            return Err(Error::Consistency {
                identity: name.to_string(),
                residual: v,
            });
        }
    }
    Ok(Decomposition {
        atoms: raw.clamped(),
        raw,
        source1_information: source1,
        source2_information: source2,
        minimized_information: minimized,
        residuals,
    })
}

/// The set of joints sharing `P(x1, y)` and `P(x2, y)` with a target.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    target: JointPmf,
    x1y: Vec<f64>,
    x2y: Vec<f64>,
}

impl AdmissibleSet {
    pub fn new(target: JointPmf) -> Self {
        let x1y = target.source_target(Axis::X1);
        let x2y = target.source_target(Axis::X2);
        AdmissibleSet { target, x1y, x2y }
    }

    pub fn target(&self) -> &JointPmf {
        &self.target
    }

    /// `P(x1, y)` as `n1 x k`.
    pub fn x1y(&self) -> &[f64] {
        &self.x1y
    }

    /// `P(x2, y)` as `n2 x k`.
    pub fn x2y(&self) -> &[f64] {
        &self.x2y
    }

    /// Largest absolute deviation of `q`'s source-target margins.
    pub fn deviation(&self, q: &JointPmf) -> Result<f64> {
        if q.dims() != self.target.dims() {
            return Err(Error::domain(format!(
                "dims {:?} do not match admissible set dims {:?}",
                q.dims(),
                self.target.dims()
            )));
        }
        let d1 = max_abs_diff(&q.source_target(Axis::X1), &self.x1y);
        let d2 = max_abs_diff(&q.source_target(Axis::X2), &self.x2y);
        Ok(d1.max(d2))
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// True iff both pairwise `(x_i, y)` margins of `q` are within `tol` of the set's.
pub fn check_marginals(q: &JointPmf, set: &AdmissibleSet, tol: f64) -> Result<bool> {
    Ok(set.deviation(q)? <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Constant step, halved whenever a step would raise the objective.
    Fixed,
    /// Like `Fixed`, but the step grows by half after each accepted move.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once an accepted step changes the objective by less than
    /// `tol * max(objective, 1)`.
    pub tol: f64,
    pub step_rule: StepRule,
    pub step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 10_000,
            tol: 1e-9,
            step_rule: StepRule::Fixed,
            step: 0.1,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.step > 0.0) {
            return Err(Error::domain(
                "solver options need tol > 0, max_iters >= 1 and step > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// The minimizing joint.
    pub q: JointPmf,
    /// Objective `I_Q(X1, X2; Y)` in bits after every accepted step, starting
    /// with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Certified bound on `I_Q - min I_Q` in bits at the returned joint.
    pub gap: f64,
}

const SINKHORN_SWEEPS: usize = 50;
const NEWTON_ITERS: usize = 50;
const SINKHORN_TOL: f64 = 1e-14;
const GAP_CHECK_EVERY: usize = 25;
/// Candidates whose projection misses the margins by more than this are rejected.
const PROJECTION_TOL: f64 = 1e-10;

/// `I_Q(X1, X2; Y)` in bits for a raw table laid out like [`JointPmf`].
fn joint_information(dims: Dims, q: &[f64], py: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(q.len());
    for cell in 0..dims.n1 * dims.n2 {
        let row = &q[cell * dims.k..(cell + 1) * dims.k];
        let qx: f64 = row.iter().sum();
        if qx <= ZERO_MASS {
            continue;
        }
        for (y, &v) in row.iter().enumerate() {
            if v > ZERO_MASS {
                terms.push(v * (v / (qx * py[y])).log2());
            }
        }
    }
    info::pairwise_sum(&terms)
}

/// Per-label state: the support of the two conditionals and the margins.
struct LabelBlock {
    y: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    r: Vec<f64>,
    c: Vec<f64>,
}

fn label_blocks(set: &AdmissibleSet, py: &[f64]) -> Vec<LabelBlock> {
    let Dims { n1, n2, k } = set.target.dims();
    (0..k)
        .filter(|&y| py[y] > ZERO_MASS)
        .map(|y| {
            let rows: Vec<usize> = (0..n1).filter(|&a| set.x1y[a * k + y] > ZERO_MASS).collect();
            let cols: Vec<usize> = (0..n2).filter(|&b| set.x2y[b * k + y] > ZERO_MASS).collect();
            let r = rows.iter().map(|&a| set.x1y[a * k + y]).collect();
            let c = cols.iter().map(|&b| set.x2y[b * k + y]).collect();
            LabelBlock { y, rows, cols, r, c }
        })
        .collect()
}

/// Re-projects each label's table onto its margins. Cells outside the label's
/// support stay zero.
/// Rescales every label block onto its margins; returns the worst L1 residual.
fn project(dims: Dims, q: &mut [f64], blocks: &[LabelBlock], scratch: &mut Vec<f64>) -> f64 {
    let mut worst = 0.0f64;
    for b in blocks {
        let (nr, nc) = (b.rows.len(), b.cols.len());
        scratch.clear();
        for &a in &b.rows {
            for &c in &b.cols {
                scratch.push(q[dims.index(a, c, b.y)]);
            }
        }
        let mut report = scale_matrix(scratch, nr, nc, &b.r, &b.c, SINKHORN_SWEEPS, SINKHORN_TOL);
        if report.residual > SINKHORN_TOL {
            report = scale_matrix_newton(scratch, nr, nc, &b.r, &b.c, NEWTON_ITERS, SINKHORN_TOL);
        }
        worst = worst.max(report.residual);
        for (ri, &a) in b.rows.iter().enumerate() {
            for (ci, &c) in b.cols.iter().enumerate() {
                q[dims.index(a, c, b.y)] = scratch[ri * nc + ci];
            }
        }
    }
    worst
}

/// Upper bound, in bits, on how far `q` is from the minimum of `I_Q(X1, X2; Y)`.
///
/// With `G = ln Q(y | x1, x2) - ln P(y)` the gradient, convexity gives
/// `f(q) - f* <= <G, q> - min_s <G, s>` over the admissible set. Per label,
/// potentials `alpha(x1) + beta(x2)` fitted to `G` by `q`-weighted least
/// squares and made dual feasible by one c-transform lower-bound that minimum.
fn certified_gap(dims: Dims, q: &[f64], py: &[f64], blocks: &[LabelBlock]) -> f64 {
    let mut gap = 0.0;
    for b in blocks {
        let (nr, nc) = (b.rows.len(), b.cols.len());
        let mut g = vec![0.0; nr * nc];
        let mut w = vec![0.0; nr * nc];
        for (ri, &a) in b.rows.iter().enumerate() {
            for (ci, &c) in b.cols.iter().enumerate() {
                let cell = a * dims.n2 + c;
                let qx: f64 = q[cell * dims.k..(cell + 1) * dims.k].iter().sum();
                let v = q[dims.index(a, c, b.y)];
                if v <= 0.0 || qx <= 0.0 {
                    // The gradient is unbounded below on an emptied cell.
                    return f64::INFINITY;
                }
                w[ri * nc + ci] = v;
                g[ri * nc + ci] = (v / (qx * py[b.y])).ln();
            }
        }
        let row_w: Vec<f64> = (0..nr).map(|i| w[i * nc..(i + 1) * nc].iter().sum()).collect();
        let col_w: Vec<f64> = (0..nc).map(|j| (0..nr).map(|i| w[i * nc + j]).sum()).collect();
        let mut alpha = vec![0.0; nr];
        let mut beta = vec![0.0; nc];
        for _ in 0..500 {
            let mut delta = 0.0f64;
            for i in 0..nr {
                if row_w[i] > 0.0 {
                    let s: f64 = (0..nc).map(|j| w[i * nc + j] * (g[i * nc + j] - beta[j])).sum();
                    let v = s / row_w[i];
                    delta = delta.max((v - alpha[i]).abs());
                    alpha[i] = v;
                }
            }
            for j in 0..nc {
                if col_w[j] > 0.0 {
                    let s: f64 = (0..nr).map(|i| w[i * nc + j] * (g[i * nc + j] - alpha[i])).sum();
                    let v = s / col_w[j];
                    delta = delta.max((v - beta[j]).abs());
                    beta[j] = v;
                }
            }
            if delta < 1e-14 {
                break;
            }
        }
        let mut lower = 0.0;
        for i in 0..nr {
            let a = (0..nc)
                .map(|j| g[i * nc + j] - beta[j])
                .fold(f64::INFINITY, f64::min);
            lower += a * b.r[i];
        }
        lower += beta.iter().zip(&b.c).map(|(x, c)| x * c).sum::<f64>();
        let linear: f64 = g.iter().zip(&w).map(|(x, v)| x * v).sum();
        gap += linear - lower;
    }
    (gap / std::f64::consts::LN_2).max(0.0)
}

/// Minimizes `I_Q(X1, X2; Y)` over the admissible set of `p`.
///
/// Never returns a joint worse than `p` itself: if the descent ends above
/// `I_p(X1, X2; Y)` the target is returned instead.
pub fn solve(p: &JointPmf, opts: &SolveOptions) -> Result<SolveOutcome> {
    opts.validate()?;
    let dims = p.dims();
    let set = AdmissibleSet::new(p.clone());
    let py = p.marginal(&[Axis::Y]);
    let live_labels = py.iter().filter(|&&v| v > ZERO_MASS).count();
    if live_labels <= 1 {
        return Ok(SolveOutcome {
            q: p.clone(),
            trace: vec![0.0],
            converged: true,
            iterations: 0,
            gap: 0.0,
        });
    }

    let blocks = label_blocks(&set, &py);
    let mut q = vec![0.0; dims.len()];
    for b in &blocks {
        for (&a, &ra) in b.rows.iter().zip(&b.r) {
            for (&c, &cc) in b.cols.iter().zip(&b.c) {
                q[dims.index(a, c, b.y)] = ra * cc / py[b.y];
            }
        }
    }
    let mut scratch = Vec::new();
    project(dims, &mut q, &blocks, &mut scratch);

    let mut f = joint_information(dims, &q, &py);
    let mut trace = vec![f];
    let mut step = opts.step;
    let mut converged = false;
    let mut iterations = 0;
    let mut candidate = vec![0.0; q.len()];
    let cells = dims.n1 * dims.n2;

    while iterations < opts.max_iters {
        iterations += 1;
        // Gradient of I_Q in nats: ln Q(y | x1, x2) - ln P(y).
        for cell in 0..cells {
            let row = &q[cell * dims.k..(cell + 1) * dims.k];
            let qx: f64 = row.iter().sum();
            for y in 0..dims.k {
                let idx = cell * dims.k + y;
                let v = q[idx];
                candidate[idx] = if v > 0.0 && qx > 0.0 {
                    let g = (v / (qx * py[y])).ln();
                    v * (-step * g).exp()
                } else {
                    0.0
                };
            }
        }
        let residual = project(dims, &mut candidate, &blocks, &mut scratch);
        let f_new = joint_information(dims, &candidate, &py);
        if residual <= PROJECTION_TOL && f_new <= f + 1e-13 {
            let change = f - f_new;
            std::mem::swap(&mut q, &mut candidate);
            f = f_new.min(f);
            trace.push(f);
            if opts.step_rule == StepRule::Backtracking {
                step = (step * 1.5).min(1e3);
            }
            if change.abs() <= opts.tol * f.max(1.0) {
                converged = true;
                break;
            }
            if trace.len() % GAP_CHECK_EVERY == 0
                && certified_gap(dims, &q, &py, &blocks) <= opts.tol * f.max(1.0)
            {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if step < 1e-14 {
                converged = true;
                break;
            }
        }
    }

    let f_p = joint_information(dims, p.table(), &py);
    if f_p < f {
        trace.push(f_p);
        q = p.table().to_vec();
    }
    let gap = certified_gap(dims, &q, &py, &blocks);
    let q = JointPmf::new(dims, q)
        .map_err(|e| Error::numeric(format!("solver left the simplex: {e}")))?;
    Ok(SolveOutcome {
        q,
        trace,
        converged,
        iterations,
        gap,
    })
}

/// PID atoms of `p` given a minimizer `q_tilde` of `I_Q(X1, X2; Y)` in its admissible set.
pub fn compute_atoms(p: &JointPmf, q_tilde: &JointPmf) -> Result<Decomposition> {
    let set = AdmissibleSet::new(p.clone());
    let dev = set.deviation(q_tilde)?;
    if dev > ADMISSIBLE_TOL {
        return Err(Error::domain(format!(
            "q_tilde is not in the admissible set (margin deviation {dev:.3e})"
        )));
    }
    let xy = [Axis::X1, Axis::X2];
    let total = info::mutual_information(p, &xy, &[Axis::Y])?;
    let source1 = info::mutual_information(p, &[Axis::X1], &[Axis::Y])?;
    let source2 = info::mutual_information(p, &[Axis::X2], &[Axis::Y])?;
    let minimized = info::mutual_information(q_tilde, &xy, &[Axis::Y])?;
    atoms_from_information(total, source1, source2, minimized)
}

/// Solves and decomposes in one go.
pub fn decompose(p: &JointPmf, opts: &SolveOptions) -> Result<(Decomposition, SolveOutcome)> {
    let outcome = solve(p, opts)?;
    let d = compute_atoms(p, &outcome.q)?;
    Ok((d, outcome))
}
