//! Discrete information measures in bits.
//!
//! Everything here works on exact probability tables. Probabilities below
//! [`ZERO_MASS`] are treated as exact zeros, so `0 log 0 = 0` and tiny
//! round-off mass never produces `-inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass below this is treated as an exact zero inside logarithms.
pub const ZERO_MASS: f64 = 1e-12;
/// Allowed deviation of a table's total mass from 1.
pub const MASS_TOL: f64 = 1e-9;
/// Negative information above `-MI_CLAMP_TOL` is round-off and clamps to 0.
pub const MI_CLAMP_TOL: f64 = 1e-9;

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("pmf must have at least one entry"));
        }
        validate_mass(&probs)?;
        Ok(Pmf { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("uniform pmf over zero outcomes"));
        }
        Ok(Pmf {
            probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

fn validate_mass(values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(format!("entry {i} is not a probability: {v}")));
        }
    }
    let total = pairwise_sum(values);
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::domain(format!("mass sums to {total}, expected 1")));
    }
    Ok(())
}

/// One of the three variables of a two-source system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X1,
    X2,
    Y,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::Y => 2,
        }
    }
}

/// Shape of a joint table: `(n1, n2, k)` states for `(X1, X2, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n1: usize,
    pub n2: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(n1: usize, n2: usize, k: usize) -> Self {
        Dims { n1, n2, k }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2 * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x1: usize, x2: usize, y: usize) -> usize {
        (x1 * self.n2 + x2) * self.k + y
    }
}

/// Joint distribution over `(X1, X2, Y)` stored row-major as `[x1][x2][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr")]
pub struct JointPmf {
    dims: Dims,
    table: Vec<f64>,
}

/// Unchecked wire form; deserialization goes through [`JointPmf::new`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointRepr {
    dims: Dims,
    table: Vec<f64>,
}

impl TryFrom<JointRepr> for JointPmf {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        JointPmf::new(r.dims, r.table)
    }
}

impl JointPmf {
    pub fn new(dims: Dims, table: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::domain("joint table has an empty axis"));
        }
        if table.len() != dims.len() {
            return Err(Error::domain(format!(
                "table has {} cells, dims {}x{}x{} need {}",
                table.len(),
                dims.n1,
                dims.n2,
                dims.k,
                dims.len()
            )));
        }
        validate_mass(&table)?;
        Ok(JointPmf { dims, table })
    }

    /// Normalizes non-negative weights into a joint table.
    pub fn from_weights(dims: Dims, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("weights must be finite and non-negative"));
        }
        let total = pairwise_sum(&weights);
        if total <= 0.0 {
            return Err(Error::domain("weights sum to zero"));
        }
        let table = weights.into_iter().map(|w| w / total).collect();
        JointPmf::new(dims, table)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut weights = Vec::with_capacity(dims.len());
        for x1 in 0..dims.n1 {
            for x2 in 0..dims.n2 {
                for y in 0..dims.k {
                    weights.push(f(x1, x2, y));
                }
            }
        }
        JointPmf::from_weights(dims, weights)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn get(&self, x1: usize, x2: usize, y: usize) -> f64 {
        self.table[self.dims.index(x1, x2, y)]
    }

    /// Marginal over `axes`, flattened in canonical axis order `X1, X2, Y`.
    pub fn marginal(&self, axes: &[Axis]) -> Vec<f64> {
        let mut keep = [false; 3];
        for a in axes {
            keep[a.index()] = true;
        }
        let sizes = [self.dims.n1, self.dims.n2, self.dims.k];
        let out_len: usize = (0..3).filter(|&i| keep[i]).map(|i| sizes[i]).product();
        let mut out = vec![0.0; out_len.max(1)];
        for x1 in 0..self.dims.n1 {
            for x2 in 0..self.dims.n2 {
                for y in 0..self.dims.k {
                    let coords = [x1, x2, y];
                    let mut idx = 0;
                    for i in 0..3 {
                        if keep[i] {
                            idx = idx * sizes[i] + coords[i];
                        }
                    }
                    out[idx] += self.get(x1, x2, y);
                }
            }
        }
        out
    }

    /// `P(x_i, y)` as an `n_i x k` row-major table.
    pub fn source_target(&self, source: Axis) -> Vec<f64> {
        match source {
            Axis::X1 => self.marginal(&[Axis::X1, Axis::Y]),
            Axis::X2 => self.marginal(&[Axis::X2, Axis::Y]),
            Axis::Y => panic!("source_target takes a source axis"),
        }
    }

    /// Relabels `Y` so that old label `y` becomes `perm[y]`.
    pub fn permute_labels(&self, perm: &[usize]) -> Result<Self> {
        let k = self.dims.k;
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::domain("label permutation is not a bijection"));
        }
        let mut table = vec![0.0; self.table.len()];
        for x1 in 0..self.dims.n1 {
            for x2 in 0..self.dims.n2 {
                for y in 0..k {
                    table[self.dims.index(x1, x2, perm[y])] = self.get(x1, x2, y);
                }
            }
        }
        Ok(JointPmf {
            dims: self.dims,
            table,
        })
    }

    /// Merges labels through `map` (old label to new label in `0..new_k`).
    pub fn merge_labels(&self, map: &[usize], new_k: usize) -> Result<Self> {
        if map.len() != self.dims.k || map.iter().any(|&m| m >= new_k) {
            return Err(Error::domain("label map out of range"));
        }
        let dims = Dims::new(self.dims.n1, self.dims.n2, new_k);
        let mut table = vec![0.0; dims.len()];
        for x1 in 0..self.dims.n1 {
            for x2 in 0..self.dims.n2 {
                for y in 0..self.dims.k {
                    table[dims.index(x1, x2, map[y])] += self.get(x1, x2, y);
                }
            }
        }
        JointPmf::new(dims, table)
    }
}

/// Sum with pairwise (cascade) reduction; deterministic for a given order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `-p log2 p` with the zero-mass convention.
#[inline]
pub(crate) fn neg_plogp(p: f64) -> f64 {
    if p <= ZERO_MASS {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Entropy in bits of raw (already normalized) masses.
pub(crate) fn entropy_raw(probs: &[f64]) -> f64 {
    let terms: Vec<f64> = probs.iter().map(|&p| neg_plogp(p)).collect();
    pairwise_sum(&terms)
}

/// Shannon entropy in bits.
pub fn entropy(p: &Pmf) -> f64 {
    entropy_raw(p.probs()).max(0.0)
}

/// `KL(p || q)` in bits for raw vectors. Mass of `p` where `q` is zero is an error.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "kl over vectors of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut terms = Vec::with_capacity(p.len());
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= ZERO_MASS {
            continue;
        }
        if qi <= ZERO_MASS {
            return Err(Error::numeric(format!(
                "kl undefined: q[{i}] = 0 while p[{i}] = {pi}"
            )));
        }
        terms.push(pi * (pi / qi).log2());
    }
    Ok(pairwise_sum(&terms).max(0.0))
}

pub(crate) fn clamp_information(value: f64, what: &str) -> Result<f64> {
    if value < -MI_CLAMP_TOL {
        return Err(Error::Consistency {
            identity: format!("{what} >= 0"),
            residual: value,
        });
    }
    Ok(value.max(0.0))
}

fn check_groups(groups: &[&[Axis]]) -> Result<()> {
    let mut seen = [false; 3];
    for g in groups {
        if g.is_empty() {
            return Err(Error::domain("axis group is empty"));
        }
        for a in g.iter() {
            if std::mem::replace(&mut seen[a.index()], true) {
                return Err(Error::domain(format!("axis {a:?} appears more than once")));
            }
        }
    }
    Ok(())
}

fn joint_entropy(j: &JointPmf, axes: &[Axis]) -> f64 {
    entropy_raw(&j.marginal(axes))
}

fn union(a: &[Axis], b: &[Axis]) -> Vec<Axis> {
    let mut out: Vec<Axis> = a.iter().chain(b).copied().collect();
    out.sort();
    out
}

/// `I(A; B)` between two disjoint groups of axes.
pub fn mutual_information(j: &JointPmf, group_a: &[Axis], group_b: &[Axis]) -> Result<f64> {
    check_groups(&[group_a, group_b])?;
    let value = joint_entropy(j, group_a) + joint_entropy(j, group_b)
        - joint_entropy(j, &union(group_a, group_b));
    clamp_information(value, "mutual information")
}

/// `I(A; B | C)` for three distinct axes.
pub fn conditional_mi(j: &JointPmf, a: Axis, b: Axis, given: Axis) -> Result<f64> {
    check_groups(&[&[a], &[b], &[given]])?;
    let value = joint_entropy(j, &union(&[a], &[given])) + joint_entropy(j, &union(&[b], &[given]))
        - joint_entropy(j, &[Axis::X1, Axis::X2, Axis::Y])
        - joint_entropy(j, &[given]);
    clamp_information(value, "conditional mutual information")
}

/// Co-information `I(X1;Y) + I(X2;Y) - I(X1,X2;Y)`; either sign.
pub fn co_information(j: &JointPmf) -> Result<f64> {
    let i1 = mutual_information(j, &[Axis::X1], &[Axis::Y])?;
    let i2 = mutual_information(j, &[Axis::X2], &[Axis::Y])?;
    let joint = mutual_information(j, &[Axis::X1, Axis::X2], &[Axis::Y])?;
    Ok(i1 + i2 - joint)
}
