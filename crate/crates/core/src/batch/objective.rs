use crate::error::{Error, Result};
use crate::sinkhorn::{project_pairs, PairTensor, ProjectedCoupling};

use super::mlp::{Activations, Mlp};

/// Default clamp on similarity logits before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;

/// The two label-conditioned encoders. Each maps a feature vector to `k`
/// rows of width `embed_dim`, stored label-major in the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub vision: Mlp,
    pub text: Mlp,
    pub embed_dim: usize,
    pub k: usize,
}

/// Encoder outputs for a batch, kept for the backward pass.
pub(crate) struct Encoded {
    pub n: usize,
    pub vision: Activations,
    pub text: Activations,
    /// Pre-clamp logits, label-major like [`PairTensor`].
    pub logits: PairTensor,
}

fn stack(rows: &[&[f64]], width: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::domain(format!("{what} row {i} has {} dims, expected {width}", r.len())));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

impl EncoderPair {
    /// Parameter `idx` counting through the vision encoder, then the text encoder.
    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let nv = self.vision.params.len();
        if idx < nv {
            &mut self.vision.params[idx]
        } else {
            &mut self.text.params[idx - nv]
        }
    }

    pub(crate) fn encode(&self, x1: &[&[f64]], x2: &[&[f64]]) -> Result<(Encoded, Vec<f64>, Vec<f64>)> {
        let n = x1.len();
        if x2.len() != n {
            return Err(Error::domain(format!("batch sizes differ: {n} vs {}", x2.len())));
        }
        if n == 0 {
            return Err(Error::domain("empty batch"));
        }
        let a = stack(x1, self.vision.input, "vision")?;
        let b = stack(x2, self.text.input, "text")?;
        let vision = self.vision.forward(&a, n);
        let text = self.text.forward(&b, n);
        for (acts, side) in [(&vision, "vision"), (&text, "text")] {
            if let Some(pos) = acts.out.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite {side} encoder output at sample {}",
                    pos / (self.embed_dim * self.k)
                )));
            }
        }
        let d = self.embed_dim;
        let w = d * self.k;
        let logits = PairTensor::from_fn(n, n, self.k, |i, j, y| {
            let f1 = &vision.out[i * w + y * d..i * w + (y + 1) * d];
            let f2 = &text.out[j * w + y * d..j * w + (y + 1) * d];
            f1.iter().zip(f2).map(|(p, q)| p * q).sum()
        });
        Ok((Encoded { n, vision, text, logits }, a, b))
    }
}

fn exp_clamped(logits: &PairTensor, clamp: f64) -> PairTensor {
    let (r, c, k) = logits.shape();
    PairTensor::from_fn(r, c, k, |i, j, y| logits.get(i, j, y).clamp(-clamp, clamp).exp())
}

/// `A[i][j][y] = exp(<f1(x1_i, y), f2(x2_j, y)>)`, logits clamped to `±clamp`.
pub fn build_similarity(params: &EncoderPair, x1: &[&[f64]], x2: &[&[f64]], clamp: f64) -> Result<PairTensor> {
    let (enc, _, _) = params.encode(x1, x2)?;
    Ok(exp_clamped(&enc.logits, clamp))
}

/// Sinkhorn projection of `a` onto per-label row and column targets.
pub fn sinkhorn_project(a: &PairTensor, row_targets: &[f64], col_targets: &[f64], iters: usize) -> Result<ProjectedCoupling> {
    project_pairs(a, row_targets, col_targets, iters, 1e-15)
}

/// `I_Q(X1, X2; Y)` in bits of a coupling whose entries sum to one.
pub fn coupling_information(q: &PairTensor) -> f64 {
    let (n1, n2, k) = q.shape();
    let label_mass: Vec<f64> = (0..k).map(|y| q.block(y).iter().sum()).collect();
    let mut terms = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            let cell: f64 = (0..k).map(|y| q.get(i, j, y)).sum();
            let mut t = 0.0;
            for (y, &py) in label_mass.iter().enumerate() {
                let v = q.get(i, j, y);
                if v > 0.0 {
                    t += v * (v / (cell * py)).log2();
                }
            }
            terms.push(t);
        }
    }
    crate::info::pairwise_sum(&terms)
}

/// Gradient with respect to the logits of `L(Q)` where `Q` is the exact
/// scaling of `exp(logits)` onto fixed margins, given `dL/dQ = g`.
///
/// Writing `Q = diag(u) A diag(v)`, a perturbation of the logits moves
/// `log Q` by its `Q`-weighted projection off the span of `a_i + b_j`; the
/// adjoint is `Q * (g - a_i - b_j)` with `(a, b)` the weighted least-squares fit.
pub(crate) fn implicit_backward(q: &PairTensor, g: &PairTensor) -> PairTensor {
    let (n1, n2, k) = q.shape();
    let mut out = PairTensor::zeros(n1, n2, k);
    for y in 0..k {
        let qb = q.block(y);
        let gb = g.block(y);
        let row_w: Vec<f64> = (0..n1).map(|i| qb[i * n2..(i + 1) * n2].iter().sum()).collect();
        let col_w: Vec<f64> = (0..n2).map(|j| (0..n1).map(|i| qb[i * n2 + j]).sum()).collect();
        let (mut a, mut b) = (vec![0.0; n1], vec![0.0; n2]);
        let scale = gb.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for _ in 0..5000 {
            let mut delta = 0.0f64;
            for i in 0..n1 {
                if row_w[i] > 0.0 {
                    let s: f64 = (0..n2).map(|j| qb[i * n2 + j] * (gb[i * n2 + j] - b[j])).sum();
                    let v = s / row_w[i];
                    delta = delta.max((v - a[i]).abs());
                    a[i] = v;
                }
            }
            for j in 0..n2 {
                if col_w[j] > 0.0 {
                    let s: f64 = (0..n1).map(|i| qb[i * n2 + j] * (gb[i * n2 + j] - a[i])).sum();
                    let v = s / col_w[j];
                    delta = delta.max((v - b[j]).abs());
                    b[j] = v;
                }
            }
            if delta <= 1e-13 * scale {
                break;
            }
        }
        let ob = out.block_mut(y);
        for i in 0..n1 {
            for j in 0..n2 {
                ob[i * n2 + j] = qb[i * n2 + j] * (gb[i * n2 + j] - a[i] - b[j]);
            }
        }
    }
    out
}

/// `dI_Q/dQ` in bits per unit mass, up to an additive constant.
fn information_gradient(q: &PairTensor) -> PairTensor {
    let (n1, n2, k) = q.shape();
    let label_mass: Vec<f64> = (0..k).map(|y| q.block(y).iter().sum()).collect();
    let mut cell = vec![0.0; n1 * n2];
    for y in 0..k {
        for (c, v) in cell.iter_mut().zip(q.block(y)) {
            *c += v;
        }
    }
    PairTensor::from_fn(n1, n2, k, |i, j, y| {
        let v = q.get(i, j, y);
        if v > 0.0 {
            (v / (cell[i * n2 + j] * label_mass[y])).log2()
        } else {
            0.0
        }
    })
}

/// Loss and parameter gradients of one batch.
pub(crate) struct BatchGrad {
    pub loss: f64,
    pub residual: f64,
    pub vision: Vec<f64>,
    pub text: Vec<f64>,
}

/// `I_Q` of the projected batch coupling and its gradient through both encoders.
pub(crate) fn batch_loss_and_grad(
    params: &EncoderPair,
    x1: &[&[f64]],
    x2: &[&[f64]],
    row_targets: &[f64],
    col_targets: &[f64],
    iters: usize,
    clamp: f64,
) -> Result<BatchGrad> {
    let (enc, a1, a2) = params.encode(x1, x2)?;
    let a = exp_clamped(&enc.logits, clamp);
    let proj = sinkhorn_project(&a, row_targets, col_targets, iters)?;
    let q = &proj.coupling;
    let loss = coupling_information(q);
    if !loss.is_finite() {
        return Err(Error::numeric("batch information is not finite"));
    }
    let d_logits = implicit_backward(q, &information_gradient(q));

    let (n, k, d) = (enc.n, params.k, params.embed_dim);
    let w = d * k;
    let mut d1 = vec![0.0; n * w];
    let mut d2 = vec![0.0; n * w];
    let (f1, f2) = (&enc.vision.out, &enc.text.out);
    for y in 0..k {
        for i in 0..n {
            for j in 0..n {
                let z = enc.logits.get(i, j, y);
                if z.abs() > clamp {
                    continue;
                }
                let g = d_logits.get(i, j, y);
                if g == 0.0 {
                    continue;
                }
                let (r1, r2) = (i * w + y * d, j * w + y * d);
                for t in 0..d {
                    d1[r1 + t] += g * f2[r2 + t];
                    d2[r2 + t] += g * f1[r1 + t];
                }
            }
        }
    }
    Ok(BatchGrad {
        loss,
        residual: proj.residual,
        vision: params.vision.backward(&a1, n, &enc.vision, &d1),
        text: params.text.backward(&a2, n, &enc.text, &d2),
    })
}

/// Loss only, for evaluation and finite-difference checks.
pub(crate) fn batch_information(
    params: &EncoderPair,
    x1: &[&[f64]],
    x2: &[&[f64]],
    row_targets: &[f64],
    col_targets: &[f64],
    iters: usize,
    clamp: f64,
) -> Result<(f64, f64)> {
    let a = build_similarity(params, x1, x2, clamp)?;
    let proj = sinkhorn_project(&a, row_targets, col_targets, iters)?;
    Ok((coupling_information(&proj.coupling), proj.residual))
}

/// Agreement between analytic and central-difference gradients of the batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `max |fd - analytic| / max(|fd|, |analytic|, 1e-6)` over parameters.
    pub worst_relative_error: f64,
    pub largest_gradient: f64,
    pub parameters: usize,
}

/// Compares every parameter's analytic gradient with a central difference of
/// step `h`, projecting to convergence so both sides see the same loss.
///
/// Parameters the per-label scaling absorbs (final-layer biases) have an exact
/// zero gradient; the `1e-6` floor keeps their rounding noise, about
/// `1e-16 / h`, from reading as relative error.
pub fn gradient_check(
    params: &EncoderPair,
    x1: &[&[f64]],
    x2: &[&[f64]],
    row_targets: &[f64],
    col_targets: &[f64],
    h: f64,
) -> Result<GradientCheck> {
    const ITERS: usize = 20_000;
    let g = batch_loss_and_grad(params, x1, x2, row_targets, col_targets, ITERS, LOGIT_CLAMP)?;
    let mut p = params.clone();
    let mut worst = 0.0f64;
    let analytic: Vec<f64> = g.vision.iter().chain(&g.text).copied().collect();
    for (idx, an) in analytic.iter().enumerate() {
        let keep = *p.param_mut(idx);
        *p.param_mut(idx) = keep + h;
        let up = batch_information(&p, x1, x2, row_targets, col_targets, ITERS, LOGIT_CLAMP)?.0;
        *p.param_mut(idx) = keep - h;
        let down = batch_information(&p, x1, x2, row_targets, col_targets, ITERS, LOGIT_CLAMP)?.0;
        *p.param_mut(idx) = keep;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    Ok(GradientCheck {
        worst_relative_error: worst,
        largest_gradient: analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        parameters: analytic.len(),
    })
}
