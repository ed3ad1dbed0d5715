use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Three dense layers, ReLU after the first two.
///
/// Parameters live in one flat vector laid out as
/// `w1 (hidden x input), b1, w2 (hidden x hidden), b2, w3 (output x hidden), b3`
/// and are kept at values representable in `f32` so a saved model reloads exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

/// Post-activation values of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl Mlp {
    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + hidden * hidden + hidden + output * hidden + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            input,
            hidden,
            output,
            params: vec![0.0; Self::param_count(input, hidden, output)],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init for weights and biases.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let layers = [(input, hidden), (hidden, hidden), (hidden, output)];
        let mut at = 0;
        for (fan_in, fan_out) in layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut m.params[at..at + fan_in * fan_out + fan_out] {
                *v = round_f32(rng.random_range(-bound..bound));
            }
            at += fan_in * fan_out + fan_out;
        }
        m
    }

    fn offsets(&self) -> [usize; 6] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        [w1, b1, w2, b2, w3, b3]
    }

    /// `y = x W^T + b` for a row-major `n x fan_in` batch.
    fn dense(x: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
        let fan_out = b.len();
        let mut y = vec![0.0; n * fan_out];
        for r in 0..n {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for (a, c) in xr.iter().zip(wr) {
                    s += a * c;
                }
                y[r * fan_out + o] = if relu { s.max(0.0) } else { s };
            }
        }
        y
    }

    /// Forward pass over `n` rows of `x`.
    pub fn forward(&self, x: &[f64], n: usize) -> Activations {
        debug_assert_eq!(x.len(), n * self.input);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let p = &self.params;
        let (i, h, o) = (self.input, self.hidden, self.output);
        let h1 = Self::dense(x, n, i, &p[w1..b1], &p[b1..w2], true);
        let h2 = Self::dense(&h1, n, h, &p[w2..b2], &p[b2..w3], true);
        let out = Self::dense(&h2, n, h, &p[w3..b3], &p[b3..b3 + o], false);
        Activations { h1, h2, out }
    }

    /// Gradient of a loss with respect to the parameters, given its gradient
    /// `d_out` with respect to the outputs of [`Mlp::forward`].
    pub fn backward(&self, x: &[f64], n: usize, acts: &Activations, d_out: &[f64]) -> Vec<f64> {
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let (i, h, o) = (self.input, self.hidden, self.output);
        let p = &self.params;
        let mut g = vec![0.0; p.len()];

        // Accumulates weight/bias grads of one layer and returns the input grad.
        let layer = |g: &mut [f64], inp: &[f64], fan_in: usize, d: &[f64], fan_out: usize, w_at: usize, b_at: usize| {
            let mut d_in = vec![0.0; n * fan_in];
            for r in 0..n {
                let xr = &inp[r * fan_in..(r + 1) * fan_in];
                for k in 0..fan_out {
                    let dv = d[r * fan_out + k];
                    if dv == 0.0 {
                        continue;
                    }
                    g[b_at + k] += dv;
                    let gw = &mut g[w_at + k * fan_in..w_at + (k + 1) * fan_in];
                    for (gv, xv) in gw.iter_mut().zip(xr) {
                        *gv += dv * xv;
                    }
                    let wr = &p[w_at + k * fan_in..w_at + (k + 1) * fan_in];
                    let dr = &mut d_in[r * fan_in..(r + 1) * fan_in];
                    for (dx, wv) in dr.iter_mut().zip(wr) {
                        *dx += dv * wv;
                    }
                }
            }
            d_in
        };

        let mut d_h2 = layer(&mut g, &acts.h2, h, d_out, o, w3, b3);
        for (d, a) in d_h2.iter_mut().zip(&acts.h2) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let mut d_h1 = layer(&mut g, &acts.h1, h, &d_h2, h, w2, b2);
        for (d, a) in d_h1.iter_mut().zip(&acts.h1) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        layer(&mut g, x, i, &d_h1, h, w1, b1);
        g
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update; parameters are rounded back to `f32` precision afterwards.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] = round_f32(params[k] - self.lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Sum of outputs weighted by fixed coefficients, as a scalar test loss.
    fn loss(m: &Mlp, x: &[f64], n: usize, w: &[f64]) -> f64 {
        m.forward(x, n).out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, i, h, o) = (3, 4, 5, 6);
        let mut m = Mlp::init(i, h, o, &mut rng);
        let x: Vec<f64> = (0..n * i).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..n * o).map(|_| rng.random_range(-1.0..1.0)).collect();
        let acts = m.forward(&x, n);
        let g = m.backward(&x, n, &acts, &w);
        let step = 1e-6;
        for k in 0..m.params.len() {
            let keep = m.params[k];
            m.params[k] = keep + step;
            let up = loss(&m, &x, n, &w);
            m.params[k] = keep - step;
            let down = loss(&m, &x, n, &w);
            m.params[k] = keep;
            let fd = (up - down) / (2.0 * step);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn hand_computed_forward() {
        // One input, one hidden unit per layer, identity-ish weights.
        let m = Mlp {
            input: 1,
            hidden: 1,
            output: 1,
            params: vec![2.0, 0.5, 3.0, -1.0, -1.0, 0.25],
        };
        // h1 = relu(2*1.5 + 0.5) = 3.5; h2 = relu(3*3.5 - 1) = 9.5; out = -9.5 + 0.25.
        let a = m.forward(&[1.5], 1);
        assert_eq!(a.h1, vec![3.5]);
        assert_eq!(a.h2, vec![9.5]);
        assert_eq!(a.out, vec![-9.25]);
        assert_eq!(Mlp::param_count(1, 1, 1), 6);
    }

    #[test]
    fn init_is_seeded_and_f32_exact() {
        let a = Mlp::init(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(5));
        let b = Mlp::init(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.params.iter().all(|v| round_f32(*v) == *v));
        assert!(a.params[..12].iter().all(|v| v.abs() < 1.0 / 3f64.sqrt()));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut opt = Adam::new(3, 1e-3);
        opt.step(&mut p, &[0.3, -4.0, 0.0]);
        // With bias correction the first step is lr * g / (|g| + eps').
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-7);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-7);
        assert_eq!(p[2], 0.5);
    }
}
