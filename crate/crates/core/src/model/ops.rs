//! Row-wise primitives shared by the forward and backward passes.

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * u * (1.0 + t)
}

#[inline]
pub fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// `1 / sqrt(mean(x^2) + eps)`.
#[inline]
pub fn inv_rms(x: &[f64], eps: f64) -> f64 {
    let ss = x.iter().fold(0.0, |acc, v| v.mul_add(*v, acc));
    1.0 / (ss / x.len() as f64 + eps).sqrt()
}

/// Backward of `y = g * x * r` with `r = inv_rms(x)`. Adds `dg` into `dgain` and
/// writes `dx`.
pub fn rms_norm_backward(x: &[f64], gain: &[f64], r: f64, dy: &[f64], dx: &mut [f64], dgain: Option<&mut [f64]>) {
    let d = x.len() as f64;
    let mut dot = 0.0;
    for i in 0..x.len() {
        dot += dy[i] * gain[i] * x[i];
    }
    let coef = r * r * r * dot / d;
    for i in 0..x.len() {
        dx[i] = r * gain[i] * dy[i] - coef * x[i];
    }
    if let Some(dg) = dgain {
        for i in 0..x.len() {
            dg[i] += dy[i] * x[i] * r;
        }
    }
}

/// Rotary position tables: `cos[p][i]`, `sin[p][i]` for `i < head_dim/2`.
pub struct Rope {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Rope {
    pub fn new(head_dim: usize, base: f64, start: usize, count: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(count * half);
        let mut sin = Vec::with_capacity(count * half);
        for p in start..start + count {
            for i in 0..half {
                let inv_freq = base.powf(-((2 * i) as f64) / head_dim as f64);
                let angle = p as f64 * inv_freq;
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Rope { half, cos, sin }
    }

    /// Rotates every head of `row` (relative position index `p` in this table).
    pub fn apply(&self, row: &mut [f64], p: usize) {
        let c = &self.cos[p * self.half..(p + 1) * self.half];
        let s = &self.sin[p * self.half..(p + 1) * self.half];
        for head in row.chunks_exact_mut(2 * self.half) {
            let (a, b) = head.split_at_mut(self.half);
            for i in 0..self.half {
                let (x1, x2) = (a[i], b[i]);
                a[i] = x1 * c[i] - x2 * s[i];
                b[i] = x1 * s[i] + x2 * c[i];
            }
        }
    }

    /// Transpose of [`Rope::apply`].
    pub fn apply_transpose(&self, row: &mut [f64], p: usize) {
        let c = &self.cos[p * self.half..(p + 1) * self.half];
        let s = &self.sin[p * self.half..(p + 1) * self.half];
        for head in row.chunks_exact_mut(2 * self.half) {
            let (a, b) = head.split_at_mut(self.half);
            for i in 0..self.half {
                let (y1, y2) = (a[i], b[i]);
                a[i] = y1 * c[i] + y2 * s[i];
                b[i] = -y1 * s[i] + y2 * c[i];
            }
        }
    }
}

/// In-place softmax over `row[..=limit]`; entries past `limit` become zero.
pub fn causal_softmax(row: &mut [f64], limit: usize) {
    let max = row[..=limit].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..=limit] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..=limit] {
        *v /= sum;
    }
    for v in &mut row[limit + 1..] {
        *v = 0.0;
    }
}

/// `log(sum(exp(row)))`, numerically stable.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
