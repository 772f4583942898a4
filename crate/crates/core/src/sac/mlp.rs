//! Fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so optimisers, target averaging and
//! finite-difference checks can treat a network as a point in `R^P`.
//! Batches are row-major `batch x width` matrices.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)`
/// of shape `k x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // strides of the logical (untransposed) operands
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    // gain and shift of the layer normalisation, if any
    ln: Option<(usize, usize)>,
}

/// Affine layers with rectifier activations on every hidden layer and an
/// identity output. Hidden layers may carry a layer normalisation between
/// the affine map and the rectifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPParams {
    widths: Vec<usize>,
    layer_norm: bool,
    layout: Vec<LayerLayout>,
    pub data: Vec<f64>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    // input of each layer
    inputs: Vec<Vec<f64>>,
    // normalised pre-activations and inverse std per row (layer norm only)
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    // rectifier outputs of hidden layers
    hidden: Vec<Vec<f64>>,
    fingerprint: usize,
}

impl MLPParams {
    /// PyTorch-style initialisation: weights and biases uniform in
    /// `+-1/sqrt(fan_in)`, normalisation gains one and shifts zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], layer_norm: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(widths, layer_norm);
        for l in &p.layout {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            for x in &mut p.data[l.w..l.w + l.fan_in * l.fan_out] {
                *x = u.sample(rng);
            }
            for x in &mut p.data[l.b..l.b + l.fan_out] {
                *x = u.sample(rng);
            }
            if let Some((g, _)) = l.ln {
                p.data[g..g + l.fan_out].fill(1.0);
            }
        }
        p
    }

    pub fn zeros(widths: &[usize], layer_norm: bool) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "widths must be positive");
        let mut layout = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        let last = widths.len() - 2;
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = offset;
            let b = w + fan_in * fan_out;
            offset = b + fan_out;
            let ln = if layer_norm && i < last {
                let g = offset;
                offset += 2 * fan_out;
                Some((g, g + fan_out))
            } else {
                None
            };
            layout.push(LayerLayout { fan_in, fan_out, w, b, ln });
        }
        Self { widths: widths.to_vec(), layer_norm, layout, data: vec![0.0; offset] }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn has_layer_norm(&self) -> bool {
        self.layer_norm
    }

    /// Weight matrix (`fan_in x fan_out`, row-major) of layer `l`.
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layout[l];
        &mut self.data[lay.w..lay.w + lay.fan_in * lay.fan_out]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let lay = self.layout[l];
        &mut self.data[lay.b..lay.b + lay.fan_out]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Output for a `batch x input_dim` input.
    pub fn predict(&self, input: &[f64], batch: usize) -> Vec<f64> {
        self.forward(input, batch).0
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> (Vec<f64>, ForwardCache) {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape mismatch");
        let n_layers = self.layout.len();
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(n_layers),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            hidden: Vec::new(),
            fingerprint: self.data.len() ^ (self.widths.len() << 48),
        };
        let mut x = input.to_vec();
        for (i, lay) in self.layout.iter().enumerate() {
            let mut z = vec![0.0; batch * lay.fan_out];
            for row in z.chunks_exact_mut(lay.fan_out) {
                row.copy_from_slice(&self.data[lay.b..lay.b + lay.fan_out]);
            }
            gemm(batch, lay.fan_in, lay.fan_out, &x, false, &self.data[lay.w..], false, 1.0, &mut z);
            cache.inputs.push(x);
            if i + 1 == n_layers {
                return (z, cache);
            }
            if let Some((g, s)) = lay.ln {
                let d = lay.fan_out;
                let mut inv = vec![0.0; batch];
                for (r, row) in z.chunks_exact_mut(d).enumerate() {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    inv[r] = 1.0 / (var + LN_EPS).sqrt();
                    for v in row.iter_mut() {
                        *v = (*v - mean) * inv[r];
                    }
                }
                let mut y = z.clone();
                for row in y.chunks_exact_mut(d) {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = *v * self.data[g + k] + self.data[s + k];
                    }
                }
                cache.xhat.push(z);
                cache.inv_std.push(inv);
                z = y;
            }
            for v in z.iter_mut() {
                *v = v.max(0.0);
            }
            cache.hidden.push(z.clone());
            x = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Gradients for an upstream gradient on the output. Returns the
    /// parameter gradient (if `param_grad`) and the input gradient (if
    /// `input_grad`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        param_grad: bool,
        input_grad: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        assert_eq!(
            cache.fingerprint,
            self.data.len() ^ (self.widths.len() << 48),
            "cache does not belong to this network"
        );
        let batch = cache.batch;
        assert_eq!(output_grad.len(), batch * self.output_dim(), "output gradient shape");
        let mut grad = param_grad.then(|| vec![0.0; self.data.len()]);
        let mut dz = output_grad.to_vec();
        let n_layers = self.layout.len();
        for i in (0..n_layers).rev() {
            let lay = self.layout[i];
            if i + 1 < n_layers {
                // dz currently holds the gradient w.r.t. the rectifier output
                let h = &cache.hidden[i];
                for (g, &a) in dz.iter_mut().zip(h) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                if let Some((gain, shift)) = lay.ln {
                    let d = lay.fan_out;
                    let xhat = &cache.xhat[i];
                    let inv = &cache.inv_std[i];
                    if let Some(gr) = grad.as_mut() {
                        for (row_dy, row_x) in dz.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for k in 0..d {
                                gr[gain + k] += row_dy[k] * row_x[k];
                                gr[shift + k] += row_dy[k];
                            }
                        }
                    }
                    for (r, (row_dy, row_x)) in dz.chunks_exact_mut(d).zip(xhat.chunks_exact(d)).enumerate() {
                        let mut sum = 0.0;
                        let mut dot = 0.0;
                        for k in 0..d {
                            let dx = row_dy[k] * self.data[gain + k];
                            row_dy[k] = dx;
                            sum += dx;
                            dot += dx * row_x[k];
                        }
                        let scale = inv[r] / d as f64;
                        for k in 0..d {
                            row_dy[k] = scale * (d as f64 * row_dy[k] - sum - row_x[k] * dot);
                        }
                    }
                }
            }
            // dz is now the gradient w.r.t. the affine output of layer i
            if let Some(gr) = grad.as_mut() {
                gemm(lay.fan_in, batch, lay.fan_out, &cache.inputs[i], true, &dz, false, 0.0, &mut gr[lay.w..lay.w + lay.fan_in * lay.fan_out]);
                for row in dz.chunks_exact(lay.fan_out) {
                    for (k, v) in row.iter().enumerate() {
                        gr[lay.b + k] += v;
                    }
                }
            }
            if i == 0 && !input_grad {
                break;
            }
            let mut dx = vec![0.0; batch * lay.fan_in];
            gemm(batch, lay.fan_out, lay.fan_in, &dz, false, &self.data[lay.w..lay.w + lay.fan_in * lay.fan_out], true, 0.0, &mut dx);
            dz = dx;
        }
        let input = if input_grad { Some(dz) } else { None };
        (grad, input)
    }
}
