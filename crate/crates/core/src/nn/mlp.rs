use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(fast_tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop(self, grad: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(out, |g, a| *g *= 1.0 - a * a),
            Activation::Relu => grad.zip_mut_with(out, |g, a| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// `tanh` through one `exp`; absolute error stays within a few ulps of 1.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Dense feed-forward network with a linear output layer.
///
/// Parameters live in one flat vector, layer by layer: the `in x out`
/// weight matrix (row-major) followed by the `out` biases. Optimizers and
/// the EMA shadow work on that vector directly, and the `*_with` methods
/// evaluate the same architecture under another parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations saved by a training forward pass.
pub struct ForwardCache {
    /// Input followed by every layer output; the last entry is the network output.
    layers: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.layers.last().expect("cache holds the input at least")
    }
}

fn num_params_for(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let n = num_params_for(&sizes);
        Ok(Self { sizes, activation, params: vec![0.0; n] })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: Vec<usize>, activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let mut off = 0;
        for w in net.sizes.clone().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1] + w[1]] {
                *p = rng.gen_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn from_params(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(sizes, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteDetected("network parameters".into()));
        }
        Ok(Self { params, ..net })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let off: usize = self.sizes[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((i, o), &params[off..off + i * o]).expect("layer shape");
        let b = ArrayView1::from(&params[off + i * o..off + i * o + o]);
        (w, b)
    }

    fn layer_mut<'a>(
        &self,
        grads: &'a mut [f64],
        l: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let off: usize = self.sizes[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let (wpart, rest) = grads[off..off + i * o + o].split_at_mut(i * o);
        (
            ArrayViewMut2::from_shape((i, o), wpart).expect("layer shape"),
            ArrayViewMut1::from(rest),
        )
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("network input".into()));
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise outputs for a batch.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_batch_with(&self.params, x)
    }

    /// Batch forward pass under an alternative parameter vector of the same shape.
    pub fn forward_batch_with(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.sizes.len() - 2;
        let mut h = x.to_owned();
        for l in 0..=last {
            let (w, b) = self.layer(params, l);
            let mut z = h.dot(&w);
            z += &b;
            if l < last {
                self.activation.apply(&mut z);
            }
            h = z;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("network output".into()));
        }
        Ok(h)
    }

    /// Forward pass that keeps what backpropagation needs.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.sizes.len() - 2;
        let mut layers = vec![x.to_owned()];
        for l in 0..=last {
            let (w, b) = self.layer(&self.params, l);
            let mut z = layers[l].dot(&w);
            z += &b;
            if l < last {
                self.activation.apply(&mut z);
            }
            layers.push(z);
        }
        if layers[last + 1].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("network output".into()));
        }
        Ok(ForwardCache { layers })
    }

    /// Gradients of `sum(upstream * output)` with respect to the parameters
    /// (flat, same layout as [`Mlp::params`]) and to the inputs.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let last = self.sizes.len() - 2;
        if upstream.dim() != cache.output().dim() {
            return Err(Error::InvalidArgument("upstream gradient shape differs from output".into()));
        }
        if upstream.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("upstream gradient".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_owned();
        for l in (0..=last).rev() {
            let a_prev = &cache.layers[l];
            {
                let (mut gw, mut gb) = self.layer_mut(&mut grads, l);
                gw.assign(&a_prev.t().dot(&delta));
                gb.assign(&delta.sum_axis(Axis(0)));
            }
            let (w, _) = self.layer(&self.params, l);
            let mut next = delta.dot(&w.t());
            if l > 0 {
                self.activation.backprop(&mut next, &cache.layers[l]);
            }
            delta = next;
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteDetected("parameter gradient".into()));
        }
        Ok((grads, delta))
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Softmax of one vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy `-sum_k target_k log softmax(logits)_k` summed over rows,
/// and its gradient with respect to the logits. Target rows may carry any
/// nonnegative total weight.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let logp = log_softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((lp, t), mut g) in logp.rows().into_iter().zip(targets.rows()).zip(grad.rows_mut()) {
        let total: f64 = t.sum();
        for k in 0..lp.len() {
            if t[k] != 0.0 {
                loss -= t[k] * lp[k];
            }
            g[k] = total * lp[k].exp() - t[k];
        }
    }
    (loss, grad)
}

/// Embeds `block` into columns `[start, start + block.ncols())` of a zero matrix.
pub fn place_columns(block: &Array2<f64>, start: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((block.nrows(), width));
    out.slice_mut(s![.., start..start + block.ncols()]).assign(block);
    out
}

/// Convenience for building a batch from rows.
pub fn batch_from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_logits() {
        let net = Mlp::zeros(vec![3, 5, 4], Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn cross_entropy_gradient_at_uniform_logits() {
        let k = 4;
        let logits = Array2::zeros((1, k));
        let mut t = Array2::zeros((1, k));
        t[[0, 0]] = 1.0;
        let (loss, g) = softmax_cross_entropy(logits.view(), t.view());
        assert!((loss - (k as f64).ln()).abs() < 1e-15);
        assert!((g[[0, 0]] + (1.0 - 1.0 / k as f64)).abs() < 1e-15);
        for j in 1..k {
            assert!((g[[0, j]] - 1.0 / k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(vec![2, 8, 3], Activation::Relu, &mut rng).unwrap();
        let rows = vec![vec![0.3, -0.2], vec![1.5, 0.7]];
        let batch = net.forward_batch(batch_from_rows(&rows).unwrap().view()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(batch.row(i).to_vec(), net.forward(r).unwrap());
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let net = Mlp::zeros(vec![2, 3], Activation::Tanh).unwrap();
        assert!(matches!(net.forward(&[f64::NAN, 0.0]), Err(Error::NonFiniteDetected(_))));
    }
}
