use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected feed-forward network with a flat parameter vector.
///
/// Layer `l` stores its `out x in` weight matrix row-major, followed by its
/// `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    /// `inputs[l]` is the input of layer `l`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds the output")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Zero-initialized network. `activations[l]` applies after layer `l`.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "network needs at least two non-empty layers".into(),
            ));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::DimensionMismatch {
                expected: sizes.len() - 1,
                actual: activations.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))`; the last
    /// layer uses `U(-final_scale, final_scale)`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        let layers = net.layers();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers {
                final_scale
            } else {
                1.0 / (n_in as f64).sqrt()
            };
            for p in &mut net.params[off..off + n_in * n_out + n_out] {
                *p = rng.gen_range(-bound..=bound);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight `W[row][col]` and bias of layer `l`, as slices into the flat vector.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.sizes[..=l])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let act = self.activations[l];
            a = (0..n_out)
                .map(|i| {
                    let row = &w[i * n_in..(i + 1) * n_in];
                    act.apply(b[i] + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
                })
                .collect();
            off += n_in * n_out + n_out;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers() + 1);
        let mut pre = Vec::with_capacity(self.layers());
        inputs.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &inputs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|i| {
                    b[i] + w[i * n_in..(i + 1) * n_in]
                        .iter()
                        .zip(a)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
                })
                .collect();
            let act = self.activations[l];
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
            off += n_in * n_out + n_out;
        }
        Ok(ForwardCache {
            sizes: self.sizes.clone(),
            inputs,
            pre,
        })
    }

    /// Reverse-mode gradient of `output · upstream`.
    ///
    /// Parameter gradients are added into `grad` (same layout as the
    /// parameters); the gradient with respect to the input is returned.
    pub fn backward_into(&self, cache: &ForwardCache, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if cache.sizes != self.sizes {
            return Err(Error::InvalidArgument("no cached forward pass for this network".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let act = self.activations[l];
            for i in 0..n_out {
                delta[i] *= act.derivative(cache.pre[l][i], cache.inputs[l + 1][i]);
            }
            let x = &cache.inputs[l];
            let mut next = vec![0.0; n_in];
            for i in 0..n_out {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                let row = off + i * n_in;
                for j in 0..n_in {
                    grad[row + j] += d * x[j];
                    next[j] += d * self.params[row + j];
                }
                grad[off + n_in * n_out + i] += d;
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Parameter gradient and input gradient of `output · upstream`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(cache, upstream, &mut grad)?;
        Ok((grad, input_grad))
    }

    /// `self <- tau * other + (1 - tau) * self`.
    pub fn soft_update(&mut self, other: &DenseNet, tau: f64) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            *p += tau * (q - *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use Activation::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 4, 2], &[Relu, Identity]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = DenseNet::from_params(&[3, 3], &[Identity], params).unwrap();
        let x = [0.25, -1.5, 4.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn linear_layer_gradient_row_is_input() {
        let mut rng = seed::rng(1);
        let net = DenseNet::random(&[4, 3], &[Identity], 1.0, &mut rng).unwrap();
        let x = [0.5, -0.25, 2.0, 1.0];
        let cache = net.forward_cached(&x).unwrap();
        let (g, _) = net.backward(&cache, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(&g[4..8], &x);
        assert!(g[..4].iter().chain(&g[8..12]).all(|&v| v == 0.0));
        assert_eq!(&g[12..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut rng = seed::rng(2);
        let net = DenseNet::random(&[3, 5, 2], &[Tanh, Tanh], 1.0, &mut rng).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let (g, gx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    fn foreign_cache_is_rejected() {
        let a = DenseNet::zeros(&[2, 3, 1], &[Relu, Identity]).unwrap();
        let b = DenseNet::zeros(&[2, 4, 1], &[Relu, Identity]).unwrap();
        let cache = b.forward_cached(&[0.0, 0.0]).unwrap();
        assert!(matches!(a.backward(&cache, &[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_errors() {
        let net = DenseNet::zeros(&[2, 1], &[Identity]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(DenseNet::zeros(&[2, 1], &[Identity, Relu]).is_err());
        assert!(DenseNet::from_params(&[2, 1], &[Identity], vec![0.0; 2]).is_err());
    }
}
