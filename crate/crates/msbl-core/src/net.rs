//! Minimal feed-forward scoring networks with hand-written backpropagation.
//!
//! A network maps a context feature vector to one logit per action. Layers
//! are fully connected with ReLU between them (none after the last layer).
//! Parameters are stored flat, layer by layer, weight matrix (row-major,
//! `out x in`) before bias, which keeps serialization and optimizer state
//! trivial.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("input length {got} does not match network input dim {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter vector length {got} does not match spec ({expected})")]
    ParamLen { expected: usize, got: usize },
    #[error("upstream gradient length {got} does not match output dim {expected}")]
    UpstreamDim { expected: usize, got: usize },
}

/// Architecture of a scoring network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        assert!(input_dim >= 1 && output_dim >= 1);
        assert!(hidden_dims.iter().all(|d| *d >= 1));
        Self {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    /// Layer shapes as `(in, out)` pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total number of parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    /// Scaled uniform initialization in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn init_params(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_shapes() {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                params.push((2.0 * rng.next_f64() - 1.0) * a);
            }
            // Biases start at zero.
            params.extend(core::iter::repeat(0.0).take(fan_out));
        }
        params
    }
}

/// A spec plus a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringNet {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
}

impl ScoringNet {
    pub fn new(spec: NetworkSpec, params: Vec<f64>) -> Result<Self, NetError> {
        if params.len() != spec.param_count() {
            return Err(NetError::ParamLen {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Self { spec, params }
    }

    pub fn init(spec: NetworkSpec, rng: &mut RngStream) -> Self {
        let params = spec.init_params(rng);
        Self { spec, params }
    }

    /// Forward pass: logits, one per action.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_cached(input)?.pop().unwrap())
    }

    /// Forward pass keeping every layer's post-activation output.
    ///
    /// Returned vector holds `[h_1, ..., h_L]` where `h_L` are the logits;
    /// hidden layers are post-ReLU.
    fn forward_cached(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        if input.len() != self.spec.input_dim {
            return Err(NetError::InputDim {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        let shapes = self.spec.layer_shapes();
        let n_layers = shapes.len();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut offset = 0;
        let mut current: &[f64] = input;
        for (l, (fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut out = Vec::with_capacity(*fan_out);
            for o in 0..*fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(current.iter()) {
                    s += wi * xi;
                }
                if l + 1 < n_layers {
                    s = s.max(0.0); // ReLU on hidden layers
                }
                out.push(s);
            }
            activations.push(out);
            current = activations.last().unwrap();
        }
        Ok(activations)
    }

    /// Exact gradient of `logits . upstream` with respect to the parameters.
    ///
    /// `upstream` is `d objective / d logits`. Returns a flat gradient with
    /// the same layout as `params`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NetError> {
        if upstream.len() != self.spec.output_dim {
            return Err(NetError::UpstreamDim {
                expected: self.spec.output_dim,
                got: upstream.len(),
            });
        }
        let activations = self.forward_cached(input)?;
        let shapes = self.spec.layer_shapes();
        let mut grad = vec![0.0; self.params.len()];

        // Per-layer parameter offsets.
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (fan_in, fan_out) in &shapes {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[l];
            let off = offsets[l];
            let layer_input: &[f64] = if l == 0 { input } else { &activations[l - 1] };
            // ReLU mask on this layer's output for hidden layers: delta
            // already refers to post-activation; convert to pre-activation.
            if l + 1 < shapes.len() {
                for (d, h) in delta.iter_mut().zip(activations[l].iter()) {
                    if *h <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            // Weight and bias gradients.
            for o in 0..fan_out {
                let g = delta[o];
                if g != 0.0 {
                    let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                    for (gw, xi) in row.iter_mut().zip(layer_input.iter()) {
                        *gw += g * xi;
                    }
                }
                grad[off + fan_in * fan_out + o] += g;
            }
            // Propagate to the previous layer.
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let g = delta[o];
                    if g != 0.0 {
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        for (p, wi) in prev.iter_mut().zip(row.iter()) {
                            *p += g * wi;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(grad)
    }
}
