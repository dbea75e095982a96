use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{glorot_limit, ParamRng, ParamSet, Tensor};

/// Fully connected layer `y = W·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `[out × in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let p = Self { weight, bias };
        p.validate()?;
        Ok(p)
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut ParamRng) -> Self {
        Self {
            weight: rng.uniform(&[outputs, inputs], glorot_limit(inputs, outputs)),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weight.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::Config(format!("dense weight must be [out, in] with dims >= 1, got {s:?}")));
        }
        self.bias.expect_shape("dense bias", &[s[0]])
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl ParamSet for DenseParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
}

pub fn dense_forward(x: &[f64], params: &DenseParams) -> Result<(Vec<f64>, DenseCache)> {
    let (n_out, n_in) = (params.outputs(), params.inputs());
    if x.len() != n_in {
        return Err(Error::shape("dense input", &[n_in], &[x.len()]));
    }
    let w = params.weight.data();
    let y = (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            params.bias.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok((y, DenseCache { input: x.to_vec() }))
}

/// Returns `(grad_x, grad_params)`.
pub fn dense_backward(params: &DenseParams, cache: &DenseCache, grad_y: &[f64]) -> Result<(Vec<f64>, DenseParams)> {
    let (n_out, n_in) = (params.outputs(), params.inputs());
    if grad_y.len() != n_out {
        return Err(Error::shape("dense grad_y", &[n_out], &[grad_y.len()]));
    }
    if cache.input.len() != n_in {
        return Err(Error::shape("dense cache", &[n_in], &[cache.input.len()]));
    }
    let w = params.weight.data();
    let mut grad_x = vec![0.0; n_in];
    let mut grad_w = vec![0.0; n_out * n_in];
    for (o, &g) in grad_y.iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_w[o * n_in..(o + 1) * n_in];
        for ((gx, gw), (wv, xv)) in grad_x.iter_mut().zip(grow.iter_mut()).zip(row.iter().zip(&cache.input)) {
            *gx += wv * g;
            *gw = g * xv;
        }
    }
    Ok((
        grad_x,
        DenseParams {
            weight: Tensor::new(vec![n_out, n_in], grad_w)?,
            bias: Tensor::vector(grad_y.to_vec()),
        },
    ))
}
