use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{glorot_limit, ParamRng, ParamSet, Tensor};

/// Multichannel 1-D convolution (cross-correlation, valid padding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1dParams {
    /// `[out_channels × in_channels × kernel]`
    pub kernels: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv1dParams {
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        let p = Self {
            kernels,
            bias,
            stride,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut ParamRng) -> Self {
        let limit = glorot_limit(in_channels * kernel, out_channels * kernel);
        Self {
            kernels: rng.uniform(&[out_channels, in_channels, kernel], limit),
            bias: Tensor::zeros(&[out_channels]),
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.kernels.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(Error::Config(format!("conv kernels must be [C_out, C_in, K] with all dims >= 1, got {s:?}")));
        }
        if self.stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        self.bias.expect_shape("conv bias", &[s[0]])
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.kernels.shape()[2]
    }
}

impl ParamSet for Conv1dParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.kernels, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernels, &mut self.bias]
    }
}

/// Output length of a valid convolution, or `None` when the window is longer than the input.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && stride > 0).then(|| (len - kernel) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    input: Tensor,
}

pub fn conv1d_forward(input: &Tensor, params: &Conv1dParams) -> Result<(Tensor, Conv1dCache)> {
    let (c_out, c_in, k) = (params.out_channels(), params.in_channels(), params.kernel());
    let stride = params.stride;
    if input.shape().len() != 2 || input.rows() != c_in {
        return Err(Error::shape("conv1d input", &[c_in, input.cols()], input.shape()));
    }
    let len = input.cols();
    let l_out = conv_output_len(len, k, stride).ok_or_else(|| Error::WindowTooLong {
        context: "conv1d".into(),
        kernel: k,
        len,
    })?;

    let x = input.data();
    let w = params.kernels.data();
    let mut out = vec![0.0; c_out * l_out];
    for (c, row) in out.chunks_exact_mut(l_out).enumerate() {
        row.fill(params.bias.data()[c]);
        for i in 0..c_in {
            let xi = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let wv = w[(c * c_in + i) * k + kk];
                if stride == 1 {
                    for (o, xv) in row.iter_mut().zip(&xi[kk..kk + l_out]) {
                        *o += wv * xv;
                    }
                } else {
                    for (t, o) in row.iter_mut().enumerate() {
                        *o += wv * xi[t * stride + kk];
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![c_out, l_out], out)?;
    Ok((
        out,
        Conv1dCache {
            input: input.clone(),
        },
    ))
}

/// Returns `(grad_input, grad_params)`.
pub fn conv1d_backward(params: &Conv1dParams, cache: &Conv1dCache, grad_output: &Tensor) -> Result<(Tensor, Conv1dParams)> {
    let (c_out, c_in, k) = (params.out_channels(), params.in_channels(), params.kernel());
    let stride = params.stride;
    let input = &cache.input;
    let len = input.cols();
    if input.rows() != c_in {
        return Err(Error::shape("conv1d cache", &[c_in, len], input.shape()));
    }
    let l_out = conv_output_len(len, k, stride).ok_or_else(|| Error::WindowTooLong {
        context: "conv1d backward".into(),
        kernel: k,
        len,
    })?;
    grad_output.expect_shape("conv1d grad_output", &[c_out, l_out])?;

    let x = input.data();
    let w = params.kernels.data();
    let go = grad_output.data();
    let mut grad_in = vec![0.0; c_in * len];
    let mut grad_w = vec![0.0; c_out * c_in * k];
    let mut grad_b = vec![0.0; c_out];

    for c in 0..c_out {
        let g = &go[c * l_out..(c + 1) * l_out];
        grad_b[c] = g.iter().sum();
        for i in 0..c_in {
            let xi = &x[i * len..(i + 1) * len];
            let gi = &mut grad_in[i * len..(i + 1) * len];
            for kk in 0..k {
                let widx = (c * c_in + i) * k + kk;
                let wv = w[widx];
                let mut acc = 0.0;
                if stride == 1 {
                    for ((gv, xv), gin) in g.iter().zip(&xi[kk..kk + l_out]).zip(&mut gi[kk..kk + l_out]) {
                        acc += gv * xv;
                        *gin += wv * gv;
                    }
                } else {
                    for (t, gv) in g.iter().enumerate() {
                        acc += gv * xi[t * stride + kk];
                        gi[t * stride + kk] += wv * gv;
                    }
                }
                grad_w[widx] = acc;
            }
        }
    }

    Ok((
        Tensor::new(vec![c_in, len], grad_in)?,
        Conv1dParams {
            kernels: Tensor::new(vec![c_out, c_in, k], grad_w)?,
            bias: Tensor::vector(grad_b),
            stride,
        },
    ))
}
