use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{glorot_limit, sigmoid, ParamRng, ParamSet, Tensor};

/// One LSTM layer. Gate blocks are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    /// `[4·hidden × input]`
    pub w_input: Tensor,
    /// `[4·hidden × hidden]`
    pub w_recurrent: Tensor,
    /// `[4·hidden]`
    pub bias: Tensor,
}

impl LstmLayerParams {
    pub fn init(input: usize, hidden: usize, rng: &mut ParamRng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w_input: rng.uniform(&[4 * hidden, input], glorot_limit(input, 4 * hidden)),
            w_recurrent: rng.uniform(&[4 * hidden, hidden], glorot_limit(hidden, 4 * hidden)),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_input.shape()[1]
    }

    fn validate(&self, layer: usize) -> Result<()> {
        let h = self.w_recurrent.shape().get(1).copied().unwrap_or(0);
        let d = self.w_input.shape().get(1).copied().unwrap_or(0);
        if h == 0 || d == 0 {
            return Err(Error::Config(format!("lstm layer {layer}: hidden and input sizes must be >= 1")));
        }
        self.w_input.expect_shape(&format!("lstm layer {layer} w_input"), &[4 * h, d])?;
        self.w_recurrent.expect_shape(&format!("lstm layer {layer} w_recurrent"), &[4 * h, h])?;
        self.bias.expect_shape(&format!("lstm layer {layer} bias"), &[4 * h])
    }
}

impl ParamSet for LstmLayerParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_recurrent, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_recurrent, &mut self.bias]
    }
}

/// Stacked LSTM; layer `n` consumes the hidden sequence of layer `n − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LstmLayerParams>,
}

impl LstmParams {
    pub fn init(input: usize, hidden: usize, num_layers: usize, rng: &mut ParamRng) -> Self {
        let layers = (0..num_layers)
            .map(|l| LstmLayerParams::init(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("lstm needs at least one layer".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate(l)?;
            if l > 0 && layer.input() != self.layers[l - 1].hidden() {
                return Err(Error::shape(format!("lstm layer {l} input"), &[self.layers[l - 1].hidden()], &[layer.input()]));
            }
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers.last().map_or(0, LstmLayerParams::hidden)
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.tensors_mut()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// `[T × D]`
    inputs: Vec<f64>,
    /// `T + 1` rows, row 0 is the zero initial state
    hidden: Vec<f64>,
    cell: Vec<f64>,
    /// activated gates `[T × 4H]`
    gates: Vec<f64>,
    tanh_cell: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: usize,
    layers: Vec<LayerCache>,
}

fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn layer_forward(p: &LstmLayerParams, inputs: &[f64], steps: usize) -> LayerCache {
    let (h, d) = (p.hidden(), p.input());
    let mut hidden = vec![0.0; (steps + 1) * h];
    let mut cell = vec![0.0; (steps + 1) * h];
    let mut gates = vec![0.0; steps * 4 * h];
    let mut tanh_cell = vec![0.0; steps * h];
    let mut z = vec![0.0; 4 * h];
    for t in 0..steps {
        z.copy_from_slice(p.bias.data());
        matvec_acc(&mut z, p.w_input.data(), &inputs[t * d..(t + 1) * d]);
        matvec_acc(&mut z, p.w_recurrent.data(), &hidden[t * h..(t + 1) * h]);
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let c_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            g[j] = i_g;
            g[h + j] = f_g;
            g[2 * h + j] = c_g;
            g[3 * h + j] = o_g;
            let c_new = f_g * cell[t * h + j] + i_g * c_g;
            let tc = c_new.tanh();
            cell[(t + 1) * h + j] = c_new;
            tanh_cell[t * h + j] = tc;
            hidden[(t + 1) * h + j] = o_g * tc;
        }
    }
    LayerCache {
        inputs: inputs.to_vec(),
        hidden,
        cell,
        gates,
        tanh_cell,
    }
}

/// Runs the stack over `seq` (`[T × D]`). Returns the top layer's hidden
/// sequence `[T × hidden]`, its final row, and the cache.
pub fn lstm_forward(seq: &Tensor, params: &LstmParams) -> Result<(Tensor, Vec<f64>, LstmCache)> {
    let d = params.input_size();
    if seq.shape().len() != 2 || seq.cols() != d || seq.rows() == 0 {
        return Err(Error::shape("lstm input", &[seq.rows().max(1), d], seq.shape()));
    }
    let steps = seq.rows();
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut current = seq.data().to_vec();
    for layer in &params.layers {
        let cache = layer_forward(layer, &current, steps);
        let h = layer.hidden();
        current = cache.hidden[h..].to_vec();
        layers.push(cache);
    }
    let h = params.hidden_size();
    let last = current[(steps - 1) * h..].to_vec();
    Ok((Tensor::new(vec![steps, h], current)?, last, LstmCache { steps, layers }))
}

/// Backpropagates a gradient on the final hidden state of the top layer.
/// Returns `(grad_seq [T × D], grad_params)`.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, grad_last_hidden: &[f64]) -> Result<(Tensor, LstmParams)> {
    if cache.layers.len() != params.layers.len() {
        return Err(Error::shape("lstm cache layers", &[params.layers.len()], &[cache.layers.len()]));
    }
    let h_top = params.hidden_size();
    if grad_last_hidden.len() != h_top {
        return Err(Error::shape("lstm grad_last_hidden", &[h_top], &[grad_last_hidden.len()]));
    }
    let steps = cache.steps;

    // external gradient on each step's hidden output of the current layer
    let mut dh_ext = vec![0.0; steps * h_top];
    dh_ext[(steps - 1) * h_top..].copy_from_slice(grad_last_hidden);

    let mut grads: Vec<LstmLayerParams> = Vec::with_capacity(params.layers.len());
    for (p, c) in params.layers.iter().zip(&cache.layers).rev() {
        let (h, d) = (p.hidden(), p.input());
        if c.inputs.len() != steps * d {
            return Err(Error::shape("lstm cache inputs", &[steps * d], &[c.inputs.len()]));
        }
        let mut g_wi = vec![0.0; 4 * h * d];
        let mut g_wh = vec![0.0; 4 * h * h];
        let mut g_b = vec![0.0; 4 * h];
        let mut dx = vec![0.0; steps * d];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let wi = p.w_input.data();
        let wh = p.w_recurrent.data();

        for t in (0..steps).rev() {
            let g = &c.gates[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &c.cell[t * h..(t + 1) * h];
            let h_prev = &c.hidden[t * h..(t + 1) * h];
            let tc = &c.tanh_cell[t * h..(t + 1) * h];
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = dh_ext[t * h + j] + dh_next[j];
                let d_o = dh * tc[j];
                let dc = dc_next[j] + dh * o_g * (1.0 - tc[j] * tc[j]);
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            let x_t = &c.inputs[t * d..(t + 1) * d];
            let dx_t = &mut dx[t * d..(t + 1) * d];
            dh_next.fill(0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                g_b[r] += dzr;
                let wi_row = &wi[r * d..(r + 1) * d];
                let gwi_row = &mut g_wi[r * d..(r + 1) * d];
                for ((gw, xv), (dxv, wv)) in gwi_row.iter_mut().zip(x_t).zip(dx_t.iter_mut().zip(wi_row)) {
                    *gw += dzr * xv;
                    *dxv += wv * dzr;
                }
                let wh_row = &wh[r * h..(r + 1) * h];
                let gwh_row = &mut g_wh[r * h..(r + 1) * h];
                for ((gw, hv), (dhv, wv)) in gwh_row.iter_mut().zip(h_prev).zip(dh_next.iter_mut().zip(wh_row)) {
                    *gw += dzr * hv;
                    *dhv += wv * dzr;
                }
            }
        }

        grads.push(LstmLayerParams {
            w_input: Tensor::new(vec![4 * h, d], g_wi)?,
            w_recurrent: Tensor::new(vec![4 * h, h], g_wh)?,
            bias: Tensor::vector(g_b),
        });
        dh_ext = dx;
    }
    grads.reverse();
    let d0 = params.input_size();
    Ok((Tensor::new(vec![steps, d0], dh_ext)?, LstmParams { layers: grads }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, zeros_like, DEFAULT_FD_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, d: usize, h: usize, layers: usize) -> LstmParams {
        let mut p = LstmParams::init(d, h, layers, &mut ParamRng::new(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn zero_weights_stay_at_zero() {
        let p = zeros_like(&LstmParams::init(3, 4, 2, &mut ParamRng::new(1)));
        let seq = Tensor::new(vec![5, 3], (0..15).map(|v| v as f64).collect()).unwrap();
        let (hs, last, _) = lstm_forward(&seq, &p).unwrap();
        assert!(last.iter().all(|&v| v == 0.0));
        assert!(hs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn single_step_is_one_cell() {
        let p = random_params(3, 2, 3, 1);
        let x = [0.4, -0.9];
        let (_, last, _) = lstm_forward(&Tensor::new(vec![1, 2], x.to_vec()).unwrap(), &p).unwrap();
        let l = &p.layers[0];
        let h = 3;
        for j in 0..h {
            let z = |gate: usize| {
                let r = gate * h + j;
                l.bias.data()[r] + l.w_input.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
            };
            let c = sigmoid(z(0)) * z(2).tanh();
            let expect = sigmoid(z(3)) * c.tanh();
            assert!((last[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn last_hidden_is_final_row() {
        let p = random_params(5, 2, 3, 2);
        let seq = Tensor::new(vec![4, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.0]).unwrap();
        let (hs, last, _) = lstm_forward(&seq, &p).unwrap();
        assert_eq!(hs.row(3), &last[..]);
        assert!(lstm_forward(&Tensor::zeros(&[4, 3]), &p).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = random_params(9, 2, 3, 2);
        let seq = Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap();
        let (_, _, cache) = lstm_forward(&seq, &p).unwrap();
        let (gs, gp) = lstm_backward(&p, &cache, &[0.0; 3]).unwrap();
        assert!(gs.data().iter().all(|&v| v == 0.0));
        assert!(gp.flatten().iter().all(|&v| v == 0.0));
        assert!(lstm_backward(&p, &cache, &[0.0; 2]).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn one_by_one_single_step_hand_derivative() {
        // D = H = 1, T = 1. h = o·tanh(i·g), with z_k = w_k·x + b_k.
        let w = [0.3, -0.2, 0.5, 0.8];
        let b = [0.1, 1.0, -0.1, 0.2];
        let x = 0.7;
        let p = LstmParams {
            layers: vec![LstmLayerParams {
                w_input: Tensor::new(vec![4, 1], w.to_vec()).unwrap(),
                w_recurrent: Tensor::new(vec![4, 1], vec![0.4, -0.4, 0.6, 0.1]).unwrap(),
                bias: Tensor::vector(b.to_vec()),
            }],
        };
        let (_, _, cache) = lstm_forward(&Tensor::new(vec![1, 1], vec![x]).unwrap(), &p).unwrap();
        let (gs, gp) = lstm_backward(&p, &cache, &[1.0]).unwrap();

        let z: Vec<f64> = (0..4).map(|k| w[k] * x + b[k]).collect();
        let (i, g, o) = (sigmoid(z[0]), z[2].tanh(), sigmoid(z[3]));
        let c = i * g;
        let tc = c.tanh();
        let dc = o * (1.0 - tc * tc);
        let dz = [dc * g * i * (1.0 - i), 0.0, dc * i * (1.0 - g * g), tc * o * (1.0 - o)];
        let dx: f64 = (0..4).map(|k| w[k] * dz[k]).sum();
        assert!((gs.data()[0] - dx).abs() < 1e-15);
        for k in 0..4 {
            assert!((gp.layers[0].bias.data()[k] - dz[k]).abs() < 1e-15);
            assert!((gp.layers[0].w_input.data()[k] - dz[k] * x).abs() < 1e-15);
            // h_prev = 0
            assert_eq!(gp.layers[0].w_recurrent.data()[k], 0.0);
        }
    }

    fn fd_error(seed: u64) -> f64 {
        let (d, h, layers, steps) = (3, 4, 2, 5);
        let p = random_params(seed, d, h, layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let seq: Vec<f64> = (0..steps * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wts: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = Tensor::new(vec![steps, d], seq).unwrap();
        let loss = |s: &Tensor, p: &LstmParams| -> f64 { lstm_forward(s, p).unwrap().1.iter().zip(&wts).map(|(a, b)| a * b).sum() };
        let (_, _, cache) = lstm_forward(&seq, &p).unwrap();
        let (gs, gp) = lstm_backward(&p, &cache, &wts).unwrap();
        let rs = finite_diff_check(|f| Ok(loss(&Tensor::new(vec![steps, d], f.to_vec())?, &p)), seq.data(), gs.data(), DEFAULT_FD_EPS).unwrap();
        let rp = finite_diff_check(
            |f| {
                let mut q = p.clone();
                q.load_flat(f)?;
                Ok(loss(&seq, &q))
            },
            &p.flatten(),
            &gp.flatten(),
            DEFAULT_FD_EPS,
        )
        .unwrap();
        rs.max_rel_error.max(rp.max_rel_error)
    }

    #[test]
    fn backward_matches_finite_differences_over_seeds() {
        for seed in 0..20 {
            let err = fd_error(seed);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
