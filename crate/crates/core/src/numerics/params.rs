use crate::error::{Error, Result};

use super::Tensor;

/// A fixed, ordered collection of learnable tensors.
///
/// The order returned by `tensors` and `tensors_mut` must agree; gradient
/// structs built from the same type line up element-for-element with it.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("flat parameter vector", &[n], &[flat.len()]));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// A zero-filled copy with identical structure.
pub fn zeros_like<P: ParamSet + Clone>(params: &P) -> P {
    let mut z = params.clone();
    for t in z.tensors_mut() {
        t.fill(0.0);
    }
    z
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: ParamSet>(dst: &mut P, src: &P) -> Result<()> {
    let src = src.tensors();
    let mut dst = dst.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::shape("gradient accumulation", &[dst.len()], &[src.len()]));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.add_assign(s)?;
    }
    Ok(())
}

pub fn scale_params<P: ParamSet>(params: &mut P, factor: f64) {
    for t in params.tensors_mut() {
        t.scale(factor);
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![self]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self]
    }
}

impl<P: ParamSet> ParamSet for Vec<P> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().flat_map(ParamSet::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().flat_map(ParamSet::tensors_mut).collect()
    }
}

impl<P: ParamSet> ParamSet for Option<P> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.as_ref().map(ParamSet::tensors).unwrap_or_default()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.as_mut().map(ParamSet::tensors_mut).unwrap_or_default()
    }
}
