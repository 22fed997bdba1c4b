//! Uniform access to every scalar of a parameter (or gradient) structure.

use groundaug_core::relations::SpatialMlp;
use ndarray::{ArrayBase, DataMut, Dimension, RawData};

use crate::dense::LayerNorm;

/// A structure made of dense tensors. Gradients share the parameter type,
/// so `tensors` of a gradient lines up with `tensors` of its parameters.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn scalar_mut(&mut self, mut index: usize) -> &mut f64 {
        for t in self.tensors_mut() {
            if index < t.len() {
                return &mut t[index];
            }
            index -= t.len();
        }
        panic!("scalar index out of range");
    }
}

pub(crate) fn slice<S: RawData<Elem = f64> + ndarray::Data, D: Dimension>(a: &ArrayBase<S, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

pub(crate) fn slice_mut<S: DataMut<Elem = f64>, D: Dimension>(a: &mut ArrayBase<S, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}

impl ParamSet for LayerNorm {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.gamma), slice(&self.beta)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_mut(&mut self.gamma), slice_mut(&mut self.beta)]
    }
}

impl ParamSet for SpatialMlp {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.w1), slice(&self.b1), slice(&self.w2), slice(&self.b2)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.w1),
            slice_mut(&mut self.b1),
            slice_mut(&mut self.w2),
            slice_mut(&mut self.b2),
        ]
    }
}
