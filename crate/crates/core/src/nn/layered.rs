use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameter or gradient vector `(w_1 | ... | w_L)` stored contiguously with
/// per-layer boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredVector {
    data: Vec<f64>,
    // offsets[h]..offsets[h + 1] is layer h; offsets.len() == L + 1
    offsets: Vec<usize>,
}

impl LayeredVector {
    pub fn zeros(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self {
            data: vec![0.0; *offsets.last().unwrap()],
            offsets,
        }
    }

    pub fn from_layers<I, L>(layers: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: AsRef<[f64]>,
    {
        let mut data = Vec::new();
        let mut offsets = vec![0];
        for layer in layers {
            data.extend_from_slice(layer.as_ref());
            offsets.push(data.len());
        }
        Self { data, offsets }
    }

    /// Builds a vector with the layer structure of `self` holding `data`.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::Dimension {
                context: "LayeredVector::with_data",
                expected: self.data.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            data,
            offsets: self.offsets.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            offsets: self.offsets.clone(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        self.data.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn layer(&self, h: usize) -> &[f64] {
        &self.data[self.offsets[h]..self.offsets[h + 1]]
    }

    pub fn layer_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.data[self.offsets[h]..self.offsets[h + 1]]
    }

    pub fn layers(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.offsets.windows(2).map(|w| &self.data[w[0]..w[1]])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.offsets == other.offsets
    }

    pub(crate) fn check_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else if self.num_layers() != other.num_layers() {
            Err(Error::Dimension {
                context,
                expected: self.num_layers(),
                actual: other.num_layers(),
            })
        } else {
            Err(Error::Dimension {
                context,
                expected: self.total_dim(),
                actual: other.total_dim(),
            })
        }
    }

    pub fn norm(&self) -> f64 {
        l2(&self.data)
    }

    /// Euclidean norm of each layer part, in layer order.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers().map(l2).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_shape(other, "LayeredVector::axpy")?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_shape(other, "LayeredVector::add_assign")?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Free-function form of [`LayeredVector::layer_norms`].
pub fn layer_norms(v: &LayeredVector) -> Vec<f64> {
    v.layer_norms()
}
