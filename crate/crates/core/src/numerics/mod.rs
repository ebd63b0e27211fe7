//! Dense float64 tensors, named parameter storage and the handful of
//! differentiable layers the taggers are built from.
//!
//! Layers follow one pattern: `forward` returns its output together with a
//! tape of cached activations, and `backward` consumes the tape plus the
//! upstream gradient, accumulating parameter gradients into a [`ParamStore`]
//! of the same layout.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod rng;

use indexmap::IndexMap;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{BiLstm, BiLstmSpec, BiLstmTape};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data: rows.concat() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let c = self.shape[1];
        &mut self.data[i * c + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }
}

/// Ordered map of named parameter tensors (`component/layer_i/matrix`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::ShapeMismatch(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect(),
        }
    }

    /// Same names in the same order with the same shapes.
    pub fn is_aligned(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn check_aligned(&self, other: &ParamStore) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter stores have different layouts".into()))
        }
    }

    pub fn add_assign(&mut self, other: &ParamStore) {
        for ((_, a), (_, b)) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors.values_mut().for_each(|t| t.scale(k));
    }

    /// Value at a global flat coordinate (store order, then row-major).
    pub fn flat_get(&self, mut index: usize) -> Option<(&str, usize, f64)> {
        for (name, t) in &self.tensors {
            if index < t.len() {
                return Some((name, index, t.data()[index]));
            }
            index -= t.len();
        }
        None
    }

    pub fn flat_set(&mut self, mut index: usize, value: f64) {
        for t in self.tensors.values_mut() {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically guarded `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `y = W x + b` for `W: [out × in]`.
pub(crate) fn affine(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(cols, x.len());
    let wd = w.data();
    (0..rows)
        .map(|r| {
            let row = &wd[r * cols..(r + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + b.map_or(0.0, |b| b.data()[r])
        })
        .collect()
}

/// `dW += dy xᵀ`, `dx += Wᵀ dy`.
pub(crate) fn affine_backward(w: &Tensor, x: &[f64], dy: &[f64], dw: &mut Tensor, dx: Option<&mut [f64]>) {
    let cols = w.cols();
    let dwd = dw.data_mut();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, xv) in dwd[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(dx) = dx {
        let wd = w.data();
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dx.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                *d += g * wv;
            }
        }
    }
}

/// Glorot-uniform matrix initialization.
pub fn init_matrix(rows: usize, cols: usize, rng: &mut rng::Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor { shape: vec![rows, cols], data }
}

pub fn init_uniform(shape: &[usize], bound: f64, rng: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_guards_large_values() {
        assert!((log_sum_exp(&[1e6, 1e6]) - (1e6 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn store_flat_indexing() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        p.insert("b", Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(p.total_params(), 4);
        assert_eq!(p.flat_get(3), Some(("b", 1, 4.0)));
        p.flat_set(2, 9.0);
        assert_eq!(p.get("b").unwrap().data(), &[9.0, 4.0]);
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
        assert!(p.is_aligned(&p.zeros_like()));
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
