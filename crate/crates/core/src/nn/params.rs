//! Named parameter tensors and initialisers.

use std::ops::Index;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{lit, Scalar};

/// Ordered map of named 2-D tensors. Biases are stored as `1 x n` rows.
/// Gradients use the same type and layout as the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Array2<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// Adds `delta` into the named tensor.
    pub(crate) fn acc(&mut self, name: &str, delta: &Array2<T>) {
        let t = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        *t += delta;
    }

    /// Global L2 norm across every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.tensors.retain(|k, _| keep(k));
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        v.mapv(|x| U::from_f64(x.to_f64().expect("finite")).expect("castable")),
                    )
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Index<&str> for ParamStore<T> {
    type Output = Array2<T>;

    fn index(&self, name: &str) -> &Array2<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || lit(rng.random_range(-limit..limit)))
}

/// Square orthogonal matrix from the QR factorisation of a Gaussian draw.
pub fn orthogonal<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<T> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix column signs so the draw is uniform over the orthogonal group
    Array2::from_shape_fn((n, n), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        lit(q[(i, j)] * s)
    })
}
