//! Fourier-feature tanh MLP.
//!
//! `(x, t)` is lifted by a fixed random matrix `W` (`d_e x 2`) to
//! `[sin(W z), cos(W z)]`, then passed through tanh hidden layers and a linear
//! scalar output. Architectures are written as `[2, h_1, ..., h_k, 1]`; the
//! embedding width is `h_1`, so `d_e = h_1 / 2`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub fourier_sigma: f64,
}

impl Architecture {
    pub fn new(widths: Vec<usize>, fourier_sigma: f64) -> Result<Self> {
        let arch = Self { widths, fourier_sigma };
        arch.validate()?;
        Ok(arch)
    }

    /// `[2, 256, 128, 128, 128, 1]`, sigma 10.
    pub fn parent() -> Self {
        Self { widths: vec![2, 256, 128, 128, 128, 1], fourier_sigma: 10.0 }
    }

    /// `[2, 256, 128, 128, 1]`, sigma 10.
    pub fn child() -> Self {
        Self { widths: vec![2, 256, 128, 128, 1], fourier_sigma: 10.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 || w[0] != 2 || *w.last().unwrap() != 1 {
            return Err(Error::Architecture(format!("widths must look like [2, ..., 1], got {w:?}")));
        }
        if w[1] == 0 || w[1] % 2 != 0 {
            return Err(Error::Architecture(format!("first hidden width {} must be even", w[1])));
        }
        if w.iter().any(|&n| n == 0) {
            return Err(Error::Architecture("zero-width layer".into()));
        }
        if !(self.fourier_sigma >= 0.0) {
            return Err(Error::Architecture("fourier sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.widths[1] / 2
    }

    /// `(fan_in, fan_out)` of every dense layer, embedding first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.widths[1]];
        dims.extend_from_slice(&self.widths[1..]);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `(fan_in, fan_out)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnNetwork<T> {
    pub arch: Architecture,
    /// Fixed Fourier matrix, `d_e x 2`. Never touched by an optimizer.
    pub fourier: Array2<T>,
    pub layers: Vec<Dense<T>>,
    pub seed: u64,
}

impl<T: Scalar> PinnNetwork<T> {
    /// Fourier entries from `N(0, sigma^2)`, dense layers uniform in
    /// `+-1/sqrt(fan_in)` (weights and biases), all from one seeded stream.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_e = arch.embedding_dim();
        let normal = Normal::new(0.0, arch.fourier_sigma)
            .map_err(|e| Error::Architecture(format!("fourier sigma: {e}")))?;
        let fourier = Array2::from_shape_fn((d_e, 2), |_| T::lit(normal.sample(&mut rng)));
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
                    T::lit(rng.random_range(-bound..bound))
                });
                let bias = Array1::from_shape_fn(fan_out, |_| T::lit(rng.random_range(-bound..bound)));
                Dense { weight, bias }
            })
            .collect();
        Ok(Self { arch: arch.clone(), fourier, layers, seed })
    }

    pub fn embedding_dim(&self) -> usize {
        self.fourier.nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn trainable_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `[sin(W z), cos(W z)]` for a single point.
    pub fn embed(&self, x: T, t: T) -> Array1<T> {
        let d_e = self.embedding_dim();
        let mut out = Array1::zeros(2 * d_e);
        for k in 0..d_e {
            let a = self.fourier[[k, 0]] * x + self.fourier[[k, 1]] * t;
            out[k] = a.sin();
            out[k + d_e] = a.cos();
        }
        out
    }

    /// Embedding of a batch of points (`n x 2`), `n x 2 d_e`.
    pub fn embed_batch(&self, points: ArrayView2<T>) -> Array2<T> {
        let d_e = self.embedding_dim();
        let phase = points.dot(&self.fourier.t());
        let mut out = Array2::zeros((points.nrows(), 2 * d_e));
        out.slice_mut(ndarray::s![.., ..d_e]).assign(&phase.mapv(T::sin));
        out.slice_mut(ndarray::s![.., d_e..]).assign(&phase.mapv(T::cos));
        out
    }

    /// Straight-line evaluation at one point.
    pub fn forward(&self, x: T, t: T) -> T {
        let mut h = self.embed(x, t);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (i, &hi) in h.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += hi * layer.weight[[i, j]];
                }
            }
            h = if l == last { z } else { z.mapv(T::tanh) };
        }
        h[0]
    }

    /// Batched evaluation, one output per row of `points`.
    pub fn forward_batch(&self, points: ArrayView2<T>) -> Array1<T> {
        let mut h = self.embed_batch(points);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if l != last {
                z.mapv_inplace(T::tanh);
            }
            h = z;
        }
        h.index_axis_move(Axis(1), 0)
    }

    /// Fresh network of `arch` sharing this network's Fourier matrix, with every
    /// dense layer whose shape matches copied over. Layers are matched by depth,
    /// and the output layer is matched to the output layer.
    pub fn transplant(&self, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut child = Self::init(arch, seed)?;
        if child.fourier.dim() != self.fourier.dim() {
            return Err(Error::Architecture(format!(
                "embedding width {} incompatible with parent {}",
                child.embedding_dim(),
                self.embedding_dim()
            )));
        }
        child.fourier.assign(&self.fourier);
        let n_child = child.layers.len();
        let n_parent = self.layers.len();
        for l in 0..n_child - 1 {
            if l < n_parent - 1 && child.layers[l].weight.dim() == self.layers[l].weight.dim() {
                child.layers[l] = self.layers[l].clone();
            }
        }
        if child.layers[n_child - 1].weight.dim() == self.layers[n_parent - 1].weight.dim() {
            child.layers[n_child - 1] = self.layers[n_parent - 1].clone();
        }
        Ok(child)
    }

    pub fn cast<U: Scalar>(&self) -> PinnNetwork<U> {
        let c = |v: &T| U::lit(v.as_f64());
        PinnNetwork {
            arch: self.arch.clone(),
            fourier: self.fourier.map(c),
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weight: l.weight.map(c), bias: l.bias.map(c) })
                .collect(),
            seed: self.seed,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let rows = |a: &Array2<T>| a.rows().into_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            seed: self.seed,
            fourier: rows(&self.fourier),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord { weight: rows(&l.weight), bias: l.bias.iter().map(|v| v.as_f64()).collect() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", ck.format_version)));
        }
        ck.arch.validate()?;
        let mat = |rows: &Vec<Vec<f64>>, shape: (usize, usize), what: &str| -> Result<Array2<T>> {
            if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
                return Err(Error::Architecture(format!("{what} does not match {shape:?}")));
            }
            Ok(Array2::from_shape_fn(shape, |(i, j)| T::lit(rows[i][j])))
        };
        let shapes = ck.arch.layer_shapes();
        if shapes.len() != ck.layers.len() {
            return Err(Error::Architecture(format!(
                "checkpoint has {} layers, architecture needs {}",
                ck.layers.len(),
                shapes.len()
            )));
        }
        let fourier = mat(&ck.fourier, (ck.arch.embedding_dim(), 2), "fourier matrix")?;
        let layers = shapes
            .iter()
            .zip(&ck.layers)
            .enumerate()
            .map(|(l, (&shape, rec))| {
                let weight = mat(&rec.weight, shape, &format!("layer {l} weight"))?;
                if rec.bias.len() != shape.1 {
                    return Err(Error::Architecture(format!("layer {l} bias length {}", rec.bias.len())));
                }
                Ok(Dense { weight, bias: rec.bias.iter().map(|&v| T::lit(v)).collect() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch: ck.arch.clone(), fourier, layers, seed: ck.seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Versioned JSON checkpoint of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Architecture,
    pub seed: u64,
    pub fourier: Vec<Vec<f64>>,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(path)?), self)?;
        Ok(())
    }
}
