//! Minimal dense-network machinery: linear layers, an MLP with manual
//! reverse-mode gradients, and an Adam optimizer. Batches are `Array2`
//! rows; GEMMs go through `ndarray`'s matrixmultiply dispatch.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// x * sigmoid(x); smooth, the usual choice for probabilistic dynamics nets.
    Silu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            // Written so NaN propagates instead of being swallowed by
            // Float::max (max(NaN, 0) is 0), keeping divergence detectable.
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative as a function of the pre-activation.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    let cap = T::of(30.0);
    if x > cap {
        T::one()
    } else if x < -cap {
        x.exp()
    } else {
        T::one() / (T::one() + (-x).exp())
    }
}

/// ln(1 + e^x), overflow-safe.
pub fn softplus<T: Scalar>(x: T) -> T {
    let cap = T::of(30.0);
    if x > cap {
        x
    } else if x < -cap {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Fully connected layer; weights are stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform fan-in init, U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..bound));
        let w = Array2::from_shape_fn((d_out, d_in), |_| draw());
        let b = Array1::from_shape_fn(d_out, |_| draw());
        Self { w, b }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Array2::from_elem((d_out, d_in), T::zero()),
            b: Array1::from_elem(d_out, T::zero()),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w.nrows()
    }

    /// x: [batch, in] -> [batch, out]
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    /// Given dL/dy, accumulates parameter grads and returns dL/dx.
    pub fn backward(&self, x: &Array2<T>, d_out: &Array2<T>, grad: &mut LinearGrad<T>) -> Array2<T> {
        grad.w += &d_out.t().dot(x);
        grad.b += &d_out.sum_axis(Axis(0));
        d_out.dot(&self.w)
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrad<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> LinearGrad<T> {
    pub fn zeros_like(layer: &Linear<T>) -> Self {
        Self {
            w: Array2::from_elem(layer.w.raw_dim(), T::zero()),
            b: Array1::from_elem(layer.b.raw_dim(), T::zero()),
        }
    }
}

/// MLP: hidden layers followed by the activation, final layer linear.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activations saved by `forward_cached`.
pub struct MlpCache<T> {
    inputs: Vec<Array2<T>>,
    preacts: Vec<Array2<T>>,
}

pub struct MlpGrads<T> {
    pub layers: Vec<LinearGrad<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net.layers.iter().map(LinearGrad::zeros_like).collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for g in &self.layers {
            out.push(g.w.as_slice().expect("standard layout"));
            out.push(g.b.as_slice().expect("standard layout"));
        }
        out
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims` lists every layer width, input first: e.g. [3, 64, 64, 1].
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.d_in()).collect();
        d.push(self.layers.last().expect("nonempty").d_out());
        d
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("nonempty").d_out()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            h = if l < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z
            };
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(last);
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let z = layer.forward(&h);
            if l < last {
                preacts.push(z.clone());
                h = z.mapv(|v| self.activation.apply(v));
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, preacts })
    }

    /// Reverse pass from dL/d(output); accumulates into `grads`, returns dL/d(input).
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &Array2<T>, grads: &mut MlpGrads<T>) -> Array2<T> {
        let last = self.layers.len() - 1;
        let mut g = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                let dz = cache.preacts[l].mapv(|v| self.activation.derivative(v));
                g *= &dz;
            }
            g = self.layers[l].backward(&cache.inputs[l], &g, &mut grads.layers[l]);
        }
        g
    }

    /// Input gradient only; parameter gradients are not accumulated.
    pub fn backward_input(&self, cache: &MlpCache<T>, d_out: &Array2<T>) -> Array2<T> {
        let last = self.layers.len() - 1;
        let mut g = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                let dz = cache.preacts[l].mapv(|v| self.activation.derivative(v));
                g *= &dz;
            }
            g = g.dot(&self.layers[l].w);
        }
        g
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Polyak update: target <- tau * source + (1 - tau) * target.
pub fn polyak_update<T: Scalar>(target: &mut Mlp<T>, source: &Mlp<T>, tau: T) {
    let one_m = T::one() - tau;
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        tl.w.zip_mut_with(&sl.w, |t, &s| *t = tau * s + one_m * *t);
        tl.b.zip_mut_with(&sl.b, |t, &s| *t = tau * s + one_m * *t);
    }
}

/// Adam with bias correction. Weight decay, when wanted, is added to the
/// gradients by the caller before `step`.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over parallel parameter/gradient tensor lists.
    /// Tensor count and shapes must be identical on every call.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let corr1 = T::one() - b1.powi(self.t as i32);
        let corr2 = T::one() - b2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            debug_assert_eq!(p.len(), g.len());
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / corr1;
                let vh = v[i] / corr2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
