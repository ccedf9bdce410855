//! Action-noise processes for environment interaction: deterministic
//! (zeros), white (iid Gaussian), and pink (1/f temporally correlated).
//!
//! Pink sequences are synthesized in the frequency domain: sample a complex
//! Gaussian spectrum, scale amplitudes by f^(-beta/2), inverse-transform,
//! and normalize each episode's sequence to zero mean and unit variance.

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Deterministic,
    White,
    Pink,
}

/// Per-episode buffered noise source; one instance per environment worker.
#[derive(Debug, Clone)]
pub struct NoiseProcess<T> {
    pub kind: NoiseKind,
    /// Pink spectral exponent; the periodogram of a generated sequence has
    /// log-log slope -beta.
    pub beta: f64,
    pub horizon: usize,
    pub dim: usize,
    sequence: Vec<T>,
    cursor: usize,
    primed: bool,
}

impl<T: Scalar> NoiseProcess<T> {
    pub fn new(kind: NoiseKind, dim: usize, horizon: usize, beta: f64) -> Self {
        assert!(dim >= 1 && horizon >= 1);
        Self {
            kind,
            beta,
            horizon,
            dim,
            sequence: Vec::new(),
            cursor: 0,
            primed: false,
        }
    }

    /// Generates a fresh sequence of `horizon` noise vectors and rewinds the
    /// cursor. Must be called at every episode start.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.sequence.clear();
        self.sequence.reserve(self.horizon * self.dim);
        match self.kind {
            NoiseKind::Deterministic => {
                self.sequence
                    .resize(self.horizon * self.dim, T::zero());
            }
            NoiseKind::White => {
                for _ in 0..self.horizon * self.dim {
                    self.sequence.push(T::standard_normal(rng));
                }
            }
            NoiseKind::Pink => {
                // Dimensions are synthesized one after another so each gets an
                // independent spectrum from the same stream.
                let mut cols = Vec::with_capacity(self.dim);
                for _ in 0..self.dim {
                    cols.push(pink_sequence(self.horizon, self.beta, rng));
                }
                for t in 0..self.horizon {
                    for col in &cols {
                        self.sequence.push(T::of(col[t]));
                    }
                }
            }
        }
        self.cursor = 0;
        self.primed = true;
    }

    /// Next unit-variance noise vector; the agent forms a = tanh(mu + sigma * eps).
    pub fn next_epsilon(&mut self) -> Result<Vec<T>> {
        if !self.primed || self.cursor >= self.horizon {
            return Err(Error::NoiseExhausted { cursor: self.cursor });
        }
        let start = self.cursor * self.dim;
        let eps = self.sequence[start..start + self.dim].to_vec();
        self.cursor += 1;
        Ok(eps)
    }

    pub fn remaining(&self) -> usize {
        if self.primed {
            self.horizon - self.cursor
        } else {
            0
        }
    }
}

/// One pink (1/f^beta) sequence of length `n`, normalized to zero mean and
/// unit sample variance.
fn pink_sequence<R: Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let freq = k as f64 / n as f64;
        let amp = freq.powf(-beta / 2.0);
        let re: f64 = f64::standard_normal(rng);
        let im: f64 = f64::standard_normal(rng);
        if k == half && n.is_multiple_of(2) {
            // Nyquist bin must stay real for a real signal.
            spectrum[k] = Complex64::new(amp * re, 0.0);
        } else {
            spectrum[k] = Complex64::new(amp * re, amp * im);
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut spectrum);

    let mut xs: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-12);
    for x in &mut xs {
        *x = (*x - mean) / std;
    }
    xs
}
