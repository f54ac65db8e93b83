//! Even cosine series on a uniform periodic grid.
//!
//! Fields are stored on the half grid x_p = pΛ/M, p = 0..=M/2, which carries
//! all information of an even Λ-periodic function sampled at M points.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CosineGrid {
    pub period: f64,
    /// Points per period on the full grid.
    pub m: usize,
    forward: DMatrix<f64>,
    inverse: DMatrix<f64>,
    dx: DMatrix<f64>,
    dxx: DMatrix<f64>,
}

impl CosineGrid {
    pub fn new(period: f64, m: usize) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::Invalid(format!(
                "x-grid size must be even and at least 4, got {m}"
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Invalid(format!(
                "period must be positive, got {period}"
            )));
        }
        let p = m / 2;
        let w = |i: usize| if i == 0 || i == p { 0.5 } else { 1.0 };
        let angle = |n: usize, q: usize| PI * (n * q) as f64 / p as f64;
        let forward = DMatrix::from_fn(p + 1, p + 1, |n, q| {
            2.0 * w(n) * w(q) / p as f64 * angle(n, q).cos()
        });
        let inverse = DMatrix::from_fn(p + 1, p + 1, |q, n| angle(n, q).cos());
        let kk = 2.0 * PI / period;
        let sin_part = DMatrix::from_fn(p + 1, p + 1, |q, n| -(n as f64) * kk * angle(n, q).sin());
        let cos2 = DMatrix::from_fn(p + 1, p + 1, |q, n| {
            -((n * n) as f64) * kk * kk * angle(n, q).cos()
        });
        let dx = &sin_part * &forward;
        let dxx = &cos2 * &forward;
        Ok(Self {
            period,
            m,
            forward,
            inverse,
            dx,
            dxx,
        })
    }

    /// Default size: 16 points per shortest wavelength, at least 64 per period.
    pub fn default_size(period: f64, k_max: f64) -> usize {
        let want = (16.0 * period * k_max / (2.0 * PI)).ceil() as usize;
        let m = want.max(64);
        m + m % 2
    }

    pub fn half_len(&self) -> usize {
        self.m / 2 + 1
    }

    pub fn base_wavenumber(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn wavenumber(&self, n: usize) -> f64 {
        n as f64 * self.base_wavenumber()
    }

    /// Index n with k = n·2π/Λ, if k lies on the lattice.
    pub fn mode_index(&self, k: f64) -> Option<usize> {
        let n = (k / self.base_wavenumber()).round();
        if n >= 0.0
            && (n * self.base_wavenumber() - k).abs() <= 1e-9 * k.abs().max(1.0)
            && (n as usize) < self.half_len()
        {
            Some(n as usize)
        } else {
            None
        }
    }

    pub fn half_x(&self) -> Vec<f64> {
        (0..self.half_len())
            .map(|q| q as f64 * self.period / self.m as f64)
            .collect()
    }

    /// Full grid on [−Λ/2, Λ/2), node m/2 at x = 0.
    pub fn full_x(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| -0.5 * self.period + i as f64 * self.period / self.m as f64)
            .collect()
    }

    /// Half-grid index of full-grid node i.
    pub fn half_index(&self, i: usize) -> usize {
        (i as isize - (self.m / 2) as isize).unsigned_abs()
    }

    pub fn to_full(&self, half: &[f64]) -> Vec<f64> {
        (0..self.m).map(|i| half[self.half_index(i)]).collect()
    }

    pub fn to_full_rows(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, half.ncols(), |i, j| half[(self.half_index(i), j)])
    }

    pub fn to_half(&self, full: &[f64]) -> Vec<f64> {
        (0..self.half_len())
            .map(|q| full[(q + self.m / 2) % self.m])
            .collect()
    }

    pub fn to_half_rows(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.half_len(), full.ncols(), |q, j| {
            full[((q + self.m / 2) % self.m, j)]
        })
    }

    /// Cosine coefficients c_n with f(x) = Σ c_n cos(n 2π x/Λ).
    pub fn coeffs(&self, half: &[f64]) -> Vec<f64> {
        mat_vec(&self.forward, half)
    }

    pub fn values(&self, coeffs: &[f64]) -> Vec<f64> {
        mat_vec(&self.inverse, coeffs)
    }

    pub fn coeffs_rows(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        &self.forward * half
    }

    pub fn values_rows(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.inverse * coeffs
    }

    /// f_x on the half grid (the odd derivative, sampled at x ≥ 0).
    pub fn dx(&self, half: &[f64]) -> Vec<f64> {
        mat_vec(&self.dx, half)
    }

    pub fn dxx(&self, half: &[f64]) -> Vec<f64> {
        mat_vec(&self.dxx, half)
    }

    pub fn dx_rows(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        &self.dx * half
    }

    pub fn dxx_rows(&self, half: &DMatrix<f64>) -> DMatrix<f64> {
        &self.dxx * half
    }

    /// (1/Λ)∫ f over one period, i.e. the mean.
    pub fn mean(&self, half: &[f64]) -> f64 {
        self.coeffs(half)[0]
    }

    /// Discrete L² norm over one period.
    pub fn l2(&self, half: &[f64]) -> f64 {
        let p = self.m / 2;
        let h = self.period / self.m as f64;
        let s: f64 = half
            .iter()
            .enumerate()
            .map(|(q, v)| if q == 0 || q == p { v * v } else { 2.0 * v * v })
            .sum();
        (s * h).sqrt()
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}
