//! Banded LU factorization with partial pivoting.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// Row i stores columns i−kl ..= i+ku+kl (room for pivoting fill-in).
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let off = j as isize - i as isize + self.kl as isize;
        if off < 0 || off >= self.width as isize || j >= self.n {
            None
        } else {
            Some(i * self.width + off as usize)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Sets an entry inside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band"
        );
        let s = self.slot(i, j).expect("inside band");
        self.data[s] = v;
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + self.kl).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * self.kl.max(1)];
        let span = self.kl + self.ku;
        let scale = self.data.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best <= f64::EPSILON * 1e-4 * scale {
                return Err(Error::Invalid(format!(
                    "singular banded matrix at column {k}"
                )));
            }
            piv[k] = p;
            let right = (k + span).min(n - 1);
            if p != k {
                for j in k..=right {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    let sa = self.slot(k, j).unwrap();
                    let sb = self.slot(p, j).unwrap();
                    self.data[sa] = b;
                    self.data[sb] = a;
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let l = self.get(i, k) / pivot;
                lower[k * self.kl + (i - k - 1)] = l;
                if l != 0.0 {
                    for j in k + 1..=right {
                        let s = self.slot(i, j).unwrap();
                        self.data[s] -= l * self.get(k, j);
                    }
                }
                let s = self.slot(i, k).unwrap();
                self.data[s] = 0.0;
            }
        }
        Ok(BandLu {
            u: self,
            lower,
            piv,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    u: BandMatrix,
    lower: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.u.n;
        let kl = self.u.kl;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.lower[k * kl + (i - k - 1)] * x[k];
            }
        }
        let span = self.u.kl + self.u.ku;
        for k in (0..n).rev() {
            let right = (k + span).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=right {
                s -= self.u.get(k, j) * x[j];
            }
            x[k] = s / self.u.get(k, k);
        }
        x
    }
}
