//! Vorticity functions ω(p) = b p + Σ δ_j ω_j(p) with mollifier-bump perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-height mollifier exp(1 - 1/(1 - s²)) on (-1, 1).
#[inline]
pub fn mollifier(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

#[inline]
fn mollifier_d1(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp() * (-2.0 * s / (q * q))
    }
}

#[inline]
fn mollifier_d2(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp() * (6.0 * s.powi(4) - 2.0) / (q * q * q * q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpElement {
    pub center: f64,
    pub radius: f64,
    pub weight: f64,
}

/// Finite combination of scaled mollifiers, supported in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBump {
    pub lo: f64,
    pub hi: f64,
    pub elements: Vec<BumpElement>,
}

impl SmoothBump {
    /// Single mollifier filling `[lo, hi]` with peak value `weight`.
    pub fn single(lo: f64, hi: f64, weight: f64) -> Result<Self> {
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return Err(Error::Invalid(format!(
                "bump support [{lo}, {hi}] must lie strictly inside (0, 1)"
            )));
        }
        Ok(Self {
            lo,
            hi,
            elements: vec![BumpElement {
                center: 0.5 * (lo + hi),
                radius: 0.5 * (hi - lo),
                weight,
            }],
        })
    }

    /// Linear combination Σ c_i b_i of bumps; support is the hull.
    pub fn combine(parts: &[SmoothBump], coeffs: &[f64]) -> Self {
        let mut elements = Vec::new();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (b, &c) in parts.iter().zip(coeffs) {
            lo = lo.min(b.lo);
            hi = hi.max(b.hi);
            for e in &b.elements {
                elements.push(BumpElement {
                    weight: e.weight * c,
                    ..*e
                });
            }
        }
        Self { lo, hi, elements }
    }

    pub fn zero() -> Self {
        Self {
            lo: 0.5,
            hi: 0.5,
            elements: Vec::new(),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.center).collect()
    }

    pub fn coeffs(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.weight).collect()
    }

    pub fn value(&self, p: f64) -> f64 {
        if p <= self.lo || p >= self.hi {
            return 0.0;
        }
        self.elements
            .iter()
            .map(|e| e.weight * mollifier((p - e.center) / e.radius))
            .sum()
    }

    pub fn derivative(&self, p: f64) -> f64 {
        if p <= self.lo || p >= self.hi {
            return 0.0;
        }
        self.elements
            .iter()
            .map(|e| e.weight * mollifier_d1((p - e.center) / e.radius) / e.radius)
            .sum()
    }

    pub fn second_derivative(&self, p: f64) -> f64 {
        if p <= self.lo || p >= self.hi {
            return 0.0;
        }
        self.elements
            .iter()
            .map(|e| e.weight * mollifier_d2((p - e.center) / e.radius) / (e.radius * e.radius))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.elements.iter().all(|e| e.weight == 0.0)
    }
}

/// How candidate supports are laid out inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BumpLayout {
    /// Equal disjoint sub-intervals of `[lo, hi]`.
    Partition {
        lo: f64,
        hi: f64,
    },
    /// Equal sub-intervals with fractional overlap between neighbours.
    Overlapping {
        lo: f64,
        hi: f64,
        overlap: f64,
    },
    Explicit {
        intervals: Vec<[f64; 2]>,
    },
}

impl BumpLayout {
    pub fn intervals(&self, n: usize) -> Result<Vec<[f64; 2]>> {
        match *self {
            BumpLayout::Partition { lo, hi } => {
                let h = (hi - lo) / n as f64;
                Ok((0..n)
                    .map(|i| [lo + i as f64 * h, lo + (i + 1) as f64 * h])
                    .collect())
            }
            BumpLayout::Overlapping { lo, hi, overlap } => {
                if !(0.0..1.0).contains(&overlap) {
                    return Err(Error::Invalid(format!("overlap {overlap} outside [0, 1)")));
                }
                let len = (hi - lo) / (1.0 + (n as f64 - 1.0) * (1.0 - overlap));
                let step = len * (1.0 - overlap);
                Ok((0..n)
                    .map(|i| {
                        let a = lo + i as f64 * step;
                        [a, if i + 1 == n { hi } else { a + len }]
                    })
                    .collect())
            }
            BumpLayout::Explicit { ref intervals } => {
                if intervals.len() != n {
                    return Err(Error::Invalid(format!(
                        "layout lists {} intervals, {n} requested",
                        intervals.len()
                    )));
                }
                Ok(intervals.clone())
            }
        }
    }
}

/// `n` unit-height single-mollifier bumps on the configured sub-intervals.
pub fn make_bump_basis(n: usize, layout: &BumpLayout) -> Result<Vec<SmoothBump>> {
    if n == 0 {
        return Err(Error::Invalid("bump count must be at least 1".into()));
    }
    layout
        .intervals(n)?
        .into_iter()
        .map(|[lo, hi]| SmoothBump::single(lo, hi, 1.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VorticityModel {
    pub b: f64,
    pub basis: Vec<SmoothBump>,
    pub delta: Vec<f64>,
}

impl VorticityModel {
    pub fn new(b: f64, basis: Vec<SmoothBump>, delta: Vec<f64>) -> Result<Self> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::Invalid(format!("b must be positive, got {b}")));
        }
        if basis.len() != delta.len() {
            return Err(Error::Invalid(format!(
                "basis has {} elements but delta has {}",
                basis.len(),
                delta.len()
            )));
        }
        Ok(Self { b, basis, delta })
    }

    /// Purely linear vorticity ω(p) = b p.
    pub fn linear(b: f64) -> Self {
        Self {
            b,
            basis: Vec::new(),
            delta: Vec::new(),
        }
    }

    pub fn with_delta(&self, delta: &[f64]) -> Self {
        Self {
            b: self.b,
            basis: self.basis.clone(),
            delta: delta.to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }

    pub fn is_unperturbed(&self) -> bool {
        self.delta.iter().all(|&d| d == 0.0)
    }

    pub fn omega(&self, p: f64) -> f64 {
        let mut v = self.b * p;
        for (w, &d) in self.basis.iter().zip(&self.delta) {
            if d != 0.0 {
                v += d * w.value(p);
            }
        }
        v
    }

    pub fn omega_prime(&self, p: f64) -> f64 {
        let mut v = self.b;
        for (w, &d) in self.basis.iter().zip(&self.delta) {
            if d != 0.0 {
                v += d * w.derivative(p);
            }
        }
        v
    }
}
