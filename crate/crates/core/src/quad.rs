//! Quadrature rules: Gauss-Legendre, adaptive Gauss-Kronrod, composite grid weights.

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Fixed Gauss-Legendre rule on [a, b].
pub fn gauss_on<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    nodes
        .0
        .iter()
        .zip(&nodes.1)
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
        * h
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    let mut abs = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        k += WGK[j] * (f1 + f2);
        abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    let abs = abs * h.abs();
    // error estimates below the rounding level of the rule are not meaningful
    (k * h, ((k - g) * h).abs().max(ROUNDOFF * abs), abs)
}

const ROUNDOFF: f64 = 50.0 * f64::EPSILON;

/// Globally adaptive Gauss-Kronrod (7-15) integration.
///
/// Returns the integral and the achieved error estimate, or a quadrature
/// error if the tolerance `max(abs_tol, rel_tol*|I|)` is not met.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (v, e, ab) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e, ab)];
    let mut total = v;
    let mut err = e;
    let mut abs_total = ab;
    let target = |total: f64, abs_total: f64| {
        abs_tol
            .max(rel_tol * total.abs())
            .max(2.0 * ROUNDOFF * abs_total)
    };
    for _ in 0..4000 {
        if err <= target(total, abs_total) {
            return Ok((total, err));
        }
        let (idx, _) =
            parts.iter().enumerate().fold(
                (0, -1.0),
                |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc },
            );
        let (lo, hi, pv, pe, pa) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let l = gk15(&f, lo, mid);
        let r = gk15(&f, mid, hi);
        total += l.0 + r.0 - pv;
        err += l.1 + r.1 - pe;
        abs_total += l.2 + r.2 - pa;
        parts.push((lo, mid, l.0, l.1, l.2));
        parts.push((mid, hi, r.0, r.1, r.2));
        // resum to avoid drift
        if parts.len() % 64 == 0 {
            total = parts.iter().map(|p| p.2).sum();
            err = parts.iter().map(|p| p.3).sum();
            abs_total = parts.iter().map(|p| p.4).sum();
        }
    }
    total = parts.iter().map(|p| p.2).sum();
    err = parts.iter().map(|p| p.3).sum();
    abs_total = parts.iter().map(|p| p.4).sum();
    if err <= target(total, abs_total) {
        Ok((total, err))
    } else {
        Err(Error::Quadrature {
            achieved: err,
            requested: target(total, abs_total),
        })
    }
}

/// Adaptive integration over consecutive pieces `[breaks[i], breaks[i+1]]`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let mut v = 0.0;
    let mut e = 0.0;
    let per = abs_tol / (breaks.len().max(2) - 1) as f64;
    for w in breaks.windows(2) {
        let (pv, pe) = integrate(&f, w[0], w[1], per, rel_tol)?;
        v += pv;
        e += pe;
    }
    Ok((v, e))
}

/// Composite Simpson weights for an even number of uniform intervals,
/// falling back to the trapezoid end correction on an odd count.
pub fn simpson_weights(intervals: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; intervals + 1];
    if intervals % 2 == 0 {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if i == 0 || i == intervals {
                h / 3.0
            } else if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            };
        }
    } else {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if i == 0 || i == intervals { 0.5 * h } else { h };
        }
    }
    w
}
