//! Sturm-Liouville dispersion problem −φ'' − ω'(u)φ = μφ, φ(0) = 0, φ'(d) = κφ(d).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::simpson_weights;
use crate::roots::brent;
use crate::stream::{check_resonance, linear_stream, Resolution, StreamSolution, SLOPE_THRESHOLD};
use crate::vorticity::VorticityModel;

/// κ = 1/u'(d)² − ω(1)/u'(d).
pub fn kappa(stream: &StreamSolution, model: &VorticityModel) -> Result<f64> {
    let k = stream.slope_at_surface;
    if k.abs() < SLOPE_THRESHOLD {
        return Err(Error::DegenerateSlope { slope: k });
    }
    Ok(1.0 / (k * k) - model.omega(1.0) / k)
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub mu: f64,
    /// Values on the output grid.
    pub phi: Vec<f64>,
    pub phi_prime: Vec<f64>,
    pub phi_at_d: f64,
    /// L² norm of the shooting solution with φ'(0) = 1.
    pub normalization: f64,
    /// Values on the integrator grid.
    pub fine_phi: Vec<f64>,
    pub fine_phi_prime: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DispersionSpectrum {
    pub kappa: f64,
    pub pairs: Vec<EigenPair>,
    pub negative_count: usize,
    pub d: f64,
    pub resolution: Resolution,
}

impl DispersionSpectrum {
    pub fn mu(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.mu).collect()
    }

    pub fn fine_h(&self) -> f64 {
        self.d / self.resolution.eigen_steps() as f64
    }

    /// Gram matrix of the first `n` eigenfunctions on the integrator grid.
    pub fn gram(&self, n: usize) -> Vec<Vec<f64>> {
        let s = self.resolution.eigen_steps();
        let w = simpson_weights(s, self.fine_h());
        let n = n.min(self.pairs.len());
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b) = (&self.pairs[i].fine_phi, &self.pairs[j].fine_phi);
                        (0..=s).map(|k| w[k] * a[k] * b[k]).sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Prüfer-angle shooting for one (stream, model) pair.
pub struct Shooter {
    d: f64,
    steps: usize,
    q: Vec<f64>,
    kappa: f64,
    alpha: f64,
    substeps: usize,
}

impl Shooter {
    pub fn new(stream: &StreamSolution, model: &VorticityModel) -> Result<Self> {
        let kappa = kappa(stream, model)?;
        let q = stream
            .fine_u
            .iter()
            .map(|&u| model.omega_prime(u))
            .collect();
        Ok(Self {
            d: stream.d,
            steps: stream.resolution.eigen_steps(),
            q,
            kappa,
            alpha: (1.0f64).atan2(kappa),
            substeps: stream.resolution.substeps,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn integrate(
        &self,
        mu: f64,
        mut record: Option<&mut (Vec<f64>, Vec<f64>)>,
    ) -> (f64, f64, usize, f64) {
        let h = self.d / self.steps as f64;
        let (mut y, mut v) = (0.0f64, 1.0f64);
        let mut zeros = 0usize;
        let mut scale = 1.0f64;
        if let Some(r) = record.as_deref_mut() {
            r.0.push(0.0);
            r.1.push(1.0);
        }
        for i in 0..self.steps {
            let (q0, q1, q2) = (
                self.q[2 * i] + mu,
                self.q[2 * i + 1] + mu,
                self.q[2 * i + 2] + mu,
            );
            let k1y = v;
            let k1v = -q0 * y;
            let k2y = v + 0.5 * h * k1v;
            let k2v = -q1 * (y + 0.5 * h * k1y);
            let k3y = v + 0.5 * h * k2v;
            let k3v = -q1 * (y + 0.5 * h * k2y);
            let k4y = v + h * k3v;
            let k4v = -q2 * (y + h * k3y);
            let yn = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            let vn = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            if (yn > 0.0 && y < 0.0) || (yn < 0.0 && y > 0.0) || (yn == 0.0 && y != 0.0) {
                zeros += 1;
            }
            y = yn;
            v = vn;
            if let Some(r) = record.as_deref_mut() {
                r.0.push(y);
                r.1.push(v);
            } else if y.abs() + v.abs() > 1e150 {
                y *= 1e-150;
                v *= 1e-150;
                scale *= 1e-150;
            }
        }
        (y, v, zeros, scale)
    }

    /// Prüfer angle θ(d; μ) with θ(0) = 0.
    pub fn theta(&self, mu: f64) -> f64 {
        let (y, v, n, _) = self.integrate(mu, None);
        let s = if n % 2 == 0 { 1.0 } else { -1.0 };
        let mut t = (s * y).atan2(s * v);
        if t < 0.0 {
            // y landed exactly on a zero from the other side
            t += PI;
        }
        n as f64 * PI + t
    }

    /// Number of eigenvalues strictly below μ.
    pub fn count_below(&self, mu: f64) -> usize {
        let x = ((self.theta(mu) - self.alpha) / PI).ceil();
        if x > 0.0 {
            x as usize
        } else {
            0
        }
    }

    /// Monotone mismatch vanishing at the j-th eigenvalue (1-based).
    pub fn mismatch(&self, j: usize, mu: f64) -> f64 {
        self.theta(mu) - self.alpha - (j as f64 - 1.0) * PI
    }

    fn eigenpair(&self, mu: f64) -> EigenPair {
        let mut rec = (
            Vec::with_capacity(self.steps + 1),
            Vec::with_capacity(self.steps + 1),
        );
        self.integrate(mu, Some(&mut rec));
        let (mut phi, mut dphi) = rec;
        let w = simpson_weights(self.steps, self.d / self.steps as f64);
        let norm = phi
            .iter()
            .zip(&w)
            .map(|(p, w)| w * p * p)
            .sum::<f64>()
            .sqrt();
        for x in phi.iter_mut().chain(dphi.iter_mut()) {
            *x /= norm;
        }
        let coarse = |v: &[f64]| v.iter().step_by(self.substeps).copied().collect::<Vec<_>>();
        EigenPair {
            mu,
            phi: coarse(&phi),
            phi_prime: coarse(&dphi),
            phi_at_d: *phi.last().unwrap(),
            normalization: norm,
            fine_phi: phi,
            fine_phi_prime: dphi,
        }
    }
}

pub fn default_window(b: f64, d: f64, k_max: usize) -> (f64, f64) {
    (-b - 10.0, 10.0 * (PI * (k_max as f64 + 2.0) / d).powi(2))
}

/// First `k_max` eigenpairs (more if an explicit window holds more).
///
/// With `window = None` the default window is widened until it holds the
/// requested eigenvalues; an explicit window is used as given.
pub fn sturm_liouville_spectrum(
    stream: &StreamSolution,
    model: &VorticityModel,
    k_max: usize,
    window: Option<(f64, f64)>,
) -> Result<DispersionSpectrum> {
    let sh = Shooter::new(stream, model)?;
    let (mut lo, mut hi) = window.unwrap_or_else(|| default_window(model.b, stream.d, k_max));
    if !(lo < hi) {
        return Err(Error::Invalid(format!(
            "empty eigenvalue window [{lo}, {hi}]"
        )));
    }
    let mut below_lo = sh.count_below(lo);
    let mut below_hi = sh.count_below(hi);
    if window.is_none() {
        let mut tries = 0;
        while below_lo > 0 && tries < 60 {
            lo -= 2.0 * lo.abs().max(1.0);
            below_lo = sh.count_below(lo);
            tries += 1;
        }
        while below_hi < k_max && tries < 120 {
            hi += 2.0 * hi.abs().max(1.0);
            below_hi = sh.count_below(hi);
            tries += 1;
        }
    }
    let found = below_hi.saturating_sub(below_lo);
    if below_lo > 0 && window.is_none() || found < k_max {
        return Err(Error::WindowTooSmall {
            lo,
            hi,
            found,
            wanted: k_max,
        });
    }
    let wanted = if window.is_some() { found } else { k_max };
    let first = below_lo + 1;
    let mus: Vec<Result<f64>> = (first..first + wanted)
        .into_par_iter()
        .map(|j| {
            let xtol = 1e-14 * hi.abs().max(lo.abs()).max(1.0);
            brent(|m| sh.mismatch(j, m), lo, hi, xtol, 400)
                .map_err(|_| Error::BracketFailure { index: j })
        })
        .collect();
    let mus = mus.into_iter().collect::<Result<Vec<_>>>()?;
    for w in mus.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::BracketFailure { index: 0 });
        }
    }
    let pairs = mus.par_iter().map(|&m| sh.eigenpair(m)).collect();
    Ok(DispersionSpectrum {
        kappa: sh.kappa(),
        pairs,
        negative_count: sh.count_below(0.0),
        d: stream.d,
        resolution: stream.resolution,
    })
}

/// Count of negative eigenvalues from the oscillation index at μ = 0.
pub fn negative_count(stream: &StreamSolution, model: &VorticityModel) -> Result<usize> {
    Ok(Shooter::new(stream, model)?.count_below(0.0))
}

/// λ_j^D = (πj/d)² − b.
pub fn dirichlet_spectrum(b: f64, d: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|j| (PI * j as f64 / d).powi(2) - b).collect()
}

/// Residual of the linear-vorticity characteristic equation.
///
/// Oscillatory branch ν cos(νd) − κ sin(νd), ν = √(b+μ); for b + μ < 0 the
/// normalized hyperbolic form σ − κ tanh(σd).
pub fn characteristic_residual(b: f64, d: f64, kappa: f64, mu: f64) -> f64 {
    let s = b + mu;
    if s > 0.0 {
        let nu = s.sqrt();
        nu * (nu * d).cos() - kappa * (nu * d).sin()
    } else if s < 0.0 {
        let sg = (-s).sqrt();
        sg - kappa * (sg * d).tanh()
    } else {
        1.0 - kappa * d
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BSelection {
    pub b: f64,
    pub negative_count: usize,
    pub mu: Vec<f64>,
    pub dirichlet: Vec<f64>,
    pub interlacing: bool,
    pub observed: Vec<(f64, usize)>,
}

/// Checks μ_1 < λ_1^D and λ_j^D < μ_{j+1} < λ_{j+1}^D over negative pairs.
pub fn interlacing_holds(mu: &[f64], dirichlet: &[f64]) -> bool {
    if mu.is_empty() || dirichlet.is_empty() || !(mu[0] < dirichlet[0]) {
        return false;
    }
    for j in 1..mu.len() {
        if mu[j] >= 0.0 || j >= dirichlet.len() {
            break;
        }
        if dirichlet[j - 1] >= 0.0 {
            break;
        }
        if !(dirichlet[j - 1] < mu[j] && mu[j] < dirichlet[j]) {
            return false;
        }
    }
    true
}

fn count_for_b(b: f64, d: f64, res: Resolution) -> Result<usize> {
    let s = linear_stream(b, d, res)?;
    negative_count(&s, &VorticityModel::linear(b))
}

/// b with exactly `n` negative eigenvalues for the linear vorticity.
///
/// Starts from b = (π(N−1)/d)² + closeness and walks the grid
/// b_m = (πm/d)² + closeness upwards; count(b) is monotone, so a grid
/// overshoot is resolved by bisection in b.
pub fn select_b(n: usize, d: f64, closeness: f64, res: Resolution) -> Result<BSelection> {
    if n == 0 {
        return Err(Error::Invalid("N must be at least 1".into()));
    }
    if !(closeness > 0.0) || !(d > 0.0) {
        return Err(Error::Invalid(
            "closeness and depth must be positive".into(),
        ));
    }
    let unit = (PI / d).powi(2);
    let nudge = 1e-3 * unit;
    let mut observed = Vec::new();
    let eval = |b0: f64, observed: &mut Vec<(f64, usize)>| -> Result<(f64, usize)> {
        let mut b = b0;
        for _ in 0..20 {
            match count_for_b(b, d, res) {
                Ok(c) => {
                    observed.push((b, c));
                    return Ok((b, c));
                }
                Err(Error::Resonance { .. }) | Err(Error::DegenerateSlope { .. }) => b += nudge,
                Err(e) => return Err(e),
            }
        }
        Err(Error::SearchExhausted {
            wanted: n,
            observed: observed.clone(),
        })
    };
    let mut prev: Option<(f64, usize)> = None;
    let mut chosen = None;
    for m in (n - 1)..(n + 8) {
        let (b, c) = eval(unit * (m * m) as f64 + closeness, &mut observed)?;
        if c == n {
            chosen = Some(b);
            break;
        }
        if c > n {
            if let Some((mut lo, _)) = prev {
                let mut hi = b;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let (bm, cm) = eval(mid, &mut observed)?;
                    if cm == n {
                        chosen = Some(bm);
                        break;
                    } else if cm < n {
                        lo = bm;
                    } else {
                        hi = bm;
                    }
                }
            }
            break;
        }
        prev = Some((b, c));
    }
    let b = chosen.ok_or_else(|| Error::SearchExhausted {
        wanted: n,
        observed: observed.clone(),
    })?;
    check_resonance(b, d)?;
    let stream = linear_stream(b, d, res)?;
    let model = VorticityModel::linear(b);
    let spec = sturm_liouville_spectrum(&stream, &model, n + 1, None)?;
    let mu = spec.mu();
    let dirichlet = dirichlet_spectrum(b, d, n + 1);
    Ok(BSelection {
        b,
        negative_count: spec.negative_count,
        interlacing: interlacing_holds(&mu, &dirichlet),
        mu,
        dirichlet,
        observed,
    })
}

pub fn default_closeness(d: f64) -> f64 {
    0.1 * (PI / d).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::solve_stream;

    fn res() -> Resolution {
        Resolution::default()
    }

    fn lin(b: f64, d: f64) -> (StreamSolution, VorticityModel) {
        (
            linear_stream(b, d, res()).unwrap(),
            VorticityModel::linear(b),
        )
    }

    #[test]
    fn kappa_examples() {
        let (s, m) = lin(0.0, 1.0);
        assert_eq!(kappa(&s, &m).unwrap(), 1.0);
        let (s, m) = lin(0.0, 2.0);
        assert!((kappa(&s, &m).unwrap() - 4.0).abs() < 1e-14);
        let (s, m) = lin(1.0, 1.0);
        let t = 1f64.tan();
        let k = kappa(&s, &m).unwrap();
        assert!((k - (t * t - t)).abs() < 1e-13);
        assert!((k - 0.86810).abs() < 1e-4);
    }

    #[test]
    fn irrotational_zero_eigenvalue() {
        let (s, m) = lin(0.0, 1.0);
        assert_eq!(negative_count(&s, &m).unwrap(), 0);
        let sp = sturm_liouville_spectrum(&s, &m, 3, Some((-5.0, 100.0))).unwrap();
        assert!(sp.pairs[0].mu.abs() < 1e-10);
        let p = &sp.pairs[0];
        let c = 3f64.sqrt();
        for (k, z) in s.z_grid.iter().enumerate() {
            assert!((p.phi[k] - c * z).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_characteristic_equation() {
        for &(b, d) in &[(1.0, 1.0), (30.0, 1.0), (5.0, 2.0), (40.47, 1.0)] {
            let (s, m) = lin(b, d);
            let sp = sturm_liouville_spectrum(&s, &m, 6, None).unwrap();
            for p in &sp.pairs {
                let r = characteristic_residual(b, d, sp.kappa, p.mu);
                assert!(r.abs() < 1e-9, "b={b} mu={} r={r}", p.mu);
            }
            let neg = sp.pairs.iter().filter(|p| p.mu < 0.0).count();
            assert_eq!(neg, sp.negative_count);
        }
        let (s, m) = lin(1.0, 1.0);
        assert_eq!(negative_count(&s, &m).unwrap(), 1);
    }

    #[test]
    fn eigenpair_invariants() {
        let (s, m) = lin(30.0, 1.0);
        let sp = sturm_liouville_spectrum(&s, &m, 5, None).unwrap();
        let g = sp.gram(5);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[i][j] - e).abs() < 1e-8);
            }
        }
        for p in &sp.pairs {
            assert!(p.phi[0].abs() < 1e-14);
            assert!(p.phi_prime[0] > 0.0);
            let robin = p.phi_prime.last().unwrap() - sp.kappa * p.phi_at_d;
            assert!(robin.abs() < 1e-8, "{robin}");
        }
    }

    #[test]
    fn dirichlet_examples() {
        assert!((dirichlet_spectrum(1.0, 1.0, 1)[0] - 8.869604401089358).abs() < 1e-12);
        assert!((dirichlet_spectrum(11.0, 1.0, 1)[0] + 1.130395598910642).abs() < 1e-12);
        assert!(dirichlet_spectrum(PI * PI / 4.0, 2.0, 1)[0].abs() < 1e-14);
    }

    #[test]
    fn select_b_counts() {
        for n in 1..=3 {
            let sel = select_b(n, 1.0, default_closeness(1.0), res()).unwrap();
            assert_eq!(sel.negative_count, n);
            assert!(sel.interlacing, "{sel:?}");
            assert!(sel.mu[n] > 0.0);
        }
    }

    #[test]
    fn eigenvalues_decrease_with_b() {
        let mut prev: Option<Vec<f64>> = None;
        for k in 0..6 {
            let b = 40.0 + 3.0 * k as f64;
            let (s, m) = lin(b, 1.0);
            let mu = sturm_liouville_spectrum(&s, &m, 2, None).unwrap().mu();
            assert!(mu[1] < 0.0);
            if let Some(p) = prev {
                assert!(mu.iter().zip(&p).all(|(a, b)| a < b), "{mu:?} {p:?}");
            }
            prev = Some(mu);
        }
    }

    #[test]
    fn shooting_stream_gives_same_spectrum() {
        let m = VorticityModel::linear(30.0);
        let a = solve_stream(&m, 1.0, 1e-12, res()).unwrap();
        let b = linear_stream(30.0, 1.0, res()).unwrap();
        let ma = sturm_liouville_spectrum(&a, &m, 3, None).unwrap().mu();
        let mb = sturm_liouville_spectrum(&b, &m, 3, None).unwrap().mu();
        for (x, y) in ma.iter().zip(&mb) {
            assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
        }
    }
}
