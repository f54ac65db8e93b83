//! Stream solutions u'' + ω(u) = 0, u(0) = 0, u(d) = 1 and their first-order perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Hermite5;
use crate::quad;
use crate::vorticity::{SmoothBump, VorticityModel};

/// Slopes below this magnitude violate the standing assumption u'(d) ≠ 0.
pub const SLOPE_THRESHOLD: f64 = 1e-8;
const RESONANCE_TOL: f64 = 1e-9;

/// Grid sizes shared by the stream, spectrum and strip solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// Intervals of the output z-grid.
    pub intervals: usize,
    /// Integrator steps per output interval for eigenfunction shooting;
    /// the stream itself is integrated with twice as many.
    pub substeps: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            intervals: 512,
            substeps: 32,
        }
    }
}

impl Resolution {
    pub fn eigen_steps(&self) -> usize {
        self.intervals * self.substeps
    }

    pub fn fine_intervals(&self) -> usize {
        2 * self.eigen_steps()
    }

    /// Default intervals with enough substeps to resolve a bump of half-width
    /// `radius` in p through a stream of maximum slope `max_slope`.
    pub fn resolving(max_slope: f64, radius: f64) -> Self {
        Self::resolving_with(Self::default().intervals, max_slope, radius)
    }

    pub fn resolving_with(intervals: usize, max_slope: f64, radius: f64) -> Self {
        let want = 64.0 * max_slope.abs() / (radius * intervals as f64);
        let mut substeps = Self::default().substeps;
        while (substeps as f64) < want && substeps < 1024 {
            substeps *= 2;
        }
        Self {
            intervals,
            substeps,
        }
    }

    pub fn doubled(&self) -> Self {
        Self {
            intervals: 2 * self.intervals,
            substeps: self.substeps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMethod {
    ClosedForm,
    Shooting,
}

#[derive(Debug, Clone)]
pub struct StreamSolution {
    pub d: f64,
    pub z_grid: Vec<f64>,
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub slope_at_surface: f64,
    pub method: StreamMethod,
    pub resolution: Resolution,
    pub initial_slope: f64,
    /// Trajectory (u, u', u'') on the fine integration grid.
    pub fine_u: Vec<f64>,
    pub fine_du: Vec<f64>,
    pub fine_ddu: Vec<f64>,
}

impl StreamSolution {
    /// Bernoulli constant, always derived from the slope.
    pub fn r(&self) -> f64 {
        bernoulli_constant(self.slope_at_surface, self.d)
    }

    pub fn fine_h(&self) -> f64 {
        self.d / (self.fine_u.len() - 1) as f64
    }

    pub fn grid_h(&self) -> f64 {
        self.d / self.resolution.intervals as f64
    }

    /// (u, u', u'') at an arbitrary depth.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        let h = self.fine_h();
        let u = Hermite5 {
            h,
            y: &self.fine_u,
            dy: &self.fine_du,
            ddy: &self.fine_ddu,
        }
        .eval(z);
        let n = self.fine_u.len() - 1;
        let i = ((z / h).round().max(0.0) as usize).min(n);
        // u' from its own Taylor expansion around the nearest node
        let dz = z - i as f64 * h;
        let du = self.fine_du[i] + self.fine_ddu[i] * dz;
        (u, du, self.fine_ddu[i])
    }

    /// Max |u'' + ω(u)| on interior fine nodes, with u'' from 4th-order
    /// differences of the integrated u'.
    pub fn ode_residual(&self, model: &VorticityModel) -> f64 {
        let h = self.fine_h();
        let v = &self.fine_du;
        let n = v.len();
        let step = (self.resolution.substeps).max(1);
        let mut worst: f64 = 0.0;
        let mut i = 2 * step;
        while i + 2 * step < n {
            let hs = h * step as f64;
            let d1 = (v[i - 2 * step] - 8.0 * v[i - step] + 8.0 * v[i + step] - v[i + 2 * step])
                / (12.0 * hs);
            worst = worst.max((d1 + model.omega(self.fine_u[i])).abs());
            i += step;
        }
        worst
    }
}

pub fn bernoulli_constant(slope: f64, d: f64) -> f64 {
    (slope * slope + 2.0 * d) / 3.0
}

/// Rejects (b, d) with √b = πj/(2d) for some positive integer j.
pub fn check_resonance(b: f64, d: f64) -> Result<()> {
    if b <= 0.0 {
        return Ok(());
    }
    let x = 2.0 * b.sqrt() * d / std::f64::consts::PI;
    let j = x.round();
    if j >= 1.0 && (x - j).abs() < RESONANCE_TOL * j.max(1.0) {
        return Err(Error::Resonance { j: j as u64, b, d });
    }
    Ok(())
}

fn check_depth(d: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Invalid(format!("depth must be positive, got {d}")));
    }
    Ok(())
}

fn output_grid(d: f64, res: Resolution) -> Vec<f64> {
    let h = d / res.intervals as f64;
    (0..=res.intervals).map(|i| i as f64 * h).collect()
}

/// Closed-form u_0 = sin(√b z)/sin(√b d) for ω(p) = b p.
pub fn linear_stream(b: f64, d: f64, res: Resolution) -> Result<StreamSolution> {
    check_depth(d)?;
    check_resonance(b, d)?;
    let nf = res.fine_intervals();
    let hf = d / nf as f64;
    let (mut fu, mut fdu, mut fddu) = (vec![0.0; nf + 1], vec![0.0; nf + 1], vec![0.0; nf + 1]);
    let (slope, s0);
    if b == 0.0 {
        for i in 0..=nf {
            let z = i as f64 * hf;
            fu[i] = z / d;
            fdu[i] = 1.0 / d;
        }
        slope = 1.0 / d;
        s0 = slope;
    } else {
        let sb = b.sqrt();
        let sd = (sb * d).sin();
        for i in 0..=nf {
            let z = i as f64 * hf;
            fu[i] = (sb * z).sin() / sd;
            fdu[i] = sb * (sb * z).cos() / sd;
            fddu[i] = -b * fu[i];
        }
        fu[nf] = 1.0;
        slope = sb * (sb * d).cos() / sd;
        s0 = sb / sd;
    }
    if slope.abs() < SLOPE_THRESHOLD {
        return Err(Error::DegenerateSlope { slope });
    }
    Ok(assemble(
        d,
        res,
        StreamMethod::ClosedForm,
        s0,
        slope,
        fu,
        fdu,
        fddu,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    d: f64,
    res: Resolution,
    method: StreamMethod,
    s0: f64,
    slope: f64,
    fine_u: Vec<f64>,
    fine_du: Vec<f64>,
    fine_ddu: Vec<f64>,
) -> StreamSolution {
    let stride = 2 * res.substeps;
    let u = fine_u.iter().step_by(stride).copied().collect();
    let u_prime = fine_du.iter().step_by(stride).copied().collect();
    StreamSolution {
        d,
        z_grid: output_grid(d, res),
        u,
        u_prime,
        slope_at_surface: slope,
        method,
        resolution: res,
        initial_slope: s0,
        fine_u,
        fine_du,
        fine_ddu,
    }
}

struct Shot {
    u: Vec<f64>,
    du: Vec<f64>,
    v_end: f64,
}

fn shoot(model: &VorticityModel, d: f64, n: usize, s: f64) -> Shot {
    let h = d / n as f64;
    let mut u = Vec::with_capacity(n + 1);
    let mut du = Vec::with_capacity(n + 1);
    let (mut y0, mut y1, mut v0, mut v1) = (0.0, s, 0.0, 1.0);
    u.push(y0);
    du.push(y1);
    let f = |a: f64, b: f64, c: f64, e: f64| -> (f64, f64, f64, f64) {
        (b, -model.omega(a), e, -model.omega_prime(a) * c)
    };
    for _ in 0..n {
        let k1 = f(y0, y1, v0, v1);
        let k2 = f(
            y0 + 0.5 * h * k1.0,
            y1 + 0.5 * h * k1.1,
            v0 + 0.5 * h * k1.2,
            v1 + 0.5 * h * k1.3,
        );
        let k3 = f(
            y0 + 0.5 * h * k2.0,
            y1 + 0.5 * h * k2.1,
            v0 + 0.5 * h * k2.2,
            v1 + 0.5 * h * k2.3,
        );
        let k4 = f(y0 + h * k3.0, y1 + h * k3.1, v0 + h * k3.2, v1 + h * k3.3);
        y0 += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y1 += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        v0 += h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
        v1 += h / 6.0 * (k1.3 + 2.0 * k2.3 + 2.0 * k3.3 + k4.3);
        u.push(y0);
        du.push(y1);
    }
    Shot { u, du, v_end: v0 }
}

/// Shooting on u'(0) with Newton iteration on u(d) - 1.
pub fn solve_stream(
    model: &VorticityModel,
    d: f64,
    tol: f64,
    res: Resolution,
) -> Result<StreamSolution> {
    check_depth(d)?;
    check_resonance(model.b, d)?;
    if model.b == 0.0 && model.is_unperturbed() {
        return linear_stream(0.0, d, res);
    }
    let n = res.fine_intervals();
    let mut s = if model.b > 0.0 {
        model.b.sqrt() / (model.b.sqrt() * d).sin()
    } else {
        1.0 / d
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, Shot, f64)> = None;
    for _ in 0..60 {
        let shot = shoot(model, d, n, s);
        let mis = shot.u[n] - 1.0;
        history.push(mis.abs());
        let improved = best.as_ref().map_or(true, |b| mis.abs() < b.0);
        let ds = -mis / shot.v_end;
        if improved {
            best = Some((mis.abs(), shot, s));
        }
        if !ds.is_finite() {
            break;
        }
        if mis == 0.0 || (ds.abs() <= 4.0 * f64::EPSILON * s.abs() && !improved) {
            break;
        }
        if history.len() > 3 && !improved && mis.abs() < tol {
            break;
        }
        s += ds;
    }
    let (mis, shot, s) = best.expect("at least one shot");
    if !(mis <= tol) {
        return Err(Error::NoConvergence {
            op: "solve_stream",
            iterations: history.len(),
            residual: mis,
            history,
        });
    }
    let Shot { mut u, du, .. } = shot;
    let slope = du[n];
    if slope.abs() < SLOPE_THRESHOLD || !slope.is_finite() {
        return Err(Error::DegenerateSlope { slope });
    }
    u[n] = 1.0;
    let ddu = u.iter().map(|&x| -model.omega(x)).collect();
    Ok(assemble(
        d,
        res,
        StreamMethod::Shooting,
        s,
        slope,
        u,
        du,
        ddu,
    ))
}

/// First-order stream correction for one perturbation ω_j.
#[derive(Debug, Clone)]
pub struct FirstOrderStream {
    pub c: f64,
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub slope_at_surface: f64,
    pub error_estimate: f64,
}

fn linear_parts(b: f64, d: f64) -> Result<(f64, f64)> {
    if !(b > 0.0) {
        return Err(Error::Invalid("first-order streams need b > 0".into()));
    }
    check_resonance(b, d)?;
    let sb = b.sqrt();
    let sd = (sb * d).sin();
    if sd.abs() < 1e-12 {
        return Err(Error::Resonance {
            j: (2.0 * sb * d / std::f64::consts::PI).round() as u64,
            b,
            d,
        });
    }
    Ok((sb, sd))
}

/// u_j via the variation-of-constants formula, integrated cell by cell.
pub fn first_order_streams(
    basis: &[SmoothBump],
    b: f64,
    d: f64,
    res: Resolution,
) -> Result<Vec<FirstOrderStream>> {
    let (sb, sd) = linear_parts(b, d)?;
    let z = output_grid(d, res);
    let cd = (sb * d).cos();
    basis
        .iter()
        .map(|w| {
            let g = |p: f64| w.value((sb * p).sin() / sd);
            let mut ic = vec![0.0; z.len()];
            let mut is = vec![0.0; z.len()];
            let mut err = 0.0;
            for k in 1..z.len() {
                let (a, e1) =
                    quad::integrate(|p| g(p) * (sb * p).cos(), z[k - 1], z[k], 1e-15, 1e-14)?;
                let (s, e2) =
                    quad::integrate(|p| g(p) * (sb * p).sin(), z[k - 1], z[k], 1e-15, 1e-14)?;
                ic[k] = ic[k - 1] + a;
                is[k] = is[k - 1] + s;
                err += e1 + e2;
            }
            let n = z.len() - 1;
            let c = (sd * ic[n] - cd * is[n]) / sd;
            let mut u = Vec::with_capacity(z.len());
            let mut up = Vec::with_capacity(z.len());
            for k in 0..z.len() {
                let (s, co) = (sb * z[k]).sin_cos();
                u.push(c * s / sb - (s * ic[k] - co * is[k]) / sb);
                up.push(c * co - (co * ic[k] + s * is[k]));
            }
            u[0] = 0.0;
            Ok(FirstOrderStream {
                c,
                slope_at_surface: up[n],
                u,
                u_prime: up,
                error_estimate: err,
            })
        })
        .collect()
}

/// u_j'(d) from both integral forms; they must agree to 1e-8.
pub fn surface_slope_first_order(basis: &[SmoothBump], b: f64, d: f64) -> Result<Vec<f64>> {
    let (sb, sd) = linear_parts(b, d)?;
    let breaks: Vec<f64> = (0..=2048).map(|i| d * i as f64 / 2048.0).collect();
    basis
        .iter()
        .map(|w| {
            let u0 = |z: f64| (sb * z).sin() / sd;
            let (a, _) =
                quad::integrate_pieces(|z| w.value(u0(z)) * (sb * z).sin(), &breaks, 1e-12, 1e-11)?;
            let (c, _) = quad::integrate_pieces(
                |z| {
                    let co = (sb * z).cos();
                    w.derivative(u0(z)) * co * co
                },
                &breaks,
                1e-12,
                1e-11,
            )?;
            let form1 = -a / sd;
            let form2 = -c / (sd * sd);
            if (form1 - form2).abs() > 1e-8 * form1.abs().max(1.0) {
                return Err(Error::Mismatch {
                    what: "surface_slope_first_order",
                    a: form1,
                    b: form2,
                });
            }
            Ok(form1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vorticity::{make_bump_basis, BumpLayout};

    fn small() -> Resolution {
        Resolution {
            intervals: 128,
            substeps: 16,
        }
    }

    #[test]
    fn closed_form_b1() {
        let s = linear_stream(1.0, 1.0, Resolution::default()).unwrap();
        assert!((s.slope_at_surface - 0.64209261593433).abs() < 1e-12);
        assert!((s.r() - 0.8040943091457974).abs() < 1e-14);
        assert_eq!(s.u.len(), 513);
    }

    #[test]
    fn rejects_quarter_wave() {
        let b = (std::f64::consts::PI / 2.0).powi(2);
        match linear_stream(b, 1.0, small()) {
            Err(Error::Resonance { j, .. }) => assert_eq!(j, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            solve_stream(&VorticityModel::linear(4.0 * b), 1.0, 1e-10, small()),
            Err(Error::Resonance { j: 2, .. })
        ));
    }

    #[test]
    fn irrotational_special_case() {
        let s = solve_stream(&VorticityModel::linear(0.0), 1.0, 1e-10, small()).unwrap();
        assert_eq!(s.slope_at_surface, 1.0);
        assert!((s.r() - 1.0).abs() < 1e-15);
        assert!((s.u[64] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shooting_matches_closed_form() {
        for &(b, d) in &[(1.0, 1.0), (30.0, 1.0), (5.0, 2.0), (0.3, 0.7)] {
            let a =
                solve_stream(&VorticityModel::linear(b), d, 1e-10, Resolution::default()).unwrap();
            let c = linear_stream(b, d, Resolution::default()).unwrap();
            let err =
                a.u.iter()
                    .zip(&c.u)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
            assert!(err < 1e-10, "b={b} d={d} err={err}");
            assert_eq!(a.method, StreamMethod::Shooting);
            assert!(a.ode_residual(&VorticityModel::linear(b)) < 1e-8);
        }
    }

    #[test]
    fn first_order_consistency() {
        let basis = make_bump_basis(1, &BumpLayout::Partition { lo: 0.3, hi: 0.8 }).unwrap();
        let res = small();
        let u1 = &first_order_streams(&basis, 1.0, 1.0, res).unwrap()[0];
        assert!(u1.u.last().unwrap().abs() < 1e-10);
        let u0 = linear_stream(1.0, 1.0, res).unwrap();
        let mut errs = Vec::new();
        for &h in &[1e-3, 5e-4] {
            let m = VorticityModel::new(1.0, basis.clone(), vec![h]).unwrap();
            let s = solve_stream(&m, 1.0, 1e-12, res).unwrap();
            let e = (0..s.u.len())
                .map(|k| (s.u[k] - u0.u[k] - h * u1.u[k]).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn slope_forms_agree_and_match_fd() {
        let basis = make_bump_basis(1, &BumpLayout::Partition { lo: 0.3, hi: 0.8 }).unwrap();
        let res = Resolution::default();
        let slopes = surface_slope_first_order(&basis, 1.0, 1.0).unwrap();
        let fo = first_order_streams(&basis, 1.0, 1.0, res).unwrap();
        assert!((slopes[0] - fo[0].slope_at_surface).abs() < 1e-10);
        let h = 1e-5;
        let m = |x: f64| VorticityModel::new(1.0, basis.clone(), vec![x]).unwrap();
        let sp = solve_stream(&m(h), 1.0, 1e-13, res)
            .unwrap()
            .slope_at_surface;
        let sm = solve_stream(&m(-h), 1.0, 1e-13, res)
            .unwrap()
            .slope_at_surface;
        let fd = (sp - sm) / (2.0 * h);
        assert!(
            (fd - slopes[0]).abs() < 1e-4 * slopes[0].abs(),
            "{fd} {}",
            slopes[0]
        );
        let zero = surface_slope_first_order(&[SmoothBump::zero()], 1.0, 1.0).unwrap();
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn bernoulli_identity() {
        for &(b, d) in &[(1.0, 1.0), (40.0, 1.0), (2.5, 1.3)] {
            let s = linear_stream(b, d, small()).unwrap();
            let k = s.slope_at_surface;
            let scale = k * k + 2.0 * d;
            assert!((3.0 * s.r() - k * k - 2.0 * d).abs() <= 4.0 * f64::EPSILON * scale);
        }
    }
}
