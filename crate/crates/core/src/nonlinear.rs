//! Full nonlinear residuals on the flattened strip and the Lyapunov-Schmidt
//! solver for N-modal waves.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::fourier::{sup, CosineGrid};
use crate::isp::{invert_t, Commensurate, InvertOptions, IspContext, IspJacobian, JacobianRefresh};
use crate::vorticity::{SmoothBump, VorticityModel};
use crate::wavefield::{Background, Frame, ModalParts, WaveField};

// ---------------------------------------------------------------- z-stencils

/// Fourth-order first derivative on a uniform grid, one-sided near the ends.
pub fn fd_d1(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len() - 1;
    let c = 1.0 / (12.0 * h);
    let mut out = vec![0.0; n + 1];
    out[0] = c * (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]);
    out[1] = c * (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]);
    for i in 2..n - 1 {
        out[i] = c * (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]);
    }
    out[n - 1] = c * (-v[n - 4] + 6.0 * v[n - 3] - 18.0 * v[n - 2] + 10.0 * v[n - 1] + 3.0 * v[n]);
    out[n] = top_d1(v, h);
    out
}

fn top_d1(v: &[f64], h: f64) -> f64 {
    let n = v.len() - 1;
    (3.0 * v[n - 4] - 16.0 * v[n - 3] + 36.0 * v[n - 2] - 48.0 * v[n - 1] + 25.0 * v[n])
        / (12.0 * h)
}

/// Fourth-order second derivative, one-sided near the ends.
pub fn fd_d2(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len() - 1;
    let c = 1.0 / (12.0 * h * h);
    let mut out = vec![0.0; n + 1];
    out[0] =
        c * (45.0 * v[0] - 154.0 * v[1] + 214.0 * v[2] - 156.0 * v[3] + 61.0 * v[4] - 10.0 * v[5]);
    out[1] = c * (10.0 * v[0] - 15.0 * v[1] - 4.0 * v[2] + 14.0 * v[3] - 6.0 * v[4] + v[5]);
    for i in 2..n - 1 {
        out[i] = c * (-v[i - 2] + 16.0 * v[i - 1] - 30.0 * v[i] + 16.0 * v[i + 1] - v[i + 2]);
    }
    out[n - 1] = c
        * (v[n - 5] - 6.0 * v[n - 4] + 14.0 * v[n - 3] - 4.0 * v[n - 2] - 15.0 * v[n - 1]
            + 10.0 * v[n]);
    out[n] = c
        * (45.0 * v[n] - 154.0 * v[n - 1] + 214.0 * v[n - 2] - 156.0 * v[n - 3] + 61.0 * v[n - 4]
            - 10.0 * v[n - 5]);
    out
}

fn rows_map(m: &DMatrix<f64>, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for p in 0..m.nrows() {
        let row: Vec<f64> = m.row(p).iter().copied().collect();
        for (i, v) in f(&row).into_iter().enumerate() {
            out[(p, i)] = v;
        }
    }
    out
}

// ------------------------------------------------------------------ residuals

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Interior equation, sup over interior z-nodes.
    pub sup_field: f64,
    /// Bernoulli condition at the surface.
    pub sup_bernoulli: f64,
    /// max of |Φ̂(x,0)| and |Φ̂(x,d) − 1|.
    pub sup_dirichlet: f64,
    pub nx: usize,
    pub nz: usize,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.sup_field
            .max(self.sup_bernoulli)
            .max(self.sup_dirichlet)
    }
}

/// Φ̂ and η derivatives on the half grid.
struct HatDerivs {
    h: DMatrix<f64>,
    hx: DMatrix<f64>,
    hxx: DMatrix<f64>,
    hz: DMatrix<f64>,
    hzz: DMatrix<f64>,
    hxz: DMatrix<f64>,
    eta: Vec<f64>,
    eta_x: Vec<f64>,
    eta_xx: Vec<f64>,
}

/// Derivatives of a flattened field Φ (spectral in x, FD in z).
struct FlatDerivs {
    x: DMatrix<f64>,
    xx: DMatrix<f64>,
    z: DMatrix<f64>,
    zz: DMatrix<f64>,
    xz: DMatrix<f64>,
}

fn flat_derivs(
    phi: &DMatrix<f64>,
    modal: Option<&ModalParts>,
    grid: &CosineGrid,
    h: f64,
) -> FlatDerivs {
    let rest = match modal {
        Some(m) => phi - m.values(),
        None => phi.clone(),
    };
    let z = rows_map(&rest, |r| fd_d1(r, h));
    let zz = rows_map(&rest, |r| fd_d2(r, h));
    let mut out = FlatDerivs {
        x: grid.dx_rows(phi),
        xx: grid.dxx_rows(phi),
        xz: grid.dx_rows(&z),
        z,
        zz,
    };
    if let Some(m) = modal {
        for (j, a) in m.amplitudes.iter().enumerate() {
            let ax = grid.dx(a);
            for p in 0..phi.nrows() {
                for i in 0..phi.ncols() {
                    out.z[(p, i)] += a[p] * m.dphi[j][i];
                    out.zz[(p, i)] += a[p] * m.ddphi[j][i];
                    out.xz[(p, i)] += ax[p] * m.dphi[j][i];
                }
            }
        }
    }
    out
}

/// Φ̂ = Φ + u + z u' e/d with e = η − d, derivatives assembled with the
/// background ones taken from the stream.
fn hat_from_flat(
    phi: &DMatrix<f64>,
    modal: Option<&ModalParts>,
    eta: &[f64],
    bg: &Background,
    grid: &CosineGrid,
) -> HatDerivs {
    let d = bg.d;
    let fd = flat_derivs(phi, modal, grid, bg.h);
    let e: Vec<f64> = eta.iter().map(|v| v - d).collect();
    let ex = grid.dx(&e);
    let exx = grid.dxx(&e);
    let rows = phi.nrows();
    let cols = phi.ncols();
    let mut out = HatDerivs {
        h: phi.clone(),
        hx: fd.x,
        hxx: fd.xx,
        hz: fd.z,
        hzz: fd.zz,
        hxz: fd.xz,
        eta: eta.to_vec(),
        eta_x: ex.clone(),
        eta_xx: exx.clone(),
    };
    for p in 0..rows {
        let (ep, exp, exxp) = (e[p] / d, ex[p] / d, exx[p] / d);
        for i in 0..cols {
            let z = bg.z[i];
            let (u, u1, u2, u3) = (bg.u[i], bg.du[i], bg.ddu[i], bg.dddu[i]);
            out.h[(p, i)] += u + z * u1 * ep;
            out.hx[(p, i)] += z * u1 * exp;
            out.hxx[(p, i)] += z * u1 * exxp;
            out.hz[(p, i)] += u1 + (u1 + z * u2) * ep;
            out.hzz[(p, i)] += u2 + (2.0 * u2 + z * u3) * ep;
            out.hxz[(p, i)] += (u1 + z * u2) * exp;
        }
    }
    out
}

/// F̂_1 on the full grid and F̂_2 on the surface.
fn strip_equations(
    hd: &HatDerivs,
    model: &VorticityModel,
    r: f64,
    d: f64,
    z: &[f64],
) -> (DMatrix<f64>, Vec<f64>) {
    let rows = hd.h.nrows();
    let cols = hd.h.ncols();
    let mut f1 = DMatrix::zeros(rows, cols);
    let mut f2 = vec![0.0; rows];
    for p in 0..rows {
        let (eta, ex, exx) = (hd.eta[p], hd.eta_x[p], hd.eta_xx[p]);
        let az = ex / eta;
        let scale = (d / eta).powi(2);
        for i in 0..cols {
            let zz = z[i];
            let a = zz * ex / eta;
            let ax = zz * (exx / eta - ex * ex / (eta * eta));
            let hz = hd.hz[(p, i)];
            let hzz = hd.hzz[(p, i)];
            f1[(p, i)] = hd.hxx[(p, i)] - ax * hz - 2.0 * a * hd.hxz[(p, i)]
                + a * az * hz
                + a * a * hzz
                + scale * hzz
                + model.omega(hd.h[(p, i)]);
        }
        let top = hd.hz[(p, cols - 1)];
        f2[p] = top * top - eta * eta / (d * d) * (3.0 * r - 2.0 * eta) / (1.0 + ex * ex);
    }
    (f1, f2)
}

fn report(f1: &DMatrix<f64>, f2: &[f64], h: &DMatrix<f64>, nx: usize) -> ResidualReport {
    let cols = f1.ncols();
    let mut field = 0.0f64;
    let mut dir = 0.0f64;
    for p in 0..f1.nrows() {
        for i in 1..cols - 1 {
            field = field.max(f1[(p, i)].abs());
        }
        dir = dir.max(h[(p, 0)].abs()).max((h[(p, cols - 1)] - 1.0).abs());
    }
    ResidualReport {
        sup_field: field,
        sup_bernoulli: sup(f2),
        sup_dirichlet: dir,
        nx,
        nz: cols - 1,
    }
}

/// Residuals of the flattened-strip equations for (Φ̂, η).
///
/// The part u + z u'(η − d)/d is differentiated exactly through the stream
/// data in `bg`, a known separable part through the eigenfunctions, and the
/// remainder with fourth-order differences in z and spectrally in x.
pub fn residual_strip(
    phi_hat: &WaveField,
    eta: &[f64],
    model: &VorticityModel,
    r: f64,
    bg: &Background,
    grid: &CosineGrid,
) -> Result<ResidualReport> {
    check_positive(eta, grid)?;
    let d = bg.d;
    let mut rest = phi_hat.values.clone();
    for p in 0..rest.nrows() {
        let e = (eta[p] - d) / d;
        for i in 0..rest.ncols() {
            rest[(p, i)] -= bg.u[i] + bg.z[i] * bg.du[i] * e;
        }
    }
    let hd = hat_from_flat(&rest, phi_hat.modal.as_ref(), eta, bg, grid);
    let (f1, f2) = strip_equations(&hd, model, r, d, &bg.z);
    Ok(report(&f1, &f2, &phi_hat.values, grid.m))
}

fn check_positive(eta: &[f64], grid: &CosineGrid) -> Result<()> {
    let x = grid.half_x();
    for (p, &e) in eta.iter().enumerate() {
        if !(e > 0.0) {
            return Err(Error::NonpositiveDepth { x: x[p], eta: e });
        }
    }
    Ok(())
}

/// F = (F_1, F_2) at a flattened Φ with its linear part L and the remainder N = LΦ − F.
#[derive(Debug, Clone)]
pub struct OperatorSplit {
    pub f1: DMatrix<f64>,
    pub f2: Vec<f64>,
    pub l1: DMatrix<f64>,
    pub l2: Vec<f64>,
    pub n1: DMatrix<f64>,
    pub n2: Vec<f64>,
    pub eta: Vec<f64>,
    pub report: ResidualReport,
}

/// η eliminated by η = d − Φ(x,d)/u'(d); F_2 is the Bernoulli residual
/// divided by 2u'(d) so that its linearization is Φ_z − κΦ at z = d.
pub fn residual_operator(
    phi: &DMatrix<f64>,
    modal: Option<&ModalParts>,
    bg: &Background,
    grid: &CosineGrid,
) -> Result<OperatorSplit> {
    let cols = phi.ncols();
    let eta: Vec<f64> = (0..phi.nrows())
        .map(|p| bg.d - phi[(p, cols - 1)] / bg.slope)
        .collect();
    check_positive(&eta, grid)?;
    let hd = hat_from_flat(phi, modal, &eta, bg, grid);
    let (f1, f2raw) = strip_equations(&hd, &bg.model, bg.r, bg.d, &bg.z);
    let rep = report(&f1, &f2raw, &hd.h, grid.m);
    let f2: Vec<f64> = f2raw.iter().map(|v| v / (2.0 * bg.slope)).collect();
    let (l1, l2) = apply_linear(phi, modal, bg, grid);
    let n1 = &l1 - &f1;
    let n2 = l2.iter().zip(&f2).map(|(a, b)| a - b).collect();
    Ok(OperatorSplit {
        f1,
        f2,
        l1,
        l2,
        n1,
        n2,
        eta,
        report: rep,
    })
}

// ---------------------------------------------------------------- tilde solve

/// Diagnostics of one tilde solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TildeSolve {
    /// Largest bordering multiplier, i.e. the discrete compatibility defect.
    pub defect: f64,
    /// Modes solved with the dense bordered system.
    pub dense_modes: Vec<usize>,
}

const COMPAT_TOL: f64 = 1e-10;
const NEAR_SINGULAR: f64 = 1e-8;

/// Solves Φ̃_xx + Φ̃_zz + ω'(u)Φ̃ = f, Φ̃_z − κΦ̃ = g at z = d, Φ̃(x,0) = 0,
/// with ⟨Φ̃, φ_j⟩ = 0, mode by mode in x.
pub fn solve_tilde(
    f: &DMatrix<f64>,
    g: &[f64],
    bg: &Background,
    grid: &CosineGrid,
) -> Result<(DMatrix<f64>, TildeSolve)> {
    let rows = f.nrows();
    // compatibility ⟨f, φ_j⟩ = g φ_j(d)
    let scale = f.amax().max(sup(g)).max(1e-300);
    for p in 0..rows {
        let row: Vec<f64> = f.row(p).iter().copied().collect();
        for j in 0..bg.n {
            let mis = bg.inner(&row, j) - g[p] * bg.phi_d[j];
            if mis.abs() > COMPAT_TOL * scale.max(1.0) {
                return Err(Error::CompatibilityViolation {
                    mode: p,
                    j: j + 1,
                    mismatch: mis,
                });
            }
        }
    }
    let (tilde, lam, dense) = solve_bordered(f, g, bg, grid)?;
    let defect = lam.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok((
        tilde,
        TildeSolve {
            defect,
            dense_modes: dense,
        },
    ))
}

/// Per cosine mode: L̃v + Σ_j λ_j φ_j = f, Robin row g, ⟨v, φ_j⟩ = 0.
/// Returns v on the grid and the multipliers λ_j as cosine coefficients.
fn solve_bordered(
    f: &DMatrix<f64>,
    g: &[f64],
    bg: &Background,
    grid: &CosineGrid,
) -> Result<(DMatrix<f64>, Vec<Vec<f64>>, Vec<usize>)> {
    let rows = f.nrows();
    let cols = f.ncols();
    let fc = grid.coeffs_rows(f);
    let gc = grid.coeffs(g);
    let results: Vec<Result<(Vec<f64>, Vec<f64>, bool)>> = (0..rows)
        .into_par_iter()
        .map(|n| {
            let fz: Vec<f64> = fc.row(n).iter().copied().collect();
            solve_mode(&fz, gc[n], grid.wavenumber(n), n, bg)
        })
        .collect();
    let mut coeffs = DMatrix::zeros(rows, cols);
    let mut lam = vec![vec![0.0; rows]; bg.n];
    let mut dense = Vec::new();
    for (n, r) in results.into_iter().enumerate() {
        let (v, l, was_dense) = r?;
        for (j, x) in l.into_iter().enumerate() {
            lam[j][n] = x;
        }
        if was_dense {
            dense.push(n);
        }
        for (i, x) in v.into_iter().enumerate() {
            coeffs[(n, i)] = x;
        }
    }
    Ok((grid.values_rows(&coeffs), lam, dense))
}

/// One x-mode: returns v on the z-grid (v_0 = 0), the multipliers and
/// whether the dense path was used.
fn solve_mode(
    f: &[f64],
    g: f64,
    k: f64,
    n_mode: usize,
    bg: &Background,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let nz = bg.nz();
    let k2 = k * k;
    let gaps: Vec<f64> = bg.mu.iter().map(|m| (k2 + m).abs()).collect();
    for (j, &gap) in gaps.iter().enumerate().skip(bg.n) {
        if gap < NEAR_SINGULAR * (1.0 + k2) {
            return Err(Error::NearSingularMode {
                n: n_mode,
                j: j + 1,
                gap,
            });
        }
    }
    let near = gaps[..bg.n].iter().any(|&gap| gap < 1e-2 * (1.0 + k2));
    let (a, rhs) = mode_system(f, g, k2, bg);
    // border columns: φ_j on the interior rows; constraint rows: Simpson weights times φ_j
    let border: Vec<Vec<f64>> = (0..bg.n)
        .map(|j| {
            let mut c = vec![0.0; nz];
            for i in 1..nz {
                c[i - 1] = bg.phi[j][i];
            }
            c
        })
        .collect();
    let constraint: Vec<Vec<f64>> = (0..bg.n)
        .map(|j| (1..=nz).map(|i| bg.weights[i] * bg.phi[j][i]).collect())
        .collect();
    let (v, lam) = if near {
        dense_bordered(&a, &rhs, &border, &constraint)?
    } else {
        let lu = a.factor()?;
        let v0 = lu.solve(&rhs);
        if bg.n == 0 {
            return Ok((std::iter::once(0.0).chain(v0).collect(), Vec::new(), false));
        }
        let w: Vec<Vec<f64>> = border.iter().map(|b| lu.solve(b)).collect();
        let m = bg.n;
        let s = DMatrix::from_fn(m, m, |i, j| dot(&constraint[i], &w[j]));
        let c0 = DVector::from_fn(m, |i, _| dot(&constraint[i], &v0));
        let lam = s
            .lu()
            .solve(&c0)
            .ok_or_else(|| Error::Invalid("singular constraint block".into()))?;
        let mut v = v0;
        for j in 0..m {
            for (vi, wi) in v.iter_mut().zip(&w[j]) {
                *vi -= lam[j] * wi;
            }
        }
        (v, lam.iter().copied().collect())
    };
    let mut out = vec![0.0; nz + 1];
    out[1..].copy_from_slice(&v);
    Ok((out, lam, near))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Band matrix for unknowns v_1..v_nz of (D2 + ω'(u) − k²) v = f with the Robin row.
fn mode_system(f: &[f64], g: f64, k2: f64, bg: &Background) -> (BandMatrix, Vec<f64>) {
    let nz = bg.nz();
    let h = bg.h;
    let c2 = 1.0 / (12.0 * h * h);
    let mut a = BandMatrix::zeros(nz, 4, 4);
    let mut rhs = vec![0.0; nz];
    // unknown index of node i is i − 1
    let put = |row: usize, node: usize, v: f64, a: &mut BandMatrix| {
        if node >= 1 {
            let cur = a.get(row, node - 1);
            a.set(row, node - 1, cur + v);
        }
    };
    for i in 1..nz {
        let row = i - 1;
        let (nodes, w): (Vec<usize>, Vec<f64>) = if i == 1 {
            ((0..6).collect(), vec![10.0, -15.0, -4.0, 14.0, -6.0, 1.0])
        } else if i == nz - 1 {
            (
                (nz - 5..=nz).collect(),
                vec![1.0, -6.0, 14.0, -4.0, -15.0, 10.0],
            )
        } else {
            (
                (i - 2..=i + 2).collect(),
                vec![-1.0, 16.0, -30.0, 16.0, -1.0],
            )
        };
        for (node, wv) in nodes.into_iter().zip(w) {
            put(row, node, c2 * wv, &mut a);
        }
        put(row, i, bg.q[i] - k2, &mut a);
        rhs[row] = f[i];
    }
    let c1 = 1.0 / (12.0 * h);
    let row = nz - 1;
    for (off, wv) in [(4usize, 3.0), (3, -16.0), (2, 36.0), (1, -48.0), (0, 25.0)] {
        put(row, nz - off, c1 * wv, &mut a);
    }
    put(row, nz, -bg.kappa, &mut a);
    rhs[row] = g;
    (a, rhs)
}

fn dense_bordered(
    a: &BandMatrix,
    rhs: &[f64],
    border: &[Vec<f64>],
    constraint: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nz = rhs.len();
    let m = border.len();
    let size = nz + m;
    let mut big = DMatrix::zeros(size, size);
    for i in 0..nz {
        for j in i.saturating_sub(4)..=(i + 4).min(nz - 1) {
            big[(i, j)] = a.get(i, j);
        }
    }
    for j in 0..m {
        for i in 0..nz {
            big[(i, nz + j)] = border[j][i];
            big[(nz + j, i)] = constraint[j][i];
        }
    }
    let mut b = DVector::zeros(size);
    for i in 0..nz {
        b[i] = rhs[i];
    }
    let x = big
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Invalid("singular bordered system".into()))?;
    Ok((
        x.rows(0, nz).iter().copied().collect(),
        x.rows(nz, m).iter().copied().collect(),
    ))
}

/// Applies the discrete L = (∂_xx + ∂_zz + ω'(u), ∂_z − κ at z = d) to a field.
pub fn apply_linear(
    phi: &DMatrix<f64>,
    modal: Option<&ModalParts>,
    bg: &Background,
    grid: &CosineGrid,
) -> (DMatrix<f64>, Vec<f64>) {
    let fd = flat_derivs(phi, modal, grid, bg.h);
    let cols = phi.ncols();
    let mut l1 = fd.xx + fd.zz;
    for p in 0..phi.nrows() {
        for i in 0..cols {
            l1[(p, i)] += bg.q[i] * phi[(p, i)];
        }
    }
    let l2 = (0..phi.nrows())
        .map(|p| fd.z[(p, cols - 1)] - bg.kappa * phi[(p, cols - 1)])
        .collect();
    (l1, l2)
}

/// Power-iteration estimate of ‖L̃⁻¹‖ on the complement of the modal directions,
/// in the discrete L² norm (Simpson in z, trapezoid in x).
pub fn inverse_norm_estimate(bg: &Background, grid: &CosineGrid, iterations: usize) -> Result<f64> {
    let rows = grid.half_len();
    let cols = bg.z.len();
    let project = |v: &mut DMatrix<f64>| {
        for p in 0..rows {
            let row: Vec<f64> = v.row(p).iter().copied().collect();
            for j in 0..bg.n {
                let c = bg.inner(&row, j);
                for i in 0..cols {
                    v[(p, i)] -= c * bg.phi[j][i];
                }
            }
        }
    };
    let norm = |v: &DMatrix<f64>| {
        let mut acc = 0.0;
        for p in 0..rows {
            let wx = if p == 0 || p == rows - 1 { 0.5 } else { 1.0 };
            for i in 0..cols {
                acc += wx * bg.weights[i] * v[(p, i)].powi(2);
            }
        }
        acc.sqrt()
    };
    let x = grid.half_x();
    let mut v = DMatrix::from_fn(rows, cols, |p, i| {
        (1.0 + (grid.base_wavenumber() * x[p]).cos()) * (1.0 + bg.z[i])
    });
    project(&mut v);
    let g = vec![0.0; rows];
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let nv = norm(&v);
        let (w, _, _) = solve_bordered(&(&v / nv), &g, bg, grid)?;
        estimate = norm(&w);
        v = w;
        project(&mut v);
    }
    Ok(estimate)
}

// ----------------------------------------------------------- modal correction

const KERNEL_TOL: f64 = 1e-12;

/// Solves ζ'' − μ_j* ζ = rhs in cosine coefficients; the kernel mode n_j is left empty.
pub fn modal_correction(
    rhs: &[f64],
    mu_star: f64,
    n_j: usize,
    grid: &CosineGrid,
) -> Result<Vec<f64>> {
    let scale = sup(rhs).max(1.0);
    if rhs.get(n_j).is_some_and(|c| c.abs() > KERNEL_TOL * scale) {
        return Err(Error::KernelLeakage {
            coefficient: rhs[n_j],
        });
    }
    Ok(rhs
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            if n == n_j {
                0.0
            } else {
                let k = grid.wavenumber(n);
                c / (-k * k - mu_star)
            }
        })
        .collect())
}

// ------------------------------------------------------------- admissibility

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub norm: f64,
    pub norm_ok: bool,
    /// |t|²/|t_j| per component; None for absent modes.
    pub ratios: Vec<Option<f64>>,
    pub epsilon: f64,
    pub delta_bound: f64,
}

impl Admissibility {
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if !self.norm_ok {
            parts.push(format!(
                "|t| = {:.3e} not below {:.3e}",
                self.norm, self.delta_bound
            ));
        }
        for (j, r) in self.ratios.iter().enumerate() {
            if let Some(r) = r {
                if *r > self.epsilon {
                    parts.push(format!(
                        "|t|²/|t_{}| = {:.3e} exceeds {:.3e}",
                        j + 1,
                        r,
                        self.epsilon
                    ));
                }
            }
        }
        if parts.is_empty() {
            "admissible".into()
        } else {
            parts.join("; ")
        }
    }
}

/// |t| < δ and |t|²/|t_j| ≤ ε for every t_j ≠ 0.
pub fn admissibility(t: &[f64], epsilon: f64, delta_bound: f64) -> Admissibility {
    let sq: f64 = t.iter().map(|v| v * v).sum();
    let norm = sq.sqrt();
    let norm_ok = norm < delta_bound;
    let ratios: Vec<Option<f64>> = t
        .iter()
        .map(|&v| (v != 0.0).then(|| sq / v.abs()))
        .collect();
    let ratio_ok = ratios.iter().flatten().all(|&r| r <= epsilon);
    Admissibility {
        admissible: norm_ok && ratio_ok,
        norm,
        norm_ok,
        ratios,
        epsilon,
        delta_bound,
    }
}

// --------------------------------------------------------------------- solver

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub delta_bound: f64,
    /// Tolerance of the inner eigenvalue inversion, relative to max |μ_j|.
    pub isp_tol: f64,
    /// Radius around the unperturbed eigenvalues accepted by the inversion.
    pub isp_radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            epsilon: 0.1,
            delta_bound: 1e-2,
            isp_tol: 1e-12,
            isp_radius: 10.0,
        }
    }
}

/// Everything fixed for a family of solves: the ISP data, the commensurate
/// target μ*, the x-grid and the background at μ*.
#[derive(Debug, Clone)]
pub struct NonlinearContext {
    pub isp: IspContext,
    pub basis: Vec<SmoothBump>,
    /// Jacobian of T at δ*, used frozen for the inner inversions.
    pub jacobian: IspJacobian,
    pub target: Commensurate,
    pub grid: CosineGrid,
    /// Lattice indices n_j with k_j = n_j 2π/Λ*.
    pub modes: Vec<usize>,
    pub delta_star: Vec<f64>,
    pub background_star: Background,
    pub options: SolverOptions,
}

impl NonlinearContext {
    pub fn new(
        isp: IspContext,
        basis: Vec<SmoothBump>,
        target: Commensurate,
        x_points: Option<usize>,
        options: SolverOptions,
    ) -> Result<Self> {
        let n = isp.n;
        if target.mu_star.len() != n || basis.len() != n {
            return Err(Error::Invalid(
                "target, basis and ISP context disagree on N".into(),
            ));
        }
        let k_max = target.k.iter().fold(0.0f64, |a, &b| a.max(b));
        let m = x_points.unwrap_or_else(|| CosineGrid::default_size(target.lambda_star, k_max));
        let grid = CosineGrid::new(target.lambda_star, m)?;
        let modes = target
            .k
            .iter()
            .map(|&k| {
                grid.mode_index(k).ok_or_else(|| {
                    Error::Invalid(format!(
                        "wavenumber {k} is not resolved by {m} points per period"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let jacobian = crate::isp::jacobian_analytic(&isp, &basis)?;
        let mut ctx = Self {
            background_star: Background::new(
                VorticityModel::linear(isp.b),
                isp.stream.clone(),
                isp.spectrum.clone(),
                n,
            )?,
            isp,
            basis,
            jacobian,
            target,
            grid,
            modes,
            delta_star: vec![0.0; n],
            options,
        };
        let (delta, bg) = ctx.background(&ctx.target.mu_star.clone(), None)?;
        ctx.jacobian = crate::isp::jacobian_fd_at(&delta, &ctx.isp, &ctx.basis, 1e-5)?;
        ctx.delta_star = delta;
        ctx.background_star = bg;
        Ok(ctx)
    }

    pub fn n(&self) -> usize {
        self.isp.n
    }

    /// Background whose first N eigenvalues equal `mu`, by inverting T.
    pub fn background(&self, mu: &[f64], warm: Option<&[f64]>) -> Result<(Vec<f64>, Background)> {
        let scale = mu.iter().fold(1.0f64, |a, m| a.max(m.abs()));
        let opts = InvertOptions {
            tol: self.options.isp_tol * scale,
            max_iter: 50,
            refresh: JacobianRefresh::Frozen,
            radius: self.options.isp_radius,
            fd_step: 1e-5,
        };
        let inv = match invert_t(
            mu,
            &self.isp,
            &self.basis,
            Some(&self.jacobian),
            warm,
            &opts,
        ) {
            Ok(i) => i,
            Err(Error::NoConvergence { .. }) => {
                let opts = InvertOptions {
                    refresh: JacobianRefresh::FiniteDifference,
                    ..opts
                };
                invert_t(mu, &self.isp, &self.basis, None, warm, &opts)?
            }
            Err(e) => return Err(e),
        };
        let bg = Background::from_eval(inv.eval, self.n())?;
        Ok((inv.delta, bg))
    }

    pub fn modal_state(&self, t: Vec<f64>) -> Result<crate::wavefield::ModalState> {
        crate::wavefield::ModalState::new(
            t,
            &self.target,
            self.options.epsilon,
            self.options.delta_bound,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: Vec<f64>,
    /// Reduced-coordinate amplitudes τ_j = −t_j u'(d)/φ_j(d).
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    /// Cosine coefficients of ζ_j.
    pub zeta: Vec<Vec<f64>>,
    pub phi_tilde: DMatrix<f64>,
    pub delta: Vec<f64>,
    pub iteration: usize,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: WaveField,
    pub mu: Vec<f64>,
    pub report: ResidualReport,
    pub state: SolverState,
    pub background: Background,
    /// G_j = τ_j(μ_j − μ_j*).
    pub g: Vec<f64>,
    /// sup_x |ζ_j|.
    pub zeta_sup: Vec<f64>,
    /// sup_x |η − d − Σ t_j cos(k_j x)|.
    pub eta_nonlinear: f64,
    pub tilde_defect: f64,
}

/// a_j = τ_j cos(k_j x) + ζ_j on the half grid.
fn modal_parts(state: &SolverState, bg: &Background, ctx: &NonlinearContext) -> ModalParts {
    let grid = &ctx.grid;
    let x = grid.half_x();
    let amplitudes = (0..ctx.n())
        .map(|j| {
            let zeta = grid.values(&state.zeta[j]);
            x.iter()
                .zip(&zeta)
                .map(|(&xp, z)| state.tau[j] * (ctx.target.k[j] * xp).cos() + z)
                .collect()
        })
        .collect();
    ModalParts::new(amplitudes, bg)
}

fn nonconvergence(state: SolverState, residual: f64) -> Error {
    Error::NoConvergence {
        op: "lyapunov_schmidt_solve",
        iterations: state.iteration,
        residual,
        history: state.residual_history,
    }
}

/// Lyapunov-Schmidt fixed point for surface amplitudes t.
pub fn lyapunov_schmidt_solve(t: &[f64], ctx: &NonlinearContext) -> Result<Solution> {
    let n = ctx.n();
    if t.len() != n {
        return Err(Error::Invalid(format!(
            "{} amplitudes for N = {n}",
            t.len()
        )));
    }
    let adm = admissibility(t, ctx.options.epsilon, ctx.options.delta_bound);
    if !adm.admissible {
        return Err(Error::NotAdmissible(adm.describe()));
    }
    let trivial = t.iter().all(|&v| v == 0.0);
    if !trivial && t.iter().any(|&v| v == 0.0) {
        return Err(Error::NotAdmissible(
            "a zero amplitude leaves its mode undetermined; drop the mode instead".into(),
        ));
    }
    let grid = &ctx.grid;
    let rows = grid.half_len();
    let cols = ctx.background_star.z.len();
    let mut bg = ctx.background_star.clone();
    let mut state = SolverState {
        t: t.to_vec(),
        tau: bg.reduced_amplitudes(t)?,
        mu: ctx.target.mu_star.clone(),
        zeta: vec![vec![0.0; rows]; n],
        phi_tilde: DMatrix::zeros(rows, cols),
        delta: ctx.delta_star.clone(),
        iteration: 0,
        residual_history: Vec::new(),
    };
    let mut defect = 0.0;
    if !trivial {
        loop {
            if state.iteration >= ctx.options.max_iter {
                let last = state.residual_history.last().copied().unwrap_or(f64::NAN);
                return Err(nonconvergence(state, last));
            }
            state.iteration += 1;
            state.tau = bg.reduced_amplitudes(t)?;
            let parts = modal_parts(&state, &bg, ctx);
            let phi = parts.values() + &state.phi_tilde;
            let split = residual_operator(&phi, Some(&parts), &bg, grid)?;
            let (mu_new, zeta_new, tilde_new, tilde_info) =
                picard_update(&state, &parts, &split, &bg, ctx)?;
            defect = tilde_info.defect;
            let mut change = 0.0f64;
            for j in 0..n {
                change = change.max((mu_new[j] - state.mu[j]).abs());
                let dz: Vec<f64> = zeta_new[j]
                    .iter()
                    .zip(&state.zeta[j])
                    .map(|(a, b)| a - b)
                    .collect();
                change = change.max(sup(&grid.values(&dz)));
            }
            change = change.max((&tilde_new - &state.phi_tilde).amax());
            state.residual_history.push(change);
            if !change.is_finite() {
                return Err(nonconvergence(state, change));
            }
            state.zeta = zeta_new;
            state.phi_tilde = tilde_new;
            if mu_new != state.mu {
                let (delta, b) = ctx.background(&mu_new, Some(&state.delta))?;
                state.delta = delta;
                bg = b;
            }
            state.mu = mu_new;
            if change < ctx.options.tol {
                break;
            }
        }
    }
    state.tau = bg.reduced_amplitudes(t)?;
    let parts = modal_parts(&state, &bg, ctx);
    let phi = parts.values() + &state.phi_tilde;
    let split = residual_operator(&phi, Some(&parts), &bg, grid)?;
    let x = grid.half_x();
    let eta_nonlinear = split
        .eta
        .iter()
        .zip(&x)
        .map(|(e, &xp)| {
            let lin: f64 = (0..n).map(|j| t[j] * (ctx.target.k[j] * xp).cos()).sum();
            (e - bg.d - lin).abs()
        })
        .fold(0.0, f64::max);
    let field = WaveField {
        period: grid.period,
        m: grid.m,
        z: bg.z.clone(),
        values: phi,
        eta: split.eta.clone(),
        frame: Frame::Flattened,
        modal: Some(parts),
    };
    let g = (0..n)
        .map(|j| state.tau[j] * (state.mu[j] - ctx.target.mu_star[j]))
        .collect();
    let zeta_sup = state.zeta.iter().map(|c| sup(&grid.values(c))).collect();
    Ok(Solution {
        field,
        mu: state.mu.clone(),
        report: split.report,
        g,
        zeta_sup,
        eta_nonlinear,
        tilde_defect: defect,
        state,
        background: bg,
    })
}

type Update = (Vec<f64>, Vec<Vec<f64>>, DMatrix<f64>, TildeSolve);

/// One Picard step. With LΦ = N split as Σ_j (a_j'' − μ_j a_j)φ_j + L̃Φ̃, the
/// bordered tilde solve returns Φ̃ and the modal forcings c_j = a_j'' − μ_j a_j
/// as its multipliers; the n_j coefficient of c_j fixes μ_j and the rest ζ_j.
fn picard_update(
    state: &SolverState,
    parts: &ModalParts,
    split: &OperatorSplit,
    bg: &Background,
    ctx: &NonlinearContext,
) -> Result<Update> {
    let n = ctx.n();
    let grid = &ctx.grid;
    let g: Vec<f64> = (0..split.n2.len())
        .map(|p| {
            let robin: f64 = (0..n)
                .map(|j| {
                    let last = bg.z.len() - 1;
                    parts.amplitudes[j][p] * (bg.dphi[j][last] - bg.kappa * bg.phi[j][last])
                })
                .sum();
            split.n2[p] - robin
        })
        .collect();
    let (tilde, lam, dense) = solve_bordered(&split.n1, &g, bg, grid)?;
    let mut mu_new = vec![0.0; n];
    let mut zeta_new = Vec::with_capacity(n);
    for j in 0..n {
        let nj = ctx.modes[j];
        let mu_star = ctx.target.mu_star[j];
        mu_new[j] = mu_star - lam[j][nj] / state.tau[j];
        let shift = bg.mu[j] - mu_star;
        let mut rc = lam[j].clone();
        for (v, z) in rc.iter_mut().zip(&state.zeta[j]) {
            *v += shift * z;
        }
        rc[nj] = 0.0;
        zeta_new.push(modal_correction(&rc, mu_star, nj, grid)?);
    }
    // gap between the multipliers and the Green projection ⟨N_1, φ_j⟩ − g φ_j(d)
    let mut defect = 0.0f64;
    for j in 0..n {
        let forcing = grid.values(&lam[j]);
        for p in 0..forcing.len() {
            let row: Vec<f64> = split.n1.row(p).iter().copied().collect();
            defect = defect.max((bg.inner(&row, j) - g[p] * bg.phi_d[j] - forcing[p]).abs());
        }
    }
    Ok((
        mu_new,
        zeta_new,
        tilde,
        TildeSolve {
            defect,
            dense_modes: dense,
        },
    ))
}

// -------------------------------------------------------------- scaling study

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    /// Half-width of the 95% confidence interval.
    pub half_width: f64,
    pub intercept: f64,
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> SlopeFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half_width = if lx.len() > 2 {
        let sse: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (sse / (n - 2.0) / sxx).sqrt();
        student_t95(lx.len() - 2) * se
    } else {
        f64::NAN
    };
    SlopeFit {
        slope,
        half_width,
        intercept,
    }
}

fn student_t95(dof: usize) -> f64 {
    const TABLE: [f64; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    if dof == 0 {
        f64::INFINITY
    } else if dof <= TABLE.len() {
        TABLE[dof - 1]
    } else {
        1.96 + 2.5 / dof as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSample {
    pub amplitude: f64,
    pub t: Vec<f64>,
    pub mu: Vec<f64>,
    pub zeta_sup: f64,
    pub g_max: f64,
    pub g: Vec<f64>,
    pub eta_nonlinear: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub direction: Vec<f64>,
    pub samples: Vec<ScalingSample>,
    pub zeta: SlopeFit,
    pub g: SlopeFit,
    pub eta: SlopeFit,
}

/// Solves along t = s·direction for each s and fits log-log slopes of
/// ‖ζ‖, max|G_j| and ‖η − η_linear‖ against |t|.
pub fn amplitude_scaling_study(
    ctx: &NonlinearContext,
    direction: &[f64],
    amplitudes: &[f64],
) -> Result<ScalingReport> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || amplitudes.len() < 2 {
        return Err(Error::Invalid(
            "need a nonzero direction and at least two amplitudes".into(),
        ));
    }
    let dir: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let samples = amplitudes
        .par_iter()
        .map(|&s| {
            let t: Vec<f64> = dir.iter().map(|v| v * s).collect();
            let sol = lyapunov_schmidt_solve(&t, ctx)?;
            Ok(ScalingSample {
                amplitude: s,
                mu: sol.mu.clone(),
                zeta_sup: sol.zeta_sup.iter().fold(0.0, |a: f64, &b| a.max(b)),
                g_max: sol.g.iter().fold(0.0, |a: f64, &b| a.max(b.abs())),
                g: sol.g.clone(),
                eta_nonlinear: sol.eta_nonlinear,
                iterations: sol.state.iteration,
                residual: sol.report.max(),
                t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = samples.iter().map(|s| s.amplitude).collect();
    let pick = |f: fn(&ScalingSample) -> f64| -> Vec<f64> { samples.iter().map(f).collect() };
    Ok(ScalingReport {
        zeta: loglog_fit(&a, &pick(|s| s.zeta_sup)),
        g: loglog_fit(&a, &pick(|s| s.g_max)),
        eta: loglog_fit(&a, &pick(|s| s.eta_nonlinear)),
        direction: dir,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isp::{adapted_basis, tune_commensurate};
    use approx::assert_relative_eq;

    fn background(b: f64, n: usize) -> (IspContext, Background) {
        let ctx = IspContext::with_defaults(b, 1.0, n).unwrap();
        let bg = Background::new(
            VorticityModel::linear(b),
            ctx.stream.clone(),
            ctx.spectrum.clone(),
            n,
        )
        .unwrap();
        (ctx, bg)
    }

    #[test]
    fn stencils_are_exact_on_quartics() {
        let h = 0.1;
        let z: Vec<f64> = (0..=12).map(|i| i as f64 * h).collect();
        let p: Vec<f64> = z
            .iter()
            .map(|&x| 1.0 - 2.0 * x + 3.0 * x * x - x.powi(3) + 0.5 * x.powi(4))
            .collect();
        let d1 = fd_d1(&p, h);
        let d2 = fd_d2(&p, h);
        for (i, &x) in z.iter().enumerate() {
            assert_relative_eq!(
                d1[i],
                -2.0 + 6.0 * x - 3.0 * x * x + 2.0 * x.powi(3),
                epsilon = 1e-10
            );
            assert_relative_eq!(d2[i], 6.0 - 6.0 * x + 6.0 * x * x, epsilon = 1e-9);
        }
    }

    #[test]
    fn admissibility_of_equal_amplitudes() {
        let a = admissibility(&[1e-3, 1e-3], 0.1, 1e-2);
        assert!(a.admissible);
        assert_relative_eq!(a.ratios[0].unwrap(), 2e-3, max_relative = 1e-12);
        let big = admissibility(&[0.5, 1e-3], 0.1, 1e-2);
        assert!(!big.admissible);
        assert!(big.describe().contains("|t|"));
        let lopsided = admissibility(&[5e-3, 1e-5], 0.1, 1e-2);
        assert!(!lopsided.admissible && lopsided.norm_ok);
    }

    #[test]
    fn stream_solution_has_zero_residual() {
        let (_, bg) = background(1.0, 1);
        let grid = CosineGrid::new(8.0, 16).unwrap();
        let mut hat = WaveField::zeros(&grid, &bg.z, bg.d);
        for p in 0..grid.half_len() {
            for i in 0..bg.z.len() {
                hat.values[(p, i)] = bg.u[i];
            }
        }
        let rep = residual_strip(&hat, &hat.eta.clone(), &bg.model, bg.r, &bg, &grid).unwrap();
        assert!(rep.max() < 1e-9, "{rep:?}");
    }

    #[test]
    fn nonpositive_depth_is_rejected() {
        let (_, bg) = background(1.0, 1);
        let grid = CosineGrid::new(8.0, 16).unwrap();
        let hat = WaveField::zeros(&grid, &bg.z, bg.d);
        let mut eta = hat.eta.clone();
        eta[3] = -0.1;
        assert!(matches!(
            residual_strip(&hat, &eta, &bg.model, bg.r, &bg, &grid),
            Err(Error::NonpositiveDepth { .. })
        ));
    }

    /// A smooth field vanishing at z = 0, orthogonal to the first N eigenfunctions.
    fn manufactured(bg: &Background, grid: &CosineGrid) -> DMatrix<f64> {
        let x = grid.half_x();
        let mut v = DMatrix::from_fn(x.len(), bg.z.len(), |p, i| {
            let z = bg.z[i];
            (1.0 + 0.3 * (grid.base_wavenumber() * x[p]).cos()
                + 0.1 * (3.0 * grid.base_wavenumber() * x[p]).cos())
                * (z * (1.5 - z) + 0.2 * (3.0 * z).sin())
        });
        for p in 0..x.len() {
            let row: Vec<f64> = v.row(p).iter().copied().collect();
            for j in 0..bg.n {
                let c = bg.inner(&row, j);
                for i in 0..bg.z.len() {
                    v[(p, i)] -= c * bg.phi[j][i];
                }
            }
        }
        v
    }

    #[test]
    fn tilde_solve_inverts_manufactured_data() {
        for (b, n) in [(1.0, 1), (47.0, 2)] {
            let (_, bg) = background(b, n);
            let grid = CosineGrid::new(3.1, 32).unwrap();
            let v = manufactured(&bg, &grid);
            let (f, g) = apply_linear(&v, None, &bg, &grid);
            let (w, info) = solve_tilde(&f, &g, &bg, &grid).unwrap();
            assert!((&w - &v).amax() < 1e-8, "b = {b}: {}", (&w - &v).amax());
            assert!(info.defect < 1e-6, "{info:?}");
        }
    }

    #[test]
    fn inverse_norm_is_stable_under_refinement() {
        let coarse = IspContext::with_defaults(1.0, 1.0, 1).unwrap();
        let fine = IspContext::new(
            1.0,
            1.0,
            1,
            coarse.resolution.doubled(),
            6,
            &crate::isp::default_layout(),
        )
        .unwrap();
        let grid = CosineGrid::new(3.1, 16).unwrap();
        let fine_grid = CosineGrid::new(3.1, 32).unwrap();
        let est = |ctx: &IspContext, grid: &CosineGrid| {
            let bg = Background::new(
                VorticityModel::linear(1.0),
                ctx.stream.clone(),
                ctx.spectrum.clone(),
                1,
            )
            .unwrap();
            inverse_norm_estimate(&bg, grid, 30).unwrap()
        };
        let a = est(&coarse, &grid);
        let b = est(&fine, &fine_grid);
        assert!(a > 0.0 && ((a - b) / a).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let (_, bg) = background(1.0, 1);
        let grid = CosineGrid::new(3.1, 16).unwrap();
        let mut f = DMatrix::zeros(grid.half_len(), bg.z.len());
        for i in 0..bg.z.len() {
            f[(0, i)] = bg.phi[0][i];
        }
        let g = vec![0.0; grid.half_len()];
        assert!(matches!(
            solve_tilde(&f, &g, &bg, &grid),
            Err(Error::CompatibilityViolation { .. })
        ));
    }

    #[test]
    fn near_singular_mode_is_reported() {
        let (_, bg) = background(1.0, 1);
        // k_1² = −μ_1 with μ_1 no longer treated as modal
        let k = (-bg.mu[0]).sqrt();
        let grid = CosineGrid::new(2.0 * std::f64::consts::PI / k, 16).unwrap();
        let mut trimmed = bg.clone();
        trimmed.n = 0;
        let f = DMatrix::zeros(grid.half_len(), bg.z.len());
        let g = vec![0.0; grid.half_len()];
        assert!(matches!(
            solve_tilde(&f, &g, &trimmed, &grid),
            Err(Error::NearSingularMode { n: 1, j: 1, .. })
        ));
    }

    #[test]
    fn modal_correction_round_trip() {
        let grid = CosineGrid::new(5.0, 32).unwrap();
        let mu_star = -grid.wavenumber(2).powi(2);
        let x = grid.half_x();
        let zeta: Vec<f64> = x
            .iter()
            .map(|&v| 0.3 + (grid.wavenumber(1) * v).cos() - 0.2 * (grid.wavenumber(4) * v).cos())
            .collect();
        let zxx = grid.dxx(&zeta);
        let rhs: Vec<f64> = zxx
            .iter()
            .zip(&zeta)
            .map(|(a, b)| a - mu_star * b)
            .collect();
        let back = grid.values(&modal_correction(&grid.coeffs(&rhs), mu_star, 2, &grid).unwrap());
        for (a, b) in back.iter().zip(&zeta) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let mut leaky = grid.coeffs(&rhs);
        leaky[2] = 1e-3;
        assert!(matches!(
            modal_correction(&leaky, mu_star, 2, &grid),
            Err(Error::KernelLeakage { .. })
        ));
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let x = [1e-3, 2e-3, 4e-3, 8e-3];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        let fit = loglog_fit(&x, &y);
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert!(fit.half_width < 1e-10);
    }

    fn single_mode_context() -> NonlinearContext {
        let isp = IspContext::with_defaults(1.0, 1.0, 1).unwrap();
        let basis = adapted_basis(&isp).unwrap().omegas;
        let target = tune_commensurate(&isp.lambda, 1, 1e-6).unwrap();
        NonlinearContext::new(isp, basis, target, Some(32), SolverOptions::default()).unwrap()
    }

    #[test]
    fn zero_amplitude_is_trivial() {
        let ctx = single_mode_context();
        let sol = lyapunov_schmidt_solve(&[0.0], &ctx).unwrap();
        assert_eq!(sol.field.sup(), 0.0);
        assert_eq!(sol.mu, ctx.target.mu_star);
        assert!(sol.report.max() < 1e-12);
    }

    #[test]
    fn single_mode_wave_converges() {
        let ctx = single_mode_context();
        let sol = lyapunov_schmidt_solve(&[1e-3], &ctx).unwrap();
        assert!(sol.report.max() < 1e-9, "{:?}", sol.report);
        assert!(sol.eta_nonlinear < 1e-4);
        assert!(sol.field.even_mismatch() == 0.0);
        assert!(sol.state.residual_history.last().unwrap() < &1e-10);
    }

    #[test]
    fn inadmissible_amplitudes_are_refused() {
        let ctx = single_mode_context();
        assert!(matches!(
            lyapunov_schmidt_solve(&[0.5], &ctx),
            Err(Error::NotAdmissible(_))
        ));
        assert!(matches!(
            lyapunov_schmidt_solve(&[1e-3, 1e-3], &ctx),
            Err(Error::Invalid(_))
        ));
    }
}
