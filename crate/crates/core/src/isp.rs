//! Inverse spectral problem: the eigenvalue map T: δ → μ, its Jacobian,
//! the adapted perturbation basis, Newton inversion and commensurate tuning.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Hermite5;
use crate::quad;
use crate::spectrum::{sturm_liouville_spectrum, DispersionSpectrum};
use crate::stream::{
    linear_stream, solve_stream, surface_slope_first_order, Resolution, StreamSolution,
};
use crate::vorticity::{make_bump_basis, BumpLayout, SmoothBump, VorticityModel};

/// Fixed data of the unperturbed triple (ω_0 = b p, d, u_0).
#[derive(Debug, Clone)]
pub struct IspContext {
    pub b: f64,
    pub d: f64,
    pub n: usize,
    pub resolution: Resolution,
    pub stream: StreamSolution,
    pub spectrum: DispersionSpectrum,
    pub lambda: Vec<f64>,
    pub kappa0: f64,
    pub k0: f64,
    pub candidates: Vec<SmoothBump>,
    pub stream_tol: f64,
}

/// Smallest half-width among `span` candidate bumps.
pub fn candidate_radius(span: usize, layout: &BumpLayout) -> Result<f64> {
    Ok(layout
        .intervals(span)?
        .iter()
        .map(|iv| 0.5 * (iv[1] - iv[0]))
        .fold(f64::INFINITY, f64::min))
}

pub fn default_layout() -> BumpLayout {
    BumpLayout::Overlapping {
        lo: 0.05,
        hi: 0.95,
        overlap: 0.5,
    }
}

impl IspContext {
    pub fn new(
        b: f64,
        d: f64,
        n: usize,
        resolution: Resolution,
        span: usize,
        layout: &BumpLayout,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("N must be at least 1".into()));
        }
        let stream = linear_stream(b, d, resolution)?;
        let model = VorticityModel::linear(b);
        let spectrum = sturm_liouville_spectrum(&stream, &model, n + 1, None)?;
        if spectrum.negative_count != n {
            return Err(Error::CountChanged {
                expected: n,
                found: spectrum.negative_count,
            });
        }
        let candidates = make_bump_basis(span, layout)?;
        Ok(Self {
            b,
            d,
            n,
            resolution,
            lambda: spectrum.mu()[..n].to_vec(),
            kappa0: spectrum.kappa,
            k0: stream.slope_at_surface,
            stream,
            spectrum,
            candidates,
            stream_tol: 1e-12,
        })
    }

    /// Default candidate layout with a resolution matched to the steepness of u_0.
    pub fn with_defaults(b: f64, d: f64, n: usize) -> Result<Self> {
        let layout = default_layout();
        let span = 4 * n + 2;
        let res = Resolution::resolving(max_linear_slope(b, d), candidate_radius(span, &layout)?);
        Self::new(b, d, n, res, span, &layout)
    }

    fn sqrt_b(&self) -> f64 {
        self.b.sqrt()
    }

    fn sin_bd(&self) -> f64 {
        (self.sqrt_b() * self.d).sin()
    }

    pub fn u0(&self, z: f64) -> f64 {
        (self.sqrt_b() * z).sin() / self.sin_bd()
    }
}

/// max |u_0'| on [0, d], attained at z = 0.
pub fn max_linear_slope(b: f64, d: f64) -> f64 {
    if b == 0.0 {
        1.0 / d
    } else {
        (b.sqrt() / (b.sqrt() * d).sin()).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Positive,
    Negative,
}

/// Per-eigenvalue constants of the folded Jacobian formula.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeConstants {
    pub lambda: f64,
    /// √|b + λ|.
    pub s: f64,
    pub hyperbolic: bool,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ModeConstants {
    fn phi(&self, z: f64) -> f64 {
        if self.hyperbolic {
            self.c * (self.s * z).sinh()
        } else {
            self.c * (self.s * z).sin()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeProfileData {
    /// Period Λ = 2π/√b of u_0.
    pub lambda_period: f64,
    /// Length of the monotone interval on which u_0 runs from 0 to 1.
    pub d_star: f64,
    /// Index M of the preimage inequality, clamped at 0.
    pub m_index: usize,
    /// Number of preimage pairs actually present in (0, d).
    pub fold_pairs: usize,
    pub branch: Branch,
    /// Left end of the monotone interval (0 or Λ/2).
    pub start: f64,
    pub shift: f64,
    pub centers: Vec<f64>,
    pub modes: Vec<ModeConstants>,
    pub z_grid: Vec<f64>,
    pub f: Vec<Vec<f64>>,
}

impl ModeProfileData {
    /// f_l at an absolute depth z of the monotone interval.
    pub fn f_at(&self, l: usize, z: f64, sqrt_b: f64) -> f64 {
        let md = &self.modes[l];
        let m = self.fold_pairs as f64 + 0.5;
        let cb = (2.0 * sqrt_b * z).cos();
        let c2 = md.c * md.c;
        let y = z - self.shift;
        if md.hyperbolic {
            m * (md.a + c2 + md.a * cb)
                - c2 * (0.5 * (2.0 * md.s * z).cosh() + md.b * (2.0 * md.s * y).cosh())
        } else {
            m * (md.a - c2 + md.a * cb)
                + c2 * (0.5 * (2.0 * md.s * z).cos() + md.b * (2.0 * md.s * y).cos())
        }
    }

    /// All subintervals of (0, d) mapped onto the monotone interval by u_0.
    pub fn preimage_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(self.start, self.start + self.d_star)];
        for &c in &self.centers {
            let y0 = self.start - self.shift;
            let y1 = y0 + self.d_star;
            out.push((c + y0, c + y1));
            out.push((c - y1, c - y0));
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }

    /// Map p ∈ [0, 1] to the monotone interval and the Jacobian dz/dp.
    pub fn z_of_p(&self, p: f64, sqrt_b: f64, abs_sin: f64) -> (f64, f64) {
        let x = p * abs_sin;
        (
            self.start + x.asin() / sqrt_b,
            abs_sin / (sqrt_b * (1.0 - x * x).sqrt()),
        )
    }
}

/// Constants and folded kernels f_l on the monotone interval of u_0.
pub fn mode_profile(ctx: &IspContext) -> Result<ModeProfileData> {
    let sb = ctx.sqrt_b();
    let sd = ctx.sin_bd();
    let lam = 2.0 * PI / sb;
    let d = ctx.d;
    let d_star = sd.abs().asin() / sb;
    let (branch, start, shift, quarter) = if sd > 0.0 {
        (Branch::Positive, 0.0, -0.25 * lam, 0.75)
    } else {
        (Branch::Negative, 0.5 * lam, 0.25 * lam, 0.25)
    };
    let fold_pairs = ((d - start) / lam + 1e-12).floor().max(0.0) as usize;
    let centers: Vec<f64> = match branch {
        Branch::Positive => (0..fold_pairs).map(|k| (k as f64 + 0.75) * lam).collect(),
        Branch::Negative => (1..=fold_pairs).map(|k| (k as f64 + 0.25) * lam).collect(),
    };
    // largest M with Λ(M + 3/4) < d (1/4 on the negative branch)
    let m_raw = (d / lam - quarter).ceil() - 1.0;
    let m_index = if m_raw > 0.0 { m_raw as usize } else { 0 };
    let k0 = ctx.k0;
    let mut modes = Vec::with_capacity(ctx.n);
    for l in 0..ctx.n {
        let lambda = ctx.lambda[l];
        let sq = ctx.b + lambda;
        if sq.abs() < 1e-12 {
            return Err(Error::InconsistentBranch(format!(
                "b + λ_{} vanishes; eigenfunction is linear",
                l + 1
            )));
        }
        let hyperbolic = sq < 0.0;
        let s = sq.abs().sqrt();
        let c = if hyperbolic {
            1.0 / ((2.0 * s * d).sinh() / (4.0 * s) - 0.5 * d).sqrt()
        } else {
            1.0 / (0.5 * d - (2.0 * s * d).sin() / (4.0 * s)).sqrt()
        };
        let trig = |x: f64| if hyperbolic { x.cosh() } else { x.cos() };
        let bsum: f64 = centers.iter().map(|&ck| trig(2.0 * s * ck)).sum();
        let mut mc = ModeConstants {
            lambda,
            s,
            hyperbolic,
            a: 0.0,
            b: bsum,
            c,
        };
        let phid = mc.phi(d);
        let numeric = ctx.spectrum.pairs[l].phi_at_d;
        if (phid - numeric).abs() > 1e-6 * phid.abs().max(1.0) {
            return Err(Error::InconsistentBranch(format!(
                "closed-form φ_{}(d) = {phid} but the shooting eigenfunction gives {numeric}",
                l + 1
            )));
        }
        mc.a = phid * phid / (k0 * k0 * sd * sd) * (ctx.b - 2.0 / k0);
        modes.push(mc);
    }
    let npts = 257;
    let z_grid: Vec<f64> = (0..npts)
        .map(|i| start + d_star * i as f64 / (npts - 1) as f64)
        .collect();
    let mut data = ModeProfileData {
        lambda_period: lam,
        d_star,
        m_index,
        fold_pairs,
        branch,
        start,
        shift,
        centers,
        modes,
        z_grid,
        f: Vec::new(),
    };
    data.f = (0..ctx.n)
        .map(|l| data.z_grid.iter().map(|&z| data.f_at(l, z, sb)).collect())
        .collect();
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IspJacobian {
    pub entries: Vec<Vec<f64>>,
    pub method: JacobianMethod,
    pub condition: f64,
    /// Largest disagreement between the two analytic paths, or the
    /// Richardson difference for finite differences.
    pub check: f64,
}

impl IspJacobian {
    fn new(entries: Vec<Vec<f64>>, method: JacobianMethod, check: f64) -> Self {
        let condition = condition_number(&entries);
        Self {
            entries,
            method,
            condition,
            check,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.entries.len();
        let m = self.entries.first().map_or(0, |r| r.len());
        DMatrix::from_fn(n, m, |i, j| self.entries[i][j])
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .fold(0.0, |a, &b| a.max(b.abs()))
    }
}

pub fn condition_number(entries: &[Vec<f64>]) -> f64 {
    let n = entries.len();
    if n == 0 {
        return 1.0;
    }
    let m = DMatrix::from_fn(n, entries[0].len(), |i, j| entries[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn breaks_for(intervals: &[(f64, f64)], pieces: usize) -> Vec<Vec<f64>> {
    intervals
        .iter()
        .map(|&(a, b)| {
            (0..=pieces)
                .map(|i| a + (b - a) * i as f64 / pieces as f64)
                .collect()
        })
        .collect()
}

/// μ_lj from the full-interval formula ∫_0^d ω_j'(u_0)(A_l cos²√bz − φ_l²) dz
/// with closed-form eigenfunctions.
fn jacobian_full_interval(
    ctx: &IspContext,
    prof: &ModeProfileData,
    basis: &[SmoothBump],
) -> Result<Vec<Vec<f64>>> {
    let sb = ctx.sqrt_b();
    let pieces = breaks_for(&prof.preimage_intervals(), 8);
    (0..ctx.n)
        .map(|l| {
            let md = &prof.modes[l];
            basis
                .iter()
                .map(|w| {
                    let g = |z: f64| {
                        let c = (sb * z).cos();
                        let ph = md.phi(z);
                        w.derivative(ctx.u0(z)) * (md.a * c * c - ph * ph)
                    };
                    let mut v = 0.0;
                    for br in &pieces {
                        v += quad::integrate_pieces(g, br, 1e-11, 1e-11)?.0;
                    }
                    Ok(v)
                })
                .collect()
        })
        .collect()
}

/// μ_lj through the quadratic form with u_j'(d) and the shooting eigenfunctions.
fn jacobian_quadratic_form(
    ctx: &IspContext,
    prof: &ModeProfileData,
    basis: &[SmoothBump],
) -> Result<Vec<Vec<f64>>> {
    let slopes = surface_slope_first_order(basis, ctx.b, ctx.d)?;
    let k0 = ctx.k0;
    let pieces = breaks_for(&prof.preimage_intervals(), 8);
    let h = ctx.spectrum.fine_h();
    (0..ctx.n)
        .map(|l| {
            let pair = &ctx.spectrum.pairs[l];
            let ddphi: Vec<f64> = pair
                .fine_phi
                .iter()
                .map(|p| -(ctx.b + pair.mu) * p)
                .collect();
            let interp = Hermite5 {
                h,
                y: &pair.fine_phi,
                dy: &pair.fine_phi_prime,
                ddy: &ddphi,
            };
            let phid = pair.phi_at_d;
            basis
                .iter()
                .zip(&slopes)
                .map(|(w, &uj)| {
                    let mut v = 0.0;
                    for br in &pieces {
                        v += quad::integrate_pieces(
                            |z| {
                                let p = interp.eval(z);
                                w.derivative(ctx.u0(z)) * p * p
                            },
                            br,
                            1e-11,
                            1e-11,
                        )?
                        .0;
                    }
                    Ok(uj / (k0 * k0) * (2.0 / k0 - ctx.b) * phid * phid - v)
                })
                .collect()
        })
        .collect()
}

/// μ_lj over the monotone interval, ∫ ω_j'(u_0) f_l dz, in the variable p = u_0(z).
pub fn jacobian_folded(
    ctx: &IspContext,
    prof: &ModeProfileData,
    basis: &[SmoothBump],
) -> Result<Vec<Vec<f64>>> {
    let sb = ctx.sqrt_b();
    let abs_sin = ctx.sin_bd().abs();
    (0..ctx.n)
        .map(|l| {
            basis
                .iter()
                .map(|w| {
                    let mut br: Vec<f64> = w
                        .elements
                        .iter()
                        .flat_map(|e| [e.center - e.radius, e.center, e.center + e.radius])
                        .collect();
                    br.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    br.dedup();
                    let v = quad::integrate_pieces(
                        |p| {
                            let (z, dz) = prof.z_of_p(p, sb, abs_sin);
                            w.derivative(p) * prof.f_at(l, z, sb) * dz
                        },
                        &br,
                        1e-13,
                        1e-12,
                    )?
                    .0;
                    Ok(v)
                })
                .collect()
        })
        .collect()
}

/// Analytic Jacobian at δ = 0; the quadratic-form path must agree to 1e-8.
pub fn jacobian_analytic(ctx: &IspContext, basis: &[SmoothBump]) -> Result<IspJacobian> {
    if basis.len() != ctx.n {
        return Err(Error::Invalid(format!(
            "basis has {} elements, N = {}",
            basis.len(),
            ctx.n
        )));
    }
    let prof = mode_profile(ctx)?;
    let a = jacobian_full_interval(ctx, &prof, basis)?;
    let b = jacobian_quadratic_form(ctx, &prof, basis)?;
    let mut worst = 0.0f64;
    for l in 0..ctx.n {
        for j in 0..ctx.n {
            let diff = (a[l][j] - b[l][j]).abs();
            worst = worst.max(diff);
            if diff > 1e-8 * a[l][j].abs().max(1.0) {
                return Err(Error::Mismatch {
                    what: "jacobian_analytic paths",
                    a: a[l][j],
                    b: b[l][j],
                });
            }
        }
    }
    Ok(IspJacobian::new(a, JacobianMethod::Analytic, worst))
}

/// Result of one evaluation of T, keeping the background it was built from.
#[derive(Debug, Clone)]
pub struct MapEval {
    pub delta: Vec<f64>,
    pub mu: Vec<f64>,
    pub model: VorticityModel,
    pub stream: StreamSolution,
    pub spectrum: DispersionSpectrum,
}

/// T(δ): first N eigenvalues of the perturbed triple.
pub fn map_t(delta: &[f64], ctx: &IspContext, basis: &[SmoothBump]) -> Result<MapEval> {
    if delta.len() != ctx.n || basis.len() != ctx.n {
        return Err(Error::Invalid("delta and basis must have length N".into()));
    }
    let model = VorticityModel::new(ctx.b, basis.to_vec(), delta.to_vec())?;
    let (stream, spectrum) = if model.is_unperturbed() {
        (ctx.stream.clone(), ctx.spectrum.clone())
    } else {
        let stream = solve_stream(&model, ctx.d, ctx.stream_tol, ctx.resolution)?;
        let spectrum = sturm_liouville_spectrum(&stream, &model, ctx.n + 1, None)?;
        (stream, spectrum)
    };
    if spectrum.negative_count != ctx.n {
        return Err(Error::CountChanged {
            expected: ctx.n,
            found: spectrum.negative_count,
        });
    }
    Ok(MapEval {
        delta: delta.to_vec(),
        mu: spectrum.mu()[..ctx.n].to_vec(),
        model,
        stream,
        spectrum,
    })
}

/// Central differences of T at δ = 0, column by column.
pub fn jacobian_fd(ctx: &IspContext, basis: &[SmoothBump], step: f64) -> Result<IspJacobian> {
    let cols = fd_columns(ctx, basis, step)?;
    let n = ctx.n;
    let entries = (0..n)
        .map(|l| (0..n).map(|j| cols[j][l]).collect())
        .collect();
    Ok(IspJacobian::new(
        entries,
        JacobianMethod::FiniteDifference,
        0.0,
    ))
}

fn fd_columns(ctx: &IspContext, basis: &[SmoothBump], step: f64) -> Result<Vec<Vec<f64>>> {
    let n = ctx.n;
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = step;
            let p = map_t(&e, ctx, basis)?.mu;
            e[j] = -step;
            let m = map_t(&e, ctx, basis)?.mu;
            Ok((0..n).map(|l| (p[l] - m[l]) / (2.0 * step)).collect())
        })
        .collect()
}

/// Richardson-checked finite-difference Jacobian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RichardsonFd {
    /// Central differences at the requested step.
    pub jacobian: IspJacobian,
    pub extrapolated: Vec<Vec<f64>>,
    /// Ratio of successive differences at steps h, h/2, h/4 on the
    /// dominant entry; 4 for second-order convergence.
    pub ratio: f64,
    /// max |J(h) − J(h/2)| relative to max |J|.
    pub spread: f64,
    /// Either the ratio is near 4 or the truncation error is already below
    /// `spread_tol`, where the ratio is dominated by eigenvalue noise.
    pub confirmed: bool,
}

pub fn jacobian_fd_richardson(
    ctx: &IspContext,
    basis: &[SmoothBump],
    step: f64,
) -> Result<RichardsonFd> {
    let j1 = jacobian_fd(ctx, basis, step)?;
    let j2 = jacobian_fd(ctx, basis, 0.5 * step)?;
    let j4 = jacobian_fd(ctx, basis, 0.25 * step)?;
    let n = ctx.n;
    let mut best = (0usize, 0usize, -1.0f64);
    for l in 0..n {
        for j in 0..n {
            let d = (j1.entries[l][j] - j2.entries[l][j]).abs();
            if d > best.2 {
                best = (l, j, d);
            }
        }
    }
    let (l, j, worst) = best;
    let d12 = j1.entries[l][j] - j2.entries[l][j];
    let d24 = j2.entries[l][j] - j4.entries[l][j];
    let ratio = if d24 == 0.0 { f64::INFINITY } else { d12 / d24 };
    let extrapolated = (0..n)
        .map(|l| {
            (0..n)
                .map(|j| (4.0 * j4.entries[l][j] - j2.entries[l][j]) / 3.0)
                .collect()
        })
        .collect();
    let scale = j1.max_abs().max(f64::MIN_POSITIVE);
    let spread = worst / scale;
    let confirmed = (3.0..=5.0).contains(&ratio) || spread < RICHARDSON_SPREAD_TOL;
    let mut jacobian = j1;
    jacobian.check = worst;
    Ok(RichardsonFd {
        jacobian,
        extrapolated,
        ratio,
        spread,
        confirmed,
    })
}

const RICHARDSON_SPREAD_TOL: f64 = 1e-5;

/// Adapted basis ω_j with Jacobian ≈ identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptedBasis {
    pub omegas: Vec<SmoothBump>,
    /// Coefficients of ω_j in the candidate bumps (one row per j).
    pub coefficients: Vec<Vec<f64>>,
    pub constraint_condition: f64,
    /// max_lj |∫ α_j(u_0) f_l − δ_lj| by direct quadrature in z.
    pub biorthogonality_residual: f64,
    /// max_j |∫ α_j(u_0) cos √b z|.
    pub cos_residual: f64,
    /// Gram determinant of the normalized {cos √b z, f_1..f_N}.
    pub gram_determinant: f64,
}

impl AdaptedBasis {
    /// α_j = ω_j'.
    pub fn alpha(&self, j: usize, p: f64) -> f64 {
        self.omegas[j].derivative(p)
    }
}

const RANK_THRESHOLD: f64 = 1e12;

/// Minimum-norm solution of the biorthogonality constraints over the candidate bumps.
///
/// Each ω_j is a combination of candidate mollifiers and α_j = ω_j', so
/// ω_j vanishes at 0 and 1 and the cos-orthogonality holds identically.
pub fn adapted_basis(ctx: &IspContext) -> Result<AdaptedBasis> {
    let prof = mode_profile(ctx)?;
    let g = jacobian_folded(ctx, &prof, &ctx.candidates)?;
    let n = ctx.n;
    let k = ctx.candidates.len();
    let gm = DMatrix::from_fn(n, k, |l, i| g[l][i]);
    let svd = gm.clone().svd(true, true);
    let sv = svd.singular_values.clone();
    let cond = if sv.min() == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / sv.min()
    };
    if !(cond < RANK_THRESHOLD) || k < n {
        return Err(Error::RankDeficient { condition: cond });
    }
    let pinv = svd
        .pseudo_inverse(1e-14 * sv.max())
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let mut coefficients = Vec::with_capacity(n);
    let mut omegas = Vec::with_capacity(n);
    for j in 0..n {
        let e = DVector::from_fn(n, |l, _| if l == j { 1.0 } else { 0.0 });
        let c = &pinv * e;
        let c: Vec<f64> = c.iter().copied().collect();
        omegas.push(SmoothBump::combine(&ctx.candidates, &c));
        coefficients.push(c);
    }
    let (biorthogonality_residual, cos_residual) = biorthogonality_residuals(ctx, &prof, &omegas)?;
    Ok(AdaptedBasis {
        omegas,
        coefficients,
        constraint_condition: cond,
        biorthogonality_residual,
        cos_residual,
        gram_determinant: gram_determinant(ctx, &prof)?,
    })
}

/// Biorthogonality residuals by direct quadrature over the monotone interval in z.
pub fn biorthogonality_residuals(
    ctx: &IspContext,
    prof: &ModeProfileData,
    omegas: &[SmoothBump],
) -> Result<(f64, f64)> {
    let sb = ctx.sqrt_b();
    let br: Vec<f64> = (0..=64)
        .map(|i| prof.start + prof.d_star * i as f64 / 64.0)
        .collect();
    let mut fr = 0.0f64;
    let mut cr = 0.0f64;
    for (j, w) in omegas.iter().enumerate() {
        for l in 0..ctx.n {
            let v = quad::integrate_pieces(
                |z| w.derivative(ctx.u0(z)) * prof.f_at(l, z, sb),
                &br,
                1e-14,
                1e-13,
            )?
            .0;
            let target = if l == j { 1.0 } else { 0.0 };
            fr = fr.max((v - target).abs());
        }
        let c = quad::integrate_pieces(
            |z| w.derivative(ctx.u0(z)) * (sb * z).cos(),
            &br,
            1e-14,
            1e-13,
        )?
        .0;
        cr = cr.max(c.abs());
    }
    Ok((fr, cr))
}

fn gram_determinant(ctx: &IspContext, prof: &ModeProfileData) -> Result<f64> {
    let sb = ctx.sqrt_b();
    let n = ctx.n + 1;
    let func = |i: usize, z: f64| {
        if i == 0 {
            (sb * z).cos()
        } else {
            prof.f_at(i - 1, z, sb)
        }
    };
    let (a, b) = (prof.start, prof.start + prof.d_star);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = quad::integrate(|z| func(i, z) * func(j, z), a, b, 1e-15, 1e-13)?.0;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let norms: Vec<f64> = (0..n).map(|i| g[(i, i)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] /= norms[i] * norms[j];
        }
    }
    Ok(g.determinant())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianRefresh {
    /// Analytic Jacobian at δ = 0 for every step.
    Frozen,
    /// Central-difference Jacobian at the current iterate.
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub refresh: JacobianRefresh,
    pub radius: f64,
    pub fd_step: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            refresh: JacobianRefresh::FiniteDifference,
            radius: 1.0,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub delta: Vec<f64>,
    pub eval: MapEval,
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Damped Newton for T(δ) = μ_target.
pub fn invert_t(
    target: &[f64],
    ctx: &IspContext,
    basis: &[SmoothBump],
    jacobian: Option<&IspJacobian>,
    start: Option<&[f64]>,
    opts: &InvertOptions,
) -> Result<Inversion> {
    if target.len() != ctx.n {
        return Err(Error::Invalid("target length must be N".into()));
    }
    let dist = sup_dist(target, &ctx.lambda);
    if dist > opts.radius {
        return Err(Error::Invalid(format!(
            "target at distance {dist} from the unperturbed eigenvalues exceeds radius {}",
            opts.radius
        )));
    }
    let frozen = match jacobian {
        Some(j) => j.matrix(),
        None => jacobian_analytic(ctx, basis)?.matrix(),
    };
    let mut delta = start.map_or_else(|| vec![0.0; ctx.n], |s| s.to_vec());
    let mut eval = map_t(&delta, ctx, basis)?;
    let mut res = sup_dist(&eval.mu, target);
    let mut history = vec![res];
    let mut iterations = 0;
    while res >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                op: "invert_T",
                iterations,
                residual: res,
                history,
            });
        }
        iterations += 1;
        let jm = match opts.refresh {
            JacobianRefresh::Frozen => frozen.clone(),
            JacobianRefresh::FiniteDifference => {
                let cols = fd_columns_at(&delta, ctx, basis, opts.fd_step)?;
                DMatrix::from_fn(ctx.n, ctx.n, |l, j| cols[j][l])
            }
        };
        let r = DVector::from_fn(ctx.n, |l, _| eval.mu[l] - target[l]);
        let step = jm
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Invalid("singular Jacobian in invert_T".into()))?;
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..=8 {
            let trial: Vec<f64> = delta
                .iter()
                .zip(step.iter())
                .map(|(d, s)| d - lam * s)
                .collect();
            match map_t(&trial, ctx, basis) {
                Ok(e) => {
                    let r2 = sup_dist(&e.mu, target);
                    if r2 < res {
                        delta = trial;
                        eval = e;
                        res = r2;
                        accepted = true;
                        break;
                    }
                }
                Err(Error::CountChanged { .. }) | Err(Error::NoConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
            lam *= 0.5;
        }
        history.push(res);
        if !accepted {
            return Err(Error::NoConvergence {
                op: "invert_T",
                iterations,
                residual: res,
                history,
            });
        }
    }
    Ok(Inversion {
        delta,
        eval,
        history,
        iterations,
    })
}

/// Central-difference Jacobian of T at an arbitrary δ.
pub fn jacobian_fd_at(
    delta: &[f64],
    ctx: &IspContext,
    basis: &[SmoothBump],
    step: f64,
) -> Result<IspJacobian> {
    let cols = fd_columns_at(delta, ctx, basis, step)?;
    let n = ctx.n;
    let entries = (0..n)
        .map(|l| (0..n).map(|j| cols[j][l]).collect())
        .collect();
    Ok(IspJacobian::new(
        entries,
        JacobianMethod::FiniteDifference,
        0.0,
    ))
}

fn fd_columns_at(
    delta: &[f64],
    ctx: &IspContext,
    basis: &[SmoothBump],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = ctx.n;
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = delta.to_vec();
            e[j] += step;
            let p = map_t(&e, ctx, basis)?.mu;
            e[j] = delta[j] - step;
            let m = map_t(&e, ctx, basis)?.mu;
            Ok((0..n).map(|l| (p[l] - m[l]) / (2.0 * step)).collect())
        })
        .collect()
}

/// Commensurate eigenvalues μ_j* = −(n_j 2π/Λ*)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commensurate {
    pub mu_star: Vec<f64>,
    pub k: Vec<f64>,
    pub pattern: Vec<u32>,
    pub lambda_star: f64,
    pub distance: f64,
}

/// Nearest μ* (sup-norm) over decreasing integer patterns n_1 > … > n_N ≤ q_max.
pub fn tune_commensurate(mu: &[f64], q_max: u32, radius: f64) -> Result<Commensurate> {
    let n = mu.len();
    if n == 0 || mu.iter().any(|&m| !(m < 0.0)) {
        return Err(Error::Invalid(
            "tune_commensurate needs negative eigenvalues".into(),
        ));
    }
    if mu.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Invalid(
            "eigenvalues must be distinct and increasing".into(),
        ));
    }
    if (q_max as usize) < n {
        return Err(Error::NoPatternWithinRadius {
            radius,
            best: f64::INFINITY,
        });
    }
    let a: Vec<f64> = mu.iter().map(|m| -m).collect();
    let mut best: Option<(f64, Vec<u32>, f64)> = None;
    let mut pattern: Vec<u32> = (0..n as u32).map(|i| n as u32 - i).collect();
    loop {
        let w: Vec<f64> = pattern.iter().map(|&p| (p * p) as f64).collect();
        let targets: Vec<f64> = a.iter().zip(&w).map(|(a, w)| a / w).collect();
        let mut cands = targets.clone();
        for i in 0..n {
            for j in i + 1..n {
                cands.push((w[i] * targets[i] + w[j] * targets[j]) / (w[i] + w[j]));
            }
        }
        for s in cands {
            let v = w
                .iter()
                .zip(&targets)
                .map(|(w, t)| w * (s - t).abs())
                .fold(0.0, f64::max);
            let better = match &best {
                None => true,
                Some((bv, bp, _)) => {
                    v < bv - 1e-12 * bv.abs().max(1e-300)
                        || (v <= bv + 1e-12 * bv.abs() && pattern[0] < bp[0])
                }
            };
            if better {
                best = Some((v, pattern.clone(), s));
            }
        }
        if !next_pattern(&mut pattern, q_max) {
            break;
        }
    }
    let (dist, pattern, s) = best.expect("at least one pattern");
    if dist > radius {
        return Err(Error::NoPatternWithinRadius { radius, best: dist });
    }
    let base = s.sqrt();
    Ok(Commensurate {
        mu_star: pattern.iter().map(|&p| -((p * p) as f64) * s).collect(),
        k: pattern.iter().map(|&p| p as f64 * base).collect(),
        lambda_star: 2.0 * PI / base,
        pattern,
        distance: dist,
    })
}

/// Next strictly decreasing pattern with entries in 1..=q_max.
fn next_pattern(p: &mut [u32], q_max: u32) -> bool {
    let n = p.len();
    // increase the rightmost entry that can grow while staying below its left neighbour
    for i in (0..n).rev() {
        let cap = if i == 0 { q_max } else { p[i - 1] - 1 };
        if p[i] < cap {
            p[i] += 1;
            for k in i + 1..n {
                p[k] = (n - k) as u32;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_profile_b1() {
        let ctx = IspContext::with_defaults(1.0, 1.0, 1).unwrap();
        let p = mode_profile(&ctx).unwrap();
        assert!((p.lambda_period - 2.0 * PI).abs() < 1e-14);
        assert!((p.d_star - 1.0).abs() < 1e-14);
        assert_eq!(p.m_index, 0);
        assert_eq!(p.fold_pairs, 0);
        assert_eq!(p.modes[0].b, 0.0);
        assert_eq!(p.branch, Branch::Positive);
    }

    #[test]
    fn normalization_constants() {
        for &(b, n) in &[(30.0, 2), (40.47, 2), (1.0, 1)] {
            let ctx = IspContext::with_defaults(b, 1.0, n).unwrap();
            let p = mode_profile(&ctx).unwrap();
            for md in &p.modes {
                let (v, _) =
                    quad::integrate(|z| md.phi(z).powi(2), 0.0, 1.0, 1e-15, 1e-14).unwrap();
                assert!((v - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_basis_gives_zero_jacobians() {
        let ctx = IspContext::with_defaults(30.0, 1.0, 2).unwrap();
        let zero = vec![SmoothBump::zero(), SmoothBump::zero()];
        let j = jacobian_analytic(&ctx, &zero).unwrap();
        assert_eq!(j.max_abs(), 0.0);
        let f = jacobian_fd(&ctx, &zero, 1e-5).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn commensurate_examples() {
        let c = tune_commensurate(&[-4.0, -1.0], 4, 0.1).unwrap();
        assert_eq!(c.pattern, vec![2, 1]);
        assert!((c.lambda_star - 2.0 * PI).abs() < 1e-12);
        assert!(c.distance < 1e-14);
        let c = tune_commensurate(&[-4.1, -0.98], 6, 0.15).unwrap();
        assert_eq!(c.pattern, vec![2, 1]);
        assert!(c
            .mu_star
            .iter()
            .zip(&[-4.1, -0.98])
            .all(|(a, b)| (a - b).abs() < 0.15));
        let c = tune_commensurate(&[-7.3], 5, 0.1).unwrap();
        assert_eq!(c.mu_star, vec![-7.3]);
        assert!((c.lambda_star - 2.0 * PI / 7.3f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            tune_commensurate(&[-4.0, -3.0, -1.0], 3, 1e-6),
            Err(Error::NoPatternWithinRadius { .. })
        ));
    }

    #[test]
    fn pattern_enumeration_is_exhaustive() {
        let mut p = vec![2, 1];
        let mut seen = vec![p.clone()];
        while next_pattern(&mut p, 4) {
            seen.push(p.clone());
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.iter().all(|q| q[0] > q[1] && q[0] <= 4));
    }

    #[test]
    fn analytic_matches_fd_generic_n2() {
        let ctx = IspContext::with_defaults(47.0, 1.0, 2).unwrap();
        let basis = make_bump_basis(2, &BumpLayout::Partition { lo: 0.05, hi: 0.95 }).unwrap();
        let a = jacobian_analytic(&ctx, &basis).unwrap();
        let f = jacobian_fd_richardson(&ctx, &basis, 1e-4).unwrap();
        assert!(f.confirmed);
        let scale = a.max_abs();
        for l in 0..2 {
            for j in 0..2 {
                assert!((a.entries[l][j] - f.jacobian.entries[l][j]).abs() < 1e-5 * scale);
            }
        }
    }

    #[test]
    fn adapted_basis_is_identity() {
        let ctx = IspContext::with_defaults(47.0, 1.0, 2).unwrap();
        let ab = adapted_basis(&ctx).unwrap();
        assert!(ab.biorthogonality_residual < 1e-9 && ab.cos_residual < 1e-9);
        assert!(ab.gram_determinant > 0.0);
        let prof = mode_profile(&ctx).unwrap();
        let folded = jacobian_folded(&ctx, &prof, &ab.omegas).unwrap();
        let direct = jacobian_analytic(&ctx, &ab.omegas).unwrap();
        assert!(direct.condition < 1.0 + 1e-8);
        for l in 0..2 {
            for j in 0..2 {
                assert!((folded[l][j] - direct.entries[l][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invert_round_trip() {
        let ctx = IspContext::with_defaults(47.0, 1.0, 2).unwrap();
        let ab = adapted_basis(&ctx).unwrap();
        let delta = [4e-4, -7e-4];
        let mu = map_t(&delta, &ctx, &ab.omegas).unwrap().mu;
        let inv = invert_t(&mu, &ctx, &ab.omegas, None, None, &InvertOptions::default()).unwrap();
        assert!(sup_dist(&inv.delta, &delta) < 1e-6);
        assert!(*inv.history.last().unwrap() < 1e-8);
        let far = [ctx.lambda[0] - 2.0, ctx.lambda[1]];
        assert!(matches!(
            invert_t(
                &far,
                &ctx,
                &ab.omegas,
                None,
                None,
                &InvertOptions::default()
            ),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn count_change_is_reported() {
        assert!(matches!(
            IspContext::with_defaults(47.0, 1.0, 3),
            Err(Error::CountChanged {
                expected: 3,
                found: 2
            })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn exact_patterns_are_recovered(s in 0.5f64..40.0, a in 2u32..7, gap in 1u32..3) {
                let n1 = a + gap;
                let mu = [-((n1 * n1) as f64) * s, -((a * a) as f64) * s];
                let c = tune_commensurate(&mu, 9, 1e-6).unwrap();
                prop_assert!(c.distance <= 1e-9 * s * (n1 * n1) as f64);
                let ratio = c.k[0] / c.k[1];
                prop_assert!((ratio - n1 as f64 / a as f64).abs() < 1e-9);
            }

            #[test]
            fn tuned_values_stay_within_distance(m1 in -200.0f64..-50.0, m2 in -45.0f64..-1.0, q in 2u32..8) {
                let c = tune_commensurate(&[m1, m2], q, 1e9).unwrap();
                prop_assert!(c.pattern[0] > c.pattern[1] && c.pattern[0] <= q);
                prop_assert!(sup_dist(&c.mu_star, &[m1, m2]) <= c.distance * (1.0 + 1e-12));
                for (m, k) in c.mu_star.iter().zip(&c.k) {
                    prop_assert!((m + k * k).abs() < 1e-9 * m.abs());
                }
            }
        }
    }
}
