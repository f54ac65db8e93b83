//! Linear N-modal fields, the flattening change of variables and the
//! spectral projectors P, P̃.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::CosineGrid;
use crate::interp::cubic_uniform;
use crate::isp::{Commensurate, MapEval};
use crate::nonlinear::admissibility;
use crate::quad::simpson_weights;
use crate::spectrum::DispersionSpectrum;
use crate::stream::StreamSolution;
use crate::vorticity::VorticityModel;

/// Stream and eigenfunctions sampled on the output z-grid.
#[derive(Debug, Clone)]
pub struct Background {
    pub model: VorticityModel,
    pub stream: StreamSolution,
    pub spectrum: DispersionSpectrum,
    /// Number of negative eigenvalues (modal directions).
    pub n: usize,
    pub d: f64,
    pub h: f64,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub ddu: Vec<f64>,
    pub dddu: Vec<f64>,
    /// ω'(u) on the grid.
    pub q: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub dphi: Vec<Vec<f64>>,
    pub ddphi: Vec<Vec<f64>>,
    pub phi_d: Vec<f64>,
    pub kappa: f64,
    pub slope: f64,
    pub r: f64,
    /// Simpson weights on the z-grid.
    pub weights: Vec<f64>,
}

impl Background {
    pub fn new(
        model: VorticityModel,
        stream: StreamSolution,
        spectrum: DispersionSpectrum,
        n: usize,
    ) -> Result<Self> {
        if spectrum.negative_count != n {
            return Err(Error::CountChanged {
                expected: n,
                found: spectrum.negative_count,
            });
        }
        let z = stream.z_grid.clone();
        let nz = z.len() - 1;
        let h = stream.d / nz as f64;
        let u = stream.u.clone();
        let du = stream.u_prime.clone();
        let ddu: Vec<f64> = u.iter().map(|&v| -model.omega(v)).collect();
        let q: Vec<f64> = u.iter().map(|&v| model.omega_prime(v)).collect();
        let dddu = q.iter().zip(&du).map(|(a, b)| -a * b).collect();
        let mu = spectrum.mu();
        let phi: Vec<Vec<f64>> = spectrum.pairs.iter().map(|p| p.phi.clone()).collect();
        let dphi = spectrum.pairs.iter().map(|p| p.phi_prime.clone()).collect();
        let ddphi = spectrum
            .pairs
            .iter()
            .zip(&phi)
            .map(|(p, f)| f.iter().zip(&q).map(|(v, qq)| -(qq + p.mu) * v).collect())
            .collect();
        let phi_d = spectrum.pairs.iter().map(|p| p.phi_at_d).collect();
        Ok(Self {
            kappa: spectrum.kappa,
            slope: stream.slope_at_surface,
            r: stream.r(),
            weights: simpson_weights(nz, h),
            d: stream.d,
            h,
            n,
            z,
            u,
            du,
            ddu,
            dddu,
            q,
            mu,
            phi,
            dphi,
            ddphi,
            phi_d,
            model,
            stream,
            spectrum,
        })
    }

    pub fn from_eval(eval: MapEval, n: usize) -> Result<Self> {
        Self::new(eval.model, eval.stream, eval.spectrum, n)
    }

    pub fn nz(&self) -> usize {
        self.z.len() - 1
    }

    /// ⟨v, φ_j⟩ by Simpson's rule.
    pub fn inner(&self, v: &[f64], j: usize) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .zip(&self.phi[j])
            .map(|((w, a), b)| w * a * b)
            .sum()
    }

    /// Reduced-coordinate amplitudes τ_j = −t_j u'(d)/φ_j(d) of surface amplitudes t.
    pub fn reduced_amplitudes(&self, t: &[f64]) -> Result<Vec<f64>> {
        t.iter()
            .enumerate()
            .map(|(j, &tj)| {
                let pd = self.phi_d[j];
                if pd.abs() < 1e-12 {
                    return Err(Error::ZeroTraceEigenfunction { j: j + 1 });
                }
                Ok(-tj * self.slope / pd)
            })
            .collect()
    }
}

/// Amplitudes and the commensurate wavenumber lattice of an N-modal wave.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalState {
    /// Surface amplitudes: η = d + Σ t_j cos(k_j x) + O(|t|²).
    pub t: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub k: Vec<f64>,
    pub pattern: Vec<u32>,
    pub lambda_star: f64,
    pub epsilon: f64,
    pub delta_bound: f64,
}

impl ModalState {
    pub fn new(t: Vec<f64>, target: &Commensurate, epsilon: f64, delta_bound: f64) -> Result<Self> {
        if t.len() != target.mu_star.len() {
            return Err(Error::Invalid(format!(
                "{} amplitudes for {} modes",
                t.len(),
                target.mu_star.len()
            )));
        }
        let adm = admissibility(&t, epsilon, delta_bound);
        if !adm.admissible {
            return Err(Error::NotAdmissible(adm.describe()));
        }
        Ok(Self {
            t,
            mu_star: target.mu_star.clone(),
            k: target.k.clone(),
            pattern: target.pattern.clone(),
            lambda_star: target.lambda_star,
            epsilon,
            delta_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.t.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Flattened,
    Physical,
}

/// Even Λ*-periodic field on the half x-grid times the stream z-grid.
#[derive(Debug, Clone)]
pub struct WaveField {
    pub period: f64,
    /// Points per period on the full grid.
    pub m: usize,
    pub z: Vec<f64>,
    /// Rows x_p = pΛ/m for p = 0..=m/2, columns z-nodes.
    pub values: DMatrix<f64>,
    /// η on the half grid.
    pub eta: Vec<f64>,
    pub frame: Frame,
    /// Separable part Σ a_j(x)φ_j(z) of `values`, when known, so that its
    /// z-derivatives can be taken from the eigenfunctions.
    pub modal: Option<ModalParts>,
}

#[derive(Debug, Clone)]
pub struct ModalParts {
    /// a_j on the half grid.
    pub amplitudes: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub dphi: Vec<Vec<f64>>,
    pub ddphi: Vec<Vec<f64>>,
}

impl ModalParts {
    pub fn new(amplitudes: Vec<Vec<f64>>, bg: &Background) -> Self {
        let n = amplitudes.len();
        Self {
            amplitudes,
            phi: bg.phi[..n].to_vec(),
            dphi: bg.dphi[..n].to_vec(),
            ddphi: bg.ddphi[..n].to_vec(),
        }
    }

    /// Σ a_j(x_p)φ_j(z_i).
    pub fn values(&self) -> DMatrix<f64> {
        let rows = self.amplitudes.first().map_or(0, |a| a.len());
        let cols = self.phi.first().map_or(0, |f| f.len());
        let mut out = DMatrix::zeros(rows, cols);
        for (a, f) in self.amplitudes.iter().zip(&self.phi) {
            for p in 0..rows {
                for i in 0..cols {
                    out[(p, i)] += a[p] * f[i];
                }
            }
        }
        out
    }
}

impl WaveField {
    pub fn zeros(grid: &CosineGrid, z: &[f64], d: f64) -> Self {
        Self {
            period: grid.period,
            m: grid.m,
            z: z.to_vec(),
            values: DMatrix::zeros(grid.half_len(), z.len()),
            eta: vec![d; grid.half_len()],
            frame: Frame::Flattened,
            modal: None,
        }
    }

    pub fn half_x(&self) -> Vec<f64> {
        (0..=self.m / 2)
            .map(|q| q as f64 * self.period / self.m as f64)
            .collect()
    }

    pub fn full_x(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| -0.5 * self.period + i as f64 * self.period / self.m as f64)
            .collect()
    }

    fn half_index(&self, i: usize) -> usize {
        (i as isize - (self.m / 2) as isize).unsigned_abs()
    }

    pub fn full_values(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.z.len(), |i, j| {
            self.values[(self.half_index(i), j)]
        })
    }

    pub fn full_eta(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.eta[self.half_index(i)]).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn top(&self) -> Vec<f64> {
        self.column(self.z.len() - 1)
    }

    pub fn sup(&self) -> f64 {
        self.values.amax()
    }

    /// Largest |f(x) − f(−x)| over the full grid, values and η.
    pub fn even_mismatch(&self) -> f64 {
        let full = self.full_values();
        let eta = self.full_eta();
        let mut worst = 0.0f64;
        for i in 1..self.m {
            let k = self.m - i;
            for j in 0..self.z.len() {
                worst = worst.max((full[(i, j)] - full[(k, j)]).abs());
            }
            worst = worst.max((eta[i] - eta[k]).abs());
        }
        worst
    }
}

/// Φ = Σ a_j cos(k_j x) φ_j(z) with a_j = −t_j u'(d)/φ_j(d); η = d + Σ t_j cos(k_j x).
pub fn assemble_linear(
    modal: &ModalState,
    bg: &Background,
    grid: &CosineGrid,
) -> Result<WaveField> {
    if modal.n() != bg.n {
        return Err(Error::Invalid(
            "modal state and background disagree on N".into(),
        ));
    }
    let a = bg.reduced_amplitudes(&modal.t)?;
    let x = grid.half_x();
    let mut field = WaveField::zeros(grid, &bg.z, bg.d);
    let amplitudes: Vec<Vec<f64>> = (0..bg.n)
        .map(|j| x.iter().map(|&xp| a[j] * (modal.k[j] * xp).cos()).collect())
        .collect();
    for (p, &xp) in x.iter().enumerate() {
        field.eta[p] = bg.d
            + (0..bg.n)
                .map(|j| modal.t[j] * (modal.k[j] * xp).cos())
                .sum::<f64>();
    }
    let parts = ModalParts::new(amplitudes, bg);
    field.values = parts.values();
    field.modal = Some(parts);
    Ok(field)
}

/// η = d − Φ(x, d)/u'(d).
pub fn surface_from_flat(phi: &WaveField, stream: &StreamSolution) -> Result<Vec<f64>> {
    let k = stream.slope_at_surface;
    if k == 0.0 {
        return Err(Error::DegenerateSlope { slope: k });
    }
    let eta: Vec<f64> = phi.top().iter().map(|v| stream.d - v / k).collect();
    check_depth(phi, &eta)?;
    Ok(eta)
}

fn check_depth(phi: &WaveField, eta: &[f64]) -> Result<()> {
    let x = phi.half_x();
    for (p, &e) in eta.iter().enumerate() {
        if !(e > 0.0) {
            return Err(Error::NonpositiveDepth { x: x[p], eta: e });
        }
    }
    Ok(())
}

/// Stream function in the physical domain on a fixed y-grid.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// ψ(x_p, y_i); NaN above the free surface.
    pub psi: DMatrix<f64>,
    pub eta: Vec<f64>,
    /// max |ψ(x, 0)|.
    pub bottom_mismatch: f64,
    /// max |ψ(x, η(x)) − 1|.
    pub top_mismatch: f64,
}

/// Φ̂ = Φ + u + z u'(η − d)/d on the strip and ψ(x, y) = Φ̂(x, y d/η(x)).
pub fn to_physical(
    phi: &WaveField,
    eta: &[f64],
    stream: &StreamSolution,
) -> Result<(WaveField, PhysicalField)> {
    check_depth(phi, eta)?;
    let d = stream.d;
    let nz = phi.z.len();
    if nz != stream.u.len() {
        return Err(Error::Invalid(
            "field and stream use different z-grids".into(),
        ));
    }
    let mut hat = phi.clone();
    for p in 0..phi.values.nrows() {
        let e = (eta[p] - d) / d;
        for i in 0..nz {
            hat.values[(p, i)] += stream.u[i] + phi.z[i] * stream.u_prime[i] * e;
        }
    }
    hat.eta = eta.to_vec();
    hat.frame = Frame::Physical;
    let top = eta.iter().fold(0.0f64, |a, &b| a.max(b));
    let y: Vec<f64> = (0..nz).map(|i| top * i as f64 / (nz - 1) as f64).collect();
    let h = d / (nz - 1) as f64;
    let mut psi = DMatrix::from_element(phi.values.nrows(), nz, f64::NAN);
    let mut bottom: f64 = 0.0;
    let mut top_mis: f64 = 0.0;
    for p in 0..phi.values.nrows() {
        let col: Vec<f64> = hat.values.row(p).iter().copied().collect();
        for (i, &yi) in y.iter().enumerate() {
            if yi <= eta[p] * (1.0 + 1e-14) {
                let zz = (yi * d / eta[p]).min(d);
                psi[(p, i)] = cubic_uniform(&col, h, zz);
            }
        }
        bottom = bottom.max(cubic_uniform(&col, h, 0.0).abs());
        top_mis = top_mis.max((cubic_uniform(&col, h, d) - 1.0).abs());
    }
    let physical = PhysicalField {
        x: phi.half_x(),
        y,
        psi,
        eta: eta.to_vec(),
        bottom_mismatch: bottom,
        top_mismatch: top_mis,
    };
    Ok((hat, physical))
}

/// Pulls ψ back to the strip and subtracts the stream part: the inverse of `to_physical`.
pub fn flatten_physical(physical: &PhysicalField, stream: &StreamSolution) -> Result<DMatrix<f64>> {
    let d = stream.d;
    let nz = stream.u.len();
    let hy = physical.y[1] - physical.y[0];
    let rows = physical.psi.nrows();
    let mut out = DMatrix::zeros(rows, nz);
    for p in 0..rows {
        let eta = physical.eta[p];
        let last = ((eta / hy).floor() as usize).min(nz - 1);
        if last < 3 {
            return Err(Error::OutOfRange(format!(
                "surface at x = {} below the y-grid",
                physical.x[p]
            )));
        }
        let col: Vec<f64> = (0..=last).map(|i| physical.psi[(p, i)]).collect();
        let e = (eta - d) / d;
        for i in 0..nz {
            let z = stream.z_grid[i];
            let y = z * eta / d;
            out[(p, i)] = cubic_uniform(&col, hy, y) - stream.u[i] - z * stream.u_prime[i] * e;
        }
    }
    Ok(out)
}

/// Φ_j(x) = ⟨Φ(x,·), φ_j⟩ and Φ̃ = Φ − Σ Φ_j φ_j.
pub fn project_modal(phi: &WaveField, bg: &Background) -> (Vec<Vec<f64>>, WaveField) {
    let rows = phi.values.nrows();
    let mut profiles = vec![vec![0.0; rows]; bg.n];
    let mut tilde = phi.clone();
    tilde.modal = None;
    for p in 0..rows {
        let row: Vec<f64> = phi.values.row(p).iter().copied().collect();
        for j in 0..bg.n {
            let c = bg.inner(&row, j);
            profiles[j][p] = c;
            for (i, f) in bg.phi[j].iter().enumerate() {
                tilde.values[(p, i)] -= c * f;
            }
        }
    }
    (profiles, tilde)
}
