//! Shared fixtures for the criterion benches.

use vorwave_core::*;

/// Two-mode problem with the (2, 1) wavenumber pattern.
pub const TWO_MODE_B: f64 = 29.86;

pub fn two_mode_isp() -> IspContext {
    IspContext::with_defaults(TWO_MODE_B, 1.0, 2).expect("two negative eigenvalues")
}

pub fn two_mode_context() -> NonlinearContext {
    let isp = two_mode_isp();
    let basis = adapted_basis(&isp).expect("adapted basis").omegas;
    let target = tune_commensurate(&isp.lambda, 2, 0.1).expect("(2, 1) pattern");
    NonlinearContext::new(isp, basis, target, None, SolverOptions::default()).expect("context")
}

/// Compatible tilde data: the linear operator applied to a smooth field
/// with its modal components removed.
pub fn tilde_data(bg: &Background, grid: &CosineGrid) -> (nalgebra::DMatrix<f64>, Vec<f64>) {
    let x = grid.half_x();
    let k = grid.base_wavenumber();
    let mut v = nalgebra::DMatrix::from_fn(x.len(), bg.z.len(), |p, i| {
        (1.0 + (k * x[p]).cos()) * bg.z[i] * (1.0 - bg.z[i])
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
    vorwave_core::nonlinear::apply_linear(&v, None, bg, grid)
}
