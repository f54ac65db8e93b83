//! Small-amplitude N-modal steady water waves with vorticity.
//!
//! The pipeline runs from stream solutions through the Sturm-Liouville
//! dispersion problem and the inverse spectral map to a Lyapunov-Schmidt
//! solver for the full free-boundary problem.

pub mod banded;
pub mod error;
pub mod fourier;
pub mod interp;
pub mod isp;
pub mod nonlinear;
pub mod quad;
pub mod roots;
pub mod spectrum;
pub mod stream;
pub mod vorticity;
pub mod wavefield;

pub use error::{Error, Result};
pub use fourier::CosineGrid;
pub use isp::{
    adapted_basis, invert_t, jacobian_analytic, jacobian_fd, jacobian_fd_richardson, map_t,
    tune_commensurate, AdaptedBasis, Commensurate, InvertOptions, IspContext, IspJacobian,
    JacobianRefresh, MapEval,
};
pub use nonlinear::{
    admissibility, amplitude_scaling_study, inverse_norm_estimate, lyapunov_schmidt_solve,
    residual_operator, residual_strip, solve_tilde, Admissibility, NonlinearContext,
    ResidualReport, ScalingReport, Solution, SolverOptions,
};
pub use spectrum::{
    dirichlet_spectrum, select_b, sturm_liouville_spectrum, BSelection, DispersionSpectrum,
    EigenPair,
};
pub use stream::{
    first_order_streams, linear_stream, solve_stream, surface_slope_first_order, FirstOrderStream,
    Resolution, StreamMethod, StreamSolution,
};
pub use vorticity::{make_bump_basis, BumpElement, BumpLayout, SmoothBump, VorticityModel};
pub use wavefield::{
    assemble_linear, to_physical, Background, Frame, ModalParts, ModalState, PhysicalField,
    WaveField,
};
