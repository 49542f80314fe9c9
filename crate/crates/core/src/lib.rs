//! Two-dimensional electrical impedance tomography: P1 finite-element forward
//! model, linearized difference imaging and ADMM reconstruction with
//! nonlinear weighted anisotropic total variation.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common double-precision case.

// `!(x > 0)` is the NaN-rejecting form used throughout parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward;
pub mod image;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod scalar;

pub use error::{EitError, Result};
pub use forward::{
    add_noise, assemble_stiffness, extract_voltages, sensitivity_matrix, signed_difference,
    simulate_frame, ConductivityField, DrivePotentials, ForwardSolver, NeighboringProtocol,
    SensitivityMatrix, VoltageFrame, LINEARIZATION_SIGN,
};
pub use image::Image;
pub use inverse::{
    reconstruct_fotv, reconstruct_nwatv, reconstruct_tikhonov, reconstruct_tv_isotropic, AdmmState,
    AdmmSystem, IterationDiagnostics, ReconResult, Regularizer, SolverConfig, Termination,
};
pub use mesh::{
    build_difference_operators, generate_disk_mesh, place_electrodes, place_electrodes_at_angles,
    rasterize, DifferenceOperators, ElectrodeLayout, Point, RasterGrid, TriMesh,
};
pub use metrics::{evaluate_images, profile, psnr, relative_error, EvalReport, ProfileLine};
pub use phantom::{assign_conductivity, lung_model, Inclusion, PhantomSpec};
pub use scalar::Real;

pub type TriMeshF64 = TriMesh<f64>;
pub type TriMeshF32 = TriMesh<f32>;
pub type ElectrodeLayoutF64 = ElectrodeLayout<f64>;
pub type ConductivityFieldF64 = ConductivityField<f64>;
pub type ConductivityFieldF32 = ConductivityField<f32>;
pub type VoltageFrameF64 = VoltageFrame<f64>;
pub type SensitivityMatrixF64 = SensitivityMatrix<f64>;
pub type SensitivityMatrixF32 = SensitivityMatrix<f32>;
pub type DifferenceOperatorsF64 = DifferenceOperators<f64>;
pub type SolverConfigF64 = SolverConfig<f64>;
pub type ReconResultF64 = ReconResult<f64>;
pub type PhantomSpecF64 = PhantomSpec<f64>;
pub type ImageF64 = Image<f64>;
