//! Transseries, associated-equation profiles and complex-plane singularity
//! arrays for nonlinear ODEs `y^(m) = A(1/x, y)`, `m = 1, 2`.

pub mod associated;
pub mod eqmodel;
pub mod integrator;
pub mod laplace;
pub mod literal;
pub mod locate;
pub mod pade;
pub mod presets;
pub mod report;
pub mod path;
pub mod predictor;
pub mod quadrature;
pub mod scan;
pub mod series;
pub mod transseries;
