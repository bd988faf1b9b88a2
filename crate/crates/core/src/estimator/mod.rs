//! FIML estimation of latent basis growth models.

pub mod deviance;
pub mod fit;
pub mod layout;
pub mod numdiff;
pub mod optim;
pub mod start;
pub mod transform;

pub use deviance::{analytic_gradient, fiml_deviance, NaturalGradient, Objective};
pub use fit::{
    fit, parameter_rows, read_parameter_table, wald_ci, write_parameter_table, FitOptions, FitResult,
    FitStatus, ParameterRow,
};
pub use layout::{CrossKind, ParamClass, ParamLayout, RateStructure, Slot};
pub use numdiff::{numeric_gradient, numeric_hessian};
pub use start::starting_values;
