//! Exact Gaussian quasi-maximum-likelihood estimation for vector ARMA models
//! with time-dependent coefficients and innovation scale.

pub mod assumptions;
pub mod asymptotics;
pub mod config;
pub mod error;
pub mod estimate;
pub mod examples;
pub mod jet;
pub mod likelihood;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod repr;
pub mod simulate;
pub mod timefn;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use model::{Block, ParamLayout, Series, TdVarmaModel};
pub use timefn::{Coef, MatrixTimeFunction, Primitive, ScalarTimeFunction};
