//! Spectral Monte Carlo simulation and analytic verification for the
//! stochastic spatial AK growth model on the circle.
//!
//! Capital `K(t, x)` evolves by `dK = (K'' + A K − c N) dt + B(K) dW`.
//! The optimal policy and value function are explicit and depend on the
//! state only through its projection on the principal eigenfunction `e₀`.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod config;
pub mod economy;
pub mod error;
pub mod fields;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod value;
pub mod verify;

pub use economy::{AlphaRest, ModelFields, ModelParams, PolicyConstants, Problem};
pub use error::{Error, Result};
pub use fields::{FieldRecipe, SpatialField, SpatialGrid};
pub use report::{Check, Relation, VerificationReport};
pub use spectral::EigenSystem;
pub use value::ExtendedReal;
