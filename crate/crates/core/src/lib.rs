//! Precipitating quasi-geostrophic (PQG) models with Kessler-type warm-rain
//! microphysics.
//!
//! The crate provides the moist thermodynamics and Clausius–Clapeyron
//! machinery ([`thermo`]), bulk microphysics ([`microphysics`]), vertical
//! background profiles ([`background`]), potential-vorticity inversion
//! ([`inversion`]), time integration of the continuous-closure and
//! fast-condensation model variants ([`dynamics`]), and the configuration,
//! output and experiment plumbing used by the `pqg` command-line tool
//! ([`config`], [`frame`], [`experiments`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod background;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod frame;
pub mod inversion;
pub mod microphysics;
pub mod ode;
pub mod spectral;
pub mod thermo;
pub mod transport;

pub use error::{Error, Result};
