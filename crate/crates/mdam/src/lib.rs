//! Multiple imputation for survey unit and item nonresponse that leverages
//! known auxiliary population margins, with design-weighted estimation and
//! combining rules for inference across completed datasets.
//!
//! The crate provides:
//! - a survey data model with explicit item-nonresponse masks and
//!   unit-nonresponse flags ([`dataset`]);
//! - regression machinery with approximate-posterior coefficient draws
//!   ([`glm`]);
//! - two item-nonresponse imputation engines: chained equations ([`mice`])
//!   and a full-conditional Gibbs sampler ([`gibbs`]);
//! - unit-nonresponse imputation that matches known population margins via
//!   plausible-total draws and intercept matching ([`margin`]), completed by
//!   random hot-deck donation ([`hotdeck`]);
//! - design-weighted totals and ratios with combining rules ([`estimate`]);
//! - a synthetic-population generator and repeated-sampling study harness
//!   ([`simulate`], [`study`]).
//!
//! The end-to-end method arms (MMH, MH, IH) are wired together in
//! [`pipeline`], and the `mdam` binary exposes them as CLI subcommands.

pub mod config;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod gibbs;
pub mod glm;
pub mod hotdeck;
pub mod margin;
pub mod mice;
pub mod pipeline;
pub mod seed;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
