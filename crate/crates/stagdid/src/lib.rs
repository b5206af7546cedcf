//! Staggered difference-in-differences with multiple treatments.
//!
//! The estimation chain: ingest a balanced municipality-by-cohort panel
//! ([`panel`]), compute group-time average treatment effects against
//! never-treated controls ([`attgt`]), aggregate them into overall and
//! event-study summaries ([`aggregate`]) and joint-minus-singular
//! complementary effects ([`complement`]), and attach cluster multiplier
//! bootstrap intervals ([`inference`]). [`selection`] corrects for
//! outcome-independent attrition, [`twfe`] provides the contaminated
//! two-way fixed-effects baseline for comparison, and [`dgp`] generates
//! synthetic panels with known truth for the validation suite.

pub mod aggregate;
pub mod attgt;
pub mod cli;
pub mod complement;
pub mod config;
pub mod dgp;
pub mod error;
pub mod inference;
pub mod numerics;
pub mod panel;
pub mod pipeline;
pub mod runner;
pub mod selection;
pub mod twfe;
pub mod validate;

pub use error::{Error, Result};
