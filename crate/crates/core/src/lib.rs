// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod adam;
pub mod cli;
pub mod admm;
pub mod dcsbm;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod gfl;
pub mod graph;
pub mod langevin;
pub mod localization;
pub mod seeding;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
