//! Attribute-object composition learning with group-axiom constraints.
//!
//! Coupling and decoupling networks add or remove an attribute from an object
//! embedding. They are trained so that the transformations behave like a
//! group (symmetry, closure, invertibility, commutativity), and attributes are
//! recognized by comparing how far an embedding moves under each of them.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numgrad;
pub mod train;
pub mod cli;

pub use error::{Error, Result};
