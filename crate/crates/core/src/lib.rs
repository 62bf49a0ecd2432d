//! A stochastic simulator for the oRules of state reduction applied to a
//! radioactive source, a detector, a mechanical device and, depending on
//! the experiment, a cat and an outside observer.

pub mod cli;
pub mod dynamics;
pub mod harness;
pub mod rules;
pub mod scenario;
pub mod state;
