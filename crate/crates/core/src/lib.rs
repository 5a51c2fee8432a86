//! Simulation suite for cavity-mediated collective laser cooling and a
//! staged quantum heat exchanger driven by cavitating bubbles.
//!
//! * [`fock`]: truncated Fock-space operators and an exact Lindblad
//!   integrator, used as the reference for every reduced model.
//! * [`rate`]: closed moment equations for single-ion and cavity-mediated
//!   cooling, cooling-rate formulas and the collective mode.
//! * [`thermo`]: thermal oscillator states and gas thermalisation.
//! * [`bubble`]: bubble-cavity spectrum and cooling/heating classification.
//! * [`exchanger`]: photon-budget estimate and the staged exchanger loop.
//! * [`cli`]: JSON scenario configs, CSV/JSON outputs and the `phonox` binary.

pub mod bubble;
pub mod cli;
pub mod constants;
pub mod exchanger;
pub mod fock;
pub mod integrator;
pub mod rate;
pub mod thermo;
