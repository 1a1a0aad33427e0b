//! Simulation and analysis toolkit for dual-rail g-f transmon erasure qubits.
//!
//! The logical encoding lives in the ground (|g> = |0L>) and second-excited
//! (|f> = |1L>) levels of a data transmon. Decay |f> -> |e> exits the code
//! space and is detectable as an erasure by an ancilla-assisted check; the
//! rare cascade |f> -> |e> -> |g> is the undetectable bit-flip floor.
//!
//! Module map:
//! - [`qsys`]: dense complex linear algebra on small composite Hilbert spaces
//! - [`device`]: static Hamiltonian, avoided crossings, dispersive shifts
//! - [`pulses`]: DRAG shapes, sequence compilers, the Clifford table
//! - [`noise`]: collapse operators and spin-lock noise spectroscopy
//! - [`engine`]: master-equation / trajectory evolution and instruments
//! - [`protocols`]: memory lifetime, randomized benchmarking, Bell parity
//! - [`analysis`]: fits, error budget, readout correction
//! - [`config`]: unit-aware run configuration and named presets

pub mod analysis;
pub mod config;
pub mod device;
pub mod engine;
pub mod noise;
pub mod protocols;
pub mod pulses;
pub mod qsys;
