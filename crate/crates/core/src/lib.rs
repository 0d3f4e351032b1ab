//! Simulation and analysis of threshold-memristor networks used as
//! physical reservoirs.
//!
//! - [`memristor`]: the element's rate law and hard resistance limits
//! - [`network`]: directed networks, validation, reference topologies, file format
//! - [`signals`]: periodic voltage sources
//! - [`dynamics`]: nodal solve coupled to implicit Euler integration
//! - [`spectral`]: DFT and the Fourier-space dissimilarity measure
//! - [`readout`]: ridge-trained linear readout and the waveform task

pub mod dynamics;
pub mod error;
pub mod memristor;
pub mod network;
pub mod readout;
pub mod signals;
pub mod spectral;
pub mod util;

pub use dynamics::{
    simulate, solve_node_voltages, step_implicit_euler, DriveAssignment, NetworkState,
    SimulationConfig, SimulationTrace, Simulator,
};
pub use error::{Error, Result};
pub use memristor::MemristorParams;
pub use network::{build_cube, build_series_benchmark, Link, Network, Node, NodeId, NodeRole};
pub use signals::{Signal, SignalKind};
