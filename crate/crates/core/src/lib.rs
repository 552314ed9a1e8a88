//! A desk-scale laboratory for learning neural surrogates of AC power flow
//! under topology changes.
//!
//! The pipeline: parse a Matpower case ([`matpower`]), enumerate n-1 / n-2
//! contingency topologies and sample correlated injections ([`scenario`]),
//! label them with the AC solver ([`powerflow`]), train a topology-gated
//! surrogate network and its baseline encodings ([`neuralnet`]), and compare
//! generalization and throughput against the DC approximation
//! ([`experiment`]).
//!
//! Numeric kernels are generic over the scalar type ([`scalar::Real`]):
//! training and physics run in f64, the batched inference path in f32. The
//! concrete types below pin the common instantiations.

pub mod experiment;
pub mod grid;
pub mod linalg;
pub mod matpower;
pub mod neuralnet;
pub mod powerflow;
pub mod scalar;
pub mod scenario;
pub mod seeds;
pub mod util;

pub use grid::{Branch, Bus, BusKind, Gen, Grid, GridError};
pub use matpower::{parse_case, serialize_case, MatpowerError};
pub use powerflow::{
    apply_topology, branch_currents, build_ybus, check_connectivity, dc_currents, solve_ac,
    solve_dc, AcSolution, FlowVector, InjectionSample, PowerFlowError, SolveOptions, Topology,
};

/// Training-precision surrogate model (all optimization runs in f64).
pub type SurrogateModel64 = neuralnet::SurrogateModel<f64>;
/// Inference-precision surrogate model for the throughput benchmark.
pub type SurrogateModel32 = neuralnet::SurrogateModel<f32>;
/// Feature standardizer at training precision.
pub type Scaler64 = neuralnet::Scaler<f64>;
