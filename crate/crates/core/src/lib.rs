//! Exact pathwise simulation and heavy-traffic analysis of multiclass
//! feedforward queueing networks with fifo and preemptive-resume priority service.

pub mod error;
pub mod harness;
pub mod network;
pub mod node;
pub mod pathcalc;
pub mod rates;
pub mod reflection;
pub mod renewal;

pub use error::{Error, Result};
pub use network::{NetworkOutput, NetworkPrimitives, NetworkSpec};
pub use node::{NodeOutput, NodePrimitives, NodeSpec};
pub use pathcalc::{InvertiblePath, Knot, MonotonePath, PiecewisePath};
pub use reflection::{CriticalData, SkorokhodSolution};
