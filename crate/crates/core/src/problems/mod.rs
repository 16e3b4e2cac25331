pub mod policy;
pub mod rl;
pub mod synthetic;
pub mod traffic;

pub use rl::{TrafficSpec, TrafficTask};
pub use synthetic::{SyntheticProblem, SyntheticSpec, SyntheticTask};
