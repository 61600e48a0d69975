pub mod algebra;
pub mod config;
pub mod device;
pub mod grid;
pub mod output;
pub mod parallel;
pub mod propagator;
pub mod protocol;
pub mod units;
