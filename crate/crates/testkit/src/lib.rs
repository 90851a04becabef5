//! Generators and reference oracles for the test suites. Nothing here is used
//! at runtime.

pub mod alert_oracle;
pub mod checks;
pub mod fuzz;
pub mod gen;
pub mod quality_oracle;
pub mod signaling_driver;
