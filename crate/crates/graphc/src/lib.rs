//! Command-line driver and benchmark harness for graphc.

pub mod bench;
pub mod gradcheck;
pub mod report;
pub mod values;
