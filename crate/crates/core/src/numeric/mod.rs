pub mod quad;
pub mod stats;
