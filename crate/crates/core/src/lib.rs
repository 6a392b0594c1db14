//! Expected numbers of unfilled albums in the siblings variant of the coupon
//! collector problem, computed four independent ways.

pub mod asymptotics;
pub mod cli;
pub mod exact;
pub mod families;
pub mod limits;
pub mod numeric;
pub mod quadrature;
pub mod simulator;
