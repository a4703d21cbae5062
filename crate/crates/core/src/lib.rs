//! Discrete weak KAM and chain-recurrence toolkit for time-periodic Lagrangians on tori.

pub mod lagrangian;
pub mod lax_oleinik;
pub mod barrier;
pub mod conley;
pub mod relations;
pub mod experiments;
