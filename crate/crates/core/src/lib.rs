//! Numerical laboratory for long-wave ion acoustic dynamics.
//!
//! The crate couples a pseudospectral KdV hierarchy to a rescaled
//! Euler-Poisson solver and checks, at desk scale, that the fluid solution
//! tracks the order-one expansion with a second-order error in the
//! disturbance amplitude. A velocity-space toolkit (Maxwellians, moment
//! projections, Landau collision frequency, weighted energy functionals)
//! covers the kinetic side of the model hierarchy.

// negated comparisons are deliberate: they reject NaN along with the
// out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod euler_poisson;
pub mod expansion;
pub mod grid;
pub mod kdv;
pub mod kinetic;
pub mod landau;
pub mod study;

pub use grid::{Field1D, SpatialGrid};
pub use kdv::{find_sound_speed, SoundSpeed};
