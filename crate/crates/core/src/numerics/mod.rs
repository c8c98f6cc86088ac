//! Numerical building blocks shared by the physics modules.

pub mod interp;
pub mod lu;
pub mod quad;
pub mod roots;
pub mod special;
