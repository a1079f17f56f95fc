//! Implicit Euler solver and partial-regularity diagnostics for the 1D
//! surface growth model `u_t + u_xxxx + ∂ₓₓ(u_x²) = 0` on the torus.

pub mod campanato;
pub mod commands;
pub mod cylinder;
pub mod field;
pub mod io;
pub mod local_energy;
pub mod sampling;
pub mod singular;
pub mod solver;
