//! Closed-form reference solutions.

use crate::scalar::Scalar;

/// Decaying sine mode of the 1D heat equation on [0, 1]:
/// `u(x, t) = exp(-ν (nπ)² t) · sin(nπx)`.
pub fn heat_solution_1d<T: Scalar>(x: T, t: T, nu: T, mode: u32) -> T {
    let n_pi = T::cast(mode as f64) * T::PI();
    (-nu * n_pi * n_pi * t).exp() * (n_pi * x).sin()
}

/// Taylor–Green vortex on [0, 2π]²: an exact solution of the incompressible
/// Navier–Stokes equations. Returns (u, v, p).
pub fn taylor_green<T: Scalar>(x: T, y: T, t: T, nu: T) -> [T; 3] {
    let two = T::cast(2.0);
    let decay = (-two * nu * t).exp();
    let u = -x.cos() * y.sin() * decay;
    let v = x.sin() * y.cos() * decay;
    let p = -T::cast(0.25) * ((two * x).cos() + (two * y).cos()) * (decay * decay);
    [u, v, p]
}
