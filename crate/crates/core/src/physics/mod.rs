//! Green's-function attention biases, PDE residual stencils, and analytic
//! reference solutions.

pub mod analytic;
pub mod gamma;
pub mod stencil;

use crate::error::{PgtError, Result};
use crate::scalar::Scalar;

/// A spatiotemporal token location: spatial components plus a time scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Coord<T> {
    pub space: Vec<T>,
    pub t: T,
}

impl<T: Scalar> Coord<T> {
    pub fn new(space: Vec<T>, t: T) -> Self {
        Coord { space, t }
    }

    pub fn xt(x: T, t: T) -> Self {
        Coord { space: vec![x], t }
    }

    pub fn xyt(x: T, y: T, t: T) -> Self {
        Coord {
            space: vec![x, y],
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.space.iter().all(|v| v.is_finite())
    }

    /// Coordinates flattened as (space..., t) — the layout used for model
    /// inputs.
    pub fn flat(&self) -> Vec<T> {
        let mut out = self.space.clone();
        out.push(self.t);
        out
    }

    pub fn dist2(&self, other: &Coord<T>) -> T {
        let mut acc = T::zero();
        for (&a, &b) in self.space.iter().zip(other.space.iter()) {
            let d = a - b;
            acc += d * d;
        }
        acc
    }
}

/// PDE family driving the attention bias, parameterized by its physical
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum PdeFamily<T> {
    Parabolic { alpha: T, dim: usize },
    Hyperbolic { wave_speed: T, dim: usize },
    Elliptic { dim: usize },
}

impl<T: Scalar> PdeFamily<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            PdeFamily::Parabolic { alpha, .. } => {
                if *alpha <= T::zero() {
                    return Err(PgtError::InvalidInput(format!(
                        "parabolic diffusivity must be positive, got {alpha}"
                    )));
                }
            }
            PdeFamily::Hyperbolic { wave_speed, .. } => {
                if *wave_speed <= T::zero() {
                    return Err(PgtError::InvalidInput(format!(
                        "wave speed must be positive, got {wave_speed}"
                    )));
                }
            }
            PdeFamily::Elliptic { .. } => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PdeFamily::Parabolic { dim, .. }
            | PdeFamily::Hyperbolic { dim, .. }
            | PdeFamily::Elliptic { dim } => *dim,
        }
    }
}
