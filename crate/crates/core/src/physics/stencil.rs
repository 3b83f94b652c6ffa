//! Finite-difference residual operators.
//!
//! PDE residuals are formed from O(h²) stencils of field evaluations:
//! central differences in the interior, shifting to one-sided differences of
//! matching order where a stencil point would leave the domain. The stencil
//! is exposed both as direct evaluators over field closures and as reusable
//! plans (points plus coefficients), so the training loss can express the
//! same linear combinations over differentiable model evaluations.

use crate::error::{PgtError, Result};
use crate::scalar::Scalar;

use super::Coord;

/// Default stencil step in normalized domain units. Balances the O(h²)
/// truncation error against the 64-bit cancellation floor (~1e-8/h² per
/// second derivative).
pub const DEFAULT_STENCIL_STEP: f64 = 1e-3;

/// Inclusive bounds for one coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBounds<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> AxisBounds<T> {
    pub fn new(lo: T, hi: T) -> Self {
        AxisBounds { lo, hi }
    }
}

/// One-dimensional difference term: evaluation position and weight.
type Terms<T> = Vec<(T, T)>;

/// First-derivative terms at `pos`, O(h²).
fn d1_terms<T: Scalar>(pos: T, bounds: AxisBounds<T>, h: T) -> Terms<T> {
    let two_h = h + h;
    let half = T::one() / two_h;
    if pos - h >= bounds.lo && pos + h <= bounds.hi {
        vec![(pos - h, -half), (pos + h, half)]
    } else if pos - h < bounds.lo {
        // Forward: (-3f0 + 4f1 - f2) / 2h.
        vec![
            (pos, -T::cast(3.0) * half),
            (pos + h, T::cast(4.0) * half),
            (pos + two_h, -half),
        ]
    } else {
        // Backward: (3f0 - 4f_-1 + f_-2) / 2h.
        vec![
            (pos, T::cast(3.0) * half),
            (pos - h, -T::cast(4.0) * half),
            (pos - two_h, half),
        ]
    }
}

/// Second-derivative terms at `pos`, O(h²).
fn d2_terms<T: Scalar>(pos: T, bounds: AxisBounds<T>, h: T) -> Terms<T> {
    let inv_h2 = T::one() / (h * h);
    if pos - h >= bounds.lo && pos + h <= bounds.hi {
        vec![
            (pos - h, inv_h2),
            (pos, -T::cast(2.0) * inv_h2),
            (pos + h, inv_h2),
        ]
    } else if pos - h < bounds.lo {
        // Forward: (2f0 - 5f1 + 4f2 - f3) / h².
        vec![
            (pos, T::cast(2.0) * inv_h2),
            (pos + h, -T::cast(5.0) * inv_h2),
            (pos + h + h, T::cast(4.0) * inv_h2),
            (pos + h + h + h, -inv_h2),
        ]
    } else {
        vec![
            (pos, T::cast(2.0) * inv_h2),
            (pos - h, -T::cast(5.0) * inv_h2),
            (pos - h - h, T::cast(4.0) * inv_h2),
            (pos - h - h - h, -inv_h2),
        ]
    }
}

fn check_step<T: Scalar>(h: T) -> Result<()> {
    if h <= T::zero() || !h.is_finite() {
        return Err(PgtError::InvalidInput(format!(
            "stencil step must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

// ── Heat equation (1 + 1 dimensional) ────────────────────────────────────

/// A residual expressed as one linear combination of field evaluations.
#[derive(Debug, Clone)]
pub struct LinearCombo<T> {
    pub points: Vec<Coord<T>>,
    pub coeffs: Vec<T>,
}

/// Stencil plan for `∂_t u − ν ∂_xx u` at `(x, t)`.
pub fn heat_residual_plan<T: Scalar>(
    x: T,
    t: T,
    nu: T,
    h: T,
    x_bounds: AxisBounds<T>,
    t_bounds: AxisBounds<T>,
) -> Result<LinearCombo<T>> {
    check_step(h)?;
    let mut points = Vec::with_capacity(7);
    let mut coeffs = Vec::with_capacity(7);
    for (tp, c) in d1_terms(t, t_bounds, h) {
        points.push(Coord::xt(x, tp));
        coeffs.push(c);
    }
    for (xp, c) in d2_terms(x, x_bounds, h) {
        points.push(Coord::xt(xp, t));
        coeffs.push(-nu * c);
    }
    Ok(LinearCombo { points, coeffs })
}

/// `∂_t u − ν ∂_xx u` evaluated on a field closure.
pub fn heat_residual_1d<T: Scalar>(
    u: impl Fn(T, T) -> T,
    x: T,
    t: T,
    nu: T,
    h: T,
    x_bounds: AxisBounds<T>,
    t_bounds: AxisBounds<T>,
) -> Result<T> {
    let plan = heat_residual_plan(x, t, nu, h, x_bounds, t_bounds)?;
    let mut acc = T::zero();
    for (p, &c) in plan.points.iter().zip(plan.coeffs.iter()) {
        acc += c * u(p.space[0], p.t);
    }
    Ok(acc)
}

// ── Incompressible Navier–Stokes (2 + 1 dimensional) ─────────────────────

/// Weighted references into a shared point list.
#[derive(Debug, Clone, Default)]
pub struct DerivTerms<T> {
    pub indices: Vec<usize>,
    pub coeffs: Vec<T>,
}

/// Shared stencil for all derivatives entering the 2D momentum and
/// continuity residuals at one point.
#[derive(Debug, Clone)]
pub struct NsResidualPlan<T> {
    pub points: Vec<Coord<T>>,
    /// Index of `(x, y, t)` itself, where the convection velocities are read.
    pub center: usize,
    pub d_t: DerivTerms<T>,
    pub d_x: DerivTerms<T>,
    pub d_y: DerivTerms<T>,
    pub d_xx: DerivTerms<T>,
    pub d_yy: DerivTerms<T>,
}

impl<T: Scalar> NsResidualPlan<T> {
    pub fn new(
        x: T,
        y: T,
        t: T,
        h: T,
        x_bounds: AxisBounds<T>,
        y_bounds: AxisBounds<T>,
        t_bounds: AxisBounds<T>,
    ) -> Result<Self> {
        check_step(h)?;
        let mut points: Vec<Coord<T>> = Vec::with_capacity(9);
        let mut intern = |c: Coord<T>| -> usize {
            if let Some(i) = points.iter().position(|p| *p == c) {
                i
            } else {
                points.push(c);
                points.len() - 1
            }
        };
        let center = intern(Coord::xyt(x, y, t));
        let collect = |terms: Terms<T>,
                       make: &dyn Fn(T) -> Coord<T>,
                       intern: &mut dyn FnMut(Coord<T>) -> usize| {
            let mut out = DerivTerms::default();
            for (pos, c) in terms {
                out.indices.push(intern(make(pos)));
                out.coeffs.push(c);
            }
            out
        };
        let d_t = collect(d1_terms(t, t_bounds, h), &|tp| Coord::xyt(x, y, tp), &mut intern);
        let d_x = collect(d1_terms(x, x_bounds, h), &|xp| Coord::xyt(xp, y, t), &mut intern);
        let d_y = collect(d1_terms(y, y_bounds, h), &|yp| Coord::xyt(x, yp, t), &mut intern);
        let d_xx = collect(d2_terms(x, x_bounds, h), &|xp| Coord::xyt(xp, y, t), &mut intern);
        let d_yy = collect(d2_terms(y, y_bounds, h), &|yp| Coord::xyt(x, yp, t), &mut intern);
        Ok(NsResidualPlan {
            points,
            center,
            d_t,
            d_x,
            d_y,
            d_xx,
            d_yy,
        })
    }

    fn apply(&self, terms: &DerivTerms<T>, values: &[[T; 3]], channel: usize) -> T {
        let mut acc = T::zero();
        for (&i, &c) in terms.indices.iter().zip(terms.coeffs.iter()) {
            acc += c * values[i][channel];
        }
        acc
    }

    /// Momentum-x, momentum-y, and continuity residuals given the (u, v, p)
    /// values at every plan point.
    pub fn residuals(&self, values: &[[T; 3]], nu: T) -> [T; 3] {
        let u_c = values[self.center][0];
        let v_c = values[self.center][1];
        let du_dt = self.apply(&self.d_t, values, 0);
        let dv_dt = self.apply(&self.d_t, values, 1);
        let du_dx = self.apply(&self.d_x, values, 0);
        let dv_dx = self.apply(&self.d_x, values, 1);
        let dp_dx = self.apply(&self.d_x, values, 2);
        let du_dy = self.apply(&self.d_y, values, 0);
        let dv_dy = self.apply(&self.d_y, values, 1);
        let dp_dy = self.apply(&self.d_y, values, 2);
        let lap_u = self.apply(&self.d_xx, values, 0) + self.apply(&self.d_yy, values, 0);
        let lap_v = self.apply(&self.d_xx, values, 1) + self.apply(&self.d_yy, values, 1);
        let r_u = du_dt + u_c * du_dx + v_c * du_dy + dp_dx - nu * lap_u;
        let r_v = dv_dt + u_c * dv_dx + v_c * dv_dy + dp_dy - nu * lap_v;
        let r_div = du_dx + dv_dy;
        [r_u, r_v, r_div]
    }
}

/// Momentum and continuity residuals of `(u, v, p)` closures at one point.
#[allow(clippy::too_many_arguments)]
pub fn ns_residual_2d<T: Scalar>(
    fields: impl Fn(T, T, T) -> [T; 3],
    x: T,
    y: T,
    t: T,
    nu: T,
    h: T,
    x_bounds: AxisBounds<T>,
    y_bounds: AxisBounds<T>,
    t_bounds: AxisBounds<T>,
) -> Result<[T; 3]> {
    let plan = NsResidualPlan::new(x, y, t, h, x_bounds, y_bounds, t_bounds)?;
    let values: Vec<[T; 3]> = plan
        .points
        .iter()
        .map(|p| fields(p.space[0], p.space[1], p.t))
        .collect();
    Ok(plan.residuals(&values, nu))
}
