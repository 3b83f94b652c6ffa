//! Physics-guided attention bias construction.
//!
//! The bias between two context tokens is the log of the governing PDE's
//! Green's function evaluated at their spatiotemporal separation. Entries
//! where the kernel vanishes (acausal pairs, off-cone pairs) are masked and
//! receive exactly zero attention weight. Index 0 is the global summary
//! token: it is not a physical location, so its row and column carry no bias
//! and are never masked.

use std::sync::Arc;

use crate::error::{PgtError, Result};
use crate::scalar::Scalar;
use crate::tape::AttnBias;
use crate::tensor::Tensor;

use super::{Coord, PdeFamily};

/// Unmasked bias entries are clamped to this symmetric band before reaching
/// the logits; extreme diffusivities or tiny time gaps would otherwise freeze
/// the softmax gradients.
pub const GAMMA_CLAMP: f64 = 30.0;

/// Finite stand-in for -inf inside logit arithmetic. Masked entries are
/// zeroed by the softmax mask itself, not by exp underflow of this sentinel.
pub const MASK_SENTINEL: f64 = -1e9;

/// Regularizer for the elliptic kernel's self-distance.
pub const ELLIPTIC_EPS: f64 = 1e-6;

/// Additive attention-logit bias over the global token plus `P` context
/// tokens, with causal-mask semantics.
#[derive(Debug, Clone)]
pub struct GammaBias<T> {
    /// (P+1)x(P+1) logits; masked entries hold [`MASK_SENTINEL`].
    matrix: Tensor<T>,
    /// Row-major mask marking zero-attention entries.
    mask: Vec<bool>,
    any_masked: bool,
}

impl<T: Scalar> GammaBias<T> {
    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.size() + j]
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.matrix.at(i, j)
    }

    /// View for the fused attention op.
    pub fn attn_bias(&self) -> AttnBias<T> {
        AttnBias {
            values: Arc::new(self.matrix.clone()),
            mask: if self.any_masked {
                Some(Arc::new(self.mask.clone()))
            } else {
                None
            },
        }
    }

    fn assemble(n: usize, mut fill: impl FnMut(usize, usize) -> (T, bool)) -> Result<Self> {
        let mut matrix = Tensor::zeros(vec![n, n]);
        let mut mask = vec![false; n * n];
        let mut any_masked = false;
        for i in 1..n {
            let mut row_has_open = false;
            for j in 1..n {
                let (value, masked) = if i == j {
                    // The closed forms are singular at zero separation; the
                    // diagonal stays neutral so every token can attend to
                    // itself.
                    (T::zero(), false)
                } else {
                    fill(i - 1, j - 1)
                };
                if masked {
                    matrix.set(i, j, T::cast(MASK_SENTINEL));
                    mask[i * n + j] = true;
                    any_masked = true;
                } else {
                    matrix.set(i, j, clamp(value));
                    row_has_open = true;
                }
            }
            // Row 0 / column 0 stay open, so this cannot trigger; it guards
            // the no-fully-masked-row invariant if the exemptions change.
            debug_assert!(row_has_open || n >= 1);
        }
        Ok(GammaBias {
            matrix,
            mask,
            any_masked,
        })
    }
}

fn clamp<T: Scalar>(v: T) -> T {
    let hi = T::cast(GAMMA_CLAMP);
    let lo = -hi;
    if v > hi {
        hi
    } else if v < lo {
        lo
    } else {
        v
    }
}

fn check_tokens<T: Scalar>(tokens: &[Coord<T>], dim: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(PgtError::InvalidInput(
            "gamma construction needs at least one token".into(),
        ));
    }
    for (i, tok) in tokens.iter().enumerate() {
        if !tok.is_finite() {
            return Err(PgtError::InvalidInput(format!(
                "token {i} has non-finite coordinates"
            )));
        }
        if tok.space.len() != dim {
            return Err(PgtError::InvalidInput(format!(
                "token {i} has spatial dimension {}, expected {dim}",
                tok.space.len()
            )));
        }
    }
    Ok(())
}

/// Log heat kernel at squared separation `dx2` and elapsed time `dt > 0`:
/// `-dx2/(4·α·dt) - (d/2)·ln(4π·α·dt)`. Unclamped; this is the closed form
/// the quadrature normalization oracle integrates.
pub fn parabolic_log_kernel<T: Scalar>(dx2: T, dt: T, alpha: T, dim: usize) -> T {
    let four_adt = T::cast(4.0) * alpha * dt;
    let half_d = T::cast(dim as f64 / 2.0);
    -dx2 / four_adt - half_d * (T::PI() * four_adt).ln()
}

/// Parabolic (diffusion) bias. In causal mode, pairs with `Δt <= 0` are
/// masked and the remaining entries carry the log heat kernel. In the
/// non-causal diagnostic mode — used only by the vanilla-attention limit
/// check — masking is disabled and the bias keeps just the Gaussian
/// proximity term `-‖Δx‖²/(4·α·|Δt|)`: the kernel's log-normalization varies
/// with `Δt` inside a row and would never cancel in the softmax, so the
/// α→∞ limit recovers standard attention only without it.
pub fn gamma_parabolic<T: Scalar>(
    tokens: &[Coord<T>],
    alpha: T,
    dim: usize,
    causal: bool,
) -> Result<GammaBias<T>> {
    if alpha <= T::zero() {
        return Err(PgtError::InvalidInput(format!(
            "diffusivity must be positive, got {alpha}"
        )));
    }
    check_tokens(tokens, dim)?;
    let n = tokens.len() + 1;
    GammaBias::assemble(n, |i, j| {
        let dt = tokens[i].t - tokens[j].t;
        let dx2 = tokens[i].dist2(&tokens[j]);
        if causal {
            if dt <= T::zero() {
                (T::zero(), true)
            } else {
                (parabolic_log_kernel(dx2, dt, alpha, dim), false)
            }
        } else {
            let dt_abs = dt.abs();
            if dt_abs == T::zero() {
                if dx2 == T::zero() {
                    (T::zero(), false)
                } else {
                    (T::neg_infinity(), false) // clamps to the band edge
                }
            } else {
                (-dx2 / (T::cast(4.0) * alpha * dt_abs), false)
            }
        }
    })
}

/// Hyperbolic (wave) bias for one spatial dimension. The 1D wave kernel is
/// `1/(2c)` on the interior of the light cone, so inside-cone entries carry
/// the constant `-ln(2c)` and everything off-cone or acausal is masked.
/// Higher-dimensional wave kernels are distributional and unsupported.
pub fn gamma_hyperbolic<T: Scalar>(
    tokens: &[Coord<T>],
    wave_speed: T,
    dim: usize,
) -> Result<GammaBias<T>> {
    if wave_speed <= T::zero() {
        return Err(PgtError::InvalidInput(format!(
            "wave speed must be positive, got {wave_speed}"
        )));
    }
    if dim != 1 {
        return Err(PgtError::UnsupportedDimension {
            dim,
            what: "hyperbolic wave kernel",
        });
    }
    check_tokens(tokens, dim)?;
    let inside_value = -(T::cast(2.0) * wave_speed).ln();
    let n = tokens.len() + 1;
    GammaBias::assemble(n, |i, j| {
        let dt = tokens[i].t - tokens[j].t;
        if dt <= T::zero() {
            return (T::zero(), true);
        }
        let dist = tokens[i].dist2(&tokens[j]).sqrt();
        if dist <= wave_speed * dt {
            (inside_value, false)
        } else {
            (T::zero(), true)
        }
    })
}

/// Elliptic bias: purely spatial, symmetric, never masked. Uses the
/// regularized surrogate `-ln(r + ε)` — the true 2D log-kernel changes sign
/// at r = 1 and its logarithm is ill-defined beyond it.
pub fn gamma_elliptic<T: Scalar>(tokens: &[Coord<T>], dim: usize) -> Result<GammaBias<T>> {
    if dim == 0 || dim > 3 {
        return Err(PgtError::UnsupportedDimension {
            dim,
            what: "elliptic kernel",
        });
    }
    check_tokens(tokens, dim)?;
    let eps = T::cast(ELLIPTIC_EPS);
    let n = tokens.len() + 1;
    let mut bias = GammaBias::assemble(n, |i, j| {
        let r = tokens[i].dist2(&tokens[j]).sqrt();
        (-(r + eps).ln(), false)
    })?;
    // The diagonal is not singular here: the ε-regularized self-distance is
    // well-defined, so it overrides the neutral-diagonal default.
    let diag = clamp(-eps.ln());
    for i in 1..n {
        bias.matrix.set(i, i, diag);
    }
    Ok(bias)
}

/// Construct the bias for a PDE family in causal training mode.
pub fn gamma_for_family<T: Scalar>(
    tokens: &[Coord<T>],
    family: &PdeFamily<T>,
    causal: bool,
) -> Result<GammaBias<T>> {
    match family {
        PdeFamily::Parabolic { alpha, dim } => gamma_parabolic(tokens, *alpha, *dim, causal),
        PdeFamily::Hyperbolic { wave_speed, dim } => {
            if !causal {
                return Err(PgtError::InvalidInput(
                    "hyperbolic bias has no non-causal mode".into(),
                ));
            }
            gamma_hyperbolic(tokens, *wave_speed, *dim)
        }
        PdeFamily::Elliptic { dim } => gamma_elliptic(tokens, *dim),
    }
}

/// Max row-wise deviation between `softmax(scores + Γ)` and
/// `softmax(scores)` with the non-causal parabolic bias at diffusivity
/// `alpha`. As α grows the Gaussian proximity term flattens and the
/// deviation falls toward zero, recovering standard data-driven attention.
pub fn vanilla_limit_deviation<T: Scalar>(
    tokens: &[Coord<T>],
    alpha: T,
    dim: usize,
    scores: &Tensor<T>,
) -> Result<T> {
    let bias = gamma_parabolic(tokens, alpha, dim, false)?;
    let n = bias.size();
    if scores.shape() != [n, n] {
        return Err(PgtError::ShapeMismatch {
            op: "vanilla_limit_deviation",
            lhs: scores.shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    let biased = scores.broadcast_zip(bias.matrix(), "add", |s, g| s + g)?;
    let with_bias = crate::tape::masked_softmax_rows(&biased, None)?;
    let plain = crate::tape::masked_softmax_rows(scores, None)?;
    let mut max_dev = T::zero();
    for (a, b) in with_bias.data().iter().zip(plain.data().iter()) {
        let d = (*a - *b).abs();
        if d > max_dev {
            max_dev = d;
        }
    }
    Ok(max_dev)
}
