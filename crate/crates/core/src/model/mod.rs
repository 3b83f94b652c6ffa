//! The physics-guided transformer: context embedding, physics-biased encoder
//! stack, query cross-attention, FiLM-modulated sinusoidal decoder, plus the
//! coordinate-MLP and plain-SIREN baselines.

pub mod baselines;
pub mod checkpoint;
mod params;

pub use baselines::{forward_pinn, forward_siren, PinnParams, SirenParams};
pub use params::{AnyParams, EncLayerP, LinearP, PgtParams, PgtVars};

use crate::error::{PgtError, Result};
use crate::physics::gamma::gamma_for_family;
use crate::tape::{AttnBias, Var};
use crate::tensor::Tensor as GenTensor;
use crate::{Coord, PdeFamily, Real, Tape, Tensor};

/// Decoder variants of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    FilmSiren,
    SirenNoFilm,
    FilmMlp,
    PlainMlp,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::FilmSiren => "film_siren",
            DecoderKind::SirenNoFilm => "siren_no_film",
            DecoderKind::FilmMlp => "film_mlp",
            DecoderKind::PlainMlp => "plain_mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "film_siren" => Ok(DecoderKind::FilmSiren),
            "siren_no_film" => Ok(DecoderKind::SirenNoFilm),
            "film_mlp" => Ok(DecoderKind::FilmMlp),
            "plain_mlp" => Ok(DecoderKind::PlainMlp),
            other => Err(PgtError::Config(format!("unknown decoder kind '{other}'"))),
        }
    }

    pub fn uses_film(self) -> bool {
        matches!(self, DecoderKind::FilmSiren | DecoderKind::FilmMlp)
    }

    pub fn sinusoidal(self) -> bool {
        matches!(self, DecoderKind::FilmSiren | DecoderKind::SirenNoFilm)
    }
}

/// Architecture and ablation switches.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the encoder feed-forward blocks.
    pub d_ff: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub omega0: Real,
    pub use_gamma: bool,
    pub use_pde_loss: bool,
    pub decoder_kind: DecoderKind,
    /// Disabled only by the vanilla-attention diagnostic.
    pub causal_mask: bool,
    pub pde_family: PdeFamily,
    /// Observation channels (1 for heat, 3 for the flow problem).
    pub channels: usize,
    /// Coordinate components including time.
    pub coord_dim: usize,
    /// Attach the per-token aleatoric variance head (the heteroscedastic
    /// data-loss variant reads it).
    pub uw_head: bool,
}

impl ModelConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// FiLM triples generated per query: one (scale, shift, frequency gate)
    /// set of decoder width for every hidden transition.
    pub fn film_len(&self) -> usize {
        3 * (self.decoder_layers - 1) * self.decoder_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(PgtError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.decoder_layers == 0 || self.decoder_width == 0 || self.d_ff == 0 {
            return Err(PgtError::Config("zero-sized decoder or feed-forward".into()));
        }
        if self.channels == 0 || self.coord_dim < 2 {
            return Err(PgtError::Config(format!(
                "channels {} / coord_dim {} out of range",
                self.channels, self.coord_dim
            )));
        }
        self.pde_family.validate()?;
        Ok(())
    }
}

/// The sparse observations a model conditions on: values plus coordinates,
/// in input order.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    /// P×channels observation values.
    pub values: Tensor,
    /// One coordinate per observation.
    pub coords: Vec<Coord>,
}

impl ObservationSet {
    pub fn new(values: Tensor, coords: Vec<Coord>) -> Result<Self> {
        if coords.is_empty() || values.rows() != coords.len() {
            return Err(PgtError::InvalidInput(format!(
                "observation set needs matching non-empty values ({}) and coords ({})",
                values.rows(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(PgtError::InvalidInput(
                "observation coordinates must be finite".into(),
            ));
        }
        Ok(ObservationSet { values, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord_tensor(&self) -> Tensor {
        coords_to_tensor(&self.coords)
    }
}

pub fn coords_to_tensor(coords: &[Coord]) -> Tensor {
    let dim = coords[0].space.len() + 1;
    let mut data = Vec::with_capacity(coords.len() * dim);
    for c in coords {
        data.extend(c.flat());
    }
    GenTensor::new(vec![coords.len(), dim], data)
}

/// Bias for the encoder under this config, or `None` when disabled.
pub fn build_bias(cfg: &ModelConfig, obs: &ObservationSet) -> Result<Option<AttnBias<Real>>> {
    if !cfg.use_gamma {
        return Ok(None);
    }
    let gamma = if cfg.causal_mask {
        gamma_for_family(&obs.coords, &cfg.pde_family, true)?
    } else {
        gamma_for_family(&obs.coords, &cfg.pde_family, false)?
    };
    Ok(Some(gamma.attn_bias()))
}

// ── Forward pieces ───────────────────────────────────────────────────────

/// Embed observations into the (P+1)×d_model token matrix: a learnable
/// global token prepended to per-observation projections
/// `c_i = u_i·W_u + [x_i, t_i]·W_p + b`.
pub fn embed_context(tape: &mut Tape, vars: &PgtVars, obs: &ObservationSet) -> Result<Var> {
    let values = tape.constant(obs.values.clone());
    let coords = tape.constant(obs.coord_tensor());
    let vu = tape.matmul(values, vars.w_u)?;
    let vp = tape.matmul(coords, vars.w_p)?;
    let lin = tape.add(vu, vp)?;
    let ctx = tape.add(lin, vars.b_embed)?;
    tape.concat_rows(&[vars.global, ctx])
}

#[allow(clippy::too_many_arguments)]
fn multi_head_attention(
    tape: &mut Tape,
    cfg: &ModelConfig,
    x_q: Var,
    x_kv: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    proj_biases: Option<(Var, Var, Var)>,
    bias: Option<&AttnBias<Real>>,
) -> Result<Var> {
    let mut q = tape.matmul(x_q, wq)?;
    let mut k = tape.matmul(x_kv, wk)?;
    let mut v = tape.matmul(x_kv, wv)?;
    if let Some((bq, bk, bv)) = proj_biases {
        q = tape.add(q, bq)?;
        k = tape.add(k, bk)?;
        v = tape.add(v, bv)?;
    }
    let d_k = cfg.d_k();
    let scale = 1.0 / (d_k as Real).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (c0, c1) = (h * d_k, (h + 1) * d_k);
        let qh = tape.slice_cols(q, c0, c1)?;
        let kh = tape.slice_cols(k, c0, c1)?;
        let vh = tape.slice_cols(v, c0, c1)?;
        // The bias is shared identically across heads.
        heads.push(tape.attention(qh, kh, vh, bias, scale)?);
    }
    tape.concat_cols(&heads)
}

/// Run the encoder stack: pre-norm blocks
/// `C ← C + Attn(LN(C)) + MLP(LN(C))` with the physics bias added to every
/// self-attention logit, then split off the global token.
pub fn encoder_forward(
    tape: &mut Tape,
    vars: &PgtVars,
    cfg: &ModelConfig,
    tokens: Var,
    bias: Option<&AttnBias<Real>>,
) -> Result<(Var, Var)> {
    let mut c = tokens;
    for layer in &vars.enc {
        let normed = tape.layernorm(c)?;
        let attn = multi_head_attention(
            tape,
            cfg,
            normed,
            normed,
            layer.wq,
            layer.wk,
            layer.wv,
            Some((layer.bq, layer.bk, layer.bv)),
            bias,
        )?;
        let attn = tape.matmul(attn, layer.wo)?;
        let attn = tape.add(attn, layer.bo)?;
        let h1 = tape.matmul(normed, layer.mw1)?;
        let h1 = tape.add(h1, layer.mb1)?;
        let h1 = tape.gelu(h1);
        let mlp = tape.matmul(h1, layer.mw2)?;
        let mlp = tape.add(mlp, layer.mb2)?;
        let partial = tape.add(c, attn)?;
        c = tape.add(partial, mlp)?;
    }
    let rows = tape.value(c).rows();
    let c_glob = tape.slice_rows(c, 0, 1)?;
    let ctx = tape.slice_rows(c, 1, rows)?;
    Ok((c_glob, ctx))
}

/// Map raw query coordinates to latent embeddings with a small MLP.
pub fn query_embed(tape: &mut Tape, vars: &PgtVars, coords: Var) -> Result<Var> {
    let h = tape.matmul(coords, vars.q1.w)?;
    let h = tape.add(h, vars.q1.b)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, vars.q2.w)?;
    let h = tape.add(h, vars.q2.b)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, vars.q3.w)?;
    tape.add(h, vars.q3.b)
}

/// Cross-attend query embeddings over the encoded context tokens, producing
/// one context vector per query. Weights are a row softmax, so each head's
/// output is a convex combination of value-projected context rows.
pub fn query_attend(
    tape: &mut Tape,
    vars: &PgtVars,
    cfg: &ModelConfig,
    phi: Var,
    ctx: Var,
) -> Result<Var> {
    multi_head_attention(
        tape,
        cfg,
        phi,
        ctx,
        vars.cross_wq,
        vars.cross_wk,
        vars.cross_wv,
        None,
        None,
    )
}

/// Per-layer FiLM modulation handles.
#[derive(Debug, Clone, Copy)]
pub struct FilmTriple {
    pub alpha: Var,
    pub beta: Var,
    pub omega: Var,
}

/// Raw-to-gate offset chosen so a zero-initialized hypernetwork head yields
/// a frequency gate of exactly softplus(offset) + 0.5 = 1.
pub const OMEGA_GATE_OFFSET: Real = -0.4327521295671886; // ln(e^0.5 - 1)

/// Generate FiLM triples from the hypernetwork: scales start at 1, shifts at
/// 0, and the frequency gate is softplus-bounded positive, equal to 1 at the
/// zero-initialized head.
pub fn film_from_hypernet(
    tape: &mut Tape,
    vars: &PgtVars,
    cfg: &ModelConfig,
    g: Var,
    c_glob: Var,
) -> Result<Vec<FilmTriple>> {
    let (hyper_hidden, hyper_head) = vars
        .hyper
        .as_ref()
        .ok_or_else(|| PgtError::Config("film decoder without hypernetwork".into()))?;
    let n_queries = tape.value(g).rows();
    let glob_rows = tape.repeat_rows(c_glob, n_queries)?;
    let joint = tape.concat_cols(&[g, glob_rows])?;
    let h = tape.matmul(joint, hyper_hidden.w)?;
    let h = tape.add(h, hyper_hidden.b)?;
    let h = tape.gelu(h);
    let raw = tape.matmul(h, hyper_head.w)?;
    let raw = tape.add(raw, hyper_head.b)?;

    let w = cfg.decoder_width;
    let one = tape.constant_scalar(1.0);
    let gate_offset = tape.constant_scalar(OMEGA_GATE_OFFSET);
    let half = tape.constant_scalar(0.5);
    let mut triples = Vec::with_capacity(cfg.decoder_layers - 1);
    for l in 0..cfg.decoder_layers - 1 {
        let base = 3 * l * w;
        let d_alpha = tape.slice_cols(raw, base, base + w)?;
        let d_beta = tape.slice_cols(raw, base + w, base + 2 * w)?;
        let d_omega = tape.slice_cols(raw, base + 2 * w, base + 3 * w)?;
        let alpha = tape.add(d_alpha, one)?;
        let shifted = tape.add(d_omega, gate_offset)?;
        let sp = tape.softplus(shifted);
        let omega = tape.add(sp, half)?;
        triples.push(FilmTriple {
            alpha,
            beta: d_beta,
            omega,
        });
    }
    Ok(triples)
}

/// Identity modulation: (α, β, ω) = (1, 0, 1) for every transition. Under it
/// the FiLM-SIREN decoder reduces to a plain SIREN on shared weights.
pub fn film_identity(tape: &mut Tape, cfg: &ModelConfig, n_queries: usize) -> Vec<FilmTriple> {
    let w = cfg.decoder_width;
    (0..cfg.decoder_layers - 1)
        .map(|_| {
            let alpha = tape.constant(Tensor::full(vec![n_queries, w], 1.0));
            let beta = tape.constant(Tensor::full(vec![n_queries, w], 0.0));
            let omega = tape.constant(Tensor::full(vec![n_queries, w], 1.0));
            FilmTriple { alpha, beta, omega }
        })
        .collect()
}

/// Implicit decoder. Sinusoidal kinds compute
/// `h_1 = sin(ω0(W_0·inp + b_0))` and `h_{l+1} = act(ω_l ⊙ (α_l ⊙ (W_l h_l) + β_l))`;
/// MLP kinds swap sin for gelu and drop the ω0 pre-scale. No-FiLM kinds take
/// the context concatenated at the input instead of modulation.
pub fn decode_with_film(
    tape: &mut Tape,
    vars: &PgtVars,
    cfg: &ModelConfig,
    coords: Var,
    g: Var,
    c_glob: Var,
    film: Option<&[FilmTriple]>,
) -> Result<Var> {
    let n_queries = tape.value(coords).rows();
    let inp = if cfg.decoder_kind.uses_film() {
        coords
    } else {
        let glob_rows = tape.repeat_rows(c_glob, n_queries)?;
        tape.concat_cols(&[coords, g, glob_rows])?
    };
    let pre = tape.matmul(inp, vars.dec_w0)?;
    let pre = tape.add(pre, vars.dec_b0)?;
    let mut h = if cfg.decoder_kind.sinusoidal() {
        let scaled = tape.scale(pre, cfg.omega0);
        tape.sin(scaled)
    } else {
        tape.gelu(pre)
    };
    for (l, w_l) in vars.dec_hidden.iter().enumerate() {
        let mut z = tape.matmul(h, *w_l)?;
        if let Some(triples) = film {
            let t = &triples[l];
            let scaled = tape.mul(t.alpha, z)?;
            let shifted = tape.add(scaled, t.beta)?;
            z = tape.mul(t.omega, shifted)?;
        }
        h = if cfg.decoder_kind.sinusoidal() {
            tape.sin(z)
        } else {
            tape.gelu(z)
        };
    }
    let out = tape.matmul(h, vars.dec_wout)?;
    tape.add(out, vars.dec_bout)
}

/// Model outputs for a query batch.
pub struct ForwardOutput {
    /// Q×channels predictions.
    pub pred: Var,
    /// Q×1 log-variances from the aleatoric head, when configured.
    pub log_var: Option<Var>,
}

/// End-to-end forward pass with a prebuilt attention bias (the bias depends
/// only on the observation coordinates, so training builds it once per run).
pub fn pgt_forward_with_bias(
    tape: &mut Tape,
    vars: &PgtVars,
    cfg: &ModelConfig,
    obs: &ObservationSet,
    query_coords: &Tensor,
    bias: Option<&AttnBias<Real>>,
) -> Result<ForwardOutput> {
    let tokens = embed_context(tape, vars, obs)?;
    let (c_glob, ctx) = encoder_forward(tape, vars, cfg, tokens, bias)?;
    let coords = tape.constant(query_coords.clone());
    let phi = query_embed(tape, vars, coords)?;
    let g = query_attend(tape, vars, cfg, phi, ctx)?;
    let film = if cfg.decoder_kind.uses_film() {
        Some(film_from_hypernet(tape, vars, cfg, g, c_glob)?)
    } else {
        None
    };
    let pred = decode_with_film(tape, vars, cfg, coords, g, c_glob, film.as_deref())?;
    let log_var = match &vars.uw {
        Some(head) => {
            let s = tape.matmul(g, head.w)?;
            Some(tape.add(s, head.b)?)
        }
        None => None,
    };
    Ok(ForwardOutput { pred, log_var })
}

/// Composition embed → Γ → encoder → cross-attention → decode.
pub fn pgt_forward(
    tape: &mut Tape,
    params: &PgtParams,
    cfg: &ModelConfig,
    obs: &ObservationSet,
    query_coords: &[Coord],
) -> Result<ForwardOutput> {
    let bias = build_bias(cfg, obs)?;
    let vars = params.bind(tape);
    let queries = coords_to_tensor(query_coords);
    pgt_forward_with_bias(tape, &vars, cfg, obs, &queries, bias.as_ref())
}

#[cfg(test)]
mod tests;
