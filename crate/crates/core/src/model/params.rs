//! Learnable parameter containers, initialization, and tape binding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::Var;
use crate::tensor::Tensor as GenTensor;
use crate::{Real, Tape, Tensor};

use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct LinearP {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncLayerP {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub mw1: Tensor,
    pub mb1: Tensor,
    pub mw2: Tensor,
    pub mb2: Tensor,
}

/// All learnable arrays of the physics-guided transformer.
#[derive(Debug, Clone)]
pub struct PgtParams {
    pub w_u: Tensor,
    pub w_p: Tensor,
    pub b_embed: Tensor,
    pub global: Tensor,
    pub enc: Vec<EncLayerP>,
    pub q1: LinearP,
    pub q2: LinearP,
    pub q3: LinearP,
    pub cross_wq: Tensor,
    pub cross_wk: Tensor,
    pub cross_wv: Tensor,
    /// (hidden layer, zero-initialized modulation head); present for FiLM
    /// decoder kinds.
    pub hyper: Option<(LinearP, LinearP)>,
    pub dec_w0: Tensor,
    pub dec_b0: Tensor,
    /// Hidden transitions carry no additive bias: the FiLM shift plays that
    /// role, and the plain-SIREN equivalence must hold on shared weights.
    pub dec_hidden: Vec<Tensor>,
    pub dec_wout: Tensor,
    pub dec_bout: Tensor,
    pub uw: Option<LinearP>,
}

/// Tape handles mirroring [`PgtParams`], produced by [`PgtParams::bind`].
#[derive(Debug, Clone)]
pub struct PgtVars {
    pub w_u: Var,
    pub w_p: Var,
    pub b_embed: Var,
    pub global: Var,
    pub enc: Vec<EncLayerVars>,
    pub q1: LinearVars,
    pub q2: LinearVars,
    pub q3: LinearVars,
    pub cross_wq: Var,
    pub cross_wk: Var,
    pub cross_wv: Var,
    pub hyper: Option<(LinearVars, LinearVars)>,
    pub dec_w0: Var,
    pub dec_b0: Var,
    pub dec_hidden: Vec<Var>,
    pub dec_wout: Var,
    pub dec_bout: Var,
    pub uw: Option<LinearVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone)]
pub struct EncLayerVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bq: Var,
    pub bk: Var,
    pub bv: Var,
    pub bo: Var,
    pub mw1: Var,
    pub mb1: Var,
    pub mw2: Var,
    pub mb2: Var,
}

// ── Initialization schemes ───────────────────────────────────────────────

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: Real) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.gen::<Real>() * 2.0 - 1.0) * limit)
        .collect();
    GenTensor::new(shape, data)
}

/// `U(±sqrt(6/(fan_in+fan_out)))`.
fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as Real).sqrt();
    uniform(rng, vec![fan_in, fan_out], limit)
}

/// First sinusoidal layer: `U(±1/fan_in)`.
fn siren_first(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, vec![fan_in, fan_out], 1.0 / fan_in as Real)
}

/// Later sinusoidal layers: `U(±sqrt(6/fan_in)/ω0)`.
fn siren_hidden(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, omega0: Real) -> Tensor {
    let limit = (6.0 / fan_in as Real).sqrt() / omega0;
    uniform(rng, vec![fan_in, fan_out], limit)
}

fn zeros(shape: Vec<usize>) -> Tensor {
    GenTensor::zeros(shape)
}

fn linear_glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> LinearP {
    LinearP {
        w: glorot(rng, fan_in, fan_out),
        b: zeros(vec![fan_out]),
    }
}

/// Decoder weight matrices under the configured kind. Sinusoidal kinds use
/// the SIREN scheme; MLP kinds use glorot.
struct DecoderInit<'a> {
    cfg: &'a ModelConfig,
}

impl DecoderInit<'_> {
    fn first(&self, rng: &mut ChaCha8Rng, fan_in: usize) -> (Tensor, Tensor) {
        let w = self.cfg.decoder_width;
        if self.cfg.decoder_kind.sinusoidal() {
            let weight = siren_first(rng, fan_in, w);
            let bias_limit = 1.0 / (fan_in as Real).sqrt();
            let bias = uniform(rng, vec![w], bias_limit);
            (weight, bias)
        } else {
            (glorot(rng, fan_in, w), zeros(vec![w]))
        }
    }

    fn hidden(&self, rng: &mut ChaCha8Rng) -> Tensor {
        let w = self.cfg.decoder_width;
        if self.cfg.decoder_kind.sinusoidal() {
            siren_hidden(rng, w, w, self.cfg.omega0)
        } else {
            glorot(rng, w, w)
        }
    }

    fn out(&self, rng: &mut ChaCha8Rng) -> Tensor {
        let w = self.cfg.decoder_width;
        let ch = self.cfg.channels;
        if self.cfg.decoder_kind.sinusoidal() {
            siren_hidden(rng, w, ch, self.cfg.omega0)
        } else {
            glorot(rng, w, ch)
        }
    }
}

impl PgtParams {
    /// Fresh parameters from the init stream. The hypernetwork head starts
    /// at zero so training begins from the identity-FiLM SIREN.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let enc = (0..cfg.n_layers)
            .map(|_| EncLayerP {
                wq: glorot(rng, d, d),
                wk: glorot(rng, d, d),
                wv: glorot(rng, d, d),
                wo: glorot(rng, d, d),
                bq: zeros(vec![d]),
                bk: zeros(vec![d]),
                bv: zeros(vec![d]),
                bo: zeros(vec![d]),
                mw1: glorot(rng, d, cfg.d_ff),
                mb1: zeros(vec![cfg.d_ff]),
                mw2: glorot(rng, cfg.d_ff, d),
                mb2: zeros(vec![d]),
            })
            .collect();
        let hyper = cfg.decoder_kind.uses_film().then(|| {
            let hidden = linear_glorot(rng, 2 * d, 2 * d);
            let head = LinearP {
                w: zeros(vec![2 * d, cfg.film_len()]),
                b: zeros(vec![cfg.film_len()]),
            };
            (hidden, head)
        });
        let dec_in = if cfg.decoder_kind.uses_film() {
            cfg.coord_dim
        } else {
            cfg.coord_dim + 2 * d
        };
        let dec = DecoderInit { cfg };
        let (dec_w0, dec_b0) = dec.first(rng, dec_in);
        PgtParams {
            w_u: glorot(rng, cfg.channels, d),
            w_p: glorot(rng, cfg.coord_dim, d),
            b_embed: zeros(vec![d]),
            global: uniform(rng, vec![1, d], (6.0 / (1 + d) as Real).sqrt()),
            enc,
            q1: linear_glorot(rng, cfg.coord_dim, d),
            q2: linear_glorot(rng, d, d),
            q3: linear_glorot(rng, d, d),
            cross_wq: glorot(rng, d, d),
            cross_wk: glorot(rng, d, d),
            cross_wv: glorot(rng, d, d),
            hyper,
            dec_w0,
            dec_b0,
            dec_hidden: (1..cfg.decoder_layers).map(|_| dec.hidden(rng)).collect(),
            dec_wout: dec.out(rng),
            dec_bout: zeros(vec![cfg.channels]),
            uw: cfg.uw_head.then(|| LinearP {
                w: zeros(vec![d, 1]),
                b: zeros(vec![1]),
            }),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> PgtVars {
        let bind_lin = |tape: &mut Tape, l: &LinearP| LinearVars {
            w: tape.param(l.w.clone()),
            b: tape.param(l.b.clone()),
        };
        PgtVars {
            w_u: tape.param(self.w_u.clone()),
            w_p: tape.param(self.w_p.clone()),
            b_embed: tape.param(self.b_embed.clone()),
            global: tape.param(self.global.clone()),
            enc: self
                .enc
                .iter()
                .map(|l| EncLayerVars {
                    wq: tape.param(l.wq.clone()),
                    wk: tape.param(l.wk.clone()),
                    wv: tape.param(l.wv.clone()),
                    wo: tape.param(l.wo.clone()),
                    bq: tape.param(l.bq.clone()),
                    bk: tape.param(l.bk.clone()),
                    bv: tape.param(l.bv.clone()),
                    bo: tape.param(l.bo.clone()),
                    mw1: tape.param(l.mw1.clone()),
                    mb1: tape.param(l.mb1.clone()),
                    mw2: tape.param(l.mw2.clone()),
                    mb2: tape.param(l.mb2.clone()),
                })
                .collect(),
            q1: bind_lin(tape, &self.q1),
            q2: bind_lin(tape, &self.q2),
            q3: bind_lin(tape, &self.q3),
            cross_wq: tape.param(self.cross_wq.clone()),
            cross_wk: tape.param(self.cross_wk.clone()),
            cross_wv: tape.param(self.cross_wv.clone()),
            hyper: self
                .hyper
                .as_ref()
                .map(|(h, o)| (bind_lin(tape, h), bind_lin(tape, o))),
            dec_w0: tape.param(self.dec_w0.clone()),
            dec_b0: tape.param(self.dec_b0.clone()),
            dec_hidden: self
                .dec_hidden
                .iter()
                .map(|w| tape.param(w.clone()))
                .collect(),
            dec_wout: tape.param(self.dec_wout.clone()),
            dec_bout: tape.param(self.dec_bout.clone()),
            uw: self.uw.as_ref().map(|l| bind_lin(tape, l)),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("embed.w_u".into(), &self.w_u));
        out.push(("embed.w_p".into(), &self.w_p));
        out.push(("embed.b".into(), &self.b_embed));
        out.push(("embed.global".into(), &self.global));
        for (i, l) in self.enc.iter().enumerate() {
            for (suffix, t) in [
                ("attn.wq", &l.wq),
                ("attn.wk", &l.wk),
                ("attn.wv", &l.wv),
                ("attn.wo", &l.wo),
                ("attn.bq", &l.bq),
                ("attn.bk", &l.bk),
                ("attn.bv", &l.bv),
                ("attn.bo", &l.bo),
                ("mlp.w1", &l.mw1),
                ("mlp.b1", &l.mb1),
                ("mlp.w2", &l.mw2),
                ("mlp.b2", &l.mb2),
            ] {
                out.push((format!("enc.{i}.{suffix}"), t));
            }
        }
        for (name, l) in [("query.0", &self.q1), ("query.1", &self.q2), ("query.2", &self.q3)] {
            out.push((format!("{name}.w"), &l.w));
            out.push((format!("{name}.b"), &l.b));
        }
        out.push(("cross.wq".into(), &self.cross_wq));
        out.push(("cross.wk".into(), &self.cross_wk));
        out.push(("cross.wv".into(), &self.cross_wv));
        if let Some((h, o)) = &self.hyper {
            out.push(("hyper.hidden.w".into(), &h.w));
            out.push(("hyper.hidden.b".into(), &h.b));
            out.push(("hyper.head.w".into(), &o.w));
            out.push(("hyper.head.b".into(), &o.b));
        }
        out.push(("dec.w0".into(), &self.dec_w0));
        out.push(("dec.b0".into(), &self.dec_b0));
        for (i, w) in self.dec_hidden.iter().enumerate() {
            out.push((format!("dec.h{}.w", i + 1), w));
        }
        out.push(("dec.wout".into(), &self.dec_wout));
        out.push(("dec.bout".into(), &self.dec_bout));
        if let Some(l) = &self.uw {
            out.push(("uw.w".into(), &l.w));
            out.push(("uw.b".into(), &l.b));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("embed.w_u".into(), &mut self.w_u));
        out.push(("embed.w_p".into(), &mut self.w_p));
        out.push(("embed.b".into(), &mut self.b_embed));
        out.push(("embed.global".into(), &mut self.global));
        for (i, l) in self.enc.iter_mut().enumerate() {
            for (suffix, t) in [
                ("attn.wq", &mut l.wq),
                ("attn.wk", &mut l.wk),
                ("attn.wv", &mut l.wv),
                ("attn.wo", &mut l.wo),
                ("attn.bq", &mut l.bq),
                ("attn.bk", &mut l.bk),
                ("attn.bv", &mut l.bv),
                ("attn.bo", &mut l.bo),
                ("mlp.w1", &mut l.mw1),
                ("mlp.b1", &mut l.mb1),
                ("mlp.w2", &mut l.mw2),
                ("mlp.b2", &mut l.mb2),
            ] {
                out.push((format!("enc.{i}.{suffix}"), t));
            }
        }
        for (name, l) in [
            ("query.0", &mut self.q1),
            ("query.1", &mut self.q2),
            ("query.2", &mut self.q3),
        ] {
            out.push((format!("{name}.w"), &mut l.w));
            out.push((format!("{name}.b"), &mut l.b));
        }
        out.push(("cross.wq".into(), &mut self.cross_wq));
        out.push(("cross.wk".into(), &mut self.cross_wk));
        out.push(("cross.wv".into(), &mut self.cross_wv));
        if let Some((h, o)) = &mut self.hyper {
            out.push(("hyper.hidden.w".into(), &mut h.w));
            out.push(("hyper.hidden.b".into(), &mut h.b));
            out.push(("hyper.head.w".into(), &mut o.w));
            out.push(("hyper.head.b".into(), &mut o.b));
        }
        out.push(("dec.w0".into(), &mut self.dec_w0));
        out.push(("dec.b0".into(), &mut self.dec_b0));
        for (i, w) in self.dec_hidden.iter_mut().enumerate() {
            out.push((format!("dec.h{}.w", i + 1), w));
        }
        out.push(("dec.wout".into(), &mut self.dec_wout));
        out.push(("dec.bout".into(), &mut self.dec_bout));
        if let Some(l) = &mut self.uw {
            out.push(("uw.w".into(), &mut l.w));
            out.push(("uw.b".into(), &mut l.b));
        }
        out
    }
}

impl PgtVars {
    /// Tape handles in the same order and under the same names as
    /// [`PgtParams::named`].
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = Vec::new();
        out.push(("embed.w_u".into(), self.w_u));
        out.push(("embed.w_p".into(), self.w_p));
        out.push(("embed.b".into(), self.b_embed));
        out.push(("embed.global".into(), self.global));
        for (i, l) in self.enc.iter().enumerate() {
            for (suffix, v) in [
                ("attn.wq", l.wq),
                ("attn.wk", l.wk),
                ("attn.wv", l.wv),
                ("attn.wo", l.wo),
                ("attn.bq", l.bq),
                ("attn.bk", l.bk),
                ("attn.bv", l.bv),
                ("attn.bo", l.bo),
                ("mlp.w1", l.mw1),
                ("mlp.b1", l.mb1),
                ("mlp.w2", l.mw2),
                ("mlp.b2", l.mb2),
            ] {
                out.push((format!("enc.{i}.{suffix}"), v));
            }
        }
        for (name, l) in [("query.0", &self.q1), ("query.1", &self.q2), ("query.2", &self.q3)] {
            out.push((format!("{name}.w"), l.w));
            out.push((format!("{name}.b"), l.b));
        }
        out.push(("cross.wq".into(), self.cross_wq));
        out.push(("cross.wk".into(), self.cross_wk));
        out.push(("cross.wv".into(), self.cross_wv));
        if let Some((h, o)) = &self.hyper {
            out.push(("hyper.hidden.w".into(), h.w));
            out.push(("hyper.hidden.b".into(), h.b));
            out.push(("hyper.head.w".into(), o.w));
            out.push(("hyper.head.b".into(), o.b));
        }
        out.push(("dec.w0".into(), self.dec_w0));
        out.push(("dec.b0".into(), self.dec_b0));
        for (i, w) in self.dec_hidden.iter().enumerate() {
            out.push((format!("dec.h{}.w", i + 1), *w));
        }
        out.push(("dec.wout".into(), self.dec_wout));
        out.push(("dec.bout".into(), self.dec_bout));
        if let Some(l) = &self.uw {
            out.push(("uw.w".into(), l.w));
            out.push(("uw.b".into(), l.b));
        }
        out
    }
}

/// Any trainable model in the artifact.
#[derive(Debug, Clone)]
pub enum AnyParams {
    Pgt(PgtParams),
    Pinn(super::baselines::PinnParams),
    Siren(super::baselines::SirenParams),
}

impl AnyParams {
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            AnyParams::Pgt(p) => p.named(),
            AnyParams::Pinn(p) => p.named(),
            AnyParams::Siren(p) => p.named(),
        }
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            AnyParams::Pgt(p) => p.named_mut(),
            AnyParams::Pinn(p) => p.named_mut(),
            AnyParams::Siren(p) => p.named_mut(),
        }
    }

    /// Exact learnable parameter count.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            AnyParams::Pgt(_) => "pgt",
            AnyParams::Pinn(_) => "pinn",
            AnyParams::Siren(_) => "siren",
        }
    }
}
