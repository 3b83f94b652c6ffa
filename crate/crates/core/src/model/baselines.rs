//! Coordinate-network baselines: a tanh MLP trained with the same composite
//! loss, and a plain SIREN trained on the data term alone.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::Var;
use crate::tensor::Tensor as GenTensor;
use crate::{Real, Tape, Tensor};

use super::params::LinearP;

/// Feed-forward coordinate MLP with tanh activations.
#[derive(Debug, Clone)]
pub struct PinnParams {
    pub layers: Vec<LinearP>,
}

impl PinnParams {
    pub fn init(
        coord_dim: usize,
        channels: usize,
        width: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = coord_dim;
        for _ in 0..depth {
            layers.push(glorot_linear(rng, fan_in, width));
            fan_in = width;
        }
        layers.push(glorot_linear(rng, fan_in, channels));
        PinnParams { layers }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("pinn.{i}.w"), &l.w));
            out.push((format!("pinn.{i}.b"), &l.b));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("pinn.{i}.w"), &mut l.w));
            out.push((format!("pinn.{i}.b"), &mut l.b));
        }
        out
    }
}

/// Plain sinusoidal network on raw coordinates. Hidden transitions carry no
/// bias, mirroring the FiLM decoder so identity modulation is an exact
/// equivalence.
#[derive(Debug, Clone)]
pub struct SirenParams {
    pub omega0: Real,
    pub w0: Tensor,
    pub b0: Tensor,
    pub hidden: Vec<Tensor>,
    pub wout: Tensor,
    pub bout: Tensor,
}

impl SirenParams {
    pub fn init(
        coord_dim: usize,
        channels: usize,
        width: usize,
        depth: usize,
        omega0: Real,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(depth >= 1, "siren needs at least one hidden layer");
        let w0 = uniform(rng, vec![coord_dim, width], 1.0 / coord_dim as Real);
        let b0 = uniform(rng, vec![width], 1.0 / (coord_dim as Real).sqrt());
        let hidden_limit = (6.0 / width as Real).sqrt() / omega0;
        let hidden = (1..depth)
            .map(|_| uniform(rng, vec![width, width], hidden_limit))
            .collect();
        let wout = uniform(rng, vec![width, channels], hidden_limit);
        SirenParams {
            omega0,
            w0,
            b0,
            hidden,
            wout,
            bout: GenTensor::zeros(vec![channels]),
        }
    }

    /// Wrap decoder weights so identity-FiLM equivalence can be checked on
    /// shared parameters.
    pub fn from_decoder_weights(
        omega0: Real,
        w0: Tensor,
        b0: Tensor,
        hidden: Vec<Tensor>,
        wout: Tensor,
        bout: Tensor,
    ) -> Self {
        SirenParams {
            omega0,
            w0,
            b0,
            hidden,
            wout,
            bout,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("siren.w0".to_string(), &self.w0),
            ("siren.b0".to_string(), &self.b0),
        ];
        for (i, w) in self.hidden.iter().enumerate() {
            out.push((format!("siren.h{}.w", i + 1), w));
        }
        out.push(("siren.wout".into(), &self.wout));
        out.push(("siren.bout".into(), &self.bout));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("siren.w0".to_string(), &mut self.w0),
            ("siren.b0".to_string(), &mut self.b0),
        ];
        for (i, w) in self.hidden.iter_mut().enumerate() {
            out.push((format!("siren.h{}.w", i + 1), w));
        }
        out.push(("siren.wout".into(), &mut self.wout));
        out.push(("siren.bout".into(), &mut self.bout));
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: Real) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.gen::<Real>() * 2.0 - 1.0) * limit)
        .collect();
    GenTensor::new(shape, data)
}

fn glorot_linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> LinearP {
    let limit = (6.0 / (fan_in + fan_out) as Real).sqrt();
    LinearP {
        w: uniform(rng, vec![fan_in, fan_out], limit),
        b: GenTensor::zeros(vec![fan_out]),
    }
}

/// Bind and run the tanh MLP on a coordinate batch.
pub fn forward_pinn(tape: &mut Tape, params: &PinnParams, coords: Var) -> Result<(Var, Vec<(String, Var)>)> {
    let mut named = Vec::new();
    let mut h = coords;
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let w = tape.param(layer.w.clone());
        let b = tape.param(layer.b.clone());
        named.push((format!("pinn.{i}.w"), w));
        named.push((format!("pinn.{i}.b"), b));
        let lin = tape.matmul(h, w)?;
        let lin = tape.add(lin, b)?;
        h = if i < last { tape.tanh(lin) } else { lin };
    }
    Ok((h, named))
}

/// Bind and run the plain SIREN on a coordinate batch:
/// `sin(ω0(W0 x + b0))`, then bias-free `sin(W h)` transitions, then a
/// linear readout.
pub fn forward_siren(
    tape: &mut Tape,
    params: &SirenParams,
    coords: Var,
) -> Result<(Var, Vec<(String, Var)>)> {
    let mut named = Vec::new();
    let w0 = tape.param(params.w0.clone());
    let b0 = tape.param(params.b0.clone());
    named.push(("siren.w0".into(), w0));
    named.push(("siren.b0".into(), b0));
    let pre = tape.matmul(coords, w0)?;
    let pre = tape.add(pre, b0)?;
    let scaled = tape.scale(pre, params.omega0);
    let mut h = tape.sin(scaled);
    for (i, wt) in params.hidden.iter().enumerate() {
        let w = tape.param(wt.clone());
        named.push((format!("siren.h{}.w", i + 1), w));
        let z = tape.matmul(h, w)?;
        h = tape.sin(z);
    }
    let wout = tape.param(params.wout.clone());
    let bout = tape.param(params.bout.clone());
    named.push(("siren.wout".into(), wout));
    named.push(("siren.bout".into(), bout));
    let out = tape.matmul(h, wout)?;
    let out = tape.add(out, bout)?;
    Ok((out, named))
}
