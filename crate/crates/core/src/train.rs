//! Composite loss assembly with learnable uncertainty weights, stencil-based
//! PDE supervision, the optimizer, and the training loop.

use rand_distr::{Distribution, StandardNormal};

use crate::bench::Problem;
use crate::error::{PgtError, Result};
use crate::model::{
    build_bias, coords_to_tensor, forward_pinn, forward_siren, pgt_forward_with_bias, AnyParams,
    ModelConfig, ObservationSet, PgtParams, PinnParams, SirenParams,
};
use crate::physics::stencil::{heat_residual_plan, NsResidualPlan};
use crate::rng::{stream, streams};
use crate::tape::Var;
use crate::tensor::Tensor as GenTensor;
use crate::{Coord, Real, Tape, Tensor};

/// Sampling counts per training step.
#[derive(Debug, Clone)]
pub struct SampleBudget {
    /// Observation count (the sparse-supervision level M).
    pub n_d: usize,
    /// Collocation points per step.
    pub n_r: usize,
    /// Boundary points per step.
    pub n_b: usize,
    /// Initial-condition points per step.
    pub n_0: usize,
}

impl SampleBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_d == 0 {
            return Err(PgtError::InvalidInput("budget needs n_d >= 1".into()));
        }
        Ok(())
    }
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    /// Evaluate rel-L2 on the problem grid every this many steps (0: only at
    /// the final step).
    pub eval_every: usize,
    /// Include the +Σ log σ_k regularizer. Without it the uncertainty
    /// weights have a degenerate minimizer at σ → ∞; off reproduces the
    /// literal published objective.
    pub sigma_log_reg: bool,
    pub stencil_h: Real,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            eval_every: 0,
            sigma_log_reg: true,
            stencil_h: 1e-3,
        }
    }
}

/// What to train.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Pgt(ModelConfig),
    Pinn { width: usize, depth: usize },
    Siren { width: usize, depth: usize, omega0: Real },
}

impl ModelSpec {
    pub fn init(&self, problem: &Problem, seed: u64) -> Result<AnyParams> {
        let mut rng = stream(seed, streams::INIT);
        Ok(match self {
            ModelSpec::Pgt(cfg) => {
                cfg.validate()?;
                AnyParams::Pgt(PgtParams::init(cfg, &mut rng))
            }
            ModelSpec::Pinn { width, depth } => AnyParams::Pinn(PinnParams::init(
                problem.coord_dim(),
                problem.channels(),
                *width,
                *depth,
                &mut rng,
            )),
            ModelSpec::Siren {
                width,
                depth,
                omega0,
            } => AnyParams::Siren(SirenParams::init(
                problem.coord_dim(),
                problem.channels(),
                *width,
                *depth,
                *omega0,
                &mut rng,
            )),
        })
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            ModelSpec::Pgt(_) => "pgt",
            ModelSpec::Pinn { .. } => "pinn",
            ModelSpec::Siren { .. } => "siren",
        }
    }

    /// The plain SIREN baseline trains on the data term alone; the tanh MLP
    /// shares the full composite objective.
    fn uses_composite_loss(&self) -> bool {
        !matches!(self, ModelSpec::Siren { .. })
    }

    fn use_pde(&self) -> bool {
        match self {
            ModelSpec::Pgt(cfg) => cfg.use_pde_loss,
            ModelSpec::Pinn { .. } => true,
            ModelSpec::Siren { .. } => false,
        }
    }

    fn uw_head(&self) -> bool {
        matches!(self, ModelSpec::Pgt(cfg) if cfg.uw_head)
    }
}

// ── Loss builders ────────────────────────────────────────────────────────

/// Mean over points of the squared error norm: `(1/N) Σ_i ‖pred_i − obs_i‖²`.
/// Reduces to plain MSE for a single channel.
pub fn data_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    if target.rows() == 0 {
        return Err(PgtError::InvalidInput("data loss over an empty set".into()));
    }
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    let row_sums = sum_channels(tape, sq)?;
    Ok(tape.mean_all(row_sums))
}

fn sum_channels(tape: &mut Tape, x: Var) -> Result<Var> {
    let ch = tape.value(x).cols();
    let ones = tape.constant(GenTensor::full(vec![ch, 1], 1.0));
    tape.matmul(x, ones)
}

/// Heteroscedastic negative log-likelihood:
/// `(1/N) Σ_i [log σ_i² + ‖err_i‖²/σ_i²]` with `σ_i² = exp(log_var_i)`.
/// At `log_var ≡ 0` this reproduces [`data_loss`] exactly.
pub fn heteroscedastic_data_loss(
    tape: &mut Tape,
    pred: Var,
    target: &Tensor,
    log_var: Var,
) -> Result<Var> {
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    let err2 = sum_channels(tape, sq)?;
    let neg = tape.scale(log_var, -1.0);
    let inv_var = tape.exp(neg);
    let weighted = tape.mul(err2, inv_var)?;
    let per_point = tape.add(log_var, weighted)?;
    Ok(tape.mean_all(per_point))
}

/// One uncertainty-weighted term: `L/(2σ²) (+ log σ)` with `σ = exp(s)`.
fn weighted_term(tape: &mut Tape, loss: Var, s: Var, log_reg: bool) -> Result<Var> {
    let neg2s = tape.scale(s, -2.0);
    let w = tape.exp(neg2s);
    let prod = tape.mul(loss, w)?;
    let half = tape.scale(prod, 0.5);
    if log_reg {
        tape.add(half, s)
    } else {
        Ok(half)
    }
}

/// Combine active loss terms under uncertainty weighting.
pub fn total_loss(tape: &mut Tape, terms: &[(Var, Var)], log_reg: bool) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(loss, s) in terms {
        let term = weighted_term(tape, loss, s, log_reg)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| PgtError::InvalidInput("total loss needs at least one term".into()))
}

// ── PDE residual batches ─────────────────────────────────────────────────

/// Stencil evaluation points plus the constant combination matrices that
/// turn batched model outputs into residuals. The combination is linear in
/// the field values, so parameter gradients flow through plain matmuls.
pub struct PdeBatch {
    pub points: Vec<Coord>,
    kind: PdeBatchKind,
}

enum PdeBatchKind {
    /// Residual = combo · u.
    Heat { combo: Tensor },
    /// Per-derivative combination matrices over the shared point list.
    Ns {
        d_t: Tensor,
        d_x: Tensor,
        d_y: Tensor,
        d_xx: Tensor,
        d_yy: Tensor,
        center: Tensor,
        nu: Real,
    },
}

impl PdeBatch {
    pub fn build(problem: &Problem, colloc: &[Coord], h: Real) -> Result<Self> {
        match problem {
            Problem::Heat1d { nu, .. } => {
                let b = problem.bounds();
                let mut points = Vec::new();
                let mut rows: Vec<(usize, Vec<Real>)> = Vec::new();
                for c in colloc {
                    let plan = heat_residual_plan(c.space[0], c.t, *nu, h, b[0], b[1])?;
                    let base = points.len();
                    points.extend(plan.points);
                    rows.push((base, plan.coeffs));
                }
                let total = points.len();
                let mut combo = GenTensor::zeros(vec![colloc.len(), total]);
                for (i, (base, coeffs)) in rows.iter().enumerate() {
                    for (k, &c) in coeffs.iter().enumerate() {
                        combo.set(i, base + k, c);
                    }
                }
                Ok(PdeBatch {
                    points,
                    kind: PdeBatchKind::Heat { combo },
                })
            }
            Problem::TaylorGreen { nu } => {
                let mut points = Vec::new();
                let mut plans: Vec<(usize, NsResidualPlan<Real>)> = Vec::new();
                for c in colloc {
                    let plan = problem.ns_plan(c, h)?;
                    let base = points.len();
                    points.extend(plan.points.iter().cloned());
                    plans.push((base, plan));
                }
                let total = points.len();
                let n = colloc.len();
                let mut mats: Vec<Tensor> =
                    (0..6).map(|_| GenTensor::zeros(vec![n, total])).collect();
                for (i, (base, plan)) in plans.iter().enumerate() {
                    let fill = |m: &mut Tensor, idx: &[usize], coeffs: &[Real]| {
                        for (&k, &c) in idx.iter().zip(coeffs.iter()) {
                            m.set(i, base + k, c);
                        }
                    };
                    fill(&mut mats[0], &plan.d_t.indices, &plan.d_t.coeffs);
                    fill(&mut mats[1], &plan.d_x.indices, &plan.d_x.coeffs);
                    fill(&mut mats[2], &plan.d_y.indices, &plan.d_y.coeffs);
                    fill(&mut mats[3], &plan.d_xx.indices, &plan.d_xx.coeffs);
                    fill(&mut mats[4], &plan.d_yy.indices, &plan.d_yy.coeffs);
                    mats[5].set(i, base + plan.center, 1.0);
                }
                let mut it = mats.into_iter();
                Ok(PdeBatch {
                    points,
                    kind: PdeBatchKind::Ns {
                        d_t: it.next().unwrap(),
                        d_x: it.next().unwrap(),
                        d_y: it.next().unwrap(),
                        d_xx: it.next().unwrap(),
                        d_yy: it.next().unwrap(),
                        center: it.next().unwrap(),
                        nu: *nu,
                    },
                })
            }
        }
    }

    /// Residual matrix (N_r × residual channels) from the model predictions
    /// at this batch's stencil points.
    pub fn residuals(&self, tape: &mut Tape, pred: Var) -> Result<Var> {
        match &self.kind {
            PdeBatchKind::Heat { combo } => {
                let m = tape.constant(combo.clone());
                tape.matmul(m, pred)
            }
            PdeBatchKind::Ns {
                d_t,
                d_x,
                d_y,
                d_xx,
                d_yy,
                center,
                nu,
            } => {
                let u = tape.slice_cols(pred, 0, 1)?;
                let v = tape.slice_cols(pred, 1, 2)?;
                let p = tape.slice_cols(pred, 2, 3)?;
                let apply = |tape: &mut Tape, m: &Tensor, f: Var| -> Result<Var> {
                    let c = tape.constant(m.clone());
                    tape.matmul(c, f)
                };
                let u_c = apply(tape, center, u)?;
                let v_c = apply(tape, center, v)?;
                let momentum = |tape: &mut Tape, f: Var, pressure_grad: &Tensor| -> Result<Var> {
                    let f_t = apply(tape, d_t, f)?;
                    let f_x = apply(tape, d_x, f)?;
                    let f_y = apply(tape, d_y, f)?;
                    let f_xx = apply(tape, d_xx, f)?;
                    let f_yy = apply(tape, d_yy, f)?;
                    let conv_x = tape.mul(u_c, f_x)?;
                    let conv_y = tape.mul(v_c, f_y)?;
                    let p_grad = apply(tape, pressure_grad, p)?;
                    let lap = tape.add(f_xx, f_yy)?;
                    let visc = tape.scale(lap, -*nu);
                    let mut acc = tape.add(f_t, conv_x)?;
                    acc = tape.add(acc, conv_y)?;
                    acc = tape.add(acc, p_grad)?;
                    tape.add(acc, visc)
                };
                let r_u = momentum(tape, u, d_x)?;
                let r_v = momentum(tape, v, d_y)?;
                let u_x = apply(tape, d_x, u)?;
                let v_y = apply(tape, d_y, v)?;
                let r_div = tape.add(u_x, v_y)?;
                tape.concat_cols(&[r_u, r_v, r_div])
            }
        }
    }
}

/// Mean squared residual over collocation points (and channels, for the
/// flow system).
pub fn pde_loss(tape: &mut Tape, residuals: Var) -> Var {
    let sq = tape.square(residuals);
    tape.mean_all(sq)
}

// ── Noise injection ──────────────────────────────────────────────────────

/// Corrupt observation values once, before training, with Gaussian noise of
/// standard deviation `η · std(channel values)`. For multichannel flow data
/// only the velocity channels are corrupted. `η = 0` leaves the set
/// untouched.
pub fn inject_noise(obs: &mut ObservationSet, eta: Real, seed: u64) {
    if eta == 0.0 {
        return;
    }
    let mut rng = stream(seed, streams::NOISE);
    let n = obs.values.rows();
    let ch = obs.values.cols();
    let corrupt_channels = if ch >= 3 { 2 } else { ch };
    for c in 0..corrupt_channels {
        let mean: Real = (0..n).map(|i| obs.values.at(i, c)).sum::<Real>() / n as Real;
        let var: Real = (0..n)
            .map(|i| {
                let d = obs.values.at(i, c) - mean;
                d * d
            })
            .sum::<Real>()
            / n as Real;
        let sigma = eta * var.sqrt();
        for i in 0..n {
            let noise: Real = StandardNormal.sample(&mut rng);
            let v = obs.values.at(i, c) + sigma * noise;
            obs.values.set(i, c, v);
        }
    }
}

// ── Optimizer ────────────────────────────────────────────────────────────

/// Bias-corrected adaptive-moment optimizer over an ordered parameter list.
pub struct AdamState {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    pub step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[Vec<usize>], cfg: &TrainConfig) -> Self {
        AdamState {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: shapes.iter().map(|s| GenTensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| GenTensor::zeros(s.clone())).collect(),
        }
    }

    /// One update. `grads[i] = None` means no gradient flowed to parameter
    /// `i` this step (treated as zero). Non-finite gradients abort with the
    /// parameter's name.
    pub fn update(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (name, theta)) in params.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref() else {
                continue;
            };
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(PgtError::NanGradient {
                    param: name.clone(),
                    step: self.step,
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..theta.numel() {
                let gk = g.data()[k];
                let mk = self.beta1 * m.data()[k] + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                theta.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

// ── Training loop ────────────────────────────────────────────────────────

/// One line of the per-step log.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub l_data: Real,
    pub l_pde: Real,
    pub l_bc: Real,
    pub l_ic: Real,
    /// σ_data, σ_PDE, σ_BC, σ_IC.
    pub sigmas: [Real; 4],
    pub total: Real,
    pub rel_l2_eval: Option<Real>,
}

pub const STEP_LOG_HEADER: &str =
    "step,L_data,L_PDE,L_BC,L_IC,sigma_data,sigma_PDE,sigma_BC,sigma_IC,total,rel_l2_eval";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let num = |v: Real| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v:.9e}")
            }
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            num(self.l_data),
            num(self.l_pde),
            num(self.l_bc),
            num(self.l_ic),
            num(self.sigmas[0]),
            num(self.sigmas[1]),
            num(self.sigmas[2]),
            num(self.sigmas[3]),
            num(self.total),
            self.rel_l2_eval
                .map(|v| format!("{v:.9e}"))
                .unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AnyParams,
    /// Raw log-σ parameters (σ_k = exp(s_k)).
    pub sigma_raw: [Real; 4],
    pub log: Vec<StepLog>,
    /// Step at which the total loss stopped being finite; `params` then
    /// holds the last finite-loss parameters.
    pub diverged_at: Option<usize>,
}

/// A trained (or freshly initialized) model ready for batched evaluation.
pub struct TrainedModel<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a AnyParams,
    pub obs: &'a ObservationSet,
}

const EVAL_CHUNK: usize = 2048;

impl TrainedModel<'_> {
    /// Predictions over arbitrary coordinates. The encoder runs once; query
    /// chunks run on fresh tapes against its frozen output, so evaluation
    /// memory stays bounded.
    pub fn predict(&self, coords: &[Coord]) -> Result<Tensor> {
        match (self.spec, self.params) {
            (ModelSpec::Pgt(cfg), AnyParams::Pgt(p)) => {
                let bias = build_bias(cfg, self.obs)?;
                let (ctx_val, glob_val) = {
                    let mut tape = Tape::new();
                    let vars = p.bind(&mut tape);
                    let tokens = crate::model::embed_context(&mut tape, &vars, self.obs)?;
                    let (c_glob, ctx) = crate::model::encoder_forward(
                        &mut tape,
                        &vars,
                        cfg,
                        tokens,
                        bias.as_ref(),
                    )?;
                    (tape.value(ctx).clone(), tape.value(c_glob).clone())
                };
                let ch = cfg.channels;
                let mut out = GenTensor::zeros(vec![coords.len(), ch]);
                for (ci, chunk) in coords.chunks(EVAL_CHUNK).enumerate() {
                    let mut tape = Tape::new();
                    let vars = p.bind(&mut tape);
                    let ctx = tape.constant(ctx_val.clone());
                    let c_glob = tape.constant(glob_val.clone());
                    let q = tape.constant(coords_to_tensor(chunk));
                    let phi = crate::model::query_embed(&mut tape, &vars, q)?;
                    let g = crate::model::query_attend(&mut tape, &vars, cfg, phi, ctx)?;
                    let film = if cfg.decoder_kind.uses_film() {
                        Some(crate::model::film_from_hypernet(
                            &mut tape, &vars, cfg, g, c_glob,
                        )?)
                    } else {
                        None
                    };
                    let pred = crate::model::decode_with_film(
                        &mut tape,
                        &vars,
                        cfg,
                        q,
                        g,
                        c_glob,
                        film.as_deref(),
                    )?;
                    let vals = tape.value(pred);
                    let base = ci * EVAL_CHUNK;
                    for i in 0..chunk.len() {
                        for c in 0..ch {
                            out.set(base + i, c, vals.at(i, c));
                        }
                    }
                }
                Ok(out)
            }
            (ModelSpec::Pinn { .. }, AnyParams::Pinn(p)) => {
                let mut tape = Tape::new();
                let q = tape.constant(coords_to_tensor(coords));
                let (out, _) = forward_pinn(&mut tape, p, q)?;
                Ok(tape.value(out).clone())
            }
            (ModelSpec::Siren { .. }, AnyParams::Siren(p)) => {
                let mut tape = Tape::new();
                let q = tape.constant(coords_to_tensor(coords));
                let (out, _) = forward_siren(&mut tape, p, q)?;
                Ok(tape.value(out).clone())
            }
            _ => Err(PgtError::InvalidInput(
                "model spec does not match parameter kind".into(),
            )),
        }
    }
}

struct ActiveTerms {
    pde: bool,
    bc: bool,
    ic: bool,
}

/// Train a model on a problem. Deterministic given the seed: parameter
/// init, collocation resampling, and constraint sampling each draw from
/// their own named stream.
pub fn train(
    problem: &Problem,
    spec: &ModelSpec,
    tcfg: &TrainConfig,
    budget: &SampleBudget,
    obs: &ObservationSet,
    seed: u64,
) -> Result<TrainOutcome> {
    budget.validate()?;
    problem.validate()?;
    if obs.len() != budget.n_d {
        return Err(PgtError::InvalidInput(format!(
            "budget n_d {} does not match observation count {}",
            budget.n_d,
            obs.len()
        )));
    }

    let mut params = spec.init(problem, seed)?;
    let mut sigma_raw = [0.0 as Real; 4];
    let composite = spec.uses_composite_loss();
    let active = ActiveTerms {
        pde: composite && spec.use_pde() && budget.n_r > 0,
        bc: composite && budget.n_b > 0,
        ic: composite && budget.n_0 > 0,
    };
    let uw = spec.uw_head();

    let bias = match (spec, &params) {
        (ModelSpec::Pgt(cfg), AnyParams::Pgt(_)) => build_bias(cfg, obs)?,
        _ => None,
    };

    let shapes: Vec<Vec<usize>> = params
        .named()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .chain(active_sigma_shapes(composite, &active))
        .collect();
    let mut adam = AdamState::new(&shapes, tcfg);

    let mut colloc_rng = stream(seed, streams::COLLOCATION);
    let mut constraint_rng = stream(seed, streams::CONSTRAINTS);

    let mut log: Vec<StepLog> = Vec::with_capacity(tcfg.steps);
    let mut last_good = params.clone();
    let mut last_good_sigma = sigma_raw;

    for step in 0..tcfg.steps {
        let colloc: Vec<Coord> = (0..if active.pde { budget.n_r } else { 0 })
            .map(|_| problem.interior_sample(&mut colloc_rng))
            .collect();
        let bc_pts: Vec<Coord> = (0..if active.bc { budget.n_b } else { 0 })
            .map(|_| problem.boundary_sample(&mut constraint_rng))
            .collect();
        let ic_pts: Vec<Coord> = (0..if active.ic { budget.n_0 } else { 0 })
            .map(|_| problem.initial_sample(&mut constraint_rng))
            .collect();

        let pde_batch = if active.pde {
            Some(PdeBatch::build(problem, &colloc, tcfg.stencil_h)?)
        } else {
            None
        };

        // One forward pass covers every query; losses slice row segments.
        let mut queries: Vec<Coord> = obs.coords.clone();
        let seg_data = 0..queries.len();
        let seg_pde = if let Some(b) = &pde_batch {
            let start = queries.len();
            queries.extend(b.points.iter().cloned());
            start..queries.len()
        } else {
            0..0
        };
        let seg_bc = {
            let start = queries.len();
            queries.extend(bc_pts.iter().cloned());
            start..queries.len()
        };
        let seg_ic = {
            let start = queries.len();
            queries.extend(ic_pts.iter().cloned());
            start..queries.len()
        };

        let mut tape = Tape::new();
        let (pred, log_var, named_vars): (Var, Option<Var>, Vec<(String, Var)>) =
            match (spec, &params) {
                (ModelSpec::Pgt(cfg), AnyParams::Pgt(p)) => {
                    let vars = p.bind(&mut tape);
                    let q = coords_to_tensor(&queries);
                    let out =
                        pgt_forward_with_bias(&mut tape, &vars, cfg, obs, &q, bias.as_ref())?;
                    (out.pred, out.log_var, vars.named())
                }
                (ModelSpec::Pinn { .. }, AnyParams::Pinn(p)) => {
                    let q = tape.constant(coords_to_tensor(&queries));
                    let (out, named) = forward_pinn(&mut tape, p, q)?;
                    (out, None, named)
                }
                (ModelSpec::Siren { .. }, AnyParams::Siren(p)) => {
                    let q = tape.constant(coords_to_tensor(&queries));
                    let (out, named) = forward_siren(&mut tape, p, q)?;
                    (out, None, named)
                }
                _ => unreachable!("spec/params kinds match by construction"),
            };

        let pred_data = tape.slice_rows(pred, seg_data.start, seg_data.end)?;
        let l_data = if uw {
            let lv = log_var.expect("uw head present");
            let lv_data = tape.slice_rows(lv, seg_data.start, seg_data.end)?;
            heteroscedastic_data_loss(&mut tape, pred_data, &obs.values, lv_data)?
        } else {
            data_loss(&mut tape, pred_data, &obs.values)?
        };

        let l_pde = if let Some(b) = &pde_batch {
            let pred_pde = tape.slice_rows(pred, seg_pde.start, seg_pde.end)?;
            let resid = b.residuals(&mut tape, pred_pde)?;
            Some(pde_loss(&mut tape, resid))
        } else {
            None
        };
        let l_bc = if active.bc {
            let pred_bc = tape.slice_rows(pred, seg_bc.start, seg_bc.end)?;
            let target = analytic_values(problem, &bc_pts);
            Some(data_loss(&mut tape, pred_bc, &target)?)
        } else {
            None
        };
        let l_ic = if active.ic {
            let pred_ic = tape.slice_rows(pred, seg_ic.start, seg_ic.end)?;
            let target = analytic_values(problem, &ic_pts);
            Some(data_loss(&mut tape, pred_ic, &target)?)
        } else {
            None
        };

        // Uncertainty weighting; the σ parameters ride the same tape.
        let (total, sigma_vars): (Var, Vec<(usize, Var)>) = if composite {
            let mut terms: Vec<(Var, Var)> = Vec::new();
            let mut sv: Vec<(usize, Var)> = Vec::new();
            let push = |tape: &mut Tape, idx: usize, l: Var, sv: &mut Vec<(usize, Var)>| {
                let s = tape.param(GenTensor::scalar(sigma_raw[idx]));
                sv.push((idx, s));
                (l, s)
            };
            terms.push(push(&mut tape, 0, l_data, &mut sv));
            if let Some(l) = l_pde {
                terms.push(push(&mut tape, 1, l, &mut sv));
            }
            if let Some(l) = l_bc {
                terms.push(push(&mut tape, 2, l, &mut sv));
            }
            if let Some(l) = l_ic {
                terms.push(push(&mut tape, 3, l, &mut sv));
            }
            (total_loss(&mut tape, &terms, tcfg.sigma_log_reg)?, sv)
        } else {
            (l_data, Vec::new())
        };

        let total_val = tape.scalar_value(total);
        let mut entry = StepLog {
            step,
            l_data: tape.scalar_value(l_data),
            l_pde: l_pde.map(|v| tape.scalar_value(v)).unwrap_or(Real::NAN),
            l_bc: l_bc.map(|v| tape.scalar_value(v)).unwrap_or(Real::NAN),
            l_ic: l_ic.map(|v| tape.scalar_value(v)).unwrap_or(Real::NAN),
            sigmas: [
                sigma_raw[0].exp(),
                sigma_raw[1].exp(),
                sigma_raw[2].exp(),
                sigma_raw[3].exp(),
            ],
            total: total_val,
            rel_l2_eval: None,
        };

        if !total_val.is_finite() {
            log.push(entry);
            return Ok(TrainOutcome {
                params: last_good,
                sigma_raw: last_good_sigma,
                log,
                diverged_at: Some(step),
            });
        }
        last_good = params.clone();
        last_good_sigma = sigma_raw;

        tape.backward(total)?;

        let mut grads: Vec<Option<Tensor>> = named_vars
            .iter()
            .map(|(_, v)| tape.grad(*v).cloned())
            .collect();
        for (_, s) in &sigma_vars {
            grads.push(tape.grad(*s).cloned());
        }

        {
            let mut named_mut = params.named_mut();
            let mut sigma_tensors: Vec<(String, Tensor)> = sigma_vars
                .iter()
                .map(|(idx, _)| {
                    (
                        format!("sigma.{}", SIGMA_NAMES[*idx]),
                        GenTensor::scalar(sigma_raw[*idx]),
                    )
                })
                .collect();
            let mut all: Vec<(String, &mut Tensor)> = named_mut
                .iter_mut()
                .map(|(n, t)| (n.clone(), &mut **t))
                .collect();
            for (n, t) in sigma_tensors.iter_mut() {
                all.push((n.clone(), t));
            }
            adam.update(&mut all, &grads)?;
            for ((idx, _), (_, t)) in sigma_vars.iter().zip(sigma_tensors.iter()) {
                sigma_raw[*idx] = t.scalar_value();
            }
        }

        let do_eval =
            (tcfg.eval_every > 0 && (step + 1) % tcfg.eval_every == 0) || step + 1 == tcfg.steps;
        if do_eval {
            entry.rel_l2_eval = Some(eval_rel_l2(problem, spec, &params, obs)?);
        }
        log.push(entry);
    }

    Ok(TrainOutcome {
        params,
        sigma_raw,
        log,
        diverged_at: None,
    })
}

const SIGMA_NAMES: [&str; 4] = ["data", "pde", "bc", "ic"];

fn analytic_values(problem: &Problem, coords: &[Coord]) -> Tensor {
    let ch = problem.channels();
    let mut data = Vec::with_capacity(coords.len() * ch);
    for c in coords {
        data.extend(problem.analytic(c));
    }
    GenTensor::new(vec![coords.len(), ch], data)
}

fn active_sigma_shapes(composite: bool, active: &ActiveTerms) -> Vec<Vec<usize>> {
    if !composite {
        return Vec::new();
    }
    let mut shapes = vec![vec![]];
    if active.pde {
        shapes.push(vec![]);
    }
    if active.bc {
        shapes.push(vec![]);
    }
    if active.ic {
        shapes.push(vec![]);
    }
    shapes
}

/// Rel-L2 of the current parameters on the problem's evaluation grid.
pub fn eval_rel_l2(
    problem: &Problem,
    spec: &ModelSpec,
    params: &AnyParams,
    obs: &ObservationSet,
) -> Result<Real> {
    let grid = problem.eval_grid();
    let model = TrainedModel { spec, params, obs };
    let pred = model.predict(&grid)?;
    let truth = analytic_values(problem, &grid);
    crate::bench::relative_l2(pred.data(), truth.data())
}

#[cfg(test)]
mod tests;
