//! The experiment suites: heat sparse reconstruction, flow-analog
//! reconstruction, the seven-row ablation matrix, and noise robustness.
//!
//! Suite cells are independent and may run in parallel; results are sorted
//! by cell key before they reach the CSV so re-runs with the same seeds
//! reproduce it byte-identically (wall-clock column aside).

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{PgtError, Result};
use crate::model::{AnyParams, DecoderKind, ModelConfig};
use crate::train::{inject_noise, train, ModelSpec, SampleBudget, StepLog, TrainConfig, TrainedModel};
use crate::Real;

use super::{evaluate_field, sample_sparse_observations, EvalField, EvalReport, Problem};

/// Ablation matrix rows (`Full` doubles as the standard model).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationRow {
    Full,
    NoPde,
    NoGamma,
    NoPhysics,
    SirenNoFilm,
    FilmMlp,
    PlainMlp,
}

impl AblationRow {
    pub const ALL: [AblationRow; 7] = [
        AblationRow::Full,
        AblationRow::NoPde,
        AblationRow::NoGamma,
        AblationRow::NoPhysics,
        AblationRow::SirenNoFilm,
        AblationRow::FilmMlp,
        AblationRow::PlainMlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationRow::Full => "full",
            AblationRow::NoPde => "no_pde",
            AblationRow::NoGamma => "no_gamma",
            AblationRow::NoPhysics => "no_physics",
            AblationRow::SirenNoFilm => "siren_no_film",
            AblationRow::FilmMlp => "film_mlp",
            AblationRow::PlainMlp => "plain_mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| PgtError::Config(format!("unknown ablation row '{s}'")))
    }

    /// Apply the row's toggles to a full-model config.
    pub fn apply(self, cfg: &mut ModelConfig) {
        match self {
            AblationRow::Full => {}
            AblationRow::NoPde => cfg.use_pde_loss = false,
            AblationRow::NoGamma => cfg.use_gamma = false,
            AblationRow::NoPhysics => {
                cfg.use_gamma = false;
                cfg.use_pde_loss = false;
            }
            AblationRow::SirenNoFilm => cfg.decoder_kind = DecoderKind::SirenNoFilm,
            AblationRow::FilmMlp => cfg.decoder_kind = DecoderKind::FilmMlp,
            AblationRow::PlainMlp => cfg.decoder_kind = DecoderKind::PlainMlp,
        }
    }
}

/// Architecture dimensions shared by every PGT cell of a run.
#[derive(Debug, Clone)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub omega0: Real,
}

/// Everything a suite run needs: problems, dimensions, budgets, schedules.
#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub heat: Problem,
    pub ns: Problem,
    pub dims: ModelDims,
    /// Optional override for the attention-bias diffusivity; defaults to the
    /// problem's own coefficient.
    pub gamma_alpha: Option<Real>,
    pub baseline_width: usize,
    pub baseline_depth: usize,
    pub baseline_omega0: Real,
    pub heat_steps: usize,
    pub ns_steps: usize,
    pub ablation_steps: usize,
    pub noise_steps: usize,
    pub lr: Real,
    pub sigma_log_reg: bool,
    pub eval_every: usize,
    pub n_r: usize,
    pub n_b: usize,
    pub n_0: usize,
    pub heat_m_values: Vec<usize>,
    pub heat_models: Vec<String>,
    pub ns_n_train: usize,
    pub ns_variants: Vec<AblationRow>,
    pub ablation_n_train: usize,
    pub ablation_rows: Vec<AblationRow>,
    pub noise_n_train: usize,
    pub etas: Vec<Real>,
    pub noise_variants: Vec<String>,
    pub seeds: Vec<u64>,
    /// Noise cells are single-seed unless more are requested explicitly.
    pub noise_seeds: Vec<u64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            heat: Problem::Heat1d { nu: 0.1, mode: 2 },
            ns: Problem::TaylorGreen { nu: 0.01 },
            dims: ModelDims {
                d_model: 32,
                n_layers: 2,
                n_heads: 4,
                d_ff: 64,
                decoder_layers: 3,
                decoder_width: 64,
                omega0: 30.0,
            },
            gamma_alpha: None,
            baseline_width: 64,
            baseline_depth: 4,
            baseline_omega0: 30.0,
            heat_steps: 800,
            ns_steps: 700,
            ablation_steps: 300,
            noise_steps: 300,
            lr: 1e-3,
            sigma_log_reg: true,
            eval_every: 0,
            n_r: 128,
            n_b: 64,
            n_0: 64,
            heat_m_values: vec![100],
            heat_models: vec!["pgt".into(), "pinn".into(), "siren".into()],
            ns_n_train: 1500,
            ns_variants: vec![
                AblationRow::Full,
                AblationRow::NoGamma,
                AblationRow::NoPhysics,
            ],
            ablation_n_train: 500,
            ablation_rows: AblationRow::ALL.to_vec(),
            noise_n_train: 500,
            etas: vec![0.0, 0.01, 0.02, 0.05, 0.10, 0.20],
            noise_variants: vec!["pgt".into(), "pgt_uw".into()],
            seeds: vec![0],
            noise_seeds: vec![0],
        }
    }
}

impl ExperimentSettings {
    pub fn pgt_config(&self, problem: &Problem, uw_head: bool) -> ModelConfig {
        let mut family = problem.pde_family();
        if let (Some(alpha), crate::physics::PdeFamily::Parabolic { alpha: a, .. }) =
            (self.gamma_alpha, &mut family)
        {
            *a = alpha;
        }
        ModelConfig {
            d_model: self.dims.d_model,
            n_layers: self.dims.n_layers,
            n_heads: self.dims.n_heads,
            d_ff: self.dims.d_ff,
            decoder_layers: self.dims.decoder_layers,
            decoder_width: self.dims.decoder_width,
            omega0: self.dims.omega0,
            use_gamma: true,
            use_pde_loss: true,
            decoder_kind: DecoderKind::FilmSiren,
            causal_mask: true,
            pde_family: family,
            channels: problem.channels(),
            coord_dim: problem.coord_dim(),
            uw_head,
        }
    }

    fn train_config(&self, steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            lr: self.lr,
            eval_every: self.eval_every,
            sigma_log_reg: self.sigma_log_reg,
            ..TrainConfig::default()
        }
    }

    fn budget(&self, n_d: usize) -> SampleBudget {
        SampleBudget {
            n_d,
            n_r: self.n_r,
            n_b: self.n_b,
            n_0: self.n_0,
        }
    }

    fn model_spec(&self, name: &str, problem: &Problem) -> Result<ModelSpec> {
        match name {
            "pgt" => Ok(ModelSpec::Pgt(self.pgt_config(problem, false))),
            "pgt_uw" => Ok(ModelSpec::Pgt(self.pgt_config(problem, true))),
            "pinn" => Ok(ModelSpec::Pinn {
                width: self.baseline_width,
                depth: self.baseline_depth,
            }),
            "siren" => Ok(ModelSpec::Siren {
                width: self.baseline_width,
                depth: self.baseline_depth.max(2) - 1,
                omega0: self.baseline_omega0,
            }),
            other => Err(PgtError::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// One completed suite cell.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub suite: String,
    pub problem: String,
    pub model: String,
    pub variant: String,
    pub m_or_n: usize,
    pub eta: Real,
    pub seed: u64,
    pub report: EvalReport,
    pub params_count: usize,
    pub steps: usize,
    pub wall_seconds: Real,
    pub diverged: bool,
    pub train_log: Vec<StepLog>,
    pub trained: Option<(ModelSpec, AnyParams)>,
}

impl SuiteRow {
    /// Stable identifier for per-cell logs and checkpoints.
    pub fn cell_key(&self) -> String {
        let eta = if self.suite == "noise" {
            format!("_eta{}", self.eta)
        } else {
            String::new()
        };
        format!(
            "{}_{}_{}_{}_n{}{}_s{}",
            self.suite, self.problem, self.model, self.variant, self.m_or_n, eta, self.seed
        )
    }
}

pub const RESULTS_HEADER: &str = "suite,problem,model,variant_flags,M_or_Ntrain,eta,seed,\
rel_l2_total,rel_l2_u,rel_l2_v,rel_l2_p,pde_residual,data_loss,train_error,params_count,\
steps,wall_seconds";

pub fn results_csv_row(r: &SuiteRow) -> String {
    let opt = |v: Option<Real>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{:.9e},{},{},{},{:.9e},{:.9e},{:.9e},{},{},{:.3}",
        r.suite,
        r.problem,
        r.model,
        r.variant,
        r.m_or_n,
        r.eta,
        r.seed,
        r.report.rel_l2_total,
        opt(r.report.rel_l2_u),
        opt(r.report.rel_l2_v),
        opt(r.report.rel_l2_p),
        r.report.pde_residual,
        r.report.data_loss,
        r.report.train_error,
        r.params_count,
        r.steps,
        r.wall_seconds
    )
}

/// Specification of one cell, before execution.
#[derive(Debug, Clone)]
struct Cell {
    suite: String,
    problem: Problem,
    model_name: String,
    variant: AblationRow,
    n_obs: usize,
    eta: Real,
    seed: u64,
    steps: usize,
}

fn run_cell(settings: &ExperimentSettings, cell: &Cell) -> Result<SuiteRow> {
    let start = Instant::now();
    let mut obs = sample_sparse_observations(&cell.problem, cell.n_obs, cell.seed)?;
    inject_noise(&mut obs, cell.eta, cell.seed);

    let spec = match cell.model_name.as_str() {
        name @ ("pinn" | "siren") => settings.model_spec(name, &cell.problem)?,
        name => {
            let ModelSpec::Pgt(mut cfg) = settings.model_spec(name, &cell.problem)? else {
                unreachable!("pgt variants build pgt configs")
            };
            cell.variant.apply(&mut cfg);
            ModelSpec::Pgt(cfg)
        }
    };

    let tcfg = settings.train_config(cell.steps);
    let budget = settings.budget(cell.n_obs);
    let outcome = train(&cell.problem, &spec, &tcfg, &budget, &obs, cell.seed)?;

    let report = {
        let model = TrainedModel {
            spec: &spec,
            params: &outcome.params,
            obs: &obs,
        };
        let field = EvalField::Network(Box::new(move |coords| model.predict(coords)));
        evaluate_field(&cell.problem, &field, &obs)?
    };

    Ok(SuiteRow {
        suite: cell.suite.clone(),
        problem: cell.problem.name().to_string(),
        model: cell.model_name.clone(),
        variant: cell.variant.as_str().to_string(),
        m_or_n: cell.n_obs,
        eta: cell.eta,
        seed: cell.seed,
        report,
        params_count: outcome.params.count(),
        steps: cell.steps,
        wall_seconds: start.elapsed().as_secs_f64(),
        diverged: outcome.diverged_at.is_some(),
        train_log: outcome.log.clone(),
        trained: Some((spec, outcome.params)),
    })
}

fn run_cells(settings: &ExperimentSettings, cells: Vec<Cell>) -> Result<Vec<SuiteRow>> {
    let mut rows: Vec<SuiteRow> = cells
        .par_iter()
        .map(|c| run_cell(settings, c))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (&a.suite, &a.problem, &a.model, &a.variant, a.m_or_n, a.seed)
            .cmp(&(&b.suite, &b.problem, &b.model, &b.variant, b.m_or_n, b.seed))
            .then(a.eta.partial_cmp(&b.eta).expect("finite eta"))
    });
    Ok(rows)
}

/// Heat sparse-reconstruction sweep over M, models, and seeds.
pub fn run_heat_suite(settings: &ExperimentSettings) -> Result<Vec<SuiteRow>> {
    let mut cells = Vec::new();
    for &m in &settings.heat_m_values {
        for model in &settings.heat_models {
            for &seed in &settings.seeds {
                cells.push(Cell {
                    suite: "heat".into(),
                    problem: settings.heat.clone(),
                    model_name: model.clone(),
                    variant: AblationRow::Full,
                    n_obs: m,
                    eta: 0.0,
                    seed,
                    steps: settings.heat_steps,
                });
            }
        }
    }
    run_cells(settings, cells)
}

/// Flow-analog reconstruction at the full training budget, for the standard
/// model and the bias-disabled variants it is judged against.
pub fn run_ns_suite(settings: &ExperimentSettings) -> Result<Vec<SuiteRow>> {
    let mut cells = Vec::new();
    for &variant in &settings.ns_variants {
        for &seed in &settings.seeds {
            cells.push(Cell {
                suite: "ns".into(),
                problem: settings.ns.clone(),
                model_name: "pgt".into(),
                variant,
                n_obs: settings.ns_n_train,
                eta: 0.0,
                seed,
                steps: settings.ns_steps,
            });
        }
    }
    run_cells(settings, cells)
}

/// Seven-configuration ablation matrix on the flow analog. All rows share
/// dimensions, optimizer, and step budget.
pub fn run_ablation(settings: &ExperimentSettings) -> Result<Vec<SuiteRow>> {
    let mut cells = Vec::new();
    for &row in &settings.ablation_rows {
        for &seed in &settings.seeds {
            cells.push(Cell {
                suite: "ablation".into(),
                problem: settings.ns.clone(),
                model_name: "pgt".into(),
                variant: row,
                n_obs: settings.ablation_n_train,
                eta: 0.0,
                seed,
                steps: settings.ablation_steps,
            });
        }
    }
    run_cells(settings, cells)
}

/// Noise-robustness sweep: η levels × {standard, heteroscedastic} variants.
pub fn run_noise_suite(settings: &ExperimentSettings) -> Result<Vec<SuiteRow>> {
    let mut cells = Vec::new();
    for &eta in &settings.etas {
        for model in &settings.noise_variants {
            for &seed in &settings.noise_seeds {
                cells.push(Cell {
                    suite: "noise".into(),
                    problem: settings.ns.clone(),
                    model_name: model.clone(),
                    variant: AblationRow::Full,
                    n_obs: settings.noise_n_train,
                    eta,
                    seed,
                    steps: settings.noise_steps,
                });
            }
        }
    }
    run_cells(settings, cells)
}

/// Cap the worker pool used for suite-cell fan-out. A no-op if a global
/// pool already exists.
pub fn set_worker_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global();
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &mut [Real]) -> Real {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of a metric over rows matching a predicate.
pub fn median_metric(
    rows: &[SuiteRow],
    metric: impl Fn(&SuiteRow) -> Real,
    pred: impl Fn(&SuiteRow) -> bool,
) -> Option<Real> {
    let mut vals: Vec<Real> = rows.iter().filter(|r| pred(r)).map(&metric).collect();
    if vals.is_empty() {
        None
    } else {
        Some(median(&mut vals))
    }
}
