//! Command implementations and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};

use pgt_core::bench::suites::{
    results_csv_row, run_ablation, run_heat_suite, run_noise_suite, run_ns_suite, SuiteRow,
    RESULTS_HEADER,
};
use pgt_core::bench::{EvalField, Problem};
use pgt_core::check;
use pgt_core::model::checkpoint::{self, Checkpoint};
use pgt_core::model::{AnyParams, DecoderKind, ModelConfig, ObservationSet, PgtParams};
use pgt_core::physics::PdeFamily as GenFamily;
use pgt_core::rng::{stream, streams};
use pgt_core::train::{inject_noise, ModelSpec, TrainedModel, STEP_LOG_HEADER};
use pgt_core::{Coord, Real};

use crate::config::ExperimentConfig;

/// Stable exit-code contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CONFIG: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;

pub enum CmdError {
    Config(String),
    Internal(String),
}

impl CmdError {
    pub fn code(&self) -> i32 {
        match self {
            CmdError::Config(_) => EXIT_CONFIG,
            CmdError::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Internal(m) => m,
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CmdError {
    CmdError::Internal(e.to_string())
}

type CmdResult = Result<i32, CmdError>;

// ── run ──────────────────────────────────────────────────────────────────

pub fn cmd_run(suite: &str, cfg: &ExperimentConfig) -> CmdResult {
    let settings = cfg.settings().map_err(|e| CmdError::Config(e.0))?;
    let rows = match suite {
        "heat" => run_heat_suite(&settings),
        "ns" => run_ns_suite(&settings),
        "ablation" => run_ablation(&settings),
        "noise" => run_noise_suite(&settings),
        other => {
            return Err(CmdError::Internal(format!(
                "suite '{other}' reached dispatch (validated earlier)"
            )))
        }
    }
    .map_err(internal)?;

    let out_dir = PathBuf::from(cfg.out_dir());
    write_outputs(&out_dir, cfg, &rows).map_err(internal)?;

    for row in &rows {
        println!(
            "{:<40} rel_l2 {:.3e}  resid {:.3e}  ({:.1}s)",
            row.cell_key(),
            row.report.rel_l2_total,
            row.report.pde_residual,
            row.wall_seconds
        );
    }
    println!("results: {}", out_dir.join("results.csv").display());

    if let Some(bad) = rows.iter().find(|r| r.diverged) {
        eprintln!(
            "training diverged in cell {}; last-good checkpoint at {}",
            bad.cell_key(),
            checkpoint_path(&out_dir, bad).display()
        );
        return Ok(EXIT_DIVERGENCE);
    }
    Ok(EXIT_OK)
}

fn checkpoint_path(out_dir: &Path, row: &SuiteRow) -> PathBuf {
    out_dir
        .join("checkpoints")
        .join(format!("{}.ckpt", row.cell_key()))
}

fn write_outputs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    rows: &[SuiteRow],
) -> pgt_core::Result<()> {
    let io = |e: std::io::Error| pgt_core::PgtError::Checkpoint(format!("write output: {e}"));
    fs::create_dir_all(out_dir.join("logs")).map_err(io)?;
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(io)?;

    fs::write(out_dir.join("config.resolved"), cfg.echo()).map_err(io)?;

    let mut csv = String::from(RESULTS_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&results_csv_row(row));
        csv.push('\n');
    }
    fs::write(out_dir.join("results.csv"), csv).map_err(io)?;

    let mut summary = String::new();
    summary.push_str(&format!("cells = {}\n", rows.len()));
    for row in rows {
        let key = row.cell_key();
        summary.push_str(&format!("{key}.rel_l2_total = {:.9e}\n", row.report.rel_l2_total));
        summary.push_str(&format!("{key}.pde_residual = {:.9e}\n", row.report.pde_residual));
        summary.push_str(&format!("{key}.data_loss = {:.9e}\n", row.report.data_loss));
        summary.push_str(&format!("{key}.train_error = {:.9e}\n", row.report.train_error));
        summary.push_str(&format!("{key}.params = {}\n", row.params_count));
        summary.push_str(&format!("{key}.diverged = {}\n", row.diverged));
    }
    fs::write(out_dir.join("summary.txt"), summary).map_err(io)?;

    for row in rows {
        let mut log = String::from(STEP_LOG_HEADER);
        log.push('\n');
        for entry in &row.train_log {
            log.push_str(&entry.csv_row());
            log.push('\n');
        }
        fs::write(out_dir.join("logs").join(format!("{}.csv", row.cell_key())), log)
            .map_err(io)?;

        if let Some((spec, params)) = &row.trained {
            let meta = row_meta(row, spec);
            let named = params.named();
            let borrowed: Vec<(String, &pgt_core::Tensor)> =
                named.iter().map(|(n, t)| (n.clone(), *t)).collect();
            checkpoint::save(&checkpoint_path(out_dir, row), &meta, &borrowed)?;
        }
    }
    Ok(())
}

// ── checkpoint metadata ──────────────────────────────────────────────────

fn problem_meta(problem_name: &str, row: &SuiteRow) -> Vec<(String, String)> {
    let mut meta = vec![
        ("problem".to_string(), problem_name.to_string()),
        ("obs.m".to_string(), row.m_or_n.to_string()),
        ("obs.seed".to_string(), row.seed.to_string()),
        ("obs.eta".to_string(), format!("{}", row.eta)),
    ];
    meta.push(("variant".to_string(), row.variant.clone()));
    meta
}

fn row_meta(row: &SuiteRow, spec: &ModelSpec) -> Vec<(String, String)> {
    let mut meta = problem_meta(&row.problem, row);
    match spec {
        ModelSpec::Pgt(cfg) => {
            meta.push(("kind".into(), "pgt".into()));
            meta.push(("model.d_model".into(), cfg.d_model.to_string()));
            meta.push(("model.n_layers".into(), cfg.n_layers.to_string()));
            meta.push(("model.n_heads".into(), cfg.n_heads.to_string()));
            meta.push(("model.d_ff".into(), cfg.d_ff.to_string()));
            meta.push(("model.decoder_layers".into(), cfg.decoder_layers.to_string()));
            meta.push(("model.decoder_width".into(), cfg.decoder_width.to_string()));
            meta.push(("model.omega0".into(), format!("{}", cfg.omega0)));
            meta.push(("model.use_gamma".into(), cfg.use_gamma.to_string()));
            meta.push(("model.use_pde_loss".into(), cfg.use_pde_loss.to_string()));
            meta.push(("model.decoder_kind".into(), cfg.decoder_kind.as_str().into()));
            meta.push(("model.causal_mask".into(), cfg.causal_mask.to_string()));
            meta.push(("model.uw_head".into(), cfg.uw_head.to_string()));
            meta.push(("model.channels".into(), cfg.channels.to_string()));
            meta.push(("model.coord_dim".into(), cfg.coord_dim.to_string()));
            if let GenFamily::Parabolic { alpha, dim } = &cfg.pde_family {
                meta.push(("gamma.family".into(), "parabolic".into()));
                meta.push(("gamma.alpha".into(), format!("{alpha}")));
                meta.push(("gamma.dim".into(), dim.to_string()));
            }
        }
        ModelSpec::Pinn { width, depth } => {
            meta.push(("kind".into(), "pinn".into()));
            meta.push(("baseline.width".into(), width.to_string()));
            meta.push(("baseline.depth".into(), depth.to_string()));
        }
        ModelSpec::Siren {
            width,
            depth,
            omega0,
        } => {
            meta.push(("kind".into(), "siren".into()));
            meta.push(("baseline.width".into(), width.to_string()));
            meta.push(("baseline.depth".into(), depth.to_string()));
            meta.push(("baseline.omega0".into(), format!("{omega0}")));
        }
    }
    match &row.problem[..] {
        "heat1d" => meta.push(("problem.params".into(), "from-config".into())),
        _ => {}
    }
    meta
}

// ── check ────────────────────────────────────────────────────────────────

pub fn cmd_check(level: &str, cfg: &ExperimentConfig) -> CmdResult {
    let outcomes = match level {
        "fast" => check::fast_checks(),
        "full" => {
            let settings = cfg.settings().map_err(|e| CmdError::Config(e.0))?;
            check::full_checks(&settings).map_err(internal)?
        }
        other => {
            return Err(CmdError::Config(format!(
                "unknown check level '{other}' (expected fast or full)"
            )))
        }
    };
    let mut all_ok = true;
    for outcome in &outcomes {
        println!("{}", outcome.line());
        all_ok &= outcome.passed;
    }
    Ok(if all_ok { EXIT_OK } else { 1 })
}

// ── export ───────────────────────────────────────────────────────────────

struct LoadedCheckpoint {
    problem: Problem,
    field_kind: FieldKind,
}

enum FieldKind {
    Oracle,
    Network {
        spec: ModelSpec,
        params: AnyParams,
        obs: ObservationSet,
    },
}

fn meta_req<'a>(ck: &'a Checkpoint, key: &str, missing: &mut Vec<String>) -> Option<&'a str> {
    let v = ck.meta_value(key);
    if v.is_none() {
        missing.push(key.to_string());
    }
    v
}

fn load_checkpoint_model(path: &Path, cfg: &ExperimentConfig) -> Result<LoadedCheckpoint, CmdError> {
    let ck = checkpoint::load(path).map_err(|e| CmdError::Config(e.to_string()))?;
    let mut missing: Vec<String> = Vec::new();

    let problem = match meta_req(&ck, "problem", &mut missing) {
        Some("heat1d") => {
            let nu: Real = cfg
                .get("heat.nu")
                .parse()
                .map_err(|_| CmdError::Config("bad heat.nu".into()))?;
            let mode: u32 = cfg
                .get("heat.mode")
                .parse()
                .map_err(|_| CmdError::Config("bad heat.mode".into()))?;
            Problem::Heat1d { nu, mode }
        }
        Some("taylor_green") => {
            let nu: Real = cfg
                .get("ns.nu")
                .parse()
                .map_err(|_| CmdError::Config("bad ns.nu".into()))?;
            Problem::TaylorGreen { nu }
        }
        Some(other) => {
            return Err(CmdError::Config(format!(
                "checkpoint problem '{other}' is not supported"
            )))
        }
        None => Problem::Heat1d { nu: 0.1, mode: 1 },
    };

    let kind = meta_req(&ck, "kind", &mut missing).unwrap_or("").to_string();
    if !missing.is_empty() {
        return Err(CmdError::Config(format!(
            "checkpoint/config mismatch; missing fields: {}",
            missing.join(", ")
        )));
    }

    if kind == "oracle" {
        return Ok(LoadedCheckpoint {
            problem,
            field_kind: FieldKind::Oracle,
        });
    }

    // Rebuild observations (the model's context) from provenance metadata.
    let mut obs_missing = Vec::new();
    let m: usize = meta_req(&ck, "obs.m", &mut obs_missing)
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let obs_seed: u64 = meta_req(&ck, "obs.seed", &mut obs_missing)
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let eta: Real = ck
        .meta_value("obs.eta")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    if !obs_missing.is_empty() || m == 0 {
        return Err(CmdError::Config(format!(
            "checkpoint/config mismatch; missing or invalid fields: {}",
            if obs_missing.is_empty() {
                "obs.m".to_string()
            } else {
                obs_missing.join(", ")
            }
        )));
    }
    let mut obs = pgt_core::bench::sample_sparse_observations(&problem, m, obs_seed)
        .map_err(|e| CmdError::Config(e.to_string()))?;
    inject_noise(&mut obs, eta, obs_seed);

    let (spec, mut params) = rebuild_spec(&ck, &problem)?;
    {
        let mut target = params.named_mut();
        checkpoint::fill_named(&mut target, &ck.entries)
            .map_err(|e| CmdError::Config(e.to_string()))?;
    }
    Ok(LoadedCheckpoint {
        problem,
        field_kind: FieldKind::Network { spec, params, obs },
    })
}

fn rebuild_spec(ck: &Checkpoint, problem: &Problem) -> Result<(ModelSpec, AnyParams), CmdError> {
    let mut missing = Vec::new();
    let get_usize = |key: &str, missing: &mut Vec<String>| -> usize {
        match ck.meta_value(key).and_then(|v| v.parse().ok()) {
            Some(v) => v,
            None => {
                missing.push(key.to_string());
                0
            }
        }
    };
    let get_real = |key: &str, missing: &mut Vec<String>| -> Real {
        match ck.meta_value(key).and_then(|v| v.parse().ok()) {
            Some(v) => v,
            None => {
                missing.push(key.to_string());
                0.0
            }
        }
    };
    let get_bool = |key: &str, missing: &mut Vec<String>| -> bool {
        match ck.meta_value(key).and_then(|v| v.parse().ok()) {
            Some(v) => v,
            None => {
                missing.push(key.to_string());
                false
            }
        }
    };
    match ck.meta_value("kind") {
        Some("pgt") => {
            let decoder_kind = ck
                .meta_value("model.decoder_kind")
                .map(DecoderKind::parse)
                .transpose()
                .map_err(|e| CmdError::Config(e.to_string()))?
                .unwrap_or_else(|| {
                    missing.push("model.decoder_kind".into());
                    DecoderKind::FilmSiren
                });
            let cfg = ModelConfig {
                d_model: get_usize("model.d_model", &mut missing),
                n_layers: get_usize("model.n_layers", &mut missing),
                n_heads: get_usize("model.n_heads", &mut missing),
                d_ff: get_usize("model.d_ff", &mut missing),
                decoder_layers: get_usize("model.decoder_layers", &mut missing),
                decoder_width: get_usize("model.decoder_width", &mut missing),
                omega0: get_real("model.omega0", &mut missing),
                use_gamma: get_bool("model.use_gamma", &mut missing),
                use_pde_loss: get_bool("model.use_pde_loss", &mut missing),
                decoder_kind,
                causal_mask: get_bool("model.causal_mask", &mut missing),
                pde_family: GenFamily::Parabolic {
                    alpha: get_real("gamma.alpha", &mut missing),
                    dim: get_usize("gamma.dim", &mut missing),
                },
                channels: get_usize("model.channels", &mut missing),
                coord_dim: get_usize("model.coord_dim", &mut missing),
                uw_head: get_bool("model.uw_head", &mut missing),
            };
            if !missing.is_empty() {
                return Err(CmdError::Config(format!(
                    "checkpoint/config mismatch; missing fields: {}",
                    missing.join(", ")
                )));
            }
            let params = PgtParams::init(&cfg, &mut stream(0, streams::INIT));
            Ok((ModelSpec::Pgt(cfg.clone()), AnyParams::Pgt(params)))
        }
        Some("pinn") => {
            let width = get_usize("baseline.width", &mut missing);
            let depth = get_usize("baseline.depth", &mut missing);
            if !missing.is_empty() {
                return Err(CmdError::Config(format!(
                    "checkpoint/config mismatch; missing fields: {}",
                    missing.join(", ")
                )));
            }
            let spec = ModelSpec::Pinn { width, depth };
            let params = spec
                .init(problem, 0)
                .map_err(|e| CmdError::Config(e.to_string()))?;
            Ok((spec, params))
        }
        Some("siren") => {
            let width = get_usize("baseline.width", &mut missing);
            let depth = get_usize("baseline.depth", &mut missing);
            let omega0 = get_real("baseline.omega0", &mut missing);
            if !missing.is_empty() {
                return Err(CmdError::Config(format!(
                    "checkpoint/config mismatch; missing fields: {}",
                    missing.join(", ")
                )));
            }
            let spec = ModelSpec::Siren {
                width,
                depth,
                omega0,
            };
            let params = spec
                .init(problem, 0)
                .map_err(|e| CmdError::Config(e.to_string()))?;
            Ok((spec, params))
        }
        other => Err(CmdError::Config(format!(
            "checkpoint kind {other:?} is not exportable"
        ))),
    }
}

fn export_grid(problem: &Problem, cfg: &ExperimentConfig) -> Result<Vec<Coord>, CmdError> {
    let nx: usize = cfg
        .get("export.nx")
        .parse()
        .map_err(|_| CmdError::Config("bad export.nx".into()))?;
    match problem {
        Problem::Heat1d { .. } => {
            let nt: usize = cfg
                .get("export.nt")
                .parse()
                .map_err(|_| CmdError::Config("bad export.nt".into()))?;
            if nx < 2 || nt < 2 {
                return Err(CmdError::Config("export grid needs at least 2x2".into()));
            }
            let mut out = Vec::with_capacity(nx * nt);
            for i in 0..nx {
                for j in 0..nt {
                    out.push(Coord::xt(
                        i as Real / (nx - 1) as Real,
                        j as Real / (nt - 1) as Real,
                    ));
                }
            }
            Ok(out)
        }
        Problem::TaylorGreen { .. } => {
            let ny: usize = cfg
                .get("export.ny")
                .parse()
                .map_err(|_| CmdError::Config("bad export.ny".into()))?;
            let t: Real = cfg
                .get("export.t")
                .parse()
                .map_err(|_| CmdError::Config("bad export.t".into()))?;
            if nx < 2 || ny < 2 {
                return Err(CmdError::Config("export grid needs at least 2x2".into()));
            }
            let tau = std::f64::consts::TAU;
            let mut out = Vec::with_capacity(nx * ny);
            for i in 0..nx {
                for j in 0..ny {
                    out.push(Coord::xyt(
                        tau * i as Real / (nx - 1) as Real,
                        tau * j as Real / (ny - 1) as Real,
                        t,
                    ));
                }
            }
            Ok(out)
        }
    }
}

pub fn cmd_export(checkpoint_arg: Option<&str>, cfg: &ExperimentConfig) -> CmdResult {
    let path_text = match checkpoint_arg {
        Some(p) => p.to_string(),
        None => cfg.get("export.checkpoint").to_string(),
    };
    if path_text.is_empty() {
        return Err(CmdError::Config(
            "export needs a checkpoint (positional argument or export.checkpoint)".into(),
        ));
    }
    let loaded = load_checkpoint_model(Path::new(&path_text), cfg)?;
    let grid = export_grid(&loaded.problem, cfg)?;

    let pred = match &loaded.field_kind {
        FieldKind::Oracle => EvalField::Oracle(&loaded.problem).eval(&grid).map_err(internal)?,
        FieldKind::Network { spec, params, obs } => {
            let model = TrainedModel { spec, params, obs };
            model.predict(&grid).map_err(internal)?
        }
    };

    let ch = loaded.problem.channels();
    let mut csv = String::new();
    if ch == 1 {
        csv.push_str("x,t,u,u_true,abs_error\n");
    } else {
        csv.push_str("x,y,t,u,v,p,u_true,v_true,p_true,abs_error\n");
    }
    for (i, c) in grid.iter().enumerate() {
        let truth = loaded.problem.analytic(c);
        let mut err = 0.0 as Real;
        for k in 0..ch {
            err = err.max((pred.at(i, k) - truth[k]).abs());
        }
        if ch == 1 {
            csv.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                c.space[0],
                c.t,
                pred.at(i, 0),
                truth[0],
                err
            ));
        } else {
            csv.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                c.space[0],
                c.space[1],
                c.t,
                pred.at(i, 0),
                pred.at(i, 1),
                pred.at(i, 2),
                truth[0],
                truth[1],
                truth[2],
                err
            ));
        }
    }
    let out_dir = PathBuf::from(cfg.out_dir());
    fs::create_dir_all(&out_dir).map_err(|e| internal(e))?;
    let out_path = out_dir.join("export.csv");
    fs::write(&out_path, csv).map_err(|e| internal(e))?;
    println!("export: {}", out_path.display());
    Ok(EXIT_OK)
}
