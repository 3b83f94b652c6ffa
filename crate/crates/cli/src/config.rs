//! Flat key-value experiment configuration with dotted section keys.
//!
//! Every key has a default; an empty config runs the heat suite at M=100
//! with one seed. Unknown keys are rejected (fail-closed), and the resolved
//! configuration is echoed into the output directory for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pgt_core::bench::suites::{AblationRow, ExperimentSettings, ModelDims};
use pgt_core::bench::Problem;
use pgt_core::Real;

/// key, default, help. The table is the single source of truth for what
/// exists; parsing anything else is an error.
const KEYS: &[(&str, &str, &str)] = &[
    ("suite", "heat", "suite selector: heat|ns|ablation|noise"),
    ("out", "pgt_out", "output directory"),
    ("seed", "0", "base RNG seed"),
    ("seeds", "1", "number of seeds (seed, seed+1, ...)"),
    ("model.d_model", "32", "embedding width"),
    ("model.n_layers", "2", "encoder depth"),
    ("model.n_heads", "4", "attention heads"),
    ("model.d_ff", "64", "encoder feed-forward width"),
    ("model.decoder_layers", "3", "implicit decoder depth"),
    ("model.decoder_width", "64", "implicit decoder width"),
    ("model.omega0", "30", "first-layer sinusoidal frequency scale"),
    ("model.use_gamma", "true", "enable the physics attention bias"),
    ("model.use_pde_loss", "true", "enable the PDE residual loss"),
    ("model.causal_mask", "true", "causal masking in the attention bias"),
    ("gamma.alpha", "", "bias diffusivity override (empty: problem's own)"),
    ("heat.nu", "0.1", "heat diffusivity"),
    ("heat.mode", "2", "heat initial-condition mode number"),
    ("heat.steps", "800", "training steps per heat cell"),
    ("heat.m_values", "", "comma list of M values (empty: budget.m)"),
    ("heat.models", "pgt,pinn,siren", "models in the heat suite"),
    ("ns.nu", "0.01", "flow viscosity"),
    ("ns.steps", "700", "training steps per flow cell"),
    ("ns.n_train", "1500", "flow observation count"),
    (
        "ns.variants",
        "full,no_gamma,no_physics",
        "flow-suite model variants",
    ),
    ("ablation.steps", "300", "training steps per ablation cell"),
    ("ablation.n_train", "500", "ablation observation count"),
    (
        "ablation.rows",
        "full,no_pde,no_gamma,no_physics,siren_no_film,film_mlp,plain_mlp",
        "ablation matrix rows",
    ),
    ("noise.steps", "300", "training steps per noise cell"),
    ("noise.n_train", "500", "noise-suite observation count"),
    ("noise.etas", "0,0.01,0.02,0.05,0.1,0.2", "noise levels"),
    ("noise.variants", "pgt,pgt_uw", "noise-suite variants"),
    ("noise.seeds", "", "noise-suite seeds (empty: base seed only)"),
    ("budget.m", "100", "observation count M"),
    ("budget.n_r", "256", "collocation points per step"),
    ("budget.n_b", "128", "boundary points per step"),
    ("budget.n_0", "128", "initial points per step"),
    ("baseline.width", "64", "baseline hidden width"),
    ("baseline.depth", "4", "baseline hidden depth"),
    ("baseline.omega0", "30", "baseline sinusoidal frequency scale"),
    ("train.lr", "0.001", "learning rate"),
    ("train.beta1", "0.9", "first-moment decay"),
    ("train.beta2", "0.999", "second-moment decay"),
    ("train.epsilon", "1e-8", "optimizer epsilon"),
    ("train.eval_every", "0", "grid-eval cadence in steps (0: final only)"),
    (
        "train.sigma_log_reg",
        "true",
        "include the +log sigma regularizer",
    ),
    ("export.checkpoint", "", "checkpoint path for export"),
    ("export.nx", "101", "export grid: x resolution"),
    ("export.nt", "101", "export grid: t resolution (heat)"),
    ("export.ny", "64", "export grid: y resolution (flow)"),
    ("export.t", "0.5", "export snapshot time (flow)"),
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = Result<T, ConfigError>;

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS
                .iter()
                .map(|(k, d, _)| (k.to_string(), d.to_string()))
                .collect(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file over the defaults. Lines are `key = value`;
    /// blank lines and `#` comments are ignored.
    pub fn from_file(path: &Path) -> CfgResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                ConfigError(format!("{}:{}: {}", path.display(), lineno + 1, e.0))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CfgResult<()> {
        if !known(key) {
            return Err(ConfigError(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' missing from defaults"))
    }

    /// Sorted `key = value` dump; reparsing it resolves to the same config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn usize_at(&self, key: &str) -> CfgResult<usize> {
        self.get(key)
            .parse()
            .map_err(|_| ConfigError(format!("key '{key}': expected unsigned integer, got '{}'", self.get(key))))
    }

    fn u64_at(&self, key: &str) -> CfgResult<u64> {
        self.get(key)
            .parse()
            .map_err(|_| ConfigError(format!("key '{key}': expected integer, got '{}'", self.get(key))))
    }

    fn real_at(&self, key: &str) -> CfgResult<Real> {
        self.get(key)
            .parse()
            .map_err(|_| ConfigError(format!("key '{key}': expected number, got '{}'", self.get(key))))
    }

    fn bool_at(&self, key: &str) -> CfgResult<bool> {
        match self.get(key) {
            "true" | "1" | "on" => Ok(true),
            "false" | "0" | "off" => Ok(false),
            other => Err(ConfigError(format!(
                "key '{key}': expected true/false, got '{other}'"
            ))),
        }
    }

    fn list_at(&self, key: &str) -> Vec<String> {
        self.get(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn out_dir(&self) -> &str {
        self.get("out")
    }

    pub fn seeds(&self) -> CfgResult<Vec<u64>> {
        let base = self.u64_at("seed")?;
        let count = self.usize_at("seeds")?;
        if count == 0 {
            return Err(ConfigError("key 'seeds': must be at least 1".into()));
        }
        Ok((0..count as u64).map(|i| base + i).collect())
    }

    /// Resolve into validated experiment settings.
    pub fn settings(&self) -> CfgResult<ExperimentSettings> {
        let heat_nu = self.real_at("heat.nu")?;
        let ns_nu = self.real_at("ns.nu")?;
        if heat_nu <= 0.0 || ns_nu <= 0.0 {
            return Err(ConfigError(format!(
                "diffusivities must be positive (heat.nu={heat_nu}, ns.nu={ns_nu})"
            )));
        }
        let mode = self.usize_at("heat.mode")?;
        if mode == 0 {
            return Err(ConfigError("key 'heat.mode': must be >= 1".into()));
        }
        let d_model = self.usize_at("model.d_model")?;
        let n_heads = self.usize_at("model.n_heads")?;
        if d_model == 0 || n_heads == 0 || d_model % n_heads != 0 {
            return Err(ConfigError(format!(
                "model.d_model ({d_model}) must be a positive multiple of model.n_heads ({n_heads})"
            )));
        }
        let gamma_alpha = match self.get("gamma.alpha") {
            "" => None,
            text => {
                let v: Real = text.parse().map_err(|_| {
                    ConfigError(format!("key 'gamma.alpha': expected number, got '{text}'"))
                })?;
                if v <= 0.0 {
                    return Err(ConfigError(format!(
                        "key 'gamma.alpha': diffusivity must be positive, got {v}"
                    )));
                }
                Some(v)
            }
        };
        let m = self.usize_at("budget.m")?;
        if m == 0 {
            return Err(ConfigError("key 'budget.m': must be >= 1".into()));
        }
        let heat_m_values = if self.get("heat.m_values").is_empty() {
            vec![m]
        } else {
            self.list_at("heat.m_values")
                .iter()
                .map(|s| {
                    s.parse::<usize>().map_err(|_| {
                        ConfigError(format!("key 'heat.m_values': bad entry '{s}'"))
                    })
                })
                .collect::<CfgResult<Vec<_>>>()?
        };
        let etas = self
            .list_at("noise.etas")
            .iter()
            .map(|s| {
                let v: Real = s
                    .parse()
                    .map_err(|_| ConfigError(format!("key 'noise.etas': bad entry '{s}'")))?;
                if v < 0.0 {
                    return Err(ConfigError(format!(
                        "key 'noise.etas': noise level must be non-negative, got {v}"
                    )));
                }
                Ok(v)
            })
            .collect::<CfgResult<Vec<_>>>()?;
        let parse_rows = |key: &str| -> CfgResult<Vec<AblationRow>> {
            self.list_at(key)
                .iter()
                .map(|s| AblationRow::parse(s).map_err(|e| ConfigError(format!("key '{key}': {e}"))))
                .collect()
        };
        let seeds = self.seeds()?;
        let noise_seeds = if self.get("noise.seeds").is_empty() {
            vec![seeds[0]]
        } else {
            self.list_at("noise.seeds")
                .iter()
                .map(|s| {
                    s.parse::<u64>()
                        .map_err(|_| ConfigError(format!("key 'noise.seeds': bad entry '{s}'")))
                })
                .collect::<CfgResult<Vec<_>>>()?
        };

        let settings = ExperimentSettings {
            heat: Problem::Heat1d {
                nu: heat_nu,
                mode: mode as u32,
            },
            ns: Problem::TaylorGreen { nu: ns_nu },
            dims: ModelDims {
                d_model,
                n_layers: self.usize_at("model.n_layers")?,
                n_heads,
                d_ff: self.usize_at("model.d_ff")?,
                decoder_layers: self.usize_at("model.decoder_layers")?,
                decoder_width: self.usize_at("model.decoder_width")?,
                omega0: self.real_at("model.omega0")?,
            },
            gamma_alpha,
            baseline_width: self.usize_at("baseline.width")?,
            baseline_depth: self.usize_at("baseline.depth")?,
            baseline_omega0: self.real_at("baseline.omega0")?,
            heat_steps: self.usize_at("heat.steps")?,
            ns_steps: self.usize_at("ns.steps")?,
            ablation_steps: self.usize_at("ablation.steps")?,
            noise_steps: self.usize_at("noise.steps")?,
            lr: self.real_at("train.lr")?,
            sigma_log_reg: self.bool_at("train.sigma_log_reg")?,
            eval_every: self.usize_at("train.eval_every")?,
            n_r: self.usize_at("budget.n_r")?,
            n_b: self.usize_at("budget.n_b")?,
            n_0: self.usize_at("budget.n_0")?,
            heat_m_values,
            heat_models: self.list_at("heat.models"),
            ns_n_train: self.usize_at("ns.n_train")?,
            ns_variants: parse_rows("ns.variants")?,
            ablation_n_train: self.usize_at("ablation.n_train")?,
            ablation_rows: parse_rows("ablation.rows")?,
            noise_n_train: self.usize_at("noise.n_train")?,
            etas,
            noise_variants: self.list_at("noise.variants"),
            seeds,
            noise_seeds,
        };
        if settings.dims.decoder_layers == 0 || settings.dims.decoder_width == 0 {
            return Err(ConfigError("decoder dimensions must be positive".into()));
        }
        if settings.lr <= 0.0 {
            return Err(ConfigError(format!(
                "key 'train.lr': must be positive, got {}",
                settings.lr
            )));
        }
        Ok(settings)
    }
}
