use pgt_core::bench::{evaluate_field, sample_sparse_observations, EvalField, Problem};
use pgt_core::model::{DecoderKind, ModelConfig};
use pgt_core::train::{train, ModelSpec, SampleBudget, TrainConfig, TrainedModel};
use std::time::Instant;

fn pgt_cfg(problem: &Problem, d_model: usize, heads: usize, dec_w: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_layers: 2,
        n_heads: heads,
        d_ff: 2 * d_model,
        decoder_layers: 3,
        decoder_width: dec_w,
        omega0: 30.0,
        use_gamma: true,
        use_pde_loss: true,
        decoder_kind: DecoderKind::FilmSiren,
        causal_mask: true,
        pde_family: problem.pde_family(),
        channels: problem.channels(),
        coord_dim: problem.coord_dim(),
        uw_head: false,
    }
}

fn run(problem: &Problem, spec: &ModelSpec, m: usize, steps: usize, lr: f64, tag: &str) {
    let obs = sample_sparse_observations(problem, m, 0).unwrap();
    let budget = SampleBudget { n_d: m, n_r: 128, n_b: 64, n_0: 64 };
    let tcfg = TrainConfig { steps, lr, eval_every: steps / 6, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train(problem, spec, &tcfg, &budget, &obs, 0).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let evals: Vec<String> = out
        .log
        .iter()
        .filter_map(|l| l.rel_l2_eval.map(|r| format!("{}:{:.3e}", l.step, r)))
        .collect();
    let model = TrainedModel { spec: &spec, params: &out.params, obs: &obs };
    let field = EvalField::Network(Box::new(|c| model.predict(c)));
    let report = evaluate_field(problem, &field, &obs).unwrap();
    println!(
        "PROBE {tag}: {:.0}s | rel path [{}] | final rel {:.3e} resid {:.3e} data {:.3e} sigmas {:?}",
        dt,
        evals.join(" "),
        report.rel_l2_total,
        report.pde_residual,
        report.data_loss,
        out.log.last().map(|l| l.sigmas).unwrap_or_default()
    );
}

#[test]
#[ignore]
fn probe_heat_models() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    run(&problem, &ModelSpec::Pgt(pgt_cfg(&problem, 32, 4, 64)), 100, 1500, 1e-3, "heat-pgt-d32");
    run(&problem, &ModelSpec::Pinn { width: 64, depth: 4 }, 100, 1500, 1e-3, "heat-pinn");
    run(&problem, &ModelSpec::Siren { width: 64, depth: 3, omega0: 30.0 }, 100, 1500, 1e-3, "heat-siren");
}

#[test]
#[ignore]
fn probe_heat_mode2() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 2 };
    run(&problem, &ModelSpec::Pgt(pgt_cfg(&problem, 32, 4, 64)), 100, 800, 1e-3, "heat2-pgt-d32");
    run(&problem, &ModelSpec::Pgt(pgt_cfg(&problem, 48, 4, 96)), 100, 800, 1e-3, "heat2-pgt-d48");
    run(&problem, &ModelSpec::Pinn { width: 64, depth: 4 }, 100, 1500, 1e-3, "heat2-pinn");
    run(&problem, &ModelSpec::Siren { width: 64, depth: 3, omega0: 30.0 }, 100, 1500, 1e-3, "heat2-siren");
}

#[test]
#[ignore]
fn probe_ns500() {
    let problem = Problem::TaylorGreen { nu: 0.01 };
    run(&problem, &ModelSpec::Pgt(pgt_cfg(&problem, 32, 2, 64)), 500, 400, 1e-3, "ns500-pgt");
}

#[test]
#[ignore]
fn probe_ns1500() {
    let problem = Problem::TaylorGreen { nu: 0.01 };
    run(&problem, &ModelSpec::Pgt(pgt_cfg(&problem, 32, 2, 64)), 1500, 300, 1e-3, "ns1500-pgt");
}
