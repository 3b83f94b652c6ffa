use pgt_core::bench::suites::ExperimentSettings;
use pgt_core::bench::{evaluate_field, sample_sparse_observations, EvalField, Problem};
use pgt_core::train::{train, ModelSpec, SampleBudget, TrainConfig, TrainedModel};
use std::time::Instant;

fn run_one(
    problem: &Problem,
    spec: &ModelSpec,
    m: usize,
    steps: usize,
    n_r: usize,
    lr: f64,
    seed: u64,
    tag: &str,
) {
    let obs = sample_sparse_observations(problem, m, seed).unwrap();
    let budget = SampleBudget { n_d: m, n_r, n_b: 128, n_0: 128 };
    let tcfg = TrainConfig {
        steps,
        lr,
        eval_every: (steps / 8).max(1),
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = train(problem, spec, &tcfg, &budget, &obs, seed).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let evals: Vec<String> = out
        .log
        .iter()
        .filter_map(|l| l.rel_l2_eval.map(|r| format!("{}:{:.2e}", l.step, r)))
        .collect();
    let model = TrainedModel { spec, params: &out.params, obs: &obs };
    let field = EvalField::Network(Box::new(|c| model.predict(c)));
    let report = evaluate_field(problem, &field, &obs).unwrap();
    println!(
        "PROBE {tag} s{seed}: {:.0}s | rel [{}] | final rel {:.3e} resid {:.3e}",
        dt,
        evals.join(" "),
        report.rel_l2_total,
        report.pde_residual,
    );
}

#[test]
#[ignore]
fn probe_heat2_lr() {
    let s = ExperimentSettings::default();
    let problem = Problem::Heat1d { nu: 0.1, mode: 2 };
    for seed in [0u64, 1] {
        let cfg = s.pgt_config(&problem, false);
        run_one(&problem, &ModelSpec::Pgt(cfg), 100, 1600, 256, 3e-4, seed, "h2-pgt-lr3e4");
    }
    for seed in [0u64, 1] {
        let cfg = s.pgt_config(&problem, false);
        run_one(&problem, &ModelSpec::Pgt(cfg), 100, 1200, 256, 5e-4, seed, "h2-pgt-lr5e4");
    }
    for seed in [0u64, 1] {
        run_one(&problem, &ModelSpec::Pinn { width: 64, depth: 4 }, 100, 1600, 256, 3e-4, seed, "h2-pinn-lr3e4");
        run_one(
            &problem,
            &ModelSpec::Siren { width: 64, depth: 3, omega0: 30.0 },
            100,
            1600,
            256,
            3e-4,
            seed,
            "h2-siren-lr3e4",
        );
    }
}
