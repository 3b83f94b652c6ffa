use super::*;
use crate::model::DecoderKind;
use crate::physics::analytic::heat_solution_1d;
use approx::assert_relative_eq;

fn tiny_pgt_config(problem: &Problem) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        decoder_layers: 2,
        decoder_width: 32,
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

#[test]
fn data_loss_reference_values() {
    let mut tape = Tape::new();
    let obs = GenTensor::new(vec![2, 1], vec![0.0, 0.0]);
    let pred = tape.constant(GenTensor::new(vec![2, 1], vec![1.0, 2.0]));
    let l = data_loss(&mut tape, pred, &obs).unwrap();
    assert_relative_eq!(tape.scalar_value(l), 2.5, max_relative = 1e-14);

    let mut tape = Tape::new();
    let obs = GenTensor::new(vec![1, 1], vec![2.0]);
    let pred = tape.constant(GenTensor::new(vec![1, 1], vec![0.0]));
    let l = data_loss(&mut tape, pred, &obs).unwrap();
    assert_eq!(tape.scalar_value(l), 4.0);

    let mut tape = Tape::new();
    let obs = GenTensor::new(vec![3, 1], vec![0.3, -0.7, 1.1]);
    let pred = tape.constant(obs.clone());
    let l = data_loss(&mut tape, pred, &obs).unwrap();
    assert_eq!(tape.scalar_value(l), 0.0);
}

#[test]
fn data_loss_rejects_empty_set() {
    let mut tape = Tape::new();
    let obs = GenTensor::zeros(vec![0, 1]);
    let pred = tape.constant(GenTensor::zeros(vec![0, 1]));
    assert!(data_loss(&mut tape, pred, &obs).is_err());
}

#[test]
fn heteroscedastic_with_unit_variance_is_mse_bitwise() {
    let pred_t = GenTensor::new(vec![3, 2], vec![0.31, -0.4, 1.7, 0.02, -0.9, 0.55]);
    let obs = GenTensor::new(vec![3, 2], vec![0.3, -0.41, 1.65, 0.0, -1.0, 0.5]);

    let mut tape = Tape::new();
    let pred = tape.constant(pred_t.clone());
    let mse = data_loss(&mut tape, pred, &obs).unwrap();
    let mse_val = tape.scalar_value(mse);

    let mut tape = Tape::new();
    let pred = tape.constant(pred_t);
    let log_var = tape.constant(GenTensor::zeros(vec![3, 1]));
    let uw = heteroscedastic_data_loss(&mut tape, pred, &obs, log_var).unwrap();
    let uw_val = tape.scalar_value(uw);

    assert_eq!(mse_val.to_bits(), uw_val.to_bits());
}

#[test]
fn heteroscedastic_reference_points() {
    // Single point with err² = σ²: loss = log σ² + 1, and σ² = err² is the
    // minimizer over σ².
    let obs = GenTensor::new(vec![1, 1], vec![0.0]);
    let err = 0.7;
    let eval = |log_var: Real| {
        let mut tape = Tape::new();
        let pred = tape.constant(GenTensor::new(vec![1, 1], vec![err]));
        let lv = tape.constant(GenTensor::new(vec![1, 1], vec![log_var]));
        let l = heteroscedastic_data_loss(&mut tape, pred, &obs, lv).unwrap();
        tape.scalar_value(l)
    };
    let at_min = eval((err * err as Real).ln());
    assert_relative_eq!(at_min, (err * err as Real).ln() + 1.0, max_relative = 1e-12);
    assert!(eval((err * err as Real).ln() + 0.3) > at_min);
    assert!(eval((err * err as Real).ln() - 0.3) > at_min);

    // err = 0 with σ² = e: loss = log e = 1.
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::new(vec![1, 1], vec![0.0]));
    let lv = tape.constant(GenTensor::new(vec![1, 1], vec![1.0]));
    let l = heteroscedastic_data_loss(&mut tape, pred, &obs, lv).unwrap();
    assert_relative_eq!(tape.scalar_value(l), 1.0, max_relative = 1e-14);
}

#[test]
fn total_loss_with_unit_sigmas_is_half_sum() {
    let losses = [0.8, 0.2, 0.1, 0.4];
    let mut tape = Tape::new();
    let terms: Vec<(Var, Var)> = losses
        .iter()
        .map(|&l| {
            let lv = tape.constant(GenTensor::scalar(l));
            let s = tape.param(GenTensor::scalar(0.0));
            (lv, s)
        })
        .collect();
    let total = total_loss(&mut tape, &terms, true).unwrap();
    // log σ = 0 at σ = 1, so total = ½ΣL.
    assert_relative_eq!(
        tape.scalar_value(total),
        0.5 * losses.iter().sum::<Real>(),
        max_relative = 1e-14
    );
}

#[test]
fn sigma_gradient_matches_closed_form_and_fd() {
    // total(s) = L·e^{-2s}/2 + s, d/ds = -L·e^{-2s} + 1, stationary at
    // σ = √L. In σ-space that is ∂total/∂σ = -L/σ³ + 1/σ.
    let l_fixed = 0.37;
    for &s0 in &[-0.4, 0.0, 0.55] {
        let mut tape = Tape::new();
        let l = tape.constant(GenTensor::scalar(l_fixed));
        let s = tape.param(GenTensor::scalar(s0));
        let total = total_loss(&mut tape, &[(l, s)], true).unwrap();
        tape.backward(total).unwrap();
        let got = tape.grad(s).unwrap().scalar_value();
        let want = -l_fixed * (-2.0 * s0 as Real).exp() + 1.0;
        assert_relative_eq!(got, want, max_relative = 1e-12);

        // Chain rule back to σ-space: ∂/∂σ = (∂/∂s)/σ.
        let sigma = (s0 as Real).exp();
        let sigma_grad = got / sigma;
        assert_relative_eq!(
            sigma_grad,
            -l_fixed / sigma.powi(3) + 1.0 / sigma,
            max_relative = 1e-12
        );

        // Finite differences on s.
        let f = |s: Real| l_fixed * (-2.0 * s).exp() / 2.0 + s;
        let h = 1e-6;
        let fd = (f(s0 + h) - f(s0 - h)) / (2.0 * h);
        assert_relative_eq!(got, fd, max_relative = 1e-6);
    }
    // Stationarity at σ = √L.
    let s_star = (l_fixed as Real).sqrt().ln();
    let mut tape = Tape::new();
    let l = tape.constant(GenTensor::scalar(l_fixed));
    let s = tape.param(GenTensor::scalar(s_star));
    let total = total_loss(&mut tape, &[(l, s)], true).unwrap();
    tape.backward(total).unwrap();
    assert!(tape.grad(s).unwrap().scalar_value().abs() < 1e-12);
}

#[test]
fn doubling_sigma_quarters_the_weight() {
    let l_fixed = 1.0;
    let weight_at = |sigma: Real| {
        let mut tape = Tape::new();
        let l = tape.constant(GenTensor::scalar(l_fixed));
        let s = tape.param(GenTensor::scalar(sigma.ln()));
        let total = total_loss(&mut tape, &[(l, s)], false).unwrap();
        tape.scalar_value(total)
    };
    assert_relative_eq!(weight_at(2.0), weight_at(1.0) / 4.0, max_relative = 1e-12);
}

#[test]
fn pde_loss_on_frozen_analytic_solution_is_tiny() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let mut rng = stream(4, "train-pde-oracle");
    let colloc: Vec<Coord> = (0..64).map(|_| problem.interior_sample(&mut rng)).collect();
    let batch = PdeBatch::build(&problem, &colloc, 1e-3).unwrap();
    let values: Vec<Real> = batch
        .points
        .iter()
        .map(|c| heat_solution_1d(c.space[0], c.t, 0.1, 1))
        .collect();
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::new(vec![values.len(), 1], values));
    let resid = batch.residuals(&mut tape, pred).unwrap();
    let l = pde_loss(&mut tape, resid);
    assert!(tape.scalar_value(l) < 1e-11, "{}", tape.scalar_value(l));
}

#[test]
fn pde_loss_of_linear_time_field_is_one() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let mut rng = stream(5, "train-pde-linear");
    let colloc: Vec<Coord> = (0..32).map(|_| problem.interior_sample(&mut rng)).collect();
    let batch = PdeBatch::build(&problem, &colloc, 1e-3).unwrap();
    let values: Vec<Real> = batch.points.iter().map(|c| c.t).collect();
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::new(vec![values.len(), 1], values));
    let resid = batch.residuals(&mut tape, pred).unwrap();
    let l = pde_loss(&mut tape, resid);
    assert_relative_eq!(tape.scalar_value(l), 1.0, max_relative = 1e-6);
}

#[test]
fn pde_loss_of_zero_field_is_zero() {
    let problem = Problem::TaylorGreen { nu: 0.01 };
    let mut rng = stream(6, "train-pde-zero");
    let colloc: Vec<Coord> = (0..8).map(|_| problem.interior_sample(&mut rng)).collect();
    let batch = PdeBatch::build(&problem, &colloc, 1e-3).unwrap();
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::zeros(vec![batch.points.len(), 3]));
    let resid = batch.residuals(&mut tape, pred).unwrap();
    let l = pde_loss(&mut tape, resid);
    assert_eq!(tape.scalar_value(l), 0.0);
}

#[test]
fn ns_pde_loss_on_taylor_green_is_tiny() {
    let problem = Problem::TaylorGreen { nu: 0.01 };
    let mut rng = stream(7, "train-pde-tg");
    let colloc: Vec<Coord> = (0..32).map(|_| problem.interior_sample(&mut rng)).collect();
    let batch = PdeBatch::build(&problem, &colloc, 1e-3).unwrap();
    let mut data = Vec::with_capacity(batch.points.len() * 3);
    for c in &batch.points {
        data.extend(problem.analytic(c));
    }
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::new(vec![batch.points.len(), 3], data));
    let resid = batch.residuals(&mut tape, pred).unwrap();
    let l = pde_loss(&mut tape, resid);
    assert!(tape.scalar_value(l) < 1e-11, "{}", tape.scalar_value(l));
}

#[test]
fn bc_loss_of_zero_model_on_zero_boundary_is_zero() {
    // Heat boundaries are zeros of sin(nπx); a zero model fits them exactly.
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let mut rng = stream(31, "train-bc-zero");
    let pts: Vec<Coord> = (0..32).map(|_| problem.boundary_sample(&mut rng)).collect();
    let target = analytic_values(&problem, &pts);
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::zeros(vec![32, 1]));
    let l = data_loss(&mut tape, pred, &target).unwrap();
    assert_eq!(tape.scalar_value(l), 0.0);
}

#[test]
fn ic_loss_of_matching_model_is_zero() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let mut rng = stream(32, "train-ic-match");
    let pts: Vec<Coord> = (0..32).map(|_| problem.initial_sample(&mut rng)).collect();
    let target = analytic_values(&problem, &pts);
    let mut tape = Tape::new();
    let pred = tape.constant(target.clone());
    let l = data_loss(&mut tape, pred, &target).unwrap();
    assert_eq!(tape.scalar_value(l), 0.0);
}

#[test]
fn ic_loss_frozen_quadrature_value() {
    // Constant model 1 against sin(πx) on the inclusive uniform 101-point
    // grid; mean (1 − sin(πx_k))² evaluated at high precision.
    let n = 101;
    let targets: Vec<Real> = (0..n)
        .map(|k| (std::f64::consts::PI * k as Real / (n - 1) as Real).sin())
        .collect();
    let mut tape = Tape::new();
    let pred = tape.constant(GenTensor::full(vec![n, 1], 1.0));
    let target = GenTensor::new(vec![n, 1], targets);
    let l = data_loss(&mut tape, pred, &target).unwrap();
    assert_relative_eq!(tape.scalar_value(l), 0.23451997697284, max_relative = 1e-10);
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let tcfg = TrainConfig::default();
    let mut theta = GenTensor::new(vec![2], vec![1.0, -2.0]);
    let mut adam = AdamState::new(&[vec![2]], &tcfg);
    let grads = vec![Some(GenTensor::zeros(vec![2]))];
    let mut params = vec![("w".to_string(), &mut theta)];
    adam.update(&mut params, &grads).unwrap();
    assert_eq!(adam.step, 1);
    assert_eq!(theta.data(), &[1.0, -2.0]);
}

#[test]
fn adam_first_step_magnitude() {
    let tcfg = TrainConfig::default();
    let mut theta = GenTensor::scalar(0.0);
    let mut adam = AdamState::new(&[vec![]], &tcfg);
    let grads = vec![Some(GenTensor::scalar(1.0))];
    let mut params = vec![("w".to_string(), &mut theta)];
    adam.update(&mut params, &grads).unwrap();
    // First bias-corrected step: -lr·g/(|g|+ε) ≈ -1e-3.
    assert_relative_eq!(theta.scalar_value(), -1e-3, max_relative = 1e-7);
}

#[test]
fn adam_identical_gradients_update_identically() {
    let tcfg = TrainConfig::default();
    let mut a = GenTensor::scalar(0.5);
    let mut b = GenTensor::scalar(0.5);
    let mut adam = AdamState::new(&[vec![], vec![]], &tcfg);
    let g = GenTensor::scalar(0.37);
    let grads = vec![Some(g.clone()), Some(g)];
    let mut params = vec![("a".to_string(), &mut a), ("b".to_string(), &mut b)];
    adam.update(&mut params, &grads).unwrap();
    assert_eq!(a.scalar_value(), b.scalar_value());
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let tcfg = TrainConfig::default();
    let mut theta = GenTensor::scalar(0.0);
    let mut adam = AdamState::new(&[vec![]], &tcfg);
    let grads = vec![Some(GenTensor::scalar(Real::NAN))];
    let mut params = vec![("enc.0.attn.wq".to_string(), &mut theta)];
    let err = adam.update(&mut params, &grads).unwrap_err();
    match err {
        PgtError::NanGradient { param, .. } => assert_eq!(param, "enc.0.attn.wq"),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn noise_injection_properties() {
    let problem = Problem::TaylorGreen { nu: 0.01 };
    let base = crate::bench::sample_sparse_observations(&problem, 200, 3).unwrap();

    // η = 0 is a bitwise no-op.
    let mut clean = base.clone();
    inject_noise(&mut clean, 0.0, 3);
    assert_eq!(clean.values.data(), base.values.data());

    // Same seed, same corruption; pressure channel untouched.
    let mut a = base.clone();
    let mut b = base.clone();
    inject_noise(&mut a, 0.1, 3);
    inject_noise(&mut b, 0.1, 3);
    assert_eq!(a.values.data(), b.values.data());
    assert_ne!(a.values.data(), base.values.data());
    for i in 0..base.len() {
        assert_eq!(a.values.at(i, 2), base.values.at(i, 2));
        assert_ne!(a.values.at(i, 0), base.values.at(i, 0));
    }

    // Corruption magnitude tracks η·std empirically.
    let std_u = {
        let n = base.len() as Real;
        let mean: Real = (0..base.len()).map(|i| base.values.at(i, 0)).sum::<Real>() / n;
        ((0..base.len())
            .map(|i| (base.values.at(i, 0) - mean).powi(2))
            .sum::<Real>()
            / n)
            .sqrt()
    };
    let noise_std = {
        let n = base.len() as Real;
        let diffs: Vec<Real> = (0..base.len())
            .map(|i| a.values.at(i, 0) - base.values.at(i, 0))
            .collect();
        let mean: Real = diffs.iter().sum::<Real>() / n;
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<Real>() / n).sqrt()
    };
    let expected = 0.1 * std_u;
    assert!(
        (noise_std - expected).abs() < 0.35 * expected,
        "noise std {noise_std} vs expected {expected}"
    );
}

#[test]
fn train_zero_steps_returns_initial_params() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let obs = crate::bench::sample_sparse_observations(&problem, 10, 1).unwrap();
    let spec = ModelSpec::Pinn { width: 8, depth: 2 };
    let tcfg = TrainConfig {
        steps: 0,
        ..TrainConfig::default()
    };
    let budget = SampleBudget {
        n_d: 10,
        n_r: 8,
        n_b: 4,
        n_0: 4,
    };
    let out = train(&problem, &spec, &tcfg, &budget, &obs, 1).unwrap();
    assert!(out.log.is_empty());
    assert!(out.diverged_at.is_none());
    let init = spec.init(&problem, 1).unwrap();
    for ((_, a), (_, b)) in out.params.named().iter().zip(init.named().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn train_same_seed_is_bit_identical() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let obs = crate::bench::sample_sparse_observations(&problem, 12, 2).unwrap();
    let spec = ModelSpec::Pgt(tiny_pgt_config(&problem));
    let tcfg = TrainConfig {
        steps: 5,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let budget = SampleBudget {
        n_d: 12,
        n_r: 8,
        n_b: 4,
        n_0: 4,
    };
    let a = train(&problem, &spec, &tcfg, &budget, &obs, 7).unwrap();
    let b = train(&problem, &spec, &tcfg, &budget, &obs, 7).unwrap();
    assert_eq!(a.log.len(), b.log.len());
    for (la, lb) in a.log.iter().zip(b.log.iter()) {
        assert_eq!(la.total.to_bits(), lb.total.to_bits());
        assert_eq!(la.csv_row(), lb.csv_row());
    }
    for ((_, ta), (_, tb)) in a.params.named().iter().zip(b.params.named().iter()) {
        assert_eq!(ta.data(), tb.data());
    }
}

#[test]
fn train_short_run_improves_rel_l2_by_10x() {
    // Sanity floor from the spec's own example: 200 steps on heat M=100 must
    // beat the untrained rel-L2 by at least 10x.
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let obs = crate::bench::sample_sparse_observations(&problem, 100, 5).unwrap();
    let spec = ModelSpec::Pgt(tiny_pgt_config(&problem));
    let budget = SampleBudget {
        n_d: 100,
        n_r: 64,
        n_b: 32,
        n_0: 32,
    };

    let init_params = spec.init(&problem, 5).unwrap();
    let rel_start = eval_rel_l2(&problem, &spec, &init_params, &obs).unwrap();

    let tcfg = TrainConfig {
        steps: 200,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let out = train(&problem, &spec, &tcfg, &budget, &obs, 5).unwrap();
    assert!(out.diverged_at.is_none());
    let rel_end = out.log.last().unwrap().rel_l2_eval.unwrap();
    assert!(
        rel_end * 10.0 <= rel_start,
        "rel-L2 went {rel_start} -> {rel_end}, less than 10x"
    );
}

#[test]
fn median_final_rel_l2_beats_early_budget_median() {
    // Stochastic-run invariant: over three seeds, the median rel-L2 at the
    // full budget sits below the median at 10% of it.
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let spec = ModelSpec::Pgt(tiny_pgt_config(&problem));
    let budget = SampleBudget {
        n_d: 60,
        n_r: 64,
        n_b: 32,
        n_0: 32,
    };
    let steps = 300;
    let tcfg = TrainConfig {
        steps,
        lr: 2e-3,
        eval_every: steps / 10,
        ..TrainConfig::default()
    };
    let mut early = Vec::new();
    let mut fin = Vec::new();
    for seed in [0u64, 1, 2] {
        let obs = crate::bench::sample_sparse_observations(&problem, 60, seed).unwrap();
        let out = train(&problem, &spec, &tcfg, &budget, &obs, seed).unwrap();
        let at_tenth = out
            .log
            .iter()
            .find_map(|l| l.rel_l2_eval)
            .expect("eval at 10% budget");
        let at_end = out.log.last().unwrap().rel_l2_eval.expect("final eval");
        early.push(at_tenth);
        fin.push(at_end);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let m_early = median(&mut early);
    let m_final = median(&mut fin);
    assert!(
        m_final < m_early,
        "median rel-L2 did not improve: {m_early} -> {m_final}"
    );
}

#[test]
fn train_divergence_aborts_with_last_good() {
    let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
    let obs = crate::bench::sample_sparse_observations(&problem, 8, 4).unwrap();
    let spec = ModelSpec::Siren {
        width: 8,
        depth: 2,
        omega0: 30.0,
    };
    let tcfg = TrainConfig {
        steps: 50,
        lr: 1e200,
        ..TrainConfig::default()
    };
    let budget = SampleBudget {
        n_d: 8,
        n_r: 0,
        n_b: 0,
        n_0: 0,
    };
    let out = train(&problem, &spec, &tcfg, &budget, &obs, 4).unwrap();
    let at = out.diverged_at.expect("lr=1e200 must diverge");
    assert!(at < 50);
    assert_eq!(out.log.len(), at + 1);
    // Recovered parameters are finite.
    for (_, t) in out.params.named() {
        assert!(t.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn step_log_csv_shape() {
    let entry = StepLog {
        step: 3,
        l_data: 0.5,
        l_pde: Real::NAN,
        l_bc: 0.25,
        l_ic: 0.125,
        sigmas: [1.0, 1.0, 1.0, 1.0],
        total: 0.9,
        rel_l2_eval: None,
    };
    let row = entry.csv_row();
    assert_eq!(row.split(',').count(), STEP_LOG_HEADER.split(',').count());
    // Missing PDE term renders as an empty cell.
    assert_eq!(row.split(',').nth(2), Some(""));
}
