//! Benchmark problems, evaluation metrics, and the experiment suites.

pub mod suites;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PgtError, Result};
use crate::model::{coords_to_tensor, ObservationSet};
use crate::physics::analytic::{heat_solution_1d, taylor_green};
use crate::physics::stencil::{
    heat_residual_1d, ns_residual_2d, AxisBounds, NsResidualPlan, DEFAULT_STENCIL_STEP,
};
use crate::physics::PdeFamily as GenFamily;
use crate::rng::{stream, streams};
use crate::{Coord, PdeFamily, Real, Tensor};

/// A benchmark problem: domain, governing equation, and analytic solution.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    /// 1D heat equation on [0,1]×[0,1] with the decaying sine solution.
    Heat1d { nu: Real, mode: u32 },
    /// Taylor–Green vortex on [0,2π]²×[0,1].
    TaylorGreen { nu: Real },
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Heat1d { .. } => "heat1d",
            Problem::TaylorGreen { .. } => "taylor_green",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Problem::Heat1d { .. } => 1,
            Problem::TaylorGreen { .. } => 3,
        }
    }

    /// Coordinate components including time.
    pub fn coord_dim(&self) -> usize {
        match self {
            Problem::Heat1d { .. } => 2,
            Problem::TaylorGreen { .. } => 3,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        self.coord_dim() - 1
    }

    pub fn nu(&self) -> Real {
        match self {
            Problem::Heat1d { nu, .. } | Problem::TaylorGreen { nu } => *nu,
        }
    }

    /// Bounds per axis in (space..., t) order.
    pub fn bounds(&self) -> Vec<AxisBounds<Real>> {
        match self {
            Problem::Heat1d { .. } => vec![AxisBounds::new(0.0, 1.0), AxisBounds::new(0.0, 1.0)],
            Problem::TaylorGreen { .. } => vec![
                AxisBounds::new(0.0, std::f64::consts::TAU),
                AxisBounds::new(0.0, std::f64::consts::TAU),
                AxisBounds::new(0.0, 1.0),
            ],
        }
    }

    /// The attention-bias family: the diffusive kernel with the problem's
    /// own diffusivity (kinematic viscosity for the flow problem).
    pub fn pde_family(&self) -> PdeFamily {
        GenFamily::Parabolic {
            alpha: self.nu(),
            dim: self.spatial_dim(),
        }
    }

    pub fn analytic(&self, c: &Coord) -> Vec<Real> {
        match self {
            Problem::Heat1d { nu, mode } => vec![heat_solution_1d(c.space[0], c.t, *nu, *mode)],
            Problem::TaylorGreen { nu } => taylor_green(c.space[0], c.space[1], c.t, *nu).to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu() <= 0.0 {
            return Err(PgtError::Config(format!(
                "diffusivity/viscosity must be positive, got {}",
                self.nu()
            )));
        }
        if let Problem::Heat1d { mode, .. } = self {
            if *mode == 0 {
                return Err(PgtError::Config("heat mode must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn rand_axis(&self, axis: usize, rng: &mut ChaCha8Rng, margin: Real) -> Real {
        let b = self.bounds()[axis];
        let span = b.hi - b.lo;
        b.lo + span * (margin + (1.0 - 2.0 * margin) * rng.gen::<Real>())
    }

    /// Uniform point strictly inside the domain.
    pub fn interior_sample(&self, rng: &mut ChaCha8Rng) -> Coord {
        let d = self.spatial_dim();
        let margin = 1e-2;
        let space = (0..d).map(|a| self.rand_axis(a, rng, margin)).collect();
        Coord::new(space, self.rand_axis(d, rng, margin))
    }

    /// Uniform point on the spatial boundary, random time.
    pub fn boundary_sample(&self, rng: &mut ChaCha8Rng) -> Coord {
        let d = self.spatial_dim();
        let axis = if d == 1 { 0 } else { rng.gen_range(0..d) };
        let hi_side = rng.gen::<bool>();
        let mut space: Vec<Real> = (0..d).map(|a| self.rand_axis(a, rng, 0.0)).collect();
        let b = self.bounds()[axis];
        space[axis] = if hi_side { b.hi } else { b.lo };
        Coord::new(space, self.rand_axis(d, rng, 0.0))
    }

    /// Uniform point at t = 0.
    pub fn initial_sample(&self, rng: &mut ChaCha8Rng) -> Coord {
        let d = self.spatial_dim();
        let space = (0..d).map(|a| self.rand_axis(a, rng, 0.0)).collect();
        Coord::new(space, 0.0)
    }

    /// Evaluation grid. Heat: 101×101 over (x, t). Flow: 64×64 spatial
    /// snapshot at t = 0.5.
    pub fn eval_grid(&self) -> Vec<Coord> {
        match self {
            Problem::Heat1d { .. } => {
                let n = 101;
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let x = i as Real / (n - 1) as Real;
                        let t = j as Real / (n - 1) as Real;
                        out.push(Coord::xt(x, t));
                    }
                }
                out
            }
            Problem::TaylorGreen { .. } => {
                let n = 64;
                let tau = std::f64::consts::TAU;
                let t_snap = 0.5;
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        let x = tau * i as Real / (n - 1) as Real;
                        let y = tau * j as Real / (n - 1) as Real;
                        out.push(Coord::xyt(x, y, t_snap));
                    }
                }
                out
            }
        }
    }

    /// PDE residual of an arbitrary field closure at one point.
    pub fn residual_of(
        &self,
        field: &dyn Fn(&Coord) -> Vec<Real>,
        at: &Coord,
        h: Real,
    ) -> Result<Vec<Real>> {
        let b = self.bounds();
        match self {
            Problem::Heat1d { nu, .. } => {
                let r = heat_residual_1d(
                    |x, t| field(&Coord::xt(x, t))[0],
                    at.space[0],
                    at.t,
                    *nu,
                    h,
                    b[0],
                    b[1],
                )?;
                Ok(vec![r])
            }
            Problem::TaylorGreen { nu } => {
                let r = ns_residual_2d(
                    |x, y, t| {
                        let v = field(&Coord::xyt(x, y, t));
                        [v[0], v[1], v[2]]
                    },
                    at.space[0],
                    at.space[1],
                    at.t,
                    *nu,
                    h,
                    b[0],
                    b[1],
                    b[2],
                )?;
                Ok(r.to_vec())
            }
        }
    }

    /// NS stencil plan (flow problem only).
    pub fn ns_plan(&self, at: &Coord, h: Real) -> Result<NsResidualPlan<Real>> {
        let b = self.bounds();
        NsResidualPlan::new(at.space[0], at.space[1], at.t, h, b[0], b[1], b[2])
    }
}

/// `M` i.i.d. uniform interior observations with analytic values.
pub fn sample_sparse_observations(
    problem: &Problem,
    m: usize,
    seed: u64,
) -> Result<ObservationSet> {
    if m == 0 {
        return Err(PgtError::InvalidInput(
            "observation count must be at least 1".into(),
        ));
    }
    let mut rng = stream(seed, streams::SAMPLING);
    let coords: Vec<Coord> = (0..m).map(|_| problem.interior_sample(&mut rng)).collect();
    let ch = problem.channels();
    let mut data = Vec::with_capacity(m * ch);
    for c in &coords {
        data.extend(problem.analytic(c));
    }
    ObservationSet::new(Tensor::new(vec![m, ch], data), coords)
}

/// `‖pred − truth‖₂ / ‖truth‖₂` over matching sample vectors.
pub fn relative_l2(pred: &[Real], truth: &[Real]) -> Result<Real> {
    if pred.len() != truth.len() {
        return Err(PgtError::ShapeMismatch {
            op: "relative_l2",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(PgtError::ZeroReferenceNorm);
    }
    Ok((num / den).sqrt())
}

/// Per-run evaluation metrics.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rel_l2_total: Real,
    pub rel_l2_u: Option<Real>,
    pub rel_l2_v: Option<Real>,
    pub rel_l2_p: Option<Real>,
    /// Mean absolute residual over the evaluation grid, all channels.
    pub pde_residual: Real,
    /// Final MSE on the training observations.
    pub data_loss: Real,
    /// Final rel-L2 between predictions and observation values.
    pub train_error: Real,
}

/// A field that can be evaluated on coordinate batches: either a trained
/// network or the analytic solution wrapped as an oracle.
pub enum EvalField<'a> {
    Network(Box<dyn Fn(&[Coord]) -> Result<Tensor> + 'a>),
    Oracle(&'a Problem),
}

impl EvalField<'_> {
    pub fn eval(&self, coords: &[Coord]) -> Result<Tensor> {
        match self {
            EvalField::Network(f) => f(coords),
            EvalField::Oracle(p) => {
                let ch = p.channels();
                let mut data = Vec::with_capacity(coords.len() * ch);
                for c in coords {
                    data.extend(p.analytic(c));
                }
                Ok(Tensor::new(vec![coords.len(), ch], data))
            }
        }
    }
}

/// Evaluate a field against the analytic solution: grid rel-L2 (total and
/// per channel), mean |residual| over the grid, and observation-fit metrics.
pub fn evaluate_field(
    problem: &Problem,
    field: &EvalField,
    obs: &ObservationSet,
) -> Result<EvalReport> {
    let grid = problem.eval_grid();
    let ch = problem.channels();
    let pred = field.eval(&grid)?;
    let mut truth = Vec::with_capacity(grid.len() * ch);
    for c in &grid {
        truth.extend(problem.analytic(c));
    }
    let rel_l2_total = relative_l2(pred.data(), &truth)?;
    let per_channel = |k: usize| -> Result<Real> {
        let p: Vec<Real> = (0..grid.len()).map(|i| pred.at(i, k)).collect();
        let t: Vec<Real> = (0..grid.len()).map(|i| truth[i * ch + k]).collect();
        relative_l2(&p, &t)
    };
    let (rel_l2_u, rel_l2_v, rel_l2_p) = if ch == 3 {
        (
            Some(per_channel(0)?),
            Some(per_channel(1)?),
            Some(per_channel(2)?),
        )
    } else {
        (None, None, None)
    };

    let pde_residual = mean_abs_residual(problem, field, &grid)?;

    let obs_pred = field.eval(&obs.coords)?;
    let mut data_loss = 0.0;
    for (p, o) in obs_pred.data().iter().zip(obs.values.data().iter()) {
        data_loss += (p - o) * (p - o);
    }
    data_loss /= obs.len() as Real;
    let train_error = relative_l2(obs_pred.data(), obs.values.data())?;

    Ok(EvalReport {
        rel_l2_total,
        rel_l2_u,
        rel_l2_v,
        rel_l2_p,
        pde_residual,
        data_loss,
        train_error,
    })
}

/// Mean absolute PDE residual of a field over a set of points, evaluated
/// with one batched field call over all stencil points.
pub fn mean_abs_residual(
    problem: &Problem,
    field: &EvalField,
    points: &[Coord],
) -> Result<Real> {
    let h = DEFAULT_STENCIL_STEP;
    match problem {
        Problem::Heat1d { nu, .. } => {
            let b = problem.bounds();
            let mut all_points = Vec::new();
            let mut plans = Vec::with_capacity(points.len());
            for c in points {
                let plan = crate::physics::stencil::heat_residual_plan(
                    c.space[0], c.t, *nu, h, b[0], b[1],
                )?;
                let base = all_points.len();
                all_points.extend(plan.points.iter().cloned());
                plans.push((base, plan));
            }
            let values = field.eval(&all_points)?;
            let mut acc = 0.0;
            for (base, plan) in &plans {
                let mut r = 0.0;
                for (k, coeff) in plan.coeffs.iter().enumerate() {
                    r += coeff * values.at(base + k, 0);
                }
                acc += r.abs();
            }
            Ok(acc / points.len() as Real)
        }
        Problem::TaylorGreen { nu } => {
            let mut all_points = Vec::new();
            let mut plans = Vec::with_capacity(points.len());
            for c in points {
                let plan = problem.ns_plan(c, h)?;
                let base = all_points.len();
                all_points.extend(plan.points.iter().cloned());
                plans.push((base, plan));
            }
            let values = field.eval(&all_points)?;
            let mut acc = 0.0;
            for (base, plan) in &plans {
                let vals: Vec<[Real; 3]> = (0..plan.points.len())
                    .map(|k| {
                        [
                            values.at(base + k, 0),
                            values.at(base + k, 1),
                            values.at(base + k, 2),
                        ]
                    })
                    .collect();
                let r = plan.residuals(&vals, *nu);
                acc += (r[0].abs() + r[1].abs() + r[2].abs()) / 3.0;
            }
            Ok(acc / points.len() as Real)
        }
    }
}

/// Observation coordinates as a model-input tensor.
pub fn obs_coord_tensor(obs: &ObservationSet) -> Tensor {
    coords_to_tensor(&obs.coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn relative_l2_reference_cases() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_l2(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        // ‖(0,1)‖ / ‖(1,0)‖ = 1.
        assert_eq!(relative_l2(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            relative_l2(&[1.0], &[0.0]),
            Err(PgtError::ZeroReferenceNorm)
        ));
    }

    #[test]
    fn relative_l2_error_scale_covariance() {
        let truth: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 1.5).collect();
        let dir: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).cos()).collect();
        let norm_t: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_d: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &eps in &[1e-3, 1e-2, 0.1] {
            let pred: Vec<f64> = truth.iter().zip(dir.iter()).map(|(t, d)| t + eps * d).collect();
            let got = relative_l2(&pred, &truth).unwrap();
            assert_relative_eq!(got, eps * norm_d / norm_t, max_relative = 1e-10);
        }
    }

    #[test]
    fn oracle_closure_is_exact() {
        for problem in [
            Problem::Heat1d { nu: 0.1, mode: 1 },
            Problem::TaylorGreen { nu: 0.01 },
        ] {
            let obs = sample_sparse_observations(&problem, 20, 7).unwrap();
            let report = evaluate_field(&problem, &EvalField::Oracle(&problem), &obs).unwrap();
            assert!(report.rel_l2_total < 1e-12, "{}", report.rel_l2_total);
            assert!(report.data_loss < 1e-24);
            assert!(report.train_error < 1e-12);
            let h = DEFAULT_STENCIL_STEP;
            assert!(
                report.pde_residual < 10.0 * h * h,
                "residual {} above truncation bound",
                report.pde_residual
            );
        }
    }

    #[test]
    fn sparse_sampling_is_reproducible_and_bounded() {
        let problem = Problem::Heat1d { nu: 0.1, mode: 1 };
        let a = sample_sparse_observations(&problem, 50, 3).unwrap();
        let b = sample_sparse_observations(&problem, 50, 3).unwrap();
        assert_eq!(a.values.data(), b.values.data());
        assert_eq!(a.coords, b.coords);
        for &v in a.values.data() {
            assert!(v.abs() <= 1.0, "heat mode-1 values bounded by 1");
        }
        let c = sample_sparse_observations(&problem, 50, 4).unwrap();
        assert_ne!(a.values.data(), c.values.data());
    }

    #[test]
    fn sparse_sampling_mean_matches_quadrature() {
        // Monte-Carlo mean of u over the domain vs the exact integral,
        // within three standard errors.
        let nu = 0.1f64;
        let problem = Problem::Heat1d { nu, mode: 1 };
        let n = 100_000;
        let obs = sample_sparse_observations(&problem, n, 11).unwrap();
        let mean: f64 = obs.values.data().iter().sum::<f64>() / n as f64;
        // Interior sampling draws uniformly from [m, 1-m] per axis with
        // margin m = 1e-2; integrate the solution over that box exactly.
        let m = 1e-2;
        let k = std::f64::consts::PI;
        let lam = nu * k * k;
        let ix = ((k * m).cos() - (k * (1.0 - m)).cos()) / k;
        let it = ((-lam * m).exp() - (-lam * (1.0 - m)).exp()) / lam;
        let want = ix * it / ((1.0 - 2.0 * m) * (1.0 - 2.0 * m));
        let sample_std = {
            let var: f64 = obs
                .values
                .data()
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        };
        assert!(
            (mean - want).abs() < 3.0 * sample_std,
            "mean {mean} vs {want} (3se = {})",
            3.0 * sample_std
        );
    }

    #[test]
    fn problem_invariant_analytic_satisfies_residual() {
        // The analytic handle satisfies the residual operator below the
        // truncation bound at 1000 random interior points.
        let h = DEFAULT_STENCIL_STEP;
        let bound = 10.0 * h * h;
        for problem in [
            Problem::Heat1d { nu: 0.1, mode: 1 },
            Problem::TaylorGreen { nu: 0.01 },
        ] {
            let mut rng = stream(13, "bench-residual-check");
            let field = |c: &Coord| problem.analytic(c);
            for _ in 0..1000 {
                let p = problem.interior_sample(&mut rng);
                let r = problem.residual_of(&field, &p, h).unwrap();
                for v in r {
                    assert!(v.abs() < bound, "{} residual {v}", problem.name());
                }
            }
        }
    }
}
