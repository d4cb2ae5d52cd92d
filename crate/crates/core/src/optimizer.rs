//! Riemannian trust-region solver with a truncated conjugate-gradient inner
//! loop, on Grassmann points represented by Stiefel matrices.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{horizontal_part, metric, retract, HorizontalVector, StiefelPoint};
use crate::objective::RiemannianProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcgConfig {
    /// Defaults to the dimension of the horizontal space.
    pub max_inner: Option<usize>,
    pub kappa: f64,
    pub theta: f64,
}

impl Default for TcgConfig {
    fn default() -> Self {
        Self {
            max_inner: None,
            kappa: 0.1,
            theta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    /// Defaults to `0.1 sqrt(r)`.
    pub delta0: Option<f64>,
    /// Defaults to `2 sqrt(r)`.
    pub delta_max: Option<f64>,
    pub rho_accept: f64,
    pub rho_expand: f64,
    pub shrink: f64,
    pub expand: f64,
    pub max_outer_iters: usize,
    pub grad_tol: f64,
    /// Radius below which the run stops as stagnated.
    pub min_delta: f64,
    pub tcg: TcgConfig,
    /// Spot-check the gradient against a finite difference before starting.
    pub check_gradient: bool,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            delta0: None,
            delta_max: None,
            rho_accept: 0.1,
            rho_expand: 0.75,
            shrink: 0.25,
            expand: 2.0,
            max_outer_iters: 500,
            grad_tol: 1e-6,
            min_delta: 1e-12,
            tcg: TcgConfig::default(),
            check_gradient: false,
        }
    }
}

impl TrustRegionConfig {
    /// `(delta0, delta_max)` for rank `r`.
    pub fn radii(&self, r: usize) -> (f64, f64) {
        let scale = (r as f64).sqrt();
        (self.delta0.unwrap_or(0.1 * scale), self.delta_max.unwrap_or(2.0 * scale))
    }

    pub fn validate(&self, r: usize) -> Result<()> {
        let (d0, dmax) = self.radii(r);
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(0.0 < self.rho_accept && self.rho_accept < self.rho_expand && self.rho_expand < 1.0) {
            return bad("need 0 < rho_accept < rho_expand < 1");
        }
        if !(0.0 < d0 && d0 <= dmax) {
            return bad("need 0 < delta0 <= delta_max");
        }
        if !(0.0 < self.shrink && self.shrink < 1.0 && self.expand > 1.0) {
            return bad("need 0 < shrink < 1 < expand");
        }
        if !(self.grad_tol >= 0.0 && self.min_delta >= 0.0 && self.tcg.kappa > 0.0 && self.tcg.theta >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TcgExit {
    Residual,
    Boundary,
    NegativeCurvature,
    MaxInner,
    CauchyFallback,
}

#[derive(Debug, Clone)]
pub struct TcgResult {
    pub step: DMatrix<f64>,
    /// Hessian applied to `step`.
    pub hessian_step: DMatrix<f64>,
    pub iterations: usize,
    pub exit: TcgExit,
}

impl TcgResult {
    /// `-(<g, eta> + <eta, H eta> / 2)`.
    pub fn predicted_decrease(&self, grad: &DMatrix<f64>) -> f64 {
        -(metric(grad, &self.step) + 0.5 * metric(&self.step, &self.hessian_step))
    }
}

fn boundary_tau(eta: &DMatrix<f64>, dir: &DMatrix<f64>, delta: f64) -> f64 {
    let (ee, ed, dd) = (metric(eta, eta), metric(eta, dir), metric(dir, dir));
    (-ed + (ed * ed + dd * (delta * delta - ee)).max(0.0).sqrt()) / dd
}

fn cauchy_step(grad: &DMatrix<f64>, hg: &DMatrix<f64>, delta: f64) -> TcgResult {
    let gnorm = grad.norm();
    let ghg = metric(grad, hg);
    let tau = if ghg.is_finite() && ghg > 0.0 {
        (gnorm.powi(3) / (delta * ghg)).min(1.0)
    } else {
        1.0
    };
    let scale = -tau * delta / gnorm;
    let hessian_step = if ghg.is_finite() {
        hg * scale
    } else {
        DMatrix::zeros(grad.nrows(), grad.ncols())
    };
    TcgResult {
        step: grad * scale,
        hessian_step,
        iterations: 0,
        exit: TcgExit::CauchyFallback,
    }
}

/// Steihaug-Toint truncated CG for `min <g, eta> + <eta, H eta> / 2`
/// subject to `||eta|| <= delta`.
pub fn truncated_cg(
    grad: &DMatrix<f64>,
    mut hvp: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>,
    project: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    delta: f64,
    max_inner: usize,
    cfg: &TcgConfig,
) -> TcgResult {
    let zero = DMatrix::zeros(grad.nrows(), grad.ncols());
    let r0 = grad.norm();
    if r0 == 0.0 {
        return TcgResult {
            step: zero.clone(),
            hessian_step: zero,
            iterations: 0,
            exit: TcgExit::Residual,
        };
    }
    let target = r0 * cfg.kappa.min(r0.powf(cfg.theta));
    let mut eta = zero.clone();
    let mut h_eta = zero;
    let mut r = grad.clone();
    let mut rr = r0 * r0;
    let mut dir = -&r;
    let mut first_hd = None;

    for j in 0..max_inner.max(1) {
        let hd = hvp(&dir);
        let dhd = metric(&dir, &hd);
        if !dhd.is_finite() {
            let hg = first_hd.map(|h: DMatrix<f64>| -h).unwrap_or_else(|| -&hd);
            return cauchy_step(grad, &hg, delta);
        }
        if j == 0 {
            first_hd = Some(hd.clone());
        }
        let alpha = rr / dhd;
        let trial = &eta + &dir * alpha;
        if dhd <= 0.0 || trial.norm() >= delta {
            let tau = boundary_tau(&eta, &dir, delta);
            eta += &dir * tau;
            h_eta += &hd * tau;
            return TcgResult {
                step: eta,
                hessian_step: h_eta,
                iterations: j + 1,
                exit: if dhd <= 0.0 {
                    TcgExit::NegativeCurvature
                } else {
                    TcgExit::Boundary
                },
            };
        }
        eta = trial;
        h_eta += &hd * alpha;
        r = project(&(r + &hd * alpha));
        let rr_new = r.norm_squared();
        if rr_new.sqrt() <= target {
            return TcgResult {
                step: eta,
                hessian_step: h_eta,
                iterations: j + 1,
                exit: TcgExit::Residual,
            };
        }
        dir = project(&(&dir * (rr_new / rr) - &r));
        rr = rr_new;
    }
    TcgResult {
        step: eta,
        hessian_step: h_eta,
        iterations: max_inner.max(1),
        exit: TcgExit::MaxInner,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerStatus {
    Converged,
    MaxIters,
    /// The radius collapsed below `min_delta` without meeting `grad_tol`.
    Stagnated,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Objective at the current iterate after the acceptance decision.
    pub value: f64,
    pub gradnorm: f64,
    /// Radius used for this iteration's step.
    pub delta: f64,
    pub rho: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Row 0 describes the starting point.
    pub records: Vec<IterationRecord>,
    pub status: OptimizerStatus,
}

impl OptimizationTrace {
    pub fn initial_value(&self) -> f64 {
        self.records[0].value
    }

    pub fn final_value(&self) -> f64 {
        self.records.last().expect("trace has a starting row").value
    }

    pub fn final_gradnorm(&self) -> f64 {
        self.records.last().expect("trace has a starting row").gradnorm
    }

    pub fn accepted_steps(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "value", "gradnorm", "delta", "rho", "accepted", "step_norm"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.value.to_string(),
                r.gradnorm.to_string(),
                r.delta.to_string(),
                r.rho.to_string(),
                r.accepted.to_string(),
                r.step_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gradient_spot_check<P: RiemannianProblem + ?Sized>(problem: &P, u: &DMatrix<f64>, grad: &DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = DMatrix::from_fn(u.nrows(), u.ncols(), |_, _| StandardNormal.sample(&mut rng));
    let v = horizontal_part(u, &w);
    let v = &v / v.norm().max(f64::MIN_POSITIVE);
    let h = 1e-6;
    let fd = (problem.value(&(u + &v * h)) - problem.value(&(u - &v * h))) / (2.0 * h);
    let analytic = metric(grad, &v);
    let err = (fd - analytic).abs() / analytic.abs().max(1e-8);
    if err > 1e-4 {
        log::warn!("gradient check failed: directional derivative {analytic:e}, finite difference {fd:e}");
    } else {
        log::debug!("gradient check passed (relative error {err:e})");
    }
}

/// Minimises `problem` over the Grassmann manifold from `u0`.
///
/// Numerical failures in the callbacks end the run with
/// [`OptimizerStatus::NumericalFailure`] and the last accepted iterate.
pub fn trust_region<P: RiemannianProblem + ?Sized>(
    problem: &P,
    u0: StiefelPoint,
    cfg: &TrustRegionConfig,
) -> Result<(StiefelPoint, OptimizationTrace)> {
    let (d, r) = u0.matrix().shape();
    cfg.validate(r)?;
    let (mut delta, delta_max) = cfg.radii(r);
    let max_inner = cfg.tcg.max_inner.unwrap_or(((d - r) * r).max(1));

    let mut u = u0;
    let mut f = problem.value(u.matrix());
    let mut egrad = problem.euclidean_gradient(u.matrix());
    let mut grad = horizontal_part(u.matrix(), &egrad);
    let mut gnorm = grad.norm();
    let mut records = vec![IterationRecord {
        iter: 0,
        value: f,
        gradnorm: gnorm,
        delta,
        rho: f64::NAN,
        step_norm: 0.0,
        accepted: false,
        inner_iters: 0,
    }];
    let finish = |u, records, status| Ok((u, OptimizationTrace { records, status }));
    if !f.is_finite() || !gnorm.is_finite() {
        return finish(u, records, OptimizerStatus::NumericalFailure);
    }
    if cfg.check_gradient {
        gradient_spot_check(problem, u.matrix(), &grad);
    }

    for iter in 1..=cfg.max_outer_iters {
        if gnorm <= cfg.grad_tol {
            return finish(u, records, OptimizerStatus::Converged);
        }
        let um = u.matrix().clone();
        let tcg = truncated_cg(
            &grad,
            |v| problem.hessian_vector(&um, &egrad, v),
            |v| horizontal_part(&um, v),
            delta,
            max_inner,
            &cfg.tcg,
        );
        let step_norm = tcg.step.norm();
        let candidate = match retract(&u, &HorizontalVector(tcg.step.clone())) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("retraction failed at iteration {iter}: {e}");
                return finish(u, records, OptimizerStatus::NumericalFailure);
            }
        };
        let f_new = problem.value(candidate.matrix());
        if !f_new.is_finite() {
            log::warn!("objective is not finite at iteration {iter}");
            return finish(u, records, OptimizerStatus::NumericalFailure);
        }
        let mut pred = tcg.predicted_decrease(&grad);
        if !pred.is_finite() {
            pred = -metric(&grad, &tcg.step);
        }
        let rho = (f - f_new) / pred.max(1e-15);
        let radius_used = delta;

        if rho < 0.25 {
            delta *= cfg.shrink;
        } else if rho > cfg.rho_expand && step_norm >= 0.99 * radius_used {
            delta = (cfg.expand * delta).min(delta_max);
        }
        let accepted = rho > cfg.rho_accept && f_new < f;
        if accepted {
            let eg = problem.euclidean_gradient(candidate.matrix());
            let g = horizontal_part(candidate.matrix(), &eg);
            let gn = g.norm();
            if !gn.is_finite() {
                log::warn!("gradient is not finite at iteration {iter}");
                return finish(u, records, OptimizerStatus::NumericalFailure);
            }
            (u, f, egrad, grad, gnorm) = (candidate, f_new, eg, g, gn);
        }
        log::debug!("iter {iter}: f={f:.6e} |grad|={gnorm:.3e} delta={radius_used:.3e} rho={rho:.3} accepted={accepted}");
        records.push(IterationRecord {
            iter,
            value: f,
            gradnorm: gnorm,
            delta: radius_used,
            rho,
            step_norm,
            accepted,
            inner_iters: tcg.iterations,
        });
        if delta < cfg.min_delta && gnorm > cfg.grad_tol {
            return finish(u, records, OptimizerStatus::Stagnated);
        }
    }
    let status = if gnorm <= cfg.grad_tol {
        OptimizerStatus::Converged
    } else {
        OptimizerStatus::MaxIters
    };
    finish(u, records, status)
}
