//! N-step prediction-error objective on the Grassmann manifold, with an
//! adjoint gradient and finite-difference Hessian-vector products.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::{rollout_truth, DiscreteMap, Trajectory};
use crate::edmd::{reduced_coordinate_matrix, TransformedModel};
use crate::error::{Error, Result};
use crate::linalg::block_diag_identity;
use crate::manifold::{horizontal_part, HorizontalVector, StiefelPoint};

/// A smooth function of a `d x r` matrix whose value depends only on the
/// column span, consumed by the trust-region solver.
pub trait RiemannianProblem: Sync {
    /// Value of the smooth extension at any `d x r` matrix.
    fn value(&self, u: &DMatrix<f64>) -> f64;

    /// Euclidean gradient of the smooth extension.
    fn euclidean_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64>;

    /// Riemannian Hessian applied to a horizontal `v`, given the Euclidean
    /// gradient `egrad` at `u`.
    fn hessian_vector(&self, u: &DMatrix<f64>, egrad: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        fd_hessian_vector(self, u, egrad, v)
    }

    fn riemannian_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        horizontal_part(u, &self.euclidean_gradient(u))
    }
}

/// Central difference of the Euclidean gradient along `v`, corrected by
/// `-V U^T egrad` and projected to the horizontal space.
pub fn fd_hessian_vector<P: RiemannianProblem + ?Sized>(
    problem: &P,
    u: &DMatrix<f64>,
    egrad: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> DMatrix<f64> {
    let vnorm = v.norm();
    if vnorm == 0.0 {
        return DMatrix::zeros(v.nrows(), v.ncols());
    }
    let h = 1e-5 * (1.0 + u.norm()) / (1.0 + vnorm);
    let plus = problem.euclidean_gradient(&(u + v * h));
    let minus = problem.euclidean_gradient(&(u - v * h));
    let ehess = (plus - minus) / (2.0 * h);
    let corrected = ehess - v * (u.transpose() * egrad);
    horizontal_part(u, &corrected)
}

/// Adapts three closures into a [`RiemannianProblem`]; the Hessian closure
/// receives `(u, egrad, v)`.
pub struct Callbacks<F, G, H> {
    pub value: F,
    pub gradient: G,
    pub hessian_vector: H,
}

impl<F, G, H> RiemannianProblem for Callbacks<F, G, H>
where
    F: Fn(&DMatrix<f64>) -> f64 + Sync,
    G: Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync,
    H: Fn(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64> + Sync,
{
    fn value(&self, u: &DMatrix<f64>) -> f64 {
        (self.value)(u)
    }

    fn euclidean_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        (self.gradient)(u)
    }

    fn hessian_vector(&self, u: &DMatrix<f64>, egrad: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        (self.hessian_vector)(u, egrad, v)
    }
}

/// Rayleigh benchmark `tr(U^T A U)` for symmetric `A`.
#[derive(Debug, Clone)]
pub struct Rayleigh {
    pub a: DMatrix<f64>,
}

impl Rayleigh {
    /// Closed-form Riemannian Hessian `2 (I - U U^T)(A V - V U^T A U)`.
    pub fn exact_hessian_vector(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let utau = u.transpose() * &self.a * u;
        horizontal_part(u, &((&self.a * v - v * utau) * 2.0))
    }
}

impl RiemannianProblem for Rayleigh {
    fn value(&self, u: &DMatrix<f64>) -> f64 {
        (u.transpose() * &self.a * u).trace()
    }

    fn euclidean_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a * u * 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// `(1/2N) sum_k ||x(k) - x_hat(k)||^2` for each test trajectory.
    pub per_trajectory: Vec<f64>,
}

/// Test set, horizon and transformed model defining `g_N`.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    tm: TransformedModel,
    a_t: DMatrix<f64>,
    coord: DMatrix<f64>,
    /// `P Psi(x_i)` for each test state, as columns.
    lifted: DMatrix<f64>,
    /// `targets[i]` has columns `x(k, x_i)` for `k = 1..N`.
    targets: Vec<DMatrix<f64>>,
    horizon: usize,
    rank: usize,
}

struct Rollout {
    states: Vec<DVector<f64>>,
    errors: Vec<DVector<f64>>,
    sq_error: f64,
}

impl ObjectiveContext {
    pub fn new(
        tm: TransformedModel,
        dict: &Dictionary,
        test_states: &[DVector<f64>],
        truths: &[Trajectory],
        horizon: usize,
        rank: usize,
    ) -> Result<Self> {
        if test_states.is_empty() || test_states.len() != truths.len() {
            return Err(Error::InvalidArgument(format!(
                "need J >= 1 test states with one trajectory each, got {} and {}",
                test_states.len(),
                truths.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let d = tm.complement_dim();
        if rank == 0 || rank > d {
            return Err(Error::InvalidArgument(format!("need 1 <= r <= {d}, got r={rank}")));
        }
        if dict.len() != tm.dictionary_size() || dict.state_dim() != tm.n {
            return Err(Error::Dimension("dictionary does not match the model".into()));
        }
        let mut targets = Vec::with_capacity(truths.len());
        for t in truths {
            if t.states.nrows() < horizon + 1 {
                return Err(Error::LengthMismatch {
                    needed: horizon + 1,
                    got: t.states.nrows(),
                });
            }
            if t.states.ncols() != tm.n {
                return Err(Error::Dimension("trajectory state dimension mismatch".into()));
            }
            targets.push(t.states.rows(1, horizon).transpose());
        }
        let lifted = tm.p_inv.solve_lower_triangular(&dict.lift_batch(test_states)).ok_or(Error::Singular)?;
        Ok(Self {
            a_t: tm.a_e.transpose(),
            coord: reduced_coordinate_matrix(&tm, rank)?,
            tm,
            lifted,
            targets,
            horizon,
            rank,
        })
    }

    /// Builds the context from reference trajectories of `map`.
    pub fn from_map(
        tm: TransformedModel,
        dict: &Dictionary,
        map: &dyn DiscreteMap,
        test_states: &[DVector<f64>],
        horizon: usize,
        rank: usize,
    ) -> Result<Self> {
        let truths = test_states
            .par_iter()
            .enumerate()
            .map(|(index, x)| {
                rollout_truth(map, x, horizon).map_err(|e| Error::AtState {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tm, dict, test_states, &truths, horizon, rank)
    }

    pub fn model(&self) -> &TransformedModel {
        &self.tm
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn test_count(&self) -> usize {
        self.targets.len()
    }

    pub fn complement_dim(&self) -> usize {
        self.tm.complement_dim()
    }

    fn check_point(&self, u: &StiefelPoint) -> Result<()> {
        if u.matrix().shape() != (self.complement_dim(), self.rank) {
            return Err(Error::Dimension(format!(
                "U is {:?}, expected {}x{}",
                u.matrix().shape(),
                self.complement_dim(),
                self.rank
            )));
        }
        Ok(())
    }

    fn rollout(&self, ubar: &DMatrix<f64>, f: &DMatrix<f64>, i: usize) -> Rollout {
        let mut z = ubar.tr_mul(&self.lifted.column(i));
        let mut states = Vec::with_capacity(self.horizon);
        let mut errors = Vec::with_capacity(self.horizon);
        let mut sq_error = 0.0;
        for k in 0..self.horizon {
            let next = f * &z;
            states.push(std::mem::replace(&mut z, next));
            let e = &self.coord * &z - self.targets[i].column(k);
            sq_error += e.norm_squared();
            errors.push(e);
        }
        Rollout { states, errors, sq_error }
    }

    /// `g_N` at a Stiefel point.
    pub fn evaluate(&self, u: &StiefelPoint) -> Result<ObjectiveValue> {
        self.check_point(u)?;
        Ok(self.value_extension(u.matrix()))
    }

    /// The smooth extension at any `d x r` matrix.
    pub fn value_extension(&self, u: &DMatrix<f64>) -> ObjectiveValue {
        let ubar = block_diag_identity(self.tm.s, u);
        let f = ubar.tr_mul(&(&self.a_t * &ubar));
        let scale = 1.0 / (2.0 * self.horizon as f64);
        let per_trajectory: Vec<f64> = (0..self.test_count())
            .into_par_iter()
            .map(|i| self.rollout(&ubar, &f, i).sq_error * scale)
            .collect();
        let value = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
        ObjectiveValue { value, per_trajectory }
    }

    /// Euclidean gradient of the smooth extension, by a backward sweep
    /// through `z(k+1) = F z(k)` with `F = Ubar^T A_E^T Ubar`.
    pub fn euclidean_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.tm.s;
        let l = s + u.ncols();
        let ubar = block_diag_identity(s, u);
        let f = ubar.tr_mul(&(&self.a_t * &ubar));
        let f_t = f.transpose();
        let w = 1.0 / (self.test_count() * self.horizon) as f64;

        let parts: Vec<(DMatrix<f64>, DVector<f64>)> = (0..self.test_count())
            .into_par_iter()
            .map(|i| {
                let run = self.rollout(&ubar, &f, i);
                let mut g_f = DMatrix::zeros(l, l);
                let mut lambda = DVector::zeros(l);
                for k in (0..self.horizon).rev() {
                    lambda += self.coord.tr_mul(&run.errors[k]) * w;
                    g_f.ger(1.0, &lambda, &run.states[k], 1.0);
                    lambda = &f_t * lambda;
                }
                (g_f, lambda)
            })
            .collect();

        let mut g_f = DMatrix::zeros(l, l);
        let mut lambda0 = DMatrix::zeros(l, self.test_count());
        for (i, (g, lam)) in parts.into_iter().enumerate() {
            g_f += g;
            lambda0.set_column(i, &lam);
        }
        let a = &self.tm.a_e;
        let grad_ubar = &self.a_t * &ubar * g_f.transpose() + a * &ubar * &g_f + &self.lifted * lambda0.transpose();
        grad_ubar.view((s, s), (u.nrows(), u.ncols())).into_owned()
    }

    pub fn riemannian_gradient(&self, u: &StiefelPoint) -> Result<HorizontalVector> {
        self.check_point(u)?;
        let g = self.euclidean_gradient(u.matrix());
        Ok(HorizontalVector(horizontal_part(u.matrix(), &g)))
    }

    pub fn hessian_vector_at(&self, u: &StiefelPoint, v: &HorizontalVector) -> Result<HorizontalVector> {
        self.check_point(u)?;
        if v.0.shape() != u.matrix().shape() {
            return Err(Error::Dimension("direction shape does not match U".into()));
        }
        let g = self.euclidean_gradient(u.matrix());
        Ok(HorizontalVector(fd_hessian_vector(self, u.matrix(), &g, &v.0)))
    }
}

impl RiemannianProblem for ObjectiveContext {
    fn value(&self, u: &DMatrix<f64>) -> f64 {
        self.value_extension(u).value
    }

    fn euclidean_gradient(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        ObjectiveContext::euclidean_gradient(self, u)
    }
}
