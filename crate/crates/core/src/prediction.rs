//! Koopman linear systems, state read-out and prediction error measures.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::{rollout_truth, DiscreteMap, DomainBox, Trajectory};
use crate::edmd::{
    change_of_basis_compression, reduced_compression_matrix, reduced_coordinate_matrix,
    CompressionMatrix, TransformedModel,
};
use crate::error::{Error, Result};
use crate::linalg::{block_diag_identity, median};
use crate::manifold::StiefelPoint;

pub type LiftFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `z(t+1) = K^T z(t)`, `z(0) = lift(x0)`, read out as `x_hat = Pi z`.
#[derive(Clone)]
pub struct KoopmanLinearSystem {
    k: DMatrix<f64>,
    kt: DMatrix<f64>,
    lift: LiftFn,
    pi: DMatrix<f64>,
}

impl std::fmt::Debug for KoopmanLinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KoopmanLinearSystem")
            .field("k", &self.k)
            .field("pi", &self.pi)
            .finish_non_exhaustive()
    }
}

impl KoopmanLinearSystem {
    pub fn new(k: DMatrix<f64>, lift: LiftFn, pi: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() || pi.ncols() != k.nrows() {
            return Err(Error::Dimension(format!(
                "K is {:?}, coordinate matrix is {:?}",
                k.shape(),
                pi.shape()
            )));
        }
        let kt = k.transpose();
        Ok(Self { k, kt, lift, pi })
    }

    /// Full model relative to the dictionary basis `B`.
    pub fn from_dictionary(dict: &Dictionary, k_b: &CompressionMatrix) -> Result<Self> {
        let dict = dict.clone();
        let pi = dict.coordinate_matrix()?;
        Self::new(k_b.k.clone(), Arc::new(move |x| dict.lift(x)), pi)
    }

    /// Full model relative to the QR basis `E`.
    pub fn orthonormal(dict: &Dictionary, tm: &TransformedModel) -> Result<Self> {
        let pi = reduced_coordinate_matrix(tm, tm.complement_dim())?;
        let (dict, p_inv) = (dict.clone(), tm.p_inv.clone());
        let lift: LiftFn = Arc::new(move |x| {
            p_inv
                .solve_lower_triangular(&dict.lift(x))
                .expect("P^{-1} is nonsingular")
        });
        Self::new(tm.a_e.clone(), lift, pi)
    }

    /// Reduced model on `W = T (+) span(U)` relative to the reduced basis.
    pub fn reduced(dict: &Dictionary, tm: &TransformedModel, u: &StiefelPoint) -> Result<Self> {
        if u.ambient_dim() != tm.complement_dim() {
            return Err(Error::Dimension("U does not match the model's complement".into()));
        }
        let k = reduced_compression_matrix(&tm.a_e, tm.s, u.matrix());
        let pi = reduced_coordinate_matrix(tm, u.rank())?;
        let ubar_t = block_diag_identity(tm.s, u.matrix()).transpose();
        let (dict, p_inv) = (dict.clone(), tm.p_inv.clone());
        let lift: LiftFn = Arc::new(move |x| {
            &ubar_t
                * p_inv
                    .solve_lower_triangular(&dict.lift(x))
                    .expect("P^{-1} is nonsingular")
        });
        Self::new(k, lift, pi)
    }

    /// The same system in the basis reached through change of basis `P`:
    /// `K_E` via the change-of-basis formula, lift `P Psi`, `Pi_E = Pi_B P^{-1}`.
    pub fn change_basis(&self, p: &DMatrix<f64>) -> Result<Self> {
        let k_e = change_of_basis_compression(&self.k, p)?;
        let p_inv = p.clone().try_inverse().ok_or(Error::Singular)?;
        let pi_e = &self.pi * p_inv;
        let (inner, p) = (self.lift.clone(), p.clone());
        Self::new(k_e, Arc::new(move |x| &p * inner(x)), pi_e)
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn coordinate_matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.lift)(x)
    }
}

/// Lifted trajectory; row `t` is `z(t)`.
pub fn rollout_lifted(kls: &KoopmanLinearSystem, x0: &DVector<f64>, horizon: usize) -> DMatrix<f64> {
    let l = kls.dim();
    let mut z = kls.lift(x0);
    let mut out = DMatrix::zeros(horizon + 1, l);
    out.set_row(0, &z.transpose());
    for t in 1..=horizon {
        z = &kls.kt * z;
        out.set_row(t, &z.transpose());
    }
    out
}

pub fn predict_states(kls: &KoopmanLinearSystem, x0: &DVector<f64>, horizon: usize) -> Trajectory {
    let z = rollout_lifted(kls, x0, horizon);
    Trajectory {
        states: z * kls.pi.transpose(),
    }
}

fn check_rows(traj: &Trajectory, horizon: usize) -> Result<()> {
    if traj.states.nrows() < horizon + 1 {
        return Err(Error::LengthMismatch {
            needed: horizon + 1,
            got: traj.states.nrows(),
        });
    }
    Ok(())
}

/// `d_N = sum_{t=0}^{N} ||xi(t) - zeta(t)||_2`.
pub fn trajectory_distance(xi: &Trajectory, zeta: &Trajectory, horizon: usize) -> Result<f64> {
    check_rows(xi, horizon)?;
    check_rows(zeta, horizon)?;
    if xi.states.ncols() != zeta.states.ncols() {
        return Err(Error::Dimension("trajectories differ in state dimension".into()));
    }
    Ok((0..=horizon)
        .map(|t| (xi.states.row(t) - zeta.states.row(t)).norm())
        .sum())
}

/// `(1/N) sum_{t=0}^{N} ||truth(t) - pred(t)||_2`; the sum has `N + 1` terms.
pub fn mean_prediction_error(truth: &Trajectory, pred: &Trajectory, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok(trajectory_distance(truth, pred, horizon)? / horizon as f64)
}

/// Empirical invariance measure: the worst `d_N` over a finite test set.
pub fn invariance_estimate(
    kls: &KoopmanLinearSystem,
    map: &dyn DiscreteMap,
    test_states: &[DVector<f64>],
    horizon: usize,
) -> Result<f64> {
    if test_states.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let distances = test_states
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let truth = rollout_truth(map, x0, horizon).map_err(|e| Error::AtState {
                index,
                source: Box::new(e),
            })?;
            trajectory_distance(&truth, &predict_states(kls, x0, horizon), horizon)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(distances.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorReport {
    pub per_state: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub horizon: usize,
    /// Entries that overflowed or could not be evaluated; excluded from the
    /// statistics.
    pub nonfinite: usize,
}

impl PredictionErrorReport {
    pub fn from_errors(per_state: Vec<f64>, horizon: usize) -> Self {
        let finite: Vec<f64> = per_state.iter().copied().filter(|v| v.is_finite()).collect();
        let nonfinite = per_state.len() - finite.len();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            mean,
            median: median(&finite).unwrap_or(f64::NAN),
            max: finite.iter().copied().fold(f64::NAN, f64::max),
            per_state,
            horizon,
            nonfinite,
        }
    }
}

/// What `error_grid` does when the reference integrator fails at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    Abort,
    MarkInvalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub point: Vec<f64>,
    pub eps_full: f64,
    pub eps_reduced: f64,
    /// `eps_full - eps_reduced`.
    pub diff: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub domain: DomainBox,
    pub resolution: usize,
    pub cells: Vec<GridCell>,
    pub full: PredictionErrorReport,
    pub reduced: PredictionErrorReport,
}

/// Summary statistics of the per-cell difference field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub median_abs: f64,
    pub max_abs: f64,
    pub valid_cells: usize,
    pub invalid_cells: usize,
}

impl ErrorGrid {
    fn valid_diffs(&self) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.valid && !c.diff.is_nan())
            .map(|c| c.diff)
            .collect()
    }

    pub fn diff_summary(&self) -> DiffSummary {
        let d = self.valid_diffs();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        DiffSummary {
            mean: if d.is_empty() { f64::NAN } else { d.iter().sum::<f64>() / d.len() as f64 },
            median: median(&d).unwrap_or(f64::NAN),
            max: d.iter().copied().fold(f64::NAN, f64::max),
            median_abs: median(&abs).unwrap_or(f64::NAN),
            max_abs: abs.iter().copied().fold(f64::NAN, f64::max),
            valid_cells: self.cells.iter().filter(|c| c.valid).count(),
            invalid_cells: self.cells.iter().filter(|c| !c.valid).count(),
        }
    }

    /// Columns `x1..xn, eps_full, eps_reduced, diff`; invalid cells carry NaN.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.domain.dim();
        let mut header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
        header.extend(["eps_full", "eps_reduced", "diff"].map(String::from));
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row: Vec<String> = c.point.iter().map(|v| v.to_string()).collect();
            for v in [c.eps_full, c.eps_reduced, c.diff] {
                row.push(if c.valid { v.to_string() } else { "NaN".into() });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates both models' mean prediction errors at every node of a grid.
pub fn error_grid(
    full: &KoopmanLinearSystem,
    reduced: &KoopmanLinearSystem,
    map: &dyn DiscreteMap,
    domain: &DomainBox,
    resolution: usize,
    horizon: usize,
    policy: FailurePolicy,
) -> Result<ErrorGrid> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let nodes = domain.grid(resolution)?;
    let cells = nodes
        .par_iter()
        .map(|x0| {
            let point = x0.iter().copied().collect::<Vec<_>>();
            let truth = match rollout_truth(map, x0, horizon) {
                Ok(t) => t,
                Err(e) => {
                    return match policy {
                        FailurePolicy::Abort => Err(Error::AtGridNode {
                            point,
                            source: Box::new(e),
                        }),
                        FailurePolicy::MarkInvalid => {
                            log::warn!("reference trajectory failed at {point:?}: {e}");
                            Ok(GridCell {
                                point,
                                eps_full: f64::NAN,
                                eps_reduced: f64::NAN,
                                diff: f64::NAN,
                                valid: false,
                            })
                        }
                    };
                }
            };
            let eps_full = mean_prediction_error(&truth, &predict_states(full, x0, horizon), horizon)?;
            let eps_reduced =
                mean_prediction_error(&truth, &predict_states(reduced, x0, horizon), horizon)?;
            Ok(GridCell {
                point,
                eps_full,
                eps_reduced,
                diff: eps_full - eps_reduced,
                valid: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pick = |f: fn(&GridCell) -> f64| {
        cells
            .iter()
            .map(|c| if c.valid { f(c) } else { f64::NAN })
            .collect::<Vec<_>>()
    };
    Ok(ErrorGrid {
        full: PredictionErrorReport::from_errors(pick(|c| c.eps_full), horizon),
        reduced: PredictionErrorReport::from_errors(pick(|c| c.eps_reduced), horizon),
        domain: domain.clone(),
        resolution,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::monomial_dictionary;
    use crate::dynamics::{sample_states, LinearMap, TrainingSet};
    use crate::edmd::{build_data_matrices, full_edmd, qr_transform};
    use crate::linalg::max_abs;
    use crate::manifold::random_stiefel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_system() -> KoopmanLinearSystem {
        KoopmanLinearSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            Arc::new(|x: &DVector<f64>| x.clone()),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    fn linear_map() -> LinearMap {
        LinearMap {
            a: DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.95]),
        }
    }

    /// Degree-1 monomial model of a linear map: exactly invariant.
    fn linear_model() -> (crate::dictionary::Dictionary, TransformedModel, crate::edmd::DataMatrices) {
        let dict = monomial_dictionary(2, 1).unwrap();
        let map = linear_map();
        let xs = sample_states(&DomainBox::symmetric(2, 1.0), 50, 1);
        let ts = crate::dynamics::generate_pairs(&map, &xs).unwrap();
        let dm = build_data_matrices(&dict, &ts);
        (dict, qr_transform(&dm, 2, 2).unwrap(), dm)
    }

    #[test]
    fn scalar_rollout_and_prediction() {
        let kls = scalar_system();
        let x0 = DVector::from_element(1, 2.0);
        let z = rollout_lifted(&kls, &x0, 2);
        assert_eq!(z.as_slice(), &[2.0, 1.0, 0.5]);
        assert_eq!(predict_states(&kls, &x0, 2).states.as_slice(), &[2.0, 1.0, 0.5]);
    }

    #[test]
    fn identity_system_is_constant() {
        let kls = KoopmanLinearSystem::new(
            DMatrix::identity(3, 3),
            Arc::new(|x: &DVector<f64>| DVector::from_row_slice(&[x[0], x[0] * x[0], 1.0])),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        )
        .unwrap();
        let z = rollout_lifted(&kls, &DVector::from_element(1, 0.7), 4);
        for t in 1..5 {
            assert_eq!(z.row(t), z.row(0));
        }
    }

    #[test]
    fn invariant_dictionary_tracks_true_lift() {
        let (dict, _, dm) = linear_model();
        let k = full_edmd(&dm).unwrap();
        let kls = KoopmanLinearSystem::from_dictionary(&dict, &k).unwrap();
        let x0 = DVector::from_row_slice(&[0.4, -0.3]);
        let z = rollout_lifted(&kls, &x0, 10);
        let truth = rollout_truth(&linear_map(), &x0, 10).unwrap();
        for t in 0..=10 {
            let lifted = dict.lift(&truth.state(t));
            assert!((z.row(t).transpose() - lifted).norm() < 1e-8);
        }
    }

    #[test]
    fn read_out_at_time_zero_is_the_state() {
        let dict = monomial_dictionary(2, 4).unwrap();
        let xs = sample_states(&DomainBox::symmetric(2, 1.0), 100, 5);
        let ts = TrainingSet {
            inputs: xs.clone(),
            outputs: xs.iter().map(|x| x.map(|v| v.sin())).collect(),
        };
        let dm = build_data_matrices(&dict, &ts);
        let tm = qr_transform(&dm, 2, 2).unwrap();
        let u = random_stiefel(tm.complement_dim(), 3, 1).unwrap();
        let systems = [
            KoopmanLinearSystem::from_dictionary(&dict, &full_edmd(&dm).unwrap()).unwrap(),
            KoopmanLinearSystem::orthonormal(&dict, &tm).unwrap(),
            KoopmanLinearSystem::reduced(&dict, &tm, &u).unwrap(),
        ];
        for x0 in &xs {
            for kls in &systems {
                let pred = predict_states(kls, x0, 0);
                assert!((pred.state(0) - x0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn change_of_basis_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = monomial_dictionary(2, 3).unwrap();
        let xs = sample_states(&DomainBox::symmetric(2, 1.0), 80, 2);
        let ts = TrainingSet {
            inputs: xs.clone(),
            outputs: xs.iter().map(|x| DVector::from_row_slice(&[x[1], -x[0] + 0.1 * x[1] * x[1]])).collect(),
        };
        let k = full_edmd(&build_data_matrices(&dict, &ts)).unwrap();
        let kls_b = KoopmanLinearSystem::from_dictionary(&dict, &k).unwrap();
        let m = dict.len();
        let p = DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.3..0.3)) + DMatrix::identity(m, m);
        let kls_e = kls_b.change_basis(&p).unwrap();
        for x0 in xs.iter().take(5) {
            let zb = rollout_lifted(&kls_b, x0, 10);
            let ze = rollout_lifted(&kls_e, x0, 10);
            assert!(max_abs(&(ze.transpose() - &p * zb.transpose())) < 1e-8);
            let xb = predict_states(&kls_b, x0, 10);
            let xe = predict_states(&kls_e, x0, 10);
            assert!(max_abs(&(xb.states - xe.states)) < 1e-8);
        }
    }

    #[test]
    fn distance_examples() {
        let a = Trajectory {
            states: DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]),
        };
        assert_eq!(trajectory_distance(&a, &a, 2).unwrap(), 0.0);
        let b = Trajectory {
            states: a.states.add_scalar(0.25),
        };
        assert!((trajectory_distance(&a, &b, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(
            trajectory_distance(&a, &b, 3),
            Err(Error::LengthMismatch { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn distance_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Trajectory { states: DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0)) };
        let b = Trajectory { states: DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0)) };
        let mut oracle = 0.0;
        for t in 0..6 {
            let mut sq = 0.0;
            for j in 0..3 {
                sq += (a.states[(t, j)] - b.states[(t, j)]).powi(2);
            }
            oracle += f64::sqrt(sq);
        }
        assert!((trajectory_distance(&a, &b, 5).unwrap() - oracle).abs() < 1e-14);
        let eps = mean_prediction_error(&a, &b, 5).unwrap();
        assert!((eps - oracle / 5.0).abs() < 1e-14);
    }

    #[test]
    fn mean_error_uses_literal_prefactor() {
        let a = Trajectory { states: DMatrix::zeros(21, 2) };
        let b = Trajectory { states: DMatrix::from_element(21, 2, 0.3) };
        let delta = (0.18_f64).sqrt();
        assert!((mean_prediction_error(&a, &b, 20).unwrap() - 21.0 / 20.0 * delta).abs() < 1e-14);
        assert_eq!(mean_prediction_error(&a, &a, 20).unwrap(), 0.0);
        assert!(mean_prediction_error(&a, &b, 0).is_err());
    }

    #[test]
    fn invariance_estimate_examples() {
        let (dict, tm, _) = linear_model();
        let map = linear_map();
        let kls = KoopmanLinearSystem::orthonormal(&dict, &tm).unwrap();
        let tests = DomainBox::symmetric(2, 1.0).grid(5).unwrap();
        assert!(invariance_estimate(&kls, &map, &tests, 20).unwrap() <= 1e-6);
        assert!(invariance_estimate(&kls, &map, &[], 20).is_err());

        // a deliberately wrong model: compare against a loop oracle
        let wrong = KoopmanLinearSystem::new(
            DMatrix::identity(3, 3) * 0.8,
            Arc::new({
                let d = dict.clone();
                move |x| d.lift(x)
            }),
            dict.coordinate_matrix().unwrap(),
        )
        .unwrap();
        let single = invariance_estimate(&wrong, &map, &tests[3..4], 6).unwrap();
        let truth = rollout_truth(&map, &tests[3], 6).unwrap();
        let d = trajectory_distance(&truth, &predict_states(&wrong, &tests[3], 6), 6).unwrap();
        assert_eq!(single, d);
        let mut oracle: f64 = 0.0;
        for x0 in &tests {
            let truth = rollout_truth(&map, x0, 6).unwrap();
            oracle = oracle.max(trajectory_distance(&truth, &predict_states(&wrong, x0, 6), 6).unwrap());
        }
        assert_eq!(invariance_estimate(&wrong, &map, &tests, 6).unwrap(), oracle);
    }

    #[test]
    fn grid_of_identical_models_is_zero() {
        let (dict, tm, _) = linear_model();
        let kls = KoopmanLinearSystem::orthonormal(&dict, &tm).unwrap();
        let grid = error_grid(&kls, &kls, &linear_map(), &DomainBox::symmetric(2, 1.0), 2, 5, FailurePolicy::Abort)
            .unwrap();
        assert_eq!(grid.cells.len(), 4);
        assert!(grid.cells.iter().all(|c| c.diff == 0.0 && c.valid));
        let s = grid.diff_summary();
        assert_eq!((s.valid_cells, s.invalid_cells, s.max_abs), (4, 0, 0.0));
    }

    #[test]
    fn grid_failures_follow_policy() {
        struct Failing;
        impl DiscreteMap for Failing {
            fn dim(&self) -> usize {
                2
            }
            fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
                if x[0] > 0.5 {
                    Err(Error::StepSizeUnderflow { t: 0.0, h: 0.0 })
                } else {
                    Ok(x.clone())
                }
            }
        }
        let kls = KoopmanLinearSystem::new(
            DMatrix::identity(2, 2),
            Arc::new(|x: &DVector<f64>| x.clone()),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let domain = DomainBox::symmetric(2, 1.0);
        let err = error_grid(&kls, &kls, &Failing, &domain, 3, 2, FailurePolicy::Abort).unwrap_err();
        assert!(matches!(err, Error::AtGridNode { ref point, .. } if point[0] == 1.0));
        let grid = error_grid(&kls, &kls, &Failing, &domain, 3, 2, FailurePolicy::MarkInvalid).unwrap();
        assert_eq!(grid.diff_summary().invalid_cells, 3);
        assert_eq!(grid.full.nonfinite, 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        grid.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("x1,x2,eps_full,eps_reduced,diff\n"));
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn report_statistics() {
        let r = PredictionErrorReport::from_errors(vec![1.0, 3.0, f64::INFINITY, 2.0], 20);
        assert_eq!((r.mean, r.median, r.max, r.nonfinite), (2.0, 2.0, 3.0, 1));
    }
}
