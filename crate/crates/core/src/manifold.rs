//! Stiefel representatives of Grassmann points: horizontal projection, the
//! trace metric, QR retraction and principal-angle distance.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{identity_residual, numerical_rank, thin_qr};

/// Maximum `|U^T U - I|` accepted for a point on the manifold.
pub const STIEFEL_TOLERANCE: f64 = 1e-8;
/// Drift above which a point is re-orthonormalised on construction.
pub const REORTHONORMALIZE_DRIFT: f64 = 1e-12;

/// A `d x r` matrix with orthonormal columns, standing for its column space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    /// Accepts `u` if it is within `STIEFEL_TOLERANCE` of orthonormal;
    /// small drift is removed by re-orthonormalisation.
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        let (d, r) = u.shape();
        if r == 0 || r > d {
            return Err(Error::Dimension(format!("Stiefel point needs 1 <= r <= d, got {d}x{r}")));
        }
        let residual = orthonormality_residual(&u);
        if !(residual <= STIEFEL_TOLERANCE) {
            return Err(Error::OffManifold(residual));
        }
        if residual > REORTHONORMALIZE_DRIFT {
            return Ok(Self(thin_qr(&u)?.q));
        }
        Ok(Self(u))
    }

    /// Orthonormal basis of the column space of a full-column-rank `a`.
    pub fn orthonormalize(a: &DMatrix<f64>) -> Result<Self> {
        let (d, r) = a.shape();
        if r == 0 || r > d {
            return Err(Error::Dimension(format!("need 1 <= r <= d, got {d}x{r}")));
        }
        let qr = thin_qr(a)?;
        let rank = numerical_rank(&qr.r);
        if rank < r {
            return Err(Error::RankDeficient { rank, expected: r });
        }
        Ok(Self(qr.q))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

/// Tangent direction at a Stiefel point with `U^T V = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalVector(pub DMatrix<f64>);

impl HorizontalVector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

pub fn orthonormality_residual(u: &DMatrix<f64>) -> f64 {
    identity_residual(&(u.transpose() * u))
}

/// Seeded Gaussian matrix, orthonormalised by QR.
pub fn random_stiefel(d: usize, r: usize, seed: u64) -> Result<StiefelPoint> {
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!("need 1 <= r <= d, got d={d}, r={r}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, r, |_, _| StandardNormal.sample(&mut rng));
    StiefelPoint::orthonormalize(&g)
}

/// `(I - U U^T) W` for a plain matrix `u`.
pub fn horizontal_part(u: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    w - u * (u.transpose() * w)
}

pub fn project_horizontal(u: &StiefelPoint, w: &DMatrix<f64>) -> Result<HorizontalVector> {
    if u.matrix().shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "direction is {:?}, point is {:?}",
            w.shape(),
            u.matrix().shape()
        )));
    }
    Ok(HorizontalVector(horizontal_part(u.matrix(), w)))
}

/// `tr(V1^T V2)`.
pub fn metric(v1: &DMatrix<f64>, v2: &DMatrix<f64>) -> f64 {
    v1.dot(v2)
}

/// QR retraction: the orthonormal factor of `U + V`.
pub fn retract(u: &StiefelPoint, v: &HorizontalVector) -> Result<StiefelPoint> {
    if v.0.iter().all(|x| *x == 0.0) {
        return Ok(u.clone());
    }
    if u.matrix().shape() != v.0.shape() {
        return Err(Error::Dimension("retraction direction has wrong shape".into()));
    }
    let moved = u.matrix() + &v.0;
    if moved.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite retraction input".into()));
    }
    StiefelPoint::orthonormalize(&moved)
}

fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Euclidean norm of the principal-angle vector between two subspaces.
///
/// Angles are recovered with `atan2(sin, cos)` so that nearly equal
/// subspaces do not lose accuracy to `acos` near one.
pub fn subspace_distance(u1: &StiefelPoint, u2: &StiefelPoint) -> Result<f64> {
    let (a, b) = (u1.matrix(), u2.matrix());
    if a.shape() != b.shape() {
        return Err(Error::Dimension("subspaces differ in shape".into()));
    }
    let r = a.ncols();
    let cos = sorted_singular_values(&(a.transpose() * b));
    let sin = sorted_singular_values(&horizontal_part(a, b));
    let sq: f64 = (0..r)
        .map(|i| {
            let theta = sin[r - 1 - i].atan2(cos[i]);
            theta * theta
        })
        .sum();
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
        random_stiefel(r, r, seed).unwrap().into_matrix()
    }

    #[test]
    fn random_points_are_orthonormal() {
        for seed in 0..100 {
            let u = random_stiefel(7, 3, seed).unwrap();
            assert!(orthonormality_residual(u.matrix()) <= 1e-12);
        }
        let sq = random_stiefel(4, 4, 1).unwrap();
        assert!(identity_residual(&(sq.matrix() * sq.matrix().transpose())) < 1e-12);
        let v = random_stiefel(3, 1, 2).unwrap();
        assert!((v.matrix().norm() - 1.0).abs() < 1e-14);
        assert!(random_stiefel(2, 3, 0).is_err());
    }

    #[test]
    fn off_manifold_rejected_and_drift_repaired() {
        let mut u = DMatrix::<f64>::identity(3, 2);
        u[(0, 0)] = 1.1;
        assert!(matches!(StiefelPoint::new(u), Err(Error::OffManifold(_))));
        let mut u = DMatrix::<f64>::identity(3, 2);
        u[(2, 0)] = 1e-10;
        let p = StiefelPoint::new(u).unwrap();
        assert!(orthonormality_residual(p.matrix()) < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let u = StiefelPoint::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let w = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let v = project_horizontal(&u, &w).unwrap();
        assert_eq!(v.0.as_slice(), &[0.0, 2.0, 3.0]);
        assert_eq!(project_horizontal(&u, &v.0).unwrap(), v);
    }

    #[test]
    fn projector_properties() {
        let u = random_stiefel(6, 2, 3).unwrap();
        let w1 = random_stiefel(6, 2, 4).unwrap().into_matrix() * 3.0;
        let w2 = random_stiefel(6, 2, 5).unwrap().into_matrix();
        let p1 = horizontal_part(u.matrix(), &w1);
        // horizontal
        assert!((u.matrix().transpose() * &p1).norm() < 1e-14);
        // idempotent
        assert!((horizontal_part(u.matrix(), &p1) - &p1).norm() < 1e-14);
        // self-adjoint in the trace metric
        let lhs = metric(&p1, &w2);
        let rhs = metric(&w1, &horizontal_part(u.matrix(), &w2));
        assert!((lhs - rhs).abs() < 1e-13);
        // annihilates vertical directions U A
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 4.0]);
        assert!(horizontal_part(u.matrix(), &(u.matrix() * a)).norm() < 1e-14);
    }

    #[test]
    fn metric_properties() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 2.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, -2.0, 7.0]);
        let entrywise: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        assert!((metric(&a, &b) - entrywise).abs() < 1e-15);
        assert!((metric(&a, &b) - (a.transpose() * &b).trace()).abs() < 1e-14);
        assert!(metric(&a, &a) > 0.0);
        assert_eq!(metric(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)), 0.0);
        let (s, t) = (2.5, -0.7);
        let lhs = metric(&(&a * s + &b * t), &c);
        let rhs = s * metric(&a, &c) + t * metric(&b, &c);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn retraction_basics() {
        let u = random_stiefel(5, 2, 11).unwrap();
        let zero = HorizontalVector(DMatrix::zeros(5, 2));
        assert_eq!(retract(&u, &zero).unwrap(), u);
        let w = random_stiefel(5, 2, 12).unwrap().into_matrix();
        let v = project_horizontal(&u, &w).unwrap();
        let moved = retract(&u, &v).unwrap();
        assert!(orthonormality_residual(moved.matrix()) < 1e-12);
    }

    #[test]
    fn retraction_is_first_order() {
        let u = random_stiefel(6, 2, 21).unwrap();
        let w = random_stiefel(6, 2, 22).unwrap().into_matrix();
        let v = horizontal_part(u.matrix(), &w);
        let ts = [1e-2, 1e-3, 1e-4];
        let errs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let step = HorizontalVector(&v * t);
                (retract(&u, &step).unwrap().into_matrix() - (u.matrix() + &v * t)).norm()
            })
            .collect();
        // log-log slope between successive t
        for i in 0..2 {
            let slope = (errs[i].ln() - errs[i + 1].ln()) / (ts[i].ln() - ts[i + 1].ln());
            assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
        }
    }

    #[test]
    fn distance_examples() {
        let u = random_stiefel(6, 3, 31).unwrap();
        let r = random_orthogonal(3, 32);
        let ur = StiefelPoint::new(u.matrix() * r).unwrap();
        assert!(subspace_distance(&u, &ur).unwrap() < 1e-10);

        let e1 = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let e2 = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert!((subspace_distance(&e1, &e2).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-14);

        for seed in 0..10 {
            let a = random_stiefel(5, 2, 100 + seed).unwrap();
            let b = random_stiefel(5, 2, 200 + seed).unwrap();
            let dab = subspace_distance(&a, &b).unwrap();
            let dba = subspace_distance(&b, &a).unwrap();
            assert!((dab - dba).abs() < 1e-12);
            let q = random_orthogonal(2, 300 + seed);
            let bq = StiefelPoint::new(b.matrix() * q).unwrap();
            assert!((subspace_distance(&a, &bq).unwrap() - dab).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_of_small_rotation_is_the_angle() {
        let t: f64 = 1e-7;
        let a = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let b = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()])).unwrap();
        assert!((subspace_distance(&a, &b).unwrap() - t).abs() < 1e-15);
    }
}
