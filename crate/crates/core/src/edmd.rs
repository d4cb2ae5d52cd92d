//! EDMD data matrices and compressions.
//!
//! Two routes to each compression are provided. The production route goes
//! through a thin QR factorisation of `G_B^T`: the resulting basis `E` has
//! an identity data Gram matrix, so compressions onto any subspace
//! `T (+) S` reduce to `Ubar^T A_E Ubar` with `Ubar = blkdiag(I_s, U)`. The
//! bilinear-form route solves `H K = A` with `H = G G^T`, `A = G S^T` and
//! serves as an independent check.

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::dynamics::TrainingSet;
use crate::error::{Error, Result};
use crate::linalg::{block_diag_identity, identity_residual, numerical_rank, solve_lower, solve_upper, thin_qr};
use crate::manifold::StiefelPoint;

/// Lifted snapshot matrices: `g[:, i] = Psi(x_i)`, `s[:, i] = Psi(y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub g: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl DataMatrices {
    pub fn new(g: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        if g.shape() != s.shape() {
            return Err(Error::Dimension(format!(
                "G is {:?} but S is {:?}",
                g.shape(),
                s.shape()
            )));
        }
        Ok(Self { g, s })
    }

    pub fn dictionary_size(&self) -> usize {
        self.g.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.g.ncols()
    }

    /// True when there are fewer samples than observables.
    pub fn is_underdetermined(&self) -> bool {
        self.sample_count() < self.dictionary_size()
    }
}

pub fn build_data_matrices(dict: &Dictionary, data: &TrainingSet) -> DataMatrices {
    let dm = DataMatrices {
        g: dict.lift_batch(&data.inputs),
        s: dict.lift_batch(&data.outputs),
    };
    if dm.is_underdetermined() {
        log::warn!(
            "only {} training pairs for {} observables; G_B cannot have full row rank",
            dm.sample_count(),
            dm.dictionary_size()
        );
    }
    dm
}

/// Which basis a compression matrix is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// The dictionary basis `B`.
    Dictionary,
    /// The QR-orthonormalised basis `E`.
    Orthonormal,
    /// `(phi_1..phi_s, U-combinations of the rest)` for a rank-`r` subspace.
    Reduced { rank: usize },
    /// Any other basis (oracle computations).
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionMatrix {
    pub k: DMatrix<f64>,
    pub basis: Basis,
}

impl CompressionMatrix {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }
}

fn factor_data(g: &DMatrix<f64>) -> Result<crate::linalg::ThinQr> {
    let (m, l) = g.shape();
    if l < m {
        return Err(Error::RankDeficient { rank: l, expected: m });
    }
    let qr = thin_qr(&g.transpose())?;
    let rank = numerical_rank(&qr.r);
    if rank < m {
        return Err(Error::RankDeficient { rank, expected: m });
    }
    Ok(qr)
}

/// `K_B = (G G^T)^{-1} G S^T`, computed as the least-squares solution of
/// `G^T K = S^T` through a QR factorisation of `G^T`.
pub fn full_edmd(dm: &DataMatrices) -> Result<CompressionMatrix> {
    let qr = factor_data(&dm.g)?;
    let rhs = qr.q.transpose() * dm.s.transpose();
    Ok(CompressionMatrix {
        k: solve_upper(&qr.r, &rhs)?,
        basis: Basis::Dictionary,
    })
}

/// EDMD model in the QR basis `E`, with change of basis `P = R^{-T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedModel {
    /// `G_E = Q^T`, `M x L`.
    pub g_e: DMatrix<f64>,
    /// `S_E = P S_B`, `M x L`.
    pub s_e: DMatrix<f64>,
    /// `P = R^{-T}`.
    pub p: DMatrix<f64>,
    /// `P^{-1} = R^T`, lower triangular.
    pub p_inv: DMatrix<f64>,
    /// Leading `n x n` block of `R^T`.
    pub q11: DMatrix<f64>,
    /// `A_E = G_E S_E^T`, which is also `K_E`.
    pub a_e: DMatrix<f64>,
    pub s: usize,
    pub n: usize,
}

pub fn qr_transform(dm: &DataMatrices, s: usize, n: usize) -> Result<TransformedModel> {
    let m = dm.dictionary_size();
    if n == 0 || s < n || s > m {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n <= s <= M, got n={n}, s={s}, M={m}"
        )));
    }
    let qr = factor_data(&dm.g)?;
    let p_inv = qr.r.transpose();
    let s_e = solve_lower(&p_inv, &dm.s)?;
    TransformedModel::from_parts(qr.q.transpose(), s_e, p_inv, s, n)
}

impl TransformedModel {
    /// Rebuilds the derived fields (`P`, `Q11`, `A_E`) from the stored ones.
    pub fn from_parts(
        g_e: DMatrix<f64>,
        s_e: DMatrix<f64>,
        p_inv: DMatrix<f64>,
        s: usize,
        n: usize,
    ) -> Result<Self> {
        let m = p_inv.nrows();
        if !p_inv.is_square() || g_e.nrows() != m || s_e.shape() != g_e.shape() {
            return Err(Error::Dimension("inconsistent transformed model blocks".into()));
        }
        if n == 0 || s < n || s > m {
            return Err(Error::InvalidArgument(format!("need 1 <= n <= s <= M, got n={n}, s={s}, M={m}")));
        }
        let p = solve_lower(&p_inv, &DMatrix::identity(m, m))?;
        let q11 = p_inv.view((0, 0), (n, n)).into_owned();
        let a_e = &g_e * s_e.transpose();
        Ok(Self {
            g_e,
            s_e,
            p,
            p_inv,
            q11,
            a_e,
            s,
            n,
        })
    }

    pub fn dictionary_size(&self) -> usize {
        self.p_inv.nrows()
    }

    /// Dimension `d = M - s` of the complement `R` searched over.
    pub fn complement_dim(&self) -> usize {
        self.dictionary_size() - self.s
    }

    /// `max |G_E G_E^T - I|`.
    pub fn gram_residual(&self) -> f64 {
        identity_residual(&(&self.g_e * self.g_e.transpose()))
    }

    /// `P z` via a triangular solve with `P^{-1}`.
    pub fn apply_p(&self, z: &DVector<f64>) -> DVector<f64> {
        self.p_inv
            .solve_lower_triangular(z)
            .expect("P^{-1} is nonsingular by construction")
    }

    /// Full compression `K_E = G_E S_E^T` in basis `E`.
    pub fn full_compression(&self) -> CompressionMatrix {
        CompressionMatrix {
            k: self.a_e.clone(),
            basis: Basis::Orthonormal,
        }
    }
}

/// `Ubar^T A_E Ubar` for any `d x r` matrix `u`, without a manifold check.
pub fn reduced_compression_matrix(a_e: &DMatrix<f64>, s: usize, u: &DMatrix<f64>) -> DMatrix<f64> {
    let ubar = block_diag_identity(s, u);
    ubar.transpose() * a_e * ubar
}

/// Compression onto `W = T (+) span(U)` relative to the reduced basis.
pub fn subspace_compression(tm: &TransformedModel, u: &StiefelPoint) -> Result<CompressionMatrix> {
    if u.ambient_dim() != tm.complement_dim() {
        return Err(Error::Dimension(format!(
            "U has {} rows, complement has dimension {}",
            u.ambient_dim(),
            tm.complement_dim()
        )));
    }
    // re-validate: StiefelPoint may have been built long ago from a drifting matrix
    let u = StiefelPoint::new(u.matrix().clone())?;
    Ok(CompressionMatrix {
        k: reduced_compression_matrix(&tm.a_e, tm.s, u.matrix()),
        basis: Basis::Reduced { rank: u.rank() },
    })
}

/// `H = G G^T`, `A = G S^T`.
pub fn bilinear_matrices_from_data(dm: &DataMatrices) -> (DMatrix<f64>, DMatrix<f64>) {
    (&dm.g * dm.g.transpose(), &dm.g * dm.s.transpose())
}

/// Solves `H K = A` for symmetric positive definite `H` (Cholesky).
pub fn bilinear_compression(h: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<CompressionMatrix> {
    if !h.is_square() || h.nrows() != a.nrows() {
        return Err(Error::Dimension("H must be square with as many rows as A".into()));
    }
    let scale = h.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if (h - h.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = h.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(CompressionMatrix {
        k: chol.solve(a),
        basis: Basis::Other,
    })
}

/// `(Ubar^T H Ubar)^{-1} Ubar^T A Ubar`.
pub fn subspace_bilinear_compression(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    ubar: &DMatrix<f64>,
) -> Result<CompressionMatrix> {
    if ubar.nrows() != h.nrows() {
        return Err(Error::Dimension("Ubar rows must match H".into()));
    }
    let h_red = ubar.transpose() * h * ubar;
    let h_red = 0.5 * (&h_red + h_red.transpose());
    let a_red = ubar.transpose() * a * ubar;
    let chol = h_red.cholesky().ok_or(Error::Singular)?;
    Ok(CompressionMatrix {
        k: chol.solve(&a_red),
        basis: Basis::Other,
    })
}

/// Re-expresses a compression in the basis reached through change of basis
/// `P`: `K_E = (P K_B^T P^{-1})^T = P^{-T} K_B P^T`.
pub fn change_of_basis_compression(k_b: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !p.is_square() || p.shape() != k_b.shape() {
        return Err(Error::Dimension("P and K_B must be square of equal size".into()));
    }
    let lu = p.transpose().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular);
    }
    lu.solve(&(k_b * p.transpose())).ok_or(Error::Singular)
}

/// `[Q11 0]`, the coordinate matrix of the reduced basis for rank `r`.
pub fn reduced_coordinate_matrix(tm: &TransformedModel, r: usize) -> Result<DMatrix<f64>> {
    if tm.s < tm.n {
        return Err(Error::InvalidArgument("protected head must contain the coordinates (s >= n)".into()));
    }
    let mut pi = DMatrix::zeros(tm.n, tm.s + r);
    pi.view_mut((0, 0), (tm.n, tm.n)).copy_from(&tm.q11);
    Ok(pi)
}
