//! Observables, monomial coordinate bases, the lift and the coordinate
//! matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real-valued function on state space.
pub trait Observable: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64]) -> f64;

    /// Exponent tuple when the observable is a monomial.
    fn exponents(&self) -> Option<&[u32]> {
        None
    }
}

/// `x^a = x_1^{a_1} ... x_n^{a_n}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

impl Observable for Monomial {
    fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&a, &v)| if a == 0 { acc } else { acc * v.powi(a as i32) })
    }

    fn exponents(&self) -> Option<&[u32]> {
        Some(&self.exponents)
    }
}

/// Serialisable description of a monomial dictionary, enough to rebuild
/// its lift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryDescriptor {
    pub n: usize,
    pub s: usize,
    pub exponents: Vec<Vec<u32>>,
}

/// Ordered basis `(psi_1, ..., psi_M)` of a finite-dimensional space of
/// observables. The first `s` elements span the protected subspace.
#[derive(Debug, Clone)]
pub struct Dictionary {
    n: usize,
    s: usize,
    observables: Vec<Arc<dyn Observable>>,
    coordinate_head: bool,
}

impl Dictionary {
    /// Builds a dictionary from arbitrary observables. `coordinate_head`
    /// asserts that `psi_k = x_k` for `k = 1..n`; it is verified on a few
    /// probe points.
    pub fn new(
        n: usize,
        s: usize,
        observables: Vec<Arc<dyn Observable>>,
        coordinate_head: bool,
    ) -> Result<Self> {
        let m = observables.len();
        if n == 0 || s < n || s > m {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n <= s <= M, got n={n}, s={s}, M={m}"
            )));
        }
        let dict = Self {
            n,
            s,
            observables,
            coordinate_head,
        };
        if coordinate_head {
            for probe in [0.37_f64, -1.3, 2.1] {
                let x: Vec<f64> = (0..n).map(|k| probe + 0.11 * k as f64).collect();
                for k in 0..n {
                    if dict.observables[k].eval(&x) != x[k] {
                        return Err(Error::InvalidArgument(format!(
                            "observable {k} is not the coordinate function x{}",
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(dict)
    }

    pub fn from_descriptor(desc: &DictionaryDescriptor) -> Result<Self> {
        if desc.exponents.iter().any(|e| e.len() != desc.n) {
            return Err(Error::Format("exponent tuple length differs from n".into()));
        }
        let head = (0..desc.n).all(|k| {
            desc.exponents
                .get(k)
                .is_some_and(|e| e.iter().enumerate().all(|(j, &a)| a == u32::from(j == k)))
        });
        let observables = desc
            .exponents
            .iter()
            .map(|e| Arc::new(Monomial::new(e.clone())) as Arc<dyn Observable>)
            .collect();
        Self::new(desc.n, desc.s, observables, head)
    }

    pub fn descriptor(&self) -> Result<DictionaryDescriptor> {
        let exponents = self
            .observables
            .iter()
            .map(|o| {
                o.exponents()
                    .map(<[u32]>::to_vec)
                    .ok_or_else(|| Error::InvalidArgument("only monomial dictionaries serialise".into()))
            })
            .collect::<Result<_>>()?;
        Ok(DictionaryDescriptor {
            n: self.n,
            s: self.s,
            exponents,
        })
    }

    /// Overrides the size of the protected head.
    pub fn with_protected_head(mut self, s: usize) -> Result<Self> {
        if s < self.n || s >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "protected head must satisfy n <= s < M, got s={s}, n={}, M={}",
                self.n,
                self.len()
            )));
        }
        self.s = s;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn protected_head(&self) -> usize {
        self.s
    }

    pub fn has_coordinate_head(&self) -> bool {
        self.coordinate_head
    }

    pub fn observables(&self) -> &[Arc<dyn Observable>] {
        &self.observables
    }

    pub fn lift(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.n);
        let xs = x.as_slice();
        DVector::from_iterator(self.len(), self.observables.iter().map(|o| o.eval(xs)))
    }

    /// Column `i` is `lift(states[i])`.
    pub fn lift_batch(&self, states: &[DVector<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len(), states.len());
        for (i, x) in states.iter().enumerate() {
            out.set_column(i, &self.lift(x));
        }
        out
    }

    /// `Pi_B = [I_n 0]`.
    pub fn coordinate_matrix(&self) -> Result<DMatrix<f64>> {
        if !self.coordinate_head {
            return Err(Error::InvalidArgument(
                "coordinate matrix needs a dictionary whose head is the coordinate functions".into(),
            ));
        }
        let mut pi = DMatrix::zeros(self.n, self.len());
        for k in 0..self.n {
            pi[(k, k)] = 1.0;
        }
        Ok(pi)
    }
}

/// All monomials in `n` variables of total degree at most `max_degree`.
///
/// Ordering: the coordinate functions `x_1, ..., x_n` first, then the rest by
/// ascending total degree with ties broken by descending exponent tuple
/// (`x1^2, x1 x2, x2^2`). The constant therefore sits right after the head.
/// The protected head defaults to `s = n`.
pub fn monomial_dictionary(n: usize, max_degree: u32) -> Result<Dictionary> {
    if n == 0 || max_degree == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and max_degree >= 1".into()));
    }
    let mut all = Vec::new();
    let mut current = vec![0u32; n];
    enumerate_exponents(0, max_degree, &mut current, &mut all);

    let is_coordinate =
        |e: &[u32]| e.iter().sum::<u32>() == 1;
    let mut head: Vec<Vec<u32>> = (0..n)
        .map(|k| (0..n).map(|j| u32::from(j == k)).collect())
        .collect();
    let mut tail: Vec<Vec<u32>> = all.into_iter().filter(|e| !is_coordinate(e)).collect();
    tail.sort_by(|a, b| {
        let (da, db) = (a.iter().sum::<u32>(), b.iter().sum::<u32>());
        da.cmp(&db).then_with(|| b.cmp(a))
    });
    head.append(&mut tail);

    let observables = head
        .into_iter()
        .map(|e| Arc::new(Monomial::new(e)) as Arc<dyn Observable>)
        .collect();
    Dictionary::new(n, n, observables, true)
}

fn enumerate_exponents(pos: usize, budget: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() {
        out.push(current.clone());
        return;
    }
    for a in 0..=budget {
        current[pos] = a;
        enumerate_exponents(pos + 1, budget - a, current, out);
    }
    current[pos] = 0;
}

/// `binomial(n + d, d)`, the number of monomials of degree at most `d`.
pub fn monomial_count(n: usize, max_degree: u32) -> usize {
    let d = max_degree as usize;
    (1..=d).fold(1usize, |acc, k| acc * (n + k) / k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        assert_eq!(monomial_dictionary(2, 7).unwrap().len(), 36);
        assert_eq!(monomial_dictionary(1, 1).unwrap().len(), 2);
        assert_eq!(monomial_dictionary(2, 2).unwrap().len(), 6);
        for n in 1..4 {
            for d in 1..6 {
                assert_eq!(monomial_dictionary(n, d).unwrap().len(), monomial_count(n, d));
            }
        }
    }

    #[test]
    fn degree_two_lift_ordering() {
        let dict = monomial_dictionary(2, 2).unwrap();
        let z = dict.lift(&DVector::from_row_slice(&[2.0, 3.0]));
        assert_eq!(z.as_slice(), &[2.0, 3.0, 1.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn lift_at_origin_is_constant_indicator() {
        let dict = monomial_dictionary(2, 4).unwrap();
        let z = dict.lift(&DVector::zeros(2));
        let ones: Vec<usize> = (0..z.len()).filter(|&i| z[i] != 0.0).collect();
        assert_eq!(ones, vec![2]);
        assert_eq!(z[2], 1.0);
    }

    #[test]
    fn coordinate_matrix_shapes() {
        let dict = monomial_dictionary(2, 7).unwrap();
        let pi = dict.coordinate_matrix().unwrap();
        assert_eq!(pi.shape(), (2, 36));
        assert_eq!(pi.view((0, 0), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert!(pi.columns(2, 34).iter().all(|v| *v == 0.0));

        let pure = Dictionary::new(
            2,
            2,
            vec![
                Arc::new(Monomial::new(vec![1, 0])) as Arc<dyn Observable>,
                Arc::new(Monomial::new(vec![0, 1])),
            ],
            true,
        )
        .unwrap();
        assert_eq!(pure.coordinate_matrix().unwrap(), DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn coordinate_matrix_requires_coordinate_head() {
        let dict = Dictionary::new(
            1,
            1,
            vec![
                Arc::new(Monomial::new(vec![2])) as Arc<dyn Observable>,
                Arc::new(Monomial::new(vec![1])),
            ],
            false,
        )
        .unwrap();
        assert!(dict.coordinate_matrix().is_err());
        // a false claim of a coordinate head is caught
        assert!(Dictionary::new(1, 1, dict.observables().to_vec(), true).is_err());
    }

    #[test]
    fn batch_lift_edge_cases() {
        let dict = monomial_dictionary(2, 3).unwrap();
        assert_eq!(dict.lift_batch(&[]).shape(), (10, 0));
        let x = DVector::from_row_slice(&[0.3, -0.2]);
        assert_eq!(dict.lift_batch(std::slice::from_ref(&x)).column(0), dict.lift(&x));
    }

    #[test]
    fn descriptor_round_trip() {
        let dict = monomial_dictionary(2, 3).unwrap().with_protected_head(3).unwrap();
        let desc = dict.descriptor().unwrap();
        let json = serde_json::to_string(&desc).unwrap();
        let back = Dictionary::from_descriptor(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.descriptor().unwrap(), desc);
        assert!(back.has_coordinate_head());
        assert_eq!(back.protected_head(), 3);
    }

    #[test]
    fn protected_head_bounds() {
        let dict = monomial_dictionary(2, 2).unwrap();
        assert!(dict.clone().with_protected_head(1).is_err());
        assert!(dict.clone().with_protected_head(6).is_err());
        assert!(dict.with_protected_head(5).is_ok());
    }

    proptest! {
        #[test]
        fn coordinate_matrix_inverts_lift(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64) {
            let dict = monomial_dictionary(2, 7).unwrap();
            let x = DVector::from_row_slice(&[x1, x2]);
            let back = dict.coordinate_matrix().unwrap() * dict.lift(&x);
            prop_assert_eq!(back, x);
        }

        #[test]
        fn batch_lift_matches_loop(seed in 0u64..1000) {
            let dict = monomial_dictionary(3, 3).unwrap();
            let states = crate::dynamics::sample_states(
                &crate::dynamics::DomainBox::symmetric(3, 1.0), 3, seed);
            let batch = dict.lift_batch(&states);
            for (i, x) in states.iter().enumerate() {
                prop_assert_eq!(batch.column(i).into_owned(), dict.lift(x));
            }
        }
    }
}
