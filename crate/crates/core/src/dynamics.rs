//! Benchmark dynamical systems, their sampled-time flow maps and data
//! generation (training pairs, ground-truth trajectories).

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous-time right-hand side `x' = f(x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);
}

/// Unforced, undamped Duffing oscillator: `x1' = x2`, `x2' = x1 - x1^3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Duffing;

impl VectorField for Duffing {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = x[0] - x[0] * x[0] * x[0];
    }
}

pub fn duffing_field() -> Duffing {
    Duffing
}

/// Conserved energy of the Duffing oscillator.
pub fn duffing_energy(x: &[f64]) -> f64 {
    0.5 * x[1] * x[1] - 0.5 * x[0] * x[0] + 0.25 * x[0].powi(4)
}

/// Linear field `x' = A x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension("linear field needs a square matrix".into()));
        }
        Ok(Self { a })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.a.nrows();
        for (i, d) in dx.iter_mut().enumerate().take(n) {
            *d = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }
}

/// A discrete-time map `x(t+1) = f(x(t))`.
pub trait DiscreteMap: Send + Sync {
    fn dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Linear discrete map `x+ = A x`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
}

impl DiscreteMap for LinearMap {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.a.ncols())?;
        Ok(&self.a * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorTolerances {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorTolerances {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 100_000,
        }
    }
}

/// The `dt`-flow of a vector field, evaluated with an adaptive
/// Dormand-Prince 5(4) integrator.
#[derive(Clone)]
pub struct SampledMap {
    field: Arc<dyn VectorField>,
    dt: f64,
    tolerances: IntegratorTolerances,
}

impl std::fmt::Debug for SampledMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledMap")
            .field("dim", &self.field.dim())
            .field("dt", &self.dt)
            .field("tolerances", &self.tolerances)
            .finish()
    }
}

impl SampledMap {
    pub fn new(field: Arc<dyn VectorField>, dt: f64) -> Result<Self> {
        Self::with_tolerances(field, dt, IntegratorTolerances::default())
    }

    pub fn with_tolerances(
        field: Arc<dyn VectorField>,
        dt: f64,
        tolerances: IntegratorTolerances,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling time must be positive, got {dt}")));
        }
        Ok(Self { field, dt, tolerances })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }
}

impl DiscreteMap for SampledMap {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(x, self.field.dim())?;
        let y = dopri5(self.field.as_ref(), x.as_slice(), self.dt, &self.tolerances)?;
        Ok(DVector::from_vec(y))
    }
}

fn check_len(x: &DVector<f64>, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension(format!("state has length {}, expected {n}", x.len())));
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `x' = f(x)` from `0` to `t_end` with step-size control.
fn dopri5(
    field: &dyn VectorField,
    x0: &[f64],
    t_end: f64,
    tol: &IntegratorTolerances,
) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    field.eval(&y, &mut k1);
    let mut t = 0.0;
    let mut h = (t_end / 10.0).min(t_end);
    let h_min = 1e-14 * t_end.max(1.0);
    let mut steps = 0usize;

    while t < t_end {
        if steps >= tol.max_steps {
            return Err(Error::TooManySteps(tol.max_steps));
        }
        steps += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        field.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field.eval(&tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field.eval(&tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        field.eval(&tmp, &mut k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        field.eval(&y_new, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::NonFiniteState(t));
        }

        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
        if h < h_min && t < t_end {
            return Err(Error::StepSizeUnderflow { t, h });
        }
    }
    Ok(y)
}

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The box `[-half_width, half_width]^n`.
    pub fn symmetric(n: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; n],
            upper: vec![half_width; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Tensor grid with `resolution` equispaced nodes per axis. The first
    /// axis varies fastest.
    pub fn grid(&self, resolution: usize) -> Result<Vec<DVector<f64>>> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
        }
        let n = self.dim();
        let total = resolution.pow(n as u32);
        let mut nodes = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let x = DVector::from_iterator(
                n,
                (0..n).map(|k| {
                    let idx = rem % resolution;
                    rem /= resolution;
                    let frac = idx as f64 / (resolution - 1) as f64;
                    self.lower[k] + frac * (self.upper[k] - self.lower[k])
                }),
            );
            nodes.push(x);
        }
        Ok(nodes)
    }
}

/// `count` i.i.d. uniform draws from `domain`, reproducible for a fixed seed
/// (ChaCha8 stream).
pub fn sample_states(domain: &DomainBox, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = domain.dim();
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                n,
                (0..n).map(|k| {
                    let u: f64 = rng.random();
                    domain.lower[k] + u * (domain.upper[k] - domain.lower[k])
                }),
            )
        })
        .collect()
}

/// Snapshot pairs `(x_i, f(x_i))`.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.inputs.first().map_or(0, |x| x.len());
        let mut header = vec!["i".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=n).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for (i, (x, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.extend(y.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn generate_pairs(map: &dyn DiscreteMap, states: &[DVector<f64>]) -> Result<TrainingSet> {
    let outputs = states
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            map.step(x).map_err(|e| Error::AtState {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        inputs: states.to_vec(),
        outputs,
    })
}

/// State trajectory; row `t` holds the state at time step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.nrows().saturating_sub(1)
    }

    pub fn state(&self, t: usize) -> DVector<f64> {
        self.states.row(t).transpose()
    }

    pub fn initial_state(&self) -> DVector<f64> {
        self.state(0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.states.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for t in 0..self.states.nrows() {
            let mut row = vec![t.to_string()];
            row.extend(self.states.row(t).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rollout_truth(map: &dyn DiscreteMap, x0: &DVector<f64>, horizon: usize) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check_len(x0, map.dim())?;
    let mut states = DMatrix::zeros(horizon + 1, x0.len());
    states.set_row(0, &x0.transpose());
    let mut x = x0.clone();
    for t in 1..=horizon {
        x = map.step(&x)?;
        states.set_row(t, &x.transpose());
    }
    Ok(Trajectory { states })
}

/// Ground-truth trajectories for many initial states, in input order.
pub fn rollout_truth_batch(
    map: &dyn DiscreteMap,
    x0s: &[DVector<f64>],
    horizon: usize,
) -> Result<Vec<Trajectory>> {
    x0s.par_iter()
        .enumerate()
        .map(|(index, x0)| {
            rollout_truth(map, x0, horizon).map_err(|e| Error::AtState {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
