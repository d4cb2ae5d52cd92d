//! Experiment configuration and the train / optimize / evaluate pipeline.
//!
//! Output directory layout:
//!
//! ```text
//! config.json        resolved configuration
//! model.kmdl         transformed EDMD model
//! subspace.kmdl      optimised and initial subspaces, reduced compression
//! trace.csv          trust-region iterations
//! grid_<name>.csv    per-node prediction errors for each evaluation grid
//! summary.json       aggregate statistics
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{monomial_dictionary, Dictionary};
use crate::dynamics::{
    duffing_field, generate_pairs, sample_states, DiscreteMap, DomainBox, IntegratorTolerances, LinearMap,
    SampledMap,
};
use crate::edmd::{build_data_matrices, full_edmd, qr_transform, subspace_compression};
use crate::error::{Error, Result};
use crate::manifold::random_stiefel;
use crate::model_io::{Provenance, SavedModel, SavedSubspace};
use crate::objective::ObjectiveContext;
use crate::optimizer::{trust_region, OptimizationTrace, OptimizerStatus, TrustRegionConfig};
use crate::prediction::{error_grid, invariance_estimate, DiffSummary, ErrorGrid, FailurePolicy, KoopmanLinearSystem};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.kmdl";
pub const SUBSPACE_FILE: &str = "subspace.kmdl";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Gram residual above which a trained model carries a warning.
pub const GRAM_WARNING: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    /// `x1' = x2`, `x2' = x1 - x1^3`, sampled every `dt`.
    Duffing {
        dt: f64,
        #[serde(default)]
        integrator: IntegratorTolerances,
    },
    /// Discrete map `x+ = A x`, rows of `A` given in order.
    Linear { matrix: Vec<Vec<f64>> },
}

impl SystemConfig {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemConfig::Duffing { .. } => 2,
            SystemConfig::Linear { matrix } => matrix.len(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SystemConfig::Duffing { .. } => "duffing",
            SystemConfig::Linear { .. } => "linear",
        }
    }

    pub fn dt(&self) -> Option<f64> {
        match self {
            SystemConfig::Duffing { dt, .. } => Some(*dt),
            SystemConfig::Linear { .. } => None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn DiscreteMap>> {
        match self {
            SystemConfig::Duffing { dt, integrator } => Ok(Arc::new(SampledMap::with_tolerances(
                Arc::new(duffing_field()),
                *dt,
                *integrator,
            )?)),
            SystemConfig::Linear { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::Config("linear system matrix must be square and nonempty".into()));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Ok(Arc::new(LinearMap {
                    a: DMatrix::from_row_slice(n, n, &flat),
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    pub max_degree: u32,
    /// Number of leading observables kept in every reduced model; defaults
    /// to the state dimension.
    #[serde(default)]
    pub protected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training pairs `L`.
    pub samples: usize,
    /// Test initial states `J` for the objective.
    pub test_states: usize,
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Base seed; training, test and initial-subspace streams use
    /// `seed`, `seed + 1` and `seed + 2`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub name: String,
    pub domain: DomainBox,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// Sampling box for training and test states.
    pub domain: DomainBox,
    pub dictionary: DictionaryConfig,
    pub data: DataConfig,
    /// Dimension `r` of the learned subspace.
    pub rank: usize,
    #[serde(default)]
    pub optimizer: TrustRegionConfig,
    #[serde(default)]
    pub evaluation: Vec<GridConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Full,
}

impl ExperimentConfig {
    /// The Duffing oscillator study: degree-7 monomials on `[-1, 1]^2`,
    /// `dt = 0.1`, `N = 20`, `r = 3`, with error grids on `[-1, 1]^2` and
    /// `[-2, 2]^2`.
    pub fn duffing(scale: Scale) -> Self {
        let (samples, test_states, resolution) = match scale {
            Scale::Desk => (2000, 50, 41),
            Scale::Full => (5000, 100, 81),
        };
        Self {
            system: SystemConfig::Duffing {
                dt: 0.1,
                integrator: IntegratorTolerances::default(),
            },
            domain: DomainBox::symmetric(2, 1.0),
            dictionary: DictionaryConfig {
                max_degree: 7,
                protected: None,
            },
            data: DataConfig {
                samples,
                test_states,
                horizon: 20,
                seed: 0,
            },
            rank: 3,
            optimizer: TrustRegionConfig::default(),
            evaluation: vec![
                GridConfig {
                    name: "unit".into(),
                    domain: DomainBox::symmetric(2, 1.0),
                    resolution,
                },
                GridConfig {
                    name: "wide".into(),
                    domain: DomainBox::symmetric(2, 2.0),
                    resolution,
                },
            ],
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn protected(&self) -> usize {
        self.dictionary.protected.unwrap_or(self.state_dim())
    }

    pub fn build_dictionary(&self) -> Result<Dictionary> {
        let dict = monomial_dictionary(self.state_dim(), self.dictionary.max_degree)?;
        dict.with_protected_head(self.protected())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let n = self.state_dim();
        if n == 0 {
            return bad("state dimension must be positive".into());
        }
        if let SystemConfig::Duffing { dt, .. } = self.system {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if self.domain.dim() != n {
            return bad(format!("domain has dimension {}, system has {n}", self.domain.dim()));
        }
        if self.dictionary.max_degree == 0 {
            return bad("max_degree must be at least 1".into());
        }
        let m = crate::dictionary::monomial_count(n, self.dictionary.max_degree);
        let s = self.protected();
        if s < n || s >= m {
            return bad(format!("need n <= protected < M, got n={n}, protected={s}, M={m}"));
        }
        if self.rank == 0 || self.rank > m - s {
            return bad(format!("need 1 <= rank <= M - protected = {}, got {}", m - s, self.rank));
        }
        let d = &self.data;
        if d.samples == 0 || d.test_states == 0 || d.horizon == 0 {
            return bad("samples, test_states and horizon must be positive".into());
        }
        for g in &self.evaluation {
            if g.domain.dim() != n {
                return bad(format!("grid `{}` has the wrong dimension", g.name));
            }
            if g.resolution < 2 {
                return bad(format!("grid `{}` needs resolution >= 2", g.name));
            }
            if g.name.is_empty() || !g.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("grid name `{}` must be alphanumeric", g.name));
            }
        }
        self.optimizer.validate(self.rank)
    }

    pub fn test_states(&self) -> Vec<DVector<f64>> {
        sample_states(&self.domain, self.data.test_states, self.data.seed.wrapping_add(1))
    }

    pub fn init_seed(&self) -> u64 {
        self.data.seed.wrapping_add(2)
    }
}

/// Samples training data and fits the transformed EDMD model.
pub fn train(cfg: &ExperimentConfig) -> Result<SavedModel> {
    cfg.validate()?;
    let dict = cfg.build_dictionary()?;
    let map = cfg.system.build()?;
    let xs = sample_states(&cfg.domain, cfg.data.samples, cfg.data.seed);
    let pairs = generate_pairs(map.as_ref(), &xs)?;
    let dm = build_data_matrices(&dict, &pairs);
    let model = qr_transform(&dm, cfg.protected(), cfg.state_dim())?;
    let k_dictionary = full_edmd(&dm)?.k;
    let gram_residual = model.gram_residual();
    log::info!(
        "trained model: M = {}, L = {}, Gram residual {gram_residual:e}",
        dict.len(),
        dm.sample_count()
    );
    let mut warnings = Vec::new();
    if gram_residual > GRAM_WARNING {
        let w = format!("Gram residual {gram_residual:e} exceeds {GRAM_WARNING:e}");
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(SavedModel {
        dictionary: dict.descriptor()?,
        model,
        k_dictionary,
        provenance: Provenance {
            system: cfg.system.label().into(),
            dt: cfg.system.dt(),
            samples: cfg.data.samples,
            domain: cfg.domain.clone(),
            seed: cfg.data.seed,
            gram_residual,
            warnings,
        },
    })
}

pub fn objective_context(cfg: &ExperimentConfig, saved: &SavedModel) -> Result<ObjectiveContext> {
    let dict = saved.dictionary()?;
    let map = cfg.system.build()?;
    ObjectiveContext::from_map(
        saved.model.clone(),
        &dict,
        map.as_ref(),
        &cfg.test_states(),
        cfg.data.horizon,
        cfg.rank,
    )
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub subspace: SavedSubspace,
    pub trace: OptimizationTrace,
}

/// Minimises the N-step prediction error over `r`-dimensional subspaces.
///
/// A numerical failure inside the optimiser is reported through
/// `trace.status`, with the last accepted iterate as the optimum.
pub fn optimize(cfg: &ExperimentConfig, saved: &SavedModel) -> Result<OptimizeOutput> {
    cfg.validate()?;
    let ctx = objective_context(cfg, saved)?;
    let u0 = random_stiefel(ctx.complement_dim(), cfg.rank, cfg.init_seed())?;
    let (u, trace) = trust_region(&ctx, u0.clone(), &cfg.optimizer)?;
    log::info!(
        "optimiser finished ({:?}) after {} iterations: g_N {:.6e} -> {:.6e}",
        trace.status,
        trace.records.len() - 1,
        trace.initial_value(),
        trace.final_value()
    );
    let subspace = SavedSubspace {
        k_reduced: subspace_compression(&saved.model, &u)?.k,
        objective_initial: ctx.evaluate(&u0)?.value,
        objective_final: ctx.evaluate(&u)?.value,
        optimum: u,
        initial: u0,
        protected: saved.model.s,
        seed: cfg.init_seed(),
        status: trace.status,
    };
    Ok(OptimizeOutput { subspace, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub nonfinite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub name: String,
    pub domain: DomainBox,
    pub resolution: usize,
    pub eps_full: ErrorStats,
    pub eps_reduced: ErrorStats,
    /// Statistics of `eps_full - eps_reduced`.
    pub diff: DiffSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub system: String,
    pub dictionary_size: usize,
    pub protected: usize,
    pub rank: usize,
    pub samples: usize,
    pub test_states: usize,
    pub horizon: usize,
    pub seed: u64,
    pub gram_residual: f64,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub optimizer_status: OptimizerStatus,
    /// Largest `d_N` over the test states.
    pub invariance_full: f64,
    pub invariance_reduced: f64,
    pub grids: Vec<GridSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub grids: Vec<(String, ErrorGrid)>,
    pub summary: Summary,
}

/// The full model in the orthonormal basis and the reduced model at the
/// optimum.
pub fn model_pair(saved: &SavedModel, subspace: &SavedSubspace) -> Result<(KoopmanLinearSystem, KoopmanLinearSystem)> {
    let dict = saved.dictionary()?;
    Ok((
        KoopmanLinearSystem::orthonormal(&dict, &saved.model)?,
        KoopmanLinearSystem::reduced(&dict, &saved.model, &subspace.optimum)?,
    ))
}

pub fn evaluate(cfg: &ExperimentConfig, saved: &SavedModel, subspace: &SavedSubspace) -> Result<Evaluation> {
    cfg.validate()?;
    let map = cfg.system.build()?;
    let (full, reduced) = model_pair(saved, subspace)?;
    let horizon = cfg.data.horizon;
    let tests = cfg.test_states();

    let mut grids = Vec::new();
    let mut summaries = Vec::new();
    for g in &cfg.evaluation {
        let grid = error_grid(&full, &reduced, map.as_ref(), &g.domain, g.resolution, horizon, FailurePolicy::MarkInvalid)?;
        let stats = |r: &crate::prediction::PredictionErrorReport| ErrorStats {
            mean: r.mean,
            median: r.median,
            max: r.max,
            nonfinite: r.nonfinite,
        };
        let diff = grid.diff_summary();
        log::info!(
            "grid {}: median eps_full {:.4e}, median eps_reduced {:.4e}, median diff {:.4e}",
            g.name,
            grid.full.median,
            grid.reduced.median,
            diff.median
        );
        summaries.push(GridSummary {
            name: g.name.clone(),
            domain: g.domain.clone(),
            resolution: g.resolution,
            eps_full: stats(&grid.full),
            eps_reduced: stats(&grid.reduced),
            diff,
        });
        grids.push((g.name.clone(), grid));
    }

    let summary = Summary {
        system: cfg.system.label().into(),
        dictionary_size: saved.model.dictionary_size(),
        protected: saved.model.s,
        rank: subspace.rank(),
        samples: saved.provenance.samples,
        test_states: cfg.data.test_states,
        horizon,
        seed: cfg.data.seed,
        gram_residual: saved.provenance.gram_residual,
        objective_initial: subspace.objective_initial,
        objective_final: subspace.objective_final,
        optimizer_status: subspace.status,
        invariance_full: invariance_estimate(&full, map.as_ref(), &tests, horizon)?,
        invariance_reduced: invariance_estimate(&reduced, map.as_ref(), &tests, horizon)?,
        grids: summaries,
        warnings: saved.provenance.warnings.clone(),
    };
    Ok(Evaluation { grids, summary })
}

pub fn grid_file(name: &str) -> String {
    format!("grid_{name}.csv")
}

/// `train`, persisting the config echo and the model under `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<SavedModel> {
    fs::create_dir_all(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let saved = train(cfg)?;
    saved.save(&out.join(MODEL_FILE))?;
    Ok(saved)
}

/// `optimize` on the model stored under `out`; the trace is written even
/// when the optimiser fails.
pub fn run_optimize(cfg: &ExperimentConfig, out: &Path) -> Result<OptimizeOutput> {
    let saved = SavedModel::load(&out.join(MODEL_FILE))?;
    let res = optimize(cfg, &saved)?;
    res.trace.write_csv(&out.join(TRACE_FILE))?;
    res.subspace.save(&out.join(SUBSPACE_FILE))?;
    Ok(res)
}

/// `evaluate` on the models stored under `out`.
pub fn run_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Evaluation> {
    let saved = SavedModel::load(&out.join(MODEL_FILE))?;
    let subspace = SavedSubspace::load(&out.join(SUBSPACE_FILE))?;
    let eval = evaluate(cfg, &saved, &subspace)?;
    for (name, grid) in &eval.grids {
        grid.write_csv(&out.join(grid_file(name)))?;
    }
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&eval.summary)? + "\n")?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: SavedModel,
    pub subspace: SavedSubspace,
    pub trace: OptimizationTrace,
    pub evaluation: Evaluation,
}

/// Runs all three stages, each reading back what the previous one wrote.
pub fn run_all(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    run_train(cfg, out)?;
    let opt = run_optimize(cfg, out)?;
    let evaluation = run_evaluate(cfg, out)?;
    Ok(ExperimentResult {
        model: SavedModel::load(&out.join(MODEL_FILE))?,
        subspace: opt.subspace,
        trace: opt.trace,
        evaluation,
    })
}

pub fn replicate_duffing(out: &Path, scale: Scale, seed: Option<u64>) -> Result<ExperimentResult> {
    let mut cfg = ExperimentConfig::duffing(scale);
    if let Some(seed) = seed {
        cfg.data.seed = seed;
    }
    cfg.output_dir = Some(out.to_path_buf());
    run_all(&cfg, out)
}
