//! The tuning loop.
//!
//! Each run embeds its prompts once, preprocesses the input once, and then
//! repeatedly evaluates the loss on `M(phi) * thumbnail`, estimates a
//! gradient, takes an optimizer step and projects back onto the feasible
//! set. Because the matrix and the resampler are both linear and nothing is
//! clamped inside the loop, evaluating on the thumbnail is the same as
//! evaluating on the full image and preprocessing afterwards.

mod config;
mod gradient;
mod trajectory;
mod update;

use std::ops::ControlFlow;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{
    ConfigError, GradientStrategy, OptimizeOn, OptimizerKind, TuneConfig, PLATEAU_MIN_IMPROVEMENT,
    PLATEAU_WINDOW,
};
pub use gradient::{estimate_gradient_fd, estimate_gradient_spsa, rademacher};
pub use trajectory::{
    read_jsonl, record_line, snapshot_at, IterationRecord, SnapshotRecord, Trajectory,
};
pub use update::{update_step, OptimizerState, BETA1, BETA2, EPS};

use crate::ccm::{self, CcmError, CcmMatrix, CcmParams};
use crate::embedding::{BackendDescriptor, EmbedError, EmbeddingBackend};
use crate::image::{preprocess_adjoint, preprocess_geometry, ImageError, PreprocessSpec, RgbImage};
use crate::objective::{LossEval, ObjectiveError, ObjectiveSpec, Targets};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] EmbedError),
    #[error("non-finite loss{}: {detail}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFiniteLoss {
        iteration: Option<usize>,
        detail: String,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Ccm(#[from] CcmError),
    #[error("run cancelled")]
    Cancelled,
}

impl TuneError {
    fn at(self, iteration: usize) -> Self {
        match self {
            TuneError::NonFiniteLoss { detail, .. } => TuneError::NonFiniteLoss {
                iteration: Some(iteration),
                detail,
            },
            other => other,
        }
    }
}

/// A failed run together with whatever history was recorded before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct TuneFailure {
    pub error: TuneError,
    pub trajectory: Trajectory,
}

impl From<TuneError> for TuneFailure {
    fn from(error: TuneError) -> Self {
        Self {
            error,
            trajectory: Trajectory::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub final_params: CcmParams,
    pub final_matrix: CcmMatrix,
    pub trajectory: Trajectory,
    pub config: TuneConfig,
    pub backend: BackendDescriptor,
    /// Strategy actually used after resolving `auto`.
    pub gradient: GradientStrategy,
    pub wall_time_s: f64,
}

/// Receives progress while a run is in flight.
pub trait TuneObserver {
    /// Called after every recorded iteration. Returning `Break` cancels the run.
    fn on_record(&mut self, _record: &IterationRecord) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    fn on_snapshot(&mut self, _snapshot: &SnapshotRecord) {}
}

impl TuneObserver for () {}

/// Embeds the objective's prompts.
pub fn embed_targets(objective: &ObjectiveSpec, backend: &dyn EmbeddingBackend) -> Result<Targets, TuneError> {
    Ok(match objective {
        ObjectiveSpec::Single { prompt } => Targets::Single(backend.embed_text(&prompt.render())?),
        ObjectiveSpec::TwoPrompt(t) => Targets::TwoPrompt {
            a: backend.embed_text(&t.prompt_a.render())?,
            b: backend.embed_text(&t.prompt_b.render())?,
            alpha: t.alpha,
            temperature: t.temperature,
        },
    })
}

/// Loss surface for one image, one objective and one backend.
pub struct Problem<'a> {
    backend: &'a dyn EmbeddingBackend,
    spec: PreprocessSpec,
    mode: OptimizeOn,
    source: RgbImage,
    targets: Targets,
}

/// One loss evaluation and the encoder input it was computed on.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossEval,
    pub encoder_input: RgbImage,
}

impl<'a> Problem<'a> {
    pub fn new(
        img: &RgbImage,
        targets: Targets,
        backend: &'a dyn EmbeddingBackend,
        mode: OptimizeOn,
    ) -> Result<Self, TuneError> {
        let spec = backend.descriptor().preprocess_spec();
        let source = match mode {
            OptimizeOn::Thumbnail => preprocess_geometry(img, &spec)?,
            OptimizeOn::FullImage => img.clone(),
        };
        Ok(Self {
            backend,
            spec,
            mode,
            source,
            targets,
        })
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn encoder_input(&self, params: &CcmParams) -> Result<RgbImage, TuneError> {
        let processed = ccm::apply(&params.materialize(), &self.source);
        Ok(match self.mode {
            OptimizeOn::Thumbnail => processed,
            OptimizeOn::FullImage => preprocess_geometry(&processed, &self.spec)?,
        })
    }

    pub fn evaluate(&self, params: &CcmParams) -> Result<Evaluation, TuneError> {
        let encoder_input = self.encoder_input(params)?;
        let emb = self.backend.embed_image(&encoder_input)?;
        let loss = self.targets.evaluate(&emb)?;
        if !loss.loss.is_finite() {
            return Err(TuneError::NonFiniteLoss {
                iteration: None,
                detail: format!("loss evaluated to {}", loss.loss),
            });
        }
        Ok(Evaluation {
            loss,
            encoder_input,
        })
    }

    /// Loss at raw (possibly infeasible) parameters.
    pub fn loss_at(&self, off_diag: &[f64; 6], tau: f64) -> Result<f64, TuneError> {
        let params = CcmParams {
            off_diag: *off_diag,
            tau,
        };
        Ok(self.evaluate(&params)?.loss.loss)
    }

    /// Chain rule through the objective, the backend pullback, the
    /// preprocessing adjoint (full-image mode only) and the matrix.
    pub fn analytic_gradient(&self, eval: &Evaluation) -> Result<[f64; 6], TuneError> {
        let grad_input = self
            .backend
            .image_pullback(&eval.encoder_input, &eval.loss.grad)?;
        let grad_source = match self.mode {
            OptimizeOn::Thumbnail => grad_input,
            OptimizeOn::FullImage => {
                preprocess_adjoint(&grad_input, self.source.width(), self.source.height(), &self.spec)?
            }
        };
        Ok(ccm::pullback(&self.source, &grad_source)?)
    }
}

/// Analytic gradient of the objective at `params` for a preprocessed thumbnail.
pub fn estimate_gradient_analytic(
    thumbnail: &RgbImage,
    params: &CcmParams,
    targets: &Targets,
    backend: &dyn EmbeddingBackend,
) -> Result<[f64; 6], TuneError> {
    let problem = Problem {
        backend,
        spec: PreprocessSpec::square(thumbnail.width()),
        mode: OptimizeOn::Thumbnail,
        source: thumbnail.clone(),
        targets: targets.clone(),
    };
    let eval = problem.evaluate(params)?;
    problem.analytic_gradient(&eval)
}

fn record_for(iter: usize, eval: &Evaluation) -> IterationRecord {
    IterationRecord {
        iter,
        loss: eval.loss.loss,
        sim_a: eval.loss.sim_a,
        sim_b: eval.loss.sim_b,
        p_a: eval.loss.p_a,
    }
}

pub fn tune(img: &RgbImage, config: &TuneConfig, backend: &dyn EmbeddingBackend) -> Result<TuneResult, TuneFailure> {
    tune_with_observer(img, config, backend, &mut ())
}

pub fn tune_with_observer(
    img: &RgbImage,
    config: &TuneConfig,
    backend: &dyn EmbeddingBackend,
    observer: &mut dyn TuneObserver,
) -> Result<TuneResult, TuneFailure> {
    let started = Instant::now();
    config.validate().map_err(TuneError::from)?;
    let descriptor = backend.descriptor();
    let strategy = config.resolve_gradient(&descriptor);
    if strategy == GradientStrategy::Analytic && !descriptor.supports_pullback {
        return Err(TuneError::Backend(EmbedError::Unsupported(format!(
            "analytic gradients need a backend with pullbacks; `{}` has none",
            descriptor.name
        )))
        .into());
    }
    let targets = embed_targets(&config.objective, backend)?;
    let problem = Problem::new(img, targets, backend, config.optimize_on)?;

    let mut trajectory = Trajectory::default();
    match run_loop(&problem, config, strategy, observer, &mut trajectory) {
        Ok(final_params) => Ok(TuneResult {
            final_matrix: final_params.materialize(),
            final_params,
            trajectory,
            config: config.clone(),
            backend: descriptor,
            gradient: strategy,
            wall_time_s: started.elapsed().as_secs_f64(),
        }),
        Err(error) => Err(TuneFailure { error, trajectory }),
    }
}

fn run_loop(
    problem: &Problem<'_>,
    config: &TuneConfig,
    strategy: GradientStrategy,
    observer: &mut dyn TuneObserver,
    trajectory: &mut Trajectory,
) -> Result<CcmParams, TuneError> {
    let tau = config.tau;
    let mut params = CcmParams::zeros(tau);
    let mut state = OptimizerState::new(config.optimizer, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut eval = problem.evaluate(&params).map_err(|e| e.at(0))?;
    let mut push = |k: usize, eval: &Evaluation, params: &CcmParams, snapshot: bool, trajectory: &mut Trajectory| {
        let rec = record_for(k, eval);
        if eval.encoder_input.out_of_range_fraction() > 0.0 {
            trajectory.out_of_range_iterations += 1;
        }
        trajectory.records.push(rec.clone());
        if snapshot {
            let snap = SnapshotRecord::new(k, params);
            observer.on_snapshot(&snap);
            trajectory.snapshots.push(snap);
        }
        observer.on_record(&rec)
    };
    if push(0, &eval, &params, true, trajectory).is_break() {
        return Err(TuneError::Cancelled);
    }

    let mut best = eval.loss.loss;
    let mut best_iter = 0;
    for k in 1..=config.iterations {
        let grad = match strategy {
            GradientStrategy::Analytic => problem.analytic_gradient(&eval),
            GradientStrategy::FdCentral => {
                estimate_gradient_fd(&params.off_diag, config.fd_step, |p| problem.loss_at(p, tau))
            }
            GradientStrategy::Spsa => estimate_gradient_spsa(
                &params.off_diag,
                config.spsa_step,
                &mut rng,
                |p| problem.loss_at(p, tau),
            ),
            GradientStrategy::Auto => unreachable!("strategy is resolved before the loop"),
        }
        .map_err(|e| e.at(k))?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TuneError::NonFiniteLoss {
                iteration: Some(k),
                detail: format!("gradient {grad:?} is not finite"),
            });
        }

        update_step(&mut params.off_diag, &grad, &mut state, config.learning_rate);
        params = params.project();
        eval = problem.evaluate(&params).map_err(|e| e.at(k))?;

        let loss = eval.loss.loss;
        if loss < best - PLATEAU_MIN_IMPROVEMENT {
            best = loss;
            best_iter = k;
        }
        let plateau = config.early_stop && k - best_iter >= PLATEAU_WINDOW;
        let last = k == config.iterations || plateau;
        if push(k, &eval, &params, last || k % config.snapshot_every == 0, trajectory).is_break() {
            return Err(TuneError::Cancelled);
        }
        if plateau {
            break;
        }
    }
    Ok(params)
}

/// Applies a tuned matrix to a full-resolution image for display: the matrix
/// product followed by the clamp and 8-bit quantization of [`crate::image::encode_display`].
pub fn render_output(img: &RgbImage, matrix: &CcmMatrix) -> RgbImage {
    ccm::apply(matrix, img).quantized()
}
