//! Stage orchestration shared by the runner and the experiment harnesses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::fgen::{synthesize, train_generator, GeneratorConfig, StagePriors, TrainedGenerator};
use crate::numkit::{Matrix, Rng};
use crate::priors::{assign_nearest, centroids_of, estimate_prior_cpe, ClassPrior, PriorKind};
use crate::regress::{regress, train_regressor, RegressorConfig, RegressorModel, TrainedRegressor};
use crate::trace::LossTrace;
use crate::ver::{pretrain_ver, pretraining_pool, VerConfig, VerModel};
use crate::zsl_eval::{evaluate, train_fzsl, EvalReport, FzslConfig, SoftmaxClassifier};

/// Where CPE takes its initial per-class centroids from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSource {
    /// Means of features from a generator trained on seen classes only.
    Generated,
    /// Centroids of unseen samples grouped by the semantic row nearest to `R(x)`.
    Regressed,
}

impl fmt::Display for AnchorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorSource::Generated => "generated",
            AnchorSource::Regressed => "regressed",
        })
    }
}

impl FromStr for AnchorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generated" => Ok(Self::Generated),
            "regressed" => Ok(Self::Regressed),
            o => Err(Error::Config(format!("unknown anchor source {o:?} (generated|regressed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub ver: VerConfig,
    pub regressor: RegressorConfig,
    pub generator: GeneratorConfig,
    pub fzsl: FzslConfig,
    pub cpe_iters: usize,
    pub cpe_anchors: AnchorSource,
    /// Generated samples per unseen class when averaging CPE anchors.
    pub anchor_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ver: VerConfig::default(),
            regressor: RegressorConfig::default(),
            generator: GeneratorConfig::default(),
            fzsl: FzslConfig::default(),
            cpe_iters: 10,
            cpe_anchors: AnchorSource::Generated,
            anchor_samples: 100,
        }
    }
}

impl PipelineConfig {
    /// Gives every stage its own seed derived from `master`.
    pub fn with_master_seed(mut self, master: u64) -> Self {
        let root = Rng::new(master);
        self.ver.seed = root.fork(1).seed();
        self.regressor.seed = root.fork(2).seed();
        self.generator.seed = root.fork(3).seed();
        self.fzsl.classifier.seed = root.fork(4).seed();
        self
    }
}

/// Stage 1 on the pooled seen and unseen features.
pub fn train_ver_stage(ds: &SplitDataset, cfg: &VerConfig) -> Result<(VerModel, LossTrace)> {
    let v = ds.train_view();
    pretrain_ver(&pretraining_pool(v.xs, v.xu), cfg)
}

/// Initial centroids for CPE, one row per unseen class.
pub fn cpe_anchors(ds: &SplitDataset, ver: &VerModel, cfg: &PipelineConfig) -> Result<Matrix> {
    let view = ds.train_view();
    match cfg.cpe_anchors {
        AnchorSource::Generated => {
            let gcfg = GeneratorConfig {
                lambda_u1: 0.0,
                lambda_u2: 0.0,
                ..cfg.generator.clone()
            };
            let flat = StagePriors::same(ClassPrior::uniform(view.n_unseen_classes())?);
            let g = train_generator(&view, ver, None, &flat, &gcfg)?;
            let n = cfg.anchor_samples.max(1);
            let x = synthesize(&g.model, view.a_unseen, n, &mut Rng::new(gcfg.seed).fork(99))?;
            let labels: Vec<usize> = (0..view.n_unseen_classes()).flat_map(|k| std::iter::repeat_n(k, n)).collect();
            Ok(centroids_of(&x, &labels, &Matrix::zeros(view.n_unseen_classes(), view.d_x())))
        }
        AnchorSource::Regressed => {
            // a supervised-only regressor never samples a prior
            let rcfg = RegressorConfig {
                use_critic: false,
                lambda_r: 0.0,
                ..cfg.regressor.clone()
            };
            let flat = ClassPrior::uniform(view.n_unseen_classes())?;
            let r = train_regressor(&view, ver, &flat, &rcfg)?;
            let assign = assign_nearest(&regress(&r.model, ver, view.xu)?, view.a_unseen);
            let fallback = Matrix::vcat(&vec![&view.xu.mean_rows(); view.n_unseen_classes()]);
            Ok(centroids_of(view.xu, &assign, &fallback))
        }
    }
}

/// Prior of the requested kind. `GroundTruth` reads the hidden unseen labels
/// and exists for oracle-prior experiments only.
pub fn resolve_prior(kind: PriorKind, ds: &SplitDataset, ver: &VerModel, cfg: &PipelineConfig) -> Result<ClassPrior> {
    match kind {
        PriorKind::Uniform => ClassPrior::uniform(ds.n_unseen_classes()),
        PriorKind::GroundTruth => ds.ground_truth_prior(),
        PriorKind::Cpe => {
            let anchors = cpe_anchors(ds, ver, cfg)?;
            estimate_prior_cpe(ds.train_view().xu, &anchors, cfg.cpe_iters)
        }
    }
}

/// Stage 3, classifier training and evaluation.
#[derive(Clone, Debug)]
pub struct Stage3Run {
    pub generator: TrainedGenerator,
    pub classifier: SoftmaxClassifier,
    pub classifier_trace: LossTrace,
    pub report: EvalReport,
}

pub fn stage3_and_eval(
    ds: &SplitDataset,
    ver: &VerModel,
    reg: &RegressorModel,
    priors: &StagePriors,
    cfg: &PipelineConfig,
) -> Result<Stage3Run> {
    let generator = train_generator(&ds.train_view(), ver, Some(reg), priors, &cfg.generator)?;
    let (classifier, classifier_trace) = train_fzsl(&generator.model, reg, ver, ds, &cfg.fzsl)?;
    let report = evaluate(&classifier, reg, ver, ds, cfg.fzsl.mode, cfg.fzsl.semantic_source)?;
    Ok(Stage3Run {
        generator,
        classifier,
        classifier_trace,
        report,
    })
}

/// Stages 2 and 3 under one prior used everywhere.
#[derive(Clone, Debug)]
pub struct PriorRun {
    pub prior: ClassPrior,
    pub regressor: TrainedRegressor,
    pub stage3: Stage3Run,
}

pub fn run_with_prior(ds: &SplitDataset, ver: &VerModel, prior: ClassPrior, cfg: &PipelineConfig) -> Result<PriorRun> {
    let regressor = train_regressor(&ds.train_view(), ver, &prior, &cfg.regressor)?;
    let stage3 = stage3_and_eval(ds, ver, &regressor.model, &StagePriors::same(prior.clone()), cfg)?;
    Ok(PriorRun {
        prior,
        regressor,
        stage3,
    })
}
