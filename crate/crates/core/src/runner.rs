//! Subcommand execution: each stage reads its upstream checkpoints from the
//! output directory and writes its own artifacts next to them.
//!
//! Every artifact carries the config fingerprint and master seed, either as
//! container metadata, JSON fields or a leading `#` comment line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::container::Container;
use crate::data::{holdout_seen, import_csv, load_dataset, make_synthetic, DensityOracle, SplitDataset};
use crate::diagnostics::{
    ape_gaussian, chain_csv, chain_experiment, lambda_csv, lambda_u2_sweep, prior_sweep, prior_sweep_csv, ApeBudget,
    GeneratorSampler,
};
use crate::error::{Error, Result};
use crate::fgen::{train_generator, GeneratorModel, StagePriors};
use crate::numkit::Rng;
use crate::pipeline::{resolve_prior, train_ver_stage, PipelineConfig};
use crate::priors::{ClassPrior, PriorKind};
use crate::regress::{train_regressor, RegressorModel};
use crate::trace::LossTrace;
use crate::ver::VerModel;
use crate::zsl_eval::{evaluate, train_fzsl, EvalMode, SoftmaxClassifier};

pub const DATASET_FILE: &str = "dataset.ivgn";
pub const VER_FILE: &str = "ver.ivgn";
pub const REGRESSOR_FILE: &str = "regressor.ivgn";
pub const GENERATOR_FILE: &str = "generator.ivgn";
pub const CLASSIFIER_FILE: &str = "classifier.ivgn";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Prior,
    LambdaU2,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Prior => "prior",
            SweepKind::LambdaU2 => "lambda-u2",
        })
    }
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Self::Prior),
            "lambda-u2" | "lambda_u2" => Ok(Self::LambdaU2),
            o => Err(Error::Usage(format!("unknown sweep kind {o:?} (prior|lambda-u2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SynthData,
    Pretrain,
    TrainRegressor,
    TrainGenerator,
    /// Trains the final classifier on synthesized features and scores it.
    Evaluate,
    Ape,
    Chain,
    Sweep(SweepKind),
    /// Data, the three training stages and evaluation in order.
    All,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::SynthData => f.write_str("synth-data"),
            Command::Pretrain => f.write_str("pretrain"),
            Command::TrainRegressor => f.write_str("train-regressor"),
            Command::TrainGenerator => f.write_str("train-generator"),
            Command::Evaluate => f.write_str("evaluate"),
            Command::Ape => f.write_str("ape"),
            Command::Chain => f.write_str("chain"),
            Command::Sweep(k) => write!(f, "sweep {k}"),
            Command::All => f.write_str("all"),
        }
    }
}

pub struct Runner {
    cfg: ExperimentConfig,
    pipeline: PipelineConfig,
    fingerprint: String,
    out: PathBuf,
    priors: BTreeMap<PriorKind, ClassPrior>,
    written: Vec<PathBuf>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            pipeline: cfg.pipeline(),
            fingerprint: cfg.fingerprint(),
            out: PathBuf::from(&cfg.out),
            cfg,
            priors: BTreeMap::new(),
            written: Vec::new(),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Runs one subcommand and returns the files it wrote.
    pub fn run(&mut self, cmd: Command) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.out)?;
        self.written.clear();
        let header = format!("# fingerprint={} seed={}\n", self.fingerprint, self.cfg.seed);
        self.write_text("config.txt", &(header + &self.cfg.to_text()))?;
        log::info!("{cmd}: fingerprint {} seed {}", &self.fingerprint[..12], self.cfg.seed);
        match cmd {
            Command::SynthData => self.synth_data()?,
            Command::Pretrain => self.pretrain()?,
            Command::TrainRegressor => self.train_regressor()?,
            Command::TrainGenerator => self.train_generator()?,
            Command::Evaluate => self.evaluate()?,
            Command::Ape => self.ape()?,
            Command::Chain => self.chain()?,
            Command::Sweep(SweepKind::Prior) => self.sweep_prior()?,
            Command::Sweep(SweepKind::LambdaU2) => self.sweep_lambda()?,
            Command::All => {
                self.synth_data()?;
                self.pretrain()?;
                self.train_regressor()?;
                self.train_generator()?;
                self.evaluate()?;
            }
        }
        Ok(std::mem::take(&mut self.written))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text)?;
        self.written.push(p);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, body: T) -> Result<()> {
        let v = json!({
            "fingerprint": self.fingerprint,
            "seed": self.cfg.seed,
            "result": body,
        });
        self.write_text(name, &(serde_json::to_string_pretty(&v)? + "\n"))
    }

    fn write_trace(&mut self, name: &str, trace: &LossTrace) -> Result<()> {
        let csv = trace.to_csv(&self.fingerprint, self.cfg.seed);
        self.write_text(name, &csv)
    }

    fn write_container(&mut self, name: &str, c: Container) -> Result<()> {
        let c = c
            .with_meta("fingerprint", &self.fingerprint)
            .with_meta("seed", self.cfg.seed);
        let p = self.path(name);
        c.write(&p)?;
        self.written.push(p);
        Ok(())
    }

    fn read_container(&self, name: &str, producer: &str) -> Result<Container> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::Dependency(format!(
                "{} not found; run `{producer}` first",
                p.display()
            )));
        }
        let c = Container::read(&p)?;
        if c.meta.get("fingerprint").map(String::as_str) != Some(self.fingerprint.as_str()) {
            log::warn!("{name} was written under a different config fingerprint");
        }
        Ok(c)
    }

    fn dataset(&self) -> Result<SplitDataset> {
        self.read_container(DATASET_FILE, "synth-data")?;
        load_dataset(&self.path(DATASET_FILE))
    }

    fn ver(&self) -> Result<VerModel> {
        VerModel::from_container(&self.read_container(VER_FILE, "pretrain")?)
    }

    fn regressor(&self) -> Result<RegressorModel> {
        Ok(RegressorModel::from_container(&self.read_container(REGRESSOR_FILE, "train-regressor")?)?.0)
    }

    fn generator(&self) -> Result<GeneratorModel> {
        Ok(GeneratorModel::from_container(&self.read_container(GENERATOR_FILE, "train-generator")?)?.0)
    }

    fn oracle(&self) -> Result<DensityOracle> {
        if self.cfg.source != DatasetSource::Synthetic {
            return Err(Error::EvaluationUnavailable(
                "APE needs exact real densities, which only the synthetic source provides".into(),
            ));
        }
        Ok(make_synthetic(&self.cfg.synthetic_spec())?.1)
    }

    fn prior(&mut self, kind: PriorKind, ds: &SplitDataset, ver: &VerModel) -> Result<ClassPrior> {
        if let Some(p) = self.priors.get(&kind) {
            return Ok(p.clone());
        }
        let p = resolve_prior(kind, ds, ver, &self.pipeline)?;
        log::info!("{kind} prior: {}", p.to_csv_row());
        self.priors.insert(kind, p.clone());
        Ok(p)
    }

    fn synth_data(&mut self) -> Result<()> {
        let ds = match self.cfg.source {
            DatasetSource::Synthetic => make_synthetic(&self.cfg.synthetic_spec())?.0,
            DatasetSource::Container => load_dataset(Path::new(&self.cfg.dataset_path))?,
            DatasetSource::Csv => import_csv(
                Path::new(&self.cfg.features_csv),
                Path::new(&self.cfg.semantics_csv),
                &self.cfg.unseen_ids,
            )?,
        };
        let ds = if self.cfg.mode == EvalMode::Tgzsl && ds.seen_test().is_none() {
            if self.cfg.holdout <= 0.0 {
                return Err(Error::Config("mode = tgzsl needs holdout > 0 or a dataset with seen test samples".into()));
            }
            holdout_seen(&ds, self.cfg.holdout, Rng::new(self.cfg.seed).fork(5).seed())?
        } else {
            ds
        };
        self.priors.clear();
        self.write_container(DATASET_FILE, ds.to_container())
    }

    fn pretrain(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let (ver, trace) = train_ver_stage(&ds, &self.pipeline.ver)?;
        self.priors.clear();
        self.write_container(VER_FILE, ver.to_container())?;
        self.write_trace("ver_trace.csv", &trace)
    }

    fn train_regressor(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let prior = self.prior(self.cfg.regressor_prior, &ds, &ver)?;
        let r = train_regressor(&ds.train_view(), &ver, &prior, &self.pipeline.regressor)?;
        self.write_container(REGRESSOR_FILE, r.model.to_container(r.critic.as_ref()))?;
        self.write_trace("regressor_trace.csv", &r.trace)?;
        self.write_json(
            "regressor_prior.json",
            json!({ "kind": self.cfg.regressor_prior, "probs": prior.probs() }),
        )
    }

    fn stage_priors(&mut self, ds: &SplitDataset, ver: &VerModel) -> Result<StagePriors> {
        Ok(StagePriors {
            g_prior: self.prior(self.cfg.g_prior, ds, ver)?,
            d_prior: self.prior(self.cfg.d_prior, ds, ver)?,
        })
    }

    fn train_generator(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let reg = if self.cfg.lambda_u2 > 0.0 || self.path(REGRESSOR_FILE).exists() {
            Some(self.regressor()?)
        } else {
            None
        };
        let priors = self.stage_priors(&ds, &ver)?;
        let g = train_generator(&ds.train_view(), &ver, reg.as_ref(), &priors, &self.pipeline.generator)?;
        self.write_container(GENERATOR_FILE, g.model.to_container(Some(&g.critics)))?;
        self.write_trace("generator_trace.csv", &g.trace)?;
        self.write_json(
            "generator_priors.json",
            json!({
                "g_prior": { "kind": self.cfg.g_prior, "probs": priors.g_prior.probs() },
                "d_prior": { "kind": self.cfg.d_prior, "probs": priors.d_prior.probs() },
            }),
        )
    }

    fn evaluate(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let reg = self.regressor()?;
        let gen = self.generator()?;
        let (clf, trace) = train_fzsl(&gen, &reg, &ver, &ds, &self.pipeline.fzsl)?;
        self.write_container(CLASSIFIER_FILE, clf.to_container())?;
        self.write_trace("classifier_trace.csv", &trace)?;
        self.score(&clf, &reg, &ver, &ds)
    }

    fn score(&mut self, clf: &SoftmaxClassifier, reg: &RegressorModel, ver: &VerModel, ds: &SplitDataset) -> Result<()> {
        let mut report = evaluate(clf, reg, ver, ds, self.cfg.mode, self.cfg.semantic_source)?;
        report.fingerprint = self.fingerprint.clone();
        report.seed = self.cfg.seed;
        log::info!("{}: T1 {:.4}", self.cfg.mode, report.t1);
        self.write_text(EVAL_FILE, &(report.to_json()? + "\n"))?;
        self.write_text("confusion.csv", &report.confusion_csv())
    }

    fn ape(&mut self) -> Result<()> {
        let oracle = self.oracle()?;
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let gen = self.generator()?;
        let g_prior = self.prior(self.cfg.g_prior, &ds, &ver)?;
        let sampler = GeneratorSampler {
            model: &gen,
            a_unseen: ds.train_view().a_unseen,
        };
        let budget = self.ape_budget();
        let r = ape_gaussian(
            &oracle,
            &sampler,
            &g_prior,
            budget.fit_samples,
            budget.mc_samples,
            &mut Rng::new(self.cfg.seed).fork(6),
        )?;
        log::info!("class-mean APE {:.4e} ± {:.1e}", r.class_mean, r.class_mean_stderr);
        self.write_json(
            "ape.json",
            json!({ "lambda_u1": self.cfg.lambda_u1, "lambda_u2": self.cfg.lambda_u2, "ape": r }),
        )
    }

    fn ape_budget(&self) -> ApeBudget {
        ApeBudget {
            fit_samples: self.cfg.ape_fit_samples,
            mc_samples: self.cfg.ape_mc_samples,
        }
    }

    fn chain(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let reg = self.regressor()?;
        let cells = chain_experiment(&ds, &ver, &reg, &self.cfg.chain_priors, &self.pipeline)?;
        let csv = chain_csv(&cells, &self.fingerprint, self.cfg.seed);
        self.write_text("chain.csv", &csv)?;
        self.write_json("chain.json", &cells)
    }

    fn sweep_prior(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let rows = prior_sweep(&ds, &ver, &self.cfg.sweep_priors, &self.pipeline)?;
        let csv = prior_sweep_csv(&rows, &self.fingerprint, self.cfg.seed);
        self.write_text("sweep_prior.csv", &csv)?;
        self.write_json("sweep_prior.json", &rows)
    }

    fn sweep_lambda(&mut self) -> Result<()> {
        let ds = self.dataset()?;
        let ver = self.ver()?;
        let reg = self.regressor()?;
        let priors = self.stage_priors(&ds, &ver)?;
        let oracle = self.oracle().ok();
        let budget = self.ape_budget();
        let rows = lambda_u2_sweep(
            &ds,
            &ver,
            &reg,
            &priors,
            &self.cfg.sweep_lambda_u2,
            oracle.as_ref().map(|o| (o, budget)),
            &self.pipeline,
        )?;
        let csv = lambda_csv(&rows, &self.fingerprint, self.cfg.seed);
        self.write_text("sweep_lambda_u2.csv", &csv)?;
        self.write_json("sweep_lambda_u2.json", &rows)
    }
}
