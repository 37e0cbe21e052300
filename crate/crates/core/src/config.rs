//! Flat `key = value` experiment configuration with a strict schema.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown or repeated keys are rejected before anything runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::numkit::AdamWConfig;
use crate::pipeline::{AnchorSource, PipelineConfig};
use crate::priors::PriorKind;
use crate::regress::RegressorInput;
use crate::zsl_eval::{EvalMode, SemanticSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic,
    /// A dataset container at `dataset_path`.
    Container,
    /// `features_csv` and `semantics_csv` with `unseen_ids`.
    Csv,
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetSource::Synthetic => "synthetic",
            DatasetSource::Container => "container",
            DatasetSource::Csv => "csv",
        })
    }
}

impl FromStr for DatasetSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "container" => Ok(Self::Container),
            "csv" => Ok(Self::Csv),
            o => Err(Error::Config(format!("unknown source {o:?} (synthetic|container|csv)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub dataset_path: String,
    pub features_csv: String,
    pub semantics_csv: String,
    pub unseen_ids: Vec<u32>,
    /// Benchmark parameters; its seed is always the master seed.
    pub synth: SyntheticSpec,
    /// Fraction of each seen class held out, applied in TGZSL mode.
    pub holdout: f64,

    pub n_pre: usize,
    pub n_r: usize,
    pub n_g: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub ver_latent: usize,
    pub gen_latent: usize,

    pub lambda_r: f64,
    pub lambda_u1: f64,
    pub lambda_u2: f64,
    pub lambda_gp: f64,
    pub adam: AdamWConfig,

    pub regressor_input: RegressorInput,
    pub semantic_critic: bool,
    pub g_prior: PriorKind,
    pub d_prior: PriorKind,
    pub regressor_prior: PriorKind,
    pub cpe_iters: usize,
    pub cpe_anchors: AnchorSource,
    pub anchor_samples: usize,

    pub n_syn: usize,
    pub mode: EvalMode,
    pub semantic_source: SemanticSource,
    pub clf_epochs: usize,

    pub ape_fit_samples: usize,
    pub ape_mc_samples: usize,
    pub chain_priors: Vec<PriorKind>,
    pub sweep_priors: Vec<PriorKind>,
    pub sweep_lambda_u2: Vec<f64>,

    pub seed: u64,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic,
            dataset_path: String::new(),
            features_csv: String::new(),
            semantics_csv: String::new(),
            unseen_ids: Vec::new(),
            synth: SyntheticSpec::default(),
            holdout: crate::data::DEFAULT_HOLDOUT,
            n_pre: 30,
            n_r: 30,
            n_g: 30,
            batch_size: 64,
            hidden: 64,
            ver_latent: 4,
            gen_latent: 8,
            lambda_r: 0.01,
            lambda_u1: 1.0,
            lambda_u2: 0.09,
            lambda_gp: 10.0,
            adam: AdamWConfig::default(),
            regressor_input: RegressorInput::Ver,
            semantic_critic: true,
            g_prior: PriorKind::Cpe,
            d_prior: PriorKind::Cpe,
            regressor_prior: PriorKind::Cpe,
            cpe_iters: 10,
            cpe_anchors: AnchorSource::Generated,
            anchor_samples: 100,
            n_syn: 200,
            mode: EvalMode::Tzsl,
            semantic_source: SemanticSource::Regressed,
            clf_epochs: 50,
            ape_fit_samples: 2000,
            ape_mc_samples: 20000,
            chain_priors: vec![PriorKind::GroundTruth, PriorKind::Cpe, PriorKind::Uniform],
            sweep_priors: vec![PriorKind::GroundTruth, PriorKind::Cpe, PriorKind::Uniform],
            sweep_lambda_u2: vec![0.0, 0.01, 0.03, 0.09, 0.3, 1.0],
            seed: 0,
            out: "out".into(),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_one(key, s.trim())).collect()
}

fn parse_kind<T: FromStr<Err = Error>>(v: &str) -> Result<T> {
    v.parse()
}

fn parse_kinds<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| s.trim().parse()).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        vec![
            ("source", self.source.to_string()),
            ("dataset_path", self.dataset_path.clone()),
            ("features_csv", self.features_csv.clone()),
            ("semantics_csv", self.semantics_csv.clone()),
            ("unseen_ids", list(&self.unseen_ids)),
            ("synth.d_x", s.d_x.to_string()),
            ("synth.d_a", s.d_a.to_string()),
            ("synth.d_z", s.d_z.to_string()),
            ("synth.n_seen", s.n_seen.to_string()),
            ("synth.n_unseen", s.n_unseen.to_string()),
            ("synth.samples_per_class", s.samples_per_class.to_string()),
            ("synth.map_scale", s.semantic_map_scale.to_string()),
            ("synth.noise_std", s.noise_std.to_string()),
            ("synth.unseen_prior", list(&s.unseen_prior)),
            ("holdout", self.holdout.to_string()),
            ("n_pre", self.n_pre.to_string()),
            ("n_r", self.n_r.to_string()),
            ("n_g", self.n_g.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("hidden", self.hidden.to_string()),
            ("ver.latent_dim", self.ver_latent.to_string()),
            ("gen.latent_dim", self.gen_latent.to_string()),
            ("lambda_r", self.lambda_r.to_string()),
            ("lambda_u1", self.lambda_u1.to_string()),
            ("lambda_u2", self.lambda_u2.to_string()),
            ("lambda_gp", self.lambda_gp.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("weight_decay", self.adam.weight_decay.to_string()),
            ("regressor_input", self.regressor_input.to_string()),
            ("semantic_critic", self.semantic_critic.to_string()),
            ("g_prior", self.g_prior.to_string()),
            ("d_prior", self.d_prior.to_string()),
            ("regressor_prior", self.regressor_prior.to_string()),
            ("cpe_iters", self.cpe_iters.to_string()),
            ("cpe_anchors", self.cpe_anchors.to_string()),
            ("anchor_samples", self.anchor_samples.to_string()),
            ("n_syn", self.n_syn.to_string()),
            ("mode", self.mode.to_string()),
            ("semantic_source", self.semantic_source.to_string()),
            ("clf_epochs", self.clf_epochs.to_string()),
            ("ape.fit_samples", self.ape_fit_samples.to_string()),
            ("ape.mc_samples", self.ape_mc_samples.to_string()),
            ("chain.priors", list(&self.chain_priors)),
            ("sweep.priors", list(&self.sweep_priors)),
            ("sweep.lambda_u2", list(&self.sweep_lambda_u2)),
            ("seed", self.seed.to_string()),
            ("out", self.out.clone()),
        ]
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "source" => self.source = parse_kind(v)?,
            "dataset_path" => self.dataset_path = v.to_string(),
            "features_csv" => self.features_csv = v.to_string(),
            "semantics_csv" => self.semantics_csv = v.to_string(),
            "unseen_ids" => self.unseen_ids = parse_list(key, v)?,
            "synth.d_x" => s.d_x = parse_one(key, v)?,
            "synth.d_a" => s.d_a = parse_one(key, v)?,
            "synth.d_z" => s.d_z = parse_one(key, v)?,
            "synth.n_seen" => s.n_seen = parse_one(key, v)?,
            "synth.n_unseen" => s.n_unseen = parse_one(key, v)?,
            "synth.samples_per_class" => s.samples_per_class = parse_one(key, v)?,
            "synth.map_scale" => s.semantic_map_scale = parse_one(key, v)?,
            "synth.noise_std" => s.noise_std = parse_one(key, v)?,
            "synth.unseen_prior" => s.unseen_prior = parse_list(key, v)?,
            "holdout" => self.holdout = parse_one(key, v)?,
            "n_pre" => self.n_pre = parse_one(key, v)?,
            "n_r" => self.n_r = parse_one(key, v)?,
            "n_g" => self.n_g = parse_one(key, v)?,
            "batch_size" => self.batch_size = parse_one(key, v)?,
            "hidden" => self.hidden = parse_one(key, v)?,
            "ver.latent_dim" => self.ver_latent = parse_one(key, v)?,
            "gen.latent_dim" => self.gen_latent = parse_one(key, v)?,
            "lambda_r" => self.lambda_r = parse_one(key, v)?,
            "lambda_u1" => self.lambda_u1 = parse_one(key, v)?,
            "lambda_u2" => self.lambda_u2 = parse_one(key, v)?,
            "lambda_gp" => self.lambda_gp = parse_one(key, v)?,
            "lr" => self.adam.lr = parse_one(key, v)?,
            "beta1" => self.adam.beta1 = parse_one(key, v)?,
            "beta2" => self.adam.beta2 = parse_one(key, v)?,
            "eps" => self.adam.eps = parse_one(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse_one(key, v)?,
            "regressor_input" => self.regressor_input = parse_kind(v)?,
            "semantic_critic" => self.semantic_critic = parse_bool(key, v)?,
            "g_prior" => self.g_prior = parse_kind(v)?,
            "d_prior" => self.d_prior = parse_kind(v)?,
            "regressor_prior" => self.regressor_prior = parse_kind(v)?,
            "cpe_iters" => self.cpe_iters = parse_one(key, v)?,
            "cpe_anchors" => self.cpe_anchors = parse_kind(v)?,
            "anchor_samples" => self.anchor_samples = parse_one(key, v)?,
            "n_syn" => self.n_syn = parse_one(key, v)?,
            "mode" => self.mode = parse_kind(v)?,
            "semantic_source" => self.semantic_source = parse_kind(v)?,
            "clf_epochs" => self.clf_epochs = parse_one(key, v)?,
            "ape.fit_samples" => self.ape_fit_samples = parse_one(key, v)?,
            "ape.mc_samples" => self.ape_mc_samples = parse_one(key, v)?,
            "chain.priors" => self.chain_priors = parse_kinds(v)?,
            "sweep.priors" => self.sweep_priors = parse_kinds(v)?,
            "sweep.lambda_u2" => self.sweep_lambda_u2 = parse_list(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "out" => self.out = v.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", n + 1)));
            }
            cfg.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (k, w) in [
            ("lambda_r", self.lambda_r),
            ("lambda_u1", self.lambda_u1),
            ("lambda_u2", self.lambda_u2),
            ("lambda_gp", self.lambda_gp),
            ("weight_decay", self.adam.weight_decay),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{k} must be a finite non-negative number, got {w}"));
            }
        }
        for (k, n) in [
            ("n_pre", self.n_pre),
            ("n_r", self.n_r),
            ("n_g", self.n_g),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("ver.latent_dim", self.ver_latent),
            ("gen.latent_dim", self.gen_latent),
            ("cpe_iters", self.cpe_iters),
            ("n_syn", self.n_syn),
            ("clf_epochs", self.clf_epochs),
        ] {
            if n == 0 {
                return bad(format!("{k} must be at least 1"));
            }
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("lr must be positive and betas in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must lie in [0, 1), got {}", self.holdout));
        }
        if self.sweep_lambda_u2.iter().any(|v| !(*v >= 0.0)) {
            return bad("sweep.lambda_u2 values must be non-negative".into());
        }
        if self.source == DatasetSource::Synthetic {
            self.synthetic_spec().validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical text without the output directory.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig::default();
        p.ver.epochs = self.n_pre;
        p.ver.batch_size = self.batch_size;
        p.ver.hidden = self.hidden;
        p.ver.latent_dim = self.ver_latent;
        p.ver.adam = self.adam;
        p.regressor.epochs = self.n_r;
        p.regressor.batch_size = self.batch_size;
        p.regressor.hidden = self.hidden;
        p.regressor.lambda_r = self.lambda_r;
        p.regressor.lambda_gp = self.lambda_gp;
        p.regressor.input = self.regressor_input;
        p.regressor.use_critic = self.semantic_critic;
        p.regressor.adam = self.adam;
        p.generator.epochs = self.n_g;
        p.generator.batch_size = self.batch_size;
        p.generator.hidden = self.hidden;
        p.generator.latent_dim = self.gen_latent;
        p.generator.lambda_u1 = self.lambda_u1;
        p.generator.lambda_u2 = self.lambda_u2;
        p.generator.lambda_gp = self.lambda_gp;
        p.generator.adam = self.adam;
        p.fzsl.n_syn = self.n_syn;
        p.fzsl.mode = self.mode;
        p.fzsl.semantic_source = self.semantic_source;
        p.fzsl.classifier.epochs = self.clf_epochs;
        p.fzsl.classifier.batch_size = self.batch_size;
        p.fzsl.classifier.adam = self.adam;
        p.cpe_iters = self.cpe_iters;
        p.cpe_anchors = self.cpe_anchors;
        p.anchor_samples = self.anchor_samples;
        p.with_master_seed(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.lambda_u2 = 0.3;
        c.synth.unseen_prior = vec![0.55, 0.25, 0.15, 0.05];
        c.sweep_lambda_u2 = vec![0.0, 1e-3];
        c.unseen_ids = vec![3, 9];
        c.seed = 17;
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_settable() {
        let c = ExperimentConfig::default();
        let mut d = ExperimentConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let e = ExperimentConfig::from_text("seed = 1\nlamda_u2 = 0.1\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("lamda_u2"), "{e}");
        assert!(ExperimentConfig::from_text("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn negative_weight_and_zero_epochs_are_rejected() {
        assert!(ExperimentConfig::from_text("lambda_r = -0.1").is_err());
        assert!(ExperimentConfig::from_text("n_g = 0").is_err());
    }

    #[test]
    fn fingerprint_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
