//! Final softmax classifier trained on synthesized unseen features, and the
//! TZSL/TGZSL metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::data::SplitDataset;
use crate::error::{dim_err, Error, Result};
use crate::fgen::{synthesize, GeneratorModel};
use crate::numkit::{AdamW, AdamWConfig, Matrix, Rng};
use crate::priors::assign_nearest;
use crate::regress::{regress, regressor_hidden, semantic_mae, RegressorModel};
use crate::trace::{epoch_batches, EpochMeter, LossTrace};
use crate::ver::VerModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Unseen classes only.
    Tzsl,
    /// Seen and unseen classes jointly.
    Tgzsl,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Tzsl => "tzsl",
            EvalMode::Tgzsl => "tgzsl",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tzsl" => Ok(Self::Tzsl),
            "tgzsl" => Ok(Self::Tgzsl),
            o => Err(Error::Config(format!("unknown mode {o:?} (tzsl|tgzsl)"))),
        }
    }
}

/// How the semantic block of a classifier input is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticSource {
    /// `R(x)` itself.
    Regressed,
    /// The class semantic row nearest to `R(x)`.
    Nearest,
}

impl fmt::Display for SemanticSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemanticSource::Regressed => "regressed",
            SemanticSource::Nearest => "nearest",
        })
    }
}

impl FromStr for SemanticSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regressed" => Ok(Self::Regressed),
            "nearest" => Ok(Self::Nearest),
            o => Err(Error::Config(format!("unknown semantic source {o:?} (regressed|nearest)"))),
        }
    }
}

/// `[x | R(x) | hidden(x)]`
pub fn multimodal_input(x: &Matrix, reg: &RegressorModel, ver: &VerModel) -> Result<Matrix> {
    multimodal_input_with(x, reg, ver, SemanticSource::Regressed, None)
}

/// As [`multimodal_input`]; with [`SemanticSource::Nearest`] the semantic
/// block is snapped to the closest row of `class_semantics`.
pub fn multimodal_input_with(
    x: &Matrix,
    reg: &RegressorModel,
    ver: &VerModel,
    source: SemanticSource,
    class_semantics: Option<&Matrix>,
) -> Result<Matrix> {
    let a = regress(reg, ver, x)?;
    let a = match (source, class_semantics) {
        (SemanticSource::Regressed, _) => a,
        (SemanticSource::Nearest, Some(sem)) => sem.select_rows(&assign_nearest(&a, sem)),
        (SemanticSource::Nearest, None) => {
            return Err(Error::Contract("nearest semantic source needs class semantics".into()))
        }
    };
    let h = regressor_hidden(reg, ver, x)?;
    Ok(Matrix::hcat(&[x, &a, &h]))
}

/// Linear softmax classifier over standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    /// `classes × width`
    pub w: Matrix,
    pub b: Matrix,
    /// Per-column shift and scale applied before `w`.
    pub offset: Matrix,
    pub scale: Matrix,
    pub class_map: Vec<u32>,
}

impl SoftmaxClassifier {
    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    fn standardize(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.offset[(0, j)]) * self.scale[(0, j)])
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.width() {
            return Err(dim_err("classifier", format!("{} input columns", self.width()), x.cols()));
        }
        let mut z = self.standardize(x).matmul_t(&self.w);
        z.add_row(&self.b);
        Ok(z)
    }

    /// Predicted class indices into `class_map`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }

    pub fn to_container(&self) -> Container {
        let ids: Vec<String> = self.class_map.iter().map(u32::to_string).collect();
        let mut c = Container::new("classifier").with_meta("class_map", ids.join(","));
        c.push("w", self.w.clone());
        c.push("b", self.b.clone());
        c.push("offset", self.offset.clone());
        c.push("scale", self.scale.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "classifier" {
            return Err(Error::Parse(format!("expected a classifier checkpoint, found {:?}", c.kind)));
        }
        let class_map = c
            .meta("class_map")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad class id {s:?}"))))
            .collect::<Result<Vec<u32>>>()?;
        let out = Self {
            w: c.matrix("w")?.clone(),
            b: c.matrix("b")?.clone(),
            offset: c.matrix("offset")?.clone(),
            scale: c.matrix("scale")?.clone(),
            class_map,
        };
        if out.w.rows() != out.class_map.len() || out.b.shape() != (1, out.w.rows()) {
            return Err(Error::Parse("classifier shapes disagree with its class map".into()));
        }
        Ok(out)
    }
}

fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Cross-entropy training of a softmax classifier on labeled rows.
pub fn fit_softmax(
    x: &Matrix,
    labels: &[usize],
    class_map: Vec<u32>,
    cfg: &ClassifierConfig,
) -> Result<(SoftmaxClassifier, LossTrace)> {
    let k = class_map.len();
    if x.rows() == 0 || x.rows() != labels.len() {
        return Err(Error::Contract(format!("{} rows for {} labels", x.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {bad} outside {k} classes")));
    }
    let offset = x.mean_rows();
    let scale = Matrix::from_fn(1, x.cols(), |_, j| {
        let var = x.iter_rows().map(|r| (r[j] - offset[(0, j)]).powi(2)).sum::<f64>() / x.rows() as f64;
        1.0 / var.sqrt().max(1e-6)
    });
    let mut clf = SoftmaxClassifier {
        w: Matrix::zeros(k, x.cols()),
        b: Matrix::zeros(1, k),
        offset,
        scale,
        class_map,
    };
    let xs = clf.standardize(x);
    let mut rng = Rng::new(cfg.seed);
    let mut opt = AdamW::new(cfg.adam, &[clf.w.shape(), clf.b.shape()]);
    let mut trace = LossTrace::new("classifier", &["cross_entropy"]);
    for epoch in 1..=cfg.epochs {
        let mut meter = EpochMeter::new(1);
        for idx in epoch_batches(xs.rows(), cfg.batch_size, &mut rng) {
            let xb = xs.select_rows(&idx);
            let mut z = xb.matmul_t(&clf.w);
            z.add_row(&clf.b);
            let mut d = softmax_rows(&z);
            let n = idx.len() as f64;
            let mut ce = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let y = labels[i];
                ce -= d[(r, y)].max(1e-300).ln();
                d[(r, y)] -= 1.0;
            }
            d.scale_mut(1.0 / n);
            meter.add("classifier", epoch, &[ce / n])?;
            let gw = d.t_matmul(&xb);
            let gb = d.sum_rows();
            opt.step(&mut [&mut clf.w, &mut clf.b], &[&gw, &gb]);
        }
        meter.finish(&mut trace, epoch);
    }
    Ok((clf, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FzslConfig {
    pub n_syn: usize,
    pub mode: EvalMode,
    pub semantic_source: SemanticSource,
    pub classifier: ClassifierConfig,
}

impl Default for FzslConfig {
    fn default() -> Self {
        Self {
            n_syn: 200,
            mode: EvalMode::Tzsl,
            semantic_source: SemanticSource::Regressed,
            classifier: ClassifierConfig::default(),
        }
    }
}

fn class_semantics(ds: &SplitDataset, mode: EvalMode) -> Matrix {
    let v = ds.train_view();
    match mode {
        EvalMode::Tzsl => v.a_unseen.clone(),
        EvalMode::Tgzsl => Matrix::vcat(&[v.a_seen, v.a_unseen]),
    }
}

/// Trains the final classifier on `n_syn` synthesized features per unseen
/// class, plus the real seen training features in TGZSL mode.
pub fn train_fzsl(
    gen: &GeneratorModel,
    reg: &RegressorModel,
    ver: &VerModel,
    ds: &SplitDataset,
    cfg: &FzslConfig,
) -> Result<(SoftmaxClassifier, LossTrace)> {
    if cfg.n_syn == 0 {
        return Err(Error::Config("n_syn must be at least 1".into()));
    }
    if cfg.mode == EvalMode::Tgzsl && ds.seen_test().is_none() {
        return Err(Error::Config("TGZSL needs a held-out seen test split".into()));
    }
    let view = ds.train_view();
    let mut rng = Rng::new(cfg.classifier.seed).fork(1);
    let syn = synthesize(gen, view.a_unseen, cfg.n_syn, &mut rng)?;
    let syn_labels: Vec<usize> = (0..view.n_unseen_classes())
        .flat_map(|k| std::iter::repeat_n(k, cfg.n_syn))
        .collect();
    let sem = class_semantics(ds, cfg.mode);
    let syn_in = multimodal_input_with(&syn, reg, ver, cfg.semantic_source, Some(&sem))?;
    let (x, labels, class_map) = match cfg.mode {
        EvalMode::Tzsl => (syn_in, syn_labels, ds.unseen_ids().to_vec()),
        EvalMode::Tgzsl => {
            let n_s = view.n_seen_classes();
            let seen_in = multimodal_input_with(view.xs, reg, ver, cfg.semantic_source, Some(&sem))?;
            let mut labels = view.ys.to_vec();
            labels.extend(syn_labels.iter().map(|k| k + n_s));
            let ids = ds.seen_ids().iter().chain(ds.unseen_ids()).copied().collect();
            (Matrix::vcat(&[&seen_in, &syn_in]), labels, ids)
        }
    };
    fit_softmax(&x, &labels, class_map, &cfg.classifier)
}

/// Macro top-1 accuracy over `n_classes`; classes without test samples are
/// left out of the mean and reported as `None`.
pub fn top1_per_class(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<(f64, Vec<Option<f64>>)> {
    if preds.len() != labels.len() {
        return Err(dim_err("top1_per_class", format!("{} predictions", labels.len()), preds.len()));
    }
    let mut hit = vec![0usize; n_classes];
    let mut tot = vec![0usize; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::Contract(format!("label {y} outside {n_classes} classes")));
        }
        tot[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let per: Vec<Option<f64>> = hit
        .iter()
        .zip(&tot)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Validation("no test samples".into()));
    }
    let absent = n_classes - present.len();
    if absent > 0 {
        log::warn!("{absent} classes have no test samples and are excluded from the mean");
    }
    Ok((present.iter().sum::<f64>() / present.len() as f64, per))
}

/// `2US/(U+S)`, or 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

/// Accuracies are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub fingerprint: String,
    pub seed: u64,
    /// Macro accuracy over every class with test samples.
    pub t1: f64,
    pub u: Option<f64>,
    pub s: Option<f64>,
    pub h: Option<f64>,
    pub classes: Vec<u32>,
    pub per_class_acc: Vec<Option<f64>>,
    /// `confusion[true][predicted]`, indices into `classes`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = format!("# fingerprint={} seed={}\ntrue\\pred", self.fingerprint, self.seed);
        for c in &self.classes {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(&c.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores `clf` on the unseen pool (and the seen holdout in TGZSL mode).
/// The only consumer of hidden unseen labels in the pipeline.
pub fn evaluate(
    clf: &SoftmaxClassifier,
    reg: &RegressorModel,
    ver: &VerModel,
    ds: &SplitDataset,
    mode: EvalMode,
    source: SemanticSource,
) -> Result<EvalReport> {
    let yu = ds.evaluation_labels()?;
    let view = ds.train_view();
    let sem = class_semantics(ds, mode);
    let expected: Vec<u32> = match mode {
        EvalMode::Tzsl => ds.unseen_ids().to_vec(),
        EvalMode::Tgzsl => ds.seen_ids().iter().chain(ds.unseen_ids()).copied().collect(),
    };
    if clf.class_map != expected {
        return Err(Error::Contract(format!("classifier was not trained for {mode} on this dataset")));
    }
    let n = clf.n_classes();
    let n_s = view.n_seen_classes();
    let unseen_offset = if mode == EvalMode::Tgzsl { n_s } else { 0 };
    let pred_u = clf.predict(&multimodal_input_with(view.xu, reg, ver, source, Some(&sem))?)?;
    let lab_u: Vec<usize> = yu.iter().map(|k| k + unseen_offset).collect();
    let mut confusion = vec![vec![0u64; n]; n];
    for (&p, &y) in pred_u.iter().zip(&lab_u) {
        confusion[y][p] += 1;
    }
    let report = match mode {
        EvalMode::Tzsl => {
            let (t1, per) = top1_per_class(&pred_u, &lab_u, n)?;
            EvalReport {
                mode,
                fingerprint: String::new(),
                seed: 0,
                t1,
                u: None,
                s: None,
                h: None,
                classes: clf.class_map.clone(),
                per_class_acc: per,
                confusion,
            }
        }
        EvalMode::Tgzsl => {
            let (xt, yt) = ds
                .seen_test()
                .ok_or_else(|| Error::Config("TGZSL needs a held-out seen test split".into()))?;
            let pred_s = clf.predict(&multimodal_input_with(xt, reg, ver, source, Some(&sem))?)?;
            for (&p, &y) in pred_s.iter().zip(yt) {
                confusion[y][p] += 1;
            }
            let (u, per_u) = top1_per_class(&pred_u, &lab_u, n)?;
            let (s, per_s) = top1_per_class(&pred_s, yt, n)?;
            let per: Vec<Option<f64>> = per_s[..n_s].iter().chain(&per_u[n_s..]).copied().collect();
            let present: Vec<f64> = per.iter().flatten().copied().collect();
            EvalReport {
                mode,
                fingerprint: String::new(),
                seed: 0,
                t1: present.iter().sum::<f64>() / present.len() as f64,
                u: Some(u),
                s: Some(s),
                h: Some(harmonic_mean(u, s)),
                classes: clf.class_map.clone(),
                per_class_acc: per,
                confusion,
            }
        }
    };
    Ok(report)
}

/// Mean absolute error of `R(xu)` against the true unseen class semantics
/// (reads hidden labels).
pub fn unseen_semantic_mae(reg: &RegressorModel, ver: &VerModel, ds: &SplitDataset) -> Result<f64> {
    let yu = ds.evaluation_labels()?;
    let view = ds.train_view();
    let pred = regress(reg, ver, view.xu)?;
    Ok(semantic_mae(&pred, &view.a_unseen.select_rows(yu)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_table_rows() {
        let r = |v: f64| (v * 10.0).round() / 10.0;
        assert_eq!(r(harmonic_mean(91.2, 91.3)), 91.2);
        assert_eq!(r(harmonic_mean(68.8, 46.4)), 55.4);
        assert_eq!(harmonic_mean(0.0, 50.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(0.7, 0.7) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn macro_not_micro() {
        // class 0: 3/3 right, class 1: 0/1 right
        let (t1, per) = top1_per_class(&[0, 0, 0, 0], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(t1, 0.5);
        assert_eq!(per, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn absent_class_is_excluded() {
        let (t1, per) = top1_per_class(&[0, 1], &[0, 0], 3).unwrap();
        assert_eq!(t1, 0.5);
        assert_eq!(per[1], None);
        assert_eq!(per[2], None);
    }

    #[test]
    fn softmax_separates_two_blobs() {
        let x = Matrix::from_fn(40, 2, |i, j| if (i < 20) == (j == 0) { 1.0 } else { -1.0 } + 0.01 * i as f64);
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let cfg = ClassifierConfig {
            epochs: 30,
            batch_size: 8,
            ..Default::default()
        };
        let (clf, _) = fit_softmax(&x, &y, vec![7, 9], &cfg).unwrap();
        assert_eq!(clf.predict(&x).unwrap(), y);
        let back = SoftmaxClassifier::from_container(&Container::from_bytes(&clf.to_container().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, clf);
    }
}
