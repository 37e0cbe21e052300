//! Split datasets, the synthetic benchmark with exact densities, and file I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{labels_to_matrix, matrix_to_labels, Container};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};
use crate::priors::ClassPrior;

/// Default fraction of each seen class held out for generalized evaluation.
pub const DEFAULT_HOLDOUT: f64 = 0.2;

/// Labeled seen features, unlabeled unseen features and class semantics.
///
/// Unseen labels are only reachable through [`SplitDataset::evaluation_labels`];
/// training code receives a [`TrainView`] which does not carry them.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    xs: Matrix,
    ys: Vec<usize>,
    xu: Matrix,
    a_seen: Matrix,
    a_unseen: Matrix,
    seen_ids: Vec<u32>,
    unseen_ids: Vec<u32>,
    yu_hidden: Option<Vec<usize>>,
    seen_test: Option<(Matrix, Vec<usize>)>,
    /// Container header entries beyond the structural ones (fingerprint,
    /// seed, ...), kept so that load then save reproduces the file exactly.
    provenance: BTreeMap<String, String>,
}

const STRUCTURAL_KEYS: [&str; 6] = ["d_x", "d_a", "n_seen_classes", "n_unseen_classes", "seen_ids", "unseen_ids"];

/// Everything a training stage may read.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub xs: &'a Matrix,
    pub ys: &'a [usize],
    pub xu: &'a Matrix,
    pub a_seen: &'a Matrix,
    pub a_unseen: &'a Matrix,
}

impl TrainView<'_> {
    pub fn d_x(&self) -> usize {
        self.xs.cols()
    }
    pub fn d_a(&self) -> usize {
        self.a_seen.cols()
    }
    pub fn n_seen_classes(&self) -> usize {
        self.a_seen.rows()
    }
    pub fn n_unseen_classes(&self) -> usize {
        self.a_unseen.rows()
    }
    /// Class semantics for each seen sample.
    pub fn seen_semantics(&self, idx: &[usize]) -> Matrix {
        let rows: Vec<usize> = idx.iter().map(|&i| self.ys[i]).collect();
        self.a_seen.select_rows(&rows)
    }
}

impl SplitDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        xs: Matrix,
        ys: Vec<usize>,
        xu: Matrix,
        a_seen: Matrix,
        a_unseen: Matrix,
        seen_ids: Vec<u32>,
        unseen_ids: Vec<u32>,
        yu_hidden: Option<Vec<usize>>,
        seen_test: Option<(Matrix, Vec<usize>)>,
    ) -> Result<Self> {
        let ds = Self {
            xs,
            ys,
            xu,
            a_seen,
            a_unseen,
            seen_ids,
            unseen_ids,
            yu_hidden,
            seen_test,
            provenance: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let v = |msg: String| Err(Error::Validation(msg));
        let d_x = self.xs.cols();
        if self.xu.cols() != d_x && self.xu.rows() > 0 {
            return v(format!("unseen features have {} columns, seen have {d_x}", self.xu.cols()));
        }
        if self.a_seen.cols() != self.a_unseen.cols() {
            return v("seen and unseen semantics differ in width".into());
        }
        if self.ys.len() != self.xs.rows() {
            return v(format!("{} seen labels for {} seen rows", self.ys.len(), self.xs.rows()));
        }
        if self.seen_ids.len() != self.a_seen.rows() || self.unseen_ids.len() != self.a_unseen.rows() {
            return v("class id lists do not match semantic row counts".into());
        }
        let seen: BTreeSet<_> = self.seen_ids.iter().collect();
        let unseen: BTreeSet<_> = self.unseen_ids.iter().collect();
        if seen.len() != self.seen_ids.len() || unseen.len() != self.unseen_ids.len() {
            return v("duplicate class ids".into());
        }
        if let Some(id) = seen.intersection(&unseen).next() {
            return v(format!("class sets intersect (id {id} is both seen and unseen)"));
        }
        if let Some(&bad) = self.ys.iter().find(|&&y| y >= self.a_seen.rows()) {
            return v(format!("seen label {bad} has no semantic row"));
        }
        if let Some(h) = &self.yu_hidden {
            if h.len() != self.xu.rows() {
                return v(format!("{} hidden labels for {} unseen rows", h.len(), self.xu.rows()));
            }
            if let Some(&bad) = h.iter().find(|&&y| y >= self.a_unseen.rows()) {
                return v(format!("unseen label {bad} has no semantic row"));
            }
        }
        if let Some((x, y)) = &self.seen_test {
            if x.rows() != y.len() || (x.rows() > 0 && x.cols() != d_x) {
                return v("seen test split is inconsistent".into());
            }
            if y.iter().any(|&c| c >= self.a_seen.rows()) {
                return v("seen test label has no semantic row".into());
            }
        }
        let all_finite = [&self.xs, &self.xu, &self.a_seen, &self.a_unseen]
            .iter()
            .all(|m| m.is_finite());
        if !all_finite {
            return v("non-finite values in dataset".into());
        }
        Ok(())
    }

    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            xs: &self.xs,
            ys: &self.ys,
            xu: &self.xu,
            a_seen: &self.a_seen,
            a_unseen: &self.a_unseen,
        }
    }

    /// Hidden unseen labels; evaluation code is the only intended reader.
    pub fn evaluation_labels(&self) -> Result<&[usize]> {
        self.yu_hidden
            .as_deref()
            .ok_or_else(|| Error::EvaluationUnavailable("dataset carries no unseen labels".into()))
    }

    pub fn seen_test(&self) -> Option<(&Matrix, &[usize])> {
        self.seen_test.as_ref().map(|(x, y)| (x, y.as_slice()))
    }

    pub fn seen_ids(&self) -> &[u32] {
        &self.seen_ids
    }
    pub fn unseen_ids(&self) -> &[u32] {
        &self.unseen_ids
    }
    pub fn d_x(&self) -> usize {
        self.xs.cols()
    }
    pub fn d_a(&self) -> usize {
        self.a_seen.cols()
    }
    pub fn n_seen_classes(&self) -> usize {
        self.a_seen.rows()
    }
    pub fn n_unseen_classes(&self) -> usize {
        self.a_unseen.rows()
    }

    /// Empirical class frequencies of the unseen pool (reads hidden labels).
    pub fn ground_truth_prior(&self) -> Result<ClassPrior> {
        let labels = self.evaluation_labels()?;
        let mut counts = vec![0.0; self.n_unseen_classes()];
        for &y in labels {
            counts[y] += 1.0;
        }
        ClassPrior::from_weights(&counts)
    }

    /// Copy with every unseen sample dropped.
    pub fn without_unseen_samples(&self) -> Self {
        Self {
            xu: Matrix::zeros(0, self.d_x()),
            yu_hidden: self.yu_hidden.as_ref().map(|_| Vec::new()),
            ..self.clone()
        }
    }

    pub fn to_container(&self) -> Container {
        let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let mut c = Container::new("dataset");
        c.meta.extend(self.provenance.clone());
        let mut c = c
            .with_meta("d_x", self.d_x())
            .with_meta("d_a", self.d_a())
            .with_meta("n_seen_classes", self.n_seen_classes())
            .with_meta("n_unseen_classes", self.n_unseen_classes())
            .with_meta("seen_ids", ids(&self.seen_ids))
            .with_meta("unseen_ids", ids(&self.unseen_ids));
        c.push("xs", self.xs.clone());
        c.push("ys", labels_to_matrix(&self.ys));
        c.push("xu", self.xu.clone());
        c.push("a_seen", self.a_seen.clone());
        c.push("a_unseen", self.a_unseen.clone());
        if let Some(h) = &self.yu_hidden {
            c.push("yu_hidden", labels_to_matrix(h));
        }
        if let Some((x, y)) = &self.seen_test {
            c.push("xs_test", x.clone());
            c.push("ys_test", labels_to_matrix(y));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "dataset" {
            return Err(Error::Parse(format!("expected a dataset container, found {:?}", c.kind)));
        }
        let parse_ids = |key: &str| -> Result<Vec<u32>> {
            let raw = c.meta(key)?;
            raw.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Parse(format!("{key}: bad class id {s:?}"))))
                .collect()
        };
        let seen_ids = parse_ids("seen_ids")?;
        let unseen_ids = parse_ids("unseen_ids")?;
        let d_x = c.meta_usize("d_x")?;
        let d_a = c.meta_usize("d_a")?;
        let xs = c.matrix("xs")?.clone();
        let a_seen = c.matrix("a_seen")?.clone();
        if xs.cols() != d_x || a_seen.cols() != d_a {
            return Err(Error::Parse(format!(
                "shape mismatch: header says d_x={d_x}, d_a={d_a}; matrices have {} and {}",
                xs.cols(),
                a_seen.cols()
            )));
        }
        if c.meta_usize("n_seen_classes")? != a_seen.rows() {
            return Err(Error::Parse("shape mismatch: n_seen_classes disagrees with a_seen".into()));
        }
        let a_unseen = c.matrix("a_unseen")?.clone();
        if c.meta_usize("n_unseen_classes")? != a_unseen.rows() {
            return Err(Error::Parse("shape mismatch: n_unseen_classes disagrees with a_unseen".into()));
        }
        let ys = matrix_to_labels(c.matrix("ys")?, "ys")?;
        let yu_hidden = if c.has_matrix("yu_hidden") {
            Some(matrix_to_labels(c.matrix("yu_hidden")?, "yu_hidden")?)
        } else {
            None
        };
        let seen_test = if c.has_matrix("xs_test") {
            Some((
                c.matrix("xs_test")?.clone(),
                matrix_to_labels(c.matrix("ys_test")?, "ys_test")?,
            ))
        } else {
            None
        };
        let mut ds = Self::new(
            xs,
            ys,
            c.matrix("xu")?.clone(),
            a_seen,
            a_unseen,
            seen_ids,
            unseen_ids,
            yu_hidden,
            seen_test,
        )?;
        ds.provenance = c
            .meta
            .iter()
            .filter(|(k, _)| !STRUCTURAL_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ds)
    }

    /// Non-structural header entries read from a container.
    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }
}

pub fn save_dataset(ds: &SplitDataset, path: &Path) -> Result<()> {
    ds.to_container().write(path)
}

pub fn load_dataset(path: &Path) -> Result<SplitDataset> {
    SplitDataset::from_container(&Container::read(path)?)
}

/// Stratified split of the seen samples into train and test partitions.
///
/// Each class contributes `⌈fraction·n_c⌉` test samples, kept within `1..n_c`.
pub fn holdout_seen(ds: &SplitDataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_seen_classes()];
    for (i, &y) in ds.ys.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = Rng::new(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Validation(format!(
                "seen class {} has {} sample(s); at least 2 are needed to split",
                ds.seen_ids[c],
                members.len()
            )));
        }
        let n_test = ((fraction * members.len() as f64).ceil() as usize).clamp(1, members.len() - 1);
        let perm = rng.permutation(members.len());
        let mut picked: Vec<usize> = perm.iter().map(|&k| members[k]).collect();
        let rest = picked.split_off(n_test);
        test.extend(picked);
        train.extend(rest);
    }
    train.sort_unstable();
    test.sort_unstable();
    let pick = |idx: &[usize]| (ds.xs.select_rows(idx), idx.iter().map(|&i| ds.ys[i]).collect::<Vec<_>>());
    let (xs, ys) = pick(&train);
    let (xt, yt) = pick(&test);
    SplitDataset::new(
        xs,
        ys,
        ds.xu.clone(),
        ds.a_seen.clone(),
        ds.a_unseen.clone(),
        ds.seen_ids.clone(),
        ds.unseen_ids.clone(),
        ds.yu_hidden.clone(),
        Some((xt, yt)),
    )
}

/// Reads user-supplied features from CSV.
///
/// `features` has one sample per row with the integer class id in the last
/// column; `semantics` has the class id in the first column followed by the
/// attribute vector. Classes listed in `unseen_ids` become the unlabeled pool
/// (their labels are kept only for evaluation); all others are seen.
pub fn import_csv(features: &Path, semantics: &Path, unseen_ids: &[u32]) -> Result<SplitDataset> {
    let sem_rows = read_numeric_csv(semantics)?;
    let mut sem: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (line, row) in sem_rows.iter().enumerate() {
        if row.len() < 2 {
            return Err(Error::Parse(format!("semantics row {line}: need an id and at least one attribute")));
        }
        let id = as_class_id(row[0], line)?;
        if sem.insert(id, row[1..].to_vec()).is_some() {
            return Err(Error::Parse(format!("semantics row {line}: duplicate class id {id}")));
        }
    }
    let unseen_set: BTreeSet<u32> = unseen_ids.iter().copied().collect();
    let seen_ids: Vec<u32> = sem.keys().copied().filter(|id| !unseen_set.contains(id)).collect();
    let unseen_ids: Vec<u32> = unseen_ids.to_vec();
    for id in &unseen_ids {
        if !sem.contains_key(id) {
            return Err(Error::Parse(format!("unseen class {id} has no semantics row")));
        }
    }
    let seen_pos: BTreeMap<u32, usize> = seen_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let unseen_pos: BTreeMap<u32, usize> = unseen_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let sem_matrix = |ids: &[u32]| -> Result<Matrix> {
        let rows: Vec<&Vec<f64>> = ids.iter().map(|id| &sem[id]).collect();
        Matrix::from_rows(&rows)
    };

    let feat_rows = read_numeric_csv(features)?;
    let (mut xs, mut ys, mut xu, mut yu) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line, row) in feat_rows.iter().enumerate() {
        let (label, x) = row
            .split_last()
            .ok_or_else(|| Error::Parse(format!("features row {line} is empty")))?;
        let id = as_class_id(*label, line)?;
        if let Some(&k) = seen_pos.get(&id) {
            xs.push(x.to_vec());
            ys.push(k);
        } else if let Some(&k) = unseen_pos.get(&id) {
            xu.push(x.to_vec());
            yu.push(k);
        } else {
            return Err(Error::Parse(format!("features row {line}: class {id} has no semantics row")));
        }
    }
    let d_x = feat_rows.first().map_or(0, |r| r.len() - 1);
    let to_matrix = |rows: &[Vec<f64>]| {
        if rows.is_empty() {
            Ok(Matrix::zeros(0, d_x))
        } else {
            Matrix::from_rows(rows)
        }
    };
    SplitDataset::new(
        to_matrix(&xs)?,
        ys,
        to_matrix(&xu)?,
        sem_matrix(&seen_ids)?,
        sem_matrix(&unseen_ids)?,
        seen_ids,
        unseen_ids,
        Some(yu),
        None,
    )
}

fn as_class_id(v: f64, line: usize) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(Error::Parse(format!("row {line}: class id {v} is not a non-negative integer")))
    }
}

/// Parses a headerless or single-header numeric CSV.
fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("{}:{}: {e}", path.display(), line + 1))),
        }
    }
    Ok(rows)
}

/// Parameters of the class-conditional Gaussian benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d_x: usize,
    pub d_a: usize,
    /// Suggested latent width for models trained on this benchmark.
    pub d_z: usize,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub samples_per_class: usize,
    pub semantic_map_scale: f64,
    pub noise_std: f64,
    pub unseen_prior: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_x: 16,
            d_a: 8,
            d_z: 4,
            n_seen: 8,
            n_unseen: 4,
            samples_per_class: 200,
            semantic_map_scale: 4.0,
            noise_std: 0.5,
            unseen_prior: vec![0.25; 4],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let v = |m: String| Err(Error::Validation(m));
        if self.d_x == 0 || self.d_a == 0 || self.d_z == 0 {
            return v("all dimensions must be at least 1".into());
        }
        if self.n_seen == 0 || self.n_unseen == 0 {
            return v("need at least one seen and one unseen class".into());
        }
        if self.unseen_prior.len() != self.n_unseen {
            return v(format!(
                "unseen prior has {} entries for {} unseen classes",
                self.unseen_prior.len(),
                self.n_unseen
            ));
        }
        if let Some(p) = self.unseen_prior.iter().find(|p| !(**p >= 0.0)) {
            return v(format!("degenerate unseen prior: entry {p} is negative"));
        }
        let s: f64 = self.unseen_prior.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return v(format!("unseen prior sums to {s}, not 1"));
        }
        if !(self.noise_std >= 0.0) || !self.semantic_map_scale.is_finite() {
            return v("noise_std must be >= 0 and the map scale finite".into());
        }
        Ok(())
    }
}

/// Exact class-conditional densities of a synthetic benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOracle {
    /// Seen class means followed by unseen class means.
    pub means: Matrix,
    /// Linear semantic-to-mean map, `d_x × d_a`.
    pub map: Matrix,
    pub n_seen: usize,
    pub noise_std: f64,
    pub unseen_prior: ClassPrior,
}

impl DensityOracle {
    pub fn n_unseen(&self) -> usize {
        self.means.rows() - self.n_seen
    }

    pub fn unseen_mean(&self, k: usize) -> &[f64] {
        self.means.row(self.n_seen + k)
    }

    fn require_noise(&self) -> Result<()> {
        if self.noise_std > 0.0 {
            Ok(())
        } else {
            Err(Error::Contract("densities are undefined at zero noise".into()))
        }
    }

    /// `log p(x | class)` for a global class row (seen rows first).
    pub fn log_density(&self, x: &[f64], class_row: usize) -> Result<f64> {
        self.require_noise()?;
        let mu = self.means.row(class_row);
        let var = self.noise_std * self.noise_std;
        let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = x.len() as f64;
        Ok(-0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln())
    }

    /// `p_r(x | unseen class k)`.
    pub fn unseen_conditional(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.log_density(x, self.n_seen + k)?.exp())
    }

    /// `p_r(x) = Σₖ p_r(k)·p_r(x | k)` over the unseen classes.
    pub fn unseen_marginal(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (k, &p) in self.unseen_prior.probs().iter().enumerate() {
            s += p * self.unseen_conditional(x, k)?;
        }
        Ok(s)
    }

    pub fn sample_unseen_class(&self, k: usize, n: usize, rng: &mut Rng) -> Matrix {
        let mu = self.unseen_mean(k).to_vec();
        Matrix::from_fn(n, mu.len(), |_, j| mu[j] + self.noise_std * rng.normal())
    }

    /// Draws from the unseen marginal; returns samples and their classes.
    pub fn sample_unseen(&self, n: usize, rng: &mut Rng) -> (Matrix, Vec<usize>) {
        let labels = self.unseen_prior.sample(n, rng);
        let d = self.means.cols();
        let x = Matrix::from_fn(n, d, |i, j| self.unseen_mean(labels[i])[j] + self.noise_std * rng.normal());
        (x, labels)
    }
}

/// Builds a synthetic split: unit-norm class semantics, class means `M·a`,
/// isotropic Gaussian samples, seen classes balanced, unseen classes drawn from
/// the configured prior.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(SplitDataset, DensityOracle)> {
    spec.validate()?;
    let n_classes = spec.n_seen + spec.n_unseen;
    let rng = Rng::new(spec.seed);
    let mut sem_rng = rng.fork(1);
    let mut map_rng = rng.fork(2);
    let mut sample_rng = rng.fork(3);

    let mut semantics = Matrix::zeros(n_classes, spec.d_a);
    for c in 0..n_classes {
        loop {
            let v: Vec<f64> = (0..spec.d_a).map(|_| sem_rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                semantics.row_mut(c).iter_mut().zip(&v).for_each(|(o, x)| *o = x / norm);
                break;
            }
        }
    }
    // E‖M·a‖² = scale² for unit-norm a
    let map: Matrix = map_rng
        .normal_matrix(spec.d_x, spec.d_a)
        .scaled(spec.semantic_map_scale / (spec.d_x as f64).sqrt());
    let means = semantics.matmul_t(&map);

    let draw = |class_row: usize, rng: &mut Rng| -> Vec<f64> {
        means
            .row(class_row)
            .iter()
            .map(|&m| m + spec.noise_std * rng.normal())
            .collect()
    };

    let mut order: Vec<usize> = (0..spec.n_seen)
        .flat_map(|c| std::iter::repeat_n(c, spec.samples_per_class))
        .collect();
    let perm = sample_rng.permutation(order.len());
    order = perm.iter().map(|&i| order[i]).collect();
    let xs_rows: Vec<Vec<f64>> = order.iter().map(|&c| draw(c, &mut sample_rng)).collect();

    let prior = ClassPrior::new(spec.unseen_prior.clone())?;
    let yu = prior.sample(spec.samples_per_class * spec.n_unseen, &mut sample_rng);
    let xu_rows: Vec<Vec<f64>> = yu.iter().map(|&k| draw(spec.n_seen + k, &mut sample_rng)).collect();

    let rows_or_empty = |rows: &[Vec<f64>]| {
        if rows.is_empty() {
            Ok(Matrix::zeros(0, spec.d_x))
        } else {
            Matrix::from_rows(rows)
        }
    };
    let ds = SplitDataset::new(
        rows_or_empty(&xs_rows)?,
        order,
        rows_or_empty(&xu_rows)?,
        semantics.select_rows(&(0..spec.n_seen).collect::<Vec<_>>()),
        semantics.select_rows(&(spec.n_seen..n_classes).collect::<Vec<_>>()),
        (0..spec.n_seen as u32).collect(),
        (spec.n_seen as u32..n_classes as u32).collect(),
        Some(yu),
        None,
    )?;
    let oracle = DensityOracle {
        means,
        map,
        n_seen: spec.n_seen,
        noise_std: spec.noise_std,
        unseen_prior: prior,
    };
    Ok((ds, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples_per_class: 10,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_samples_sit_on_class_means() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            ..small_spec()
        };
        let (ds, oracle) = make_synthetic(&spec).unwrap();
        let v = ds.train_view();
        for (i, &y) in v.ys.iter().enumerate() {
            assert_eq!(v.xs.row(i), oracle.means.row(y));
        }
        // nearest-mean classification is exact
        let labels = ds.evaluation_labels().unwrap();
        for (i, &y) in labels.iter().enumerate() {
            let x = v.xu.row(i);
            let best = (0..oracle.n_unseen())
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(oracle.unseen_mean(a)).map(|(p, q)| (p - q).powi(2)).sum();
                    let db: f64 = x.iter().zip(oracle.unseen_mean(b)).map(|(p, q)| (p - q).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(best, y);
        }
    }

    #[test]
    fn means_are_linear_in_semantics() {
        let (ds, oracle) = make_synthetic(&small_spec()).unwrap();
        let v = ds.train_view();
        let twin = v.a_seen.select_rows(&[3, 3]);
        let means = twin.matmul_t(&oracle.map);
        assert_eq!(means.row(0), means.row(1));
        assert!(means.row(0).iter().zip(oracle.means.row(3)).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn degenerate_prior_is_rejected() {
        let spec = SyntheticSpec {
            unseen_prior: vec![1.2, -0.2, 0.0, 0.0],
            ..small_spec()
        };
        assert!(matches!(make_synthetic(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_synthetic(&small_spec()).unwrap();
        let b = make_synthetic(&small_spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn holdout_half_of_ten() {
        let (ds, _) = make_synthetic(&small_spec()).unwrap();
        let split = holdout_seen(&ds, 0.5, 1).unwrap();
        let (_, yt) = split.seen_test().unwrap();
        for c in 0..ds.n_seen_classes() {
            assert_eq!(yt.iter().filter(|&&y| y == c).count(), 5);
            assert_eq!(split.train_view().ys.iter().filter(|&&y| y == c).count(), 5);
        }
    }

    #[test]
    fn holdout_rejects_singleton_classes() {
        let spec = SyntheticSpec {
            samples_per_class: 1,
            ..small_spec()
        };
        let (ds, _) = make_synthetic(&spec).unwrap();
        assert!(holdout_seen(&ds, 0.5, 1).is_err());
        assert!(holdout_seen(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn missing_hidden_labels_block_evaluation() {
        let (ds, _) = make_synthetic(&small_spec()).unwrap();
        let mut c = ds.to_container();
        c.matrices.retain(|(n, _)| n != "yu_hidden");
        let stripped = SplitDataset::from_container(&c).unwrap();
        assert!(matches!(stripped.evaluation_labels(), Err(Error::EvaluationUnavailable(_))));
    }

    #[test]
    fn header_provenance_survives_a_round_trip() {
        let (ds, _) = make_synthetic(&small_spec()).unwrap();
        let c = ds.to_container().with_meta("fingerprint", "abc").with_meta("seed", 3);
        let bytes = c.to_bytes().unwrap();
        let back = SplitDataset::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.provenance().get("seed").map(String::as_str), Some("3"));
        assert_eq!(back.to_container().to_bytes().unwrap(), bytes);
    }
}
