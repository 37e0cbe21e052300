//! Accumulated prior error (APE) on discrete toys and on synthetic Gaussian
//! benchmarks, plus the prior-sensitivity harnesses.

use serde::Serialize;

use crate::data::{DensityOracle, SplitDataset};
use crate::error::{Error, Result};
use crate::fgen::{synthesize, GeneratorModel, StagePriors};
use crate::numkit::{Matrix, Rng};
use crate::pipeline::{resolve_prior, run_with_prior, stage3_and_eval, PipelineConfig};
use crate::priors::{prior_bias, ClassPrior, PriorKind};
use crate::regress::RegressorModel;
use crate::ver::VerModel;

const TOY_TOL: f64 = 1e-12;

/// Finite outcome space with real and generated joint distributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteToy {
    pub pr_y: Vec<f64>,
    pub pg_y: Vec<f64>,
    /// `k × m`, row `y` is `p_r(x | y)`.
    pub pr_x_y: Vec<Vec<f64>>,
    pub pg_x_y: Vec<Vec<f64>>,
}

fn check_simplex(what: &str, p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > TOY_TOL {
        return Err(Error::Validation(format!("{what} is not a probability vector (sum {s})")));
    }
    Ok(())
}

impl DiscreteToy {
    pub fn new(pr_y: Vec<f64>, pg_y: Vec<f64>, pr_x_y: Vec<Vec<f64>>, pg_x_y: Vec<Vec<f64>>) -> Result<Self> {
        let k = pr_y.len();
        if k == 0 || pg_y.len() != k || pr_x_y.len() != k || pg_x_y.len() != k {
            return Err(Error::Validation("class counts disagree".into()));
        }
        let m = pr_x_y[0].len();
        if m == 0 || pr_x_y.iter().chain(&pg_x_y).any(|r| r.len() != m) {
            return Err(Error::Validation("outcome counts disagree".into()));
        }
        check_simplex("p_r(y)", &pr_y)?;
        check_simplex("p_g(y)", &pg_y)?;
        for (y, (r, g)) in pr_x_y.iter().zip(&pg_x_y).enumerate() {
            check_simplex(&format!("p_r(x|y{y})"), r)?;
            check_simplex(&format!("p_g(x|y{y})"), g)?;
        }
        if pr_y.iter().chain(&pg_y).any(|p| *p <= 0.0) {
            return Err(Error::Validation("class priors must be strictly positive".into()));
        }
        Ok(Self { pr_y, pg_y, pr_x_y, pg_x_y })
    }

    pub fn n_classes(&self) -> usize {
        self.pr_y.len()
    }
    pub fn n_outcomes(&self) -> usize {
        self.pr_x_y[0].len()
    }

    fn marginal(prior: &[f64], cond: &[Vec<f64>]) -> Vec<f64> {
        (0..cond[0].len())
            .map(|x| prior.iter().zip(cond).map(|(p, row)| p * row[x]).sum())
            .collect()
    }

    pub fn pr_x(&self) -> Vec<f64> {
        Self::marginal(&self.pr_y, &self.pr_x_y)
    }
    pub fn pg_x(&self) -> Vec<f64> {
        Self::marginal(&self.pg_y, &self.pg_x_y)
    }

    /// The worked three-outcome, two-class example with matching marginals.
    pub fn worked_example() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![0.6, 0.4],
            vec![vec![0.8, 0.2, 0.0], vec![0.2, 0.4, 0.4]],
            vec![vec![0.7, 0.2, 0.1], vec![0.2, 0.45, 0.35]],
        )
        .expect("worked example is valid")
    }

    /// Every class shares the conditional `q`; the priors may differ freely,
    /// so posteriors equal priors on both sides and the APE vanishes.
    pub fn shared_conditional(q: Vec<f64>, pr_y: Vec<f64>, pg_y: Vec<f64>) -> Result<Self> {
        let k = pr_y.len();
        Self::new(pr_y, pg_y, vec![q.clone(); k], vec![q; k])
    }

    /// Random toy whose generated marginal equals the real one.
    ///
    /// `p_g(x|y) = p_r(x) + t·(q_y − p_r(x))` for all but the last class, whose
    /// row is solved from the marginal constraint; `t` halves until that row
    /// is non-negative.
    pub fn random_marginal_matched(m: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if m < 1 || k < 2 {
            return Err(Error::Contract("need at least one outcome and two classes".into()));
        }
        let simplex = |n: usize, rng: &mut Rng| -> Vec<f64> {
            let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        };
        let pr_y = simplex(k, rng);
        let pr_x_y: Vec<Vec<f64>> = (0..k).map(|_| simplex(m, rng)).collect();
        let pg_y = simplex(k, rng);
        let q: Vec<Vec<f64>> = (0..k - 1).map(|_| simplex(m, rng)).collect();
        let px = Self::marginal(&pr_y, &pr_x_y);
        let last = pg_y[k - 1];
        let mut t = rng.uniform();
        loop {
            let mut rows: Vec<Vec<f64>> = q
                .iter()
                .map(|qy| px.iter().zip(qy).map(|(p, qv)| p + t * (qv - p)).collect())
                .collect();
            let solved: Vec<f64> = (0..m)
                .map(|x| (px[x] - rows.iter().zip(&pg_y).map(|(r, w)| w * r[x]).sum::<f64>()) / last)
                .collect();
            if solved.iter().all(|v| *v >= 0.0) {
                // absorb rounding so the row sums to one exactly enough
                let s: f64 = solved.iter().sum();
                rows.push(solved.iter().map(|v| v / s).collect());
                return Self::new(pr_y, pg_y, pr_x_y, rows);
            }
            t *= 0.5;
        }
    }
}

/// `e(x, y)` for every class and outcome by both routes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApeTable {
    /// `|p_r(x|y) − p_g(x|y)|`
    pub conditional: Vec<Vec<f64>>,
    /// `p(x)·|p_r(y|x)/p_r(y) − p_g(y|x)/p_g(y)|`
    pub posterior: Vec<Vec<f64>>,
}

impl ApeTable {
    /// Per-class APE summed over outcomes, conditional route.
    pub fn per_class(&self) -> Vec<f64> {
        self.conditional.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.conditional
            .iter()
            .flatten()
            .zip(self.posterior.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Both APE routes; requires `p_r(x) = p_g(x)`.
pub fn ape_table(toy: &DiscreteToy) -> Result<ApeTable> {
    let pr_x = toy.pr_x();
    let pg_x = toy.pg_x();
    if let Some(x) = (0..pr_x.len()).find(|&x| (pr_x[x] - pg_x[x]).abs() > TOY_TOL) {
        return Err(Error::Contract(format!(
            "marginals differ at outcome x{x}: p_r = {}, p_g = {}",
            pr_x[x], pg_x[x]
        )));
    }
    let (k, m) = (toy.n_classes(), toy.n_outcomes());
    let mut conditional = vec![vec![0.0; m]; k];
    let mut posterior = vec![vec![0.0; m]; k];
    for y in 0..k {
        for x in 0..m {
            conditional[y][x] = (toy.pr_x_y[y][x] - toy.pg_x_y[y][x]).abs();
            if pr_x[x] > 0.0 {
                let post_r = toy.pr_y[y] * toy.pr_x_y[y][x] / pr_x[x];
                let post_g = toy.pg_y[y] * toy.pg_x_y[y][x] / pg_x[x];
                posterior[y][x] = pr_x[x] * (post_r / toy.pr_y[y] - post_g / toy.pg_y[y]).abs();
            }
        }
    }
    Ok(ApeTable { conditional, posterior })
}

/// Largest difference between the two routes over all outcomes and classes.
pub fn ape_identity_check(toy: &DiscreteToy) -> Result<f64> {
    Ok(ape_table(toy)?.max_discrepancy())
}

/// Source of class-conditional feature samples for the unseen classes.
pub trait ClassSampler {
    fn sample_class(&self, k: usize, n: usize, rng: &mut Rng) -> Result<Matrix>;
}

impl ClassSampler for DensityOracle {
    fn sample_class(&self, k: usize, n: usize, rng: &mut Rng) -> Result<Matrix> {
        Ok(self.sample_unseen_class(k, n, rng))
    }
}

/// A generator paired with the unseen semantic rows it is conditioned on.
pub struct GeneratorSampler<'a> {
    pub model: &'a GeneratorModel,
    pub a_unseen: &'a Matrix,
}

impl ClassSampler for GeneratorSampler<'_> {
    fn sample_class(&self, k: usize, n: usize, rng: &mut Rng) -> Result<Matrix> {
        synthesize(self.model, &self.a_unseen.select_rows(&[k]), n, rng)
    }
}

pub const VAR_FLOOR: f64 = 1e-6;

/// Maximum-likelihood diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Contract("cannot fit a Gaussian to zero samples".into()));
        }
        let mean = x.mean_rows().into_vec();
        let n = x.rows() as f64;
        let mut floored = 0;
        let var = (0..x.cols())
            .map(|j| {
                let v = x.iter_rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v < VAR_FLOOR {
                    floored += 1;
                    VAR_FLOOR
                } else {
                    v
                }
            })
            .collect();
        if floored > 0 {
            log::warn!("{floored} fitted variances floored at {VAR_FLOOR:e}");
        }
        Ok(Self { mean, var })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| -0.5 * ((x - m).powi(2) / v + v.ln() + ln2pi))
            .sum()
    }
}

/// Monte-Carlo APE of a feature sampler against exact real densities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApeReport {
    /// `E_{x∼p_r(x)} |p_r(x|y) − p̂_g(x|y)|` per unseen class.
    pub per_class: Vec<f64>,
    pub per_class_stderr: Vec<f64>,
    /// Same quantity through generated posteriors and marginal.
    pub per_class_posterior: Vec<f64>,
    pub route_discrepancy: f64,
    pub class_mean: f64,
    pub class_mean_stderr: f64,
    pub fit_samples: usize,
    pub mc_samples: usize,
}

/// Sample counts for [`ape_gaussian`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApeBudget {
    pub fit_samples: usize,
    pub mc_samples: usize,
}

impl Default for ApeBudget {
    fn default() -> Self {
        Self {
            fit_samples: 2000,
            mc_samples: 20000,
        }
    }
}

/// Fits a diagonal Gaussian to `fit_samples` draws per unseen class from
/// `sampler`, then averages the conditional-route error over `mc_samples`
/// draws from the real unseen marginal. `g_prior` weights the generated
/// marginal used by the posterior route.
pub fn ape_gaussian(
    oracle: &DensityOracle,
    sampler: &dyn ClassSampler,
    g_prior: &ClassPrior,
    fit_samples: usize,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<ApeReport> {
    let k = oracle.n_unseen();
    if g_prior.len() != k {
        return Err(Error::Contract(format!("generator prior over {} classes, oracle has {k}", g_prior.len())));
    }
    if mc_samples < 2 {
        return Err(Error::Contract("need at least two Monte-Carlo samples".into()));
    }
    let mut fit_rng = rng.fork(0);
    let fits = (0..k)
        .map(|c| DiagGaussian::fit(&sampler.sample_class(c, fit_samples, &mut fit_rng)?))
        .collect::<Result<Vec<_>>>()?;
    let (x, _) = oracle.sample_unseen(mc_samples, &mut rng.fork(1));
    let n = mc_samples as f64;
    let mut sums = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut post = vec![0.0; k];
    let mut row_mean_sum = 0.0;
    let mut row_mean_sq = 0.0;
    let mut discrepancy: f64 = 0.0;
    for r in x.iter_rows() {
        let pg: Vec<f64> = fits.iter().map(|f| f.log_density(r).exp()).collect();
        let pg_x: f64 = pg.iter().zip(g_prior.probs()).map(|(a, b)| a * b).sum();
        let mut row_mean = 0.0;
        for c in 0..k {
            let pr = oracle.unseen_conditional(r, c)?;
            let e = (pr - pg[c]).abs();
            sums[c] += e;
            sq[c] += e * e;
            row_mean += e / k as f64;
            let w = g_prior.probs()[c];
            let via_posterior = if w > 0.0 && pg_x > 0.0 {
                let post_g = w * pg[c] / pg_x;
                (pr - post_g * pg_x / w).abs()
            } else {
                e
            };
            post[c] += via_posterior;
            discrepancy = discrepancy.max((via_posterior - e).abs());
        }
        row_mean_sum += row_mean;
        row_mean_sq += row_mean * row_mean;
    }
    let stderr = |s: f64, q: f64| ((q / n - (s / n).powi(2)).max(0.0) / (n - 1.0)).sqrt();
    Ok(ApeReport {
        per_class: sums.iter().map(|s| s / n).collect(),
        per_class_stderr: sums.iter().zip(&sq).map(|(s, q)| stderr(*s, *q)).collect(),
        per_class_posterior: post.iter().map(|s| s / n).collect(),
        route_discrepancy: discrepancy,
        class_mean: row_mean_sum / n,
        class_mean_stderr: stderr(row_mean_sum, row_mean_sq),
        fit_samples,
        mc_samples,
    })
}

/// One cell of the mixed-prior grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainCell {
    pub g_prior: PriorKind,
    pub d_prior: PriorKind,
    pub t1: f64,
}

/// Trains stage 3 for every `(g_prior, d_prior)` pair over `kinds` with a
/// shared stage 1/2 and identical seeds.
pub fn chain_experiment(
    ds: &SplitDataset,
    ver: &VerModel,
    reg: &RegressorModel,
    kinds: &[PriorKind],
    cfg: &PipelineConfig,
) -> Result<Vec<ChainCell>> {
    let priors = kinds
        .iter()
        .map(|&k| Ok((k, resolve_prior(k, ds, ver, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (gk, gp) in &priors {
        for (dk, dp) in &priors {
            let sp = StagePriors {
                g_prior: gp.clone(),
                d_prior: dp.clone(),
            };
            let run = stage3_and_eval(ds, ver, reg, &sp, cfg)?;
            log::info!("chain cell G={gk} D={dk}: T1 {:.4}", run.report.t1);
            cells.push(ChainCell {
                g_prior: *gk,
                d_prior: *dk,
                t1: run.report.t1,
            });
        }
    }
    Ok(cells)
}

pub fn chain_csv(cells: &[ChainCell], fingerprint: &str, seed: u64) -> String {
    let mut out = format!("# fingerprint={fingerprint} seed={seed}\ng_prior,d_prior,t1\n");
    for c in cells {
        out.push_str(&format!("{},{},{:.6}\n", c.g_prior, c.d_prior, c.t1));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub prior: PriorKind,
    pub probs: Vec<f64>,
    /// Prior bias against the empirical unseen frequencies, in percent.
    pub pb: f64,
    pub t1: f64,
}

/// Runs stages 2 and 3 under each prior kind with a shared stage 1.
pub fn prior_sweep(ds: &SplitDataset, ver: &VerModel, kinds: &[PriorKind], cfg: &PipelineConfig) -> Result<Vec<SweepRow>> {
    let truth = ds.ground_truth_prior()?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let prior = resolve_prior(kind, ds, ver, cfg)?;
        let pb = prior_bias(&prior, &truth)?;
        let run = run_with_prior(ds, ver, prior.clone(), cfg)?;
        log::info!("prior sweep {kind}: PB {pb:.3} T1 {:.4}", run.stage3.report.t1);
        rows.push(SweepRow {
            prior: kind,
            probs: prior.probs().to_vec(),
            pb,
            t1: run.stage3.report.t1,
        });
    }
    Ok(rows)
}

pub fn prior_sweep_csv(rows: &[SweepRow], fingerprint: &str, seed: u64) -> String {
    let mut out = format!("# fingerprint={fingerprint} seed={seed}\nprior,pb,t1,probs\n");
    for r in rows {
        let probs: Vec<String> = r.probs.iter().map(|p| format!("{p:.6}")).collect();
        out.push_str(&format!("{},{:.6},{:.6},{}\n", r.prior, r.pb, r.t1, probs.join(";")));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda_u2: f64,
    pub t1: f64,
    pub ape: Option<f64>,
}

/// Stage 3 for each `λ_u2` in `values` with everything else fixed; APE is
/// reported when the benchmark's exact densities are known.
pub fn lambda_u2_sweep(
    ds: &SplitDataset,
    ver: &VerModel,
    reg: &RegressorModel,
    priors: &StagePriors,
    values: &[f64],
    oracle: Option<(&DensityOracle, ApeBudget)>,
    cfg: &PipelineConfig,
) -> Result<Vec<LambdaRow>> {
    let mut rows = Vec::new();
    for &lambda in values {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("λ_u2 = {lambda} must be non-negative")));
        }
        let mut c = cfg.clone();
        c.generator.lambda_u2 = lambda;
        let run = stage3_and_eval(ds, ver, reg, priors, &c)?;
        let ape = match oracle {
            Some((o, budget)) => {
                let s = GeneratorSampler {
                    model: &run.generator.model,
                    a_unseen: ds.train_view().a_unseen,
                };
                let r = ape_gaussian(o, &s, &priors.g_prior, budget.fit_samples, budget.mc_samples, &mut Rng::new(c.generator.seed).fork(7))?;
                Some(r.class_mean)
            }
            None => None,
        };
        rows.push(LambdaRow {
            lambda_u2: lambda,
            t1: run.report.t1,
            ape,
        });
    }
    Ok(rows)
}

pub fn lambda_csv(rows: &[LambdaRow], fingerprint: &str, seed: u64) -> String {
    let mut out = format!("# fingerprint={fingerprint} seed={seed}\nlambda_u2,t1,ape\n");
    for r in rows {
        let ape = r.ape.map(|a| format!("{a:.6e}")).unwrap_or_default();
        out.push_str(&format!("{},{:.6},{ape}\n", r.lambda_u2, r.t1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_routes_agree() {
        let toy = DiscreteToy::worked_example();
        let t = ape_table(&toy).unwrap();
        assert!((t.conditional[0][0] - 0.1).abs() < 1e-12);
        assert!((t.posterior[0][0] - 0.1).abs() < 1e-12);
        assert!(t.max_discrepancy() <= 1e-12);
    }

    #[test]
    fn identical_generator_has_zero_ape() {
        let p = vec![vec![0.1, 0.9], vec![0.5, 0.5]];
        let toy = DiscreteToy::new(vec![0.3, 0.7], vec![0.3, 0.7], p.clone(), p).unwrap();
        assert!(ape_table(&toy).unwrap().per_class().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn ratio_condition_gives_zero() {
        let toy = DiscreteToy::shared_conditional(vec![0.2, 0.3, 0.5], vec![0.3, 0.7], vec![0.7, 0.3]).unwrap();
        let t = ape_table(&toy).unwrap();
        assert!(t.conditional.iter().flatten().chain(t.posterior.iter().flatten()).all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn mismatched_marginals_name_the_outcome() {
        let toy = DiscreteToy::new(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        )
        .unwrap();
        let err = ape_identity_check(&toy).unwrap_err().to_string();
        assert!(err.contains("x0"), "{err}");
    }

    #[test]
    fn gaussian_fit_floors_variance() {
        let g = DiagGaussian::fit(&Matrix::filled(5, 2, 3.0)).unwrap();
        assert_eq!(g.var, vec![VAR_FLOOR; 2]);
    }
}
