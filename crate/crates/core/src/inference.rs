//! Resampling tests for choice-set membership and their contamination-robust
//! counterparts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::FunctionClassSpec;
use crate::error::{domain, Error, Result};
use crate::protocol::{ActionId, Consequence, ConsequenceSpace, Protocol};
use crate::rng::{mix, stream};
use crate::statistics::{ContaminationSpec, Engine, PairContamination, Placement, StatValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Splits of the pooled sample drawn without replacement.
    #[default]
    Permutation,
    /// Both groups drawn from the pooled sample with replacement.
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub n_resamples: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: ResampleMode,
    /// Keep every resampled statistic in the report.
    #[serde(default)]
    pub keep_resamples: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { alpha: 0.05, n_resamples: 10_000, seed: 0, mode: ResampleMode::Permutation, keep_resamples: false }
    }
}

impl TestConfig {
    pub fn new(alpha: f64, n_resamples: usize, seed: u64) -> Self {
        Self { alpha, n_resamples, seed, ..Self::default() }
    }

    pub fn with_mode(mut self, mode: ResampleMode) -> Self {
        self.mode = mode;
        self
    }

    /// `alpha = 0` is accepted as a level at which nothing is ever rejected.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(domain(format!("alpha must lie in [0, 0.5), got {}", self.alpha)));
        }
        if self.n_resamples == 0 {
            return Err(domain("need at least one resample"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleSummary {
    pub quantiles: Vec<QuantilePoint>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustDetail {
    pub gamma_j: f64,
    pub gamma_i: f64,
    /// Lower empirical quantile of the resampled lower bounds; `None` when
    /// the level is too small for any order statistic (never rejects).
    pub critical_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub j: ActionId,
    pub i: ActionId,
    pub observed: StatValue,
    pub resample_stats: ResampleSummary,
    pub p_value: f64,
    pub reject: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub robust: Option<RobustDetail>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub target: ActionId,
    pub competitors: Vec<ActionId>,
    pub pairwise: Vec<PairwiseResult>,
    pub global_reject: bool,
    pub config: TestConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub contamination: Option<ContaminationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownPoint {
    pub share: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCurve {
    pub j: ActionId,
    pub i: ActionId,
    pub alpha: f64,
    pub points: Vec<BreakdownPoint>,
    /// Largest share at which the test still rejects.
    pub breakdown_share: Option<f64>,
}

impl BreakdownCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("share,p_value\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.share, p.p_value));
        }
        s
    }
}

const SUMMARY_LEVELS: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];
const SIZE_RATIO_WARNING: f64 = 20.0;

/// Pooled data of one ordered pair, with its resampled splits.
struct PairData {
    engine: Engine,
    cj: Vec<u32>,
    ci: Vec<u32>,
    zj: usize,
    zi: usize,
    /// Node index of every pooled point, group `j` first.
    pooled: Vec<u32>,
    seed: u64,
    warnings: Vec<String>,
}

impl PairData {
    fn new(protocol: &Protocol, j: usize, i: usize, class: &FunctionClassSpec, cfg: &TestConfig) -> Result<Self> {
        cfg.validate()?;
        if j == i {
            return Err(domain("a pairwise test needs two different actions"));
        }
        let (sj, si) = (protocol.sample_at(j), protocol.sample_at(i));
        let engine = Engine::new(class, sj.dim(), sj.directions(), sj.points().chain(si.points()))?;
        let pooled: Vec<u32> = sj.points().chain(si.points()).map(|p| engine.index_of(p) as u32).collect();
        let (zj, zi) = (sj.len(), si.len());
        let mut warnings = Vec::new();
        let ratio = zj.max(zi) as f64 / zj.min(zi) as f64;
        if ratio > SIZE_RATIO_WARNING {
            warnings.push(format!("sample sizes {zj} and {zi} differ by a factor above {SIZE_RATIO_WARNING}"));
        }
        Ok(Self {
            cj: engine.counts(&sj),
            ci: engine.counts(&si),
            engine,
            zj,
            zi,
            pooled,
            seed: mix(cfg.seed, &[j as u64, i as u64]),
            warnings,
        })
    }

    fn nodes(&self) -> usize {
        self.cj.len()
    }

    /// Group counts of resample `k`; each index owns its own random stream.
    fn split(&self, k: usize, mode: ResampleMode) -> (Vec<u32>, Vec<u32>) {
        let mut rng = stream(self.seed, k as u64);
        let l = self.pooled.len();
        let mut cu = vec![0u32; self.nodes()];
        let mut cv = vec![0u32; self.nodes()];
        match mode {
            ResampleMode::Permutation => {
                let mut idx: Vec<u32> = self.pooled.clone();
                for t in 0..self.zj {
                    let r = rng.random_range(t..l);
                    idx.swap(t, r);
                }
                for (t, &x) in idx.iter().enumerate() {
                    if t < self.zj {
                        cu[x as usize] += 1;
                    } else {
                        cv[x as usize] += 1;
                    }
                }
            }
            ResampleMode::Bootstrap => {
                for t in 0..l {
                    let x = self.pooled[rng.random_range(0..l)] as usize;
                    if t < self.zj {
                        cu[x] += 1;
                    } else {
                        cv[x] += 1;
                    }
                }
            }
        }
        (cu, cv)
    }

    fn splits(&self, cfg: &TestConfig) -> Vec<(Vec<u32>, Vec<u32>)> {
        (0..cfg.n_resamples).into_par_iter().map(|k| self.split(k, cfg.mode)).collect()
    }

    fn observed(&self, place: Option<Placement>) -> Result<StatValue> {
        match place {
            None => Ok(self.engine.evaluate(&self.cj, self.zj, &self.ci, self.zi)),
            Some(p) => self.engine.evaluate_contaminated(&self.cj, self.zj, &self.ci, self.zi, p),
        }
    }

    fn resampled(&self, splits: &[(Vec<u32>, Vec<u32>)], place: Option<Placement>) -> Result<Vec<f64>> {
        splits
            .par_iter()
            .map(|(cu, cv)| match place {
                None => Ok(self.engine.evaluate(cu, self.zj, cv, self.zi).value),
                Some(p) => Ok(self.engine.evaluate_contaminated(cu, self.zj, cv, self.zi, p)?.value),
            })
            .collect()
    }
}

fn p_value(stats: &[f64], observed: f64) -> f64 {
    let below = stats.iter().filter(|&&t| t <= observed).count();
    (1 + below) as f64 / (stats.len() + 1) as f64
}

/// Lower empirical quantile used as critical value: the `r`-th smallest
/// statistic with `r = ⌈α(N+1)⌉ − 1`, or `None` when `r = 0`. With this order
/// statistic, `d < Q` holds exactly when the add-one p-value is below α.
fn critical_value(stats: &[f64], alpha: f64) -> Option<f64> {
    let r = (alpha * (stats.len() + 1) as f64).ceil() as usize;
    let r = r.saturating_sub(1).min(stats.len());
    if r == 0 {
        return None;
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Some(sorted[r - 1])
}

fn summary(stats: Vec<f64>, keep: bool) -> ResampleSummary {
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let quantiles = SUMMARY_LEVELS
        .iter()
        .map(|&q| {
            let k = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            QuantilePoint { level: q, value: sorted[k] }
        })
        .collect();
    ResampleSummary { quantiles, values: keep.then_some(stats) }
}

fn pair_result(
    protocol: &Protocol,
    j: usize,
    i: usize,
    class: &FunctionClassSpec,
    cfg: &TestConfig,
    shares: Option<PairContamination>,
) -> Result<PairwiseResult> {
    let data = PairData::new(protocol, j, i, class, cfg)?;
    let splits = data.splits(cfg);
    let (observed, stats, robust, reject);
    match shares {
        None => {
            observed = data.observed(None)?;
            stats = data.resampled(&splits, None)?;
            robust = None;
            reject = p_value(&stats, observed.value) < cfg.alpha;
        }
        Some(s) => {
            observed = data.observed(Some(Placement { shares: s, top_on_u: true }))?;
            stats = data.resampled(&splits, Some(Placement { shares: s, top_on_u: false }))?;
            let q = critical_value(&stats, cfg.alpha);
            reject = q.is_some_and(|q| observed.value < q);
            robust = Some(RobustDetail { gamma_j: s.gamma_u, gamma_i: s.gamma_v, critical_value: q });
        }
    }
    let p = p_value(&stats, observed.value);
    Ok(PairwiseResult {
        j: protocol.actions()[j].clone(),
        i: protocol.actions()[i].clone(),
        observed,
        resample_stats: summary(stats, cfg.keep_resamples),
        p_value: p,
        reject,
        robust,
        warnings: data.warnings,
    })
}

/// Tests equality of the two actions' distributions against the alternative
/// that `i` is not dominated by `j`, using `T(sample j, sample i)`. Small
/// values of the statistic are evidence against the null.
pub fn pairwise_permutation_test(
    protocol: &Protocol,
    j: &str,
    i: &str,
    class: &FunctionClassSpec,
    cfg: &TestConfig,
) -> Result<PairwiseResult> {
    pair_result(protocol, protocol.action_index(j)?, protocol.action_index(i)?, class, cfg, None)
}

/// The same test with group samples drawn with replacement.
pub fn bootstrap_variant(
    protocol: &Protocol,
    j: &str,
    i: &str,
    class: &FunctionClassSpec,
    cfg: &TestConfig,
) -> Result<PairwiseResult> {
    let cfg = cfg.clone().with_mode(ResampleMode::Bootstrap);
    pairwise_permutation_test(protocol, j, i, class, &cfg)
}

fn competitors<S: AsRef<str>>(protocol: &Protocol, target: &str, set: &[S]) -> Result<(usize, Vec<usize>)> {
    let i = protocol.action_index(target)?;
    let mut idx = Vec::new();
    for a in set {
        idx.push(protocol.action_index(a.as_ref())?);
    }
    if !idx.contains(&i) {
        return Err(domain(format!("target {target} is not in the compared set")));
    }
    idx.sort_unstable();
    idx.dedup();
    if idx.len() < 2 {
        return Err(domain("the compared set needs at least two actions"));
    }
    idx.retain(|&k| k != i);
    Ok((i, idx))
}

fn report(
    protocol: &Protocol,
    i: usize,
    others: Vec<usize>,
    pairwise: Vec<PairwiseResult>,
    cfg: &TestConfig,
    contamination: Option<ContaminationSpec>,
) -> TestReport {
    TestReport {
        target: protocol.actions()[i].clone(),
        competitors: others.iter().map(|&k| protocol.actions()[k].clone()).collect(),
        global_reject: pairwise.iter().all(|r| r.reject),
        pairwise,
        config: cfg.clone(),
        contamination,
    }
}

/// Tests whether `target` belongs to the choice set of `set`: rejects when
/// every pairwise test against the other actions rejects.
pub fn membership_test<S: AsRef<str>>(
    protocol: &Protocol,
    target: &str,
    set: &[S],
    class: &FunctionClassSpec,
    cfg: &TestConfig,
) -> Result<TestReport> {
    let (i, others) = competitors(protocol, target, set)?;
    let pairwise = others
        .iter()
        .map(|&j| pair_result(protocol, j, i, class, cfg, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(report(protocol, i, others, pairwise, cfg, None))
}

/// Membership test valid under contamination: the observed statistic is
/// replaced by its upper bound and each resampled one by its lower bound.
pub fn robust_membership_test<S: AsRef<str>>(
    protocol: &Protocol,
    target: &str,
    set: &[S],
    class: &FunctionClassSpec,
    spec: &ContaminationSpec,
    cfg: &TestConfig,
) -> Result<TestReport> {
    robust_class(class)?;
    let (i, others) = competitors(protocol, target, set)?;
    let z = protocol.counts();
    let names = protocol.actions();
    let gi = spec.gamma(&names[i], z[i])?;
    let pairwise = others
        .iter()
        .map(|&j| {
            let shares = PairContamination::new(spec.gamma(&names[j], z[j])?, gi)?;
            pair_result(protocol, j, i, class, cfg, Some(shares))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(protocol, i, others, pairwise, cfg, Some(spec.clone())))
}

fn robust_class(class: &FunctionClassSpec) -> Result<()> {
    match class {
        FunctionClassSpec::EuSingleton { .. } | FunctionClassSpec::FsdIsotoneIndicators => Ok(()),
        other => Err(Error::UnsupportedClass(format!(
            "robust tests are not available for the {} class",
            other.name()
        ))),
    }
}

/// Robust p-values of one pair over a grid of contamination shares applied
/// to both actions, all sharing one set of resampled splits.
pub fn breakdown_curve(
    protocol: &Protocol,
    j: &str,
    i: &str,
    class: &FunctionClassSpec,
    cfg: &TestConfig,
    shares: &[f64],
) -> Result<BreakdownCurve> {
    robust_class(class)?;
    if shares.is_empty() {
        return Err(domain("no contamination shares given"));
    }
    if shares.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(domain("contamination shares must lie in [0, 1]"));
    }
    if shares.windows(2).any(|w| w[0] > w[1]) {
        return Err(domain("contamination shares must be sorted ascending"));
    }
    let (jx, ix) = (protocol.action_index(j)?, protocol.action_index(i)?);
    let data = PairData::new(protocol, jx, ix, class, cfg)?;
    let splits = data.splits(cfg);
    let mut points = Vec::with_capacity(shares.len());
    for &share in shares {
        let s = PairContamination::new(share, share)?;
        let d0 = data.observed(Some(Placement { shares: s, top_on_u: true }))?.value;
        let stats = data.resampled(&splits, Some(Placement { shares: s, top_on_u: false }))?;
        let reject = critical_value(&stats, cfg.alpha).is_some_and(|q| d0 < q);
        points.push(BreakdownPoint { share, p_value: p_value(&stats, d0), reject });
    }
    let breakdown_share = points.iter().filter(|p| p.reject).map(|p| p.share).next_back();
    Ok(BreakdownCurve {
        j: protocol.actions()[jx].clone(),
        i: protocol.actions()[ix].clone(),
        alpha: cfg.alpha,
        points,
        breakdown_share,
    })
}

/// Parses `lo:hi:step` into an inclusive ascending grid of shares.
pub fn share_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo <= hi && lo >= 0.0 && hi <= 1.0) {
        return Err(domain(format!("bad share grid {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect())
}

/// Generator of two samples from one common distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullGenerator {
    Binomial { trials: u64, p: f64, size: usize },
    Constant { value: f64, size: usize },
}

impl NullGenerator {
    fn draw(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match self {
            NullGenerator::Binomial { trials, p, size } => {
                let d = rand_distr::Binomial::new(*trials, *p).map_err(|e| domain(e.to_string()))?;
                Ok((0..*size).map(|_| rng.sample(d) as f64).collect())
            }
            NullGenerator::Constant { value, size } => Ok(vec![*value; *size]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Type1Summary {
    pub trials: usize,
    pub rejections: usize,
    pub rate: f64,
    /// `α + 3·sqrt(α(1−α)/trials)`.
    pub bound: f64,
}

/// Rejection rate of the pairwise test over repeated draws under the null.
pub fn type1_error_simulation(
    generator: &NullGenerator,
    class: &FunctionClassSpec,
    cfg: &TestConfig,
    n_trials: usize,
) -> Result<Type1Summary> {
    cfg.validate()?;
    let rejected: Vec<bool> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(mix(cfg.seed, &[0x6e75_6c6c]), t as u64);
            let (a, b) = (generator.draw(&mut rng)?, generator.draw(&mut rng)?);
            let entries = a
                .into_iter()
                .map(|x| (ActionId::from("a"), x))
                .chain(b.into_iter().map(|x| (ActionId::from("b"), x)))
                .map(|(k, x)| Ok((k, Consequence::scalar(x)?)))
                .collect::<Result<Vec<_>>>()?;
            let p = Protocol::from_entries(ConsequenceSpace::scalar(), entries)?;
            let trial_cfg = TestConfig { seed: mix(cfg.seed, &[t as u64]), keep_resamples: false, ..cfg.clone() };
            Ok(pair_result(&p, 0, 1, class, &trial_cfg, None)?.reject)
        })
        .collect::<Result<_>>()?;
    let rejections = rejected.iter().filter(|&&r| r).count();
    let a = cfg.alpha;
    Ok(Type1Summary {
        trials: n_trials,
        rejections,
        rate: if n_trials == 0 { 0.0 } else { rejections as f64 / n_trials as f64 },
        bound: a + 3.0 * (a * (1.0 - a) / n_trials.max(1) as f64).sqrt(),
    })
}
