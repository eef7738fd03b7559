//! Empirical choice sets: expected utility, pairwise dominance, the
//! regularized rule and the contamination-robust rule.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{FunctionClassSpec, Utility};
use crate::error::{domain, Result};
use crate::protocol::{ActionId, EmpiricalSample, SubProtocol};
use crate::statistics::{ContaminationSpec, CriterionPair, Engine, PairContamination, Placement};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub action: ActionId,
    pub dominated_by: ActionId,
    pub cr1: f64,
    pub cr2: f64,
    /// Required lower bound on `cr1` (exclusive) and slack added to `cr2`.
    pub cr1_margin: f64,
    pub cr2_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub chosen: Vec<ActionId>,
    pub excluded: Vec<Exclusion>,
}

impl ChoiceSet {
    pub fn contains(&self, a: &str) -> bool {
        self.chosen.iter().any(|x| x.0 == a)
    }

    pub fn names(&self) -> Vec<&str> {
        self.chosen.iter().map(|a| a.as_str()).collect()
    }

    pub fn is_subset_of(&self, other: &ChoiceSet) -> bool {
        self.chosen.iter().all(|a| other.chosen.contains(a))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "chosen: {}", self.names().join(", "));
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "{:<16} {:<16} {:>12} {:>12}", "excluded", "dominated by", "cr1", "cr2");
            for e in &self.excluded {
                let _ = writeln!(
                    out,
                    "{:<16} {:<16} {:>12.6} {:>12.6}",
                    e.action.as_str(),
                    e.dominated_by.as_str(),
                    e.cr1,
                    e.cr2
                );
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationRule {
    /// `cr1 > 0` and `cr2 + 4δ ≥ 0`.
    #[default]
    Standard,
    /// `cr1 > 4δ` and `cr2 + 4δ ≥ 0`.
    BothRegularized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    pub c: f64,
    pub lipschitz: f64,
    #[serde(default)]
    pub rule: RegularizationRule,
}

impl Default for RegularizationSchedule {
    fn default() -> Self {
        Self { c: 1.0, lipschitz: 2.0, rule: RegularizationRule::Standard }
    }
}

impl RegularizationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(domain(format!("regularization scale must be positive, got {}", self.c)));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz >= 0.0) {
            return Err(domain(format!("Lipschitz factor must be non-negative, got {}", self.lipschitz)));
        }
        Ok(())
    }

    /// `ε = c · z^(−1/4)`.
    pub fn epsilon(&self, z_min: usize) -> f64 {
        self.c * (z_min as f64).powf(-0.25)
    }

    pub fn delta(&self, z_min: usize) -> f64 {
        self.lipschitz * self.epsilon(z_min)
    }
}

fn samples(sp: &SubProtocol) -> Vec<EmpiricalSample> {
    sp.indices().iter().map(|&k| sp.sample(k)).collect()
}

/// Applies the exclusion rule to a matrix of criterion pairs, where
/// `cr[a][b]` compares action `a` against action `b`.
fn apply_rule(sp: &SubProtocol, cr: &[Vec<CriterionPair>], m1: f64, m2: f64) -> ChoiceSet {
    let names = sp.actions();
    let mut chosen = Vec::new();
    let mut excluded = Vec::new();
    for a in 0..names.len() {
        let dom = (0..names.len()).find(|&b| b != a && cr[a][b].cr1 > m1 && cr[a][b].cr2 + m2 >= 0.0);
        match dom {
            None => chosen.push(names[a].clone()),
            Some(b) => excluded.push(Exclusion {
                action: names[a].clone(),
                dominated_by: names[b].clone(),
                cr1: cr[a][b].cr1,
                cr2: cr[a][b].cr2,
                cr1_margin: m1,
                cr2_margin: m2,
            }),
        }
    }
    ChoiceSet { chosen, excluded }
}

/// Criterion pairs for every ordered pair of selected actions.
fn criterion_matrix(
    sp: &SubProtocol,
    class: &FunctionClassSpec,
    spec: Option<&ContaminationSpec>,
) -> Result<Vec<Vec<CriterionPair>>> {
    let xs = samples(sp);
    let n = xs.len();
    let z = sp.parent().counts();
    let names = sp.actions();
    let gammas: Vec<f64> = match spec {
        None => vec![0.0; n],
        Some(s) => sp
            .indices()
            .iter()
            .zip(&names)
            .map(|(&k, a)| s.gamma(a, z[k]))
            .collect::<Result<_>>()?,
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|(a, b)| a < b).collect();
    let results: Vec<Result<(CriterionPair, CriterionPair)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (x, y) = (&xs[a], &xs[b]);
            let e = Engine::new(class, x.dim(), x.directions(), x.points().chain(y.points()))?;
            let (cx, cy) = (e.counts(x), e.counts(y));
            match spec {
                None => {
                    let t_ab = e.evaluate(&cx, x.len(), &cy, y.len()).value;
                    let t_ba = e.evaluate(&cy, y.len(), &cx, x.len()).value;
                    Ok((CriterionPair { cr1: -t_ab, cr2: t_ba }, CriterionPair { cr1: -t_ba, cr2: t_ab }))
                }
                Some(_) => {
                    let (ga, gb) = (gammas[a], gammas[b]);
                    let pair = |cu: &[u32], nu, cv: &[u32], nv, gu, gv| -> Result<CriterionPair> {
                        // Exclusion of `u` by `v` must hold for every member of both
                        // neighbourhoods: worst case of the first component is the
                        // supremum of T(u, v), of the second the infimum of T(v, u).
                        let sup = e.evaluate_contaminated(
                            cu,
                            nu,
                            cv,
                            nv,
                            Placement { shares: PairContamination { gamma_u: gu, gamma_v: gv }, top_on_u: true },
                        )?;
                        let inf = e.evaluate_contaminated(
                            cv,
                            nv,
                            cu,
                            nu,
                            Placement { shares: PairContamination { gamma_u: gv, gamma_v: gu }, top_on_u: false },
                        )?;
                        Ok(CriterionPair { cr1: -sup.value, cr2: inf.value })
                    };
                    Ok((
                        pair(&cx, x.len(), &cy, y.len(), ga, gb)?,
                        pair(&cy, y.len(), &cx, x.len(), gb, ga)?,
                    ))
                }
            }
        })
        .collect();
    let zero = CriterionPair { cr1: 0.0, cr2: 0.0 };
    let mut cr = vec![vec![zero; n]; n];
    for (&(a, b), r) in pairs.iter().zip(results) {
        let (ab, ba) = r?;
        cr[a][b] = ab;
        cr[b][a] = ba;
    }
    Ok(cr)
}

/// Actions with maximal empirical mean utility; exact ties are all kept.
pub fn ecf_eu(sp: &SubProtocol, utility: &Utility) -> Result<ChoiceSet> {
    let names = sp.actions();
    let mut means = Vec::with_capacity(names.len());
    for x in samples(sp) {
        let mut s = 0.0;
        for r in x.raw_points() {
            s += utility.eval(&r)?;
        }
        means.push(s / x.len() as f64);
    }
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = means.iter().position(|&m| m == best).expect("nonempty");
    let mut chosen = Vec::new();
    let mut excluded = Vec::new();
    for (k, &m) in means.iter().enumerate() {
        if m == best {
            chosen.push(names[k].clone());
        } else {
            excluded.push(Exclusion {
                action: names[k].clone(),
                dominated_by: names[top].clone(),
                cr1: best - m,
                cr2: best - m,
                cr1_margin: 0.0,
                cr2_margin: 0.0,
            });
        }
    }
    Ok(ChoiceSet { chosen, excluded })
}

/// Excludes an action iff another one strictly dominates it empirically.
pub fn ecf_dominance(sp: &SubProtocol, class: &FunctionClassSpec) -> Result<ChoiceSet> {
    let cr = criterion_matrix(sp, class, None)?;
    Ok(apply_rule(sp, &cr, 0.0, 0.0))
}

/// Dominance with the second criterion component relaxed by `4δ(ε)`,
/// `ε = c · z^(−1/4)` for the smallest trial count `z` in the sub-protocol.
pub fn ecf_regularized(
    sp: &SubProtocol,
    class: &FunctionClassSpec,
    sched: &RegularizationSchedule,
) -> Result<ChoiceSet> {
    sched.validate()?;
    let margin = 4.0 * sched.delta(sp.min_count());
    let cr = criterion_matrix(sp, class, None)?;
    let m1 = match sched.rule {
        RegularizationRule::Standard => 0.0,
        RegularizationRule::BothRegularized => margin,
    };
    Ok(apply_rule(sp, &cr, m1, margin))
}

/// Excludes an action only if some other action dominates it for every
/// pair of distributions in the two contamination neighbourhoods.
pub fn recf_gamma_robust(
    sp: &SubProtocol,
    class: &FunctionClassSpec,
    spec: &ContaminationSpec,
) -> Result<ChoiceSet> {
    match class {
        FunctionClassSpec::EuSingleton { .. } | FunctionClassSpec::FsdIsotoneIndicators => {}
        other => {
            return Err(crate::Error::UnsupportedClass(format!(
                "robust choice is not available for the {} class",
                other.name()
            )))
        }
    }
    let cr = criterion_matrix(sp, class, Some(spec))?;
    Ok(apply_rule(sp, &cr, 0.0, 0.0))
}

/// A configured choice rule, as used by scenarios and the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ChoiceRule {
    Eu { utility: Utility },
    Dominance { class: FunctionClassSpec },
    Regularized { class: FunctionClassSpec, schedule: RegularizationSchedule },
    Robust { class: FunctionClassSpec, contamination: ContaminationSpec },
}

impl ChoiceRule {
    pub fn apply(&self, sp: &SubProtocol) -> Result<ChoiceSet> {
        match self {
            ChoiceRule::Eu { utility } => ecf_eu(sp, utility),
            ChoiceRule::Dominance { class } => ecf_dominance(sp, class),
            ChoiceRule::Regularized { class, schedule } => ecf_regularized(sp, class, schedule),
            ChoiceRule::Robust { class, contamination } => recf_gamma_robust(sp, class, contamination),
        }
    }
}
