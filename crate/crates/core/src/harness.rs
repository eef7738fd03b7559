//! Simulation scenarios and the bundled replication studies.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{
    ecf_dominance, ecf_eu, ChoiceRule, ChoiceSet, RegularizationRule, RegularizationSchedule,
};
use crate::classes::{FunctionClassSpec, GridSpec, Utility};
use crate::error::{domain, Result};
use crate::inference::{
    breakdown_curve, membership_test, pairwise_permutation_test, share_grid, BreakdownCurve,
    PairwiseResult, TestConfig, TestReport,
};
use crate::protocol::{ActionId, ColumnSchema, Consequence, ConsequenceSpace, Protocol};
use crate::rng::{mix, stream};
use crate::statistics::t_statistic;
use crate::EmpiricalSample;

pub const TABLE1_CSV: &str = include_str!("../data/table1.csv");
pub const PROMPTING_CSV: &str = include_str!("../data/prompting.csv");

pub fn table1_protocol() -> Protocol {
    Protocol::parse_csv(TABLE1_CSV, &ColumnSchema::default()).expect("bundled data parses")
}

/// Direction declaration of the prompting data: perplexity is minimized,
/// coherence maximized.
pub fn prompting_schema() -> ColumnSchema {
    ColumnSchema::from_flags(&["ppl".into()], &["coh".into()]).expect("static schema")
}

pub fn prompting_protocol() -> Protocol {
    Protocol::parse_csv(PROMPTING_CSV, &prompting_schema()).expect("bundled data parses")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionProbability {
    pub action: ActionId,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffRow {
    pub action: ActionId,
    /// Consequence under each state of the world.
    pub payoffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Each round draws one Binomial(size, p) consequence per action.
    BinomialIid {
        #[serde(default = "default_size")]
        size: u64,
        actions: Vec<ActionProbability>,
    },
    /// The state is chosen against the decision maker: `favored` always
    /// meets `favored_state`, every other action meets `other_state`.
    DeterministicAdversary {
        table: Vec<PayoffRow>,
        favored: ActionId,
        favored_state: usize,
        other_state: usize,
    },
    /// Replays a recorded protocol; round `r` holds the first `r` trials of
    /// every action.
    FromFile {
        path: PathBuf,
        #[serde(default)]
        schema: ColumnSchema,
    },
}

fn default_size() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ScenarioKind::BinomialIid { actions, .. } => {
                if actions.is_empty() {
                    return Err(domain("scenario needs at least one action"));
                }
                if let Some(a) = actions.iter().find(|a| !(0.0..=1.0).contains(&a.p)) {
                    return Err(domain(format!("probability {} for {} outside [0, 1]", a.p, a.action)));
                }
            }
            ScenarioKind::DeterministicAdversary { table, favored, favored_state, other_state } => {
                let width = table.first().map(|r| r.payoffs.len()).unwrap_or(0);
                if table.is_empty() || table.iter().any(|r| r.payoffs.len() != width) {
                    return Err(domain("payoff table must be nonempty and rectangular"));
                }
                if *favored_state >= width || *other_state >= width {
                    return Err(domain("state index outside the payoff table"));
                }
                if !table.iter().any(|r| r.action == *favored) {
                    return Err(domain(format!("favored action {favored} not in the table")));
                }
            }
            ScenarioKind::FromFile { .. } => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub min_z: usize,
    pub chosen: Vec<ActionId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub actions: Vec<ActionId>,
    pub rounds: Vec<RoundRecord>,
}

impl EvolutionTrace {
    /// `round,min_z` followed by one 0/1 indicator column per action.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,min_z");
        for a in &self.actions {
            s.push(',');
            s.push_str(a.as_str());
        }
        s.push('\n');
        for r in &self.rounds {
            s.push_str(&format!("{},{}", r.round, r.min_z));
            for a in &self.actions {
                s.push_str(if r.chosen.contains(a) { ",1" } else { ",0" });
            }
            s.push('\n');
        }
        s
    }

    /// Whether every round from `from` on selects exactly `set`.
    pub fn holds_from(&self, from: usize, set: &[&str]) -> bool {
        let want = |c: &[ActionId]| c.len() == set.len() && set.iter().all(|a| c.iter().any(|x| x.0 == *a));
        let tail: Vec<&RoundRecord> = self.rounds.iter().filter(|r| r.round >= from).collect();
        !tail.is_empty() && tail.iter().all(|r| want(&r.chosen))
    }
}

/// Grows a protocol one trial per action and round, recording the rule's
/// choice set after every round.
pub fn run_scenario(spec: &ScenarioSpec, rule: &ChoiceRule) -> Result<EvolutionTrace> {
    spec.validate()?;
    let space = ConsequenceSpace::scalar();
    let (actions, rows): (Vec<ActionId>, Vec<Vec<(ActionId, Consequence)>>) = match &spec.kind {
        ScenarioKind::BinomialIid { size, actions } => {
            let mut rng = stream(spec.seed, 0);
            let dists: Vec<Binomial> = actions
                .iter()
                .map(|a| Binomial::new(*size, a.p).map_err(|e| domain(e.to_string())))
                .collect::<Result<_>>()?;
            let rows = (0..spec.rounds)
                .map(|_| {
                    actions
                        .iter()
                        .zip(&dists)
                        .map(|(a, d)| Ok((a.action.clone(), Consequence::scalar(d.sample(&mut rng) as f64)?)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (actions.iter().map(|a| a.action.clone()).collect(), rows)
        }
        ScenarioKind::DeterministicAdversary { table, favored, favored_state, other_state } => {
            let round = table
                .iter()
                .map(|r| {
                    let s = if r.action == *favored { *favored_state } else { *other_state };
                    Ok((r.action.clone(), Consequence::scalar(r.payoffs[s])?))
                })
                .collect::<Result<Vec<_>>>()?;
            (table.iter().map(|r| r.action.clone()).collect(), vec![round; spec.rounds])
        }
        ScenarioKind::FromFile { path, schema } => {
            let p = Protocol::load(path, schema)?;
            return replay(&p, spec.rounds, rule);
        }
    };
    let mut entries = Vec::new();
    let mut trace = EvolutionTrace { actions: actions.clone(), rounds: Vec::new() };
    for (r, row) in rows.into_iter().enumerate() {
        entries.extend(row);
        let p = Protocol::with_actions(space.clone(), actions.clone(), entries.iter().cloned())?;
        let c = rule.apply(&p.full())?;
        trace.rounds.push(RoundRecord { round: r + 1, min_z: r + 1, chosen: c.chosen });
    }
    Ok(trace)
}

fn replay(p: &Protocol, rounds: usize, rule: &ChoiceRule) -> Result<EvolutionTrace> {
    let z = p.counts();
    let last = rounds.min(z.iter().copied().max().unwrap_or(0));
    let mut trace = EvolutionTrace { actions: p.actions().to_vec(), rounds: Vec::new() };
    for r in 1..=last {
        let mut seen = vec![0usize; z.len()];
        let mut entries = Vec::new();
        for e in p.entries() {
            if seen[e.action] < r {
                seen[e.action] += 1;
                entries.push((p.actions()[e.action].clone(), e.consequence.clone()));
            }
        }
        let q = Protocol::with_actions(p.space().clone(), p.actions().to_vec(), entries)?;
        let c = rule.apply(&q.full())?;
        trace.rounds.push(RoundRecord { round: r, min_z: q.full().min_count(), chosen: c.chosen });
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub eu: ChoiceSet,
    pub fsd: ChoiceSet,
}

/// Expected-utility and first-order dominance choice sets on the card data.
pub fn replicate_table1() -> Result<Table1Report> {
    let p = table1_protocol();
    Ok(Table1Report {
        eu: ecf_eu(&p.full(), &Utility::identity())?,
        fsd: ecf_dominance(&p.full(), &FunctionClassSpec::fsd())?,
    })
}

const COLORS: [&str; 5] = ["Red", "Blue", "Green", "Yellow", "Black"];

/// The two binomial card scenarios (`which` is 1 or 2).
pub fn example4_scenario(which: u8, rounds: usize, seed: u64) -> Result<ScenarioSpec> {
    let probs = match which {
        1 => [0.25, 0.2, 0.22, 0.22, 0.21],
        2 => [0.32, 0.32, 0.45, 0.8, 0.8],
        _ => return Err(domain(format!("unknown card scenario {which}"))),
    };
    Ok(ScenarioSpec {
        kind: ScenarioKind::BinomialIid {
            size: 10,
            actions: COLORS
                .iter()
                .zip(probs)
                .map(|(c, p)| ActionProbability { action: ActionId::from(*c), p })
                .collect(),
        },
        rounds,
        seed,
    })
}

pub fn example4_eu_rule() -> ChoiceRule {
    ChoiceRule::Eu { utility: Utility::identity() }
}

/// Regularized dominance rule used for the second card scenario. The two
/// best actions share one distribution there, so the margin is applied to
/// both criterion components.
pub fn example4_fsd_rule() -> ChoiceRule {
    ChoiceRule::Regularized {
        class: FunctionClassSpec::fsd(),
        schedule: RegularizationSchedule { c: 0.2, lipschitz: 2.0, rule: RegularizationRule::BothRegularized },
    }
}

/// Card game where the state always turns out in Red's favour.
pub fn adversary_scenario(rounds: usize) -> ScenarioSpec {
    let payoffs = [[4.0, 1.0, 1.0], [6.0, 3.0, 2.0], [5.0, 3.0, 3.0], [10.0, 2.0, 2.0], [8.0, 2.0, 3.0]];
    ScenarioSpec {
        kind: ScenarioKind::DeterministicAdversary {
            table: COLORS
                .iter()
                .zip(payoffs)
                .map(|(c, p)| PayoffRow { action: ActionId::from(*c), payoffs: p.to_vec() })
                .collect(),
            favored: ActionId::from("Red"),
            favored_state: 0,
            other_state: 2,
        },
        rounds,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptingReport {
    pub choice: ChoiceSet,
    pub pairwise: Vec<PairwiseResult>,
    pub neutral_membership: TestReport,
    pub breakdown: Vec<BreakdownCurve>,
}

impl PromptingReport {
    /// Ordered pairs `(j, i)` whose test rejects.
    pub fn rejected_pairs(&self) -> Vec<(String, String)> {
        self.pairwise
            .iter()
            .filter(|r| r.reject)
            .map(|r| (r.j.0.clone(), r.i.0.clone()))
            .collect()
    }
}

/// Dominance choice set, all six pairwise tests, the membership test for
/// `neutral`, and breakdown curves for the pairs against `neutral`.
pub fn replicate_prompting_study(data: Option<&Path>, cfg: &TestConfig) -> Result<PromptingReport> {
    let p = match data {
        Some(path) => Protocol::load(path, &prompting_schema())?,
        None => prompting_protocol(),
    };
    let fsd = FunctionClassSpec::fsd();
    let names: Vec<String> = p.actions().iter().map(|a| a.0.clone()).collect();
    let mut pairwise = Vec::new();
    for j in &names {
        for i in &names {
            if i != j {
                pairwise.push(pairwise_permutation_test(&p, j, i, &fsd, cfg)?);
            }
        }
    }
    let shares = share_grid(0.0, 0.5, 0.01)?;
    let mut breakdown = Vec::new();
    for j in ["inpolite", "polite"] {
        breakdown.push(breakdown_curve(&p, j, "neutral", &fsd, cfg, &shares)?);
    }
    Ok(PromptingReport {
        choice: ecf_dominance(&p.full(), &fsd)?,
        pairwise,
        neutral_membership: membership_test(&p, "neutral", &names, &fsd, cfg)?,
        breakdown,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub x: f64,
    pub f_t1: f64,
    pub f_t2: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsdDemoReport {
    pub n: usize,
    pub n_rep: usize,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub ecdf: Vec<EcdfPoint>,
    /// Share of evaluation points where the ECDF of `t1` lies above that of
    /// `t2` by more than three pointwise standard errors.
    pub violation_fraction: f64,
    pub violated: bool,
}

impl SsdDemoReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,f_t1,f_t2\n");
        for p in &self.ecdf {
            s.push_str(&format!("{},{},{}\n", p.x, p.f_t1, p.f_t2));
        }
        s
    }
}

const VIOLATION_SHARE: f64 = 0.05;

/// Concave-class statistic on a mean-preserving spread pair versus on a
/// random relabelling of the pooled data, repeated `n_rep` times.
pub fn ssd_assumption3_demo(n: usize, n_rep: usize, seed: u64) -> Result<SsdDemoReport> {
    if n == 0 || n_rep == 0 {
        return Err(domain("sample size and repetitions must be positive"));
    }
    let class = FunctionClassSpec::SsdConcave { grid: Some(GridSpec::new(0.0, 40.0, 50_000)?) };
    let fast = Exp::new(20.0).map_err(|e| domain(e.to_string()))?;
    let unit = Exp::new(1.0).map_err(|e| domain(e.to_string()))?;
    let base = mix(seed, &[n as u64]);
    let pairs: Vec<(f64, f64)> = (0..n_rep)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(base, k as u64);
            let eps: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng) - 1.0).collect();
            let y: Vec<f64> = (0..n).map(|_| fast.sample(&mut rng) + 20.0).collect();
            let x: Vec<f64> = eps.iter().map(|e| fast.sample(&mut rng) + 20.0 + e).collect();
            let mut z: Vec<f64> = x.iter().chain(&y).copied().collect();
            for t in (1..z.len()).rev() {
                z.swap(t, rng.random_range(0..=t));
            }
            let s = |v: &[f64]| EmpiricalSample::from_scalars(v);
            let t1 = t_statistic(&class, &s(&y)?, &s(&x)?)?.value;
            let t2 = t_statistic(&class, &s(&z[n..])?, &s(&z[..n])?)?.value;
            Ok((t1, t2))
        })
        .collect::<Result<_>>()?;
    let (t1, t2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ecdf = ecdf_comparison(&t1, &t2);
    let bad = ecdf.iter().filter(|p| p.violation).count();
    let violation_fraction = bad as f64 / ecdf.len() as f64;
    Ok(SsdDemoReport {
        n,
        n_rep,
        t1,
        t2,
        ecdf,
        violation_fraction,
        violated: violation_fraction >= VIOLATION_SHARE,
    })
}

fn ecdf_comparison(t1: &[f64], t2: &[f64]) -> Vec<EcdfPoint> {
    let mut a = t1.to_vec();
    let mut b = t2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut xs: Vec<f64> = a.iter().chain(&b).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    xs.into_iter()
        .map(|x| {
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            let (f1, f2) = (i as f64 / n1, j as f64 / n2);
            let pooled = (i + j) as f64 / (n1 + n2);
            let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
            EcdfPoint { x, f_t1: f1, f_t2: f2, violation: f1 - f2 > 3.0 * se }
        })
        .collect()
}
