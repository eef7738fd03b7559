//! Two-sample criterion statistics `T(u, v) = inf_f (E_u f − E_v f)` and
//! their bounds under linear-vacuous contamination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classes::{
    covers, lex_cmp, weakly_below, Bounds, FunctionClassSpec, GridSpec,
};
use crate::closure::max_weight_closure;
use crate::error::{domain, Error, Result};
use crate::protocol::{ActionId, Direction, EmpiricalSample};

/// Describes which member of the class attains the infimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// The zero function (empty upper set).
    Zero,
    /// Indicator of the upper set generated by these points (raw orientation).
    /// Under contamination the set also contains the virtual top point, so an
    /// empty generator list stands for the top point alone.
    UpperSet { generators: Vec<Vec<f64>> },
    /// Index into the class's function list (0 for a single utility).
    Function { index: usize },
    /// Grid index of the minimizing prefix for the concave class.
    GridPoint { index: usize, at: f64 },
}

impl Witness {
    /// The threshold of a one-dimensional upper set, if this is one.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            Witness::UpperSet { generators } if generators.len() == 1 && generators[0].len() == 1 => {
                Some(generators[0][0])
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatValue {
    pub value: f64,
    pub witness: Witness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionPair {
    pub cr1: f64,
    pub cr2: f64,
}

/// Contamination shares for the two samples of one comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairContamination {
    pub gamma_u: f64,
    pub gamma_v: f64,
}

impl PairContamination {
    pub fn new(gamma_u: f64, gamma_v: f64) -> Result<Self> {
        for g in [gamma_u, gamma_v] {
            if !(0.0..=1.0).contains(&g) {
                return Err(domain(format!("contamination share {g} outside [0, 1]")));
            }
        }
        Ok(Self { gamma_u, gamma_v })
    }

    pub fn none() -> Self {
        Self { gamma_u: 0.0, gamma_v: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.gamma_u == 0.0 && self.gamma_v == 0.0
    }
}

/// Per-action contamination, either as shares or as counts of points that
/// may deviate (share = count / trials).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContaminationSpec {
    Uniform { gamma: f64 },
    Gamma { gamma: BTreeMap<ActionId, f64> },
    Count { k: BTreeMap<ActionId, usize> },
}

impl ContaminationSpec {
    pub fn uniform(gamma: f64) -> Self {
        ContaminationSpec::Uniform { gamma }
    }

    /// Share for an action with `z` trials. Unlisted actions are uncontaminated.
    pub fn gamma(&self, action: &ActionId, z: usize) -> Result<f64> {
        let g = match self {
            ContaminationSpec::Uniform { gamma } => *gamma,
            ContaminationSpec::Gamma { gamma } => gamma.get(action).copied().unwrap_or(0.0),
            ContaminationSpec::Count { k } => {
                let k = k.get(action).copied().unwrap_or(0);
                if k > z {
                    return Err(domain(format!("{k} contaminated points for {action} with {z} trials")));
                }
                k as f64 / z as f64
            }
        };
        if !(0.0..=1.0).contains(&g) {
            return Err(domain(format!("contamination share {g} for {action} outside [0, 1]")));
        }
        Ok(g)
    }
}

/// Where the virtual extreme points go: with `top_on_u` the first sample
/// receives the top point and the second the bottom point (the supremum),
/// otherwise the roles swap (the infimum).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Placement {
    pub shares: PairContamination,
    pub top_on_u: bool,
}

enum Kind {
    Values { table: Vec<Vec<f64>>, bounds: Bounds, single: bool },
    Chain,
    Dag { up: Vec<Vec<usize>> },
    Ssd { grid: GridSpec },
}

/// A statistic evaluator over a fixed pooled support. Samples are passed as
/// per-node counts, so resampled splits reuse the same support and produce
/// values that are bit-for-bit comparable to the observed one.
pub(crate) struct Engine {
    directions: Vec<Direction>,
    nodes: Vec<Vec<f64>>,
    kind: Kind,
}

impl Engine {
    pub fn new<'a>(
        class: &FunctionClassSpec,
        dim: usize,
        directions: &[Direction],
        points: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<Self> {
        Self::build(class, dim, directions, points, false)
    }

    pub fn build<'a>(
        class: &FunctionClassSpec,
        dim: usize,
        directions: &[Direction],
        points: impl IntoIterator<Item = &'a [f64]>,
        force_closure: bool,
    ) -> Result<Self> {
        class.validate()?;
        let mut nodes: Vec<Vec<f64>> = points.into_iter().map(|p| p.to_vec()).collect();
        if nodes.is_empty() {
            return Err(domain("empty samples"));
        }
        if nodes.iter().any(|p| p.len() != dim) {
            return Err(domain("sample dimension mismatch"));
        }
        nodes.sort_by(|a, b| lex_cmp(a, b));
        nodes.dedup_by(|a, b| lex_cmp(a, b).is_eq());
        for p in &mut nodes {
            p.iter_mut().for_each(|x| *x += 0.0);
        }
        let raw = |p: &[f64]| -> Vec<f64> {
            p.iter().zip(directions).map(|(x, d)| x * d.sign()).collect()
        };
        let kind = match class {
            FunctionClassSpec::EuSingleton { .. } | FunctionClassSpec::ExplicitFinite { .. } => {
                let raws: Vec<Vec<f64>> = nodes.iter().map(|p| raw(p)).collect();
                let bounds = class.bounds_on(&raws)?;
                let per_node: Vec<Vec<f64>> =
                    raws.iter().map(|r| class.member_values(r)).collect::<Result<_>>()?;
                let nf = per_node[0].len();
                let table = (0..nf).map(|f| per_node.iter().map(|v| v[f]).collect()).collect();
                Kind::Values {
                    table,
                    bounds,
                    single: matches!(class, FunctionClassSpec::EuSingleton { .. }),
                }
            }
            FunctionClassSpec::FsdIsotoneIndicators => {
                if dim == 1 && !force_closure {
                    Kind::Chain
                } else {
                    Kind::Dag { up: covers(&nodes) }
                }
            }
            FunctionClassSpec::SsdConcave { grid } => {
                if dim != 1 {
                    return Err(Error::UnsupportedClass(format!(
                        "concave class needs one-dimensional consequences, got {dim}"
                    )));
                }
                let (min, max) = (nodes[0][0], nodes[nodes.len() - 1][0]);
                let grid = match grid {
                    Some(g) => *g,
                    None => GridSpec::default_for(min, max)?,
                };
                if min < grid.lo || max > grid.hi {
                    return Err(Error::Coverage { lo: grid.lo, hi: grid.hi, min, max });
                }
                if grid.value(1) <= 0.0 {
                    return Err(domain(format!(
                        "grid points after the first must be positive (weight 1/t), grid starts at {}",
                        grid.lo
                    )));
                }
                Kind::Ssd { grid }
            }
        };
        Ok(Self { directions: directions.to_vec(), nodes, kind })
    }

    pub fn index_of(&self, p: &[f64]) -> usize {
        self.nodes
            .binary_search_by(|n| lex_cmp(n, p))
            .expect("point belongs to the pooled support")
    }

    pub fn counts(&self, s: &EmpiricalSample) -> Vec<u32> {
        let mut c = vec![0u32; self.nodes.len()];
        for p in s.points() {
            c[self.index_of(p)] += 1;
        }
        c
    }

    fn raw(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.directions).map(|(x, d)| x * d.sign()).collect()
    }

    fn generators(&self, selected: &[bool]) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let mut has_lower = vec![false; n];
        // Minimal elements of an upward-closed set are those with no selected
        // node directly below them.
        let up: Vec<Vec<usize>> = match &self.kind {
            Kind::Dag { up } => up.clone(),
            _ => covers(&self.nodes),
        };
        for x in 0..n {
            if selected[x] {
                for &y in &up[x] {
                    has_lower[y] = true;
                }
            }
        }
        (0..n).filter(|&x| selected[x] && !has_lower[x]).map(|x| self.raw(&self.nodes[x])).collect()
    }

    pub fn evaluate(&self, cu: &[u32], nu: usize, cv: &[u32], nv: usize) -> StatValue {
        let (nu_i, nv_i) = (nu as i64, nv as i64);
        let denom = (nu_i * nv_i) as f64;
        match &self.kind {
            Kind::Values { table, .. } => {
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for (k, f) in table.iter().enumerate() {
                    let v = mean(f, cu, nu) - mean(f, cv, nv);
                    if v < best {
                        best = v;
                        arg = k;
                    }
                }
                StatValue { value: best, witness: Witness::Function { index: arg } }
            }
            Kind::Chain => {
                let (mut su, mut sv) = (0i64, 0i64);
                let mut best = 0i64;
                let mut arg = None;
                for k in (0..self.nodes.len()).rev() {
                    su += cu[k] as i64;
                    sv += cv[k] as i64;
                    let d = su * nv_i - sv * nu_i;
                    // ties go to the lowest threshold
                    if d < 0 && d <= best {
                        best = d;
                        arg = Some(k);
                    }
                }
                match arg {
                    None => zero(),
                    Some(k) => StatValue {
                        value: best as f64 / denom,
                        witness: Witness::UpperSet { generators: vec![self.raw(&self.nodes[k])] },
                    },
                }
            }
            Kind::Dag { up } => {
                let w: Vec<i64> = (0..self.nodes.len())
                    .map(|x| cv[x] as i64 * nu_i - cu[x] as i64 * nv_i)
                    .collect();
                let sel = max_weight_closure(&w, up);
                let best: i64 = (0..w.len()).filter(|&x| sel[x]).map(|x| w[x]).sum();
                if best <= 0 {
                    zero()
                } else {
                    StatValue {
                        value: -best as f64 / denom,
                        witness: Witness::UpperSet { generators: self.generators(&sel) },
                    }
                }
            }
            Kind::Ssd { grid } => self.ssd(grid, cu, nu, cv, nv),
        }
    }

    fn ssd(&self, grid: &GridSpec, cu: &[u32], nu: usize, cv: &[u32], nv: usize) -> StatValue {
        let (mut lu, mut lv) = (0u64, 0u64);
        let mut ptr = 0;
        let mut run = 0.0;
        let mut best = f64::INFINITY;
        let mut arg = 1;
        for k in 1..grid.points {
            let g = grid.value(k);
            while ptr < self.nodes.len() && self.nodes[ptr][0] <= g {
                lu += cu[ptr] as u64;
                lv += cv[ptr] as u64;
                ptr += 1;
            }
            run += lv as f64 / nv as f64 - lu as f64 / nu as f64;
            let val = run / g;
            if val < best {
                best = val;
                arg = k;
            }
        }
        if best >= 0.0 {
            return zero();
        }
        StatValue {
            value: (grid.hi - grid.lo) / grid.points as f64 * best,
            witness: Witness::GridPoint { index: arg, at: grid.value(arg) },
        }
    }

    pub fn evaluate_contaminated(
        &self,
        cu: &[u32],
        nu: usize,
        cv: &[u32],
        nv: usize,
        place: Placement,
    ) -> Result<StatValue> {
        let PairContamination { gamma_u, gamma_v } = place.shares;
        if place.shares.is_zero() {
            return Ok(self.evaluate(cu, nu, cv, nv));
        }
        match &self.kind {
            Kind::Values { table, bounds, single: true } => {
                let f = &table[0];
                let (eu, ev) = if place.top_on_u { (bounds.hi, bounds.lo) } else { (bounds.lo, bounds.hi) };
                let value = (1.0 - gamma_u) * mean(f, cu, nu) + gamma_u * eu
                    - (1.0 - gamma_v) * mean(f, cv, nv)
                    - gamma_v * ev;
                Ok(StatValue { value, witness: Witness::Function { index: 0 } })
            }
            Kind::Chain | Kind::Dag { .. } => {
                let a: Vec<f64> = (0..self.nodes.len())
                    .map(|x| {
                        (1.0 - gamma_u) * cu[x] as f64 / nu as f64
                            - (1.0 - gamma_v) * cv[x] as f64 / nv as f64
                    })
                    .collect();
                let extra = if place.top_on_u { gamma_u } else { -gamma_v };
                let (m, sel) = match &self.kind {
                    Kind::Chain => {
                        let mut s = 0.0;
                        let mut best = 0.0;
                        let mut arg = None;
                        for k in (0..a.len()).rev() {
                            s += a[k];
                            if s < best {
                                best = s;
                                arg = Some(k);
                            }
                        }
                        let sel: Vec<bool> = match arg {
                            Some(k) => (0..a.len()).map(|x| x >= k).collect(),
                            None => vec![false; a.len()],
                        };
                        (best, sel)
                    }
                    Kind::Dag { up } => {
                        let w: Vec<f64> = a.iter().map(|x| -x).collect();
                        let sel = max_weight_closure(&w, up);
                        let m: f64 = (0..a.len()).filter(|&x| sel[x]).map(|x| a[x]).sum();
                        if m < 0.0 {
                            (m, sel)
                        } else {
                            (0.0, vec![false; a.len()])
                        }
                    }
                    _ => unreachable!(),
                };
                let value = extra + m;
                if value < 0.0 {
                    let generators = match &self.kind {
                        Kind::Chain => sel
                            .iter()
                            .position(|&s| s)
                            .map(|k| vec![self.raw(&self.nodes[k])])
                            .unwrap_or_default(),
                        _ => self.generators(&sel),
                    };
                    Ok(StatValue { value, witness: Witness::UpperSet { generators } })
                } else {
                    Ok(zero())
                }
            }
            Kind::Values { single: false, .. } => Err(Error::UnsupportedClass(
                "contamination bounds are available for single utilities and isotone indicators only".into(),
            )),
            Kind::Ssd { .. } => Err(Error::UnsupportedClass(
                "contamination bounds are not available for the concave class".into(),
            )),
        }
    }
}

fn zero() -> StatValue {
    StatValue { value: 0.0, witness: Witness::Zero }
}

fn mean(f: &[f64], c: &[u32], n: usize) -> f64 {
    let mut s = 0.0;
    for (x, &k) in f.iter().zip(c) {
        if k > 0 {
            s += x * k as f64;
        }
    }
    s / n as f64
}

fn pooled_engine(class: &FunctionClassSpec, u: &EmpiricalSample, v: &EmpiricalSample, force: bool) -> Result<Engine> {
    u.check_compatible(v)?;
    Engine::build(class, u.dim(), u.directions(), u.points().chain(v.points()), force)
}

/// `inf_f (E_u f − E_v f)` over the class, with a witness.
pub fn t_statistic(class: &FunctionClassSpec, u: &EmpiricalSample, v: &EmpiricalSample) -> Result<StatValue> {
    let e = pooled_engine(class, u, v, false)?;
    Ok(e.evaluate(&e.counts(u), u.len(), &e.counts(v), v.len()))
}

/// The isotone-indicator statistic computed through the closure solver even
/// for one-dimensional data.
pub fn fsd_statistic_via_closure(u: &EmpiricalSample, v: &EmpiricalSample) -> Result<StatValue> {
    let e = pooled_engine(&FunctionClassSpec::FsdIsotoneIndicators, u, v, true)?;
    Ok(e.evaluate(&e.counts(u), u.len(), &e.counts(v), v.len()))
}

pub fn criterion_pair(class: &FunctionClassSpec, x: &EmpiricalSample, y: &EmpiricalSample) -> Result<CriterionPair> {
    let e = pooled_engine(class, x, y, false)?;
    let (cx, cy) = (e.counts(x), e.counts(y));
    Ok(CriterionPair {
        cr1: -e.evaluate(&cx, x.len(), &cy, y.len()).value,
        cr2: e.evaluate(&cy, y.len(), &cx, x.len()).value,
    })
}

fn robust(
    class: &FunctionClassSpec,
    u: &EmpiricalSample,
    v: &EmpiricalSample,
    shares: PairContamination,
    top_on_u: bool,
) -> Result<StatValue> {
    PairContamination::new(shares.gamma_u, shares.gamma_v)?;
    match class {
        FunctionClassSpec::EuSingleton { .. } | FunctionClassSpec::FsdIsotoneIndicators => {}
        other => {
            return Err(Error::UnsupportedClass(format!(
                "contamination bounds are not available for the {} class",
                other.name()
            )))
        }
    }
    let e = pooled_engine(class, u, v, false)?;
    e.evaluate_contaminated(&e.counts(u), u.len(), &e.counts(v), v.len(), Placement { shares, top_on_u })
}

/// Largest value of the statistic over both contamination neighbourhoods.
pub fn robust_t_sup(
    class: &FunctionClassSpec,
    u: &EmpiricalSample,
    v: &EmpiricalSample,
    shares: PairContamination,
) -> Result<StatValue> {
    robust(class, u, v, shares, true)
}

/// Smallest value of the statistic over both contamination neighbourhoods.
pub fn robust_t_inf(
    class: &FunctionClassSpec,
    u: &EmpiricalSample,
    v: &EmpiricalSample,
    shares: PairContamination,
) -> Result<StatValue> {
    robust(class, u, v, shares, false)
}

/// Recomputes `E_u f − E_v f` for the witnessed function directly from the
/// samples. With `contamination = Some((shares, top_on_u))` the virtual
/// extreme points are included as in the robust bounds.
pub fn evaluate_witness(
    class: &FunctionClassSpec,
    u: &EmpiricalSample,
    v: &EmpiricalSample,
    witness: &Witness,
    contamination: Option<(PairContamination, bool)>,
) -> Result<f64> {
    u.check_compatible(v)?;
    let (gu, gv, top_on_u) = match contamination {
        Some((s, t)) => (s.gamma_u, s.gamma_v, t),
        None => (0.0, 0.0, true),
    };
    match (class, witness) {
        (_, Witness::Zero) => Ok(0.0),
        (FunctionClassSpec::FsdIsotoneIndicators, Witness::UpperSet { generators }) => {
            let dirs = u.directions();
            let gens: Vec<Vec<f64>> = generators
                .iter()
                .map(|g| g.iter().zip(dirs).map(|(x, d)| x * d.sign()).collect())
                .collect();
            let share = |s: &EmpiricalSample| {
                s.points().filter(|p| gens.iter().any(|g| weakly_below(g, p))).count() as f64
                    / s.len() as f64
            };
            let (top_u, top_v) = if top_on_u { (gu, 0.0) } else { (0.0, gv) };
            Ok((1.0 - gu) * share(u) + top_u - (1.0 - gv) * share(v) - top_v)
        }
        (
            FunctionClassSpec::EuSingleton { .. } | FunctionClassSpec::ExplicitFinite { .. },
            Witness::Function { index },
        ) => {
            let mut raws: Vec<Vec<f64>> = u.raw_points();
            raws.extend(v.raw_points());
            let b = class.bounds_on(&raws)?;
            let m = |s: &EmpiricalSample| -> Result<f64> {
                let mut t = 0.0;
                for r in s.raw_points() {
                    t += class.member_values(&r)?[*index];
                }
                Ok(t / s.len() as f64)
            };
            let (eu, ev) = if top_on_u { (b.hi, b.lo) } else { (b.lo, b.hi) };
            Ok((1.0 - gu) * m(u)? + gu * eu - (1.0 - gv) * m(v)? - gv * ev)
        }
        (FunctionClassSpec::SsdConcave { .. }, Witness::GridPoint { index, .. }) => {
            let e = pooled_engine(class, u, v, false)?;
            let Kind::Ssd { grid } = &e.kind else { unreachable!() };
            let cdf = |s: &EmpiricalSample, t: f64| s.points().filter(|p| p[0] <= t).count() as f64 / s.len() as f64;
            let mut run = 0.0;
            for k in 1..=*index {
                let g = grid.value(k);
                run += cdf(v, g) - cdf(u, g);
            }
            Ok((grid.hi - grid.lo) / grid.points as f64 * run / grid.value(*index))
        }
        _ => Err(domain("witness does not belong to this class")),
    }
}
