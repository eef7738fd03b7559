//! Function classes and the componentwise dominance order on consequences.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::protocol::{Consequence, ConsequenceSpace};

/// A utility on raw (un-normalized) consequence values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    /// `u(c) = Σ weights[k] · c[k]`.
    Linear { weights: Vec<f64> },
    /// Tabulated values keyed by exact consequence vectors.
    Table { entries: Vec<TableEntry> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub point: Vec<f64>,
    pub value: f64,
}

impl Utility {
    pub fn identity() -> Self {
        Utility::Linear { weights: vec![1.0] }
    }

    pub fn eval(&self, raw: &[f64]) -> Result<f64> {
        match self {
            Utility::Linear { weights } => {
                if weights.len() != raw.len() {
                    return Err(domain(format!(
                        "{} utility weights for {}-dimensional consequences",
                        weights.len(),
                        raw.len()
                    )));
                }
                Ok(weights.iter().zip(raw).map(|(w, x)| w * x).sum())
            }
            Utility::Table { entries } => entries
                .iter()
                .find(|e| e.point.as_slice() == raw)
                .map(|e| e.value)
                .ok_or_else(|| domain(format!("utility table has no entry for {raw:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(domain(format!("invalid bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(domain(format!("grid needs lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.points < 2 {
            return Err(domain("grid needs at least two points"));
        }
        Ok(())
    }

    /// Default grid for observed values in `[min, max]`: one unit of slack
    /// on both sides, with the lower end clipped at zero.
    pub fn default_for(min: f64, max: f64) -> Result<Self> {
        if min < 0.0 {
            return Err(domain(format!(
                "concave-class statistic weights grid points by 1/t and needs non-negative data, got minimum {min}"
            )));
        }
        Self::new((min - 1.0).max(0.0), max + 1.0, 50_000)
    }

    pub fn value(&self, k: usize) -> f64 {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        self.lo + k as f64 * step
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FunctionClassSpec {
    /// A single utility; bounds default to the observed utility range.
    EuSingleton {
        utility: Utility,
        #[serde(default)]
        bounds: Option<Bounds>,
    },
    /// Indicators of upper sets of the componentwise order, plus zero.
    FsdIsotoneIndicators,
    /// Concave isotone functions on one coordinate, realized on a grid.
    SsdConcave {
        #[serde(default)]
        grid: Option<GridSpec>,
    },
    /// A finite list of tabulated or linear functions.
    ExplicitFinite {
        functions: Vec<Utility>,
        #[serde(default)]
        bounds: Option<Bounds>,
    },
}

impl FunctionClassSpec {
    pub fn fsd() -> Self {
        FunctionClassSpec::FsdIsotoneIndicators
    }

    pub fn eu(utility: Utility) -> Self {
        FunctionClassSpec::EuSingleton { utility, bounds: None }
    }

    pub fn eu_identity() -> Self {
        Self::eu(Utility::identity())
    }

    /// Parses `fsd`, `eu`, `eu:<w1,w2,..>`, `ssd`, `ssd:<lo>:<hi>:<points>` or `file:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("fsd", None) => Ok(Self::fsd()),
            ("eu", None) => Ok(Self::eu_identity()),
            ("eu", Some(w)) => {
                let weights = w
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| domain(format!("bad utility weights {w:?}")))?;
                Ok(Self::eu(Utility::Linear { weights }))
            }
            ("ssd", None) => Ok(FunctionClassSpec::SsdConcave { grid: None }),
            ("ssd", Some(g)) => {
                let parts: Vec<&str> = g.split(':').collect();
                if parts.len() != 3 {
                    return Err(domain("ssd grid must be ssd:<lo>:<hi>:<points>"));
                }
                let bad = || domain(format!("bad ssd grid {g:?}"));
                let lo = parts[0].parse().map_err(|_| bad())?;
                let hi = parts[1].parse().map_err(|_| bad())?;
                let points = parts[2].parse().map_err(|_| bad())?;
                Ok(FunctionClassSpec::SsdConcave { grid: Some(GridSpec::new(lo, hi, points)?) })
            }
            ("file", Some(path)) => Self::from_json_file(Path::new(path)),
            _ => Err(Error::UnsupportedClass(s.to_string())),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FunctionClassSpec::SsdConcave { grid: Some(g) } => g.validate(),
            FunctionClassSpec::ExplicitFinite { functions, .. } if functions.is_empty() => {
                Err(domain("explicit class needs at least one function"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FunctionClassSpec::EuSingleton { .. } => "eu",
            FunctionClassSpec::FsdIsotoneIndicators => "fsd",
            FunctionClassSpec::SsdConcave { .. } => "ssd",
            FunctionClassSpec::ExplicitFinite { .. } => "explicit",
        }
    }

    /// Whether the all-zero function belongs to the class, so that the
    /// statistic is capped at zero.
    pub fn contains_zero(&self) -> bool {
        matches!(
            self,
            FunctionClassSpec::FsdIsotoneIndicators | FunctionClassSpec::SsdConcave { .. }
        )
    }

    /// Member functions evaluated at one raw point.
    pub fn member_values(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match self {
            FunctionClassSpec::EuSingleton { utility, .. } => Ok(vec![utility.eval(raw)?]),
            FunctionClassSpec::ExplicitFinite { functions, .. } => {
                functions.iter().map(|f| f.eval(raw)).collect()
            }
            _ => Err(Error::UnsupportedClass(format!(
                "{} has no finite member list",
                self.name()
            ))),
        }
    }

    /// Uniform bounds `[A, B]` of the class on the given raw points. Explicit
    /// bounds are checked against the data; otherwise the observed range is used.
    pub fn bounds_on(&self, raw_points: &[Vec<f64>]) -> Result<Bounds> {
        match self {
            FunctionClassSpec::FsdIsotoneIndicators | FunctionClassSpec::SsdConcave { .. } => {
                Ok(Bounds::unit())
            }
            FunctionClassSpec::EuSingleton { bounds, .. }
            | FunctionClassSpec::ExplicitFinite { bounds, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in raw_points {
                    for v in self.member_values(p)? {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                match bounds {
                    Some(b) => {
                        Bounds::new(b.lo, b.hi)?;
                        if lo < b.lo || hi > b.hi {
                            return Err(domain(format!(
                                "utility values in [{lo}, {hi}] exceed declared bounds [{}, {}]",
                                b.lo, b.hi
                            )));
                        }
                        Ok(*b)
                    }
                    None if lo < hi => Ok(Bounds { lo, hi }),
                    None if lo.is_finite() => Ok(Bounds { lo, hi: lo + 1.0 }),
                    None => Err(domain("no points to derive bounds from")),
                }
            }
        }
    }
}

/// `x ≥ y` in every coordinate after direction normalization.
pub fn dominates(space: &ConsequenceSpace, x: &Consequence, y: &Consequence) -> Result<bool> {
    if x.values().len() != space.dim() || y.values().len() != space.dim() {
        return Err(domain("consequence dimension does not match the space"));
    }
    Ok(weakly_below(&space.normalize(y.values()), &space.normalize(x.values())))
}

pub(crate) fn weakly_below(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("finite values") {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Distinct points sorted lexicographically, with multiplicities and the
/// covering relation of the componentwise order.
///
/// Lexicographic order extends the componentwise order, so every edge goes
/// from a lower index to a higher one.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceDag {
    dim: usize,
    nodes: Vec<Vec<f64>>,
    multiplicity: Vec<usize>,
    up: Vec<Vec<usize>>,
}

impl DominanceDag {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    /// Immediate successors (covers) of each node.
    pub fn successors(&self) -> &[Vec<usize>] {
        &self.up
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.up
            .iter()
            .enumerate()
            .flat_map(|(x, ys)| ys.iter().map(move |&y| (x, y)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, p: &[f64]) -> Option<usize> {
        self.nodes.binary_search_by(|n| lex_cmp(n, p)).ok()
    }
}

/// Builds the DAG over points given in maximize orientation.
pub fn build_dominance_dag<'a, I>(dim: usize, points: I) -> Result<DominanceDag>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut pts: Vec<&[f64]> = Vec::new();
    for p in points {
        if p.len() != dim {
            return Err(domain(format!("point of dimension {} in a {dim}-dimensional set", p.len())));
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(domain("cannot build a dominance order over no points"));
    }
    pts.sort_by(|a, b| lex_cmp(a, b));
    let mut nodes: Vec<Vec<f64>> = Vec::new();
    let mut multiplicity = Vec::new();
    for p in pts {
        if nodes.last().is_some_and(|q| lex_cmp(q, p) == Ordering::Equal) {
            *multiplicity.last_mut().unwrap() += 1;
        } else {
            nodes.push(p.iter().map(|x| x + 0.0).collect());
            multiplicity.push(1);
        }
    }
    let up = covers(&nodes);
    Ok(DominanceDag { dim, nodes, multiplicity, up })
}

pub(crate) fn covers(nodes: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = nodes.len();
    let mut up = vec![Vec::new(); n];
    for x in 0..n {
        let mut cov: Vec<usize> = Vec::new();
        for y in (x + 1)..n {
            if weakly_below(&nodes[x], &nodes[y])
                && !cov.iter().any(|&c| weakly_below(&nodes[c], &nodes[y]))
            {
                cov.push(y);
            }
        }
        up[x] = cov;
    }
    up
}

/// Every upward-closed node set (as sorted index lists), including the empty
/// and the full set. Fails once more than `limit` sets have been produced.
pub fn enumerate_upper_sets(dag: &DominanceDag, limit: usize) -> Result<Vec<Vec<usize>>> {
    let n = dag.len();
    let mut out = Vec::new();
    let mut included = vec![false; n];
    // Decide nodes from the top of the order downwards; a node may join only
    // if all its covers already did.
    fn rec(
        k: usize,
        dag: &DominanceDag,
        included: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> Result<()> {
        if k == 0 {
            if out.len() >= limit {
                return Err(Error::ResourceLimit { limit });
            }
            out.push((0..included.len()).filter(|&i| included[i]).collect());
            return Ok(());
        }
        let x = k - 1;
        rec(x, dag, included, out, limit)?;
        if dag.up[x].iter().all(|&y| included[y]) {
            included[x] = true;
            rec(x, dag, included, out, limit)?;
            included[x] = false;
        }
        Ok(())
    }
    rec(n, dag, &mut included, &mut out, limit)?;
    Ok(out)
}
