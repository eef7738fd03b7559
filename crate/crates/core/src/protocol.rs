//! Act/consequence protocols and their CSV/JSON persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Sign applied to raw values so that larger is always better.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsequenceSpace {
    names: Vec<String>,
    directions: Vec<Direction>,
}

impl ConsequenceSpace {
    pub fn new(directions: Vec<Direction>) -> Result<Self> {
        let names = (1..=directions.len()).map(|k| format!("c{k}")).collect();
        Self::with_names(names, directions)
    }

    pub fn with_names(names: Vec<String>, directions: Vec<Direction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Schema("consequence space needs at least one coordinate".into()));
        }
        if names.len() != directions.len() {
            return Err(Error::Schema(format!(
                "{} column names for {} directions",
                names.len(),
                directions.len()
            )));
        }
        Ok(Self { names, directions })
    }

    /// One maximized coordinate.
    pub fn scalar() -> Self {
        Self { names: vec!["c1".into()], directions: vec![Direction::Maximize] }
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        // `+ 0.0` folds a negated zero back to positive zero
        raw.iter().zip(&self.directions).map(|(x, d)| x * d.sign() + 0.0).collect()
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        // negation is its own inverse
        self.normalize(normalized)
    }

    fn check(&self, c: &Consequence) -> Result<()> {
        if c.values.len() != self.dim() {
            return Err(Error::Schema(format!(
                "consequence has {} coordinates, space has {}",
                c.values.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Column direction declaration used when reading a CSV file.
/// Columns not mentioned default to `Maximize`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(default)]
    pub columns: BTreeMap<String, Direction>,
}

impl ColumnSchema {
    pub fn from_flags(minimize: &[String], maximize: &[String]) -> Result<Self> {
        let mut columns = BTreeMap::new();
        for name in maximize {
            columns.insert(name.clone(), Direction::Maximize);
        }
        for name in minimize {
            if columns.insert(name.clone(), Direction::Minimize).is_some() {
                return Err(Error::Schema(format!("column {name} is both minimized and maximized")));
            }
        }
        Ok(Self { columns })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn resolve(&self, header: &[String]) -> Result<ConsequenceSpace> {
        for name in self.columns.keys() {
            if !header.contains(name) {
                return Err(Error::Schema(format!("column {name} is not in the header")));
            }
        }
        let directions = header
            .iter()
            .map(|n| self.columns.get(n).copied().unwrap_or(Direction::Maximize))
            .collect();
        ConsequenceSpace::with_names(header.to_vec(), directions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Consequence {
    values: Vec<f64>,
}

impl Consequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empty consequence"));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(domain(format!("non-finite consequence value {x}")));
        }
        Ok(Self { values })
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub String);

impl ActionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActionId {
    fn from(s: &str) -> Self {
        ActionId(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub action: usize,
    pub consequence: Consequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    space: ConsequenceSpace,
    actions: Vec<ActionId>,
    entries: Vec<Entry>,
}

impl Protocol {
    /// Builds a protocol; the action list is taken in first-appearance order.
    pub fn from_entries(
        space: ConsequenceSpace,
        entries: impl IntoIterator<Item = (ActionId, Consequence)>,
    ) -> Result<Self> {
        let mut actions: Vec<ActionId> = Vec::new();
        let mut out = Vec::new();
        for (a, c) in entries {
            space.check(&c)?;
            let idx = match actions.iter().position(|x| *x == a) {
                Some(i) => i,
                None => {
                    actions.push(a);
                    actions.len() - 1
                }
            };
            out.push(Entry { action: idx, consequence: c });
        }
        if out.is_empty() {
            return Err(Error::Validation("protocol has no entries".into()));
        }
        Ok(Self { space, actions, entries: out })
    }

    /// Builds a protocol with an explicit action order. Every listed action
    /// must occur at least once.
    pub fn with_actions(
        space: ConsequenceSpace,
        actions: Vec<ActionId>,
        entries: impl IntoIterator<Item = (ActionId, Consequence)>,
    ) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (k, a) in actions.iter().enumerate() {
            if seen.insert(a.clone(), k).is_some() {
                return Err(Error::Validation(format!("duplicate action {a}")));
            }
        }
        let mut out = Vec::new();
        for (a, c) in entries {
            space.check(&c)?;
            let idx = *seen
                .get(&a)
                .ok_or_else(|| Error::Validation(format!("entry for undeclared action {a}")))?;
            out.push(Entry { action: idx, consequence: c });
        }
        let p = Self { space, actions, entries: out };
        if let Some((k, _)) = p.counts().iter().enumerate().find(|(_, &n)| n == 0) {
            return Err(Error::Validation(format!("action {} has zero trials", p.actions[k])));
        }
        Ok(p)
    }

    pub fn space(&self) -> &ConsequenceSpace {
        &self.space
    }

    pub fn actions(&self) -> &[ActionId] {
        &self.actions
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trials per action, in action order.
    pub fn counts(&self) -> Vec<usize> {
        let mut z = vec![0; self.actions.len()];
        for e in &self.entries {
            z[e.action] += 1;
        }
        z
    }

    pub fn action_index(&self, a: &str) -> Result<usize> {
        self.actions
            .iter()
            .position(|x| x.0 == a)
            .ok_or_else(|| domain(format!("unknown action {a}")))
    }

    pub fn sample_of(&self, a: &str) -> Result<EmpiricalSample> {
        Ok(self.sample_at(self.action_index(a)?))
    }

    pub(crate) fn sample_at(&self, idx: usize) -> EmpiricalSample {
        let dim = self.space.dim();
        let mut data = Vec::new();
        for e in self.entries.iter().filter(|e| e.action == idx) {
            data.extend(self.space.normalize(e.consequence.values()));
        }
        EmpiricalSample { dim, data, directions: self.space.directions.clone() }
    }

    pub fn sub_protocol<S: AsRef<str>>(&self, selected: &[S]) -> Result<SubProtocol<'_>> {
        if selected.is_empty() {
            return Err(domain("empty action subset"));
        }
        let mut idx = Vec::with_capacity(selected.len());
        for a in selected {
            idx.push(self.action_index(a.as_ref())?);
        }
        SubProtocol::from_indices(self, idx)
    }

    pub fn full(&self) -> SubProtocol<'_> {
        SubProtocol { parent: self, selected: (0..self.actions.len()).collect() }
    }

    pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_csv(&text, schema)
    }

    pub fn parse_csv(text: &str, schema: &ColumnSchema) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
            Some(r) => r.map_err(|e| csv_parse_error(e, 1))?,
        };
        if header.len() < 2 || &header[0] != "action" {
            return Err(Error::Parse {
                line: 1,
                message: "header must be `action,<c1>,...`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let space = schema.resolve(&names)?;
        let mut entries = Vec::new();
        for (k, rec) in records.enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| csv_parse_error(e, line))?;
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            if rec.len() != space.dim() + 1 {
                return Err(Error::Schema(format!(
                    "line {line}: expected {} consequence values, found {}",
                    space.dim(),
                    rec.len().saturating_sub(1)
                )));
            }
            let action = rec[0].to_string();
            if action.is_empty() {
                return Err(Error::Parse { line, message: "missing action".into() });
            }
            let mut values = Vec::with_capacity(space.dim());
            for field in rec.iter().skip(1) {
                let x: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                if !x.is_finite() {
                    return Err(Error::Parse { line, message: format!("non-finite value {field}") });
                }
                values.push(x);
            }
            entries.push((ActionId(action), Consequence { values }));
        }
        if entries.is_empty() {
            return Err(Error::Parse { line: 2, message: "no data rows".into() });
        }
        Self::from_entries(space, entries)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("action");
        for n in self.space.names() {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(self.actions[e.action].as_str());
            for x in e.consequence.values() {
                // `Display` for f64 prints the shortest round-tripping form.
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Direction declaration matching this protocol's space, for writing a sidecar.
    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            columns: self
                .space
                .names()
                .iter()
                .cloned()
                .zip(self.space.directions().iter().copied())
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ProtocolDoc {
            columns: self
                .space
                .names()
                .iter()
                .zip(self.space.directions())
                .map(|(n, d)| ColumnDoc { name: n.clone(), direction: *d })
                .collect(),
            actions: self.actions.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryDoc {
                    action: self.actions[e.action].clone(),
                    values: e.consequence.values.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProtocolDoc = serde_json::from_str(text)?;
        let space = ConsequenceSpace::with_names(
            doc.columns.iter().map(|c| c.name.clone()).collect(),
            doc.columns.iter().map(|c| c.direction).collect(),
        )?;
        let mut entries = Vec::with_capacity(doc.entries.len());
        for e in doc.entries {
            entries.push((e.action, Consequence::new(e.values)?));
        }
        Self::with_actions(space, doc.actions, entries)
    }

    pub fn load(path: &Path, schema: &ColumnSchema) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&fs::read_to_string(path)?)
        } else {
            Self::load_csv(path, schema)
        }
    }
}

fn csv_parse_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
    Error::Parse { line, message: e.to_string() }
}

#[derive(Serialize, Deserialize)]
struct ColumnDoc {
    name: String,
    direction: Direction,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    action: ActionId,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProtocolDoc {
    columns: Vec<ColumnDoc>,
    actions: Vec<ActionId>,
    entries: Vec<EntryDoc>,
}

/// Reads a protocol file, dispatching on the extension.
pub fn load_protocol(path: &Path, schema: &ColumnSchema) -> Result<Protocol> {
    Protocol::load(path, schema)
}

#[derive(Clone, Debug)]
pub struct SubProtocol<'a> {
    parent: &'a Protocol,
    selected: Vec<usize>,
}

impl<'a> SubProtocol<'a> {
    pub fn from_indices(parent: &'a Protocol, mut selected: Vec<usize>) -> Result<Self> {
        if selected.is_empty() {
            return Err(domain("empty action subset"));
        }
        if let Some(&k) = selected.iter().find(|&&k| k >= parent.actions.len()) {
            return Err(domain(format!("action index {k} out of range")));
        }
        selected.sort_unstable();
        selected.dedup();
        Ok(Self { parent, selected })
    }

    pub fn parent(&self) -> &'a Protocol {
        self.parent
    }

    /// Selected action indices, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.selected
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.selected.iter().map(|&k| self.parent.actions[k].clone()).collect()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.selected.binary_search(&idx).is_ok()
    }

    pub fn entries(&self) -> Vec<&'a Entry> {
        self.parent.entries.iter().filter(|e| self.contains(e.action)).collect()
    }

    /// Smallest per-action trial count among the selected actions.
    pub fn min_count(&self) -> usize {
        let z = self.parent.counts();
        self.selected.iter().map(|&k| z[k]).min().unwrap_or(0)
    }

    pub fn sample(&self, idx: usize) -> EmpiricalSample {
        self.parent.sample_at(idx)
    }
}

/// The consequences observed under one action, stored in maximize orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalSample {
    dim: usize,
    data: Vec<f64>,
    directions: Vec<Direction>,
}

impl EmpiricalSample {
    /// Sample from points that are already in maximize orientation.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(domain("dimension must be positive"));
        }
        if points.is_empty() {
            return Err(domain("empty sample"));
        }
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(domain(format!("point of dimension {} in a {dim}-dimensional sample", p.len())));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(domain("non-finite value in sample"));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data, directions: vec![Direction::Maximize; dim] })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let pts: Vec<Vec<f64>> = values.iter().map(|&x| vec![x]).collect();
        Self::from_points(1, &pts)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Points in their original orientation.
    pub fn raw_points(&self) -> Vec<Vec<f64>> {
        self.points()
            .map(|p| p.iter().zip(&self.directions).map(|(x, d)| x * d.sign()).collect())
            .collect()
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(domain(format!("samples of dimension {} and {}", self.dim, other.dim)));
        }
        if self.directions != other.directions {
            return Err(domain("samples come from different consequence spaces"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_text() -> &'static str {
        "action,euro\nRed,3\nRed,1\nBlue,1\nRed,6\nBlack,0\n"
    }

    #[test]
    fn parses_and_counts() {
        let p = Protocol::parse_csv(table1_text(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.counts(), vec![3, 1, 1]);
        assert_eq!(p.sample_of("Red").unwrap().raw_points(), vec![vec![3.0], vec![1.0], vec![6.0]]);
    }

    #[test]
    fn empty_file_is_parse_error() {
        let e = Protocol::parse_csv("", &ColumnSchema::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn bad_number_names_line() {
        let e = Protocol::parse_csv("action,x\na,1\na,zz\n", &ColumnSchema::default()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn wrong_width_is_schema_error() {
        let e = Protocol::parse_csv("action,x,y\na,1,2\na,3\n", &ColumnSchema::default()).unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
    }

    #[test]
    fn zero_trial_action_rejected() {
        let space = ConsequenceSpace::scalar();
        let e = Protocol::with_actions(
            space,
            vec!["a".into(), "b".into()],
            vec![(ActionId::from("a"), Consequence::scalar(1.0).unwrap())],
        )
        .unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn minimize_columns_are_negated() {
        let schema = ColumnSchema::from_flags(&["ppl".into()], &["coh".into()]).unwrap();
        let p = Protocol::parse_csv("action,ppl,coh\nn,18,0.95\n", &schema).unwrap();
        let s = p.sample_of("n").unwrap();
        assert_eq!(s.point(0), &[-18.0, 0.95]);
        assert_eq!(s.raw_points(), vec![vec![18.0, 0.95]]);
    }

    #[test]
    fn unknown_schema_column() {
        let schema = ColumnSchema::from_flags(&["nope".into()], &[]).unwrap();
        assert!(matches!(
            Protocol::parse_csv("action,x\na,1\n", &schema),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn sub_protocol_errors() {
        let p = Protocol::parse_csv(table1_text(), &ColumnSchema::default()).unwrap();
        let empty: [&str; 0] = [];
        assert!(matches!(p.sub_protocol(&empty), Err(Error::Domain(_))));
        assert!(matches!(p.sub_protocol(&["Pink"]), Err(Error::Domain(_))));
        assert_eq!(p.sub_protocol(&["Red", "Black"]).unwrap().entries().len(), 4);
    }

    #[test]
    fn json_round_trip() {
        let schema = ColumnSchema::from_flags(&["ppl".into()], &[]).unwrap();
        let p = Protocol::parse_csv("action,ppl,coh\nn,18,0.95\nm,0.1,3e-7\n", &schema).unwrap();
        let q = Protocol::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, q);
    }
}
