//! Trait observations, column types, standardization and the latent
//! liability matrix with its cut-points.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{infinity, lit, to_f64, Real};
use crate::tree::Phylogeny;

/// Missing-cell sentinel in trait files.
pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Continuous,
    Binary,
    /// Ordered categories `1..=m` with `m >= 3`.
    Ordinal(usize),
}

impl ColumnKind {
    pub fn is_discrete(self) -> bool {
        !matches!(self, ColumnKind::Continuous)
    }

    pub fn levels(self) -> Option<usize> {
        match self {
            ColumnKind::Continuous => None,
            ColumnKind::Binary => Some(2),
            ColumnKind::Ordinal(m) => Some(m),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Continuous => write!(f, "continuous"),
            ColumnKind::Binary => write!(f, "binary"),
            ColumnKind::Ordinal(m) => write!(f, "ordinal({m})"),
        }
    }
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "continuous" => return Ok(ColumnKind::Continuous),
            "binary" => return Ok(ColumnKind::Binary),
            _ => {}
        }
        let inner = t
            .strip_prefix("ordinal(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::UnknownColumnType(t.to_string()))?;
        match inner.trim().parse::<usize>() {
            Ok(2) => Ok(ColumnKind::Binary),
            Ok(m) if m >= 3 => Ok(ColumnKind::Ordinal(m)),
            _ => Err(Error::UnknownColumnType(t.to_string())),
        }
    }
}

/// How a cell of the latent matrix is treated by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRole {
    /// Observed continuous value; never resampled.
    Fixed,
    /// Observed category `c`; latent value restricted to `(γ_{c−1}, γ_c]`.
    Bounded(usize),
    /// Missing cell; latent value unrestricted.
    Free,
}

/// Raw N×P observations with per-column types. Rows follow tree tip order
/// once [`TraitMatrix::align_to`] has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitMatrix<T> {
    taxa: Vec<String>,
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    values: Vec<Option<T>>,
}

impl<T: Real> TraitMatrix<T> {
    /// `values` is row-major; discrete cells hold category codes `1..=m`.
    pub fn new(
        taxa: Vec<String>,
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        values: Vec<Option<T>>,
    ) -> Result<Self> {
        let (n, p) = (taxa.len(), names.len());
        if kinds.len() != p || values.len() != n * p {
            return Err(Error::Dimension(format!(
                "{n} taxa x {p} traits with {} column types and {} cells",
                kinds.len(),
                values.len()
            )));
        }
        let m = TraitMatrix { taxa, names, kinds, values };
        for j in 0..p {
            let Some(levels) = m.kinds[j].levels() else { continue };
            for i in 0..n {
                if let Some(v) = m.get(i, j) {
                    let x = to_f64(v);
                    if x.fract() != 0.0 || x < 1.0 || x > levels as f64 {
                        return Err(Error::InvalidCategory {
                            column: m.names[j].clone(),
                            code: format!("{v}"),
                            levels,
                        });
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_traits(&self) -> usize {
        self.names.len()
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn kind(&self, j: usize) -> ColumnKind {
        self.kinds[j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.values[i * self.names.len() + j]
    }

    pub fn role(&self, i: usize, j: usize) -> CellRole {
        match (self.kinds[j], self.get(i, j)) {
            (_, None) => CellRole::Free,
            (ColumnKind::Continuous, Some(_)) => CellRole::Fixed,
            (_, Some(code)) => CellRole::Bounded(to_f64(code) as usize),
        }
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        (0..self.n_traits()).filter(|&j| !self.kinds[j].is_discrete()).collect()
    }

    /// Reorders rows to follow the tree's tip order.
    pub fn align_to(&self, tree: &Phylogeny<T>) -> Result<Self> {
        let tips = tree.taxa();
        let tree_set: BTreeSet<&str> = tips.iter().copied().collect();
        let trait_set: BTreeSet<&str> = self.taxa.iter().map(String::as_str).collect();
        if tree_set != trait_set || self.taxa.len() != trait_set.len() {
            let only_in_tree = tree_set.difference(&trait_set).map(|s| s.to_string()).collect();
            let mut only_in_traits: Vec<String> =
                trait_set.difference(&tree_set).map(|s| s.to_string()).collect();
            if only_in_traits.is_empty() && self.taxa.len() != trait_set.len() {
                only_in_traits.push("(duplicate rows)".to_string());
            }
            return Err(Error::TaxonMismatch { only_in_tree, only_in_traits });
        }
        let p = self.n_traits();
        let mut values = Vec::with_capacity(self.values.len());
        for tip in &tips {
            let row = self.taxa.iter().position(|t| t == tip).expect("checked above");
            values.extend_from_slice(&self.values[row * p..(row + 1) * p]);
        }
        Ok(TraitMatrix {
            taxa: tips.iter().map(|s| s.to_string()).collect(),
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            values,
        })
    }

    /// Comma-delimited table: header of trait names after a taxon column,
    /// numeric cells or `NA`.
    pub fn read_csv<R: Read>(reader: R, kinds: &dyn Fn(&str) -> Option<ColumnKind>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Parse("trait file needs a taxon column and at least one trait".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let kinds = names
            .iter()
            .map(|name| {
                kinds(name).ok_or_else(|| Error::Parse(format!("no column type declared for '{name}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut taxa = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {}",
                    line + 2,
                    record.len(),
                    header.len()
                )));
            }
            taxa.push(record[0].to_string());
            for (j, cell) in record.iter().skip(1).enumerate() {
                if cell == MISSING {
                    values.push(None);
                } else {
                    let x: f64 = cell.parse().map_err(|_| {
                        Error::Parse(format!(
                            "unparseable cell '{cell}' in row {} column '{}'",
                            line + 2,
                            names[j]
                        ))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Parse(format!("non-finite cell '{cell}'")));
                    }
                    values.push(Some(lit(x)));
                }
            }
        }
        TraitMatrix::new(taxa, names, kinds, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["taxon".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for i in 0..self.n_taxa() {
            let mut row = vec![self.taxa[i].clone()];
            for j in 0..self.n_traits() {
                row.push(match self.get(i, j) {
                    None => MISSING.to_string(),
                    Some(v) if self.kinds[j].is_discrete() => format!("{}", to_f64(v) as usize),
                    Some(v) => format!("{v}"),
                });
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Finite cut-points per column: `[γ_1 = 0, γ_2, …, γ_{m−1}]` for a column
/// with `m` levels, empty for continuous columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutpoints<T> {
    cuts: Vec<Vec<T>>,
}

impl<T: Real> Cutpoints<T> {
    /// `γ_1 = 0` and interior cut-points at 0.5, 1.0, ….
    pub fn initial(kinds: &[ColumnKind]) -> Self {
        let cuts = kinds
            .iter()
            .map(|k| match k.levels() {
                None => Vec::new(),
                Some(m) => (0..m - 1).map(|c| lit(0.5 * c as f64)).collect(),
            })
            .collect();
        Cutpoints { cuts }
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.cuts[j]
    }

    /// Free (interior) cut-points `γ_2 … γ_{m−1}` of column `j`.
    pub fn interior(&self, j: usize) -> &[T] {
        self.cuts[j].get(1..).unwrap_or(&[])
    }

    pub fn set_interior(&mut self, j: usize, index: usize, value: T) {
        self.cuts[j][index + 1] = value;
    }

    /// `(γ_{c−1}, γ_c]` for category `code` of column `j`.
    pub fn bounds(&self, j: usize, code: usize) -> (T, T) {
        let cuts = &self.cuts[j];
        let lower = if code <= 1 { -infinity::<T>() } else { cuts[code - 2] };
        let upper = if code > cuts.len() { infinity() } else { cuts[code - 1] };
        (lower, upper)
    }

    pub fn n_interior(&self) -> usize {
        self.cuts.iter().map(|c| c.len().saturating_sub(1)).sum()
    }

    /// Interior cut-points of every column, column-major.
    pub fn flatten_interior(&self) -> Vec<T> {
        (0..self.cuts.len()).flat_map(|j| self.interior(j).to_vec()).collect()
    }
}

/// Latent liabilities and cut-points. Observed continuous cells hold their
/// standardized values and never change.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T: Real> {
    pub z: DMatrix<T>,
    pub cutpoints: Cutpoints<T>,
    /// Per-column `(mean, sd)` used to standardize continuous columns.
    pub scaling: Vec<Option<(T, T)>>,
}

impl<T: Real> LatentState<T> {
    /// Uses continuous observations as they are, without standardizing.
    pub fn on_latent_scale(raw: &TraitMatrix<T>) -> Self {
        Self::build(raw, vec![None; raw.n_traits()])
    }

    fn build(raw: &TraitMatrix<T>, scaling: Vec<Option<(T, T)>>) -> Self {
        let (n, p) = (raw.n_taxa(), raw.n_traits());
        let cutpoints = Cutpoints::initial(raw.kinds());
        let half = lit::<T>(0.5);
        let z = DMatrix::from_fn(n, p, |i, j| match raw.role(i, j) {
            CellRole::Free => T::zero(),
            CellRole::Fixed => {
                let y = raw.get(i, j).expect("fixed cells are observed");
                match scaling[j] {
                    Some((mean, sd)) => (y - mean) / sd,
                    None => y,
                }
            }
            CellRole::Bounded(code) => {
                let (lo, hi) = cutpoints.bounds(j, code);
                match (lo == -infinity::<T>(), hi == infinity::<T>()) {
                    (true, true) => T::zero(),
                    (true, false) => hi - half,
                    (false, true) => lo + half,
                    (false, false) => (lo + hi) * half,
                }
            }
        });
        LatentState { z, cutpoints, scaling }
    }

    pub fn in_bounds(&self, raw: &TraitMatrix<T>, i: usize, j: usize, value: T) -> bool {
        match raw.role(i, j) {
            CellRole::Bounded(code) => {
                let (lo, hi) = self.cutpoints.bounds(j, code);
                lo < value && value <= hi
            }
            _ => true,
        }
    }

    /// Observed discrete cells of column `j` outside their interval.
    pub fn column_violations(&self, raw: &TraitMatrix<T>, j: usize) -> usize {
        (0..raw.n_taxa())
            .filter(|&i| !self.in_bounds(raw, i, j, self.z[(i, j)]))
            .count()
    }

    pub fn violations(&self, raw: &TraitMatrix<T>) -> usize {
        (0..raw.n_traits()).map(|j| self.column_violations(raw, j)).sum()
    }
}

/// Standardizes continuous columns to mean 0 and unit sample standard
/// deviation over their observed cells and initializes every other cell.
pub fn standardize<T: Real>(raw: &TraitMatrix<T>) -> Result<LatentState<T>> {
    let mut scaling = vec![None; raw.n_traits()];
    for j in raw.continuous_columns() {
        let observed: Vec<T> = (0..raw.n_taxa()).filter_map(|i| raw.get(i, j)).collect();
        if observed.len() < 2 {
            return Err(Error::TooFewObservations(raw.names()[j].clone()));
        }
        let count = lit::<T>(observed.len() as f64);
        let mean = observed.iter().fold(T::zero(), |a, &b| a + b) / count;
        let ss = observed.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean));
        let sd = (ss / (count - T::one())).sqrt();
        if !(sd > T::zero()) {
            return Err(Error::ZeroVariance(raw.names()[j].clone()));
        }
        scaling[j] = Some((mean, sd));
    }
    Ok(LatentState::build(raw, scaling))
}

/// True iff every observed discrete cell lies inside its cut-point interval.
pub fn constraint_indicator<T: Real>(latent: &LatentState<T>, raw: &TraitMatrix<T>) -> bool {
    latent.violations(raw) == 0
}
