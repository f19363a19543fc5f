//! Panel data, wide-CSV ingestion and matching matrices.
//!
//! A panel holds `N` units observed over `T` periods, one of which is
//! treated from period index `t0` onwards. All other units form the donor
//! pool. Matching matrices stack the selected predictors and pretreatment
//! outcomes of a target unit (`z1`) and of a pool of units (`z0`, one row
//! per pool unit).

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData<T: Scalar> {
    unit_ids: Vec<String>,
    time_labels: Vec<String>,
    /// N x T.
    outcomes: DMatrix<T>,
    predictor_names: Vec<String>,
    /// N x k, absent when no predictor file was supplied.
    predictors: Option<DMatrix<T>>,
    treated_index: usize,
    t0: usize,
}

impl<T: Scalar> PanelData<T> {
    pub fn new(
        unit_ids: Vec<String>,
        time_labels: Vec<String>,
        outcomes: DMatrix<T>,
        treated_index: usize,
        t0: usize,
    ) -> Result<Self> {
        let panel = PanelData {
            unit_ids,
            time_labels,
            outcomes,
            predictor_names: Vec::new(),
            predictors: None,
            treated_index,
            t0,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Attaches an `N x k` predictor matrix, rows in unit order.
    pub fn with_predictors(mut self, names: Vec<String>, predictors: DMatrix<T>) -> Result<Self> {
        self.predictor_names = names;
        self.predictors = Some(predictors);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let (n, t) = self.outcomes.shape();
        if n < 2 {
            return Err(Error::validation(format!(
                "panel needs at least 2 units, got {n}"
            )));
        }
        if self.unit_ids.len() != n {
            return Err(Error::validation(format!(
                "{} unit ids for {n} outcome rows",
                self.unit_ids.len()
            )));
        }
        if self.time_labels.len() != t {
            return Err(Error::validation(format!(
                "{} time labels for {t} outcome columns",
                self.time_labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate unit id '{id}'")));
            }
        }
        if self.t0 < 1 || self.t0 >= t {
            return Err(Error::validation(format!(
                "t0 must satisfy 1 <= t0 < T = {t}, got {}",
                self.t0
            )));
        }
        if self.treated_index >= n {
            return Err(Error::validation(format!(
                "treated index {} out of range for {n} units",
                self.treated_index
            )));
        }
        if let Some((i, j)) = first_non_finite(&self.outcomes) {
            return Err(Error::validation(format!(
                "missing or non-finite outcome for unit '{}' at period '{}'",
                self.unit_ids[i], self.time_labels[j]
            )));
        }
        if let Some(x) = &self.predictors {
            if x.nrows() != n || x.ncols() != self.predictor_names.len() {
                return Err(Error::validation(format!(
                    "predictor matrix is {}x{}, expected {n}x{}",
                    x.nrows(),
                    x.ncols(),
                    self.predictor_names.len()
                )));
            }
            if let Some((i, j)) = first_non_finite(x) {
                return Err(Error::validation(format!(
                    "missing or non-finite predictor '{}' for unit '{}'",
                    self.predictor_names[j], self.unit_ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn n_donors(&self) -> usize {
        self.n_units() - 1
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn treated_index(&self) -> usize {
        self.treated_index
    }

    pub fn treated_id(&self) -> &str {
        &self.unit_ids[self.treated_index]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn outcomes(&self) -> &DMatrix<T> {
        &self.outcomes
    }

    pub fn predictors(&self) -> Option<&DMatrix<T>> {
        self.predictors.as_ref()
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    /// Indices of every unit except the treated one, in panel order.
    pub fn donor_indices(&self) -> Vec<usize> {
        (0..self.n_units())
            .filter(|&i| i != self.treated_index)
            .collect()
    }

    pub fn donor_ids(&self) -> Vec<String> {
        self.donor_indices()
            .into_iter()
            .map(|i| self.unit_ids[i].clone())
            .collect()
    }

    pub fn unit_index(&self, id: &str) -> Result<usize> {
        self.unit_ids
            .iter()
            .position(|u| u == id)
            .ok_or_else(|| Error::validation(format!("unknown unit '{id}'")))
    }

    /// Outcome path of one unit over the whole window.
    pub fn outcome_path(&self, unit: usize) -> DVector<T> {
        self.outcomes.row(unit).transpose()
    }

    /// Same panel with the treatment marker moved to another unit.
    pub fn with_treated(&self, unit: usize) -> Result<Self> {
        let mut p = self.clone();
        p.treated_index = unit;
        p.validate()?;
        Ok(p)
    }

    /// Same panel with a different number of pretreatment periods.
    pub fn with_t0(&self, t0: usize) -> Result<Self> {
        let mut p = self.clone();
        p.t0 = t0;
        p.validate()?;
        Ok(p)
    }

    /// Panel with one unit removed. The treated unit cannot be removed.
    pub fn without_unit(&self, unit: usize) -> Result<Self> {
        if unit == self.treated_index {
            return Err(Error::validation("cannot remove the treated unit"));
        }
        if unit >= self.n_units() {
            return Err(Error::validation(format!("unit index {unit} out of range")));
        }
        let keep: Vec<usize> = (0..self.n_units()).filter(|&i| i != unit).collect();
        let outcomes = self.outcomes.select_rows(keep.iter());
        let predictors = self.predictors.as_ref().map(|x| x.select_rows(keep.iter()));
        let treated_index = if unit < self.treated_index {
            self.treated_index - 1
        } else {
            self.treated_index
        };
        let p = PanelData {
            unit_ids: keep.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            time_labels: self.time_labels.clone(),
            outcomes,
            predictor_names: self.predictor_names.clone(),
            predictors,
            treated_index,
            t0: self.t0,
        };
        p.validate()?;
        Ok(p)
    }
}

fn first_non_finite<T: Scalar>(m: &DMatrix<T>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// How the first treated period is specified.
///
/// A count gives the number of pretreatment periods directly; a label names
/// the first treated period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum T0Spec {
    Count(usize),
    Label(String),
}

impl T0Spec {
    pub fn resolve(&self, time_labels: &[String]) -> Result<usize> {
        match self {
            T0Spec::Count(n) => Ok(*n),
            T0Spec::Label(l) => time_labels
                .iter()
                .position(|t| t == l)
                .ok_or_else(|| Error::validation(format!("unknown time label '{l}'"))),
        }
    }

    /// Command-line style parse: an existing time label wins, otherwise an
    /// integer is read as a count.
    pub fn parse(s: &str, time_labels: &[String]) -> Result<Self> {
        if time_labels.iter().any(|t| t == s) {
            Ok(T0Spec::Label(s.to_string()))
        } else if let Ok(n) = s.parse::<usize>() {
            Ok(T0Spec::Count(n))
        } else {
            Err(Error::validation(format!("unknown time label '{s}'")))
        }
    }
}

/// A wide table: header `unit,<c1>,...,<cm>` and one row per unit.
#[derive(Debug, Clone)]
pub struct WideTable<T: Scalar> {
    pub columns: Vec<String>,
    pub units: Vec<String>,
    pub values: DMatrix<T>,
}

pub fn read_wide<T: Scalar, R: Read>(reader: R) -> Result<WideTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: header.len().max(1),
            message: "header needs a unit column and at least one value column".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = columns.len();
    let mut units = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != width + 1 {
            return Err(Error::Parse {
                row,
                column: rec.len().min(width + 1),
                message: format!("expected {} fields, found {}", width + 1, rec.len()),
            });
        }
        let unit = rec.get(0).unwrap_or_default();
        if unit.is_empty() {
            return Err(Error::validation(format!("row {row}: empty unit label")));
        }
        units.push(unit.to_string());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(Error::validation(format!(
                    "missing value at row {row}, column {} ('{}')",
                    c + 2,
                    columns[c]
                )));
            }
            let v: T = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 2,
                message: format!("cannot parse '{cell}' as a number"),
            })?;
            values.push(v);
        }
    }
    if units.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    Ok(WideTable {
        columns,
        values: DMatrix::from_row_slice(units.len(), width, &values),
        units,
    })
}

pub fn write_wide<T: Scalar, W: Write>(writer: W, table: &WideTable<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string()];
    header.extend(table.columns.iter().cloned());
    wtr.write_record(&header)?;
    for (i, unit) in table.units.iter().enumerate() {
        let mut row = vec![unit.clone()];
        row.extend(table.values.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Where to find a panel on disk and how to mark its treatment.
#[derive(Debug, Clone)]
pub struct PanelSource {
    pub outcomes: PathBuf,
    pub predictors: Option<PathBuf>,
    pub treated: String,
    pub t0: T0Spec,
}

/// Loads a wide-layout panel (and optional predictor file, rows matched by
/// unit label).
pub fn load_panel<T: Scalar>(source: &PanelSource) -> Result<PanelData<T>> {
    let outcomes: WideTable<T> = read_wide(File::open(&source.outcomes)?)?;
    let predictors = match &source.predictors {
        Some(p) => Some(read_wide::<T, _>(File::open(p)?)?),
        None => None,
    };
    assemble_panel(outcomes, predictors, &source.treated, &source.t0)
}

pub fn assemble_panel<T: Scalar>(
    outcomes: WideTable<T>,
    predictors: Option<WideTable<T>>,
    treated: &str,
    t0: &T0Spec,
) -> Result<PanelData<T>> {
    let t0 = t0.resolve(&outcomes.columns)?;
    let treated_index = outcomes
        .units
        .iter()
        .position(|u| u == treated)
        .ok_or_else(|| Error::validation(format!("unknown unit '{treated}'")))?;
    let panel = PanelData::new(
        outcomes.units.clone(),
        outcomes.columns,
        outcomes.values,
        treated_index,
        t0,
    )?;
    match predictors {
        None => Ok(panel),
        Some(x) => {
            if x.units.len() != outcomes.units.len() {
                return Err(Error::validation(format!(
                    "predictor file has {} units, outcome file has {}",
                    x.units.len(),
                    outcomes.units.len()
                )));
            }
            let mut rows = Vec::with_capacity(outcomes.units.len());
            for u in &outcomes.units {
                let r = x.units.iter().position(|v| v == u).ok_or_else(|| {
                    Error::validation(format!("unit '{u}' missing from predictor file"))
                })?;
                rows.push(r);
            }
            let values = x.values.select_rows(rows.iter());
            panel.with_predictors(x.columns, values)
        }
    }
}

/// Writes the outcome table (and the predictor table when the panel has
/// one) in the same wide layout [`load_panel`] reads.
pub fn write_panel<T: Scalar>(
    panel: &PanelData<T>,
    outcomes: &Path,
    predictors: Option<&Path>,
) -> Result<()> {
    let table = WideTable {
        columns: panel.time_labels.clone(),
        units: panel.unit_ids.clone(),
        values: panel.outcomes.clone(),
    };
    write_wide(File::create(outcomes)?, &table)?;
    if let (Some(path), Some(x)) = (predictors, &panel.predictors) {
        let table = WideTable {
            columns: panel.predictor_names.clone(),
            units: panel.unit_ids.clone(),
            values: x.clone(),
        };
        write_wide(File::create(path)?, &table)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PredictorSelection {
    /// Every predictor the panel carries (none if it carries none).
    #[default]
    All,
    None,
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PeriodSelection {
    #[default]
    AllPretreatment,
    None,
    Indices(Vec<usize>),
}

/// Which variables enter the matching matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchingSpec {
    pub predictors: PredictorSelection,
    pub periods: PeriodSelection,
    pub standardize: bool,
}

impl MatchingSpec {
    pub fn outcomes_only() -> Self {
        MatchingSpec {
            predictors: PredictorSelection::None,
            ..Default::default()
        }
    }

    pub fn predictors_only() -> Self {
        MatchingSpec {
            periods: PeriodSelection::None,
            ..Default::default()
        }
    }

    /// Resolves the selection against a panel, checking every period is
    /// pretreatment and every predictor exists.
    pub fn columns<T: Scalar>(&self, panel: &PanelData<T>) -> Result<Vec<MatchingColumn>> {
        let k = panel.predictor_names.len();
        let mut cols = Vec::new();
        match &self.predictors {
            PredictorSelection::All => cols.extend((0..k).map(MatchingColumn::Predictor)),
            PredictorSelection::None => {}
            PredictorSelection::Indices(ix) => {
                for &i in ix {
                    if i >= k {
                        return Err(Error::validation(format!(
                            "predictor index {i} out of range ({k} predictors)"
                        )));
                    }
                    cols.push(MatchingColumn::Predictor(i));
                }
            }
        }
        match &self.periods {
            PeriodSelection::AllPretreatment => {
                cols.extend((0..panel.t0).map(MatchingColumn::Period))
            }
            PeriodSelection::None => {}
            PeriodSelection::Indices(ix) => {
                for &t in ix {
                    if t >= panel.t0 {
                        return Err(Error::validation(format!(
                            "period '{}' is not pretreatment",
                            panel.time_labels.get(t).map(String::as_str).unwrap_or("?")
                        )));
                    }
                    cols.push(MatchingColumn::Period(t));
                }
            }
        }
        if cols.is_empty() {
            return Err(Error::validation("empty matching selection"));
        }
        Ok(cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchingColumn {
    Predictor(usize),
    Period(usize),
}

impl MatchingColumn {
    fn value<T: Scalar>(&self, panel: &PanelData<T>, unit: usize) -> T {
        match *self {
            MatchingColumn::Predictor(k) => panel.predictors.as_ref().expect("checked")[(unit, k)],
            MatchingColumn::Period(t) => panel.outcomes[(unit, t)],
        }
    }

    fn label<T: Scalar>(&self, panel: &PanelData<T>) -> String {
        match *self {
            MatchingColumn::Predictor(k) => format!("predictor:{}", panel.predictor_names[k]),
            MatchingColumn::Period(t) => format!("period:{}", panel.time_labels[t]),
        }
    }
}

impl fmt::Display for MatchingColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchingColumn::Predictor(k) => write!(f, "predictor#{k}"),
            MatchingColumn::Period(t) => write!(f, "period#{t}"),
        }
    }
}

/// Matching variables of a target unit and of its pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix<T: Scalar> {
    /// Length L.
    pub z1: DVector<T>,
    /// J x L, row j belongs to `pool[j]`.
    pub z0: DMatrix<T>,
    pub columns: Vec<MatchingColumn>,
    pub column_labels: Vec<String>,
    pub standardized: bool,
}

impl<T: Scalar> MatchingMatrix<T> {
    /// Builds a matching matrix straight from vectors, without a panel.
    pub fn from_parts(z1: DVector<T>, z0: DMatrix<T>) -> Result<Self> {
        if z1.is_empty() {
            return Err(Error::validation("matching vector is empty"));
        }
        if z0.ncols() != z1.len() {
            return Err(Error::validation(format!(
                "z0 has {} columns but z1 has length {}",
                z0.ncols(),
                z1.len()
            )));
        }
        let l = z1.len();
        Ok(MatchingMatrix {
            z1,
            z0,
            columns: (0..l).map(MatchingColumn::Predictor).collect(),
            column_labels: (0..l).map(|i| format!("column:{i}")).collect(),
            standardized: false,
        })
    }

    /// Matching matrix of an arbitrary target unit against an arbitrary pool.
    pub fn for_units(
        panel: &PanelData<T>,
        target: usize,
        pool: &[usize],
        columns: &[MatchingColumn],
        standardize: bool,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::validation("empty matching selection"));
        }
        let l = columns.len();
        let mut z1 = DVector::from_fn(l, |c, _| columns[c].value(panel, target));
        let mut z0 = DMatrix::from_fn(pool.len(), l, |j, c| columns[c].value(panel, pool[j]));
        let labels: Vec<String> = columns.iter().map(|c| c.label(panel)).collect();
        if standardize {
            let n = pool.len() + 1;
            if n < 2 {
                return Err(Error::validation("standardizing needs at least two units"));
            }
            let nf = T::from_usize_lossy(n);
            for c in 0..l {
                let mean = (z1[c] + z0.column(c).sum()) / nf;
                let ss = (z1[c] - mean).powi(2)
                    + z0.column(c)
                        .iter()
                        .map(|&v| (v - mean).powi(2))
                        .fold(T::zero(), |a, b| a + b);
                let sd = (ss / T::from_usize_lossy(n - 1)).sqrt();
                if !(sd > T::zero()) {
                    return Err(Error::validation(format!(
                        "zero-variance matching column '{}' cannot be standardized",
                        labels[c]
                    )));
                }
                z1[c] /= sd;
                for j in 0..pool.len() {
                    z0[(j, c)] /= sd;
                }
            }
        }
        Ok(MatchingMatrix {
            z1,
            z0,
            columns: columns.to_vec(),
            column_labels: labels,
            standardized: standardize,
        })
    }

    pub fn n_pool(&self) -> usize {
        self.z0.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.z1.len()
    }
}

/// Matching matrix of the treated unit against the donor pool.
pub fn build_matching<T: Scalar>(
    panel: &PanelData<T>,
    spec: &MatchingSpec,
) -> Result<MatchingMatrix<T>> {
    let cols = spec.columns(panel)?;
    MatchingMatrix::for_units(
        panel,
        panel.treated_index,
        &panel.donor_indices(),
        &cols,
        spec.standardize,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_panel(text: &str, treated: &str, t0: T0Spec) -> Result<PanelData<f64>> {
        let table = read_wide::<f64, _>(text.as_bytes())?;
        assemble_panel(table, None, treated, &t0)
    }

    #[test]
    fn minimal_panel() {
        let p = csv_panel("unit,1,2,3\nA,1,2,3\nB,2,3,4\n", "A", T0Spec::Count(2)).unwrap();
        assert_eq!((p.n_units(), p.n_periods(), p.n_donors()), (2, 3, 1));
        assert_eq!(p.t0(), 2);
    }

    #[test]
    fn blank_cell_is_a_validation_error() {
        let err = csv_panel("unit,1,2,3\nA,1,,3\nB,2,3,4\n", "A", T0Spec::Count(2)).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("row 2, column 3")),
            "{err}"
        );
    }

    #[test]
    fn non_numeric_cell_names_position() {
        let err = csv_panel("unit,1,2\nA,1,x\nB,2,3\n", "A", T0Spec::Count(1)).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    row: 2,
                    column: 3,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let err = csv_panel("unit,1,2\nA,1,2,3\nB,2,3\n", "A", T0Spec::Count(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_units_rejected() {
        let err = csv_panel("unit,1,2\nA,1,2\nA,2,3\n", "A", T0Spec::Count(1)).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("duplicate")));
    }

    #[test]
    fn t0_bounds() {
        assert!(csv_panel("unit,1,2\nA,1,2\nB,2,3\n", "A", T0Spec::Count(2)).is_err());
        assert!(csv_panel("unit,1,2\nA,1,2\nB,2,3\n", "A", T0Spec::Count(0)).is_err());
        let p = csv_panel(
            "unit,a,b,c\nA,1,2,3\nB,2,3,4\n",
            "A",
            T0Spec::Label("c".into()),
        )
        .unwrap();
        assert_eq!(p.t0(), 2);
        let err = csv_panel(
            "unit,a,b,c\nA,1,2,3\nB,2,3,4\n",
            "A",
            T0Spec::Label("z".into()),
        );
        assert!(err.is_err());
    }

    #[test]
    fn t0_parse_prefers_labels() {
        let labels: Vec<String> = ["1990", "1991", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            T0Spec::parse("2", &labels).unwrap(),
            T0Spec::Label("2".into())
        );
        assert_eq!(T0Spec::parse("1", &labels).unwrap(), T0Spec::Count(1));
        assert!(T0Spec::parse("1987Q5", &labels).is_err());
    }

    #[test]
    fn quarterly_fixture_dimensions() {
        let mut text = String::from("unit");
        let mut labels = Vec::new();
        for y in 2011..=2020 {
            for q in 1..=4 {
                labels.push(format!("{y}Q{q}"));
            }
        }
        for l in &labels {
            text.push(',');
            text.push_str(l);
        }
        text.push('\n');
        for u in 0..49 {
            text.push_str(&format!("E{u}"));
            for t in 0..40 {
                text.push_str(&format!(",{}", (u * 40 + t) as f64 * 0.5));
            }
            text.push('\n');
        }
        let p = csv_panel(&text, "E7", T0Spec::Label("2019Q1".into())).unwrap();
        assert_eq!((p.n_units(), p.n_periods(), p.t0()), (49, 40, 32));
    }

    #[test]
    fn default_matching_uses_all_pretreatment_periods() {
        let p = csv_panel(
            "unit,1,2,3,4\nA,1,2,3,4\nB,2,3,4,5\nC,0,1,1,0\n",
            "A",
            T0Spec::Count(3),
        )
        .unwrap();
        let m = build_matching(&p, &MatchingSpec::default()).unwrap();
        assert_eq!(m.n_columns(), 3);
        assert_eq!(
            m.z0.row(1).transpose(),
            DVector::from_vec(vec![0.0, 1.0, 1.0])
        );
        assert_eq!(m.z1, DVector::from_vec(vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn predictor_only_matching() {
        let outcomes =
            read_wide::<f64, _>("unit,1,2\nA,3,3\nB,3.6,3.6\nC,4.2,4.2\nD,1.2,1.2\n".as_bytes())
                .unwrap();
        let x = read_wide::<f64, _>("unit,X\nD,2\nC,7\nB,6\nA,5\n".as_bytes()).unwrap();
        let p = assemble_panel(outcomes, Some(x), "A", &T0Spec::Count(1)).unwrap();
        let m = build_matching(&p, &MatchingSpec::predictors_only()).unwrap();
        assert_eq!(m.z1.as_slice(), &[5.0]);
        assert_eq!(m.z0.as_slice(), &[6.0, 7.0, 2.0]);
        assert_eq!(m.column_labels, vec!["predictor:X".to_string()]);
    }

    #[test]
    fn standardizing_constant_column_fails() {
        let p = csv_panel(
            "unit,1,2,3\nA,1,2,3\nB,1,3,4\nC,1,1,1\n",
            "A",
            T0Spec::Count(2),
        )
        .unwrap();
        let spec = MatchingSpec {
            standardize: true,
            ..MatchingSpec::outcomes_only()
        };
        let err = build_matching(&p, &spec).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("period:1")),
            "{err}"
        );
    }

    #[test]
    fn standardized_columns_have_unit_sd() {
        let p = csv_panel(
            "unit,1,2,3\nA,1,2,3\nB,2,7,4\nC,4,1,1\n",
            "A",
            T0Spec::Count(2),
        )
        .unwrap();
        let spec = MatchingSpec {
            standardize: true,
            ..MatchingSpec::outcomes_only()
        };
        let m = build_matching(&p, &spec).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = std::iter::once(m.z1[c])
                .chain(m.z0.column(c).iter().copied())
                .collect();
            let mean = vals.iter().sum::<f64>() / 3.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_or_post_treatment_selection_rejected() {
        let p = csv_panel("unit,1,2,3\nA,1,2,3\nB,2,3,4\n", "A", T0Spec::Count(2)).unwrap();
        let spec = MatchingSpec {
            periods: PeriodSelection::None,
            ..MatchingSpec::outcomes_only()
        };
        assert!(build_matching(&p, &spec).is_err());
        let spec = MatchingSpec {
            periods: PeriodSelection::Indices(vec![2]),
            ..MatchingSpec::outcomes_only()
        };
        assert!(build_matching(&p, &spec).is_err());
    }

    #[test]
    fn without_unit_keeps_treated_marker() {
        let p = csv_panel("unit,1,2\nA,1,2\nB,2,3\nC,3,4\n", "B", T0Spec::Count(1)).unwrap();
        let q = p.without_unit(0).unwrap();
        assert_eq!(q.treated_id(), "B");
        assert_eq!(q.n_units(), 2);
        assert!(p.without_unit(1).is_err());
    }
}
