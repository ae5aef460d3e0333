//! Core data model: schemas, survey tables with nonresponse masks, auxiliary
//! margins, and delimited-file ingestion.
//!
//! A [`SurveyTable`] is immutable after construction. Categorical values are
//! stored as 1-based level indices; missing cells are tracked by an explicit
//! mask (the stored value under a masked cell is NaN and must never be read).
//! A row whose survey variables are all missing is a unit nonrespondent.

use crate::error::{Error, Result};
use std::path::Path;
use std::sync::Arc;

/// What kind of values a survey variable takes.
#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    /// Categorical with two levels labelled `0` and `1`.
    Binary,
    /// Categorical with the given level labels (level indices are 1-based).
    Categorical { labels: Vec<String> },
    Continuous,
}

impl VarKind {
    pub fn n_levels(&self) -> Option<usize> {
        match self {
            VarKind::Binary => Some(2),
            VarKind::Categorical { labels } => Some(labels.len()),
            VarKind::Continuous => None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

/// One survey variable in a schema.
#[derive(Debug, Clone)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    /// Whether a known population margin exists for this variable.
    pub has_margin: bool,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, kind: VarKind) -> Self {
        VariableSpec { name: name.into(), kind, has_margin: false }
    }

    /// Label of a 1-based level index.
    pub fn label_of(&self, level: usize) -> String {
        match &self.kind {
            VarKind::Binary => (level - 1).to_string(),
            VarKind::Categorical { labels } => labels[level - 1].clone(),
            VarKind::Continuous => panic!("continuous variable has no levels"),
        }
    }

    /// 1-based level index of a label, if valid.
    pub fn level_index(&self, label: &str) -> Option<usize> {
        match &self.kind {
            VarKind::Binary => match label {
                "0" => Some(1),
                "1" => Some(2),
                _ => None,
            },
            VarKind::Categorical { labels } => {
                labels.iter().position(|l| l == label).map(|i| i + 1)
            }
            VarKind::Continuous => None,
        }
    }
}

/// Ordered variable list plus survey-frame facts shared by every table.
#[derive(Debug, Clone)]
pub struct Schema {
    pub variables: Vec<VariableSpec>,
    pub weight_column: String,
    /// Population size N.
    pub population_size: f64,
}

impl Schema {
    pub fn new(
        variables: Vec<VariableSpec>,
        weight_column: impl Into<String>,
        population_size: f64,
    ) -> Result<Self> {
        let weight_column = weight_column.into();
        let schema = Schema { variables, weight_column, population_size };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.population_size < 1.0 {
            return Err(Error::Data("population size must be at least 1".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if let Some(m) = v.kind.n_levels() {
                if m < 2 {
                    return Err(Error::Data(format!(
                        "variable `{}` must have at least 2 levels",
                        v.name
                    )));
                }
            }
            if self.variables[..i].iter().any(|u| u.name == v.name) {
                return Err(Error::Data(format!("duplicate variable name `{}`", v.name)));
            }
            if v.name == self.weight_column {
                return Err(Error::Data(format!(
                    "variable `{}` collides with the weight column",
                    v.name
                )));
            }
        }
        Ok(())
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }
}

/// Rectangular survey data with per-cell response masks, unit-nonresponse
/// flags and design (or analysis) weights.
#[derive(Debug, Clone)]
pub struct SurveyTable {
    pub schema: Arc<Schema>,
    /// Per-variable columns; categorical cells hold the 1-based level index.
    pub values: Vec<Vec<f64>>,
    /// Per-variable missingness; `true` means the cell was not observed.
    pub item_mask: Vec<Vec<bool>>,
    /// `true` for unit nonrespondents (every survey variable missing).
    pub unit_flag: Vec<bool>,
    pub design_weight: Vec<f64>,
}

impl SurveyTable {
    /// Build a table and check its invariants.
    pub fn new(
        schema: Arc<Schema>,
        values: Vec<Vec<f64>>,
        item_mask: Vec<Vec<bool>>,
        unit_flag: Vec<bool>,
        design_weight: Vec<f64>,
    ) -> Result<Self> {
        let table = SurveyTable { schema, values, item_mask, unit_flag, design_weight };
        table.validate()?;
        Ok(table)
    }

    pub fn n_rows(&self) -> usize {
        self.unit_flag.len()
    }

    pub fn is_missing(&self, var: usize, row: usize) -> bool {
        self.item_mask[var][row]
    }

    /// Row indices of unit respondents.
    pub fn respondent_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| !self.unit_flag[i]).collect()
    }

    /// Row indices of unit nonrespondents.
    pub fn unit_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.unit_flag[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if self.values.len() != self.schema.n_vars() || self.item_mask.len() != self.schema.n_vars()
        {
            return Err(Error::Data("column count does not match schema".into()));
        }
        for col in self.values.iter().chain(std::iter::once(&self.design_weight)) {
            if col.len() != n {
                return Err(Error::Data("ragged columns".into()));
            }
        }
        for col in &self.item_mask {
            if col.len() != n {
                return Err(Error::Data("ragged mask columns".into()));
            }
        }
        for (row, &unit) in self.unit_flag.iter().enumerate() {
            if unit && !self.item_mask.iter().all(|m| m[row]) {
                return Err(Error::Data(format!(
                    "row {}: unit nonrespondent has an observed cell",
                    row + 1
                )));
            }
            let w = self.design_weight[row];
            if !(w > 0.0) {
                return Err(Error::Data(format!("row {}: nonpositive weight {}", row + 1, w)));
            }
        }
        for (j, var) in self.schema.variables.iter().enumerate() {
            if let Some(m) = var.kind.n_levels() {
                for row in 0..n {
                    if self.item_mask[j][row] {
                        continue;
                    }
                    let v = self.values[j][row];
                    if v < 1.0 || v > m as f64 || v.fract() != 0.0 {
                        return Err(Error::Data(format!(
                            "row {}: level {} out of range for `{}` ({} levels)",
                            row + 1,
                            v,
                            var.name,
                            m
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Read a delimited file into a [`SurveyTable`].
///
/// The header must contain every schema variable and the weight column.
/// Cells equal to `missing_token` are item nonresponse; a row with every
/// survey variable missing is a unit nonrespondent. A missing weight is
/// allowed only on unit-nonrespondent rows (it is replaced when analysis
/// weights are built) and defaults to 1.
pub fn load_table(path: &Path, schema: Arc<Schema>, missing_token: &str) -> Result<SurveyTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let loc = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{}` not found in {}", name, path.display())))
    };
    let var_cols: Vec<usize> =
        schema.variables.iter().map(|v| loc(&v.name)).collect::<Result<_>>()?;
    let weight_col = loc(&schema.weight_column)?;

    let k = schema.n_vars();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut mask: Vec<Vec<bool>> = vec![Vec::new(); k];
    let mut unit_flag = Vec::new();
    let mut weights = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 2; // 1-based, after the header
        let mut all_missing = true;
        for (j, (&col, var)) in var_cols.iter().zip(&schema.variables).enumerate() {
            let cell = record.get(col).unwrap_or("").trim();
            if cell == missing_token {
                values[j].push(f64::NAN);
                mask[j].push(true);
                continue;
            }
            all_missing = false;
            mask[j].push(false);
            match &var.kind {
                VarKind::Continuous => {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Data(format!("line {line}: cannot parse `{cell}` for `{}`", var.name))
                    })?;
                    values[j].push(v);
                }
                kind => {
                    let idx = var.level_index(cell).ok_or_else(|| {
                        Error::Data(format!(
                            "line {line}: level `{cell}` out of range for `{}` ({} levels)",
                            var.name,
                            kind.n_levels().unwrap()
                        ))
                    })?;
                    values[j].push(idx as f64);
                }
            }
        }
        unit_flag.push(all_missing);
        let wcell = record.get(weight_col).unwrap_or("").trim();
        if wcell == missing_token {
            if !all_missing {
                return Err(Error::Data(format!("line {line}: missing weight on a respondent row")));
            }
            weights.push(1.0);
        } else {
            let w: f64 = wcell
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: cannot parse weight `{wcell}`")))?;
            if !(w > 0.0) {
                return Err(Error::Data(format!("line {line}: nonpositive weight {w}")));
            }
            weights.push(w);
        }
    }

    SurveyTable::new(schema, values, mask, unit_flag, weights)
}

/// Write a table back to a delimited file, masked cells as `missing_token`.
pub fn write_table(table: &SurveyTable, path: &Path, missing_token: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let schema = &table.schema;
    let mut header: Vec<&str> = schema.variables.iter().map(|v| v.name.as_str()).collect();
    header.push(&schema.weight_column);
    writer.write_record(&header)?;
    for row in 0..table.n_rows() {
        let mut record: Vec<String> = Vec::with_capacity(schema.n_vars() + 1);
        for (j, var) in schema.variables.iter().enumerate() {
            if table.item_mask[j][row] {
                record.push(missing_token.to_string());
            } else if var.kind.is_categorical() {
                record.push(var.label_of(table.values[j][row] as usize));
            } else {
                record.push(table.values[j][row].to_string());
            }
        }
        record.push(table.design_weight[row].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Tolerance variance attached to a margin level: a fixed value or a request
/// to calibrate it from a preliminary completed dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginVariance {
    Fixed(f64),
    Calibrate,
}

/// Known population total for one level of a margin variable.
#[derive(Debug, Clone)]
pub struct MarginEntry {
    pub variable: String,
    /// 1-based level index.
    pub level: usize,
    pub total: f64,
    pub variance: MarginVariance,
}

/// Known population totals T and match-tolerance variances V.
#[derive(Debug, Clone, Default)]
pub struct AuxiliaryMargins {
    pub entries: Vec<MarginEntry>,
}

impl AuxiliaryMargins {
    pub fn new(entries: Vec<MarginEntry>) -> Self {
        AuxiliaryMargins { entries }
    }

    /// Margin variable names in first-appearance order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.variable.as_str()) {
                out.push(&e.variable);
            }
        }
        out
    }

    pub fn entries_for(&self, variable: &str) -> Vec<&MarginEntry> {
        self.entries.iter().filter(|e| e.variable == variable).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Check margin invariants against a table; returns every violation found.
pub fn validate_margins(table: &SurveyTable, margins: &AuxiliaryMargins) -> Vec<String> {
    let schema = &table.schema;
    let mut violations = Vec::new();
    for e in &margins.entries {
        match schema.var_index(&e.variable) {
            None => {
                violations.push(format!("margin references unknown variable `{}`", e.variable));
                continue;
            }
            Some(j) => {
                let var = &schema.variables[j];
                match var.kind.n_levels() {
                    None => {
                        violations.push(format!(
                            "margin on continuous variable `{}` (margins are defined for categorical variables)",
                            e.variable
                        ));
                        continue;
                    }
                    Some(m) => {
                        if e.level < 1 || e.level > m {
                            violations.push(format!(
                                "margin level {} out of range for `{}`",
                                e.level, e.variable
                            ));
                        }
                    }
                }
                if !var.has_margin {
                    violations.push(format!("variable `{}` is not marked as having a margin", e.variable));
                }
            }
        }
        if e.total < 0.0 {
            violations.push(format!("negative total for `{}` level {}", e.variable, e.level));
        }
        if let MarginVariance::Fixed(v) = e.variance {
            if !(v > 0.0) {
                violations.push(format!(
                    "nonpositive tolerance variance for `{}` level {}",
                    e.variable, e.level
                ));
            }
        }
    }
    for name in margins.variables() {
        let entries = margins.entries_for(name);
        let total: f64 = entries.iter().map(|e| e.total).sum();
        if total > schema.population_size * (1.0 + 1e-9) {
            violations.push(format!(
                "totals for `{}` exceed the population size ({} > {})",
                name, total, schema.population_size
            ));
        }
        let mut seen = Vec::new();
        for e in &entries {
            if seen.contains(&e.level) {
                violations.push(format!("duplicate margin level {} for `{}`", e.level, name));
            }
            seen.push(e.level);
        }
        if let Some(j) = schema.var_index(name) {
            if let Some(m) = schema.variables[j].kind.n_levels() {
                if !(entries.len() == m || entries.len() + 1 == m) {
                    violations.push(format!(
                        "margin for `{}` must list {} or {} levels, found {}",
                        name,
                        m - 1,
                        m,
                        entries.len()
                    ));
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small_schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec![
                    VariableSpec::new("x1", VarKind::Binary),
                    VariableSpec::new("x2", VarKind::Binary),
                    VariableSpec::new("age", VarKind::Continuous),
                ],
                "w",
                1000.0,
            )
            .unwrap(),
        )
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn all_missing_row_is_unit_nonrespondent() {
        let f = write_tmp("x1,x2,age,w\n0,1,31.5,2.0\n,,,2.0\n1,0,40,2.0\n");
        let table = load_table(f.path(), small_schema(), "").unwrap();
        assert_eq!(table.unit_flag, vec![false, true, false]);
        assert!(table.item_mask.iter().all(|m| m[1]));
    }

    #[test]
    fn binary_level_out_of_range_is_an_error() {
        let f = write_tmp("x1,x2,age,w\n2,1,31.5,2.0\n");
        let err = load_table(f.path(), small_schema(), "").unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn weights_read_back_identically() {
        let f = write_tmp("x1,x2,age,w\n0,1,31.5,1.0\n1,0,12,1.0\n");
        let table = load_table(f.path(), small_schema(), "").unwrap();
        assert_eq!(table.design_weight, vec![1.0, 1.0]);
    }

    #[test]
    fn nonpositive_weight_is_an_error() {
        let f = write_tmp("x1,x2,age,w\n0,1,31.5,0.0\n");
        assert!(load_table(f.path(), small_schema(), "").is_err());
    }

    #[test]
    fn round_trip_reproduces_file() {
        let f = write_tmp("x1,x2,age,w\n0,1,31.5,2\n,,,2\n1,0,40,2.5\n1,,,3\n");
        let table = load_table(f.path(), small_schema(), "").unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_table(&table, out.path(), "").unwrap();
        let again = load_table(out.path(), small_schema(), "").unwrap();
        assert_eq!(table.unit_flag, again.unit_flag);
        assert_eq!(table.item_mask, again.item_mask);
        assert_eq!(table.design_weight, again.design_weight);
        for j in 0..3 {
            for row in 0..table.n_rows() {
                if !table.item_mask[j][row] {
                    assert_eq!(table.values[j][row], again.values[j][row]);
                }
            }
        }
    }

    #[test]
    fn margin_on_continuous_variable_is_a_violation() {
        let schema = small_schema();
        let f = write_tmp("x1,x2,age,w\n0,1,31.5,2.0\n");
        let table = load_table(f.path(), schema, "").unwrap();
        let margins = AuxiliaryMargins::new(vec![MarginEntry {
            variable: "age".into(),
            level: 1,
            total: 10.0,
            variance: MarginVariance::Fixed(1.0),
        }]);
        let violations = validate_margins(&table, &margins);
        assert!(violations.iter().any(|v| v.contains("continuous")));
    }

    #[test]
    fn full_binary_margin_is_ok() {
        // totals 0.52*N + 0.48*N for a binary variable pass validation
        let mut vars = vec![
            VariableSpec::new("sex", VarKind::Binary),
            VariableSpec::new("age", VarKind::Continuous),
        ];
        vars[0].has_margin = true;
        let schema = Arc::new(Schema::new(vars, "w", 1000.0).unwrap());
        let f = write_tmp("sex,age,w\n0,31.5,2.0\n");
        let table = load_table(f.path(), schema, "").unwrap();
        let margins = AuxiliaryMargins::new(vec![
            MarginEntry {
                variable: "sex".into(),
                level: 2,
                total: 520.0,
                variance: MarginVariance::Fixed(100.0),
            },
            MarginEntry {
                variable: "sex".into(),
                level: 1,
                total: 480.0,
                variance: MarginVariance::Fixed(100.0),
            },
        ]);
        assert!(validate_margins(&table, &margins).is_empty());
    }

    #[test]
    fn zero_tolerance_variance_is_a_violation() {
        let mut vars = vec![VariableSpec::new("sex", VarKind::Binary)];
        vars[0].has_margin = true;
        let schema = Arc::new(Schema::new(vars, "w", 1000.0).unwrap());
        let f = write_tmp("sex,w\n0,2.0\n");
        let table = load_table(f.path(), schema, "").unwrap();
        let margins = AuxiliaryMargins::new(vec![MarginEntry {
            variable: "sex".into(),
            level: 2,
            total: 520.0,
            variance: MarginVariance::Fixed(0.0),
        }]);
        let violations = validate_margins(&table, &margins);
        assert!(violations.iter().any(|v| v.contains("nonpositive tolerance")));
    }

    #[test]
    fn unit_flag_implies_all_masked() {
        let schema = small_schema();
        let err = SurveyTable::new(
            schema,
            vec![vec![1.0], vec![f64::NAN], vec![f64::NAN]],
            vec![vec![false], vec![true], vec![true]],
            vec![true],
            vec![1.0],
        );
        assert!(err.is_err());
    }
}
