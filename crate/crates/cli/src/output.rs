//! Deterministic CSV/JSON emission and the generated column schema.

use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::error::CliError;

/// JSON number with 17 significant digits; non-finite values become `null`.
pub fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    // no negative zero in output
    let v = if v == 0.0 { 0.0 } else { v };
    let s = format!("{v:.16e}");
    Value::Number(s.parse::<Number>().expect("formatted float is valid JSON"))
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

pub fn int(v: usize) -> Value {
    Value::from(v as u64)
}

/// CSV float with 9 significant digits.
pub fn fmt9(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == 0.0 {
        "0.00000000e0".into()
    } else {
        format!("{v:.8e}")
    }
}

/// Insertion-ordered JSON object builder.
#[derive(Default)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Obj(Map::new())
    }

    pub fn put(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), v.into());
        self
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.0.insert(key.to_string(), v.into());
    }

    pub fn f(self, key: &str, v: f64) -> Self {
        self.put(key, num(v))
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

impl From<Obj> for Value {
    fn from(o: Obj) -> Value {
        o.build()
    }
}

pub struct Csv {
    pub name: &'static str,
    header: Vec<String>,
    rows: Vec<String>,
}

impl Csv {
    pub fn new(name: &'static str) -> Self {
        let header = schema_for(name)
            .map(|cols| cols.iter().map(|(c, _)| c.to_string()).collect())
            .unwrap_or_default();
        Csv {
            name,
            header,
            rows: Vec::new(),
        }
    }

    /// Replaces the header (for files whose component columns vary).
    pub fn with_header(mut self, cols: Vec<String>) -> Self {
        self.header = cols;
        self
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len(), "{}", self.name);
        self.rows.push(cells.join(","));
    }

    fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

pub struct OutDir {
    dir: PathBuf,
    csvs: Vec<(&'static str, Vec<String>)>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            csvs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    }

    pub fn csv(&mut self, csv: &Csv) -> Result<(), CliError> {
        self.write(csv.name, &csv.render())?;
        self.csvs.push((csv.name, csv.header.clone()));
        Ok(())
    }

    pub fn json(&self, name: &str, v: &Value) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    /// Writes `schema.txt` describing every CSV written so far.
    pub fn finish(self) -> Result<(), CliError> {
        let mut s = String::from(
            "# Columns of the CSV files in this directory.\n# Floats carry 9 significant digits; JSON reports carry 17.\n",
        );
        for (name, header) in &self.csvs {
            s.push_str(&format!("\n[{name}]\n"));
            let known = schema_for(name).unwrap_or(&[]);
            for col in header {
                let desc = known
                    .iter()
                    .find(|(c, _)| c == col)
                    .map(|(_, d)| *d)
                    .or_else(|| component_description(col))
                    .unwrap_or("");
                s.push_str(&format!("{col}: {desc}\n"));
            }
        }
        self.write("schema.txt", &s)
    }
}

type Columns = &'static [(&'static str, &'static str)];

const SCHEMA: &[(&str, Columns)] = &[
    (
        "density.csv",
        &[
            ("node", "node index"),
            ("x", "node x coordinate"),
            ("y", "node y coordinate"),
            ("z", "node z coordinate"),
            ("weight", "quadrature weight of the node"),
        ],
    ),
    (
        "eval.csv",
        &[
            ("point", "evaluation point index"),
            ("x", "point x coordinate"),
            ("y", "point y coordinate"),
            ("z", "point z coordinate"),
            ("near_boundary", "1 when the value was extrapolated from farther points"),
        ],
    ),
    (
        "verify.csv",
        &[
            ("identity", "identity name"),
            ("level", "refinement level"),
            ("h", "largest panel diameter"),
            ("residual", "residual of the identity at this level"),
            ("order", "observed convergence order against the previous level (n/a on the first)"),
        ],
    ),
    (
        "sweep.csv",
        &[
            ("parameter", "value of the sweep axis"),
            ("status", "ok, or failed with the reason"),
            ("nodes", "number of boundary nodes"),
            ("kernel_dim", "dimension of the computed kernel"),
            ("expected_kernel_dim", "dimension predicted by the theory"),
            ("min_singular_value", "smallest weighted singular value outside the kernel"),
            ("condition_estimate", "largest over smallest nonzero singular value"),
        ],
    ),
    (
        "rh.csv",
        &[
            ("level", "refinement level"),
            ("h", "largest panel diameter"),
            ("radius", "radius r of the inner surface ball"),
            ("inner_nodes", "nodes in I_r"),
            ("outer_nodes", "nodes in the enlarged ball"),
            ("lhs", "L^p average of the maximal function over I_r"),
            ("rhs", "L^p0 average over the enlarged ball"),
            ("ratio", "lhs / rhs"),
        ],
    ),
    (
        "lambda.csv",
        &[
            ("level", "refinement level"),
            ("lambda", "level lambda"),
            ("measure_e", "surface measure of E(lambda) = {M F > lambda} in Q0"),
            ("weighted_measure_e", "omega-measure of E(lambda)"),
            ("measure_e_a", "surface measure of E(A lambda)"),
            ("measure_f", "surface measure of {M f > gamma lambda} in Q0"),
            ("delta", "empirical delta at this level"),
        ],
    ),
    (
        "dyadic.csv",
        &[
            ("level", "refinement level"),
            ("h", "largest panel diameter"),
            ("constant", "best constant of the L^q bound"),
            ("constant_data_only", "lhs over the data term alone"),
            ("max_delta", "largest empirical delta"),
            ("maximal_l2_ratio", "||M F||_2 / ||F||_2"),
            ("weighted_difference", "largest difference between weighted (omega = 1) and unweighted reports"),
        ],
    ),
    (
        "ap.csv",
        &[
            ("alpha", "power weight exponent"),
            ("level", "refinement level"),
            ("h", "largest panel diameter"),
            ("nodes", "number of boundary nodes"),
            ("ap_constant", "A_p constant over the ball family"),
        ],
    ),
];

fn schema_for(name: &str) -> Option<Columns> {
    SCHEMA.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

fn component_description(col: &str) -> Option<&'static str> {
    if col.starts_with("density") {
        Some("density component at the node")
    } else if col.starts_with('u') {
        Some("solution component at the point")
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formats() {
        assert_eq!(fmt9(0.1), "1.00000000e-1");
        assert_eq!(serde_json::to_string(&num(0.1)).unwrap(), "1.0000000000000001e-1");
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(fmt9(-0.0), fmt9(0.0));
        assert_eq!(num(-0.0), num(0.0));
        let back: f64 = serde_json::to_string(&num(1.0 / 3.0)).unwrap().parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }
}
