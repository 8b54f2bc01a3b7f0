//! Result tables and their CSV / JSON-lines encodings.

use crate::config::Format;

/// Schema tag written at the top of every CSV result file.
pub const SCHEMA: &str = "circlekam-results v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Self::Num(v) => fmt_num(*v),
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
            Self::Bool(b) => b.to_string(),
            Self::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Self::Num(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, serde_json::Value::Number),
            Self::Int(v) => (*v).into(),
            Self::Text(s) => s.clone().into(),
            Self::Bool(b) => (*b).into(),
            Self::Empty => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Self::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Self::Empty, Into::into)
    }
}

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Integer vector as `a;b;c`.
pub fn join_ints(v: &[i64]) -> Cell {
    Cell::Text(v.iter().map(i64::to_string).collect::<Vec<_>>().join(";"))
}

pub fn join_nums(v: &[f64]) -> Cell {
    Cell::Text(v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(";"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub tables: Vec<Table>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn render(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Jsonl => self.to_jsonl(),
        }
    }

    fn to_csv(&self) -> Vec<u8> {
        let mut out = format!("# {SCHEMA}\n").into_bytes();
        for t in &self.tables {
            out.extend_from_slice(format!("# table: {}\n", t.name).as_bytes());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&t.columns).expect("writing to memory");
            for row in &t.rows {
                w.write_record(row.iter().map(Cell::csv)).expect("writing to memory");
            }
            out.extend(w.into_inner().expect("flushing to memory"));
        }
        out
    }

    fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.tables {
            for row in &t.rows {
                let mut obj = serde_json::Map::new();
                obj.insert("schema".into(), SCHEMA.into());
                obj.insert("table".into(), t.name.clone().into());
                for (c, v) in t.columns.iter().zip(row) {
                    obj.insert((*c).to_string(), v.json());
                }
                out.extend(serde_json::to_vec(&serde_json::Value::Object(obj)).expect("serializing a map"));
                out.push(b'\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut t = Table::new("rotation", &["n", "value", "status"]);
        t.push(vec![10u64.into(), 0.1.into(), "ok".into()]);
        t.push(vec![20u64.into(), f64::NAN.into(), "error: a, b".into()]);
        Report { tables: vec![t] }
    }

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(sample().render(Format::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# circlekam-results v1");
        assert_eq!(lines[1], "# table: rotation");
        assert_eq!(lines[2], "n,value,status");
        assert_eq!(lines[3], "10,0.1,ok");
        assert_eq!(lines[4], "20,NaN,\"error: a, b\"");
    }

    #[test]
    fn jsonl_layout() {
        let text = String::from_utf8(sample().render(Format::Jsonl)).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["table"], "rotation");
        assert_eq!(first["value"], 0.1);
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert!(second["value"].is_null());
    }

    #[test]
    fn floats_round_trip() {
        let v = 0.1f64 + 0.2;
        for v in [v, 1.2345678901234567e-19, -3e20, 0.0] {
            assert_eq!(Cell::from(v).csv().parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_num(2e-21), "2e-21");
    }
}
