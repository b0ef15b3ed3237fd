//! Text formats for fields: CSV with one line per grid row (`j` ascending,
//! `x` ascending within a line) and a JSON envelope carrying the grid.

use serde::{Deserialize, Serialize};

use super::{Field2D, Grid2D, GridError};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldEnvelope {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl From<&Field2D> for FieldEnvelope {
    fn from(f: &Field2D) -> Self {
        let (x0, x1, y0, y1) = f.grid().bounds();
        Self {
            x0,
            x1,
            y0,
            y1,
            nx: f.grid().nx(),
            ny: f.grid().ny(),
            values: f.values().to_vec(),
        }
    }
}

impl TryFrom<FieldEnvelope> for Field2D {
    type Error = GridError;

    fn try_from(e: FieldEnvelope) -> Result<Self, GridError> {
        let grid = Grid2D::new(e.x0, e.x1, e.y0, e.y1, e.nx, e.ny)?;
        Field2D::from_values(grid, e.values)
    }
}

// Debug formatting of f64 is the shortest string that round-trips and never
// depends on locale.
fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn to_csv(f: &Field2D) -> String {
    let g = f.grid();
    let mut out = String::with_capacity(g.len() * 20);
    for row in f.values().chunks(g.nx()) {
        let line: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(grid: Grid2D, text: &str) -> Result<Field2D, GridError> {
    let mut values = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| GridError::Parse(format!("line {}: bad number {tok:?}", lineno + 1)))?;
            values.push(v);
        }
        if values.len() - before != grid.nx() {
            return Err(GridError::Parse(format!(
                "line {}: expected {} columns, got {}",
                lineno + 1,
                grid.nx(),
                values.len() - before
            )));
        }
    }
    if rows != grid.ny() {
        return Err(GridError::Parse(format!("expected {} rows, got {rows}", grid.ny())));
    }
    Field2D::from_values(grid, values)
}

pub fn to_json(f: &Field2D) -> String {
    serde_json::to_string(&FieldEnvelope::from(f)).expect("finite floats always serialize")
}

pub fn from_json(text: &str) -> Result<Field2D, GridError> {
    let env: FieldEnvelope =
        serde_json::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    Field2D::try_from(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let g = Grid2D::new(0.0, 2.0, 0.0, 1.0, 3, 3).unwrap();
        let f = Field2D::from_fn(g, |x, y| x + 10.0 * y);
        let s = to_csv(&f);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines, ["0.0,1.0,2.0", "5.0,6.0,7.0", "10.0,11.0,12.0"]);
    }

    #[test]
    fn csv_rejects_ragged() {
        let g = Grid2D::unit_square(3).unwrap();
        assert!(from_csv(g, "1,2,3\n4,5\n7,8,9\n").is_err());
        assert!(from_csv(g, "1,2,3\n4,5,6\n").is_err());
        assert!(from_csv(g, "1,2,3\n4,x,6\n7,8,9\n").is_err());
    }

    #[test]
    fn json_envelope_fields() {
        let g = Grid2D::unit_square(3).unwrap();
        let f = Field2D::constant(g, 1.5);
        let v: serde_json::Value = serde_json::from_str(&to_json(&f)).unwrap();
        for key in ["x0", "x1", "y0", "y1", "nx", "ny", "values"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["values"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn json_rejects_bad_grid() {
        let text = r#"{"x0":-1,"x1":1,"y0":-1,"y1":1,"nx":2,"ny":3,"values":[0,0,0,0,0,0]}"#;
        assert!(matches!(from_json(text), Err(GridError::InvalidGrid(_))));
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(v in prop::collection::vec(-1e6f64..1e6, 20)) {
            let g = Grid2D::new(-1.0, 3.0, 0.0, 1.0, 5, 4).unwrap();
            let f = Field2D::from_values(g, v).unwrap();
            prop_assert_eq!(&from_csv(g, &to_csv(&f)).unwrap(), &f);
            prop_assert_eq!(&from_json(&to_json(&f)).unwrap(), &f);
        }
    }
}
