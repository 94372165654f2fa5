//! CSV and number formatting shared by the file formats.

use crate::error::{Error, Result};

/// 17 significant digits, so every written value reads back bit-exact.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keep the sign of negative zero out of the files
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

/// Parse a numeric CSV whose header must start with `columns`. Blank lines
/// and lines starting with `#` are skipped. Errors name the file and line.
pub fn parse_csv(text: &str, file: &str, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
        file: file.to_string(),
        line: 1,
        detail: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < columns.len() || names[..columns.len()] != *columns {
        return Err(Error::Parse {
            file: file.to_string(),
            line: hline + 1,
            detail: format!("expected header starting with {}", columns.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                file: file.to_string(),
                line: i + 1,
                detail: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        let row = fields[..columns.len()]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    file: file.to_string(),
                    line: i + 1,
                    detail: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 6.02e23, -2.5e-300, 0.0, 950.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn bad_rows_name_file_and_line() {
        let text = "a,b\n1,2\n\n3,x\n";
        let err = parse_csv(text, "f.csv", &["a", "b"]).unwrap_err().to_string();
        assert!(err.starts_with("f.csv:4:"), "{err}");
        let err = parse_csv("a,c\n1,2\n", "g.csv", &["a", "b"]).unwrap_err().to_string();
        assert!(err.contains("g.csv:1"), "{err}");
        let rows = parse_csv("# note\na,b\n1,2\n", "h.csv", &["a", "b"]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0]]);
    }
}
