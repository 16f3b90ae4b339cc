//! Minimal numeric CSV used by every exported table.

use crate::error::{Error, Result};

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn row(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt(*v));
    }
    out.push('\n');
    out
}

/// Splits into header names and numeric rows of matching width.
pub fn parse(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Csv {
        line: 1,
        message: "empty input".into(),
    })?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Csv {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if row.len() != header.len() {
            return Err(Error::Csv {
                line: idx + 1,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn formatted_values_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(fmt(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(parse("a,b\n1,2\n3\n"), Err(Error::Csv { line: 3, .. })));
        assert!(parse("").is_err());
    }
}
