//! Text formats: score files (JSON), numeric matrices and vectors (TSV), and
//! weight lists.
//!
//! Every parse error carries the source name with a 1-based line and column.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score_model::ScoreModel;

/// On-disk form of a [`ScoreModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    /// Row-major.
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub n: u64,
}

impl ScoreFile {
    pub fn from_model(model: &ScoreModel) -> Self {
        ScoreFile {
            s: model.scores().to_vec(),
            sigma: model.sigma().rows().into_iter().map(|r| r.to_vec()).collect(),
            n: model.n(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("score file serializes")
    }

    pub fn into_model(self, source_name: &str) -> Result<ScoreModel> {
        let p = self.s.len();
        if p == 0 {
            return Err(parse_error(source_name, 1, 1, "score vector is empty"));
        }
        if let Some((i, row)) = self.sigma.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::data(format!(
                "{source_name}: Sigma row {} has {} entries, expected {p}",
                i + 1,
                row.len()
            )));
        }
        if self.sigma.len() != p {
            return Err(Error::data(format!(
                "{source_name}: Sigma has {} rows, expected {p}",
                self.sigma.len()
            )));
        }
        let sigma = Array2::from_shape_fn((p, p), |(i, j)| self.sigma[i][j]);
        ScoreModel::new(self.s, sigma, self.n).map_err(|e| match e {
            Error::Domain(m) => Error::data(format!("{source_name}: {m}")),
            Error::Data(m) => Error::data(format!("{source_name}: {m}")),
            other => other,
        })
    }
}

fn parse_error(source_name: &str, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        column,
        message: message.into(),
    }
}

/// Parses a score file and validates the model.
pub fn parse_score_json(text: &str, source_name: &str) -> Result<ScoreModel> {
    let file: ScoreFile = serde_json::from_str(text)
        .map_err(|e| parse_error(source_name, e.line().max(1), e.column().max(1), e.to_string()))?;
    file.into_model(source_name)
}

/// Options for reading a TSV matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct TsvOptions {
    /// Skip the first nonblank line.
    pub header: bool,
}

/// Parses a tab-separated numeric matrix. Blank lines and lines starting
/// with `#` are ignored; every row must have the same number of fields.
pub fn parse_tsv_matrix(text: &str, source_name: &str, opts: TsvOptions) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    let mut header_pending = opts.header;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.strip_suffix('\r').unwrap_or(raw);
        if content.trim().is_empty() || content.starts_with('#') {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let mut column = 1;
        let mut count = 0;
        for field in content.split('\t') {
            let trimmed = field.trim();
            let lead = field.len() - field.trim_start().len();
            let v: f64 = trimmed.parse().map_err(|_| {
                parse_error(source_name, line, column + lead, format!("expected a number, found {trimmed:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse_error(source_name, line, column + lead, "value is not finite"));
            }
            values.push(v);
            count += 1;
            column += field.chars().count() + 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(parse_error(
                    source_name,
                    line,
                    1,
                    format!("row has {count} fields, expected {w}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_error(source_name, 1, 1, "no data rows"))?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("shape matches the parsed values"))
}

/// Parses a single-column TSV (or a single row) as a vector.
pub fn parse_tsv_vector(text: &str, source_name: &str, opts: TsvOptions) -> Result<Array1<f64>> {
    let m = parse_tsv_matrix(text, source_name, opts)?;
    match m.dim() {
        (_, 1) => Ok(m.column(0).to_owned()),
        (1, _) => Ok(m.row(0).to_owned()),
        (r, c) => Err(parse_error(
            source_name,
            1,
            1,
            format!("expected a single column or row, found {r}x{c}"),
        )),
    }
}

/// Parses whitespace-separated positive weights.
pub fn parse_weights(text: &str, source_name: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut rest = line;
        let mut offset = 0;
        while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
            let token_len = rest[start..].find(char::is_whitespace).unwrap_or(rest.len() - start);
            let token = &rest[start..start + token_len];
            let column = line[..offset + start].chars().count() + 1;
            let v: f64 = token
                .parse()
                .map_err(|_| parse_error(source_name, idx + 1, column, format!("expected a weight, found {token:?}")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_error(source_name, idx + 1, column, format!("weight {v} is not positive")));
            }
            out.push(v);
            offset += start + token_len;
            rest = &rest[start + token_len..];
        }
    }
    if out.is_empty() {
        return Err(parse_error(source_name, 1, 1, "no weights"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_model::exchangeable_sigma;

    #[test]
    fn score_file_round_trip() {
        let m = ScoreModel::new(vec![0.1, -2.0, 1.0 / 3.0], exchangeable_sigma(3, 0.25).unwrap(), 1234).unwrap();
        let json = ScoreFile::from_model(&m).to_json();
        let back = parse_score_json(&json, "x.json").unwrap();
        assert_eq!(back.scores(), m.scores());
        assert_eq!(back.sigma(), m.sigma());
        assert_eq!(back.n(), 1234);
    }

    #[test]
    fn score_file_errors() {
        let err = parse_score_json("{\"S\": [1, 2],\n \"Sigma\": [[1, 0], [0, 1]], \"n\": x}", "s.json").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_score_json(r#"{"S": [1, 2], "Sigma": [[1, 0]], "n": 5}"#, "s.json").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let err = parse_score_json(r#"{"S": [1, 2], "Sigma": [[1, 0.5], [0.4, 1]], "n": 5}"#, "s.json").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(parse_score_json(r#"{"S": [1], "Sigma": [[1]], "n": 5, "extra": 1}"#, "s").is_err());
    }

    #[test]
    fn tsv_parsing() {
        let m = parse_tsv_matrix("a\tb\n1\t2\n\n# note\n3\t4.5\n", "g.tsv", TsvOptions { header: true }).unwrap();
        assert_eq!(m, ndarray::array![[1.0, 2.0], [3.0, 4.5]]);
        let err = parse_tsv_matrix("1\t2\n3\tx\n", "g.tsv", TsvOptions::default()).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            e => panic!("{e}"),
        }
        let err = parse_tsv_matrix("1\t2\n3\n", "g.tsv", TsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_tsv_matrix("", "g.tsv", TsvOptions::default()).is_err());
        assert_eq!(parse_tsv_vector("1\n2\n3\n", "y", TsvOptions::default()).unwrap().len(), 3);
        assert_eq!(parse_tsv_vector("1\t2\t3\n", "y", TsvOptions::default()).unwrap().len(), 3);
    }

    #[test]
    fn weights_parsing() {
        assert_eq!(parse_weights("1 2\n 3.5\n", "w").unwrap(), vec![1.0, 2.0, 3.5]);
        match parse_weights("1 2\n  -3\n", "w").unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 3)),
            e => panic!("{e}"),
        }
        assert!(parse_weights("\n", "w").is_err());
    }
}
