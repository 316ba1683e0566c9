use std::fmt::Write as _;

use super::CooTensor;

/// Text formats accepted by [`parse_coo`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CooFormat {
    MatrixMarket,
    Frostt,
}

impl CooFormat {
    /// Guesses the format from a file extension (`.mtx` or `.tns`).
    pub fn from_path(path: &str) -> Option<Self> {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".mtx") {
            Some(CooFormat::MatrixMarket)
        } else if lower.ends_with(".tns") {
            Some(CooFormat::Frostt)
        } else {
            None
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: malformed header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: coordinate {coord} out of bounds (dimension {dim} has size {size})")]
    OutOfBounds {
        line: usize,
        coord: usize,
        dim: usize,
        size: usize,
    },
    #[error("line {line}: non-numeric value '{token}'")]
    Value { line: usize, token: String },
    #[error("line {line}: bad coordinate '{token}' (coordinates are 1-based integers)")]
    Coordinate { line: usize, token: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Fields {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} entries, found {found}")]
    Count { expected: usize, found: usize },
    #[error("empty input")]
    Empty,
}

fn coordinate(token: &str, line: usize) -> Result<usize, ParseError> {
    match token.parse::<usize>() {
        Ok(c) if c >= 1 => Ok(c - 1),
        _ => Err(ParseError::Coordinate {
            line,
            token: token.to_string(),
        }),
    }
}

fn value(token: &str, line: usize) -> Result<f64, ParseError> {
    token.parse::<f64>().map_err(|_| ParseError::Value {
        line,
        token: token.to_string(),
    })
}

/// Parses a coordinate list. Returned coordinates are 0-based and duplicate
/// entries are summed.
pub fn parse_coo(text: &str, format: CooFormat) -> Result<CooTensor, ParseError> {
    let mut coo = match format {
        CooFormat::MatrixMarket => parse_mtx(text)?,
        CooFormat::Frostt => parse_tns(text)?,
    };
    coo.normalize();
    Ok(coo)
}

fn parse_mtx(text: &str) -> Result<CooTensor, ParseError> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    let (n, header) = lines.next().ok_or(ParseError::Empty)?;
    let fields: Vec<String> = header
        .split_whitespace()
        .map(|f| f.to_ascii_lowercase())
        .collect();
    let expected = ["%%matrixmarket", "matrix", "coordinate", "real", "general"];
    if fields.len() != expected.len() || fields.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(ParseError::Header {
            line: n,
            msg: "expected '%%MatrixMarket matrix coordinate real general'".into(),
        });
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (n, size_line) = body.next().ok_or(ParseError::Header {
        line: n + 1,
        msg: "missing size line".into(),
    })?;
    let sizes: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ParseError::Header {
            line: n,
            msg: format!("bad size line '{size_line}'"),
        })?;
    if sizes.len() != 3 {
        return Err(ParseError::Header {
            line: n,
            msg: format!("size line needs 'rows cols nnz', got '{size_line}'"),
        });
    }
    let dims = vec![sizes[0], sizes[1]];
    let mut coo = CooTensor::new(dims.clone());
    for (n, line) in body {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(ParseError::Fields {
                line: n,
                expected: 3,
                found: tokens.len(),
            });
        }
        let coord = vec![coordinate(tokens[0], n)?, coordinate(tokens[1], n)?];
        check_bounds(&coord, &dims, n)?;
        coo.entries.push((coord, value(tokens[2], n)?));
    }
    if coo.entries.len() != sizes[2] {
        return Err(ParseError::Count {
            expected: sizes[2],
            found: coo.entries.len(),
        });
    }
    Ok(coo)
}

fn check_bounds(coord: &[usize], dims: &[usize], line: usize) -> Result<(), ParseError> {
    for (dim, (&c, &size)) in coord.iter().zip(dims).enumerate() {
        if c >= size {
            return Err(ParseError::OutOfBounds {
                line,
                coord: c + 1,
                dim,
                size,
            });
        }
    }
    Ok(())
}

fn parse_tns(text: &str) -> Result<CooTensor, ParseError> {
    let mut declared: Option<Vec<usize>> = None;
    let mut raw: Vec<(usize, Vec<usize>, f64)> = Vec::new();
    let mut order: Option<usize> = None;
    for (n, line) in text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("dims:") {
                let dims = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| ParseError::Header {
                        line: n,
                        msg: format!("bad dims line '{line}'"),
                    })?;
                if dims.is_empty() {
                    return Err(ParseError::Header {
                        line: n,
                        msg: "dims line lists no sizes".into(),
                    });
                }
                declared = Some(dims);
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let k = *order.get_or_insert_with(|| {
            declared
                .as_ref()
                .map_or(tokens.len().saturating_sub(1), Vec::len)
        });
        if tokens.len() != k + 1 || k == 0 {
            return Err(ParseError::Fields {
                line: n,
                expected: k + 1,
                found: tokens.len(),
            });
        }
        let coord = tokens[..k]
            .iter()
            .map(|t| coordinate(t, n))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(dims) = &declared {
            check_bounds(&coord, dims, n)?;
        }
        raw.push((n, coord, value(tokens[k], n)?));
    }
    let dims = match declared {
        Some(d) => d,
        None => {
            let k = order.ok_or(ParseError::Empty)?;
            let mut dims = vec![0; k];
            for (_, coord, _) in &raw {
                for (d, &c) in dims.iter_mut().zip(coord) {
                    *d = (*d).max(c + 1);
                }
            }
            dims
        }
    };
    let mut coo = CooTensor::new(dims);
    coo.entries = raw.into_iter().map(|(_, c, v)| (c, v)).collect();
    Ok(coo)
}

/// Writes a matrix as MatrixMarket text (1-based).
pub fn write_matrix_market(coo: &CooTensor) -> String {
    assert_eq!(coo.order(), 2, "MatrixMarket holds matrices only");
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", coo.dims[0], coo.dims[1], coo.nnz());
    for (c, v) in &coo.entries {
        let _ = writeln!(out, "{} {} {:?}", c[0] + 1, c[1] + 1, v);
    }
    out
}

/// Writes a tensor as FROSTT text with an explicit dims comment (1-based).
pub fn write_frostt(coo: &CooTensor) -> String {
    let mut out = String::from("# dims:");
    for d in &coo.dims {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    for (c, v) in &coo.entries {
        for x in c {
            let _ = write!(out, "{} ", x + 1);
        }
        let _ = writeln!(out, "{v:?}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "%%MatrixMarket matrix coordinate real general\n";

    #[test]
    fn matrix_market_is_one_based() {
        let coo = parse_coo(
            &format!("{HEADER}2 2 1\n1 1 3.0\n"),
            CooFormat::MatrixMarket,
        )
        .unwrap();
        assert_eq!(coo.dims, vec![2, 2]);
        assert_eq!(coo.entries, vec![(vec![0, 0], 3.0)]);
    }

    #[test]
    fn empty_matrix() {
        let coo = parse_coo(
            &format!("{HEADER}% comment\n3 4 0\n"),
            CooFormat::MatrixMarket,
        )
        .unwrap();
        assert_eq!(coo.dims, vec![3, 4]);
        assert!(coo.entries.is_empty());
    }

    #[test]
    fn duplicates_summed_against_raw_lines() {
        let lines = [(2, 3, 1.0), (5, 5, 4.0), (2, 3, 2.0), (10, 1, -1.0)];
        let mut text = format!("{HEADER}10 10 {}\n", lines.len());
        for (i, j, v) in lines {
            text += &format!("{i} {j} {v}\n");
        }
        let coo = parse_coo(&text, CooFormat::MatrixMarket).unwrap();
        // independent oracle: fold raw lines into a sorted map
        let mut expected = std::collections::BTreeMap::new();
        for (i, j, v) in lines {
            *expected.entry(vec![i - 1, j - 1]).or_insert(0.0) += v;
        }
        let expected: Vec<_> = expected.into_iter().collect();
        assert_eq!(coo.entries, expected);
        assert!(coo.entries.contains(&(vec![1, 2], 3.0)));
    }

    #[test]
    fn distinct_errors_carry_line_numbers() {
        let bad_header = parse_coo(
            "%%MatrixMarket matrix array real general\n",
            CooFormat::MatrixMarket,
        );
        assert!(matches!(
            bad_header,
            Err(ParseError::Header { line: 1, .. })
        ));
        let oob = parse_coo(
            &format!("{HEADER}2 2 1\n3 1 1.0\n"),
            CooFormat::MatrixMarket,
        );
        assert!(matches!(oob, Err(ParseError::OutOfBounds { line: 3, .. })));
        let nan = parse_coo(
            &format!("{HEADER}%c\n2 2 1\n1 1 abc\n"),
            CooFormat::MatrixMarket,
        );
        assert!(matches!(nan, Err(ParseError::Value { line: 4, .. })));
        let zero = parse_coo(&format!("{HEADER}2 2 1\n0 1 1\n"), CooFormat::MatrixMarket);
        assert!(matches!(zero, Err(ParseError::Coordinate { line: 3, .. })));
    }

    #[test]
    fn frostt_infers_dims_from_maxima() {
        let coo = parse_coo("# a tensor\n1 2 3 1.5\n2 1 1 2.5\n", CooFormat::Frostt).unwrap();
        assert_eq!(coo.dims, vec![2, 2, 3]);
        assert_eq!(coo.entries[0], (vec![0, 1, 2], 1.5));
    }

    #[test]
    fn frostt_dims_comment_overrides() {
        let coo = parse_coo("# dims: 4 5\n1 1 1.0\n", CooFormat::Frostt).unwrap();
        assert_eq!(coo.dims, vec![4, 5]);
        let oob = parse_coo("# dims: 4 5\n5 1 1.0\n", CooFormat::Frostt);
        assert!(matches!(oob, Err(ParseError::OutOfBounds { line: 2, .. })));
        let empty = parse_coo("# dims: 3\n", CooFormat::Frostt).unwrap();
        assert_eq!(empty.dims, vec![3]);
    }

    #[test]
    fn writers_round_trip() {
        let mut coo = CooTensor::new(vec![3, 4, 2]);
        coo.entries = vec![(vec![0, 3, 1], 0.25), (vec![2, 0, 0], -7.0)];
        let back = parse_coo(&write_frostt(&coo), CooFormat::Frostt).unwrap();
        assert_eq!(back, coo);
        let mut m = CooTensor::new(vec![3, 4]);
        m.entries = vec![(vec![0, 3], 0.1), (vec![2, 2], 1e-300)];
        let back = parse_coo(&write_matrix_market(&m), CooFormat::MatrixMarket).unwrap();
        assert_eq!(back, m);
    }
}
