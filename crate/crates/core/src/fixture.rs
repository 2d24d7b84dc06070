//! Plain-text instance files.
//!
//! ```text
//! # comments and blank lines are ignored
//! n 2
//! d_x 1
//! d_y 1
//! weights 0.5 0.5
//! client 0
//! a 2
//! b 1
//! c 0
//! d 1
//! y_ref 1
//! e 1
//! x_ref 2
//! client 1
//! ...
//! ```
//!
//! Matrices are written row-major on one line. Values are printed with 17
//! significant digits so a write/read round trip is exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{BilevelInstance, ClientData};

const CLIENT_FIELDS: [&str; 7] = ["a", "b", "c", "d", "y_ref", "e", "x_ref"];

fn push_values<'a>(out: &mut String, key: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(key);
    for v in values {
        write!(out, " {v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

fn push_matrix(out: &mut String, key: &str, m: &DMatrix<f64>) {
    push_values(out, key, m.transpose().iter());
}

/// Text form of an instance.
pub fn instance_to_string(instance: &BilevelInstance) -> String {
    let mut out = String::new();
    writeln!(out, "n {}", instance.n()).unwrap();
    writeln!(out, "d_x {}", instance.d_x()).unwrap();
    writeln!(out, "d_y {}", instance.d_y()).unwrap();
    push_values(&mut out, "weights", instance.weights().iter());
    for (i, cl) in instance.clients().iter().enumerate() {
        writeln!(out, "client {i}").unwrap();
        push_matrix(&mut out, "a", &cl.a);
        push_matrix(&mut out, "b", &cl.b);
        push_values(&mut out, "c", cl.c.iter());
        push_matrix(&mut out, "d", &cl.d);
        push_values(&mut out, "y_ref", cl.y_ref.iter());
        push_matrix(&mut out, "e", &cl.e);
        push_values(&mut out, "x_ref", cl.x_ref.iter());
    }
    out
}

pub fn write_instance(path: &Path, instance: &BilevelInstance) -> Result<()> {
    std::fs::write(path, instance_to_string(instance)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_instance(path: &Path) -> Result<BilevelInstance> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instance(&text, path)
}

struct Lines<'a> {
    path: PathBuf,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            reason: reason.into(),
        }
    }

    /// Next non-empty line split into its key and value tokens.
    fn next_entry(&mut self, expected: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((line, text)) => {
                self.last_line = line;
                let mut tokens = text.split_whitespace();
                let key = tokens.next().unwrap_or_default();
                if key != expected {
                    return Err(self.err(line, format!("expected `{expected}`, found `{key}`")));
                }
                Ok((line, tokens.collect()))
            }
            None => Err(self.err(
                self.last_line + 1,
                format!("unexpected end of file, expected `{expected}`"),
            )),
        }
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (line, tokens) = self.next_entry(key)?;
        match tokens.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| self.err(line, format!("`{key}` must be a nonnegative integer, got `{v}`"))),
            _ => Err(self.err(line, format!("`{key}` takes exactly one value"))),
        }
    }

    fn floats(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (line, tokens) = self.next_entry(key)?;
        if tokens.len() != len {
            return Err(self.err(
                line,
                format!("`{key}` needs {len} values, got {}", tokens.len()),
            ));
        }
        tokens
            .iter()
            .map(|t| {
                let v: f64 = t
                    .parse()
                    .map_err(|_| self.err(line, format!("`{key}`: not a number: `{t}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.err(line, format!("`{key}`: non-finite value `{t}`")))
                }
            })
            .collect()
    }

    fn matrix(&mut self, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(rows, cols, &self.floats(key, rows * cols)?))
    }

    fn vector(&mut self, key: &str, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.floats(key, len)?))
    }
}

/// Parses the text form; `path` is only used in error messages.
pub fn parse_instance(text: &str, path: &Path) -> Result<BilevelInstance> {
    let iter: Box<dyn Iterator<Item = (usize, &str)>> = Box::new(
        text.lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
    );
    let mut lines = Lines {
        path: path.to_path_buf(),
        inner: iter.peekable(),
        last_line: 0,
    };
    let n = lines.count("n")?;
    let d_x = lines.count("d_x")?;
    let d_y = lines.count("d_y")?;
    if n == 0 || d_x == 0 || d_y == 0 {
        return Err(lines.err(lines.last_line, "n, d_x and d_y must be >= 1"));
    }
    let weights = lines.floats("weights", n)?;
    let mut clients = Vec::with_capacity(n);
    for i in 0..n {
        let (line, tokens) = lines.next_entry("client")?;
        if tokens != [i.to_string().as_str()] {
            return Err(lines.err(line, format!("expected `client {i}`")));
        }
        clients.push(ClientData {
            a: lines.matrix(CLIENT_FIELDS[0], d_y, d_y)?,
            b: lines.matrix(CLIENT_FIELDS[1], d_x, d_y)?,
            c: lines.vector(CLIENT_FIELDS[2], d_y)?,
            d: lines.matrix(CLIENT_FIELDS[3], d_y, d_y)?,
            y_ref: lines.vector(CLIENT_FIELDS[4], d_y)?,
            e: lines.matrix(CLIENT_FIELDS[5], d_x, d_x)?,
            x_ref: lines.vector(CLIENT_FIELDS[6], d_x)?,
        });
    }
    if let Some(&(line, text)) = lines.inner.peek() {
        return Err(lines.err(line, format!("trailing content: `{text}`")));
    }
    BilevelInstance::new(weights, clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_synthetic_instance, InstanceSpec, WeightProfile};

    fn p() -> &'static Path {
        Path::new("inst.txt")
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = InstanceSpec {
            n: 3,
            d_x: 2,
            d_y: 3,
            mu_g_target: 0.5,
            l1_target: 3.0,
            heterogeneity: 0.7,
            weight_profile: WeightProfile::Random,
        };
        let inst = make_synthetic_instance(&spec, 11).unwrap();
        let text = instance_to_string(&inst);
        assert_eq!(parse_instance(&text, p()).unwrap(), inst);
    }

    #[test]
    fn canonical_text() {
        let text = "# one client\nn 1\nd_x 1\nd_y 1\nweights 1\n\nclient 0\na 2\nb 1\nc 0\nd 1\ny_ref 1\ne 0\nx_ref 0\n";
        let inst = parse_instance(text, p()).unwrap();
        assert_eq!(inst, BilevelInstance::canonical_1d());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("n 1\nd_x 1\nd_y 1\nweights 1 2\n", 4, "needs 1 values"),
            ("n 1\nd_x one\n", 2, "nonnegative integer"),
            ("n 1\nd_x 1\nd_y 1\nweights 1\nclient 0\na nan\n", 6, "non-finite"),
            ("n 1\nd_x 1\nd_y 1\nweights 1\nclient 0\na 1\nb 1\n", 8, "end of file"),
            ("n 1\nd_y 1\n", 2, "expected `d_x`"),
        ];
        for (text, line_no, needle) in cases {
            match parse_instance(text, p()).unwrap_err() {
                Error::Parse { line, reason, .. } => {
                    assert_eq!(line, line_no, "{text:?}: {reason}");
                    assert!(reason.contains(needle), "{reason}");
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn semantic_errors_come_from_instance_validation() {
        let text = "n 1\nd_x 1\nd_y 1\nweights 1\nclient 0\na -1\nb 1\nc 0\nd 1\ny_ref 0\ne 1\nx_ref 0\n";
        assert!(matches!(
            parse_instance(text, p()).unwrap_err(),
            Error::Validation { .. }
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canon.txt");
        write_instance(&path, &BilevelInstance::canonical_1d()).unwrap();
        assert_eq!(read_instance(&path).unwrap(), BilevelInstance::canonical_1d());
        assert!(matches!(
            read_instance(&dir.path().join("missing")).unwrap_err(),
            Error::Io { .. }
        ));
    }
}
