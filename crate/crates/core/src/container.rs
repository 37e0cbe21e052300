//! Binary container shared by datasets and checkpoints.
//!
//! Layout: the magic line `IVGN1`, one UTF-8 header line
//! `<kind> key=value ... matrices=name:RxC,name:RxC`, then every declared
//! matrix as row-major little-endian `f64` values in header order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Scalar};

pub const MAGIC: &str = "IVGN1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub matrices: Vec<(String, Matrix)>,
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=' || c == ':') {
        return Err(Error::Validation(format!("{what} {s:?} is not a valid header token")));
    }
    Ok(())
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, name: &str, m: Matrix) {
        self.matrices.push((name.to_string(), m));
    }

    pub fn matrix(&self, name: &str) -> Result<&Matrix> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Parse(format!("{} container has no matrix {name:?}", self.kind)))
    }

    pub fn has_matrix(&self, name: &str) -> bool {
        self.matrices.iter().any(|(n, _)| n == name)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("{} header is missing key {key:?}", self.kind)))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::Parse(format!("header key {key:?}: {v:?} is not a count")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_token("kind", &self.kind)?;
        let mut header = self.kind.clone();
        for (k, v) in &self.meta {
            check_token("key", k)?;
            if k == "matrices" || v.is_empty() || v.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("header entry {k}={v:?} is not encodable")));
            }
            header.push_str(&format!(" {k}={v}"));
        }
        let decl: Vec<String> = self
            .matrices
            .iter()
            .map(|(n, m)| {
                check_token("matrix name", n)?;
                Ok(format!("{n}:{}x{}", m.rows(), m.cols()))
            })
            .collect::<Result<_>>()?;
        header.push_str(&format!(" matrices={}", decl.join(",")));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for (_, m) in &self.matrices {
            for &v in m.as_slice() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic_end = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("missing magic line".into()))?;
        if &bytes[..magic_end] != MAGIC.as_bytes() {
            return Err(Error::Parse(format!("bad magic: expected {MAGIC:?}")));
        }
        let rest = &bytes[magic_end + 1..];
        let header_end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("malformed header: no terminating newline".into()))?;
        let header = std::str::from_utf8(&rest[..header_end])
            .map_err(|_| Error::Parse("malformed header: not UTF-8".into()))?;
        let payload = &rest[header_end + 1..];

        let mut tokens = header.split_whitespace();
        let kind = tokens
            .next()
            .ok_or_else(|| Error::Parse("malformed header: empty".into()))?
            .to_string();
        let mut meta = BTreeMap::new();
        let mut decl = None;
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header token {tok:?}")))?;
            if k == "matrices" {
                decl = Some(v.to_string());
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let decl = decl.ok_or_else(|| Error::Parse("malformed header: no matrices= declaration".into()))?;

        let mut shapes = Vec::new();
        for entry in decl.split(',').filter(|e| !e.is_empty()) {
            let (name, dims) = entry
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("malformed matrix declaration {entry:?}")))?;
            let (r, c) = dims
                .split_once('x')
                .ok_or_else(|| Error::Parse(format!("malformed matrix shape {dims:?}")))?;
            let r: usize = r.parse().map_err(|_| Error::Parse(format!("bad row count {r:?}")))?;
            let c: usize = c.parse().map_err(|_| Error::Parse(format!("bad column count {c:?}")))?;
            shapes.push((name.to_string(), r, c));
        }
        let expected: usize = shapes.iter().map(|&(_, r, c)| r * c * f64::BYTES).sum();
        if payload.len() != expected {
            return Err(Error::Parse(format!(
                "payload size mismatch: header declares {expected} bytes, found {}",
                payload.len()
            )));
        }
        let mut off = 0;
        let mut matrices = Vec::with_capacity(shapes.len());
        for (name, r, c) in shapes {
            let n = r * c;
            let data = (0..n)
                .map(|k| f64::read_le(&payload[off + k * 8..off + k * 8 + 8]))
                .collect();
            off += n * 8;
            matrices.push((name, Matrix::from_vec(r, c, data)?));
        }
        Ok(Self { kind, meta, matrices })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn labels_to_matrix(labels: &[usize]) -> Matrix {
    Matrix::from_fn(labels.len(), 1, |i, _| labels[i] as f64)
}

pub(crate) fn matrix_to_labels(m: &Matrix, what: &str) -> Result<Vec<usize>> {
    if m.cols() != 1 && m.rows() > 0 {
        return Err(Error::Parse(format!("{what} must be a single column")));
    }
    m.as_slice()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Parse(format!("{what} holds non-integer label {v}")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = Container::new("test").with_meta("seed", 7);
        c.push("a", Matrix::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        c.push("empty", Matrix::zeros(0, 3));
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.matrix("a").unwrap().as_slice()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let mut c = Container::new("test");
        c.push("a", Matrix::zeros(3, 3));
        let mut bytes = c.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 5);
        let err = Container::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("72 bytes"), "{err}");
        assert!(err.contains("found 67"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Container::from_bytes(b"NOPE\nx matrices=\n").is_err());
    }
}

pub(crate) fn push_mlp(c: &mut Container, prefix: &str, p: &crate::numkit::Mlp2Params) {
    let names = ["w1", "b1", "w2", "b2"];
    for (n, m) in names.iter().zip(p.tensors()) {
        c.push(&format!("{prefix}.{n}"), m.clone());
    }
    c.meta.insert(format!("{prefix}.slope"), format!("{:e}", p.slope()));
}

pub(crate) fn read_mlp(c: &Container, prefix: &str) -> Result<crate::numkit::Mlp2Params> {
    let get = |n: &str| c.matrix(&format!("{prefix}.{n}")).cloned();
    let slope: f64 = c
        .meta(&format!("{prefix}.slope"))?
        .parse()
        .map_err(|_| Error::Parse(format!("{prefix}.slope is not a number")))?;
    crate::numkit::Mlp2Params::from_parts(get("w1")?, get("b1")?, get("w2")?, get("b2")?, slope)
}
