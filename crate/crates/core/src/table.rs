//! Delimited text tables for datasets and feature sets.
//!
//! ```text
//! nearood-table/1,dim=3,classes=2,tag=synthetic[,key=value…]
//! 0,1.0000000000000000e0,-2.5000000000000000e-1,3.0000000000000000e0
//! -1,…
//! ```
//!
//! Each row is the label (`-1` for OOD) followed by `dim` values written with
//! 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const TABLE_MAGIC: &str = "nearood-table/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub class_count: usize,
    pub tag: String,
    /// Extra `key=value` header fields, in file order.
    pub meta: Vec<(String, String)>,
    pub labels: Vec<Option<usize>>,
    pub values: Matrix,
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.contains([',', '=', '\n', '\r']) {
        return Err(Error::ConfigInvalid(format!(
            "{what} {s:?} may not contain ',', '=' or newlines"
        )));
    }
    Ok(())
}

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn to_text(&self) -> Result<String> {
        check_token(&self.tag, "tag")?;
        let mut out = String::new();
        write!(
            out,
            "{TABLE_MAGIC},dim={},classes={},tag={}",
            self.values.cols(),
            self.class_count,
            self.tag
        )
        .expect("string write");
        for (k, v) in &self.meta {
            check_token(k, "header key")?;
            check_token(v, "header value")?;
            write!(out, ",{k}={v}").expect("string write");
        }
        out.push('\n');
        for (row, label) in self.values.row_iter().zip(&self.labels) {
            match label {
                Some(l) => write!(out, "{l}").expect("string write"),
                None => out.push_str("-1"),
            }
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let mut fields = header.split(',');
        if fields.next() != Some(TABLE_MAGIC) {
            return Err(perr(
                1,
                format!("expected header starting with {TABLE_MAGIC}"),
            ));
        }
        let mut dim = None;
        let mut class_count = None;
        let mut tag = None;
        let mut meta = Vec::new();
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field {f:?}")))?;
            match k {
                "dim" => {
                    dim = Some(
                        v.parse::<usize>()
                            .map_err(|e| perr(1, format!("dim: {e}")))?,
                    )
                }
                "classes" => {
                    class_count = Some(
                        v.parse::<usize>()
                            .map_err(|e| perr(1, format!("classes: {e}")))?,
                    )
                }
                "tag" => tag = Some(v.to_string()),
                _ => meta.push((k.to_string(), v.to_string())),
            }
        }
        let dim = dim.ok_or_else(|| perr(1, "missing dim".into()))?;
        let class_count = class_count.ok_or_else(|| perr(1, "missing classes".into()))?;

        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let label: i64 = cells
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| perr(lineno, format!("label: {e}")))?;
            labels.push(match label {
                -1 => None,
                l if l >= 0 && (l as usize) < class_count => Some(l as usize),
                l => return Err(perr(lineno, format!("label {l} outside 0..{class_count}"))),
            });
            let before = data.len();
            for c in cells {
                let v: f64 = c
                    .parse()
                    .map_err(|e| perr(lineno, format!("value {c:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(perr(lineno, "non-finite value".into()));
                }
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(perr(
                    lineno,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
        }
        let values = Matrix::new(labels.len(), dim, data)?;
        Ok(Table {
            class_count,
            tag: tag.unwrap_or_default(),
            meta,
            labels,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

impl crate::gaussian::FeatureSet {
    pub fn to_table(&self) -> Table {
        Table {
            class_count: self.class_count,
            tag: self.source_tag.clone(),
            meta: Vec::new(),
            labels: self.labels.clone(),
            values: self.features.clone(),
        }
    }

    pub fn from_table(t: Table) -> Result<Self> {
        Self::new(t.values, t.labels, t.class_count, t.tag)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(Table::load(path)?)
    }
}
