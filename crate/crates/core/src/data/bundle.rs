//! Line-oriented dataset bundle.
//!
//! ```text
//! # simcgnn-bundle 1
//! [stats]
//! clicks=<int>
//! train_sessions=<int>
//! test_sessions=<int>
//! items=<int>
//! avg_length=<float>
//! [report]
//! dropped_test_sessions=<int>
//! [vocabulary]
//! <internal index> <raw id>        one line per item, index order
//! [train]
//! <i1> <i2> ... <label>            one session per line, label last
//! [test]
//! <i1> <i2> ... <label>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex, Dataset, Session, Vocabulary};
use crate::error::{Error, Result};

const HEADER: &str = "# simcgnn-bundle 1";

/// Dataset summary in the layout of the usual dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clicks: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub items: usize,
    pub avg_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dataset: Dataset,
    pub stats: DatasetStats,
    pub dropped_test_sessions: usize,
}

impl Bundle {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.stats;
        out.push_str(HEADER);
        out.push('\n');
        out.push_str("[stats]\n");
        out.push_str(&format!("clicks={}\n", s.clicks));
        out.push_str(&format!("train_sessions={}\n", s.train_sessions));
        out.push_str(&format!("test_sessions={}\n", s.test_sessions));
        out.push_str(&format!("items={}\n", s.items));
        out.push_str(&format!("avg_length={}\n", s.avg_length));
        out.push_str("[report]\n");
        out.push_str(&format!("dropped_test_sessions={}\n", self.dropped_test_sessions));
        out.push_str("[vocabulary]\n");
        for (i, raw) in self.dataset.vocabulary.raw_ids().iter().enumerate() {
            out.push_str(&format!("{} {raw}\n", i + 1));
        }
        for (name, sessions) in [("train", &self.dataset.train), ("test", &self.dataset.test)] {
            out.push_str(&format!("[{name}]\n"));
            for sess in sessions {
                for item in &sess.items {
                    out.push_str(&item.to_string());
                    out.push(' ');
                }
                out.push_str(&sess.label.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Bundle> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut section = String::new();
        let mut kv = std::collections::HashMap::new();
        let mut raw_ids = Vec::new();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
                continue;
            }
            match section.as_str() {
                "stats" | "report" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
                    kv.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
                }
                "vocabulary" => {
                    let mut parts = line.split_whitespace();
                    let idx: usize = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| err("bad vocabulary index".into()))?;
                    let raw: i64 = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| err("bad raw id".into()))?;
                    if idx != raw_ids.len() + 1 {
                        return Err(err(format!("vocabulary index {idx} out of order")));
                    }
                    raw_ids.push(raw);
                }
                "train" | "test" => {
                    let mut ids: Vec<usize> = line
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| err(format!("bad item index {t:?}"))))
                        .collect::<Result<_>>()?;
                    let label = ids.pop().ok_or_else(|| err("empty session".into()))?;
                    let session = Session::new(ids, label).map_err(|e| err(e.to_string()))?;
                    if section == "train" {
                        train.push(session);
                    } else {
                        test.push(session);
                    }
                }
                other => return Err(err(format!("unknown section {other:?}"))),
            }
        }
        let get = |key: &str| -> Result<&(usize, String)> {
            kv.get(key).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing {key}"),
            })
        };
        let int = |key: &str| -> Result<usize> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("{key} is not an integer"),
            })
        };
        let (avg_line, avg) = get("avg_length")?;
        let stats = DatasetStats {
            clicks: int("clicks")?,
            train_sessions: int("train_sessions")?,
            test_sessions: int("test_sessions")?,
            items: int("items")?,
            avg_length: avg.parse().map_err(|_| Error::Parse {
                line: *avg_line,
                message: "avg_length is not a number".into(),
            })?,
        };
        let dataset = Dataset {
            train,
            test,
            vocabulary: Vocabulary::from_raw_ids(raw_ids),
        };
        dataset.validate()?;
        Ok(Bundle {
            dataset,
            stats,
            dropped_test_sessions: int("dropped_test_sessions")?,
        })
    }

    /// Hex SHA-256 of the serialized bundle.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn write_bundle(path: &Path, bundle: &Bundle) -> Result<()> {
    std::fs::write(path, bundle.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: &Path) -> Result<Bundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Bundle::from_text(&text)
}
