//! Line-oriented text checkpoint.
//!
//! ```text
//! simcgnn-checkpoint 1
//! vocabulary <sha256 hex>
//! num_items <m>
//! config <toml-encoded ModelConfig on one line per key>
//! ...
//! tensor <name> <rows> <cols>
//! <rows*cols values, space separated>
//! ```
//!
//! Values are written in shortest round-trip exponent notation, so loading
//! reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "simcgnn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabulary: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        let _ = writeln!(out, "vocabulary {}", self.vocabulary);
        let _ = writeln!(out, "num_items {}", self.model.num_items());
        let cfg = toml::to_string(&self.model.config).expect("config serializes");
        for line in cfg.lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(out, "config {line}");
        }
        for (name, t) in self.model.params.iter() {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            let values: Vec<String> = t.data().iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (n, header) = lines.next().ok_or(Error::EmptyInput)?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(Error::Compatibility(format!("unsupported checkpoint version {v}"))),
            _ => return Err(parse_err(n, "not a checkpoint".into())),
        }

        let mut vocabulary = None;
        let mut num_items = None;
        let mut config = String::new();
        let mut params = ParameterStore::new();
        while let Some((n, line)) = lines.next() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "vocabulary" => vocabulary = Some(rest.trim().to_string()),
                "num_items" => {
                    num_items = Some(
                        rest.trim()
                            .parse::<usize>()
                            .map_err(|e| parse_err(n, format!("num_items: {e}")))?,
                    )
                }
                "config" => {
                    config.push_str(rest);
                    config.push('\n');
                }
                "tensor" => {
                    let fields: Vec<&str> = rest.split_whitespace().collect();
                    let [name, rows, cols] = fields[..] else {
                        return Err(parse_err(n, "expected `tensor <name> <rows> <cols>`".into()));
                    };
                    let dim = |s: &str| s.parse::<usize>().map_err(|e| parse_err(n, format!("{e}")));
                    let (rows, cols) = (dim(rows)?, dim(cols)?);
                    let (vn, values) = lines
                        .next()
                        .ok_or_else(|| parse_err(n, format!("tensor {name} has no values")))?;
                    let data = values
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(vn, format!("{e}")))?;
                    if data.len() != rows * cols {
                        return Err(parse_err(
                            vn,
                            format!("tensor {name}: expected {} values, found {}", rows * cols, data.len()),
                        ));
                    }
                    if params.id(name).is_some() {
                        return Err(parse_err(n, format!("duplicate tensor {name}")));
                    }
                    params.insert(name, Tensor::matrix(rows, cols, data)?);
                }
                "" => {}
                other => return Err(parse_err(n, format!("unknown record `{other}`"))),
            }
        }
        let vocabulary = vocabulary.ok_or_else(|| parse_err(0, "missing vocabulary line".into()))?;
        let num_items = num_items.ok_or_else(|| parse_err(0, "missing num_items line".into()))?;
        let config: ModelConfig =
            toml::from_str(&config).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        let model = Model::from_params(config, num_items, params)?;
        Ok(Checkpoint { model, vocabulary })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
