use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the order column is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    /// Integer timestamps or ordinals.
    Integer,
    /// Text compared lexicographically, e.g. ISO-8601 timestamps.
    Lexical,
}

/// Column mapping for delimited session logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatDescriptor {
    pub delimiter: char,
    pub has_header: bool,
    pub session_col: usize,
    pub item_col: usize,
    /// `None` orders clicks by their position in the file.
    pub order_col: Option<usize>,
    pub order_kind: OrderKind,
}

impl Default for FormatDescriptor {
    /// `session,item,order` with integer order keys and no header.
    fn default() -> Self {
        FormatDescriptor {
            delimiter: ',',
            has_header: false,
            session_col: 0,
            item_col: 1,
            order_col: Some(2),
            order_kind: OrderKind::Integer,
        }
    }
}

impl FormatDescriptor {
    /// RecSys Challenge 2015 clicks: `session,timestamp,item,category`.
    pub fn yoochoose() -> Self {
        FormatDescriptor {
            delimiter: ',',
            has_header: false,
            session_col: 0,
            item_col: 2,
            order_col: Some(1),
            order_kind: OrderKind::Lexical,
        }
    }

    /// CIKM Cup 2016 views: `sessionId;userId;itemId;timeframe;eventdate`.
    pub fn diginetica() -> Self {
        FormatDescriptor {
            delimiter: ';',
            has_header: true,
            session_col: 0,
            item_col: 2,
            order_col: Some(3),
            order_kind: OrderKind::Integer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OrderKey {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub id: i64,
    pub items: Vec<i64>,
    /// Largest order key in the session; drives time-based splits.
    pub last_key: OrderKey,
}

/// Clicks grouped per session, each session sorted by order key. Sessions
/// appear in order of first occurrence in the input.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawSessionLog {
    pub sessions: Vec<RawSession>,
}

impl RawSessionLog {
    pub fn clicks(&self) -> usize {
        self.sessions.iter().map(|s| s.items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

pub fn load_sessions(path: &Path, format: &FormatDescriptor) -> Result<RawSessionLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text, format)
}

pub fn parse_sessions(text: &str, format: &FormatDescriptor) -> Result<RawSessionLog> {
    let mut groups: Vec<(i64, Vec<(OrderKey, i64)>)> = Vec::new();
    let mut slot: HashMap<i64, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if (format.has_header && i == 0) || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).map(str::trim).collect();
        let field = |col: usize| {
            fields.get(col).copied().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("missing column {col}"),
            })
        };
        let int = |col: usize, what: &str| -> Result<i64> {
            let raw = field(col)?;
            raw.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{what} {raw:?} is not an integer"),
            })
        };
        let session = int(format.session_col, "session id")?;
        let item = int(format.item_col, "item id")?;
        let key = match (format.order_col, format.order_kind) {
            (None, _) => OrderKey::Int(line_no as i64),
            (Some(c), OrderKind::Integer) => OrderKey::Int(int(c, "order key")?),
            (Some(c), OrderKind::Lexical) => OrderKey::Text(field(c)?.to_string()),
        };
        let idx = *slot.entry(session).or_insert_with(|| {
            groups.push((session, Vec::new()));
            groups.len() - 1
        });
        groups[idx].1.push((key, item));
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sessions = groups
        .into_iter()
        .map(|(id, mut clicks)| {
            // Stable: ties keep file order.
            clicks.sort_by(|a, b| a.0.cmp(&b.0));
            let last_key = clicks.last().expect("nonempty group").0.clone();
            RawSession {
                id,
                items: clicks.into_iter().map(|(_, item)| item).collect(),
                last_key,
            }
        })
        .collect();
    Ok(RawSessionLog { sessions })
}
