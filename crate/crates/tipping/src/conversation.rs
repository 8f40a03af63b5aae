//! Conversation shorthand: `A,C+,C+,A` resolves labels against a basin set,
//! and `[x,y,...]` literals are inline vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tipping_core::{BasinSet, Conversation, Embedding, GeometryError, Label};

/// Label given to inline vectors.
pub const INLINE_LABEL: &str = "V";

#[derive(Debug, Error)]
pub enum ConversationError {
    #[error("empty conversation")]
    Empty,
    #[error("unbalanced brackets in {0:?}")]
    Brackets(String),
    #[error("bad number {value:?} in vector literal {literal:?}")]
    Number { literal: String, value: String },
    #[error("entry {index} ({entry}): {source}")]
    Entry {
        index: usize,
        entry: String,
        source: GeometryError,
    },
}

/// One conversation entry as written in a spec file or on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Label(String),
    Vector(Vec<f64>),
}

impl std::fmt::Display for EntrySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntrySpec::Label(l) => f.write_str(l),
            EntrySpec::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

/// Splits shorthand on top-level commas.
pub fn parse_shorthand(text: &str) -> Result<Vec<EntrySpec>, ConversationError> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '[' => {
                depth += 1;
                current.push(ch);
            }
            ']' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| ConversationError::Brackets(text.to_string()))?;
                current.push(ch);
            }
            ',' if depth == 0 => items.push(std::mem::take(&mut current)),
            _ => current.push(ch),
        }
    }
    if depth != 0 {
        return Err(ConversationError::Brackets(text.to_string()));
    }
    items.push(current);

    let mut out = Vec::new();
    for item in items {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        if let Some(inner) = item.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let values = inner
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| ConversationError::Number {
                        literal: item.to_string(),
                        value: v.trim().to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(EntrySpec::Vector(values));
        } else {
            out.push(EntrySpec::Label(item.to_string()));
        }
    }
    if out.is_empty() {
        return Err(ConversationError::Empty);
    }
    Ok(out)
}

/// Resolves entries against `basins`.
pub fn build_conversation(entries: &[EntrySpec], basins: &BasinSet) -> Result<Conversation, ConversationError> {
    if entries.is_empty() {
        return Err(ConversationError::Empty);
    }
    let mut conv = Conversation::new();
    for (index, entry) in entries.iter().enumerate() {
        let wrap = |source| ConversationError::Entry {
            index,
            entry: entry.to_string(),
            source,
        };
        match entry {
            EntrySpec::Label(l) => {
                let label = Label::new(l).map_err(wrap)?;
                let v = basins.centroid(&label).map_err(wrap)?.clone();
                conv.push(label, v);
            }
            EntrySpec::Vector(v) => {
                let e = Embedding::new(v.clone()).map_err(wrap)?;
                if e.dim() != basins.dimension {
                    return Err(wrap(GeometryError::DimensionMismatch {
                        left: basins.dimension,
                        right: e.dim(),
                    }));
                }
                conv.push(Label::new(INLINE_LABEL).expect("valid label"), e);
            }
        }
    }
    Ok(conv)
}

pub fn parse_conversation(text: &str, basins: &BasinSet) -> Result<Conversation, ConversationError> {
    build_conversation(&parse_shorthand(text)?, basins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basins() -> BasinSet {
        BasinSet::from_centroids([
            ("A", Embedding::from_array([0.4, -0.3])),
            ("B", Embedding::from_array([0.8, 0.0])),
            ("D", Embedding::from_array([0.9, 0.5])),
            ("C+", Embedding::from_array([0.2, 0.2])),
        ])
        .unwrap()
    }

    #[test]
    fn labels_and_literals() {
        let entries = parse_shorthand("A, C+,[0.1, -2e-1],A").unwrap();
        assert_eq!(
            entries,
            vec![
                EntrySpec::Label("A".into()),
                EntrySpec::Label("C+".into()),
                EntrySpec::Vector(vec![0.1, -0.2]),
                EntrySpec::Label("A".into()),
            ]
        );
        let conv = build_conversation(&entries, &basins()).unwrap();
        assert_eq!(conv.len(), 4);
        assert_eq!(conv.entries[2].label.as_str(), INLINE_LABEL);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_shorthand(""), Err(ConversationError::Empty)));
        assert!(matches!(parse_shorthand("[1,2"), Err(ConversationError::Brackets(_))));
        assert!(matches!(
            parse_shorthand("[1,x]"),
            Err(ConversationError::Number { .. })
        ));
        let err = parse_conversation("A,Q", &basins()).unwrap_err();
        assert!(err.to_string().contains("entry 1"), "{err}");
        assert!(parse_conversation("[1,2,3]", &basins()).is_err());
    }

    #[test]
    fn spec_entries_deserialize() {
        let e: Vec<EntrySpec> = serde_json::from_str(r#"["A", [0.5, 0.5]]"#).unwrap();
        assert_eq!(e[1], EntrySpec::Vector(vec![0.5, 0.5]));
    }
}
