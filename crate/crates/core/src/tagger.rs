//! Keyword tagger: a tag applies when any of its keywords occurs in the
//! query, case-insensitively, as a substring.
//!
//! Rules files are JSON objects mapping tag to keyword list:
//! `{"math": ["integral", "derivative"], "code": ["rust"]}`.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("cannot read rules {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed rules: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTagger {
    rules: BTreeMap<String, Vec<String>>,
}

impl KeywordTagger {
    pub fn new(rules: BTreeMap<String, Vec<String>>) -> Result<Self, TaggerError> {
        let mut cleaned = BTreeMap::new();
        for (tag, keywords) in rules {
            if tag.trim().is_empty() {
                return Err(TaggerError::Malformed("empty tag name".into()));
            }
            let kws: Vec<String> = keywords
                .iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if kws.is_empty() {
                return Err(TaggerError::Malformed(format!("tag \"{tag}\" has no keywords")));
            }
            cleaned.insert(tag, kws);
        }
        Ok(Self { rules: cleaned })
    }

    pub fn from_json_str(text: &str) -> Result<Self, TaggerError> {
        let rules: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| TaggerError::Malformed(e.to_string()))?;
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaggerError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    /// Every matching tag, sorted.
    pub fn tags_for(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        self.rules
            .iter()
            .filter(|(_, kws)| kws.iter().any(|k| lower.contains(k.as_str())))
            .map(|(t, _)| t.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_matching() {
        let t = KeywordTagger::from_json_str(
            r#"{"math": ["integral"], "code": ["Python", "compile"]}"#,
        )
        .unwrap();
        assert_eq!(t.tags_for("compute the integral"), ["math"]);
        assert_eq!(t.tags_for("Compile a PYTHON integral solver"), ["code", "math"]);
        assert!(t.tags_for("write a haiku").is_empty());
    }

    #[test]
    fn malformed_rules() {
        assert!(KeywordTagger::from_json_str("[1,2]").is_err());
        assert!(KeywordTagger::from_json_str(r#"{"math": []}"#).is_err());
        assert!(KeywordTagger::from_json_str(r#"{"math": "integral"}"#).is_err());
    }
}
