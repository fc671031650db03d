use std::path::Path;

use crate::error::{Error, Result, WeightsError};

const BLOCK_PLACEHOLDER: &str = "{b}";

/// Default table translating model parameter names to official Swin-Tiny
/// checkpoint names.
pub const SWIN_TINY_TABLE: &str = include_str!("../../data/swin_tiny_translation.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    model: String,
    source: String,
}

/// Name translation rules, one `model<TAB>source` pair per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationTable {
    rules: Vec<Rule>,
}

impl TranslationTable {
    pub fn swin_tiny() -> Self {
        Self::parse(SWIN_TINY_TABLE).expect("shipped translation table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let table_err = |message: String| WeightsError::Table { line: i + 1, message };
            let (model, source) = line
                .split_once('\t')
                .ok_or_else(|| table_err("expected `model<TAB>source`".into()))?;
            let holes = |s: &str| s.matches(BLOCK_PLACEHOLDER).count();
            if holes(model) > 1 || holes(model) != holes(source) {
                return Err(table_err(format!(
                    "`{BLOCK_PLACEHOLDER}` must appear at most once and on both sides"
                ))
                .into());
            }
            rules.push(Rule {
                model: model.trim().to_string(),
                source: source.trim().to_string(),
            });
        }
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Source tensor name for a model parameter, if any rule matches.
    pub fn translate(&self, param: &str) -> Option<String> {
        self.rules.iter().find_map(|rule| match rule.model.split_once(BLOCK_PLACEHOLDER) {
            None => (rule.model == param).then(|| rule.source.clone()),
            Some((prefix, suffix)) => {
                let middle = param.strip_prefix(prefix)?.strip_suffix(suffix)?;
                if middle.is_empty() || !middle.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                Some(rule.source.replacen(BLOCK_PLACEHOLDER, middle, 1))
            }
        })
    }
}
