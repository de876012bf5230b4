//! Versioned prompt templates.
//!
//! A template file has a `[system]` section and a `[user]` section; the
//! user section carries `{name}` placeholders filled at render time.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SEGMENTATION: &str = include_str!("../prompts/segmentation.txt");
pub const DECOMPOSE: &str = include_str!("../prompts/decompose.txt");
pub const VERIFY: &str = include_str!("../prompts/verify.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template is missing its [system] or [user] section")]
    MissingSection,
    #[error("template lacks the placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
    /// Hex SHA-256 of the template source.
    pub hash: String,
}

impl PromptTemplate {
    /// Parses a template and checks that every name in `placeholders`
    /// appears in its user section.
    pub fn parse(source: &str, placeholders: &[&str]) -> Result<Self, PromptError> {
        let system_at = source.find("[system]").ok_or(PromptError::MissingSection)?;
        let user_at = source.find("[user]").ok_or(PromptError::MissingSection)?;
        if user_at < system_at {
            return Err(PromptError::MissingSection);
        }
        let system = source[system_at + "[system]".len()..user_at]
            .trim()
            .to_string();
        let user = source[user_at + "[user]".len()..].trim().to_string();
        for name in placeholders {
            if !user.contains(&format!("{{{name}}}")) {
                return Err(PromptError::MissingPlaceholder(name.to_string()));
            }
        }
        Ok(PromptTemplate {
            system,
            user,
            hash: sha256_hex(source.as_bytes()),
        })
    }

    pub fn load(path: &Path, placeholders: &[&str]) -> Result<Self, PromptError> {
        let source = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&source, placeholders)
    }

    pub fn segmentation() -> Self {
        Self::parse(SEGMENTATION, &["document"]).expect("bundled segmentation template")
    }

    pub fn decompose() -> Self {
        Self::parse(DECOMPOSE, &["text"]).expect("bundled decomposition template")
    }

    pub fn verify() -> Self {
        Self::parse(VERIFY, &["claim", "context"]).expect("bundled verification template")
    }

    /// Fills placeholders in one pass, so substituted values are never
    /// themselves scanned for placeholders.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.user.len());
        let mut rest = self.user.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let name = &after[..close];
                values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| (close, *v))
            });
            match replaced {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_parse() {
        assert!(PromptTemplate::segmentation().user.contains("{document}"));
        assert!(PromptTemplate::decompose().user.contains("{text}"));
        let verify = PromptTemplate::verify();
        assert!(verify.user.contains("SUPPORTED"));
        assert_eq!(verify.hash.len(), 64);
    }

    #[test]
    fn render_is_single_pass() {
        let t = PromptTemplate::parse("[system]s[user]A {x} B {y} {unknown}", &["x"]).unwrap();
        assert_eq!(t.render(&[("x", "{y}"), ("y", "2")]), "A {y} B 2 {unknown}");
    }

    #[test]
    fn missing_parts_rejected() {
        assert!(matches!(
            PromptTemplate::parse("[user]only", &[]),
            Err(PromptError::MissingSection)
        ));
        assert!(matches!(
            PromptTemplate::parse("[system]s[user]no slot", &["text"]),
            Err(PromptError::MissingPlaceholder(_))
        ));
    }
}
