//! Stage prompt templates with `{{name}}` fill slots.

use std::path::Path;

use crate::error::{Error, Result};

pub const DESCRIBE: &str = include_str!("../templates/describe.txt");
pub const REASON: &str = include_str!("../templates/reason.txt");
pub const ANCHOR: &str = include_str!("../templates/anchor.txt");

/// Phrases the rendered reasoning prompt must carry.
pub const REFLECTION_PHRASES: [&str; 2] = ["reflect on each one", "check it for errors"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub describe: String,
    pub reason: String,
    pub anchor: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            describe: DESCRIBE.to_string(),
            reason: REASON.to_string(),
            anchor: ANCHOR.to_string(),
        }
    }
}

impl Templates {
    /// Loads `describe.txt`, `reason.txt` and `anchor.txt` from `dir`;
    /// missing files keep the built-in text.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Template(format!("{} is not a directory", dir.display())));
        }
        let load = |name: &str, fallback: &str| -> Result<String> {
            let p = dir.join(name);
            if p.exists() {
                Ok(std::fs::read_to_string(p)?)
            } else {
                Ok(fallback.to_string())
            }
        };
        let t = Templates {
            describe: load("describe.txt", DESCRIBE)?,
            reason: load("reason.txt", REASON)?,
            anchor: load("anchor.txt", ANCHOR)?,
        };
        t.check()?;
        Ok(t)
    }

    /// Every template must expose the slots its stage fills.
    pub fn check(&self) -> Result<()> {
        let need: [(&str, &str, &[&str]); 3] = [
            ("describe", &self.describe, &["image_doc"]),
            ("reason", &self.reason, &["description", "question"]),
            ("anchor", &self.anchor, &["chain"]),
        ];
        for (stage, text, slots) in need {
            for slot in slots {
                if !text.contains(&format!("{{{{{slot}}}}}")) {
                    return Err(Error::Template(format!("{stage} template lacks {{{{{slot}}}}}")));
                }
            }
        }
        Ok(())
    }
}

/// Substitutes each `{{key}}` in one pass; values are inserted verbatim and
/// never re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::Template("unterminated {{".into()))?;
        let key = after[..close].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Template(format!("no value for slot {key:?}")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_well_formed() {
        Templates::default().check().unwrap();
        for phrase in REFLECTION_PHRASES {
            assert!(REASON.contains(phrase), "{phrase}");
        }
    }

    #[test]
    fn render_is_single_pass() {
        let s = render("a {{x}} b {{ y }}", &[("x", "{{y}}"), ("y", "2")]).unwrap();
        assert_eq!(s, "a {{y}} b 2");
        assert!(render("{{z}}", &[]).is_err());
        assert!(render("{{z", &[("z", "1")]).is_err());
    }
}
