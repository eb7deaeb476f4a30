//! Visual-anchor detection and rule-based insertion.

use regex::{Regex, RegexBuilder};

use crate::error::{Error, Result};

/// Default anchor phrases: two exemplars plus close paraphrases.
pub const DEFAULT_LEXICON: [&str; 8] = [
    "look back at",
    "check the image again",
    "looking back at",
    "look at the image again",
    "check the figure again",
    "re-examine the image",
    "revisit the image",
    "refer back to the image",
];

/// Phrases the rule inserter cycles through; each is caught by the default lexicon.
pub const INSERTED: [&str; 2] = ["Let me check the image again.", "Look back at the image."];

#[derive(Debug, Clone)]
pub struct Lexicon {
    phrases: Vec<String>,
    re: Regex,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::new(DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect()).expect("default lexicon")
    }
}

impl Lexicon {
    pub fn new(mut phrases: Vec<String>) -> Result<Self> {
        phrases.retain(|p| !p.trim().is_empty());
        if phrases.is_empty() {
            return Err(Error::InvalidConfig("anchor lexicon is empty".into()));
        }
        // longest first so alternation prefers the longest phrase at a position
        let mut sorted = phrases.clone();
        sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let pattern = sorted.iter().map(|p| regex::escape(p)).collect::<Vec<_>>().join("|");
        let re = RegexBuilder::new(&pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Lexicon { phrases, re })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// Non-overlapping, case-insensitive matches scanned left to right.
    pub fn count(&self, text: &str) -> usize {
        self.re.find_iter(text).count()
    }
}

/// [`Lexicon::count`] with the default lexicon.
pub fn count_anchors(text: &str) -> usize {
    thread_local! {
        static DEFAULT: Lexicon = Lexicon::default();
    }
    DEFAULT.with(|l| l.count(text))
}

/// Splits a chain into steps: lines starting with `Step N:` if any exist,
/// otherwise every non-empty line.
fn step_lines(lines: &[&str]) -> Vec<usize> {
    let labelled: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| step_label_len(l).is_some())
        .map(|(i, _)| i)
        .collect();
    if !labelled.is_empty() {
        return labelled;
    }
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i)
        .collect()
}

/// Byte length of a leading `Step N:` label (after indentation).
fn step_label_len(line: &str) -> Option<usize> {
    let trimmed = line.trim_start();
    let indent = line.len() - trimmed.len();
    let rest = trimmed.strip_prefix("Step ")?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b':') {
        return None;
    }
    Some(indent + 5 + digits + 1)
}

/// Inserts an anchor sentence at the start of every `k`-th step (`k`, `2k`, ...).
pub fn insert_anchors(chain: &str, k: usize) -> Result<String> {
    if k == 0 {
        return Err(Error::InvalidConfig("anchor interval k must be >= 1".into()));
    }
    if chain.trim().is_empty() {
        return Err(Error::EmptyInput("reasoning chain"));
    }
    let lines: Vec<&str> = chain.lines().collect();
    let steps = step_lines(&lines);
    let mut out: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    for (n, &i) in steps.iter().enumerate().filter(|(n, _)| (n + 1) % k == 0) {
        let phrase = INSERTED[(n + 1) / k % INSERTED.len()];
        let line = lines[i];
        out[i] = match step_label_len(line) {
            Some(cut) => format!("{} {} {}", &line[..cut], phrase, line[cut..].trim_start()),
            None => format!("{} {}", phrase, line.trim_start()),
        };
    }
    let mut joined = out.join("\n");
    if chain.ends_with('\n') {
        joined.push('\n');
    }
    Ok(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_fixtures() {
        assert_eq!(count_anchors("look back at the triangle"), 1);
        assert_eq!(count_anchors(""), 0);
        assert_eq!(count_anchors("check the image again ... check the image again"), 2);
        assert_eq!(count_anchors("CHECK THE IMAGE AGAIN"), 1);
        assert_eq!(count_anchors("Looking back at it"), 1);
    }

    #[test]
    fn every_inserted_phrase_is_detected() {
        for p in INSERTED {
            assert_eq!(count_anchors(p), 1, "{p}");
        }
    }

    #[test]
    fn six_steps_every_third() {
        let chain: String = (1..=6).map(|i| format!("Step {i}: fact {i}.\n")).collect();
        let out = insert_anchors(&chain, 3).unwrap();
        assert_eq!(count_anchors(&out), 2);
        let lines: Vec<&str> = out.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            assert_eq!(count_anchors(line), usize::from(i == 2 || i == 5), "{line}");
            assert!(line.starts_with(&format!("Step {}:", i + 1)));
        }
        assert!(out.ends_with('\n'));
    }

    #[test]
    fn unlabelled_lines_count_as_steps() {
        let out = insert_anchors("a\n\nb\nc", 2).unwrap();
        assert_eq!(out, "a\n\nLook back at the image. b\nc");
    }

    #[test]
    fn existing_anchor_preserved() {
        let chain = "Step 1: check the image again for the label.";
        let out = insert_anchors(chain, 3).unwrap();
        assert_eq!(out, chain);
        assert_eq!(count_anchors(&out), 1);
        assert!(insert_anchors("", 3).is_err());
        assert!(insert_anchors("x", 0).is_err());
    }

    #[test]
    fn custom_lexicon() {
        let lex = Lexicon::new(vec!["see figure".into(), "see".into()]).unwrap();
        assert_eq!(lex.count("See figure 2, then see it"), 2);
        assert!(Lexicon::new(vec![" ".into()]).is_err());
    }
}
