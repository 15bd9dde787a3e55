//! Textual descriptions used to procure new samples.
//!
//! Pivotal captions are enhanced in three steps: the generic subject is
//! replaced with the class label, then coarse scene context (indoor/outdoor
//! and venue) is appended. Spurious associations become mitigation prompts
//! that pair the class with the offending object.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Weakspot;
use crate::data::{ClassVocabulary, DatasetBundle, Environment, Record, Scene};
use crate::review::Association;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("empty class label")]
    EmptyLabel,
    #[error("record {0:?} has no caption")]
    MissingCaption(String),
    #[error("class {0:?} is not in the vocabulary")]
    UnknownClass(String),
}

/// Subject tokens ordered longest first; the regex picks the leftmost match
/// and, at a given position, the first alternative that matches.
const SUBJECT_LEXICON: [&str; 8] = ["a person", "a woman", "someone", "people", "a man", "they", "she", "he"];

static SUBJECT: LazyLock<Regex> = LazyLock::new(|| {
    let alts: Vec<String> = SUBJECT_LEXICON.iter().map(|t| regex::escape(t)).collect();
    Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).unwrap()
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Weakspot,
    Mitigation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualDescription {
    pub text: String,
    pub purpose: Purpose,
    pub target_class: String,
    pub pivotal_id: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

pub fn humanize_label(label: &str) -> Result<String, PromptError> {
    if label.trim().is_empty() {
        return Err(PromptError::EmptyLabel);
    }
    Ok(label.replace('_', " ").to_lowercase())
}

/// Swaps the first generic subject in `caption` for "a {class_phrase}".
///
/// Captions that already name the class are returned unchanged; captions
/// with no subject token get the class prepended.
pub fn replace_subject(caption: &str, class_phrase: &str) -> String {
    let named = Regex::new(&format!(r"(?i)\ba {}\b", regex::escape(class_phrase))).unwrap();
    if named.is_match(caption) {
        return caption.to_string();
    }
    match SUBJECT.find(caption) {
        Some(m) => format!("{}a {}{}", &caption[..m.start()], class_phrase, &caption[m.end()..]),
        None => format!("a {class_phrase}, {caption}"),
    }
}

pub fn append_scene(text: &str, scene: Option<&Scene>) -> String {
    let mut out = text.to_string();
    let Some(scene) = scene else {
        return out;
    };
    match scene.environment {
        Environment::Indoor => out.push_str(", indoors"),
        Environment::Outdoor => out.push_str(", outdoors"),
        Environment::Unknown => {}
    }
    if let Some(venue) = scene.venue.as_deref().filter(|v| !v.trim().is_empty()) {
        out.push_str(", in a ");
        out.push_str(&venue.replace('_', " "));
    }
    out
}

pub fn describe_pivotal(record: &Record, vocabulary: &ClassVocabulary) -> Result<TextualDescription, PromptError> {
    let caption = record
        .caption
        .as_deref()
        .ok_or_else(|| PromptError::MissingCaption(record.id.clone()))?;
    if !vocabulary.contains(&record.true_class) {
        return Err(PromptError::UnknownClass(record.true_class.clone()));
    }
    let phrase = humanize_label(&record.true_class)?;
    let text = append_scene(&replace_subject(caption, &phrase), record.scene.as_ref());
    Ok(TextualDescription {
        text,
        purpose: Purpose::Weakspot,
        target_class: record.true_class.clone(),
        pivotal_id: Some(record.id.clone()),
        tags: Vec::new(),
    })
}

pub fn mitigation_prompts(spurious: &Association, attribute_variants: &[String]) -> Vec<TextualDescription> {
    let class = spurious.predicted_class.replace('_', " ").to_lowercase();
    let object = spurious.object_label.replace('_', " ");
    let tags = vec![format!("spurious:{}", spurious.object_label)];
    std::iter::once(format!("a {class} with a {object}"))
        .chain(
            attribute_variants
                .iter()
                .map(|v| format!("{} {class} with a {object}", v.trim())),
        )
        .map(|text| TextualDescription {
            text,
            purpose: Purpose::Mitigation,
            target_class: spurious.predicted_class.clone(),
            pivotal_id: None,
            tags: tags.clone(),
        })
        .collect()
}

/// Deduplicated descriptions: weakspot entries first (by pivotal id), then
/// mitigation entries (by association key).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub entries: Vec<TextualDescription>,
    /// Pivotals skipped because they had no caption.
    pub skipped: Vec<String>,
}

impl DescriptionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, seen: &mut HashSet<(String, String)>, d: TextualDescription) {
        if seen.insert((d.text.clone(), d.target_class.clone())) {
            self.entries.push(d);
        }
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("description serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(self.to_jsonl().as_bytes())
    }
}

pub fn build_set(
    weakspots: &[Weakspot],
    spurious: &[Association],
    bundle: &DatasetBundle,
    attribute_variants: &[String],
) -> DescriptionSet {
    let mut set = DescriptionSet::default();
    let mut seen = HashSet::new();

    let mut pivots: Vec<&Weakspot> = weakspots.iter().collect();
    pivots.sort_by(|a, b| a.pivotal_id.cmp(&b.pivotal_id));
    pivots.dedup_by(|a, b| a.pivotal_id == b.pivotal_id);
    for w in pivots {
        let Some(record) = bundle.record(&w.pivotal_id) else {
            log::warn!("pivotal {} not found in bundle", w.pivotal_id);
            set.skipped.push(w.pivotal_id.clone());
            continue;
        };
        match describe_pivotal(record, bundle.vocabulary()) {
            Ok(mut d) => {
                d.tags.push(format!("pair:{}->{}", w.true_class, w.predicted_class));
                set.push(&mut seen, d);
            }
            Err(e) => {
                log::warn!("skipping pivotal {}: {e}", w.pivotal_id);
                set.skipped.push(w.pivotal_id.clone());
            }
        }
    }

    let mut assocs: Vec<&Association> = spurious.iter().collect();
    assocs.sort_by_key(|a| a.key());
    for a in assocs {
        for d in mitigation_prompts(a, attribute_variants) {
            set.push(&mut seen, d);
        }
    }
    set
}
