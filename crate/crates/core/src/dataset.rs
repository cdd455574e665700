//! Manifest management, the 18-word vocabulary, stratified splitting and
//! seeded batching.
//!
//! Manifests are JSONL, one labeled sample per line:
//! `{"tensor":"path.vlt","label":12,"speaker":"s03","split":"train"}`.
//! Unknown keys are preserved across a read/modify/write cycle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// The 18 German word classes; the index is the class id.
pub const VOCABULARY: [&str; 18] = [
    "kommentare",
    "fragen",
    "prüfung",
    "deutschland",
    "können",
    "sprechen",
    "wirklich",
    "eigentlich",
    "wissen",
    "natürlich",
    "video",
    "bedeutet",
    "beispiel",
    "schreiben",
    "menschen",
    "einfach",
    "wichtig",
    "wörter",
];

pub fn word_for_class(label: usize) -> Result<&'static str> {
    VOCABULARY
        .get(label)
        .copied()
        .ok_or_else(|| Error::IndexOutOfRange(format!("class {label} out of 18")))
}

pub fn class_for_word(word: &str) -> Option<usize> {
    VOCABULARY.iter().position(|&w| w == word)
}

/// The vocabulary word when the label set is the 18-word vocabulary,
/// otherwise a generic `classNN` label (toy models may use fewer classes).
pub fn class_label(label: usize, num_classes: usize) -> String {
    if num_classes == VOCABULARY.len() {
        word_for_class(label).unwrap_or("?").to_string()
    } else {
        format!("class{label:02}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?} (expected train|val|test|unassigned)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tensor: String,
    pub label: usize,
    pub speaker: String,
    #[serde(default = "default_split")]
    pub split: Split,
    /// Unknown manifest keys, preserved verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_split() -> Split {
    Split::Unassigned
}

impl ManifestEntry {
    pub fn new(tensor: impl Into<String>, label: usize, speaker: impl Into<String>) -> Self {
        Self {
            tensor: tensor.into(),
            label,
            speaker: speaker.into(),
            split: Split::Unassigned,
            extra: BTreeMap::new(),
        }
    }
}

pub fn parse_manifest(text: &str, name: &str, num_classes: usize) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::MalformedManifest(format!("{name}:{}: {e}", lineno + 1)))?;
        if entry.label >= num_classes {
            return Err(Error::MalformedManifest(format!(
                "{name}:{}: label {} out of {num_classes}",
                lineno + 1,
                entry.label
            )));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path, num_classes: usize) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    parse_manifest(&text, &path.display().to_string(), num_classes)
}

pub fn save_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::MalformedManifest(format!("encode entry: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, out).map_err(|e| Error::io(format!("write {}", tmp.display()), e))?;
    fs::rename(&tmp, path)
        .map_err(|e| Error::io(format!("rename {} -> {}", tmp.display(), path.display()), e))
}

/// Ratio split such as 8:2 (train:val) or 8:1:1 (train:val:test).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub ratios: Vec<u32>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: Vec<u32>, seed: u64) -> Result<Self> {
        if ratios.len() < 2 || ratios.len() > 3 {
            return Err(Error::InvalidArgument(
                "split needs 2 (train:val) or 3 (train:val:test) ratio parts".into(),
            ));
        }
        if ratios.iter().any(|&r| r == 0) {
            return Err(Error::InvalidArgument("ratio parts must be positive".into()));
        }
        Ok(Self { ratios, seed })
    }

    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let parts: Vec<u32> = text
            .split(':')
            .map(|p| {
                p.parse::<u32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad ratio part {p:?} in {text:?}")))
            })
            .collect::<Result<_>>()?;
        Self::new(parts, seed)
    }

    fn splits(&self) -> &'static [Split] {
        if self.ratios.len() == 2 {
            &[Split::Train, Split::Val]
        } else {
            &[Split::Train, Split::Val, Split::Test]
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Assign split tags class by class, preserving the class distribution.
///
/// Within each class, entries are put in a canonical order (by tensor path,
/// then original position), shuffled by a per-class seeded stream, and cut
/// into contiguous ranges. Non-train splits receive `round(count * share)`
/// entries (half up, in ratio order); the remainder goes to train. Entry
/// order of the returned manifest matches the input.
pub fn stratified_split(
    entries: &[ManifestEntry],
    spec: &SplitSpec,
    num_classes: usize,
) -> Result<Vec<ManifestEntry>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in entries.iter().enumerate() {
        if e.label >= num_classes {
            return Err(Error::IndexOutOfRange(format!(
                "label {} out of {num_classes}",
                e.label
            )));
        }
        by_class[e.label].push(i);
    }
    for (label, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            let word = word_for_class(label).unwrap_or("?");
            return Err(Error::EmptyClass(format!("{label} ({word})")));
        }
    }

    let total_ratio: u32 = spec.ratios.iter().sum();
    let splits = spec.splits();
    let mut out = entries.to_vec();

    for (label, members) in by_class.iter().enumerate() {
        // canonical order decouples membership from input order
        let mut ordered = members.clone();
        ordered.sort_by(|&a, &b| entries[a].tensor.cmp(&entries[b].tensor).then(a.cmp(&b)));
        let mut stream = rng::stream(spec.seed, Purpose::Split, label as u64);
        ordered.shuffle(&mut stream);

        let n = ordered.len();
        let mut counts = vec![0usize; splits.len()];
        let mut assigned = 0usize;
        for (i, &ratio) in spec.ratios.iter().enumerate().skip(1) {
            let share = ratio as f64 / total_ratio as f64;
            let want = round_half_up(n as f64 * share).min(n - assigned);
            counts[i] = want;
            assigned += want;
        }
        counts[0] = n - assigned;

        let mut cursor = 0usize;
        for (split_idx, &count) in counts.iter().enumerate() {
            for &entry_idx in &ordered[cursor..cursor + count] {
                out[entry_idx].split = splits[split_idx];
            }
            cursor += count;
        }
    }
    Ok(out)
}

/// Deterministic per-epoch sample order: a seeded shuffle of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = rng::stream(seed, Purpose::Shuffle, epoch as u64);
    order.shuffle(&mut stream);
    order
}

/// Seeded shuffled batches over `entries`; every entry appears exactly once
/// per epoch and the final partial batch is emitted.
pub fn batch_iterator<'a, T>(
    entries: &'a [T],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> impl Iterator<Item = Vec<&'a T>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let order = shuffled_indices(entries.len(), seed, epoch);
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        batches.push(chunk.iter().map(|&i| &entries[i]).collect::<Vec<_>>());
    }
    batches.into_iter()
}

/// Per-class counts and integer percentages (half up), Table-2 style.
pub fn class_histogram(entries: &[ManifestEntry], num_classes: usize) -> Vec<(usize, u32)> {
    let mut counts = vec![0usize; num_classes];
    for e in entries {
        if e.label < num_classes {
            counts[e.label] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .into_iter()
        .map(|c| {
            let pct = if total == 0 {
                0
            } else {
                round_half_up(c as f64 * 100.0 / total as f64) as u32
            };
            (c, pct)
        })
        .collect()
}

/// Sanity helper used by tests and the `inspect` command: a deterministic
/// uniform predictor over `num_classes`.
pub fn uniform_random_labels(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    let mut stream = rng::stream(seed, Purpose::Synthetic, 0);
    (0..n).map(|_| stream.gen_range(0..num_classes)).collect()
}
