//! Easy data augmentation on schema surface strings: synonym replacement and
//! random word swap.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::Result;

/// Word → synonyms. Lookup is on lowercase single words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Thesaurus {
    entries: BTreeMap<String, Vec<String>>,
}

const BUILTIN: &[(&str, &[&str])] = &[
    ("find", &["search", "look for", "locate"]),
    ("search", &["find", "look for"]),
    ("reserve", &["book"]),
    ("book", &["reserve"]),
    ("buy", &["purchase", "get"]),
    ("get", &["obtain", "fetch"]),
    ("check", &["verify"]),
    ("restaurant", &["eatery", "diner"]),
    ("restaurants", &["eateries", "diners"]),
    ("home", &["house", "residence"]),
    ("homes", &["houses", "residences"]),
    ("hotel", &["inn", "lodging"]),
    ("hotels", &["inns", "lodgings"]),
    ("flight", &["plane", "airplane"]),
    ("flights", &["planes"]),
    ("movie", &["film", "picture"]),
    ("movies", &["films", "pictures"]),
    ("ride", &["trip", "lift"]),
    ("car", &["vehicle", "auto"]),
    ("city", &["town", "municipality"]),
    ("area", &["region", "location"]),
    ("location", &["place", "position"]),
    ("address", &["location"]),
    ("street", &["road"]),
    ("date", &["day"]),
    ("time", &["hour"]),
    ("number", &["count", "amount"]),
    ("seats", &["places", "spots"]),
    ("size", &["magnitude"]),
    ("party", &["group"]),
    ("price", &["cost", "fare"]),
    ("range", &["bracket"]),
    ("cuisine", &["food", "cooking"]),
    ("name", &["title"]),
    ("type", &["kind", "category"]),
    ("phone", &["telephone"]),
    ("rating", &["score"]),
    ("visit", &["tour", "viewing"]),
    ("rent", &["lease"]),
    ("appointment", &["booking"]),
    ("transfer", &["send"]),
    ("amount", &["sum", "quantity"]),
    ("account", &["profile"]),
    ("balance", &["funds"]),
    ("event", &["occasion"]),
    ("genre", &["category", "style"]),
    ("rooms", &["chambers"]),
    ("stay", &["visit"]),
    ("cheap", &["inexpensive"]),
    ("expensive", &["pricey", "costly"]),
    ("moderate", &["average"]),
    ("true", &["yes"]),
    ("false", &["no"]),
    ("play", &["run"]),
    ("song", &["track", "tune"]),
    ("artist", &["performer", "musician"]),
    ("weather", &["forecast"]),
];

impl Thesaurus {
    pub fn builtin() -> Self {
        Thesaurus {
            entries: BUILTIN
                .iter()
                .map(|(w, syns)| (w.to_string(), syns.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Thesaurus::default()
    }

    /// Reads lines of the form `word<TAB>syn1,syn2,...`, merging into the built-in table.
    pub fn with_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        for line in text.lines() {
            let Some((word, syns)) = line.split_once('\t') else {
                continue;
            };
            let syns: Vec<String> = syns
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            if !syns.is_empty() {
                self.entries.entry(word.trim().to_lowercase()).or_default().extend(syns);
            }
        }
        Ok(self)
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentOp {
    SynonymReplacement,
    RandomSwap,
}

/// Replaces one word that has a synonym with a random synonym. Unchanged when
/// no word has one.
pub fn synonym_replacement(text: &str, thesaurus: &Thesaurus, rng: &mut impl Rng) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let candidates: Vec<usize> = (0..words.len())
        .filter(|&i| !is_marker(words[i]) && !thesaurus.synonyms(words[i]).is_empty())
        .collect();
    let Some(&i) = candidates.choose(rng) else {
        return text.to_string();
    };
    let syn = thesaurus.synonyms(words[i]).choose(rng).expect("non-empty").clone();
    let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    out[i] = syn;
    out.join(" ")
}

/// Swaps two distinct words. Texts with fewer than two words are returned unchanged.
pub fn random_swap(text: &str, rng: &mut impl Rng) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let movable: Vec<usize> = (0..words.len()).filter(|&i| !is_marker(words[i])).collect();
    if movable.len() < 2 {
        return text.to_string();
    }
    let a = rng.random_range(0..movable.len());
    let mut b = rng.random_range(0..movable.len() - 1);
    if b >= a {
        b += 1;
    }
    words.swap(movable[a], movable[b]);
    words.join(" ")
}

fn is_marker(word: &str) -> bool {
    word.starts_with('[') && word.ends_with(']')
}

/// With probability `p`, applies one of the two operations (chosen uniformly).
pub fn augment_text(text: &str, p: f64, thesaurus: &Thesaurus, rng: &mut impl Rng) -> String {
    if p <= 0.0 || !rng.random_bool(p.min(1.0)) {
        return text.to_string();
    }
    let op = if rng.random_bool(0.5) {
        AugmentOp::SynonymReplacement
    } else {
        AugmentOp::RandomSwap
    };
    apply_op(text, op, thesaurus, rng)
}

pub fn apply_op(text: &str, op: AugmentOp, thesaurus: &Thesaurus, rng: &mut impl Rng) -> String {
    match op {
        AugmentOp::SynonymReplacement => synonym_replacement(text, thesaurus, rng),
        AugmentOp::RandomSwap => random_swap(text, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_word_swap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_swap("city", &mut rng), "city");
    }

    #[test]
    fn synonym_replaces_one_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let th = Thesaurus::builtin();
        let out = synonym_replacement("party size", &th, &mut rng);
        assert_ne!(out, "party size");
        let changed = out
            .split_whitespace()
            .zip("party size".split_whitespace())
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed >= 1);
    }

    #[test]
    fn markers_are_never_touched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let th = Thesaurus::builtin();
        for _ in 0..50 {
            let out = apply_op("[SLOT] city", AugmentOp::RandomSwap, &th, &mut rng);
            assert_eq!(out, "[SLOT] city");
        }
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let th = Thesaurus::builtin();
        for _ in 0..100 {
            assert_eq!(augment_text("find restaurants", 0.0, &th, &mut rng), "find restaurants");
        }
    }
}
