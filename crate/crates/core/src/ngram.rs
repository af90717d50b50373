//! Letter k-gram distributions of text clusters.
//!
//! Text is lowercased and reduced to `a..z`. By default the surviving letters
//! are concatenated, so grams may span former spaces and punctuation;
//! [`WindowMode::BreakAtStripped`] restricts grams to unbroken letter runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Distribution;
use crate::synthetic::sample_cluster;

pub const ALPHABET_SIZE: usize = 26;
pub const MAX_GRAM_LENGTH: usize = 4;

/// Named text clusters, ordered by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub clusters: Vec<(String, String)>,
}

impl Corpus {
    /// Loads every `*.txt` file in `dir`; the cluster name is the file stem.
    /// Invalid UTF-8 is replaced and later dropped by normalization.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut clusters = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let bytes = fs::read(&path)?;
            clusters.push((name, String::from_utf8_lossy(&bytes).into_owned()));
        }
        if clusters.is_empty() {
            return Err(Error::Config(format!("no .txt files in {}", dir.display())));
        }
        clusters.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { clusters })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.clusters.iter().map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WindowMode {
    #[default]
    Concatenate,
    BreakAtStripped,
}

/// Lowercases and drops everything outside `a..z`.
pub fn normalize_text(raw: &str) -> Vec<u8> {
    raw.chars()
        .filter_map(|c| {
            let c = c.to_ascii_lowercase();
            c.is_ascii_lowercase().then_some(c as u8)
        })
        .collect()
}

/// Maximal runs of letters separated by stripped characters.
pub fn letter_runs(raw: &str) -> Vec<Vec<u8>> {
    raw.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|s| !s.is_empty())
        .map(normalize_text)
        .collect()
}

fn check_gram_length(k: usize) -> Result<()> {
    if (1..=MAX_GRAM_LENGTH).contains(&k) {
        Ok(())
    } else {
        Err(Error::GramLengthOutOfRange { k })
    }
}

/// Base-26 code of a gram, first letter most significant.
pub fn kgram_index(gram: &[u8]) -> Result<usize> {
    check_gram_length(gram.len())?;
    gram.iter().try_fold(0usize, |acc, &b| {
        if b.is_ascii_lowercase() {
            Ok(acc * ALPHABET_SIZE + (b - b'a') as usize)
        } else {
            Err(Error::BadLetter { byte: b })
        }
    })
}

/// Inverse of [`kgram_index`].
pub fn kgram_from_index(mut index: usize, k: usize) -> Result<Vec<u8>> {
    check_gram_length(k)?;
    let dim = ALPHABET_SIZE.pow(k as u32);
    if index >= dim {
        return Err(Error::DatapointOutOfRange {
            datapoint: index,
            dim,
        });
    }
    let mut gram = vec![b'a'; k];
    for slot in gram.iter_mut().rev() {
        *slot = b'a' + (index % ALPHABET_SIZE) as u8;
        index /= ALPHABET_SIZE;
    }
    Ok(gram)
}

/// Sliding-window counts over a normalized letter sequence.
pub fn kgram_counts(letters: &[u8], k: usize) -> Result<Vec<u64>> {
    check_gram_length(k)?;
    let mut counts = vec![0u64; ALPHABET_SIZE.pow(k as u32)];
    add_window_counts(letters, k, &mut counts)?;
    Ok(counts)
}

fn add_window_counts(letters: &[u8], k: usize, counts: &mut [u64]) -> Result<()> {
    if letters.len() < k {
        return Ok(());
    }
    let modulus = ALPHABET_SIZE.pow(k as u32 - 1);
    let mut code = kgram_index(&letters[..k])?;
    counts[code] += 1;
    for &b in &letters[k..] {
        if !b.is_ascii_lowercase() {
            return Err(Error::BadLetter { byte: b });
        }
        code = (code % modulus) * ALPHABET_SIZE + (b - b'a') as usize;
        counts[code] += 1;
    }
    Ok(())
}

/// Empirical k-gram frequencies, treated as a cluster's true distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct KGramDistribution {
    pub k: usize,
    pub counts: Vec<u64>,
    pub dist: Distribution,
}

impl KGramDistribution {
    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn windows(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn from_counts(k: usize, counts: Vec<u64>, letters: usize) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::TextTooShort { len: letters, k });
        }
        let dist = Distribution::new(counts.iter().map(|&c| c as f64 / total as f64).collect())?;
        Ok(Self { k, counts, dist })
    }
}

pub fn empirical_kgram_distribution(letters: &[u8], k: usize) -> Result<KGramDistribution> {
    check_gram_length(k)?;
    if letters.len() < k {
        return Err(Error::TextTooShort {
            len: letters.len(),
            k,
        });
    }
    KGramDistribution::from_counts(k, kgram_counts(letters, k)?, letters.len())
}

/// Normalizes raw text and builds its k-gram distribution under `mode`.
pub fn text_kgram_distribution(raw: &str, k: usize, mode: WindowMode) -> Result<KGramDistribution> {
    match mode {
        WindowMode::Concatenate => empirical_kgram_distribution(&normalize_text(raw), k),
        WindowMode::BreakAtStripped => {
            check_gram_length(k)?;
            let mut counts = vec![0u64; ALPHABET_SIZE.pow(k as u32)];
            let mut letters = 0;
            for run in letter_runs(raw) {
                letters += run.len();
                add_window_counts(&run, k, &mut counts)?;
            }
            KGramDistribution::from_counts(k, counts, letters)
        }
    }
}

/// Ground truth for every cluster of a corpus.
pub fn corpus_distributions(
    corpus: &Corpus,
    k: usize,
    mode: WindowMode,
) -> Result<Vec<KGramDistribution>> {
    use rayon::prelude::*;
    corpus
        .clusters
        .par_iter()
        .map(|(_, text)| text_kgram_distribution(text, k, mode))
        .collect()
}

/// `n` draws with replacement from a cluster's k-gram distribution.
pub fn resample_cluster(gt: &KGramDistribution, n: usize, seed: u64) -> Vec<u32> {
    sample_cluster(&gt.dist, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("AbC!"), b"abc");
        assert_eq!(normalize_text(""), b"");
        assert_eq!(normalize_text("don't"), b"dont");
        assert_eq!(normalize_text("Ça va, über"), b"avaber");
    }

    #[test]
    fn indices() {
        assert_eq!(kgram_index(b"aa").unwrap(), 0);
        assert_eq!(kgram_index(b"ab").unwrap(), 1);
        assert_eq!(kgram_index(b"ba").unwrap(), 26);
        assert_eq!(kgram_index(b"zzz").unwrap(), 26usize.pow(3) - 1);
        assert!(matches!(
            kgram_index(b"aB"),
            Err(Error::BadLetter { byte: b'B' })
        ));
        assert!(matches!(
            kgram_index(b""),
            Err(Error::GramLengthOutOfRange { k: 0 })
        ));
        assert!(matches!(
            kgram_index(b"abcde"),
            Err(Error::GramLengthOutOfRange { k: 5 })
        ));
    }

    #[test]
    fn index_is_a_bijection_for_short_grams() {
        for k in 1..=2 {
            let dim = 26usize.pow(k as u32);
            let mut seen = vec![false; dim];
            for i in 0..dim {
                let gram = kgram_from_index(i, k).unwrap();
                let j = kgram_index(&gram).unwrap();
                assert_eq!(i, j);
                seen[j] = true;
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn distributions() {
        let d = empirical_kgram_distribution(b"aaa", 2).unwrap();
        assert_eq!(d.dist.probs()[0], 1.0);
        assert_eq!(d.windows(), 2);
        let d = empirical_kgram_distribution(b"abab", 2).unwrap();
        let ab = kgram_index(b"ab").unwrap();
        let ba = kgram_index(b"ba").unwrap();
        assert!((d.dist.probs()[ab] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.dist.probs()[ba] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.dim(), 676);
        assert!(matches!(
            empirical_kgram_distribution(b"a", 2),
            Err(Error::TextTooShort { len: 1, k: 2 })
        ));
    }

    #[test]
    fn window_modes_differ_only_at_boundaries() {
        let raw = "ab cd";
        let cat = text_kgram_distribution(raw, 2, WindowMode::Concatenate).unwrap();
        let brk = text_kgram_distribution(raw, 2, WindowMode::BreakAtStripped).unwrap();
        assert_eq!(cat.windows(), 3);
        assert_eq!(brk.windows(), 2);
        assert_eq!(brk.counts[kgram_index(b"bc").unwrap()], 0);
        assert_eq!(cat.counts[kgram_index(b"bc").unwrap()], 1);
    }

    #[test]
    fn unigram_matches_letter_counts() {
        let raw = "The quick brown fox jumps over the lazy dog, twice!";
        let d = text_kgram_distribution(raw, 1, WindowMode::Concatenate).unwrap();
        let mut counts = [0u64; 26];
        let mut total = 0u64;
        for c in raw.chars().filter(char::is_ascii_alphabetic) {
            counts[(c.to_ascii_lowercase() as u8 - b'a') as usize] += 1;
            total += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            assert!((d.dist.probs()[k] - c as f64 / total as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn resampling_point_mass_and_replay() {
        let gt = empirical_kgram_distribution(b"aaaa", 2).unwrap();
        assert!(resample_cluster(&gt, 100, 1).iter().all(|&x| x == 0));
        let gt = empirical_kgram_distribution(b"thequickbrownfox", 2).unwrap();
        assert_eq!(resample_cluster(&gt, 500, 4), resample_cluster(&gt, 500, 4));
    }

    #[test]
    fn corpus_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), "Second play.").unwrap();
        std::fs::write(dir.path().join("a.txt"), "First play!").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let corpus = Corpus::from_dir(dir.path()).unwrap();
        assert_eq!(corpus.names().collect::<Vec<_>>(), ["a", "b"]);
        let gts = corpus_distributions(&corpus, 2, WindowMode::Concatenate).unwrap();
        assert_eq!(gts.len(), 2);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            Corpus::from_dir(empty.path()),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn trigram_codes_round_trip(gram in "[a-z]{3}") {
            let i = kgram_index(gram.as_bytes()).unwrap();
            prop_assert!(i < 26usize.pow(3));
            prop_assert_eq!(kgram_from_index(i, 3).unwrap(), gram.into_bytes());
        }

        #[test]
        fn padding_with_non_letters_is_invisible(
            body in "[a-zA-Z ,.']{3,60}",
            pre in "[0-9 !?\\-]{0,10}",
            post in "[0-9 !?\\-]{0,10}",
        ) {
            prop_assume!(normalize_text(&body).len() >= 2);
            let plain = text_kgram_distribution(&body, 2, WindowMode::Concatenate).unwrap();
            let padded = text_kgram_distribution(&format!("{pre}{body}{post}"), 2, WindowMode::Concatenate).unwrap();
            prop_assert_eq!(plain, padded);
        }
    }
}
