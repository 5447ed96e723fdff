//! Short-text featurization: tokens, 1–3-grams and the retained vocabulary.
//!
//! A text is lowercased and cut on every maximal run of non-alphanumeric
//! characters, so `"this is the best 4G network!"` becomes
//! `[this, is, the, best, 4g, network]`. Every contiguous window of one to
//! three tokens is an n-gram; an n-gram enters the vocabulary once its total
//! number of occurrences over the corpus reaches `min_count`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::ObservationStore;

/// Longest n-gram order that is extracted.
pub const MAX_ORDER: usize = 3;

/// Default occurrence threshold for vocabulary membership.
pub const DEFAULT_MIN_COUNT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDoc {
    pub row_id: usize,
    pub raw: String,
    #[serde(skip)]
    tokens: Vec<String>,
}

impl TextDoc {
    pub fn new(row_id: usize, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        TextDoc {
            row_id,
            raw,
            tokens,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Recomputes the token list after deserialization.
    pub fn retokenize(&mut self) {
        self.tokens = tokenize(&self.raw);
    }
}

/// Builds documents from raw strings with consecutive row ids starting at `first_row`.
pub fn docs_from_texts<I, S>(first_row: usize, texts: I) -> Vec<TextDoc>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    texts
        .into_iter()
        .enumerate()
        .map(|(i, raw)| TextDoc::new(first_row + i, raw))
        .collect()
}

pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// All contiguous windows of 1..=3 tokens, joined by a single space.
///
/// Unigrams come first, then bigrams, then trigrams, each in text order.
/// Repeated windows are kept: the result is a multiset.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let t = tokens.len();
    let mut out = Vec::with_capacity(3 * t);
    for order in 1..=MAX_ORDER.min(t) {
        for window in tokens.windows(order) {
            let mut gram = String::from(window[0].as_ref());
            for tok in &window[1..] {
                gram.push(' ');
                gram.push_str(tok.as_ref());
            }
            out.push(gram);
        }
    }
    out
}

/// Bidirectional map between retained n-grams and dense column ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramVocab {
    terms: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
    min_count: u64,
}

impl NGramVocab {
    fn from_sorted_terms(terms: Vec<String>, min_count: u64) -> Self {
        let mut vocab = NGramVocab {
            terms,
            ids: HashMap::new(),
            min_count,
        };
        vocab.rebuild_index();
        vocab
    }

    /// Restores the term → id index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.ids = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Number of retained n-grams (the width of the feature block).
    pub fn n1(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Running total-occurrence counts of every n-gram seen so far.
///
/// Kept alongside the vocabulary so a later import can promote n-grams
/// that only reach the threshold once new texts arrive.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NGramCounter {
    counts: BTreeMap<String, u64>,
}

impl NGramCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_doc(&mut self, doc: &TextDoc) {
        for gram in extract_ngrams(doc.tokens()) {
            *self.counts.entry(gram).or_insert(0) += 1;
        }
    }

    pub fn add_docs<'a>(&mut self, docs: impl IntoIterator<Item = &'a TextDoc>) {
        for doc in docs {
            self.add_doc(doc);
        }
    }

    pub fn count(&self, gram: &str) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Vocabulary of every n-gram counted at least `min_count` times, ids in
    /// lexicographic order of the n-gram string.
    pub fn build_vocab(&self, min_count: u64) -> Result<NGramVocab> {
        if min_count == 0 {
            return Err(Error::InvalidValue("min_count must be at least 1".into()));
        }
        let mut terms: Vec<String> = self
            .counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(t, _)| t.clone())
            .collect();
        terms.sort_unstable();
        Ok(NGramVocab::from_sorted_terms(terms, min_count))
    }

    /// Appends n-grams that now meet the vocabulary threshold but are not yet
    /// in it. Existing ids are untouched; the new ids follow in lexicographic
    /// order. Returns how many were added.
    pub fn extend_vocab(&self, vocab: &mut NGramVocab) -> usize {
        let mut fresh: Vec<String> = self
            .counts
            .iter()
            .filter(|(t, &c)| c >= vocab.min_count && !vocab.ids.contains_key(t.as_str()))
            .map(|(t, _)| t.clone())
            .collect();
        fresh.sort_unstable();
        let added = fresh.len();
        for term in fresh {
            vocab.ids.insert(term.clone(), vocab.terms.len() as u32);
            vocab.terms.push(term);
        }
        added
    }
}

pub fn build_vocab(corpus: &[TextDoc], min_count: u64) -> Result<NGramVocab> {
    let mut counter = NGramCounter::new();
    counter.add_docs(corpus);
    counter.build_vocab(min_count)
}

/// Sorted, duplicate-free column ids of the in-vocabulary n-grams of `doc`.
pub fn encode(doc: &TextDoc, vocab: &NGramVocab) -> Vec<u32> {
    let mut ids: Vec<u32> = extract_ngrams(doc.tokens())
        .iter()
        .filter_map(|g| vocab.id(g))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// A store whose feature block holds the encoded corpus and whose label
/// block has `n2` empty columns. Row `i` is `docs[i]`.
pub fn feature_store(docs: &[TextDoc], vocab: &NGramVocab, n2: usize) -> Result<ObservationStore> {
    let mut store = ObservationStore::new(docs.len(), vocab.n1(), n2);
    for (row, doc) in docs.iter().enumerate() {
        store.set_features(row, encode(doc, vocab))?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("this is the best 4G network!"),
            toks(&["this", "is", "the", "best", "4g", "network"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Wi-Fi???"), toks(&["wi", "fi"]));
        assert!(tokenize("?!. ,;").is_empty());
    }

    #[test]
    fn ngram_windows() {
        let grams = extract_ngrams(&tokenize("this is the best 4G network!"));
        for g in ["this is the", "is the best", "best 4g network"] {
            assert!(grams.iter().any(|x| x == g), "missing {g}");
        }
        assert_eq!(grams.len(), 3 * 6 - 3);
        assert_eq!(extract_ngrams(&["hello"]), toks(&["hello"]));
        assert_eq!(extract_ngrams(&["a", "b"]), toks(&["a", "b", "a b"]));
        assert!(extract_ngrams::<&str>(&[]).is_empty());
    }

    #[test]
    fn vocab_threshold_counts_total_occurrences() {
        let corpus = docs_from_texts(0, ["a b", "a c"]);
        assert_eq!(build_vocab(&corpus, 2).unwrap().terms(), &toks(&["a"])[..]);

        let corpus = docs_from_texts(0, ["a a"]);
        assert_eq!(build_vocab(&corpus, 2).unwrap().terms(), &toks(&["a"])[..]);

        let corpus = docs_from_texts(0, ["b a", "c"]);
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.terms(), &toks(&["a", "b", "b a", "c"])[..]);
        assert_eq!(v.id("b a"), Some(2));

        assert!(build_vocab(&[], 2).unwrap().is_empty());
        assert!(build_vocab(&corpus, 0).is_err());
    }

    #[test]
    fn encode_is_presence_only() {
        let vocab = NGramVocab::from_sorted_terms(toks(&["a", "a b", "b"]), 1);
        let doc = TextDoc::new(0, "a b a");
        // "a"=0, "a b"=1, "b"=2 in lexicographic order
        assert_eq!(encode(&doc, &vocab), vec![0, 1, 2]);
        assert!(encode(&TextDoc::new(1, "zzz"), &vocab).is_empty());
    }

    #[test]
    fn tweet_contains_its_trigram() {
        let corpus = docs_from_texts(
            0,
            [
                "this is the best 4G network!",
                "best 4g network ever",
                "hello",
            ],
        );
        let vocab = build_vocab(&corpus, 2).unwrap();
        let id = vocab.id("best 4g network").expect("trigram retained");
        assert!(encode(&corpus[0], &vocab).contains(&id));
    }

    #[test]
    fn extension_keeps_existing_ids() {
        let first = docs_from_texts(0, ["red fox", "red dog"]);
        let mut counter = NGramCounter::new();
        counter.add_docs(&first);
        let mut vocab = counter.build_vocab(2).unwrap();
        assert_eq!(vocab.terms(), &toks(&["red"])[..]);

        let second = docs_from_texts(2, ["lazy dog", "a fox"]);
        counter.add_docs(&second);
        let added = counter.extend_vocab(&mut vocab);
        assert_eq!(added, 2);
        assert_eq!(vocab.terms(), &toks(&["red", "dog", "fox"])[..]);
        assert_eq!(vocab.id("red"), Some(0));
        assert_eq!(vocab.id("fox"), Some(2));
    }
}
