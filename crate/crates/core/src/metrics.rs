//! Corpus BLEU, ROUGE-L and exact match over decoded strings.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How decoded strings are split into metric tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Whitespace-separated groups.
    #[default]
    Words,
    /// One token per non-space character; suits outputs without spaces.
    Chars,
}

impl Tokenization {
    pub fn split<'a>(&self, s: &'a str) -> Vec<&'a str> {
        match self {
            Tokenization::Words => s.split_whitespace().collect(),
            Tokenization::Chars => s
                .char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| &s[i..i + c.len_utf8()])
                .collect(),
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and totals per order `1..=max_n`, summed over pairs.
fn ngram_stats<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    (matches, totals)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus BLEU (0..100) over token sequences.
///
/// Unsmoothed: any order with zero matches gives 0. Orders for which the
/// hypotheses contain no n-grams at all are left out of the geometric mean.
pub fn corpus_bleu_tokens<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::dim("corpus_bleu", &[hyps.len()], &[refs.len()]));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (matches, totals) = ngram_stats(hyps, refs, max_n);
    let mut log_sum = 0.0;
    let mut orders = 0;
    for (m, t) in matches.iter().zip(&totals) {
        if *t == 0 {
            continue;
        }
        if *m == 0 {
            return Ok(0.0);
        }
        log_sum += (*m as f64 / *t as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    Ok(100.0 * brevity_penalty(c, r) * (log_sum / orders as f64).exp())
}

pub fn corpus_bleu<S: AsRef<str>>(hyps: &[S], refs: &[S], max_n: usize, tok: Tokenization) -> Result<f64> {
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| tok.split(s.as_ref())).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|s| tok.split(s.as_ref())).collect();
    corpus_bleu_tokens(&h, &r, max_n)
}

/// Sentence BLEU with add-one smoothing on orders above one.
pub fn sentence_bleu<T: Eq + Hash>(hyp: &[T], reference: &[T], max_n: usize) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let (h, r) = (vec![hyp], vec![reference]);
    let hs: Vec<Vec<&T>> = h.iter().map(|s| s.iter().collect()).collect();
    let rs: Vec<Vec<&T>> = r.iter().map(|s| s.iter().collect()).collect();
    let (matches, totals) = ngram_stats(&hs, &rs, max_n);
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if n == 0 {
            (matches[0] as f64, totals[0] as f64)
        } else {
            (matches[n] as f64 + 1.0, totals[n] as f64 + 1.0)
        };
        if m == 0.0 {
            return 0.0;
        }
        log_sum += (m / t).ln();
    }
    100.0 * brevity_penalty(hyp.len(), reference.len()) * (log_sum / max_n as f64).exp()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure in `[0, 1]`.
pub fn rouge_l<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean ROUGE-L over a corpus.
pub fn corpus_rouge_l<S: AsRef<str>>(hyps: &[S], refs: &[S], tok: Tokenization) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::dim("rouge_l", &[hyps.len()], &[refs.len()]));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| rouge_l(&tok.split(h.as_ref()), &tok.split(r.as_ref())))
        .sum();
    Ok(total / hyps.len() as f64)
}

pub fn exact_match<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::dim("exact_match", &[hyps.len()], &[refs.len()]));
    }
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h.as_ref() == r.as_ref()).count();
    Ok(hits as f64 / hyps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub split: String,
    pub config_id: String,
}

/// BLEU, ROUGE-L (both 0..100) and exact match (0..100) of one system.
pub fn score_all<S: AsRef<str>>(hyps: &[S], refs: &[S], tok: Tokenization, split: &str, config_id: &str) -> Result<Vec<MetricRow>> {
    let row = |metric: &str, value: f64| MetricRow {
        metric: metric.into(),
        value,
        split: split.into(),
        config_id: config_id.into(),
    };
    Ok(vec![
        row("bleu", corpus_bleu(hyps, refs, 4, tok)?),
        row("rouge_l", 100.0 * corpus_rouge_l(hyps, refs, tok)?),
        row("exact_match", 100.0 * exact_match(hyps, refs)?),
    ])
}

pub fn write_metric_rows<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bleu(h: &[&str], r: &[&str]) -> f64 {
        corpus_bleu(h, r, 4, Tokenization::Words).unwrap()
    }

    #[test]
    fn bleu_examples() {
        assert!((bleu(&["a b c d e"], &["a b c d e"]) - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&["x y z"], &["a b c"]), 0.0);
        let v = bleu(&["the cat sat"], &["the cat sat down"]);
        assert!((v - 71.6531).abs() < 5e-5, "{v}");
        assert!((v - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
        assert!(matches!(corpus_bleu::<&str>(&[], &[], 4, Tokenization::Words), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&["a", "b"], &["a", "b"]), 1.0);
        assert_eq!(rouge_l(&["a", "b"], &["c", "d"]), 0.0);
        let f = rouge_l(&["a", "b", "d"], &["a", "c", "b", "e"]);
        assert!((f - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(format!("{f:.4}"), "0.5714");
        assert_eq!(rouge_l::<&str>(&[], &["a"]), 0.0);
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(exact_match(&["a", "b"], &["c", "d"]).unwrap(), 0.0);
        assert_eq!(exact_match(&["a", "x", "y", "z"], &["a", "b", "c", "d"]).unwrap(), 0.25);
    }

    #[test]
    fn char_tokenization() {
        assert_eq!(Tokenization::Chars.split("ab c"), vec!["a", "b", "c"]);
        assert_eq!(Tokenization::Words.split(" ab  c "), vec!["ab", "c"]);
    }

    #[test]
    fn sentence_bleu_is_smoothed() {
        let s = sentence_bleu(&["a", "b"], &["a", "c"], 4);
        assert!(s > 0.0 && s < 100.0);
        assert!((sentence_bleu(&["a", "b", "c", "d"], &["a", "b", "c", "d"], 4) - 100.0).abs() < 1e-9);
    }

    fn corpus() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..6, 1..12), 1..6)
    }

    proptest! {
        #[test]
        fn bleu_of_refs_is_100(refs in corpus()) {
            let v = corpus_bleu_tokens(&refs, &refs, 4).unwrap();
            prop_assert!((v - 100.0).abs() < 1e-9);
        }

        #[test]
        fn bleu_never_rises_on_corruption(refs in corpus(), pick in any::<proptest::sample::Index>(), pos in any::<proptest::sample::Index>()) {
            let hyps = refs.clone();
            let before = corpus_bleu_tokens(&hyps, &refs, 4).unwrap();
            let mut worse = hyps.clone();
            let i = pick.index(worse.len());
            let j = pos.index(worse[i].len());
            worse[i][j] = 99;
            let after = corpus_bleu_tokens(&worse, &refs, 4).unwrap();
            prop_assert!(after <= before + 1e-9);
        }

        #[test]
        fn rouge_bounds(h in proptest::collection::vec(0u8..5, 1..12), r in proptest::collection::vec(0u8..5, 1..12)) {
            let f = rouge_l(&h, &r);
            let l = lcs_len(&h, &r) as f64;
            let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
            let (lo, hi) = (p.min(rc), p.max(rc));
            prop_assert!((0.0..=1.0).contains(&f));
            if hi > 0.0 {
                prop_assert!(f <= 2.0 * lo / (1.0 + lo / hi) + 1e-12);
            }
            prop_assert_eq!(f == 1.0, h == r);
        }
    }
}
