use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;

use crate::error::MetricError;

fn bbox_token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\{\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\}").expect("valid regex")
    })
}

/// Shared tokenizer of the text metrics: lowercase, every `{a, b, c, d}`
/// becomes the single token `{a,b,c,d}`, other punctuation is deleted, then
/// split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut last = 0;
    for caps in bbox_token_regex().captures_iter(&lower) {
        let m = caps.get(0).expect("whole match");
        push_plain(&lower[last..m.start()], &mut tokens);
        tokens.push(format!("{{{},{},{},{}}}", &caps[1], &caps[2], &caps[3], &caps[4]));
        last = m.end();
    }
    push_plain(&lower[last..], &mut tokens);
    tokens
}

fn push_plain(text: &str, out: &mut Vec<String>) {
    for word in text.split_whitespace() {
        let w: String = word.chars().filter(|c| c.is_alphanumeric()).collect();
        if !w.is_empty() {
            out.push(w);
        }
    }
}

fn counts<T: std::hash::Hash + Eq + Clone>(items: &[T]) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it.clone()).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap(a: &[String], b: &[String]) -> usize {
    let cb = counts(b);
    counts(a)
        .iter()
        .map(|(t, &n)| n.min(cb.get(t).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bleu1 {
    pub score: f64,
    /// The candidate had no tokens; the score is then 0.
    pub empty_candidate: bool,
}

/// Clipped unigram precision times the brevity penalty, with the closest
/// reference length (ties to the shorter one).
pub fn bleu1(candidate: &str, references: &[&str]) -> Bleu1 {
    let cand = tokenize(candidate);
    if cand.is_empty() || references.is_empty() {
        return Bleu1 {
            score: 0.0,
            empty_candidate: cand.is_empty(),
        };
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut max_ref: HashMap<String, usize> = HashMap::new();
    for r in &refs {
        for (t, n) in counts(r) {
            let e = max_ref.entry(t).or_insert(0);
            *e = (*e).max(n);
        }
    }
    let clipped: usize = counts(&cand)
        .iter()
        .map(|(t, &n)| n.min(max_ref.get(t).copied().unwrap_or(0)))
        .sum();
    let c = cand.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Bleu1 {
        score: bp * clipped as f64 / c as f64,
        empty_candidate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rouge1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One side had no tokens; all values are then 0.
    pub empty: bool,
}

pub fn rouge1(candidate: &str, reference: &str) -> Rouge1 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return Rouge1 {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            empty: true,
        };
    }
    let overlap = clipped_overlap(&cand, &refr) as f64;
    let precision = overlap / cand.len() as f64;
    let recall = overlap / refr.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Rouge1 {
        precision,
        recall,
        f1,
        empty: false,
    }
}

/// Light suffix stripper used for stem matching.
pub fn stem(word: &str) -> &str {
    if word.starts_with('{') || word.chars().count() <= 3 {
        return word;
    }
    for suffix in ["ing", "ed", "ly", "es", "s"] {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 && !(suffix == "s" && base.ends_with('s')) {
                return base;
            }
        }
    }
    word
}

/// Node budget of the chunk search; beyond it the best alignment found so
/// far is used.
const MAX_SEARCH_NODES: usize = 200_000;

/// Number of matches and the minimum number of chunks over all maximum
/// alignments, where tokens align when their stems are equal.
pub fn meteor_alignment(cand: &[String], refr: &[String]) -> (usize, usize) {
    let cs: Vec<&str> = cand.iter().map(|t| stem(t)).collect();
    let rs: Vec<&str> = refr.iter().map(|t| stem(t)).collect();
    let c_counts = counts(&cs);
    let r_counts = counts(&rs);
    let matches: usize = c_counts
        .iter()
        .map(|(s, &n)| n.min(r_counts.get(s).copied().unwrap_or(0)))
        .sum();
    if matches == 0 {
        return (0, 0);
    }
    // Per stem class: how many candidate tokens must stay unaligned.
    let mut skips: HashMap<&str, usize> = c_counts
        .iter()
        .map(|(s, &n)| (*s, n - n.min(r_counts.get(s).copied().unwrap_or(0))))
        .collect();
    let mut search = ChunkSearch {
        cs: &cs,
        rs: &rs,
        used: vec![false; rs.len()],
        best_links: 0,
        nodes: 0,
    };
    search.run(0, None, 0, &mut skips);
    (matches, matches - search.best_links)
}

struct ChunkSearch<'a> {
    cs: &'a [&'a str],
    rs: &'a [&'a str],
    used: Vec<bool>,
    best_links: usize,
    nodes: usize,
}

impl<'a> ChunkSearch<'a> {
    /// `prev` is the reference index aligned to candidate position `i - 1`.
    fn run(&mut self, i: usize, prev: Option<usize>, links: usize, skips: &mut HashMap<&'a str, usize>) {
        self.nodes += 1;
        if i == self.cs.len() {
            self.best_links = self.best_links.max(links);
            return;
        }
        // at most one new link per remaining position
        if links + (self.cs.len() - i) <= self.best_links || self.nodes > MAX_SEARCH_NODES {
            return;
        }
        let s = self.cs[i];
        // the adjacent reference position first, so the greedy path is tried early
        let mut order: Vec<usize> = (0..self.rs.len())
            .filter(|&j| !self.used[j] && self.rs[j] == s)
            .collect();
        if let Some(p) = prev {
            if let Some(k) = order.iter().position(|&j| j == p + 1) {
                order.swap(0, k);
            }
        }
        for j in order {
            self.used[j] = true;
            let link = usize::from(prev.is_some_and(|p| p + 1 == j));
            self.run(i + 1, Some(j), links + link, skips);
            self.used[j] = false;
        }
        if let Some(k) = skips.get_mut(s) {
            if *k > 0 {
                *k -= 1;
                self.run(i + 1, None, links, skips);
                *skips.get_mut(s).expect("present") += 1;
            }
        }
    }
}

/// Exact-and-stem unigram METEOR without synonym resources.
pub fn meteor_lite(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let (m, chunks) = meteor_alignment(&cand, &refr);
    meteor_from_counts(m, chunks, cand.len(), refr.len())
}

pub(crate) fn meteor_from_counts(m: usize, chunks: usize, c_len: usize, r_len: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c_len as f64;
    let r = m as f64 / r_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<Vec<String>, f64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Corpus CIDEr (base form, n = 1..4, scaled by 10). Document frequencies
/// come from the references; a zero document frequency is treated as one.
pub fn cider(
    candidates: &BTreeMap<String, String>,
    references: &BTreeMap<String, Vec<String>>,
) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(id) = candidates
        .keys()
        .find(|k| !references.contains_key(*k))
        .or_else(|| references.keys().find(|k| !candidates.contains_key(*k)))
    {
        return Err(MetricError::IdMismatch(id.clone()));
    }
    let n_docs = candidates.len() as f64;
    let mut total = 0.0;
    let cand_tokens: BTreeMap<&String, Vec<String>> =
        candidates.iter().map(|(k, v)| (k, tokenize(v))).collect();
    let ref_tokens: BTreeMap<&String, Vec<Vec<String>>> = references
        .iter()
        .map(|(k, v)| (k, v.iter().map(|r| tokenize(r)).collect()))
        .collect();
    let mut per_id: BTreeMap<&String, f64> = candidates.keys().map(|k| (k, 0.0)).collect();
    for n in 1..=4 {
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for refs in ref_tokens.values() {
            let mut seen: std::collections::HashSet<Vec<String>> = std::collections::HashSet::new();
            for r in refs {
                seen.extend(ngrams(r, n).into_keys());
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        let vectorize = |counts: HashMap<Vec<String>, f64>| -> HashMap<Vec<String>, f64> {
            counts
                .into_iter()
                .map(|(g, tf)| {
                    let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                    let w = tf * (n_docs / d).ln();
                    (g, w)
                })
                .collect()
        };
        for (id, cand) in &cand_tokens {
            let cv = vectorize(ngrams(cand, n));
            let refs = &ref_tokens[id];
            let mut sim = 0.0;
            for r in refs {
                sim += cosine(&cv, &vectorize(ngrams(r, n)));
            }
            if !refs.is_empty() {
                *per_id.get_mut(id).expect("id") += sim / refs.len() as f64 / 4.0;
            }
        }
    }
    for v in per_id.values() {
        total += 10.0 * v;
    }
    Ok(total / n_docs)
}

fn cosine(a: &HashMap<Vec<String>, f64>, b: &HashMap<Vec<String>, f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().map(|(g, v)| v * b.get(g).copied().unwrap_or(0.0)).sum();
    dot / (na * nb)
}

/// Character-level edit distance divided by the reference length.
pub fn char_error_rate(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<char> = hypothesis.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return if h.is_empty() { 0.0 } else { 1.0 };
    }
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    for (i, rc) in r.iter().enumerate() {
        let mut cur = vec![i + 1; h.len() + 1];
        for (j, hc) in h.iter().enumerate() {
            let sub = prev[j] + usize::from(rc != hc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[h.len()] as f64 / r.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_keeps_boxes_whole() {
        assert_eq!(
            tokenize("It is at {1,  2, 3 , 4}, Left of the Red square."),
            vec!["it", "is", "at", "{1,2,3,4}", "left", "of", "the", "red", "square"]
        );
    }

    #[test]
    fn bleu_fixtures() {
        assert_eq!(bleu1("the cat sat", &["the cat sat"]).score, 1.0);
        let b = bleu1("the cat", &["the cat sat"]).score;
        assert!((b - (1.0f64 - 1.5).exp()).abs() < 1e-15);
        assert!((b - 0.606_530_659_712_633).abs() < 1e-12);
        assert!((bleu1("a a a", &["a b"]).score - 1.0 / 3.0).abs() < 1e-15);
        let e = bleu1("  ", &["a"]);
        assert!(e.empty_candidate && e.score == 0.0);
    }

    #[test]
    fn bleu_uses_closest_reference_length() {
        // c = 2, refs of length 3 and 6: r = 3
        let s = bleu1("a b", &["a b c d e f", "a b c"]).score;
        assert!((s - (1.0f64 - 1.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn rouge_fixtures() {
        let r = rouge1("the cat sat", "the cat");
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        let d = rouge1("x y", "a b");
        assert_eq!((d.precision, d.recall, d.f1), (0.0, 0.0, 0.0));
        assert_eq!(rouge1("a b", "a b").f1, 1.0);
    }

    #[test]
    fn meteor_identical_strings() {
        let s = meteor_lite("a b c d e", "a b c d e");
        assert!((s - (1.0 - 0.5 / 125.0)).abs() < 1e-15);
        assert!((s - 0.996).abs() < 1e-12);
    }

    #[test]
    fn meteor_reordered() {
        // "the cat" stays contiguous, "sat" moves: 2 chunks over 3 matches
        let (m, chunks) = meteor_alignment(&tokenize("the cat sat"), &tokenize("sat the cat"));
        assert_eq!((m, chunks), (3, 2));
        let s = meteor_lite("the cat sat", "sat the cat");
        assert!((s - (1.0 - 0.5 * (2.0f64 / 3.0).powi(3))).abs() < 1e-15);
    }

    #[test]
    fn meteor_stem_and_disjoint() {
        assert_eq!(meteor_lite("dogs", "cats"), 0.0);
        assert!(meteor_lite("jumping dogs", "jumped dog") > 0.9);
    }

    #[test]
    fn stemmer_examples() {
        assert_eq!(stem("jumping"), "jump");
        assert_eq!(stem("boxes"), "box");
        assert_eq!(stem("class"), "class");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("{1,2,3,4}"), "{1,2,3,4}");
    }

    #[test]
    fn cider_degenerate_and_disjoint() {
        let one = |s: &str| BTreeMap::from([("a".to_string(), s.to_string())]);
        let refs = BTreeMap::from([("a".to_string(), vec!["the red square".to_string()])]);
        assert_eq!(cider(&one("the red square"), &refs).unwrap(), 0.0);

        let cands = BTreeMap::from([
            ("a".to_string(), "zzz yyy".to_string()),
            ("b".to_string(), "blue circle".to_string()),
        ]);
        let refs = BTreeMap::from([
            ("a".to_string(), vec!["red square".to_string()]),
            ("b".to_string(), vec!["green triangle".to_string()]),
        ]);
        assert_eq!(cider(&cands, &refs).unwrap(), 0.0);
    }

    #[test]
    fn cider_id_mismatch() {
        let cands = BTreeMap::from([("a".to_string(), "x".to_string())]);
        let refs = BTreeMap::from([("b".to_string(), vec!["x".to_string()])]);
        assert!(matches!(cider(&cands, &refs), Err(MetricError::IdMismatch(_))));
    }

    #[test]
    fn cer_examples() {
        assert_eq!(char_error_rate("abc", "abc"), 0.0);
        assert_eq!(char_error_rate("abd", "abc"), 1.0 / 3.0);
        assert_eq!(char_error_rate("", "abcd"), 1.0);
        assert_eq!(char_error_rate("kitten", "sitting"), 3.0 / 7.0);
    }
}
