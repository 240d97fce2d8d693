//! Delete, retrieve, generate: n-gram salience, marker deletion, similar-context
//! marker retrieval and template recombination.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Verse;
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Negative,
    Positive,
}

impl Style {
    pub fn opposite(self) -> Style {
        match self {
            Style::Negative => Style::Positive,
            Style::Positive => Style::Negative,
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Negative => "negative",
            Style::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStrategy {
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub n_max: usize,
    /// Additive smoothing in the salience ratio.
    pub lambda: f64,
    /// Salience threshold a marker must exceed.
    pub gamma: f64,
    pub strategy: GenerationStrategy,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            n_max: 4,
            lambda: 1.0,
            gamma: 10.0,
            strategy: GenerationStrategy::Template,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.gamma.is_nan() || self.gamma <= 1.0 {
            return Err(Error::Config("gamma must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalienceEntry {
    pub count_negative: usize,
    pub count_positive: usize,
    pub salience_negative: f64,
    pub salience_positive: f64,
}

impl SalienceEntry {
    pub fn salience(&self, style: Style) -> f64 {
        match style {
            Style::Negative => self.salience_negative,
            Style::Positive => self.salience_positive,
        }
    }
}

/// Smoothed frequency ratios for every n-gram observed in either style corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceTable {
    pub lambda: f64,
    pub entries: BTreeMap<String, SalienceEntry>,
}

fn ngram_key<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

impl SalienceTable {
    pub fn get(&self, ngram: &str) -> Option<&SalienceEntry> {
        self.entries.get(ngram)
    }

    /// Salience of an n-gram; unobserved n-grams have ratio lambda/lambda = 1.
    pub fn salience<S: AsRef<str>>(&self, ngram: &[S], style: Style) -> f64 {
        self.entries
            .get(&ngram_key(ngram))
            .map_or(1.0, |e| e.salience(style))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `ngram<TAB>count_neg<TAB>count_pos<TAB>sal_neg<TAB>sal_pos`, sorted by n-gram.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                k, e.count_negative, e.count_positive, e.salience_negative, e.salience_positive
            ));
        }
        out
    }

    pub fn from_tsv(raw: &str, lambda: f64) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::parse("salience tsv", i + 1, m.to_string());
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let entry = SalienceEntry {
                count_negative: f[1].parse().map_err(|_| bad("bad count"))?,
                count_positive: f[2].parse().map_err(|_| bad("bad count"))?,
                salience_negative: f[3].parse().map_err(|_| bad("bad salience"))?,
                salience_positive: f[4].parse().map_err(|_| bad("bad salience"))?,
            };
            entries.insert(f[0].to_string(), entry);
        }
        Ok(SalienceTable { lambda, entries })
    }
}

fn count_ngrams(corpus: &[Vec<String>], n_max: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for tokens in corpus {
        for n in 1..=n_max {
            for w in tokens.windows(n) {
                *counts.entry(ngram_key(w)).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Counts every n-gram occurrence (n <= n_max) per style and stores
/// `salience_s(u) = (count_s(u) + lambda) / (count_other(u) + lambda)`.
pub fn compute_salience(
    negative: &[Vec<String>],
    positive: &[Vec<String>],
    cfg: &TransferConfig,
) -> SalienceTable {
    let neg = count_ngrams(negative, cfg.n_max);
    let pos = count_ngrams(positive, cfg.n_max);
    let mut entries = BTreeMap::new();
    for key in neg.keys().chain(pos.keys()) {
        if entries.contains_key(key) {
            continue;
        }
        let cn = neg.get(key).copied().unwrap_or(0);
        let cp = pos.get(key).copied().unwrap_or(0);
        let l = cfg.lambda;
        entries.insert(
            key.clone(),
            SalienceEntry {
                count_negative: cn,
                count_positive: cp,
                salience_negative: (cn as f64 + l) / (cp as f64 + l),
                salience_positive: (cp as f64 + l) / (cn as f64 + l),
            },
        );
    }
    SalienceTable {
        lambda: cfg.lambda,
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub tokens: Vec<String>,
    /// Offset of the first token in the original verse.
    pub start: usize,
}

/// A verse split into content tokens and the attribute markers removed from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedVerse {
    pub original: Vec<String>,
    pub content: Vec<String>,
    pub markers: Vec<Marker>,
    pub source_style: Style,
}

impl MarkedVerse {
    /// Re-inserts the markers at their recorded offsets.
    pub fn reconstruct(&self) -> Vec<String> {
        let mut out = self.content.clone();
        for m in &self.markers {
            let at = m.start.min(out.len());
            out.splice(at..at, m.tokens.iter().cloned());
        }
        out
    }
}

/// Greedy left-to-right deletion: at each position the longest n-gram whose
/// source-style salience exceeds gamma is removed and scanning resumes after it.
pub fn delete_markers(
    tokens: &[String],
    table: &SalienceTable,
    source_style: Style,
    cfg: &TransferConfig,
) -> MarkedVerse {
    let mut content = Vec::with_capacity(tokens.len());
    let mut markers = Vec::new();
    let mut i = 0;
    'scan: while i < tokens.len() {
        let longest = cfg.n_max.min(tokens.len() - i);
        for n in (1..=longest).rev() {
            let window = &tokens[i..i + n];
            if table.salience(window, source_style) > cfg.gamma {
                markers.push(Marker {
                    tokens: window.to_vec(),
                    start: i,
                });
                i += n;
                continue 'scan;
            }
        }
        content.push(tokens[i].clone());
        i += 1;
    }
    MarkedVerse {
        original: tokens.to_vec(),
        content,
        markers,
        source_style,
    }
}

/// A marker taken from the opposite-style pool, with the content it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMarker {
    pub tokens: Vec<String>,
    pub style: Style,
    pub context: Vec<String>,
}

struct PoolVector {
    weights: HashMap<String, f64>,
    norm: f64,
    tie_key: (String, String),
}

/// Opposite-style verses with at least one marker, indexed for TF-IDF lookup.
pub struct MarkerPool {
    verses: Vec<MarkedVerse>,
    vectors: Vec<PoolVector>,
    doc_freq: HashMap<String, usize>,
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    tf
}

impl MarkerPool {
    /// Verses without markers are skipped.
    pub fn new(verses: Vec<MarkedVerse>) -> Self {
        let verses: Vec<MarkedVerse> = verses
            .into_iter()
            .filter(|v| !v.markers.is_empty())
            .collect();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for v in &verses {
            for term in term_counts(&v.content).keys() {
                *doc_freq.entry(term.to_string()).or_insert(0) += 1;
            }
        }
        let mut pool = MarkerPool {
            verses,
            vectors: Vec::new(),
            doc_freq,
        };
        pool.vectors = pool
            .verses
            .iter()
            .map(|v| {
                let weights = pool.tfidf(&v.content);
                let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
                PoolVector {
                    weights,
                    norm,
                    tie_key: (v.content.join(" "), v.markers[0].tokens.join(" ")),
                }
            })
            .collect();
        pool
    }

    pub fn verses(&self) -> &[MarkedVerse] {
        &self.verses
    }

    pub fn len(&self) -> usize {
        self.verses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verses.is_empty()
    }

    /// Smoothed inverse document frequency over the pool contents.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.verses.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    fn tfidf(&self, tokens: &[String]) -> HashMap<String, f64> {
        term_counts(tokens)
            .into_iter()
            .map(|(t, tf)| (t.to_string(), tf * self.idf(t)))
            .collect()
    }

    /// Cosine similarity between `content` and pool entry `i`.
    pub fn similarity(&self, content: &[String], i: usize) -> f64 {
        let query = self.tfidf(content);
        let qn = query.values().map(|w| w * w).sum::<f64>().sqrt();
        self.cosine(&query, qn, i)
    }

    fn cosine(&self, query: &HashMap<String, f64>, query_norm: f64, i: usize) -> f64 {
        let doc = &self.vectors[i];
        if query_norm == 0.0 || doc.norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = query
            .iter()
            .filter_map(|(t, w)| doc.weights.get(t).map(|d| w * d))
            .sum();
        dot / (query_norm * doc.norm)
    }
}

/// The first marker of the pool verse whose content is most TF-IDF-similar to
/// `m.content`. Ties go to the lexicographically smallest content, then marker.
pub fn retrieve_marker(m: &MarkedVerse, pool: &MarkerPool) -> Result<AttributeMarker> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let query = pool.tfidf(&m.content);
    let qn = query.values().map(|w| w * w).sum::<f64>().sqrt();
    let mut best = 0;
    let mut best_sim = pool.cosine(&query, qn, 0);
    for i in 1..pool.len() {
        let sim = pool.cosine(&query, qn, i);
        if sim > best_sim
            || (sim == best_sim && pool.vectors[i].tie_key < pool.vectors[best].tie_key)
        {
            best = i;
            best_sim = sim;
        }
    }
    let chosen = &pool.verses[best];
    Ok(AttributeMarker {
        tokens: chosen.markers[0].tokens.clone(),
        style: chosen.source_style,
        context: chosen.content.clone(),
    })
}

/// Inserts the retrieved marker where the first marker was deleted, or at the
/// end when nothing was deleted.
pub fn generate_styled(m: &MarkedVerse, a: &AttributeMarker, cfg: &TransferConfig) -> Vec<String> {
    match cfg.strategy {
        GenerationStrategy::Template => {
            let at = m
                .markers
                .first()
                .map_or(m.content.len(), |mk| mk.start.min(m.content.len()));
            let mut out = Vec::with_capacity(m.content.len() + a.tokens.len());
            out.extend_from_slice(&m.content[..at]);
            out.extend(a.tokens.iter().cloned());
            out.extend_from_slice(&m.content[at..]);
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub verse: Verse,
    /// Set when the verse had no negative marker and was returned unchanged.
    pub no_op: bool,
    pub marked: MarkedVerse,
    pub attribute: Option<AttributeMarker>,
}

/// Negative to positive transfer of one verse.
pub fn to_positive(
    v: &Verse,
    table: &SalienceTable,
    positive_pool: &MarkerPool,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    let tokens = text::word_tokens(&v.text);
    let marked = delete_markers(&tokens, table, Style::Negative, cfg);
    if marked.markers.is_empty() {
        return Ok(TransferOutcome {
            verse: v.clone(),
            no_op: true,
            marked,
            attribute: None,
        });
    }
    let attribute = retrieve_marker(&marked, positive_pool)?;
    let generated = generate_styled(&marked, &attribute, cfg);
    Ok(TransferOutcome {
        verse: Verse {
            text: text::detokenize(&generated),
            poem_id: v.poem_id.clone(),
            position: v.position,
        },
        no_op: false,
        marked,
        attribute: Some(attribute),
    })
}

/// Salience table plus positive marker pool, built from style-partitioned verses.
pub struct StyleTransfer {
    pub config: TransferConfig,
    pub table: SalienceTable,
    pub positive_pool: MarkerPool,
}

impl StyleTransfer {
    /// Builds the table from negative and positive verse texts; the positive
    /// pool holds every positive verse with at least one positive marker.
    pub fn build(negative: &[String], positive: &[String], cfg: TransferConfig) -> Result<Self> {
        cfg.validate()?;
        let neg: Vec<Vec<String>> = negative.iter().map(|t| text::word_tokens(t)).collect();
        let pos: Vec<Vec<String>> = positive.iter().map(|t| text::word_tokens(t)).collect();
        let table = compute_salience(&neg, &pos, &cfg);
        Ok(StyleTransfer::from_table(table, &pos, cfg))
    }

    pub fn from_table(table: SalienceTable, positive: &[Vec<String>], cfg: TransferConfig) -> Self {
        let marked = positive
            .iter()
            .map(|t| delete_markers(t, &table, Style::Positive, &cfg))
            .collect();
        StyleTransfer {
            positive_pool: MarkerPool::new(marked),
            table,
            config: cfg,
        }
    }

    pub fn to_positive(&self, v: &Verse) -> Result<TransferOutcome> {
        to_positive(v, &self.table, &self.positive_pool, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn table_with(salient: &[(&str, f64)]) -> SalienceTable {
        let entries = salient
            .iter()
            .map(|&(k, s)| {
                (
                    k.to_string(),
                    SalienceEntry {
                        count_negative: 0,
                        count_positive: 0,
                        salience_negative: s,
                        salience_positive: 1.0 / s,
                    },
                )
            })
            .collect();
        SalienceTable {
            lambda: 1.0,
            entries,
        }
    }

    #[test]
    fn salience_on_toy_corpus() {
        let neg = vec![toks("the cruel night"), toks("cruel fate")];
        let pos = vec![toks("the sweet day")];
        let table = compute_salience(&neg, &pos, &TransferConfig::default());
        let cruel = table.get("cruel").unwrap();
        assert_eq!(cruel.count_negative, 2);
        assert_eq!(cruel.salience_negative, 3.0);
        assert_eq!(table.get("the").unwrap().salience_negative, 1.0);
        assert!(table.get("moon").is_none());
        assert_eq!(table.salience(&["moon"], Style::Negative), 1.0);
        assert!(table.get("the cruel night").is_some());
    }

    #[test]
    fn config_validation() {
        assert!(TransferConfig::default().validate().is_ok());
        for bad in [
            TransferConfig {
                n_max: 0,
                ..Default::default()
            },
            TransferConfig {
                lambda: 0.0,
                ..Default::default()
            },
            TransferConfig {
                gamma: 1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn deletes_the_giants_markers() {
        let table = table_with(&[("warring", 20.0), ("angry", 15.0), ("cruel", 30.0)]);
        let m = delete_markers(
            &toks("like warring giants angry huge and cruel"),
            &table,
            Style::Negative,
            &TransferConfig::default(),
        );
        assert_eq!(m.content, toks("like giants huge and"));
        let markers: Vec<String> = m.markers.iter().map(|k| k.tokens.join(" ")).collect();
        assert_eq!(markers, vec!["warring", "angry", "cruel"]);
        assert_eq!(m.markers[2].start, 6);
        assert_eq!(m.reconstruct(), m.original);
    }

    #[test]
    fn verse_without_markers_is_identity() {
        let m = delete_markers(
            &toks("the sun rose"),
            &table_with(&[]),
            Style::Negative,
            &TransferConfig::default(),
        );
        assert_eq!(m.content, m.original);
        assert!(m.markers.is_empty());
    }

    #[test]
    fn longest_marker_wins() {
        let table = table_with(&[("angry huge", 12.0), ("angry", 11.0)]);
        let m = delete_markers(
            &toks("giants angry huge"),
            &table,
            Style::Negative,
            &TransferConfig::default(),
        );
        assert_eq!(m.markers.len(), 1);
        assert_eq!(m.markers[0].tokens, toks("angry huge"));
        assert_eq!(m.content, toks("giants"));
    }

    #[test]
    fn threshold_is_strict() {
        let table = table_with(&[("dark", 10.0)]);
        let m = delete_markers(
            &toks("the dark"),
            &table,
            Style::Negative,
            &TransferConfig::default(),
        );
        assert!(m.markers.is_empty());
    }

    fn marked(content: &str, marker: &str, start: usize) -> MarkedVerse {
        let content = toks(content);
        let mut original = content.clone();
        original.splice(start..start, toks(marker));
        MarkedVerse {
            original,
            content,
            markers: vec![Marker {
                tokens: toks(marker),
                start,
            }],
            source_style: Style::Positive,
        }
    }

    #[test]
    fn identical_content_is_retrieved() {
        let pool = MarkerPool::new(vec![
            marked("the river flows", "bright", 1),
            marked("a hill of stone", "sweet", 0),
        ]);
        let query = marked("a hill of stone", "cruel", 0);
        let got = retrieve_marker(&query, &pool).unwrap();
        assert_eq!(got.tokens, toks("sweet"));
        assert_eq!(got.style, Style::Positive);
        assert_eq!(got.context, toks("a hill of stone"));
    }

    #[test]
    fn ties_break_lexicographically() {
        let pool = MarkerPool::new(vec![
            marked("zeta", "glad", 0),
            marked("alpha", "sweet", 0),
            marked("alpha", "bright", 0),
        ]);
        let query = marked("unrelated", "cruel", 0);
        assert_eq!(
            retrieve_marker(&query, &pool).unwrap().tokens,
            toks("bright")
        );
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pool = MarkerPool::new(vec![]);
        assert!(matches!(
            retrieve_marker(&marked("a", "b", 0), &pool),
            Err(Error::EmptyPool)
        ));
        let unmarked = MarkedVerse {
            original: toks("a"),
            content: toks("a"),
            markers: vec![],
            source_style: Style::Positive,
        };
        assert!(MarkerPool::new(vec![unmarked]).is_empty());
    }

    #[test]
    fn template_generation() {
        let cfg = TransferConfig::default();
        let attr = |s: &str| AttributeMarker {
            tokens: toks(s),
            style: Style::Positive,
            context: vec![],
        };
        let tail = marked("like giants huge and", "cruel", 4);
        assert_eq!(
            generate_styled(&tail, &attr("sweet"), &cfg),
            toks("like giants huge and sweet")
        );

        let none = MarkedVerse {
            original: toks("the sun rose"),
            content: toks("the sun rose"),
            markers: vec![],
            source_style: Style::Negative,
        };
        assert_eq!(
            generate_styled(&none, &attr("bright"), &cfg),
            toks("the sun rose bright")
        );

        let mid = marked("a b c", "x", 1);
        let out = generate_styled(&mid, &attr("tender memory"), &cfg);
        assert_eq!(out, toks("a tender memory b c"));
        assert_eq!(out.len(), mid.content.len() + 2);
    }

    #[test]
    fn salience_tsv_round_trip() {
        let neg = vec![toks("the cruel night"), toks("cruel fate")];
        let pos = vec![toks("the sweet day")];
        let table = compute_salience(&neg, &pos, &TransferConfig::default());
        let tsv = table.to_tsv();
        assert!(tsv.starts_with("cruel\t2\t0\t3\t0.3333333333333333\n"));
        assert_eq!(SalienceTable::from_tsv(&tsv, 1.0).unwrap(), table);
    }

    #[test]
    fn pipeline_transfers_and_no_ops() {
        let mut negative = Vec::new();
        let mut positive = Vec::new();
        for i in 0..12 {
            negative.push(format!("w{i} cruel n{i}"));
            positive.push(format!("w{i} sweet n{i}"));
        }
        let st = StyleTransfer::build(&negative, &positive, TransferConfig::default()).unwrap();
        let out = st.to_positive(&Verse::detached("the cruel wind")).unwrap();
        assert!(!out.no_op);
        assert_eq!(out.verse.text, "the sweet wind");
        assert_eq!(out.marked.content, toks("the wind"));
        let same = st.to_positive(&Verse::detached("the quiet hill")).unwrap();
        assert!(same.no_op);
        assert_eq!(same.verse.text, "the quiet hill");
    }
}
