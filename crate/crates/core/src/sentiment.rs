//! Poem sentiment labels, the annotator-agreement filter, and a multinomial
//! logistic regression classifier over word n-gram presence features.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    Negative,
    NoImpact,
    Positive,
    Mixed,
    Nonsense,
}

/// The three classes the classifier predicts, in tie-break order.
pub const CLASSES: [SentimentLabel; 3] = [
    SentimentLabel::Negative,
    SentimentLabel::NoImpact,
    SentimentLabel::Positive,
];

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 5] = [
        SentimentLabel::Negative,
        SentimentLabel::NoImpact,
        SentimentLabel::Positive,
        SentimentLabel::Mixed,
        SentimentLabel::Nonsense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::NoImpact => "no_impact",
            SentimentLabel::Positive => "positive",
            SentimentLabel::Mixed => "mixed",
            SentimentLabel::Nonsense => "nonsense",
        }
    }

    /// negative = -1, no impact = 0, positive = +1.
    pub fn numeric_score(self) -> Result<i8> {
        match self {
            SentimentLabel::Negative => Ok(-1),
            SentimentLabel::NoImpact => Ok(0),
            SentimentLabel::Positive => Ok(1),
            other => Err(Error::NoNumericValue(other.as_str())),
        }
    }

    pub fn is_polarity(self) -> bool {
        self.class_index().is_some()
    }

    pub fn class_index(self) -> Option<usize> {
        CLASSES.iter().position(|&c| c == self)
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedVerse {
    pub text: String,
    pub label_a: SentimentLabel,
    pub label_b: SentimentLabel,
}

/// A verse with an agreed three-class label. `split` is `None` when the
/// source did not assign one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledVerse {
    pub text: String,
    pub label: SentimentLabel,
    pub split: Option<Split>,
}

/// Keeps a sample only if both annotators agree on negative, no impact or positive.
pub fn resolve_annotations(a: &AnnotatedVerse) -> Option<LabeledVerse> {
    (a.label_a == a.label_b && a.label_a.is_polarity()).then(|| LabeledVerse {
        text: a.text.clone(),
        label: a.label_a,
        split: None,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub negative: usize,
    pub no_impact: usize,
    pub positive: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.negative + self.no_impact + self.positive
    }

    pub fn add(&mut self, label: SentimentLabel) {
        match label {
            SentimentLabel::Negative => self.negative += 1,
            SentimentLabel::Positive => self.positive += 1,
            _ => self.no_impact += 1,
        }
    }

    /// Row percentages; all zero for an empty row.
    pub fn percentages(&self) -> [f64; 3] {
        let total = self.total();
        if total == 0 {
            return [0.0; 3];
        }
        let t = total as f64;
        [
            100.0 * self.negative as f64 / t,
            100.0 * self.no_impact as f64 / t,
            100.0 * self.positive as f64 / t,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: LabelCounts,
    pub dev: LabelCounts,
    pub test: LabelCounts,
    pub unassigned: LabelCounts,
}

impl DatasetStats {
    pub fn render(&self) -> String {
        let mut out = String::from("Sentiment score   # train   # dev   # test\n");
        type Column = fn(&LabelCounts) -> usize;
        let rows: [(&str, Column); 3] = [
            ("negative", |c| c.negative),
            ("no impact", |c| c.no_impact),
            ("positive", |c| c.positive),
        ];
        for (name, get) in rows {
            out.push_str(&format!(
                "{:<16} {:>8} {:>7} {:>8}\n",
                name,
                get(&self.train),
                get(&self.dev),
                get(&self.test)
            ));
        }
        out
    }
}

pub fn dataset_stats(ds: &[LabeledVerse]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for v in ds {
        let row = match v.split {
            Some(Split::Train) => &mut stats.train,
            Some(Split::Dev) => &mut stats.dev,
            Some(Split::Test) => &mut stats.test,
            None => &mut stats.unassigned,
        };
        row.add(v.label);
    }
    stats
}

/// Maps raw label strings found in dataset files onto labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping(pub BTreeMap<String, SentimentLabel>);

impl Default for LabelMapping {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        for (raw, label) in [
            ("-1", SentimentLabel::Negative),
            ("0", SentimentLabel::NoImpact),
            ("1", SentimentLabel::Positive),
            ("2", SentimentLabel::Mixed),
        ] {
            map.insert(raw.to_string(), label);
        }
        for label in SentimentLabel::ALL {
            map.insert(label.as_str().to_string(), label);
        }
        map.insert("no impact".to_string(), SentimentLabel::NoImpact);
        LabelMapping(map)
    }
}

impl LabelMapping {
    pub fn get(&self, raw: &str) -> Option<SentimentLabel> {
        self.0.get(raw.trim()).copied()
    }
}

/// Rows of a labelled file that were not kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRows {
    pub mixed_or_nonsense: usize,
    pub disagreement: usize,
}

/// Reads `id<TAB>verse_text<TAB>label` lines, keeping three-class labels.
pub fn read_labeled_tsv<R: BufRead>(
    reader: R,
    split: Option<Split>,
    mapping: &LabelMapping,
) -> Result<(Vec<LabeledVerse>, DroppedRows)> {
    let mut out = Vec::new();
    let mut dropped = DroppedRows::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<sentiment tsv>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [_id, text, raw] = fields.as_slice() else {
            return Err(Error::parse(
                "sentiment tsv",
                i + 1,
                "expected 3 tab-separated fields",
            ));
        };
        let label = mapping.get(raw).ok_or_else(|| {
            Error::parse("sentiment tsv", i + 1, format!("unknown label {raw:?}"))
        })?;
        if !label.is_polarity() {
            dropped.mixed_or_nonsense += 1;
            continue;
        }
        out.push(LabeledVerse {
            text: text.to_string(),
            label,
            split,
        });
    }
    Ok((out, dropped))
}

/// Reads `id<TAB>text<TAB>label_a<TAB>label_b` lines and applies the agreement filter.
pub fn read_annotation_tsv<R: BufRead>(
    reader: R,
    mapping: &LabelMapping,
) -> Result<(Vec<LabeledVerse>, DroppedRows)> {
    let mut out = Vec::new();
    let mut dropped = DroppedRows::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<annotation tsv>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [_id, text, a, b] = fields.as_slice() else {
            return Err(Error::parse(
                "annotation tsv",
                i + 1,
                "expected 4 tab-separated fields",
            ));
        };
        let parse = |raw: &str| {
            mapping.get(raw).ok_or_else(|| {
                Error::parse("annotation tsv", i + 1, format!("unknown label {raw:?}"))
            })
        };
        let annotated = AnnotatedVerse {
            text: text.to_string(),
            label_a: parse(a)?,
            label_b: parse(b)?,
        };
        match resolve_annotations(&annotated) {
            Some(v) => out.push(v),
            None if annotated.label_a != annotated.label_b => dropped.disagreement += 1,
            None => dropped.mixed_or_nonsense += 1,
        }
    }
    Ok((out, dropped))
}

/// Loads `train.tsv`, `dev.tsv` and `test.tsv` from a directory. When those
/// are absent, `data.tsv` is loaded and split 80/10/10 (stratified, seeded).
pub fn load_dataset_dir(
    dir: &Path,
    mapping: &LabelMapping,
    seed: u64,
) -> Result<(Vec<LabeledVerse>, DroppedRows)> {
    let open = |name: &str| -> Result<Option<std::io::BufReader<std::fs::File>>> {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(std::io::BufReader::new(file)))
    };
    let mut all = Vec::new();
    let mut dropped = DroppedRows::default();
    let splits = [
        ("train.tsv", Split::Train),
        ("dev.tsv", Split::Dev),
        ("test.tsv", Split::Test),
    ];
    let mut found = false;
    for (name, split) in splits {
        if let Some(reader) = open(name)? {
            found = true;
            let (rows, d) = read_labeled_tsv(reader, Some(split), mapping)?;
            all.extend(rows);
            dropped.mixed_or_nonsense += d.mixed_or_nonsense;
        }
    }
    if found {
        return Ok((all, dropped));
    }
    match open("data.tsv")? {
        Some(reader) => {
            let (rows, d) = read_labeled_tsv(reader, None, mapping)?;
            Ok((stratified_split(rows, seed), d))
        }
        None => Err(Error::io(
            dir.join("train.tsv"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no sentiment dataset files"),
        )),
    }
}

/// Assigns 80/10/10 train/dev/test within each label, after a seeded shuffle.
pub fn stratified_split(mut rows: Vec<LabeledVerse>, seed: u64) -> Vec<LabeledVerse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut per_label: BTreeMap<SentimentLabel, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        per_label.entry(r.label).or_default().push(i);
    }
    for idx in per_label.values() {
        let n = idx.len();
        let n_dev = n / 10;
        let n_test = n / 10;
        for (k, &i) in idx.iter().enumerate() {
            rows[i].split = Some(if k < n_dev {
                Split::Dev
            } else if k < n_dev + n_test {
                Split::Test
            } else {
                Split::Train
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SentimentConfig {
    /// Largest word n-gram used as a feature.
    pub max_ngram: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SentimentConfig {
    fn default() -> Self {
        SentimentConfig {
            max_ngram: 2,
            epochs: 300,
            learning_rate: 1.0,
            l2: 1e-4,
            seed: 13,
        }
    }
}

fn features(text_in: &str, max_ngram: usize) -> BTreeSet<String> {
    let tokens = text::word_tokens(text_in);
    let mut out = BTreeSet::new();
    for n in 1..=max_ngram {
        for w in tokens.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

/// Trained classifier. Weights are stored class-major: `weights[c * F + f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentModel {
    pub config: SentimentConfig,
    pub vocabulary: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: [f64; 3],
    pub dev_accuracy: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub dev_accuracy: f64,
    pub train_accuracy: f64,
    /// Accuracy on the selection set after each epoch.
    pub history: Vec<f64>,
}

fn softmax3(scores: [f64; 3]) -> [f64; 3] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.map(|s| (s - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

fn argmax3(values: &[f64; 3]) -> usize {
    let mut best = 0;
    for c in 1..3 {
        if values[c] > values[best] {
            best = c;
        }
    }
    best
}

impl SentimentModel {
    fn with_index(mut self) -> Self {
        self.index = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        self
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let model: SentimentModel = serde_json::from_str(raw)?;
        let f = model.vocabulary.len();
        if model.weights.len() != 3 * f {
            return Err(Error::DimMismatch(model.weights.len(), 3 * f));
        }
        Ok(model.with_index())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn feature_ids(&self, text_in: &str) -> Vec<usize> {
        features(text_in, self.config.max_ngram)
            .iter()
            .filter_map(|f| self.index.get(f).copied())
            .collect()
    }

    fn scores(&self, ids: &[usize]) -> [f64; 3] {
        let f = self.vocabulary.len();
        let mut s = self.bias;
        for (c, sc) in s.iter_mut().enumerate() {
            for &i in ids {
                *sc += self.weights[c * f + i];
            }
        }
        s
    }

    /// Label and class probabilities (negative, no impact, positive). A text
    /// without tokens is `no_impact` with uniform probabilities.
    pub fn classify(&self, text_in: &str) -> (SentimentLabel, [f64; 3]) {
        if text::word_tokens(text_in).is_empty() {
            return (SentimentLabel::NoImpact, [1.0 / 3.0; 3]);
        }
        let probs = softmax3(self.scores(&self.feature_ids(text_in)));
        (CLASSES[argmax3(&probs)], probs)
    }

    pub fn label(&self, text_in: &str) -> SentimentLabel {
        self.classify(text_in).0
    }

    /// Numeric sentiment of the predicted label.
    pub fn score(&self, text_in: &str) -> i8 {
        match self.label(text_in) {
            SentimentLabel::Negative => -1,
            SentimentLabel::Positive => 1,
            _ => 0,
        }
    }

    pub fn accuracy(&self, data: &[LabeledVerse]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .iter()
            .filter(|v| self.label(&v.text) == v.label)
            .count();
        correct as f64 / data.len() as f64
    }
}

/// Full-batch gradient descent on the L2-regularised softmax loss. The
/// parameters with the best accuracy on `dev` (on `train` if `dev` is empty)
/// across epochs are returned.
pub fn train_sentiment(
    train: &[LabeledVerse],
    dev: &[LabeledVerse],
    cfg: &SentimentConfig,
) -> Result<(SentimentModel, TrainingSummary)> {
    for class in CLASSES {
        if !train.iter().any(|v| v.label == class) {
            return Err(Error::MissingClass(class.as_str()));
        }
    }
    if cfg.max_ngram == 0 || cfg.epochs == 0 {
        return Err(Error::Config(
            "max_ngram and epochs must be positive".into(),
        ));
    }
    let vocabulary: Vec<String> = train
        .iter()
        .flat_map(|v| features(&v.text, cfg.max_ngram))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let f = vocabulary.len();
    let mut model = SentimentModel {
        config: cfg.clone(),
        vocabulary,
        weights: vec![0.0; 3 * f],
        bias: [0.0; 3],
        dev_accuracy: 0.0,
        index: HashMap::new(),
    }
    .with_index();

    let encoded: Vec<(Vec<usize>, usize)> = train
        .iter()
        .map(|v| {
            let class = v
                .label
                .class_index()
                .expect("training labels are three-class");
            (model.feature_ids(&v.text), class)
        })
        .collect();
    let selection = if dev.is_empty() { train } else { dev };
    let n = encoded.len() as f64;

    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad_w = vec![0.0; 3 * f];
    for epoch in 0..cfg.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = [0.0; 3];
        for (ids, class) in &encoded {
            let p = softmax3(model.scores(ids));
            for c in 0..3 {
                let g = p[c] - if c == *class { 1.0 } else { 0.0 };
                grad_b[c] += g;
                for &i in ids {
                    grad_w[c * f + i] += g;
                }
            }
        }
        let lr = cfg.learning_rate;
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * (g / n + cfg.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= lr * g / n;
        }
        let acc = model.accuracy(selection);
        history.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best = model.clone();
        }
    }
    best.dev_accuracy = best_acc;
    let summary = TrainingSummary {
        best_epoch,
        dev_accuracy: best_acc,
        train_accuracy: best.accuracy(train),
        history,
    };
    Ok((best, summary))
}
