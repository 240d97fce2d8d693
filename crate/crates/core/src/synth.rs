//! Seeded generators for the bundled sample data and for test fixtures.
//!
//! Verses are bags of topic words, a filler, an optional group mention and an
//! optional sentiment word. Words are shuffled so that n-grams around
//! sentiment words vary, which keeps only the sentiment words themselves
//! above the salience threshold.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{GroupEntry, GroupList, MentionLexicon, Poem, Verse};
use crate::sentiment::SentimentLabel;

const TOPICS: [[&str; 6]; 20] = [
    ["sea", "wave", "shore", "tide", "salt", "foam"],
    ["forest", "pine", "moss", "root", "fern", "bark"],
    ["city", "street", "tower", "bridge", "lamp", "crowd"],
    ["winter", "snow", "frost", "ice", "hearth", "sleet"],
    ["summer", "field", "wheat", "heat", "hay", "noon"],
    ["night", "moon", "star", "shadow", "owl", "lantern"],
    ["river", "stream", "reed", "bank", "ferry", "current"],
    ["mountain", "peak", "stone", "cliff", "ridge", "cloud"],
    ["garden", "rose", "lily", "bloom", "seed", "petal"],
    ["war", "drum", "banner", "sword", "march", "trench"],
    ["home", "door", "table", "bread", "window", "chair"],
    ["storm", "thunder", "rain", "lightning", "gale", "sky"],
    ["morning", "dawn", "dew", "sun", "lark", "mist"],
    ["music", "song", "harp", "bell", "chord", "choir"],
    ["harvest", "apple", "barn", "orchard", "cider", "plough"],
    ["desert", "sand", "dune", "camel", "oasis", "wind"],
    ["church", "altar", "candle", "prayer", "steeple", "hymn"],
    ["ship", "sail", "mast", "anchor", "deck", "harbor"],
    ["school", "book", "chalk", "lesson", "slate", "ink"],
    ["market", "coin", "stall", "silk", "spice", "scale"],
];

const FILLERS: [&str; 16] = [
    "and", "in", "of", "with", "under", "through", "softly", "again", "still", "slowly", "there",
    "once", "she", "he", "her", "his",
];

pub const NEGATIVE_WORDS: [&str; 12] = [
    "cruel", "bitter", "grief", "broken", "weeping", "lonely", "dying", "sorrow", "wretched",
    "hateful", "mourning", "despair",
];

pub const POSITIVE_WORDS: [&str; 12] = [
    "sweet", "bright", "joy", "gentle", "golden", "smiling", "happy", "tender", "glad", "lovely",
    "blessed", "delight",
];

/// Rates for the next verse's label as (negative, positive); the rest is no impact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelRates {
    pub negative: f64,
    pub positive: f64,
}

impl LabelRates {
    fn draw<R: Rng>(&self, rng: &mut R) -> SentimentLabel {
        let u: f64 = rng.random();
        if u < self.negative {
            SentimentLabel::Negative
        } else if u < self.negative + self.positive {
            SentimentLabel::Positive
        } else {
            SentimentLabel::NoImpact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSpec {
    pub poems: usize,
    pub min_verses: usize,
    pub max_verses: usize,
    /// Probability that a verse mentions a demographic group.
    pub demographic_rate: f64,
    /// Probability that a verse mentions an animal group.
    pub other_rate: f64,
    /// Label rates of a verse that follows a demographic mention.
    pub after_demographic: LabelRates,
    /// Label rates everywhere else (including first verses).
    pub elsewhere: LabelRates,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            poems: 200,
            min_verses: 4,
            max_verses: 6,
            demographic_rate: 0.25,
            other_rate: 0.15,
            after_demographic: LabelRates {
                negative: 0.25,
                positive: 0.13,
            },
            elsewhere: LabelRates {
                negative: 0.13,
                positive: 0.08,
            },
            seed: 7,
        }
    }
}

/// Generated poems plus the label each verse was generated with.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub poems: Vec<Poem>,
    pub labels: Vec<Vec<SentimentLabel>>,
}

impl SynthCorpus {
    pub fn verse_count(&self) -> usize {
        self.poems.iter().map(|p| p.verses.len()).sum()
    }

    /// Drops verses from the end so that at most `n` remain.
    pub fn truncate_verses(&mut self, n: usize) {
        let mut kept = 0;
        let mut poems = Vec::new();
        let mut labels = Vec::new();
        for (mut p, mut l) in self.poems.drain(..).zip(self.labels.drain(..)) {
            let room = n - kept;
            if room == 0 {
                break;
            }
            p.verses.truncate(room);
            l.truncate(room);
            kept += p.verses.len();
            poems.push(p);
            labels.push(l);
        }
        self.poems = poems;
        self.labels = labels;
    }

    /// One `{"poem_id", "position", "text"}` object per line.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            poem_id: &'a str,
            position: usize,
            text: &'a str,
        }
        let mut out = String::new();
        for p in &self.poems {
            for v in &p.verses {
                let row = Row {
                    poem_id: &p.id,
                    position: v.position,
                    text: &v.text,
                };
                out.push_str(&serde_json::to_string(&row).expect("row serializes"));
                out.push('\n');
            }
        }
        out
    }
}

fn groups_of(list: GroupList) -> Vec<GroupEntry> {
    MentionLexicon::default()
        .groups()
        .iter()
        .filter(|g| g.list == list)
        .cloned()
        .collect()
}

struct VerseMaker {
    demographic: Vec<GroupEntry>,
    other: Vec<GroupEntry>,
}

impl VerseMaker {
    fn new() -> Self {
        VerseMaker {
            demographic: groups_of(GroupList::Demographic),
            other: groups_of(GroupList::Other),
        }
    }

    fn mention<R: Rng>(&self, rng: &mut R, list: GroupList) -> String {
        let pool = match list {
            GroupList::Demographic => &self.demographic,
            GroupList::Other => &self.other,
        };
        let g = pool.choose(rng).expect("non-empty group list");
        let surface = if rng.random_bool(0.5) {
            &g.singular
        } else {
            &g.plural
        };
        format!("the {surface}")
    }

    fn verse<R: Rng>(
        &self,
        rng: &mut R,
        topic: usize,
        label: SentimentLabel,
        mention: Option<GroupList>,
    ) -> String {
        let mut parts: Vec<String> = TOPICS[topic]
            .choose_multiple(rng, 2)
            .map(|w| w.to_string())
            .collect();
        parts.push(FILLERS.choose(rng).expect("fillers").to_string());
        match label {
            SentimentLabel::Negative => {
                parts.push(NEGATIVE_WORDS.choose(rng).expect("words").to_string())
            }
            SentimentLabel::Positive => {
                parts.push(POSITIVE_WORDS.choose(rng).expect("words").to_string())
            }
            SentimentLabel::Mixed => {
                parts.push(NEGATIVE_WORDS.choose(rng).expect("words").to_string());
                parts.push(POSITIVE_WORDS.choose(rng).expect("words").to_string());
            }
            _ => {}
        }
        parts.shuffle(rng);
        if let Some(list) = mention {
            // Half of the mentions open the verse, as in "The women ...".
            let at = if rng.random_bool(0.5) {
                0
            } else {
                rng.random_range(0..=parts.len())
            };
            parts.insert(at, self.mention(rng, list));
        }
        capitalize(&parts.join(" "))
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Poems where the label of each verse depends on whether the previous verse
/// mentions a demographic group.
pub fn generate_corpus(spec: &CorpusSpec) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let maker = VerseMaker::new();
    let mut poems = Vec::with_capacity(spec.poems);
    let mut labels = Vec::with_capacity(spec.poems);
    for p in 0..spec.poems {
        let id = format!("synth{p:05}");
        let topic = rng.random_range(0..TOPICS.len());
        let n = rng.random_range(spec.min_verses..=spec.max_verses);
        let mut verses = Vec::with_capacity(n);
        let mut poem_labels = Vec::with_capacity(n);
        let mut previous_demographic = false;
        for i in 0..n {
            let rates = if previous_demographic {
                &spec.after_demographic
            } else {
                &spec.elsewhere
            };
            let label = rates.draw(&mut rng);
            let u: f64 = rng.random();
            let mention = if u < spec.demographic_rate {
                Some(GroupList::Demographic)
            } else if u < spec.demographic_rate + spec.other_rate {
                Some(GroupList::Other)
            } else {
                None
            };
            previous_demographic = mention == Some(GroupList::Demographic);
            verses.push(Verse::new(
                &maker.verse(&mut rng, topic, label, mention),
                id.clone(),
                i,
            ));
            poem_labels.push(label);
        }
        poems.push(Poem { id, verses });
        labels.push(poem_labels);
    }
    SynthCorpus { poems, labels }
}

/// Labeled sentiment rows as `id<TAB>text<TAB>label` with labels -1, 0, 1 and
/// 2 (mixed, dropped on load). Returns (train, dev, test) file contents.
pub fn sentiment_tsv(train: usize, dev: usize, test: usize, seed: u64) -> (String, String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maker = VerseMaker::new();
    let mut next_id = 0usize;
    let mut file = |n: usize, rng: &mut ChaCha8Rng| {
        let mut out = String::new();
        for _ in 0..n {
            let (label, code) = match rng.random_range(0..20) {
                0..=3 => (SentimentLabel::Negative, "-1"),
                4..=6 => (SentimentLabel::Positive, "1"),
                7 => (SentimentLabel::Mixed, "2"),
                _ => (SentimentLabel::NoImpact, "0"),
            };
            let mention = match rng.random_range(0..5) {
                0 => Some(GroupList::Demographic),
                1 => Some(GroupList::Other),
                _ => None,
            };
            let topic = rng.random_range(0..TOPICS.len());
            let text = maker.verse(rng, topic, label, mention);
            out.push_str(&format!("{next_id}\t{text}\t{code}\n"));
            next_id += 1;
        }
        out
    };
    let a = file(train, &mut rng);
    let b = file(dev, &mut rng);
    let c = file(test, &mut rng);
    (a, b, c)
}

/// Pairs whose input and response share a colour and an object word, so the
/// pairing is learnable from lexical overlap alone.
pub fn descent_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    const COLORS: [&str; 8] = [
        "red", "blue", "green", "grey", "white", "black", "amber", "violet",
    ];
    let objects: Vec<&str> = TOPICS.iter().flat_map(|t| t.iter().copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<(usize, usize)> = (0..COLORS.len())
        .flat_map(|c| (0..objects.len()).map(move |o| (c, o)))
        .collect();
    keys.shuffle(&mut rng);
    keys.truncate(n);
    keys.into_iter()
        .map(|(c, o)| {
            let f1 = FILLERS.choose(&mut rng).expect("fillers");
            let f2 = FILLERS.choose(&mut rng).expect("fillers");
            let f3 = FILLERS.choose(&mut rng).expect("fillers");
            (
                format!("{f1} the {} {} {f2}", COLORS[c], objects[o]),
                format!("{} {f3} {}", objects[o], COLORS[c]),
            )
        })
        .collect()
}
