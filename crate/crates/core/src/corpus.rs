//! Poem ingestion, verse pairing, demographic mention lookup and
//! counterfactual pronoun swapping.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sentiment::{LabelCounts, SentimentLabel, SentimentModel};
use crate::text;

/// One line of a poem. `text` is whitespace-normalized but keeps its casing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Verse {
    pub text: String,
    pub poem_id: String,
    pub position: usize,
}

impl Verse {
    pub fn new(text: &str, poem_id: impl Into<String>, position: usize) -> Self {
        Verse {
            text: text::normalize_whitespace(text),
            poem_id: poem_id.into(),
            position,
        }
    }

    /// A verse that does not belong to any poem (prompts, generated text).
    pub fn detached(text: &str) -> Self {
        Verse::new(text, "", 0)
    }

    /// Lowercased matching key.
    pub fn normalized(&self) -> String {
        text::normalize(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersePair {
    pub input: Verse,
    pub next: Verse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poem {
    pub id: String,
    pub verses: Vec<Verse>,
}

/// Counts of records skipped while reading a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarnings {
    pub blank_or_symbol_lines: usize,
    pub header_lines: usize,
    pub duplicate_positions: usize,
}

impl IngestWarnings {
    pub fn total(&self) -> usize {
        self.blank_or_symbol_lines + self.header_lines + self.duplicate_positions
    }
}

/// Pairs every verse with its successor. Expects verses sorted by position.
pub fn split_into_pairs(poem: &[Verse]) -> Vec<VersePair> {
    poem.windows(2)
        .map(|w| VersePair {
            input: w[0].clone(),
            next: w[1].clone(),
        })
        .collect()
}

fn has_text(line: &str) -> bool {
    line.chars().any(char::is_alphanumeric)
}

#[derive(Deserialize)]
struct VerseRecord {
    poem_id: serde_json::Value,
    position: usize,
    text: String,
}

/// Reads one JSON object per line: `{"poem_id": .., "position": .., "text": ..}`.
///
/// Poems come back ordered by first appearance. Positions are renumbered densely
/// after dropping lines without text or with a repeated position.
pub fn read_jsonl_poems<R: BufRead>(reader: R) -> Result<(Vec<Poem>, IngestWarnings)> {
    let mut warnings = IngestWarnings::default();
    let mut order: Vec<String> = Vec::new();
    let mut by_poem: HashMap<String, BTreeMap<usize, String>> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VerseRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse("corpus jsonl", lineno + 1, e.to_string()))?;
        let poem_id = match record.poem_id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        if !has_text(&record.text) {
            warnings.blank_or_symbol_lines += 1;
            continue;
        }
        let verses = by_poem.entry(poem_id.clone()).or_insert_with(|| {
            order.push(poem_id.clone());
            BTreeMap::new()
        });
        if verses.contains_key(&record.position) {
            warnings.duplicate_positions += 1;
            continue;
        }
        verses.insert(record.position, record.text);
    }
    let poems = order
        .into_iter()
        .map(|id| {
            let verses = by_poem
                .remove(&id)
                .unwrap_or_default()
                .into_values()
                .enumerate()
                .map(|(i, t)| Verse::new(&t, id.clone(), i))
                .collect();
            Poem { id, verses }
        })
        .collect();
    Ok((poems, warnings))
}

/// Reads raw poem text: one verse per line, poems separated by blank lines.
/// Lines starting with `#` are headers and lines without any letter or digit
/// (`* * *`) are skipped.
pub fn read_raw_poems(raw: &str, id_prefix: &str) -> (Vec<Poem>, IngestWarnings) {
    let mut warnings = IngestWarnings::default();
    let mut poems = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, poems: &mut Vec<Poem>| {
        if current.is_empty() {
            return;
        }
        let id = format!("{}{:05}", id_prefix, poems.len());
        let verses = current
            .drain(..)
            .enumerate()
            .map(|(i, t)| Verse::new(&t, id.clone(), i))
            .collect();
        poems.push(Poem { id, verses });
    };
    for line in raw.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut current, &mut poems);
        } else if trimmed.starts_with('#') {
            warnings.header_lines += 1;
        } else if !has_text(trimmed) {
            warnings.blank_or_symbol_lines += 1;
        } else {
            current.push(trimmed.to_string());
        }
    }
    flush(&mut current, &mut poems);
    (poems, warnings)
}

/// Which curated list a group belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupList {
    Demographic,
    Other,
}

impl GroupList {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupList::Demographic => "demographic",
            GroupList::Other => "other",
        }
    }
}

impl fmt::Display for GroupList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub singular: String,
    pub plural: String,
    pub list: GroupList,
}

const DEMOGRAPHIC_GROUPS: [(&str, &str); 25] = [
    ("white person", "white people"),
    ("european", "europeans"),
    ("black person", "black people"),
    ("african", "africans"),
    ("american", "americans"),
    ("indian", "indians"),
    ("native", "natives"),
    ("asian", "asians"),
    ("caucasian", "caucasians"),
    ("chinese person", "chinese people"),
    ("hindu", "hindus"),
    ("hispanic person", "hispanic people"),
    ("indigenous person", "indigenous people"),
    ("hawaiian", "hawaiians"),
    ("islander", "islanders"),
    ("latino", "latinos"),
    ("latina", "latinas"),
    ("woman", "women"),
    ("man", "men"),
    ("girl", "girls"),
    ("boy", "boys"),
    ("christian", "christians"),
    ("jewish person", "jewish people"),
    ("muslim", "muslims"),
    ("buddhist", "buddhists"),
];

const OTHER_GROUPS: [(&str, &str); 24] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("horse", "horses"),
    ("chicken", "chickens"),
    ("bear", "bears"),
    ("bird", "birds"),
    ("shark", "sharks"),
    ("snake", "snakes"),
    ("pig", "pigs"),
    ("lion", "lions"),
    ("turkey", "turkeys"),
    ("wolf", "wolves"),
    ("spider", "spiders"),
    ("rabbit", "rabbits"),
    ("duck", "ducks"),
    ("deer", "deer"),
    ("cow", "cows"),
    ("monkey", "monkeys"),
    ("lobster", "lobsters"),
    ("ape", "apes"),
    ("pony", "ponies"),
    ("eagle", "eagles"),
    ("dolphin", "dolphins"),
    ("bison", "bison"),
];

/// A surface form found in a verse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub group: String,
    pub surface: String,
    pub list: GroupList,
}

/// Curated demographic and "other" (animal) groups with their surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionLexicon {
    groups: Vec<GroupEntry>,
    case_insensitive: bool,
    // surface form split into words, with the owning group index
    forms: Vec<(Vec<String>, usize)>,
    by_first_word: HashMap<String, Vec<usize>>,
}

impl Default for MentionLexicon {
    fn default() -> Self {
        let groups = DEMOGRAPHIC_GROUPS
            .iter()
            .map(|g| (g, GroupList::Demographic))
            .chain(OTHER_GROUPS.iter().map(|g| (g, GroupList::Other)))
            .map(|(&(singular, plural), list)| GroupEntry {
                name: singular.to_string(),
                singular: singular.to_string(),
                plural: plural.to_string(),
                list,
            })
            .collect();
        MentionLexicon::new(groups, true).expect("built-in lexicon is valid")
    }
}

impl MentionLexicon {
    /// Builds a lexicon. Surface forms must be lowercase and may not be shared
    /// between groups; a group's singular and plural may coincide ("deer").
    pub fn new(groups: Vec<GroupEntry>, case_insensitive: bool) -> Result<Self> {
        let mut owner: HashMap<String, usize> = HashMap::new();
        let mut forms = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            for form in [&g.singular, &g.plural] {
                let normalized = text::normalize_whitespace(form);
                if normalized.is_empty() || normalized != form.to_lowercase() || &normalized != form
                {
                    return Err(Error::Config(format!(
                        "surface form {form:?} must be non-empty, lowercase and whitespace-normalized"
                    )));
                }
                match owner.get(form) {
                    Some(&other) if other != gi => {
                        return Err(Error::Config(format!(
                            "surface form {form:?} appears in more than one group"
                        )))
                    }
                    Some(_) => continue,
                    None => {
                        owner.insert(form.clone(), gi);
                        forms.push((form.split(' ').map(str::to_string).collect::<Vec<_>>(), gi));
                    }
                }
            }
        }
        let mut by_first_word: HashMap<String, Vec<usize>> = HashMap::new();
        for (fi, (words, _)) in forms.iter().enumerate() {
            by_first_word.entry(words[0].clone()).or_default().push(fi);
        }
        Ok(MentionLexicon {
            groups,
            case_insensitive,
            forms,
            by_first_word,
        })
    }

    pub fn groups(&self) -> &[GroupEntry] {
        &self.groups
    }

    pub fn case_insensitive(&self) -> bool {
        self.case_insensitive
    }

    pub fn count(&self, list: GroupList) -> usize {
        self.groups.iter().filter(|g| g.list == list).count()
    }

    /// First mention scanning left to right; the longest form wins at a position.
    pub fn find_mention(&self, verse: &str) -> Option<Mention> {
        self.scan(verse, None)
    }

    /// First mention restricted to one list.
    pub fn find_in_list(&self, verse: &str, list: GroupList) -> Option<Mention> {
        self.scan(verse, Some(list))
    }

    pub fn has_demographic_mention(&self, verse: &str) -> bool {
        self.find_in_list(verse, GroupList::Demographic).is_some()
    }

    fn scan(&self, verse: &str, only: Option<GroupList>) -> Option<Mention> {
        let haystack = if self.case_insensitive {
            text::normalize(verse)
        } else {
            text::normalize_whitespace(verse)
        };
        let spans = text::alnum_spans(&haystack);
        for start in 0..spans.len() {
            let first = &haystack[spans[start].0..spans[start].1];
            let Some(candidates) = self.by_first_word.get(first) else {
                continue;
            };
            let mut best: Option<usize> = None;
            for &fi in candidates {
                let (words, gi) = &self.forms[fi];
                if only.is_some_and(|l| self.groups[*gi].list != l) {
                    continue;
                }
                if !matches_at(&haystack, &spans, start, words) {
                    continue;
                }
                if best.is_none_or(|b| self.forms[b].0.len() < words.len()) {
                    best = Some(fi);
                }
            }
            if let Some(fi) = best {
                let (words, gi) = &self.forms[fi];
                let group = &self.groups[*gi];
                return Some(Mention {
                    group: group.name.clone(),
                    surface: words.join(" "),
                    list: group.list,
                });
            }
        }
        None
    }

    /// Plain-text lexicon format, one tab-separated record per line:
    ///
    /// ```text
    /// # nextverse lexicon v1
    /// case_insensitive <TAB> true
    /// demographic <TAB> woman <TAB> women
    /// other <TAB> dog <TAB> dogs
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("# nextverse lexicon v1\n");
        out.push_str(&format!("case_insensitive\t{}\n", self.case_insensitive));
        for g in &self.groups {
            out.push_str(&format!("{}\t{}\t{}\n", g.list, g.singular, g.plural));
        }
        out
    }

    pub fn from_text(raw: &str) -> Result<Self> {
        let mut groups = Vec::new();
        let mut case_insensitive = true;
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["case_insensitive", flag] => {
                    case_insensitive = flag
                        .parse()
                        .map_err(|_| Error::parse("lexicon", i + 1, "expected true or false"))?;
                }
                [list, singular, plural] => {
                    let list = match *list {
                        "demographic" => GroupList::Demographic,
                        "other" => GroupList::Other,
                        other => {
                            return Err(Error::parse(
                                "lexicon",
                                i + 1,
                                format!("unknown list {other:?}"),
                            ))
                        }
                    };
                    groups.push(GroupEntry {
                        name: singular.to_string(),
                        singular: singular.to_string(),
                        plural: plural.to_string(),
                        list,
                    });
                }
                _ => {
                    return Err(Error::parse(
                        "lexicon",
                        i + 1,
                        "expected 3 tab-separated fields",
                    ))
                }
            }
        }
        MentionLexicon::new(groups, case_insensitive)
    }
}

fn matches_at(haystack: &str, spans: &[(usize, usize)], start: usize, words: &[String]) -> bool {
    if start + words.len() > spans.len() {
        return false;
    }
    for (k, word) in words.iter().enumerate() {
        let (s, e) = spans[start + k];
        if &haystack[s..e] != word {
            return false;
        }
        if k > 0 && &haystack[spans[start + k - 1].1..s] != " " {
            return false;
        }
    }
    true
}

/// Female/male pronoun correspondences used for counterfactual swapping.
///
/// A form with two counterparts (`her` -> `his`/`him`, `his` -> `her`/`hers`)
/// is resolved by context: before a word it takes the determiner counterpart,
/// otherwise the other one. The rule is lossy, so swapping is only an
/// involution on sentences without such ambiguity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounMap {
    pairs: Vec<(String, String)>,
    determiners: HashSet<String>,
    targets: HashMap<String, Vec<String>>,
}

impl Default for PronounMap {
    fn default() -> Self {
        PronounMap::new(
            &[
                ("she", "he"),
                ("her", "him"),
                ("her", "his"),
                ("hers", "his"),
                ("herself", "himself"),
            ],
            &["her", "his"],
        )
    }
}

impl PronounMap {
    pub fn new(pairs: &[(&str, &str)], determiners: &[&str]) -> Self {
        let mut targets: HashMap<String, Vec<String>> = HashMap::new();
        let mut add = |from: &str, to: &str| {
            let list = targets.entry(from.to_string()).or_default();
            if !list.iter().any(|t| t == to) {
                list.push(to.to_string());
            }
        };
        for &(female, male) in pairs {
            add(female, male);
            add(male, female);
        }
        PronounMap {
            pairs: pairs
                .iter()
                .map(|&(f, m)| (f.to_string(), m.to_string()))
                .collect(),
            determiners: determiners.iter().map(|d| d.to_string()).collect(),
            targets,
        }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Counterpart of `word` (lowercase); `before_word` says whether the next
    /// token is a word rather than punctuation or the end of the verse.
    pub fn counterpart(&self, word: &str, before_word: bool) -> Option<&str> {
        let targets = self.targets.get(word)?;
        if targets.len() == 1 {
            return Some(&targets[0]);
        }
        targets
            .iter()
            .find(|t| self.determiners.contains(t.as_str()) == before_word)
            .or_else(|| targets.first())
            .map(String::as_str)
    }

    /// Whether every pronoun in `text` maps back to itself after two swaps.
    pub fn is_unambiguous(&self, text: &str) -> bool {
        swap_text(&swap_text(text, self), self) == text
    }
}

fn match_case(template: &str, word: &str) -> String {
    let mut chars = template.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let rest_upper = template.chars().count() > 1 && chars.all(char::is_uppercase);
    if first_upper && rest_upper {
        word.to_uppercase()
    } else if first_upper {
        let mut c = word.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

fn swap_text(text: &str, map: &PronounMap) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e) in text::alnum_spans(text) {
        let token = &text[s..e];
        let lower = token.to_lowercase();
        let before_word = text[e..]
            .trim_start()
            .chars()
            .next()
            .is_some_and(char::is_alphanumeric);
        if let Some(replacement) = map.counterpart(&lower, before_word) {
            out.push_str(&text[last..s]);
            out.push_str(&match_case(token, replacement));
            last = e;
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Replaces every whole-token pronoun with its counterpart, keeping case.
pub fn swap_gender_pronouns(verse: &Verse, map: &PronounMap) -> Verse {
    Verse {
        text: swap_text(&verse.text, map),
        poem_id: verse.poem_id.clone(),
        position: verse.position,
    }
}

/// Pairs split by (input has a demographic mention) x (next-verse sentiment).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub with_demographic: LabelCounts,
    pub without_demographic: LabelCounts,
}

impl PairStats {
    pub fn total(&self) -> usize {
        self.with_demographic.total() + self.without_demographic.total()
    }

    pub fn render(&self) -> String {
        let mut out = String::from(
            "Data subset            Next verse (-)   Next verse (0)   Next verse (+)   Total\n",
        );
        for (name, row) in [
            ("Input verse w/demo.", &self.with_demographic),
            ("Input verse w/o demo.", &self.without_demographic),
        ] {
            let p = row.percentages();
            out.push_str(&format!(
                "{:<22} {:>6} ({:>3.0}%)    {:>6} ({:>3.0}%)    {:>6} ({:>3.0}%)    {:>6}\n",
                name,
                row.negative,
                p[0],
                row.no_impact,
                p[1],
                row.positive,
                p[2],
                row.total()
            ));
        }
        out
    }
}

/// Pair statistics with an arbitrary labelling function.
pub fn corpus_stats_with<F>(pairs: &[VersePair], lex: &MentionLexicon, mut label_of: F) -> PairStats
where
    F: FnMut(&Verse) -> SentimentLabel,
{
    let mut stats = PairStats::default();
    for pair in pairs {
        let label = label_of(&pair.next);
        if lex.has_demographic_mention(&pair.input.text) {
            stats.with_demographic.add(label);
        } else {
            stats.without_demographic.add(label);
        }
    }
    stats
}

pub fn corpus_stats(
    pairs: &[VersePair],
    model: &SentimentModel,
    lex: &MentionLexicon,
) -> PairStats {
    corpus_stats_with(pairs, lex, |v| model.classify(&v.text).0)
}

/// Original verses plus every pronoun-swapped variant that differs from its
/// source, deduplicated by normalized text (first occurrence kept).
pub fn build_candidate_pool(verses: &[Verse], map: &PronounMap) -> Vec<Verse> {
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(verses.len());
    for v in verses {
        if seen.insert(v.normalized()) {
            pool.push(v.clone());
        }
    }
    for v in verses {
        let swapped = swap_gender_pronouns(v, map);
        if swapped.text != v.text && seen.insert(swapped.normalized()) {
            pool.push(swapped);
        }
    }
    pool
}
