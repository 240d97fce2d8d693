//! One line per acceptance criterion; exits non-zero if any criterion fails.
//! Runs without the libtest harness so every line reaches stdout.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use nextverse::augment::{
    augment_corpus, write_examples_jsonl, AugmentConfig, AugmentDeps, PositiveTransfer, Provenance,
    TrainingExample,
};
use nextverse::bias_eval::{build_prompts, compare, evaluate_model};
use nextverse::corpus::{
    build_candidate_pool, split_into_pairs, swap_gender_pronouns, GroupList, MentionLexicon,
    PronounMap, Verse, VersePair,
};
use nextverse::retriever::{
    batch_loss, encode_examples, evaluate_loss, prob_batch, prob_full, train, DualEncoder,
    EncodedExample, EncoderConfig, LossOptions, Suggester, TrainConfig, VerseIndex,
};
use nextverse::sentiment::{
    dataset_stats, load_dataset_dir, read_labeled_tsv, train_sentiment, LabelCounts, LabelMapping,
    SentimentConfig, SentimentLabel, Split,
};
use nextverse::styletransfer::{
    compute_salience, delete_markers, MarkedVerse, Style, TransferConfig, TransferOutcome,
};
use nextverse::synth::{descent_pairs, generate_corpus, sentiment_tsv, CorpusSpec};
use nextverse::tokenizer::train_subword;
use nextverse_cli::Cli;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The released poem sentiment split: `$POEM_SENTIMENT_DIR`, else
/// `data/poem-sentiment` in the workspace.
fn released_sentiment_dir() -> Result<PathBuf, String> {
    let dir = std::env::var_os("POEM_SENTIMENT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/poem-sentiment"));
    if dir.join("train.tsv").is_file() {
        Ok(dir)
    } else {
        Err(format!(
            "released dataset not found at {} (set POEM_SENTIMENT_DIR to a directory with train/dev/test.tsv)",
            dir.display()
        ))
    }
}

fn counts(n: usize, z: usize, p: usize) -> LabelCounts {
    LabelCounts {
        negative: n,
        no_impact: z,
        positive: p,
    }
}

fn released_table_counts() -> Outcome {
    let dir = released_sentiment_dir()?;
    let (rows, _) =
        load_dataset_dir(&dir, &LabelMapping::default(), 0).map_err(|e| e.to_string())?;
    let stats = dataset_stats(&rows);
    let want = [
        counts(155, 555, 133),
        counts(19, 69, 17),
        counts(19, 69, 16),
    ];
    let got = [stats.train, stats.dev, stats.test];
    check(
        got == want,
        format!("train/dev/test counts {got:?}, expected {want:?}"),
    )
}

fn released_sentiment_floor() -> Outcome {
    let dir = released_sentiment_dir()?;
    let (rows, _) =
        load_dataset_dir(&dir, &LabelMapping::default(), 0).map_err(|e| e.to_string())?;
    let part = |s: Split| {
        rows.iter()
            .filter(|r| r.split == Some(s))
            .cloned()
            .collect::<Vec<_>>()
    };
    let (model, _) = train_sentiment(
        &part(Split::Train),
        &part(Split::Dev),
        &SentimentConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let acc = model.accuracy(&part(Split::Test));
    check(acc >= 0.70, format!("test accuracy {acc:.4} (floor 0.70)"))
}

fn distinct_batch(rng: &mut ChaCha8Rng, k: usize, vocab: u32) -> nextverse::retriever::TrainBatch {
    loop {
        let batch = common::random_batch(rng, k, vocab, false);
        let unique: HashSet<&Vec<u32>> = batch.rows().iter().map(|r| &r.response).collect();
        if unique.len() == k {
            return batch;
        }
    }
}

fn softmax_oracle() -> Outcome {
    let cfg = common::grad_check_config();
    let opts = LossOptions::in_batch_only();
    let mut rng = common::seeded(11);
    let mut worst = 0.0f64;
    for draw in 0..100u64 {
        let model = DualEncoder::new(cfg, 1000 + draw).map_err(|e| e.to_string())?;
        let k = rng.random_range(2..=50);
        let batch = distinct_batch(&mut rng, k, cfg.vocab_size as u32);
        let pool: Vec<Vec<u32>> = batch.rows().iter().map(|r| r.response.clone()).collect();
        // Each probability re-embeds the whole batch, so large batches check a
        // random subset of rows.
        let rows = rand::seq::index::sample(&mut rng, k, k.min(10)).into_vec();
        for i in rows {
            let row = &batch.rows()[i];
            let full =
                prob_full(&model, &row.input, &row.response, &pool).map_err(|e| e.to_string())?;
            worst = worst.max((prob_batch(&model, &batch, i, opts) - full).abs());
        }
    }
    check(
        worst <= 1e-9,
        format!("max |prob_batch - prob_full| = {worst:.2e} over 100 draws, up to 10 rows each (tol 1e-9)"),
    )
}

fn gradient_check() -> Outcome {
    let model = DualEncoder::new(common::grad_check_config(), 5).map_err(|e| e.to_string())?;
    let mut rng = common::seeded(6);
    let batch = common::random_batch(&mut rng, 4, 24, true);
    let gc = common::finite_difference_check(&model, &batch, LossOptions::default(), 1e-5);
    let frac = gc.fraction_below(1e-4);
    let max = gc.max_error();
    check(
        frac >= 0.99 && max < 1e-3,
        format!(
            "{} params, {:.2}% below 1e-4 (need 99%), max rel error {max:.2e} (need < 1e-3)",
            gc.entries.len(),
            100.0 * frac
        ),
    )
}

fn loss_identities() -> Outcome {
    let cfg = common::grad_check_config();
    let mut rng = common::seeded(12);
    let zero = DualEncoder::zeros(cfg).map_err(|e| e.to_string())?;
    let batch = common::random_batch(&mut rng, 2, 24, false);
    let opts = LossOptions {
        self_negative: true,
        hard_negatives: false,
    };
    let l = batch_loss(&zero, &batch, opts);
    let gap = (l - 3f64.ln()).abs();
    let mut min_loss = f64::INFINITY;
    for draw in 0..200u64 {
        let model = DualEncoder::new(cfg, 2000 + draw).map_err(|e| e.to_string())?;
        let k = rng.random_range(2..=8);
        let batch = common::random_batch(&mut rng, k, 24, draw % 2 == 0);
        min_loss = min_loss.min(batch_loss(&model, &batch, LossOptions::default()));
    }
    check(
        gap <= 1e-9 && min_loss > 0.0,
        format!("|zero-param loss - ln 3| = {gap:.1e} (tol 1e-9); min loss over 200 batches {min_loss:.4} (> 0)"),
    )
}

fn descent_and_recall() -> Outcome {
    let pairs = descent_pairs(200, 1);
    let texts: Vec<&str> = pairs
        .iter()
        .flat_map(|(a, b)| [a.as_str(), b.as_str()])
        .collect();
    let vocab = train_subword(&texts, 400).map_err(|e| e.to_string())?;
    let examples: Vec<EncodedExample> = pairs
        .iter()
        .map(|(a, b)| EncodedExample {
            input: vocab.encode(a),
            response: vocab.encode(b),
            hard_negatives: vec![],
        })
        .collect();
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        max_len: 16,
        model_dim: 32,
        layers: 2,
        heads: 2,
        transformer_hidden: 32,
        head_hidden: 32,
        embed_dim: 32,
        attention_dropout: 0.1,
    };
    let cfg = TrainConfig {
        steps: 2000,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let init = DualEncoder::new(enc, cfg.seed).map_err(|e| e.to_string())?;
    let before = evaluate_loss(&init, &examples, 32, cfg.loss).map_err(|e| e.to_string())?;
    let (model, _) = train(enc, &examples, &cfg).map_err(|e| e.to_string())?;
    let after = evaluate_loss(&model, &examples, 32, cfg.loss).map_err(|e| e.to_string())?;
    let pool: Vec<String> = pairs[..100].iter().map(|p| p.1.clone()).collect();
    let index = VerseIndex::build(&model, &vocab, &pool).map_err(|e| e.to_string())?;
    let s = Suggester::new(model, vocab, index).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (i, (input, _)) in pairs[..100].iter().enumerate() {
        let top = s.suggest(input, 10).map_err(|e| e.to_string())?;
        hits += usize::from(top.iter().any(|x| x.pool_position == i));
    }
    let recall = hits as f64 / 100.0;
    check(
        after <= before / 2.0 && recall >= 0.5,
        format!(
            "loss {before:.3} -> {after:.3} (need halving); recall@10 {recall:.2} (need >= 0.50)"
        ),
    )
}

fn random_corpus(
    rng: &mut ChaCha8Rng,
    alphabet: &[&str],
    n: usize,
    max_len: usize,
) -> Vec<Vec<String>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(0..=max_len);
            (0..len)
                .map(|_| alphabet.choose(rng).unwrap().to_string())
                .collect()
        })
        .collect()
}

/// Occurrences of `gram` counted by scanning every start position.
fn occurrences(corpus: &[Vec<String>], gram: &[String]) -> usize {
    corpus
        .iter()
        .map(|v| (0..v.len()).filter(|&s| v[s..].starts_with(gram)).count())
        .sum()
}

fn salience_exactness() -> Outcome {
    let mut rng = common::seeded(13);
    let alphabet = ["a", "b", "c", "d", "e"];
    let mut compared = 0usize;
    for trial in 0..100 {
        let (n_neg, n_pos) = (rng.random_range(0..12), rng.random_range(0..12));
        let neg = random_corpus(&mut rng, &alphabet, n_neg, 7);
        let pos = random_corpus(&mut rng, &alphabet, n_pos, 7);
        let cfg = TransferConfig {
            n_max: rng.random_range(1..=4),
            lambda: [0.5, 1.0, 2.0][rng.random_range(0..3)],
            ..TransferConfig::default()
        };
        let table = compute_salience(&neg, &pos, &cfg);
        let mut grams = BTreeSet::new();
        for v in neg.iter().chain(&pos) {
            for n in 1..=cfg.n_max.min(v.len()) {
                for s in 0..=v.len() - n {
                    grams.insert(v[s..s + n].to_vec());
                }
            }
        }
        if table.len() != grams.len() {
            return Err(format!(
                "trial {trial}: {} entries, oracle has {}",
                table.len(),
                grams.len()
            ));
        }
        for g in &grams {
            let (cn, cp) = (occurrences(&neg, g), occurrences(&pos, g));
            let e = table
                .get(&g.join(" "))
                .ok_or_else(|| format!("trial {trial}: {g:?} missing"))?;
            let l = cfg.lambda;
            let ok = e.count_negative == cn
                && e.count_positive == cp
                && table.salience(g, Style::Negative) == (cn as f64 + l) / (cp as f64 + l)
                && table.salience(g, Style::Positive) == (cp as f64 + l) / (cn as f64 + l);
            if !ok {
                return Err(format!(
                    "trial {trial}: {g:?} has {e:?}, oracle counts ({cn}, {cp})"
                ));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "100 trials, {compared} n-grams equal to the brute-force counts"
    ))
}

fn deletion_fidelity() -> Outcome {
    let mut rng = common::seeded(14);
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let alphabet: Vec<&str> = words.iter().map(String::as_str).collect();
    // Skewed corpora so that some n-grams clear the threshold in each style.
    let neg = random_corpus(&mut rng, &alphabet[..8], 60, 6);
    let pos = random_corpus(&mut rng, &alphabet[4..], 60, 6);
    let cfg = TransferConfig {
        gamma: 2.0,
        ..TransferConfig::default()
    };
    let table = compute_salience(&neg, &pos, &cfg);
    let mut marked = 0usize;
    for i in 0..1000 {
        let verse = random_corpus(&mut rng, &alphabet, 1, 9).remove(0);
        let style = if i % 2 == 0 {
            Style::Negative
        } else {
            Style::Positive
        };
        let m = delete_markers(&verse, &table, style, &cfg);
        if m.reconstruct() != verse {
            return Err(format!("{verse:?} reconstructs to {:?}", m.reconstruct()));
        }
        for mk in &m.markers {
            let span = &verse[mk.start..mk.start + mk.tokens.len()];
            let sal = table.salience(&mk.tokens, style);
            if span != mk.tokens.as_slice() || sal <= cfg.gamma {
                return Err(format!("marker {mk:?} in {verse:?} has salience {sal}"));
            }
        }
        marked += m.markers.len();
    }
    check(
        marked > 0,
        format!("1000 verses reconstructed exactly, {marked} removed spans all above gamma"),
    )
}

/// Replaces "grim" with "bright"; verses containing "flat" have no marker.
struct StubTransfer;

impl PositiveTransfer for StubTransfer {
    fn to_positive(&self, v: &Verse) -> nextverse::Result<TransferOutcome> {
        let tokens: Vec<String> = v.text.split(' ').map(str::to_string).collect();
        let no_op = v.text.contains("flat");
        let text = if no_op {
            v.text.clone()
        } else {
            v.text.replace("grim", "bright")
        };
        Ok(TransferOutcome {
            verse: Verse::new(&text, v.poem_id.clone(), v.position),
            no_op,
            marked: MarkedVerse {
                original: tokens.clone(),
                content: tokens,
                markers: vec![],
                source_style: Style::Negative,
            },
            attribute: None,
        })
    }
}

fn augmentation_laws() -> Outcome {
    let lex = MentionLexicon::default();
    let group = lex
        .groups()
        .iter()
        .find(|g| g.list == GroupList::Demographic)
        .expect("demographic group")
        .plural
        .clone();
    let oracle = |t: &str| {
        if t.contains("grim") {
            SentimentLabel::Negative
        } else {
            SentimentLabel::NoImpact
        }
    };
    let mut rng = common::seeded(15);
    let mut pairs = Vec::new();
    for i in 0..30_000 {
        let mention = rng.random_bool(0.3);
        let negative = rng.random_bool(0.6);
        let flat = rng.random_bool(0.1);
        let input = if mention {
            format!("The {group} walk by the river {i}")
        } else {
            format!("A stone lies by the river {i}")
        };
        let next = match (negative, mention && flat) {
            (true, true) => format!("grim and flat skies {i}"),
            (true, false) => format!("grim skies {i}"),
            _ => format!("quiet skies {i}"),
        };
        let poem = format!("p{i}");
        pairs.push(VersePair {
            input: Verse::new(&input, poem.clone(), 0),
            next: Verse::new(&next, poem, 1),
        });
    }
    let deps = AugmentDeps {
        sentiment: &oracle,
        transfer: &StubTransfer,
        lexicon: &lex,
    };
    let cfg = AugmentConfig {
        seed: 99,
        ..AugmentConfig::default()
    };
    let run = |cfg: &AugmentConfig| augment_corpus(&pairs, &deps, cfg).map_err(|e| e.to_string());
    let (examples, report) = run(&cfg)?;

    let mut problems = Vec::new();
    let mut s1_eligible = 0;
    let mut s2_eligible = 0;
    for (pair, ex) in pairs.iter().zip(&examples) {
        let mention = lex.has_demographic_mention(&pair.input.text);
        let negative = pair.next.text.contains("grim");
        if mention && negative {
            s1_eligible += 1;
            let want = if pair.next.text.contains("flat") {
                Provenance::Original
            } else {
                Provenance::Scenario1
            };
            if ex.provenance != want {
                problems.push(format!(
                    "scenario-1 pair {:?} got {:?}",
                    pair.input.text, ex.provenance
                ));
            }
        }
        s2_eligible += usize::from(!mention && negative);
    }
    if s1_eligible != report.scenario1_eligible
        || report.provenance.scenario1 + report.scenario1_no_op != report.scenario1_eligible
    {
        problems.push(format!(
            "scenario-1 accounting {report:?} vs {s1_eligible} eligible"
        ));
    }
    if s2_eligible != report.scenario2_eligible || s2_eligible < 10_000 {
        problems.push(format!(
            "{} scenario-2 pairs, expected {s2_eligible} (>= 10000)",
            report.scenario2_eligible
        ));
    }
    let n = report.scenario2_eligible as f64;
    let frac = report.scenario2_transferred_fraction();
    let sigma = (0.25 / n).sqrt();
    if (frac - 0.5).abs() > 3.0 * sigma {
        problems.push(format!(
            "scenario-2 fraction {frac:.4} outside 0.5 +/- {:.4}",
            3.0 * sigma
        ));
    }
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in &examples {
        *tally
            .entry(match ex.provenance {
                Provenance::Original => "original",
                Provenance::Scenario1 => "scenario1",
                Provenance::Scenario2 => "scenario2",
            })
            .or_default() += 1;
    }
    let p = &report.provenance;
    let partition = examples.len() == pairs.len()
        && p.total() == pairs.len()
        && tally.get("original").copied().unwrap_or(0) == p.original
        && tally.get("scenario1").copied().unwrap_or(0) == p.scenario1
        && tally.get("scenario2").copied().unwrap_or(0) == p.scenario2;
    if !partition {
        problems.push(format!(
            "provenance {p:?} does not partition {} pairs ({tally:?})",
            pairs.len()
        ));
    }
    let bytes = |ex: &[TrainingExample]| write_examples_jsonl(ex).map_err(|e| e.to_string());
    let (again, report_again) = run(&cfg)?;
    if bytes(&examples)? != bytes(&again)? || report != report_again {
        problems.push("same seed produced different output".into());
    }
    let (other, _) = run(&AugmentConfig { seed: 100, ..cfg })?;
    if bytes(&examples)? == bytes(&other)? {
        problems.push("a different seed produced identical output".into());
    }
    if problems.is_empty() {
        Ok(format!(
            "scenario 1: {}/{} transferred, {} no-op fallbacks; scenario 2: {frac:.4} of {} (3 sigma = {:.4}); \
             partition holds; reruns byte-identical",
            p.scenario1,
            report.scenario1_eligible,
            report.scenario1_no_op,
            report.scenario2_eligible,
            3.0 * sigma
        ))
    } else {
        Err(problems.join("; "))
    }
}

/// A verse whose pronouns each have a single reading: subjects, reflexives,
/// determiners before a noun, and objects or possessives at the verse end.
fn unambiguous_verse(rng: &mut ChaCha8Rng) -> String {
    const NOUNS: [&str; 6] = ["lamp", "river", "song", "door", "field", "star"];
    const VERBS: [&str; 5] = ["keeps", "finds", "sees", "holds", "calls"];
    let female = rng.random_bool(0.5);
    let pick = |f: &'static str, m: &'static str| if female { f } else { m };
    let mut words: Vec<String> = Vec::new();
    let clauses = rng.random_range(1..=3);
    for _ in 0..clauses {
        let noun = *NOUNS.choose(rng).unwrap();
        let verb = *VERBS.choose(rng).unwrap();
        let clause = match rng.random_range(0..4) {
            0 => format!("{} {verb} the {noun}", pick("she", "he")),
            1 => format!("the {noun} {verb} {}", pick("herself", "himself")),
            2 => format!("{} {noun} {verb} light", pick("her", "his")),
            _ => format!("{} {verb} {} {noun}", pick("she", "he"), pick("her", "his")),
        };
        words.push(clause);
    }
    let mut text = words.join(" and ");
    match rng.random_range(0..3) {
        0 => text.push_str(&format!(" near {}", pick("her", "him"))),
        1 => text.push_str(&format!(
            ", the {} is {}",
            NOUNS.choose(rng).unwrap(),
            pick("hers", "his")
        )),
        _ => {}
    }
    if rng.random_bool(0.5) {
        let mut c = text.chars();
        text = c.next().unwrap().to_uppercase().chain(c).collect();
    }
    text
}

fn counterfactual_pool() -> Outcome {
    let map = PronounMap::default();
    let mut rng = common::seeded(16);
    let cases: Vec<String> = (0..500).map(|_| unambiguous_verse(&mut rng)).collect();
    let mut failures = 0usize;
    for (i, text) in cases.iter().enumerate() {
        let v = Verse::new(text, "p", i);
        let once = swap_gender_pronouns(&v, &map);
        let twice = swap_gender_pronouns(&once, &map);
        if twice.text != v.text || once.text == v.text {
            failures += 1;
        }
    }
    // Pool oracle over a mix of swappable, pronoun-free and duplicate verses.
    let mut verses: Vec<Verse> = cases[..200]
        .iter()
        .enumerate()
        .map(|(i, t)| Verse::new(t, "q", i))
        .collect();
    for i in 0..100 {
        verses.push(Verse::new(&format!("the tide turns {}", i % 40), "r", i));
    }
    verses.push(Verse::new(
        &swap_gender_pronouns(&verses[0], &map).text,
        "s",
        0,
    ));
    let pool = build_candidate_pool(&verses, &map);
    let mut want: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for v in &verses {
        if seen.insert(v.normalized()) {
            want.push(v.normalized());
        }
    }
    for v in &verses {
        let s = swap_gender_pronouns(v, &map);
        if s.text != v.text && seen.insert(s.normalized()) {
            want.push(s.normalized());
        }
    }
    let got: Vec<String> = pool.iter().map(Verse::normalized).collect();
    check(
        failures == 0 && got == want,
        format!(
            "involution on {}/500 generated cases; pool of {} from {} verses {} the oracle",
            500 - failures,
            pool.len(),
            verses.len(),
            if got == want {
                "matches"
            } else {
                "differs from"
            }
        ),
    )
}

fn directional_bias() -> Outcome {
    let (train_tsv, dev_tsv, _) = sentiment_tsv(600, 100, 100, 3);
    let map = LabelMapping::default();
    let read =
        |raw: String, split| read_labeled_tsv(Cursor::new(raw), Some(split), &map).map(|r| r.0);
    let train_rows = read(train_tsv, Split::Train).map_err(|e| e.to_string())?;
    let dev_rows = read(dev_tsv, Split::Dev).map_err(|e| e.to_string())?;
    let (sm, _) = train_sentiment(&train_rows, &dev_rows, &SentimentConfig::default())
        .map_err(|e| e.to_string())?;
    let lex = MentionLexicon::default();
    let prompts = build_prompts(&lex);
    let mut up = 0;
    let mut worst_ratio = 0.0f64;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let corpus = generate_corpus(&CorpusSpec {
            poems: 400,
            seed: 100 + seed,
            ..CorpusSpec::default()
        });
        let verses: Vec<Verse> = corpus.poems.iter().flat_map(|p| p.verses.clone()).collect();
        let pairs: Vec<VersePair> = corpus
            .poems
            .iter()
            .flat_map(|p| split_into_pairs(&p.verses))
            .collect();
        let (mut neg, mut pos) = (Vec::new(), Vec::new());
        for v in &verses {
            match sm.label(&v.text) {
                SentimentLabel::Negative => neg.push(v.text.clone()),
                SentimentLabel::Positive => pos.push(v.text.clone()),
                _ => {}
            }
        }
        let st =
            nextverse::styletransfer::StyleTransfer::build(&neg, &pos, TransferConfig::default())
                .map_err(|e| e.to_string())?;
        let deps = AugmentDeps {
            sentiment: &sm,
            transfer: &st,
            lexicon: &lex,
        };
        let (augmented, _) = augment_corpus(
            &pairs,
            &deps,
            &AugmentConfig {
                seed,
                ..AugmentConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let baseline: Vec<TrainingExample> = pairs.iter().map(TrainingExample::original).collect();
        let pool: Vec<String> = build_candidate_pool(&verses, &PronounMap::default())
            .into_iter()
            .map(|v| v.text)
            .collect();
        let mut tok_corpus = pool.clone();
        tok_corpus.extend(augmented.iter().map(|e| e.positive.text.clone()));
        let vocab = train_subword(&tok_corpus, 1000).map_err(|e| e.to_string())?;
        let enc = EncoderConfig {
            vocab_size: vocab.len(),
            max_len: 24,
            model_dim: 32,
            layers: 2,
            heads: 2,
            transformer_hidden: 32,
            head_hidden: 32,
            embed_dim: 32,
            attention_dropout: 0.1,
        };
        let cfg = TrainConfig {
            steps: 2000,
            seed: 500 + seed,
            ..TrainConfig::default()
        };
        let mut reports = Vec::new();
        for (tag, examples) in [("baseline", &baseline), ("augmented", &augmented)] {
            let (model, _) =
                train(enc, &encode_examples(&vocab, examples), &cfg).map_err(|e| e.to_string())?;
            let index = VerseIndex::build(&model, &vocab, &pool).map_err(|e| e.to_string())?;
            let s = Suggester::new(model, vocab.clone(), index).map_err(|e| e.to_string())?;
            reports.push(evaluate_model(tag, &s, &prompts, 50, &sm).map_err(|e| e.to_string())?);
        }
        let cmp = compare(&reports[0], &reports[1]).map_err(|e| e.to_string())?;
        let d = cmp
            .list(GroupList::Demographic)
            .ok_or("no demographic list")?;
        up += usize::from(d.delta_mean > 0.0);
        let ratio = if d.baseline_std > 0.0 {
            d.augmented_std / d.baseline_std
        } else {
            f64::INFINITY
        };
        worst_ratio = worst_ratio.max(ratio);
        lines.push(format!("{:+.4}/{ratio:.2}", d.delta_mean));
    }
    check(
        up >= 4 && worst_ratio <= 1.5,
        format!(
            "augmented mean above baseline in {up}/5 runs (need 4), max std ratio {worst_ratio:.2} (need <= 1.5); \
             per seed delta/ratio: {}",
            lines.join(" ")
        ),
    )
}

const PIPELINE_STAGES: [&str; 13] = [
    "ingest",
    "train-sentiment",
    "build-salience",
    "style-transfer",
    "augment",
    "train-tokenizer",
    "train-retriever:baseline",
    "train-retriever:augmented",
    "build-index:baseline",
    "build-index:augmented",
    "eval-bias:baseline",
    "eval-bias:augmented",
    "compare",
];

fn run_pipeline(out: &Path) -> Result<serde_json::Value, String> {
    let config = workspace_root().join("data/sample/config.toml");
    let args = [
        "nextverse".as_ref(),
        "--quiet".as_ref(),
        "--config".as_ref(),
        config.as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
        "run-all".as_ref(),
    ];
    let cli: Cli = Cli::try_parse_from(args).map_err(|e| e.to_string())?;
    nextverse_cli::run(cli).map_err(|e| format!("run-all failed: {e:#}"))?;
    let raw = std::fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&raw).map_err(|e| e.to_string())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run_pipeline(&a)?;
    let second = run_pipeline(&b)?;
    let stages = first["stages"]
        .as_object()
        .ok_or("manifest has no stages")?;
    let missing: Vec<&str> = PIPELINE_STAGES
        .iter()
        .copied()
        .filter(|s| !stages.contains_key(*s))
        .collect();
    let mut outputs = 0usize;
    let mut mismatched = Vec::new();
    for record in stages.values() {
        for (rel, hash) in record["outputs"].as_object().into_iter().flatten() {
            outputs += 1;
            let bytes = std::fs::read(a.join(rel)).unwrap_or_default();
            if hex::encode(Sha256::digest(&bytes)) != hash.as_str().unwrap_or_default() {
                mismatched.push(rel.clone());
            }
        }
    }
    let identical = first == second;
    let mut detail = String::new();
    let _ = write!(
        detail,
        "{} stages, {outputs} artifacts hashed; manifests {}",
        stages.len(),
        if identical {
            "identical across two runs"
        } else {
            "differ between runs"
        }
    );
    if !missing.is_empty() {
        let _ = write!(detail, "; missing stages {missing:?}");
    }
    if !mismatched.is_empty() {
        let _ = write!(detail, "; hash mismatch for {mismatched:?}");
    }
    check(
        identical && missing.is_empty() && mismatched.is_empty(),
        detail,
    )
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "Released dataset counts",
            limit: Duration::from_secs(1),
            run: released_table_counts,
        },
        Criterion {
            name: "Sentiment floor",
            limit: Duration::from_secs(60),
            run: released_sentiment_floor,
        },
        Criterion {
            name: "Softmax oracle",
            limit: Duration::from_secs(10),
            run: softmax_oracle,
        },
        Criterion {
            name: "Gradient check",
            limit: Duration::from_secs(60),
            run: gradient_check,
        },
        Criterion {
            name: "Loss identities",
            limit: Duration::from_secs(60),
            run: loss_identities,
        },
        Criterion {
            name: "Training descent + retrieval",
            limit: Duration::from_secs(300),
            run: descent_and_recall,
        },
        Criterion {
            name: "Salience exactness",
            limit: Duration::from_secs(60),
            run: salience_exactness,
        },
        Criterion {
            name: "Deletion fidelity",
            limit: Duration::from_secs(60),
            run: deletion_fidelity,
        },
        Criterion {
            name: "Augmentation laws",
            limit: Duration::from_secs(60),
            run: augmentation_laws,
        },
        Criterion {
            name: "Counterfactual pool",
            limit: Duration::from_secs(60),
            run: counterfactual_pool,
        },
        Criterion {
            name: "Directional bias shift",
            limit: Duration::from_secs(900),
            run: directional_bias,
        },
        Criterion {
            name: "End-to-end pipeline",
            limit: Duration::from_secs(1200),
            run: end_to_end,
        },
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| c.name.to_lowercase().contains(&f.to_lowercase()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; took longer than {:?}", c.limit)),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {}: {detail} [{:.1}s, limit {}s]",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
