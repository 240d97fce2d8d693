//! Templated group prompts, sentiment of the retrieved verses, and
//! baseline-versus-augmented comparison.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::augment::SentimentOracle;
use crate::corpus::{GroupList, MentionLexicon};
use crate::error::{Error, Result};
use crate::retriever::Suggester;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub group: String,
    pub list: GroupList,
}

/// "The " + singular and "The " + plural for every lexicon group, in lexicon order.
pub fn build_prompts(lex: &MentionLexicon) -> Vec<Prompt> {
    lex.groups()
        .iter()
        .flat_map(|g| {
            [&g.singular, &g.plural].map(|surface| Prompt {
                text: format!("The {surface}"),
                group: g.name.clone(),
                list: g.list,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredVerse {
    pub verse: String,
    pub sentiment: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResult {
    pub prompt: Prompt,
    pub verses: Vec<ScoredVerse>,
}

impl PromptResult {
    pub fn mean(&self) -> f64 {
        mean_std(self.verses.iter().map(|v| v.sentiment)).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListSummary {
    pub list: GroupList,
    pub prompts: usize,
    pub verses: usize,
    pub mean: f64,
    /// Population standard deviation over all (prompt, verse) scores.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub model: String,
    pub k: usize,
    pub summaries: Vec<ListSummary>,
    pub group_means: BTreeMap<String, f64>,
    pub prompts: Vec<PromptResult>,
}

/// Mean and population standard deviation; (0, 0) for no values.
pub fn mean_std<I: IntoIterator<Item = i8>>(scores: I) -> (f64, f64) {
    let values: Vec<f64> = scores.into_iter().map(f64::from).collect();
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl BiasReport {
    /// Builds the summaries from per-prompt results.
    pub fn from_results(model: &str, k: usize, prompts: Vec<PromptResult>) -> Self {
        let summaries = [GroupList::Demographic, GroupList::Other]
            .into_iter()
            .map(|list| {
                let rows: Vec<&PromptResult> =
                    prompts.iter().filter(|p| p.prompt.list == list).collect();
                let (mean, std) = mean_std(
                    rows.iter()
                        .flat_map(|p| p.verses.iter().map(|v| v.sentiment)),
                );
                ListSummary {
                    list,
                    prompts: rows.len(),
                    verses: rows.iter().map(|p| p.verses.len()).sum(),
                    mean,
                    std,
                }
            })
            .collect();
        let mut by_group: BTreeMap<String, Vec<i8>> = BTreeMap::new();
        for p in &prompts {
            by_group
                .entry(p.prompt.group.clone())
                .or_default()
                .extend(p.verses.iter().map(|v| v.sentiment));
        }
        let group_means = by_group
            .into_iter()
            .map(|(g, s)| (g, mean_std(s).0))
            .collect();
        BiasReport {
            model: model.to_string(),
            k,
            summaries,
            group_means,
            prompts,
        }
    }

    pub fn summary(&self, list: GroupList) -> Option<&ListSummary> {
        self.summaries.iter().find(|s| s.list == list)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }

    pub fn render(&self) -> String {
        let mut out = format!("model: {} (top {})\n", self.model, self.k);
        out.push_str("list         prompts  verses     mean      std\n");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>7} {:>8.4} {:>8.4}",
                s.list.as_str(),
                s.prompts,
                s.verses,
                s.mean,
                s.std
            );
        }
        out
    }
}

/// Retrieves the top `k` verses for every prompt and scores each with the
/// numeric value of its predicted label.
pub fn evaluate_model<S: SentimentOracle + ?Sized>(
    model_tag: &str,
    suggester: &Suggester,
    prompts: &[Prompt],
    k: usize,
    sentiment: &S,
) -> Result<BiasReport> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut results = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let verses = suggester
            .suggest(&prompt.text, k)?
            .into_iter()
            .map(|s| {
                let sentiment = sentiment.label(&s.verse).numeric_score()?;
                Ok(ScoredVerse {
                    verse: s.verse,
                    sentiment,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        results.push(PromptResult {
            prompt: prompt.clone(),
            verses,
        });
    }
    Ok(BiasReport::from_results(model_tag, k, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListDelta {
    pub list: GroupList,
    pub baseline_mean: f64,
    pub augmented_mean: f64,
    pub delta_mean: f64,
    pub baseline_std: f64,
    pub augmented_std: f64,
    pub delta_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDelta {
    pub prompt: String,
    pub baseline_mean: f64,
    pub augmented_mean: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignSummary {
    pub increased: usize,
    pub decreased: usize,
    pub unchanged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub augmented: String,
    pub k: usize,
    pub lists: Vec<ListDelta>,
    pub prompts: Vec<PromptDelta>,
    pub signs: SignSummary,
}

pub fn compare(baseline: &BiasReport, augmented: &BiasReport) -> Result<Comparison> {
    let same_prompts = baseline.k == augmented.k
        && baseline.prompts.len() == augmented.prompts.len()
        && baseline
            .prompts
            .iter()
            .zip(&augmented.prompts)
            .all(|(a, b)| a.prompt == b.prompt);
    if !same_prompts {
        return Err(Error::PromptMismatch);
    }
    let lists = baseline
        .summaries
        .iter()
        .filter_map(|b| {
            augmented.summary(b.list).map(|a| ListDelta {
                list: b.list,
                baseline_mean: b.mean,
                augmented_mean: a.mean,
                delta_mean: a.mean - b.mean,
                baseline_std: b.std,
                augmented_std: a.std,
                delta_std: a.std - b.std,
            })
        })
        .collect();
    let mut signs = SignSummary::default();
    let prompts = baseline
        .prompts
        .iter()
        .zip(&augmented.prompts)
        .map(|(b, a)| {
            let delta = a.mean() - b.mean();
            match delta.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => signs.increased += 1,
                Some(std::cmp::Ordering::Less) => signs.decreased += 1,
                _ => signs.unchanged += 1,
            }
            PromptDelta {
                prompt: b.prompt.text.clone(),
                baseline_mean: b.mean(),
                augmented_mean: a.mean(),
                delta,
            }
        })
        .collect();
    Ok(Comparison {
        baseline: baseline.model.clone(),
        augmented: augmented.model.clone(),
        k: baseline.k,
        lists,
        prompts,
        signs,
    })
}

impl Comparison {
    pub fn list(&self, list: GroupList) -> Option<&ListDelta> {
        self.lists.iter().find(|l| l.list == list)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two model columns per list, mean and std in each.
    pub fn render(&self) -> String {
        let mut out = format!(
            "sentiment of top {} suggested verses (scores in [-1, 1])\n{:<12} {:>19} {:>19} {:>9}\n",
            self.k, "list", self.baseline, self.augmented, "delta"
        );
        for l in &self.lists {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} ({:.4}) {:>9.4} ({:.4}) {:>+9.4}",
                l.list.as_str(),
                l.baseline_mean,
                l.baseline_std,
                l.augmented_mean,
                l.augmented_std,
                l.delta_mean
            );
        }
        let _ = writeln!(
            out,
            "prompts: {} up, {} down, {} unchanged",
            self.signs.increased, self.signs.decreased, self.signs.unchanged
        );
        out
    }
}
