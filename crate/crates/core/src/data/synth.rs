//! Synthetic corpus whose labels are a deterministic function of planted trigger tokens.
//!
//! Short-range labels fire when any of their trigger tokens appears. Long-range
//! labels fire only when their first token is followed by their second token at
//! least `gap` positions later, so detecting them needs a receptive field wider
//! than `gap`. Negative examples for long-range labels include near misses where
//! both tokens appear closer together.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::dataset::Document;
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::textpipe::{preprocess, DEFAULT_MAX_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_labels: usize,
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub filler_vocab: usize,
    pub triggers_per_label: usize,
    pub long_range_fraction: f64,
    /// Minimum distance between the two tokens of a long-range rule.
    pub gap: usize,
    /// Positive pairs are placed `gap + U[0, gap_slack]` apart.
    pub gap_slack: usize,
    /// Near-miss pairs are placed `U[1, near_miss_max]` apart.
    pub near_miss_max: usize,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    /// Probability that a given label is planted in a document.
    pub label_prob: f64,
    /// Probability that a negative long-range label gets a decoy.
    pub decoy_prob: f64,
    /// Share of decoys that are near-miss pairs.
    pub near_miss_share: f64,
    /// Share of the remaining decoys that are a lone second token; the rest are a lone
    /// first token. Lone tokens sit where one member of a positive pair would.
    pub lone_second_share: f64,
    /// Per-token probability of cosmetic noise (capitals, punctuation, numbers).
    pub noise_prob: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_labels: 20,
            train_docs: 2000,
            dev_docs: 400,
            test_docs: 400,
            filler_vocab: 500,
            triggers_per_label: 1,
            long_range_fraction: 0.25,
            gap: 300,
            gap_slack: 100,
            near_miss_max: 100,
            min_doc_len: 200,
            max_doc_len: 1000,
            label_prob: 0.1,
            decoy_prob: 0.3,
            near_miss_share: 0.0,
            lone_second_share: 1.0 / 3.0,
            noise_prob: 0.05,
            max_len: DEFAULT_MAX_LEN,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn num_long_range(&self) -> usize {
        (self.num_labels as f64 * self.long_range_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_labels == 0 || self.filler_vocab == 0 || self.triggers_per_label == 0 {
            return fail("num_labels, filler_vocab and triggers_per_label must be positive".into());
        }
        if self.train_docs == 0 || self.dev_docs == 0 || self.test_docs == 0 {
            return fail("every split needs at least one document".into());
        }
        if !(0.0..=1.0).contains(&self.long_range_fraction) {
            return fail("long_range_fraction must lie in [0, 1]".into());
        }
        for (name, p) in [
            ("label_prob", self.label_prob),
            ("decoy_prob", self.decoy_prob),
            ("near_miss_share", self.near_miss_share),
            ("lone_second_share", self.lone_second_share),
            ("noise_prob", self.noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.gap == 0 || self.gap >= self.max_len {
            return fail(format!("gap {} must be positive and below max_len {}", self.gap, self.max_len));
        }
        if self.near_miss_max == 0 || self.near_miss_max >= self.gap {
            return fail("near_miss_max must lie in [1, gap)".into());
        }
        if self.min_doc_len == 0 || self.min_doc_len > self.max_doc_len {
            return fail("need 0 < min_doc_len <= max_doc_len".into());
        }
        if self.max_doc_len > self.max_len {
            return fail("max_doc_len must not exceed max_len".into());
        }
        if self.num_long_range() > 0 && self.gap + self.gap_slack + 2 * self.num_long_range() > self.max_doc_len {
            return fail("max_doc_len must leave room for gap + gap_slack plus two slots per long-range label".into());
        }
        let planted = self.num_labels * self.triggers_per_label + 2 * self.num_long_range();
        if planted + 2 > self.min_doc_len {
            return fail("documents too short to hold every trigger".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// Fires when any trigger is present.
    Any { triggers: Vec<String> },
    /// Fires when `first` occurs and `second` occurs at least `min_gap` positions after it.
    Pair {
        first: String,
        second: String,
        min_gap: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub code: String,
    #[serde(flatten)]
    pub rule: Rule,
}

/// Every planted rule, keyed by label code.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub max_len: usize,
    pub labels: Vec<LabelRule>,
}

impl Manifest {
    /// Codes whose rule fires on a preprocessed token sequence.
    pub fn apply(&self, tokens: &[String]) -> BTreeSet<String> {
        let first_pos = |t: &str| tokens.iter().position(|x| x == t);
        let last_pos = |t: &str| tokens.iter().rposition(|x| x == t);
        self.labels
            .iter()
            .filter(|l| match &l.rule {
                Rule::Any { triggers } => triggers.iter().any(|t| first_pos(t).is_some()),
                Rule::Pair { first, second, min_gap } => match (first_pos(first), last_pos(second)) {
                    (Some(i), Some(j)) => j >= i + min_gap,
                    _ => false,
                },
            })
            .map(|l| l.code.clone())
            .collect()
    }

    pub fn apply_text(&self, text: &str) -> BTreeSet<String> {
        self.apply(&preprocess(text, self.max_len))
    }

    pub fn long_range_codes(&self) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| matches!(l.rule, Rule::Pair { .. }))
            .map(|l| l.code.clone())
            .collect()
    }

    fn trigger_tokens(&self) -> impl Iterator<Item = &String> {
        self.labels.iter().flat_map(|l| match &l.rule {
            Rule::Any { triggers } => triggers.iter().collect::<Vec<_>>(),
            Rule::Pair { first, second, .. } => vec![first, second],
        })
    }

    /// Rejects trigger tokens that are shared between rules or appear in the filler vocabulary.
    pub fn check_disjoint(&self, filler: &[String]) -> Result<()> {
        let filler: HashSet<&String> = filler.iter().collect();
        let mut seen = HashSet::new();
        for t in self.trigger_tokens() {
            if filler.contains(t) {
                return Err(Error::Generation(format!("trigger {t} is also a filler token")));
            }
            if !seen.insert(t) {
                return Err(Error::Generation(format!("trigger {t} used by two rules")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub manifest: Manifest,
    pub filler: Vec<String>,
}

fn random_word(rng: &mut RngStream) -> String {
    let len = rng.between(4, 8);
    (0..len).map(|_| (b'a' + rng.below(26) as u8) as char).collect()
}

fn distinct_words(count: usize, taken: &mut HashSet<String>, rng: &mut RngStream) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = random_word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Token sequence under construction with occupied trigger slots.
struct Draft {
    tokens: Vec<String>,
    planted: Vec<bool>,
}

enum Plant {
    Nothing,
    Rule,
    NearMiss,
    LoneFirst,
    LoneSecond,
}

impl Draft {
    fn free(&self, pos: usize) -> bool {
        !self.planted[pos]
    }

    fn plant(&mut self, pos: usize, token: &str) {
        self.tokens[pos] = token.to_string();
        self.planted[pos] = true;
    }

    fn place_one(&mut self, token: &str, rng: &mut RngStream) {
        loop {
            let pos = rng.below(self.tokens.len());
            if self.free(pos) {
                self.plant(pos, token);
                return;
            }
        }
    }

    /// Two free positions `dist` apart, where a pair would go.
    fn pair_slots(&self, dist: usize, rng: &mut RngStream) -> (usize, usize) {
        loop {
            let i = rng.below(self.tokens.len() - dist);
            if self.free(i) && self.free(i + dist) {
                return (i, i + dist);
            }
        }
    }
}

fn render(tokens: &[String], noise: f64, rng: &mut RngStream) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(tokens.len() + 8);
    for t in tokens {
        if rng.bernoulli(noise) {
            parts.push(rng.below(1000).to_string());
        }
        let mut word = t.clone();
        if rng.bernoulli(noise) {
            word[..1].make_ascii_uppercase();
        }
        if rng.bernoulli(noise) {
            word.push(if rng.bernoulli(0.5) { ',' } else { '.' });
        }
        parts.push(word);
    }
    parts.join(" ")
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    manifest: &'a Manifest,
    filler: &'a [String],
}

impl Generator<'_> {
    fn document(&self, id: String, rng: &mut RngStream) -> Result<Document> {
        let spec = self.spec;
        let positive: Vec<bool> = (0..spec.num_labels).map(|_| rng.bernoulli(spec.label_prob)).collect();
        let plans: Vec<Plant> = self
            .manifest
            .labels
            .iter()
            .zip(&positive)
            .map(|(label, &pos)| match (&label.rule, pos) {
                (_, true) => Plant::Rule,
                (Rule::Any { .. }, false) => Plant::Nothing,
                (Rule::Pair { .. }, false) => {
                    if !rng.bernoulli(spec.decoy_prob) {
                        Plant::Nothing
                    } else if rng.bernoulli(spec.near_miss_share) {
                        Plant::NearMiss
                    } else if rng.bernoulli(spec.lone_second_share) {
                        Plant::LoneSecond
                    } else {
                        Plant::LoneFirst
                    }
                }
            })
            .collect();
        let mut span = 0;
        let mut pair_plants = 0;
        for (label, plan) in self.manifest.labels.iter().zip(&plans) {
            if matches!(label.rule, Rule::Pair { .. }) {
                match plan {
                    Plant::Nothing => continue,
                    Plant::NearMiss => span = span.max(spec.near_miss_max),
                    _ => span = span.max(spec.gap + spec.gap_slack),
                }
                pair_plants += 1;
            }
        }
        // each earlier plant rules out at most two slots for the next pair
        let floor = spec.min_doc_len.max(span + 2 * pair_plants);
        let len = rng.between(floor, spec.max_doc_len);
        let mut draft = Draft {
            tokens: (0..len)
                .map(|_| self.filler[rng.below(self.filler.len())].clone())
                .collect(),
            planted: vec![false; len],
        };

        for (label, plan) in self.manifest.labels.iter().zip(&plans) {
            match (&label.rule, plan) {
                (_, Plant::Nothing) => {}
                (Rule::Any { triggers }, _) => {
                    let t = &triggers[rng.below(triggers.len())];
                    draft.place_one(t, rng);
                }
                (Rule::Pair { first, second, min_gap }, plan) => {
                    let dist = match plan {
                        Plant::NearMiss => rng.between(1, spec.near_miss_max.min(len - 1)),
                        _ => min_gap + rng.between(0, spec.gap_slack),
                    };
                    let (i, k) = draft.pair_slots(dist, rng);
                    match plan {
                        Plant::LoneFirst => draft.plant(i, first),
                        Plant::LoneSecond => draft.plant(k, second),
                        _ => {
                            draft.plant(i, first);
                            draft.plant(k, second);
                        }
                    }
                }
            }
        }

        let codes = self.manifest.apply(&draft.tokens);
        let intended: BTreeSet<String> = self
            .manifest
            .labels
            .iter()
            .zip(&positive)
            .filter(|(_, &p)| p)
            .map(|(l, _)| l.code.clone())
            .collect();
        if codes != intended {
            return Err(Error::Generation(format!(
                "document {id}: planted {intended:?} but rules give {codes:?}"
            )));
        }
        Ok(Document {
            id,
            text: render(&draft.tokens, spec.noise_prob, rng),
            codes,
        })
    }
}

/// Builds train/dev/test splits and the rule manifest, deterministically from `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let mut vocab_rng = root.fork(&[0]);
    let mut taken = HashSet::new();
    let filler = distinct_words(spec.filler_vocab, &mut taken, &mut vocab_rng);

    let n_long = spec.num_long_range();
    let n_short = spec.num_labels - n_long;
    let mut labels = Vec::with_capacity(spec.num_labels);
    for j in 0..spec.num_labels {
        let code = format!("L{j:02}");
        let rule = if j < n_short {
            Rule::Any {
                triggers: distinct_words(spec.triggers_per_label, &mut taken, &mut vocab_rng),
            }
        } else {
            let pair = distinct_words(2, &mut taken, &mut vocab_rng);
            Rule::Pair {
                first: pair[0].clone(),
                second: pair[1].clone(),
                min_gap: spec.gap,
            }
        };
        labels.push(LabelRule { code, rule });
    }
    let manifest = Manifest {
        max_len: spec.max_len,
        labels,
    };
    manifest.check_disjoint(&filler)?;

    let gen = Generator {
        spec,
        manifest: &manifest,
        filler: &filler,
    };
    let split = |name: &str, key: u64, count: usize| -> Result<Vec<Document>> {
        let mut rng = root.fork(&[1, key]);
        (0..count)
            .map(|i| gen.document(format!("{name}-{i:05}"), &mut rng))
            .collect()
    };
    Ok(SynthCorpus {
        train: split("train", 0, spec.train_docs)?,
        dev: split("dev", 1, spec.dev_docs)?,
        test: split("test", 2, spec.test_docs)?,
        manifest,
        filler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            num_labels: 6,
            train_docs: 40,
            dev_docs: 10,
            test_docs: 10,
            filler_vocab: 50,
            gap: 30,
            gap_slack: 10,
            near_miss_max: 10,
            min_doc_len: 20,
            max_doc_len: 80,
            label_prob: 0.3,
            decoy_prob: 0.5,
            near_miss_share: 0.3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn manifest_rules() {
        let m = Manifest {
            max_len: 1000,
            labels: vec![
                LabelRule {
                    code: "L03".into(),
                    rule: Rule::Any { triggers: vec!["zed".into()] },
                },
                LabelRule {
                    code: "P".into(),
                    rule: Rule::Pair {
                        first: "aa".into(),
                        second: "bb".into(),
                        min_gap: 100,
                    },
                },
            ],
        };
        assert_eq!(m.apply_text("x zed y"), BTreeSet::from(["L03".to_string()]));
        assert!(m.apply_text("aa x bb").is_empty());
        let far = format!("aa {} bb", vec!["x"; 99].join(" "));
        assert_eq!(m.apply_text(&far), BTreeSet::from(["P".to_string()]));
        let reversed = format!("bb {} aa", vec!["x"; 150].join(" "));
        assert!(m.apply_text(&reversed).is_empty());
    }

    #[test]
    fn rules_reproduce_codes_everywhere() {
        let c = generate_synthetic(&small()).unwrap();
        for d in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert_eq!(c.manifest.apply_text(&d.text), d.codes, "{}", d.id);
        }
        assert_eq!(c.manifest.long_range_codes().len(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SynthSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn lone_decoys_sit_in_pair_slots() {
        let spec = SynthSpec { noise_prob: 0.0, decoy_prob: 1.0, ..small() };
        let c = generate_synthetic(&spec).unwrap();
        let (mut firsts, mut seconds) = (0, 0);
        for rule in &c.manifest.labels {
            let Rule::Pair { first, second, min_gap } = &rule.rule else { continue };
            for d in c.train.iter().filter(|d| !d.codes.contains(&rule.code)) {
                let words: Vec<&str> = d.text.split_whitespace().collect();
                let f = words.iter().position(|w| w == first);
                let s = words.iter().position(|w| w == second);
                match (f, s) {
                    (Some(i), None) => {
                        assert!(i + min_gap < words.len(), "{}", d.id);
                        firsts += 1;
                    }
                    (None, Some(k)) => {
                        assert!(k >= *min_gap, "{}", d.id);
                        seconds += 1;
                    }
                    _ => {}
                }
            }
        }
        assert!(firsts > 0 && seconds > 0);
    }

    #[test]
    fn crowded_pairs_still_fit() {
        let spec = SynthSpec {
            num_labels: 8,
            long_range_fraction: 1.0,
            gap: 10,
            gap_slack: 0,
            near_miss_max: 5,
            min_doc_len: 26,
            max_doc_len: 26,
            label_prob: 0.5,
            decoy_prob: 1.0,
            near_miss_share: 0.5,
            ..small()
        };
        let c = generate_synthetic(&spec).unwrap();
        for d in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert_eq!(c.manifest.apply_text(&d.text), d.codes, "{}", d.id);
        }
        assert!(generate_synthetic(&SynthSpec { gap_slack: 1, ..spec }).is_err());
    }

    #[test]
    fn split_ids_disjoint() {
        let c = generate_synthetic(&small()).unwrap();
        let mut ids = HashSet::new();
        for d in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert!(ids.insert(d.id.clone()));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic(&SynthSpec { gap: 2500, ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { near_miss_max: 30, ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { dev_docs: 0, ..small() }).is_err());
    }

    #[test]
    fn collision_detected() {
        let c = generate_synthetic(&small()).unwrap();
        let mut filler = c.filler.clone();
        if let Rule::Any { triggers } = &c.manifest.labels[0].rule {
            filler.push(triggers[0].clone());
        }
        assert!(matches!(c.manifest.check_disjoint(&filler), Err(Error::Generation(_))));
    }
}
