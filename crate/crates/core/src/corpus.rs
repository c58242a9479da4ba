//! Event-chain corpora: the line-delimited chain format, factuality
//! filtering and seeded splits.
//!
//! One chain per line:
//!
//! ```text
//! {"chain_id":"c1","events":[{"pred":"eat","dep":"nsubj","fact":"pos","text":["he","ate"],"oot":[["order:nsubj",4]]}]}
//! ```
//!
//! `text` and `oot` are optional. The writer emits exactly this shape with no
//! insignificant whitespace, so load → write is byte-stable.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventId, EventType, Factuality, Vocabulary, VocabularyBuilder};

/// Highest ordinal rating an out-of-text candidate may carry.
pub const MAX_RATING: u8 = 4;

/// An out-of-text event candidate with its annotator rating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OotCandidate {
    pub key: String,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEvent {
    pub event: EventType,
    pub text: Option<Vec<String>>,
    pub oot: Option<Vec<OotCandidate>>,
}

impl ChainEvent {
    pub fn new(event: EventType) -> Self {
        ChainEvent {
            event,
            text: None,
            oot: None,
        }
    }

    pub fn oot_candidates(&self) -> &[OotCandidate] {
        self.oot.as_deref().unwrap_or(&[])
    }

    pub fn text_tokens(&self) -> &[String] {
        self.text.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventChain {
    pub chain_id: String,
    pub events: Vec<ChainEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChainCorpus {
    pub chains: Vec<EventChain>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    chain_id: String,
    events: Vec<RawEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    pred: String,
    dep: String,
    fact: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    text: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    oot: Option<Vec<(String, u8)>>,
}

fn parse_event(raw: RawEvent) -> Result<ChainEvent> {
    let fact: Factuality = raw.fact.parse()?;
    let event = EventType::with_factuality(&raw.pred, &raw.dep, fact)?;
    if let Some(text) = &raw.text {
        if text.is_empty() {
            return Err(Error::format("text, when present, must be non-empty"));
        }
    }
    let oot = match raw.oot {
        Some(list) => {
            let mut out = Vec::with_capacity(list.len());
            for (key, rating) in list {
                if rating > MAX_RATING {
                    return Err(Error::format(format!(
                        "rating {rating} for {key:?} outside 0..={MAX_RATING}"
                    )));
                }
                EventType::from_key(&key)?;
                out.push(OotCandidate { key, rating });
            }
            Some(out)
        }
        None => None,
    };
    Ok(ChainEvent {
        event,
        text: raw.text,
        oot,
    })
}

impl EventChain {
    /// Parses one line of the chain format.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: RawChain =
            serde_json::from_str(line).map_err(|e| Error::format(e.to_string()))?;
        if raw.chain_id.is_empty() {
            return Err(Error::format("empty chain_id"));
        }
        let events = raw
            .events
            .into_iter()
            .map(parse_event)
            .collect::<Result<Vec<_>>>()?;
        if events.is_empty() {
            return Err(Error::format(format!("chain {} has no events", raw.chain_id)));
        }
        Ok(EventChain {
            chain_id: raw.chain_id,
            events,
        })
    }

    /// Canonical single-line encoding.
    pub fn to_json_line(&self) -> String {
        let raw = RawChain {
            chain_id: self.chain_id.clone(),
            events: self
                .events
                .iter()
                .map(|e| RawEvent {
                    pred: e.event.predicate().to_string(),
                    dep: e.event.relation().to_string(),
                    fact: e.event.factuality.label().to_string(),
                    text: e.text.clone(),
                    oot: e
                        .oot
                        .as_ref()
                        .map(|l| l.iter().map(|c| (c.key.clone(), c.rating)).collect()),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("chain serialization cannot fail")
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keeps only positive-factuality events, preserving order.
    pub fn factual(&self) -> EventChain {
        EventChain {
            chain_id: self.chain_id.clone(),
            events: self
                .events
                .iter()
                .filter(|e| e.event.factuality == Factuality::Positive)
                .cloned()
                .collect(),
        }
    }

    pub fn ids(&self, vocab: &Vocabulary) -> Vec<EventId> {
        self.events.iter().map(|e| vocab.lookup(&e.event.key())).collect()
    }
}

impl ChainCorpus {
    pub fn new(chains: Vec<EventChain>, provenance: impl Into<String>) -> Result<Self> {
        let corpus = ChainCorpus {
            chains,
            provenance: provenance.into(),
        };
        corpus.check_unique_ids()?;
        Ok(corpus)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.chains.len());
        for c in &self.chains {
            if !seen.insert(c.chain_id.as_str()) {
                return Err(Error::format(format!("duplicate chain_id {:?}", c.chain_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn read<R: BufRead>(reader: R, factual_only: bool) -> Result<Self> {
        let mut chains = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::format_at(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let chain = EventChain::from_json_line(&line).map_err(|e| match e {
                Error::Format { msg, .. } | Error::Invalid(msg) => Error::format_at(lineno, msg),
                other => other,
            })?;
            if let Some(first) = seen.insert(chain.chain_id.clone(), lineno) {
                return Err(Error::format_at(
                    lineno,
                    format!("duplicate chain_id {:?} (first at line {first})", chain.chain_id),
                ));
            }
            let chain = if factual_only { chain.factual() } else { chain };
            if !chain.is_empty() {
                chains.push(chain);
            }
        }
        Ok(ChainCorpus {
            chains,
            provenance: String::new(),
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.chains {
            w.write_all(c.to_json_line().as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_id_sequences(&self, vocab: &Vocabulary) -> Vec<Vec<EventId>> {
        self.chains.iter().map(|c| c.ids(vocab)).collect()
    }
}

/// Reads a chain file. With `factual_only`, non-positive events are removed
/// and chains left empty are dropped.
pub fn load_chains(path: impl AsRef<Path>, factual_only: bool) -> Result<ChainCorpus> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = ChainCorpus::read(BufReader::new(f), factual_only).map_err(|e| e.in_file(path))?;
    corpus.provenance = path.display().to_string();
    Ok(corpus)
}

/// Split sizes by the largest-remainder rule, so they always sum to `n`.
fn split_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Partitions chains by a seeded shuffle. Each split keeps the chains in
/// their original corpus order.
pub fn split_corpus(corpus: &ChainCorpus, ratios: &[f64], seed: u64) -> Result<Vec<ChainCorpus>> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("split ratios must be positive"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {total}, not 1")));
    }
    let n = corpus.len();
    if n < ratios.len() {
        return Err(Error::invalid(format!(
            "{n} chains cannot fill {} splits",
            ratios.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out = Vec::with_capacity(ratios.len());
    let mut start = 0;
    for (i, size) in split_sizes(n, ratios).into_iter().enumerate() {
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        start += size;
        out.push(ChainCorpus {
            chains: idx.into_iter().map(|j| corpus.chains[j].clone()).collect(),
            provenance: format!("{} [split {i} seed {seed}]", corpus.provenance),
        });
    }
    Ok(out)
}

/// Uniform seeded sample of `n` chains (all of them when `n` exceeds the
/// corpus), kept in corpus order. Used to pick the annotated subset.
pub fn select_subset(corpus: &ChainCorpus, n: usize, seed: u64) -> ChainCorpus {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    ChainCorpus {
        chains: idx.into_iter().map(|j| corpus.chains[j].clone()).collect(),
        provenance: format!("{} [subset {n} seed {seed}]", corpus.provenance),
    }
}

/// Interns every chain event and every out-of-text candidate key, in corpus
/// order, then applies the count threshold.
pub fn build_vocab_from(corpus: &ChainCorpus, min_count: u64) -> Result<Vocabulary> {
    let mut b = VocabularyBuilder::new();
    for chain in &corpus.chains {
        for ev in &chain.events {
            b.intern(&ev.event);
            for cand in ev.oot_candidates() {
                b.intern_key(&cand.key)?;
            }
        }
    }
    b.finalize(min_count)
}

/// Vocabulary over text tokens. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

pub const UNK_TOKEN: &str = "<unk>";

impl TokenVocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        TokenVocabulary { tokens, index }
    }

    /// Tokens seen at least `min_count` times, in first-seen order.
    pub fn build(corpus: &ChainCorpus, min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for chain in &corpus.chains {
            for ev in &chain.events {
                for t in ev.text_tokens() {
                    let c = counts.entry(t.as_str()).or_insert(0);
                    if *c == 0 {
                        order.push(t.as_str());
                    }
                    *c += 1;
                }
            }
        }
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(
            order
                .into_iter()
                .filter(|t| counts[t] >= min_count && *t != UNK_TOKEN)
                .map(str::to_string),
        );
        Self::from_tokens(tokens)
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    /// Header line, then one JSON-quoted token per line in id order.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TOKENS_MAGIC}\t{}", self.tokens.len())?;
        for t in &self.tokens {
            writeln!(w, "{}", serde_json::to_string(t).expect("strings serialize"))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(Ok(h)) => h,
            _ => return Err(Error::format_at(1, "empty token vocabulary file")),
        };
        let size: usize = header
            .strip_prefix(TOKENS_MAGIC)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::format_at(1, "bad token vocabulary header"))?;
        let mut tokens = Vec::with_capacity(size);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format_at(i + 2, e.to_string()))?;
            let t: String =
                serde_json::from_str(&line).map_err(|e| Error::format_at(i + 2, format!("bad token: {e}")))?;
            tokens.push(t);
        }
        if tokens.len() != size || tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::format(format!(
                "token vocabulary declares {size} tokens starting with {UNK_TOKEN}, found {}",
                tokens.len()
            )));
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f)).map_err(|e| e.in_file(path))
    }
}

const TOKENS_MAGIC: &str = "#scriptcausal-tokens v1";

impl Default for TokenVocabulary {
    fn default() -> Self {
        Self::from_tokens(vec![UNK_TOKEN.to_string()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_vocabulary_round_trip() {
        let t = TokenVocabulary::from_tokens(vec![UNK_TOKEN.into(), "he".into(), "tab\there".into()]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = TokenVocabulary::read(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.lookup("tab\there"), 2);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, buf);
        assert!(TokenVocabulary::read(&b"#scriptcausal-tokens v1\t2\n\"<unk>\"\n"[..]).is_err());
    }

    const SAMPLE: &str = r#"{"chain_id":"c1","events":[{"pred":"eat","dep":"nsubj","fact":"pos","text":["he","ate"]},{"pred":"ghost","dep":"nsubj","fact":"neg"},{"pred":"pay","dep":"nsubj","fact":"pos","oot":[["order:nsubj",4],["tip:nsubj",1]]}]}
{"chain_id":"c2","events":[{"pred":"ghost","dep":"dobj","fact":"unc"}]}
"#;

    #[test]
    fn factual_filter_drops_non_positive_events() {
        let c = ChainCorpus::read(SAMPLE.as_bytes(), true).unwrap();
        assert_eq!(c.len(), 1, "the all-uncertain chain is dropped");
        let keys: Vec<String> = c.chains[0].events.iter().map(|e| e.event.key()).collect();
        assert_eq!(keys, ["eat:nsubj", "pay:nsubj"]);
    }

    #[test]
    fn unfiltered_keeps_everything() {
        let c = ChainCorpus::read(SAMPLE.as_bytes(), false).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.chains[0].len(), 3);
    }

    #[test]
    fn canonical_writer_is_byte_stable() {
        let c = ChainCorpus::read(SAMPLE.as_bytes(), false).unwrap();
        let mut out = Vec::new();
        c.write(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), SAMPLE);
    }

    #[test]
    fn duplicate_chain_id_names_the_id() {
        let text = format!("{}{}", SAMPLE.lines().next().unwrap(), "\n")
            + SAMPLE.lines().next().unwrap();
        let err = ChainCorpus::read(text.as_bytes(), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c1") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let text = format!("{}\nnot json\n", SAMPLE.lines().next().unwrap());
        let err = ChainCorpus::read(text.as_bytes(), false).unwrap_err();
        assert!(err.to_string().contains("line 2"));

        let bad_fact = r#"{"chain_id":"x","events":[{"pred":"a","dep":"b","fact":"maybe"}]}"#;
        let err = ChainCorpus::read(bad_fact.as_bytes(), false).unwrap_err();
        assert!(err.to_string().contains("factuality"));

        let bad_rating = r#"{"chain_id":"x","events":[{"pred":"a","dep":"b","fact":"pos","oot":[["c:d",5]]}]}"#;
        assert!(ChainCorpus::read(bad_rating.as_bytes(), false).is_err());

        let empty_text = r#"{"chain_id":"x","events":[{"pred":"a","dep":"b","fact":"pos","text":[]}]}"#;
        assert!(ChainCorpus::read(empty_text.as_bytes(), false).is_err());
    }

    fn numbered(n: usize) -> ChainCorpus {
        let chains = (0..n)
            .map(|i| EventChain {
                chain_id: format!("c{i}"),
                events: vec![ChainEvent::new(EventType::new("walk", "nsubj").unwrap())],
            })
            .collect();
        ChainCorpus::new(chains, "test").unwrap()
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let parts = split_corpus(&numbered(100), &[0.9, 0.05, 0.05], 7).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes, [90, 5, 5]);
        let again = split_corpus(&numbered(100), &[0.9, 0.05, 0.05], 7).unwrap();
        assert_eq!(parts, again);
        let other = split_corpus(&numbered(100), &[0.9, 0.05, 0.05], 8).unwrap();
        assert_ne!(parts[1], other[1]);
    }

    #[test]
    fn split_preconditions() {
        assert!(split_corpus(&numbered(100), &[0.8, 0.05, 0.05], 1).is_err());
        assert!(split_corpus(&numbered(2), &[0.5, 0.25, 0.25], 1).is_err());
        assert!(split_corpus(&numbered(10), &[1.2, -0.2], 1).is_err());
    }

    #[test]
    fn largest_remainder_sizes() {
        assert_eq!(split_sizes(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), [4, 3, 3]);
        assert_eq!(split_sizes(3, &[0.9, 0.05, 0.05]), [3, 0, 0]);
    }

    #[test]
    fn vocab_from_corpus() {
        let c = ChainCorpus::read(SAMPLE.as_bytes(), false).unwrap();
        let v = build_vocab_from(&c, 1).unwrap();
        // eat, ghost:nsubj, pay, order, tip, ghost:dobj
        assert_eq!(v.num_events(), 6);
        assert_eq!(v.lookup("eat:nsubj"), EventId::FIRST);
        assert_eq!(build_vocab_from(&c, 1).unwrap(), v);
        assert!(build_vocab_from(&c, 5).unwrap().is_empty());
    }

    #[test]
    fn token_vocab() {
        let c = ChainCorpus::read(SAMPLE.as_bytes(), false).unwrap();
        let t = TokenVocabulary::build(&c, 1);
        assert_eq!(t.len(), 3);
        assert_eq!(t.lookup("ate"), 2);
        assert_eq!(t.lookup("never"), 0);
    }

    #[test]
    fn subset_is_seeded_and_ordered() {
        let c = numbered(50);
        let a = select_subset(&c, 10, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, select_subset(&c, 10, 3));
        let ids: Vec<usize> = a.chains.iter().map(|c| c.chain_id[1..].parse().unwrap()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}
