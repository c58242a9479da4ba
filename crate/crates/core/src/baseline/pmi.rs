//! Ordered skip-bigram counts and discounted PMI.
//!
//! For every chain position `i`, each later event within `window` positions
//! (`i < j <= i + window`) contributes one ordered pair `(e_i, e_j)`.
//! Marginals are taken over the counted pairs.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::causal::score::PairScorer;
use crate::corpus::ChainCorpus;
use crate::error::{Error, Result};
use crate::event::{EventId, Vocabulary};

const PMI_MAGIC: &str = "#scriptcausal-pmi v1";
const SHARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipBigramConfig {
    pub window: usize,
    /// Count `(e, e)` pairs when an event repeats within the window.
    pub self_pairs: bool,
}

impl Default for SkipBigramConfig {
    fn default() -> Self {
        SkipBigramConfig {
            window: 2,
            self_pairs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedCounts {
    pub config: SkipBigramConfig,
    pairs: HashMap<(EventId, EventId), u64>,
    left: Vec<u64>,
    right: Vec<u64>,
    total: u64,
}

impl OrderedCounts {
    pub fn new(config: SkipBigramConfig, vocab_len: usize) -> Self {
        OrderedCounts {
            config,
            pairs: HashMap::new(),
            left: vec![0; vocab_len],
            right: vec![0; vocab_len],
            total: 0,
        }
    }

    fn add_pair(&mut self, a: EventId, b: EventId, n: u64) {
        *self.pairs.entry((a, b)).or_insert(0) += n;
        self.left[a.index()] += n;
        self.right[b.index()] += n;
        self.total += n;
    }

    fn add_chain(&mut self, chain: &[EventId]) {
        let w = self.config.window;
        for i in 0..chain.len() {
            for j in i + 1..chain.len().min(i + w + 1) {
                if self.config.self_pairs || chain[i] != chain[j] {
                    self.add_pair(chain[i], chain[j], 1);
                }
            }
        }
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &OrderedCounts) {
        let mut entries: Vec<_> = other.pairs.iter().collect();
        entries.sort_unstable();
        for (&(a, b), &n) in entries {
            self.add_pair(a, b, n);
        }
    }

    pub fn pair(&self, a: EventId, b: EventId) -> u64 {
        self.pairs.get(&(a, b)).copied().unwrap_or(0)
    }

    pub fn left(&self, e: EventId) -> u64 {
        self.left[e.index()]
    }

    pub fn right(&self, e: EventId) -> u64 {
        self.right[e.index()]
    }

    pub fn grand_total(&self) -> u64 {
        self.total
    }

    pub fn vocab_len(&self) -> usize {
        self.left.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Pairs sorted by `(e1, e2)`.
    pub fn sorted_pairs(&self) -> Vec<((EventId, EventId), u64)> {
        let mut v: Vec<_> = self.pairs.iter().map(|(&k, &n)| (k, n)).collect();
        v.sort_unstable();
        v
    }

    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{PMI_MAGIC}\twindow={}\tself_pairs={}\ttotal={}",
            self.config.window, self.config.self_pairs as u8, self.total
        )?;
        for ((a, b), n) in self.sorted_pairs() {
            writeln!(w, "{}\t{}\t{n}", vocab.key_of(a), vocab.key_of(b))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(vocab: &Vocabulary, r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format_at(1, "empty count file"))?
            .map_err(|e| Error::format_at(1, e.to_string()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let field = |i: usize, name: &str| -> Result<u64> {
            fields
                .get(i)
                .and_then(|f| f.strip_prefix(name))
                .and_then(|f| f.strip_prefix('='))
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::format_at(1, format!("bad {name} in count header")))
        };
        if fields.first() != Some(&PMI_MAGIC) || fields.len() != 4 {
            return Err(Error::format_at(1, "not a scriptcausal count file"));
        }
        let config = SkipBigramConfig {
            window: field(1, "window")? as usize,
            self_pairs: field(2, "self_pairs")? != 0,
        };
        let total = field(3, "total")?;
        let mut counts = OrderedCounts::new(config, vocab.len());
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::format_at(lineno, e.to_string()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::format_at(lineno, "expected e1, e2, count"));
            }
            let id = |k: &str| {
                vocab
                    .id_of(k)
                    .ok_or_else(|| Error::format_at(lineno, format!("unknown event {k:?}")))
            };
            let n: u64 = parts[2]
                .parse()
                .map_err(|_| Error::format_at(lineno, "bad count"))?;
            counts.add_pair(id(parts[0])?, id(parts[1])?, n);
        }
        if counts.total != total {
            return Err(Error::format(format!(
                "header total {total} disagrees with summed counts {}",
                counts.total
            )));
        }
        Ok(counts)
    }
}

/// Counts ordered skip-bigrams over id sequences. Shards of chains are
/// counted in parallel and merged in shard order.
pub fn count_sequences(
    chains: &[Vec<EventId>],
    vocab_len: usize,
    config: SkipBigramConfig,
) -> Result<OrderedCounts> {
    if config.window < 1 {
        return Err(Error::invalid("skip-bigram window must be at least 1"));
    }
    if let Some(bad) = chains.iter().flatten().find(|e| e.index() >= vocab_len) {
        return Err(Error::invalid(format!("event {bad} outside vocabulary")));
    }
    let shards: Vec<OrderedCounts> = chains
        .par_chunks(SHARD)
        .map(|shard| {
            let mut c = OrderedCounts::new(config, vocab_len);
            for chain in shard {
                c.add_chain(chain);
            }
            c
        })
        .collect();
    let mut total = OrderedCounts::new(config, vocab_len);
    for s in &shards {
        total.merge(s);
    }
    Ok(total)
}

pub fn count_skip_bigrams(
    corpus: &ChainCorpus,
    vocab: &Vocabulary,
    config: SkipBigramConfig,
) -> Result<OrderedCounts> {
    count_sequences(&corpus.to_id_sequences(vocab), vocab.len(), config)
}

/// Ordered PMI of `e1` followed by `e2`; `-inf` when the pair was never
/// counted. The discount multiplies by `c/(c+1) · m/(m+1)` with
/// `m = min(left(e1), right(e2))`.
pub fn ordered_pmi(counts: &OrderedCounts, e1: EventId, e2: EventId, discounted: bool) -> Result<f64> {
    for e in [e1, e2] {
        if e.index() >= counts.vocab_len() {
            return Err(Error::invalid(format!("unknown event {e}")));
        }
    }
    let c = counts.pair(e1, e2);
    if c == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let t = counts.total as f64;
    let (c, l, r) = (c as f64, counts.left(e1) as f64, counts.right(e2) as f64);
    let raw = ((c / t) / ((l / t) * (r / t))).ln();
    if !discounted {
        return Ok(raw);
    }
    let m = l.min(r);
    Ok(raw * (c / (c + 1.0)) * (m / (m + 1.0)))
}

/// PMI as a pairwise script score, `score(prev, next) = PMI(prev, next)`.
#[derive(Debug, Clone)]
pub struct PmiScorer {
    pub counts: OrderedCounts,
    pub discounted: bool,
}

impl PairScorer for PmiScorer {
    fn score(&self, prev: EventId, next: EventId) -> f64 {
        ordered_pmi(&self.counts, prev, next, self.discounted).unwrap_or(f64::NEG_INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<EventId> {
        v.iter().map(|&i| EventId(i)).collect()
    }

    fn pairs(c: &OrderedCounts) -> Vec<(u32, u32, u64)> {
        c.sorted_pairs().into_iter().map(|((a, b), n)| (a.0, b.0, n)).collect()
    }

    #[test]
    fn window_enumeration() {
        let c = count_sequences(&[ids(&[3, 4, 5])], 6, SkipBigramConfig::default()).unwrap();
        assert_eq!(pairs(&c), [(3, 4, 1), (3, 5, 1), (4, 5, 1)]);
        let w1 = SkipBigramConfig {
            window: 1,
            ..Default::default()
        };
        let c = count_sequences(&[ids(&[3, 4, 5, 6])], 7, w1).unwrap();
        assert_eq!(pairs(&c), [(3, 4, 1), (4, 5, 1), (5, 6, 1)]);
    }

    #[test]
    fn self_pairs_follow_config() {
        let c = count_sequences(&[ids(&[3, 3])], 4, SkipBigramConfig::default()).unwrap();
        assert_eq!(pairs(&c), [(3, 3, 1)]);
        let no_self = SkipBigramConfig {
            self_pairs: false,
            ..Default::default()
        };
        let c = count_sequences(&[ids(&[3, 3])], 4, no_self).unwrap();
        assert_eq!(c.grand_total(), 0);
    }

    #[test]
    fn zero_window_rejected() {
        let cfg = SkipBigramConfig {
            window: 0,
            self_pairs: true,
        };
        assert!(count_sequences(&[], 3, cfg).is_err());
    }

    /// c(x,y)=3, left(x)=4, right(y)=3, T=10.
    fn fixture() -> OrderedCounts {
        let (x, y, a, b) = (EventId(3), EventId(4), EventId(5), EventId(6));
        let mut c = OrderedCounts::new(SkipBigramConfig::default(), 7);
        c.add_pair(x, y, 3);
        c.add_pair(x, a, 1);
        c.add_pair(a, b, 6);
        c
    }

    #[test]
    fn pmi_values() {
        let c = fixture();
        assert_eq!(c.grand_total(), 10);
        let raw = ordered_pmi(&c, EventId(3), EventId(4), false).unwrap();
        assert!((raw - 2.5f64.ln()).abs() < 1e-12);
        assert!((raw - 0.9163).abs() < 1e-4);
        let disc = ordered_pmi(&c, EventId(3), EventId(4), true).unwrap();
        assert!((disc - 2.5f64.ln() * 0.5625).abs() < 1e-12);
        assert!((disc - 0.5154).abs() < 1e-4);
        assert_eq!(ordered_pmi(&c, EventId(4), EventId(3), true).unwrap(), f64::NEG_INFINITY);
        assert!(ordered_pmi(&c, EventId(3), EventId(9), true).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let mut b = crate::event::VocabularyBuilder::new();
        for k in ["x:a", "y:a", "z:a", "w:a"] {
            b.intern_key(k).unwrap();
        }
        let vocab = b.finalize(1).unwrap();
        let c = fixture();
        let mut buf = Vec::new();
        c.write_tsv(&vocab, &mut buf).unwrap();
        let back = OrderedCounts::read_tsv(&vocab, buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_tsv(&vocab, &mut again).unwrap();
        assert_eq!(again, buf);
    }
}
