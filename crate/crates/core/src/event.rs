//! Atomic events, vocabulary interning and frequency ranks.
//!
//! An event is a `(predicate, relation)` pair such as `eat:nsubj`. Its
//! canonical key joins both parts with `:`; factuality travels with the event
//! but is not part of its identity.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

const SEPARATOR: char = ':';

pub const UNK_KEY: &str = "<unk>";
pub const START_KEY: &str = "<s>";
pub const END_KEY: &str = "</s>";

/// Default minimum count for a key to survive finalization.
pub const DEFAULT_MIN_COUNT: u64 = 10;

const VOCAB_MAGIC: &str = "#scriptcausal-vocab v1";

/// Dense integer handle for an interned event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u32);

impl EventId {
    pub const UNK: EventId = EventId(0);
    pub const START: EventId = EventId(1);
    pub const END: EventId = EventId(2);
    /// First id handed to a real event after finalization.
    pub const FIRST: EventId = EventId(3);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_special(self) -> bool {
        self.0 < Self::FIRST.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Factuality {
    #[default]
    Positive,
    Uncertain,
    Negative,
}

impl Factuality {
    pub fn label(self) -> &'static str {
        match self {
            Factuality::Positive => "pos",
            Factuality::Uncertain => "unc",
            Factuality::Negative => "neg",
        }
    }
}

impl FromStr for Factuality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(Factuality::Positive),
            "unc" => Ok(Factuality::Uncertain),
            "neg" => Ok(Factuality::Negative),
            other => Err(Error::format(format!("unknown factuality label {other:?}"))),
        }
    }
}

/// A protagonist event: predicate lemma plus dependency relation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventType {
    predicate: String,
    relation: String,
    pub factuality: Factuality,
}

fn check_part(what: &str, s: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("empty {what}")));
    }
    if s.contains(SEPARATOR) || s.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "{what} {s:?} contains whitespace or ':'"
        )));
    }
    Ok(())
}

impl EventType {
    pub fn new(predicate: &str, relation: &str) -> Result<Self> {
        Self::with_factuality(predicate, relation, Factuality::Positive)
    }

    pub fn with_factuality(predicate: &str, relation: &str, factuality: Factuality) -> Result<Self> {
        check_part("predicate", predicate)?;
        check_part("relation", relation)?;
        Ok(EventType {
            predicate: predicate.to_string(),
            relation: relation.to_string(),
            factuality,
        })
    }

    /// Parses a canonical `predicate:relation` key.
    pub fn from_key(key: &str) -> Result<Self> {
        let (p, r) = key
            .split_once(SEPARATOR)
            .ok_or_else(|| Error::invalid(format!("event key {key:?} lacks ':'")))?;
        Self::new(p, r)
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn key(&self) -> String {
        format!("{}{SEPARATOR}{}", self.predicate, self.relation)
    }
}

/// Building-phase interner. Ids here are provisional; [`finalize`] assigns
/// the final dense ids.
///
/// [`finalize`]: VocabularyBuilder::finalize
#[derive(Debug, Default, Clone)]
pub struct VocabularyBuilder {
    index: HashMap<String, u32>,
    keys: Vec<String>,
    counts: Vec<u64>,
}

impl VocabularyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `predicate:relation`, bumping its count. Returns the
    /// provisional id, stable for the lifetime of the builder.
    pub fn intern_event(&mut self, predicate: &str, relation: &str) -> Result<u32> {
        check_part("predicate", predicate)?;
        check_part("relation", relation)?;
        Ok(self.bump(format!("{predicate}{SEPARATOR}{relation}")))
    }

    pub fn intern(&mut self, event: &EventType) -> u32 {
        self.bump(event.key())
    }

    pub fn intern_key(&mut self, key: &str) -> Result<u32> {
        let ev = EventType::from_key(key)?;
        Ok(self.intern(&ev))
    }

    fn bump(&mut self, key: String) -> u32 {
        if let Some(&id) = self.index.get(&key) {
            self.counts[id as usize] += 1;
            return id;
        }
        let id = self.keys.len() as u32;
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        self.counts.push(1);
        id
    }

    pub fn count(&self, provisional: u32) -> u64 {
        self.counts[provisional as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Drops keys seen fewer than `min_count` times (their mass moves to
    /// UNK) and re-densifies ids after the three specials, preserving
    /// interning order.
    pub fn finalize(self, min_count: u64) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::invalid("min_count must be at least 1"));
        }
        let mut vocab = Vocabulary::specials_only(min_count);
        for (key, count) in self.keys.into_iter().zip(self.counts) {
            if count >= min_count {
                vocab.push(key, count);
            } else {
                vocab.counts[EventId::UNK.index()] += count;
            }
        }
        Ok(vocab)
    }
}

/// Finalized, immutable event vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    keys: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, EventId>,
    min_count: u64,
}

impl Vocabulary {
    fn specials_only(min_count: u64) -> Self {
        let mut v = Vocabulary {
            keys: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
            min_count,
        };
        for key in [UNK_KEY, START_KEY, END_KEY] {
            v.push(key.to_string(), 0);
        }
        v
    }

    fn push(&mut self, key: String, count: u64) -> EventId {
        let id = EventId(self.keys.len() as u32);
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        self.counts.push(count);
        id
    }

    /// Number of ids, specials included.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    /// True when only the specials are present.
    pub fn is_empty(&self) -> bool {
        self.keys.len() == EventId::FIRST.index()
    }

    pub fn num_events(&self) -> usize {
        self.keys.len() - EventId::FIRST.index()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id_of(&self, key: &str) -> Option<EventId> {
        self.index.get(key).copied()
    }

    /// Maps a key to its id, falling back to UNK.
    pub fn lookup(&self, key: &str) -> EventId {
        self.id_of(key).unwrap_or(EventId::UNK)
    }

    pub fn key_of(&self, id: EventId) -> &str {
        &self.keys[id.index()]
    }

    pub fn count(&self, id: EventId) -> u64 {
        self.counts[id.index()]
    }

    pub fn contains(&self, id: EventId) -> bool {
        id.index() < self.keys.len()
    }

    /// Non-special ids in ascending order.
    pub fn event_ids(&self) -> impl Iterator<Item = EventId> + '_ {
        (EventId::FIRST.0..self.keys.len() as u32).map(EventId)
    }

    pub fn frequency_rank(&self) -> FrequencyRank {
        let mut ids: Vec<EventId> = self.event_ids().collect();
        ids.sort_by(|a, b| self.count(*b).cmp(&self.count(*a)).then(a.cmp(b)));
        FrequencyRank::new(ids, self.len())
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{VOCAB_MAGIC}\t{}\t{}", self.len(), self.min_count)?;
        for (i, (key, count)) in self.keys.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{key}\t{i}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format_at(1, "empty vocabulary file"))?;
        let header = header.map_err(|e| Error::format_at(1, e.to_string()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 3 || fields[0] != VOCAB_MAGIC {
            return Err(Error::format_at(1, "bad vocabulary header"));
        }
        let size: usize = fields[1]
            .parse()
            .map_err(|_| Error::format_at(1, "bad vocabulary size"))?;
        let min_count: u64 = fields[2]
            .parse()
            .map_err(|_| Error::format_at(1, "bad min_count"))?;

        let mut v = Vocabulary {
            keys: Vec::with_capacity(size),
            counts: Vec::with_capacity(size),
            index: HashMap::with_capacity(size),
            min_count,
        };
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::format_at(lineno, e.to_string()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::format_at(lineno, "expected key, id, count"));
            }
            let id: usize = parts[1]
                .parse()
                .map_err(|_| Error::format_at(lineno, "bad id"))?;
            let count: u64 = parts[2]
                .parse()
                .map_err(|_| Error::format_at(lineno, "bad count"))?;
            if id != v.keys.len() {
                return Err(Error::format_at(lineno, "ids must be dense and ascending"));
            }
            let expected_special = [UNK_KEY, START_KEY, END_KEY].get(id);
            match expected_special {
                Some(s) if parts[0] != *s => {
                    return Err(Error::format_at(lineno, format!("expected special {s}")))
                }
                None => {
                    EventType::from_key(parts[0]).map_err(|e| Error::format_at(lineno, e.to_string()))?;
                }
                _ => {}
            }
            if v.index.contains_key(parts[0]) {
                return Err(Error::format_at(lineno, format!("duplicate key {}", parts[0])));
            }
            v.push(parts[0].to_string(), count);
        }
        if v.keys.len() != size || size < EventId::FIRST.index() {
            return Err(Error::format(format!(
                "header declares {size} ids but file has {}",
                v.keys.len()
            )));
        }
        Ok(v)
    }
}

/// Non-special event ids by descending count, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyRank {
    order: Vec<EventId>,
    // 0-based position of each id in `order`; usize::MAX for specials
    position: Vec<usize>,
}

impl FrequencyRank {
    fn new(order: Vec<EventId>, vocab_len: usize) -> Self {
        let mut position = vec![usize::MAX; vocab_len];
        for (i, id) in order.iter().enumerate() {
            position[id.index()] = i;
        }
        FrequencyRank { order, position }
    }

    pub fn as_slice(&self) -> &[EventId] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based rank, `None` for specials and unknown ids.
    pub fn rank_of(&self, id: EventId) -> Option<usize> {
        match self.position.get(id.index()) {
            Some(&p) if p != usize::MAX => Some(p + 1),
            _ => None,
        }
    }

    /// Whether `id` is among the `top` most frequent events.
    pub fn in_top(&self, id: EventId, top: usize) -> bool {
        self.rank_of(id).is_some_and(|r| r <= top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_idempotent() {
        let mut b = VocabularyBuilder::new();
        let a = b.intern_event("eat", "nsubj").unwrap();
        let a2 = b.intern_event("eat", "nsubj").unwrap();
        assert_eq!(a, a2);
        assert_eq!(b.count(a), 2);
        let d = b.intern_event("eat", "dobj").unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn rejects_bad_parts() {
        let mut b = VocabularyBuilder::new();
        assert!(b.intern_event("pay", "").is_err());
        assert!(b.intern_event("", "nsubj").is_err());
        assert!(b.intern_event("pa:y", "nsubj").is_err());
        assert!(b.intern_event("pay up", "nsubj").is_err());
    }

    fn build(entries: &[(&str, u64)], min_count: u64) -> Vocabulary {
        let mut b = VocabularyBuilder::new();
        for (key, n) in entries {
            for _ in 0..*n {
                b.intern_key(key).unwrap();
            }
        }
        b.finalize(min_count).unwrap()
    }

    #[test]
    fn finalize_thresholds_into_unk() {
        let v = build(&[("a:x", 5), ("b:x", 1)], 2);
        assert_eq!(v.num_events(), 1);
        assert_eq!(v.lookup("a:x"), EventId::FIRST);
        assert_eq!(v.lookup("b:x"), EventId::UNK);
        assert_eq!(v.count(EventId::UNK), 1);
    }

    #[test]
    fn finalize_min_count_one_keeps_everything() {
        let v = build(&[("a:x", 5), ("b:x", 1)], 1);
        assert_eq!(v.num_events(), 2);
        assert_eq!(v.lookup("b:x"), EventId(4));
        assert_eq!(v.key_of(EventId(4)), "b:x");
    }

    #[test]
    fn finalize_rejects_zero_threshold() {
        assert!(VocabularyBuilder::new().finalize(0).is_err());
    }

    #[test]
    fn empty_builder_yields_specials() {
        let v = VocabularyBuilder::new().finalize(10).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.is_empty());
        assert_eq!(v.key_of(EventId::START), START_KEY);
        assert!(v.frequency_rank().is_empty());
    }

    #[test]
    fn rank_orders_by_count_then_id() {
        let v = build(&[("a:x", 3), ("b:x", 7), ("c:x", 3)], 1);
        let r = v.frequency_rank();
        let keys: Vec<&str> = r.as_slice().iter().map(|&id| v.key_of(id)).collect();
        assert_eq!(keys, ["b:x", "a:x", "c:x"]);
        assert_eq!(r.rank_of(v.lookup("b:x")), Some(1));
        assert_eq!(r.rank_of(EventId::UNK), None);
        assert!(r.in_top(v.lookup("a:x"), 2));
        assert!(!r.in_top(v.lookup("c:x"), 2));
    }

    #[test]
    fn rank_with_equal_counts_is_by_id() {
        let v = build(&[("z:x", 2), ("y:x", 2), ("x:x", 2)], 1);
        let r = v.frequency_rank();
        assert_eq!(r.as_slice(), &[EventId(3), EventId(4), EventId(5)]);
        let single = build(&[("only:x", 1)], 1);
        assert_eq!(single.frequency_rank().as_slice(), &[EventId(3)]);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build(&[("a:x", 5), ("b:x", 1), ("c:y", 9)], 2);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#scriptcausal-vocab v1\t5\t2\n<unk>\t0\t1\n<s>\t1\t0\n</s>\t2\t0\n"));
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, v);
        let mut again = Vec::new();
        back.write_tsv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn tsv_rejects_gaps() {
        let bad = "#scriptcausal-vocab v1\t4\t1\n<unk>\t0\t0\n<s>\t1\t0\n</s>\t2\t0\na:x\t5\t1\n";
        assert!(Vocabulary::read_tsv(bad.as_bytes()).is_err());
    }

    #[test]
    fn factuality_labels() {
        assert_eq!("neg".parse::<Factuality>().unwrap(), Factuality::Negative);
        assert!("maybe".parse::<Factuality>().is_err());
    }
}
