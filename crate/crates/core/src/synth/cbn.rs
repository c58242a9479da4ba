//! Scenario-confounded Markov chain generators.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::event::{EventId, EventType, Vocabulary};

const ROW_TOLERANCE: f64 = 1e-9;

/// Roles of three events in a confounded triad, used by fixture checks.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub direct_cause: String,
    pub confounded_sibling: String,
    pub effect: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub prior: f64,
    /// Smoothed kernel, `(|E| + 1) × |E|` row-major. Row 0 is START, row
    /// `i + 1` conditions on event `i`.
    kernel: Vec<f64>,
    width: usize,
}

/// A mixture of per-scenario Markov kernels. A chain draws a scenario from
/// the prior and then `length` events starting from START.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCbn {
    pub name: String,
    pub length: usize,
    pub smoothing: f64,
    events: Vec<EventType>,
    index: HashMap<String, usize>,
    pub scenarios: Vec<Scenario>,
    pub roles: Option<Roles>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    name: String,
    length: usize,
    smoothing: f64,
    events: Option<Vec<String>>,
    /// Rows shared by every scenario, before scenario overrides and weights.
    #[serde(default)]
    transitions: BTreeMap<String, BTreeMap<String, f64>>,
    scenarios: Option<Vec<ScenarioFile>>,
    roles: Option<Roles>,
    zipf: Option<ZipfParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    prior: f64,
    #[serde(default)]
    transitions: BTreeMap<String, BTreeMap<String, f64>>,
    /// Per-event weights multiplied into every row, which is then
    /// renormalized: the scenario shifts how likely each event is whatever
    /// came before. Unlisted events weigh 1.
    #[serde(default)]
    propensity: BTreeMap<String, f64>,
}

/// Parameters of the Zipf-skewed generator.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipfParams {
    pub generic: usize,
    pub exponent: f64,
    pub scenarios: usize,
    pub specific: usize,
    pub scenario_mass: f64,
}

impl Scenario {
    /// Next-event distribution given the previous event (`None` for START).
    pub fn row(&self, prev: Option<usize>) -> &[f64] {
        let r = prev.map_or(0, |i| i + 1);
        &self.kernel[r * self.width..(r + 1) * self.width]
    }
}

impl SyntheticCbn {
    /// Builds a CBN from template rows. `templates[z]` holds `|E| + 1` rows
    /// (START first) of `|E|` probabilities each; smoothing is applied here.
    pub fn from_templates(
        name: &str,
        length: usize,
        smoothing: f64,
        events: Vec<EventType>,
        scenarios: Vec<(String, f64, Vec<f64>)>,
        roles: Option<Roles>,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("chain length must be at least 1"));
        }
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::invalid("smoothing must lie in [0, 1]"));
        }
        if events.is_empty() || scenarios.is_empty() {
            return Err(Error::invalid("a CBN needs events and scenarios"));
        }
        let n = events.len();
        let mut index = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if index.insert(e.key(), i).is_some() {
                return Err(Error::invalid(format!("duplicate event {}", e.key())));
            }
        }
        let prior_sum: f64 = scenarios.iter().map(|s| s.1).sum();
        if scenarios.iter().any(|s| !(s.1 >= 0.0)) || (prior_sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::invalid("scenario priors must be non-negative and sum to 1"));
        }
        let mut built = Vec::with_capacity(scenarios.len());
        for (sname, prior, template) in scenarios {
            EventType::new(&sname, "scenario")
                .map_err(|_| Error::invalid(format!("bad scenario name {sname:?}")))?;
            if template.len() != (n + 1) * n {
                return Err(Error::Dimension(format!("scenario {sname} template has wrong size")));
            }
            let uniform = smoothing / n as f64;
            let mut kernel = Vec::with_capacity(template.len());
            for (r, row) in template.chunks(n).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "scenario {sname}: row {} does not sum to 1 (sum {sum})",
                        if r == 0 { "START".to_string() } else { events[r - 1].key() }
                    )));
                }
                kernel.extend(row.iter().map(|p| (1.0 - smoothing) * p + uniform));
            }
            if kernel.iter().any(|&p| p <= 0.0) {
                return Err(Error::invalid(format!(
                    "scenario {sname} violates positivity; raise the smoothing weight"
                )));
            }
            built.push(Scenario {
                name: sname,
                prior,
                kernel,
                width: n,
            });
        }
        if let Some(r) = &roles {
            for k in [&r.direct_cause, &r.confounded_sibling, &r.effect] {
                if !index.contains_key(k) {
                    return Err(Error::invalid(format!("role names unknown event {k}")));
                }
            }
        }
        Ok(SyntheticCbn {
            name: name.to_string(),
            length,
            smoothing,
            events,
            index,
            scenarios: built,
            roles,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SpecFile = toml::from_str(text).map_err(|e| Error::format(format!("CBN spec: {e}")))?;
        match (spec.zipf, spec.events, spec.scenarios) {
            (Some(z), None, None) => zipf_cbn(&spec.name, spec.length, spec.smoothing, &z),
            (None, Some(events), Some(scenarios)) => {
                let events: Vec<EventType> = events.iter().map(|k| EventType::from_key(k)).collect::<Result<_>>()?;
                let n = events.len();
                let pos: HashMap<String, usize> = events.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
                let lookup = |key: &str, scenario: &str| {
                    pos.get(key)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("unknown event {key} in {scenario}")))
                };
                let set_rows = |t: &mut [f64], rows: &BTreeMap<String, BTreeMap<String, f64>>, scenario: &str| -> Result<()> {
                    for (from, row) in rows {
                        let r = if from == "START" { 0 } else { lookup(from, scenario)? + 1 };
                        let dst = &mut t[r * n..(r + 1) * n];
                        dst.fill(0.0);
                        for (to, p) in row {
                            dst[lookup(to, scenario)?] = *p;
                        }
                    }
                    Ok(())
                };
                let mut shared = vec![1.0 / n as f64; (n + 1) * n];
                set_rows(&mut shared, &spec.transitions, "shared transitions")?;
                // With propensities the smoothed kernel is reweighted, so each
                // scenario multiplies event odds by the same factor after
                // every previous event.
                let weighted = scenarios.iter().any(|s| !s.propensity.is_empty());
                let mut templates = Vec::new();
                for s in scenarios {
                    let mut t = shared.clone();
                    set_rows(&mut t, &s.transitions, &s.name)?;
                    if weighted {
                        let mut w = vec![1.0; n];
                        for (key, &x) in &s.propensity {
                            if !(x > 0.0 && x.is_finite()) {
                                return Err(Error::invalid(format!("{}: propensity of {key} must be positive", s.name)));
                            }
                            w[lookup(key, &s.name)?] = x;
                        }
                        for (r, row) in t.chunks_mut(n).enumerate() {
                            let sum: f64 = row.iter().sum();
                            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                                return Err(Error::invalid(format!("{}: row {r} does not sum to 1 (sum {sum})", s.name)));
                            }
                            let uniform = spec.smoothing / n as f64;
                            row.iter_mut()
                                .zip(&w)
                                .for_each(|(p, x)| *p = ((1.0 - spec.smoothing) * *p + uniform) * x);
                            let total: f64 = row.iter().sum();
                            row.iter_mut().for_each(|p| *p /= total);
                        }
                    }
                    templates.push((s.name, s.prior, t));
                }
                if weighted {
                    if !(0.0..=1.0).contains(&spec.smoothing) {
                        return Err(Error::invalid("smoothing must lie in [0, 1]"));
                    }
                    let mut cbn = Self::from_templates(&spec.name, spec.length, 0.0, events, templates, spec.roles)?;
                    cbn.smoothing = spec.smoothing;
                    return Ok(cbn);
                }
                Self::from_templates(&spec.name, spec.length, spec.smoothing, events, templates, spec.roles)
            }
            _ => Err(Error::invalid(
                "CBN spec needs either a [zipf] table or both events and scenarios",
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.in_file(path))
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn events(&self) -> &[EventType] {
        &self.events
    }

    pub fn event_index(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn scenario_key(&self, z: usize) -> String {
        format!("{}:scenario", self.scenarios[z].name)
    }

    pub(crate) fn check_event(&self, k: usize) -> Result<()> {
        if k >= self.num_events() {
            return Err(Error::invalid(format!(
                "event index {k} outside the {} events of {}",
                self.num_events(),
                self.name
            )));
        }
        Ok(())
    }

    /// Index of a role event. Fails when the CBN declares no roles.
    pub fn role(&self, pick: impl Fn(&Roles) -> &String) -> Result<usize> {
        let roles = self
            .roles
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} declares no roles", self.name)))?;
        Ok(self.index[pick(roles)])
    }

    /// Spreads a distribution over CBN events onto vocabulary ids. Events
    /// missing from the vocabulary contribute to UNK.
    pub fn to_vocab_row(&self, vocab: &Vocabulary, dist: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; vocab.len()];
        for (e, p) in self.events.iter().zip(dist) {
            row[self.vocab_id(vocab, e).index()] += p;
        }
        row
    }

    fn vocab_id(&self, vocab: &Vocabulary, e: &EventType) -> EventId {
        vocab.lookup(&e.key())
    }

    /// Vocabulary ids of the CBN events, in CBN order.
    pub fn vocab_ids(&self, vocab: &Vocabulary) -> Vec<EventId> {
        self.events.iter().map(|e| self.vocab_id(vocab, e)).collect()
    }
}

/// Zipf-skewed generator. Generic events `generic000..` have weights
/// proportional to `rank^-exponent`; each scenario owns `specific` events
/// drawn uniformly with total mass `scenario_mass`. After START or a generic
/// event the specific set is the current scenario's; after a specific event
/// it is that event's own scenario's set.
pub fn zipf_cbn(name: &str, length: usize, smoothing: f64, p: &ZipfParams) -> Result<SyntheticCbn> {
    if p.generic == 0 || p.scenarios == 0 || p.specific == 0 {
        return Err(Error::invalid("zipf generator needs generic, scenario and specific events"));
    }
    if !(0.0..=1.0).contains(&p.scenario_mass) || !(p.exponent >= 0.0) {
        return Err(Error::invalid("bad zipf generator parameters"));
    }
    let mut events = Vec::new();
    for j in 0..p.generic {
        events.push(EventType::new(&format!("generic{j:03}"), "nsubj")?);
    }
    for z in 0..p.scenarios {
        for j in 0..p.specific {
            events.push(EventType::new(&format!("scene{z}_{j:03}"), "nsubj")?);
        }
    }
    let n = events.len();
    let weights: Vec<f64> = (1..=p.generic).map(|r| (r as f64).powf(-p.exponent)).collect();
    let total: f64 = weights.iter().sum();
    let beta = p.scenario_mass;
    let row_for = |set: usize| -> Vec<f64> {
        let mut row = vec![0.0; n];
        for (j, w) in weights.iter().enumerate() {
            row[j] = (1.0 - beta) * w / total;
        }
        let base = p.generic + set * p.specific;
        for j in 0..p.specific {
            row[base + j] = beta / p.specific as f64;
        }
        row
    };
    let scenarios = (0..p.scenarios)
        .map(|z| {
            let mut t = Vec::with_capacity((n + 1) * n);
            t.extend(row_for(z));
            for e in 0..n {
                let set = if e < p.generic { z } else { (e - p.generic) / p.specific };
                t.extend(row_for(set));
            }
            (format!("scene{z}"), 1.0 / p.scenarios as f64, t)
        })
        .collect();
    SyntheticCbn::from_templates(name, length, smoothing, events, scenarios, None)
}

pub const FIXTURE_NAMES: [&str; 4] = ["F-POPCORN", "F-DET", "F-UNIFORM", "F-ZIPF"];

/// Source text of a bundled fixture.
pub fn fixture_source(name: &str) -> Result<&'static str> {
    Ok(match name {
        "F-POPCORN" => include_str!("../../fixtures/f-popcorn.toml"),
        "F-DET" => include_str!("../../fixtures/f-det.toml"),
        "F-UNIFORM" => include_str!("../../fixtures/f-uniform.toml"),
        "F-ZIPF" => include_str!("../../fixtures/f-zipf.toml"),
        other => {
            return Err(Error::invalid(format!(
                "unknown fixture {other:?}; expected one of {}",
                FIXTURE_NAMES.join(", ")
            )))
        }
    })
}

pub fn build_fixture(name: &str) -> Result<SyntheticCbn> {
    SyntheticCbn::from_toml_str(fixture_source(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        for name in FIXTURE_NAMES {
            let cbn = build_fixture(name).unwrap();
            assert_eq!(cbn.name, name);
            for s in &cbn.scenarios {
                for prev in std::iter::once(None).chain((0..cbn.num_events()).map(Some)) {
                    let row = s.row(prev);
                    assert_eq!(row.len(), cbn.num_events());
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|&p| p > 0.0));
                }
            }
        }
        assert!(build_fixture("F-NOPE").is_err());
    }

    #[test]
    fn zipf_sizes() {
        let cbn = build_fixture("F-ZIPF").unwrap();
        assert_eq!(cbn.num_events(), 500);
        assert_eq!(cbn.scenarios.len(), 4);
    }

    #[test]
    fn missing_rows_are_uniform_templates() {
        let cbn = build_fixture("F-DET").unwrap();
        let start = cbn.scenarios[0].row(None);
        assert!(start.iter().all(|&p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn smoothing_then_propensity_reweighting() {
        let cbn = build_fixture("F-POPCORN").unwrap();
        let eat = cbn.event_index("eat:nsubj").unwrap();
        let watch = cbn.event_index("watch:nsubj").unwrap();
        // Smoothed shared row: watch .4625, cry .1925, sit .2825, others
        // .0125. Cinema weighs eat by 6 and cry by 8.
        let cinema = 0.4625 + 8.0 * 0.1925 + 0.2825 + (1.0 + 6.0 + 1.0 + 1.0 + 1.0) * 0.0125;
        let row = cbn.scenarios[0].row(Some(eat));
        assert!((row[watch] - 0.4625 / cinema).abs() < 1e-14);
        // Errand weighs watch, drive and shop by 2, eat by .5, cry by .2.
        let errand = 2.0 * 0.4625 + 0.2 * 0.1925 + 0.2825 + (1.0 + 0.5 + 2.0 + 2.0 + 1.0) * 0.0125;
        let row = cbn.scenarios[1].row(Some(eat));
        assert!((row[watch] - 2.0 * 0.4625 / errand).abs() < 1e-14);
        assert!(row.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let bad_row = r#"
            name = "x"
            length = 3
            smoothing = 0.1
            events = ["a:b", "c:d"]
            [[scenarios]]
            name = "s"
            prior = 1.0
            [scenarios.transitions]
            START = { "a:b" = 0.7 }
        "#;
        assert!(SyntheticCbn::from_toml_str(bad_row).is_err());
        let bad_prior = bad_row.replace("0.7", "1.0").replace("prior = 1.0", "prior = 0.4");
        assert!(SyntheticCbn::from_toml_str(&bad_prior).is_err());
        let unknown = bad_row.replace("\"a:b\" = 0.7", "\"zz:b\" = 1.0");
        assert!(SyntheticCbn::from_toml_str(&unknown).is_err());
        let ok = bad_row.replace("0.7", "1.0");
        assert!(SyntheticCbn::from_toml_str(&ok).is_ok());
        let no_positivity = ok.replace("smoothing = 0.1", "smoothing = 0.0");
        assert!(SyntheticCbn::from_toml_str(&no_positivity).is_err());
        let weighted = ok.replace("prior = 1.0", "prior = 1.0\npropensity = { \"c:d\" = 3.0 }");
        assert!(SyntheticCbn::from_toml_str(&weighted).is_ok());
        assert!(SyntheticCbn::from_toml_str(&weighted.replace("3.0", "-1.0")).is_err());
        assert!(SyntheticCbn::from_toml_str(&weighted.replace("c:d\" = 3", "q:d\" = 3")).is_err());
    }
}
