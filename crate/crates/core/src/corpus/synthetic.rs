use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Dataset, Pair};
use crate::error::{Error, Result};
use crate::oracles::JointTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Specific,
    Bland,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub prob: f64,
    pub kind: ResponseKind,
}

/// Bland-trap family: `sources` equiprobable sources, each with
/// `specific_per_source` equiprobable specific responses, plus `bland_responses`
/// responses shared by every source carrying total mass `bland_mass`.
///
/// Templates substitute `{i}` (source index), `{j}` (specific index) and `{k}`
/// (bland index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlandTrapSpec {
    pub sources: usize,
    pub specific_per_source: usize,
    pub bland_responses: usize,
    pub bland_mass: f64,
    pub source_template: String,
    pub specific_template: String,
    pub bland_template: String,
}

impl Default for BlandTrapSpec {
    fn default() -> Self {
        BlandTrapSpec {
            sources: 16,
            specific_per_source: 4,
            bland_responses: 1,
            bland_mass: 0.5,
            source_template: "about s{i}".into(),
            specific_template: "a{j} b{i} is nice".into(),
            bland_template: "i do not know".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntrySpec {
    pub source: String,
    pub target: String,
    pub prob: f64,
    #[serde(default)]
    pub bland: bool,
}

/// Synthetic task as it appears in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    BlandTrap(BlandTrapSpec),
    Table { entries: Vec<TableEntrySpec> },
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::BlandTrap(BlandTrapSpec::default())
    }
}

impl TaskSpec {
    pub fn build(&self) -> Result<SyntheticTask> {
        match self {
            TaskSpec::BlandTrap(spec) => SyntheticTask::bland_trap(spec),
            TaskSpec::Table { entries } => SyntheticTask::from_entries(
                entries
                    .iter()
                    .map(|e| JointEntry {
                        source: tokenize(&e.source),
                        target: tokenize(&e.target),
                        prob: e.prob,
                        kind: if e.bland { ResponseKind::Bland } else { ResponseKind::Specific },
                    })
                    .collect(),
            ),
        }
    }
}

/// A finite joint distribution over token-sequence pairs, known exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    entries: Vec<JointEntry>,
    sources: Vec<Vec<String>>,
    targets: Vec<Vec<String>>,
    cumulative: Vec<f64>,
}

fn fill(template: &str, i: usize, j: usize, k: usize) -> Vec<String> {
    tokenize(
        &template
            .replace("{i}", &i.to_string())
            .replace("{j}", &j.to_string())
            .replace("{k}", &k.to_string()),
    )
}

impl SyntheticTask {
    pub fn from_entries(entries: Vec<JointEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidTable("no entries".into()));
        }
        let mut seen = HashSet::new();
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(entries.len());
        for e in &entries {
            if !(e.prob.is_finite() && e.prob > 0.0) {
                return Err(Error::InvalidTable(format!("probability {} is not positive", e.prob)));
            }
            if e.source.is_empty() || e.target.is_empty() {
                return Err(Error::InvalidTable("empty source or target".into()));
            }
            if !seen.insert((&e.source, &e.target)) {
                return Err(Error::InvalidTable(format!(
                    "duplicate pair `{}` / `{}`",
                    e.source.join(" "),
                    e.target.join(" ")
                )));
            }
            total += e.prob;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTable(format!("probabilities sum to {total}")));
        }
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut s_seen = HashSet::new();
        let mut t_seen = HashSet::new();
        for e in &entries {
            if s_seen.insert(e.source.clone()) {
                sources.push(e.source.clone());
            }
            if t_seen.insert(e.target.clone()) {
                targets.push(e.target.clone());
            }
        }
        Ok(SyntheticTask {
            entries,
            sources,
            targets,
            cumulative,
        })
    }

    pub fn bland_trap(spec: &BlandTrapSpec) -> Result<Self> {
        let key = |k: &str| format!("task.{k}");
        if spec.sources == 0 {
            return Err(Error::Config { key: key("sources"), message: "must be at least 1".into() });
        }
        if !(0.0..=1.0).contains(&spec.bland_mass) {
            return Err(Error::Config { key: key("bland_mass"), message: "must lie in [0, 1]".into() });
        }
        if spec.bland_mass < 1.0 && spec.specific_per_source == 0 {
            return Err(Error::Config {
                key: key("specific_per_source"),
                message: "must be at least 1 when bland_mass < 1".into(),
            });
        }
        if spec.bland_mass > 0.0 && spec.bland_responses == 0 {
            return Err(Error::Config {
                key: key("bland_responses"),
                message: "must be at least 1 when bland_mass > 0".into(),
            });
        }
        let n = spec.sources as f64;
        let mut entries = Vec::new();
        for i in 0..spec.sources {
            let source = fill(&spec.source_template, i, 0, 0);
            if spec.bland_mass < 1.0 {
                let p = (1.0 - spec.bland_mass) / (n * spec.specific_per_source as f64);
                for j in 0..spec.specific_per_source {
                    entries.push(JointEntry {
                        source: source.clone(),
                        target: fill(&spec.specific_template, i, j, 0),
                        prob: p,
                        kind: ResponseKind::Specific,
                    });
                }
            }
            if spec.bland_mass > 0.0 {
                let p = spec.bland_mass / (n * spec.bland_responses as f64);
                for k in 0..spec.bland_responses {
                    entries.push(JointEntry {
                        source: source.clone(),
                        target: fill(&spec.bland_template, i, 0, k),
                        prob: p,
                        kind: ResponseKind::Bland,
                    });
                }
            }
        }
        Self::from_entries(entries).map_err(|e| Error::Config {
            key: "task".into(),
            message: format!("templates do not yield a valid table ({e})"),
        })
    }

    pub fn entries(&self) -> &[JointEntry] {
        &self.entries
    }

    /// Distinct sources in first-appearance order.
    pub fn sources(&self) -> &[Vec<String>] {
        &self.sources
    }

    /// Distinct targets in first-appearance order.
    pub fn targets(&self) -> &[Vec<String>] {
        &self.targets
    }

    /// The table as a `sources × targets` matrix in the orders above.
    pub fn joint_table(&self) -> Result<JointTable> {
        let s_index: BTreeMap<&Vec<String>, usize> = self.sources.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let t_index: BTreeMap<&Vec<String>, usize> = self.targets.iter().enumerate().map(|(i, t)| (t, i)).collect();
        let mut m = vec![vec![0.0; self.targets.len()]; self.sources.len()];
        for e in &self.entries {
            m[s_index[&e.source]][t_index[&e.target]] += e.prob;
        }
        JointTable::new(m)
    }

    /// True when `response` is one of the specific (non-bland) responses of `source`.
    pub fn is_specific(&self, source: &[String], response: &[String]) -> bool {
        self.entries
            .iter()
            .any(|e| e.kind == ResponseKind::Specific && e.source == source && e.target == response)
    }

    /// Fraction of `(source, response)` pairs whose response is specific to its source.
    pub fn specificity(&self, pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Empty("generation set"));
        }
        let hits = pairs.iter().filter(|(s, r)| self.is_specific(s, r)).count();
        Ok(hits as f64 / pairs.len() as f64)
    }

    /// Draws one table entry.
    pub fn sample_pair(&self, rng: &mut impl Rng) -> &JointEntry {
        let total = *self.cumulative.last().expect("non-empty table");
        let u: f64 = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.entries.len() - 1);
        &self.entries[idx]
    }
}

/// Draws `count` i.i.d. pairs from the task's joint and splits them with the same seed.
pub fn generate_synthetic(task: &SyntheticTask, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("pair count must be at least 1"));
    }
    let mut rng = crate::rng::stream(seed, "synthetic", 0);
    let pairs = (0..count)
        .map(|_| {
            let e = task.sample_pair(&mut rng);
            Pair {
                source: e.source.clone(),
                target: e.target.clone(),
            }
        })
        .collect();
    Ok(Dataset::new(pairs, seed))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn entry(s: &str, t: &str, p: f64) -> JointEntry {
        JointEntry {
            source: tokenize(s),
            target: tokenize(t),
            prob: p,
            kind: ResponseKind::Specific,
        }
    }

    #[test]
    fn bland_trap_table_is_normalized() {
        let task = SyntheticTask::bland_trap(&BlandTrapSpec::default()).unwrap();
        assert_eq!(task.entries().len(), 16 * 5);
        assert_eq!(task.sources().len(), 16);
        assert_eq!(task.targets().len(), 16 * 4 + 1);
        let bland: f64 = task.entries().iter().filter(|e| e.kind == ResponseKind::Bland).map(|e| e.prob).sum();
        assert!((bland - 0.5).abs() < 1e-12);
        let s = tokenize("about s3");
        assert!(task.is_specific(&s, &tokenize("a1 b3 is nice")));
        assert!(!task.is_specific(&s, &tokenize("a1 b4 is nice")));
        assert!(!task.is_specific(&s, &tokenize("i do not know")));
    }

    #[test]
    fn several_bland_responses_need_an_index() {
        let spec = BlandTrapSpec {
            bland_responses: 2,
            ..BlandTrapSpec::default()
        };
        assert!(matches!(SyntheticTask::bland_trap(&spec), Err(Error::Config { .. })));
        let spec = BlandTrapSpec {
            bland_responses: 2,
            bland_template: "i do not know {k}".into(),
            ..BlandTrapSpec::default()
        };
        assert_eq!(SyntheticTask::bland_trap(&spec).unwrap().targets().len(), 16 * 4 + 2);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(SyntheticTask::from_entries(vec![entry("a", "b", 0.5)]).is_err());
        assert!(SyntheticTask::from_entries(vec![entry("a", "b", 1.5), entry("a", "c", -0.5)]).is_err());
        assert!(SyntheticTask::from_entries(vec![entry("a", "b", 0.5), entry("a", "b", 0.5)]).is_err());
        assert!(generate_synthetic(&SyntheticTask::from_entries(vec![entry("a", "b", 1.0)]).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn deterministic_task_stays_on_support() {
        let task = SyntheticTask::from_entries(vec![entry("a", "x", 0.25), entry("b", "y", 0.75)]).unwrap();
        let d = generate_synthetic(&task, 500, 9).unwrap();
        for p in &d.pairs {
            assert!(task.entries().iter().any(|e| e.source == p.source && e.target == p.target));
        }
        assert_eq!(generate_synthetic(&task, 500, 9).unwrap(), d);
    }

    #[test]
    fn empirical_frequencies_match_table() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let entries = probs.iter().enumerate().map(|(i, &p)| entry("s", &format!("t{i}"), p)).collect();
        let task = SyntheticTask::from_entries(entries).unwrap();
        let n = 100_000;
        let d = generate_synthetic(&task, n, 2024).unwrap();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in &d.pairs {
            *counts.entry(p.target.join(" ")).or_default() += 1;
        }
        let mut chi2 = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            let observed = counts[&format!("t{i}")] as f64;
            let expected = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((observed - expected).abs() < 3.0 * sigma, "t{i}: {observed} vs {expected}");
            chi2 += (observed - expected).powi(2) / expected;
        }
        // 99.9% quantile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }
}
