//! Conversation extraction from a finished tree, turn policies, and
//! ShareGPT / JSONL / continuation exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::KeyHasher;
use crate::prompt::ChatTemplate;
use crate::tree::{Mode, NodeId, Role, Tree, TreeError};

/// Prefix of every record id; the rest is the source node id.
pub const RECORD_ID_PREFIX: &str = "tg-";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0}")]
    Mode(&'static str),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("record {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("turn policy: {0}")]
    Policy(String),
    #[error("target size {target} exceeds the {available} available records")]
    TargetTooLarge { target: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub from: Speaker,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationRecord {
    pub id: String,
    /// The root system prompt.
    pub system: String,
    pub turns: Vec<Message>,
    pub source_leaf: NodeId,
    pub turn_count: u32,
}

impl ConversationRecord {
    /// Turns start with `human`, alternate, end with `gpt`, and are non-empty.
    pub fn validate(&self) -> Result<(), CorpusError> {
        validate_turns(&self.id, &self.turns)?;
        if self.turn_count as usize * 2 != self.turns.len() {
            return Err(CorpusError::Invalid {
                id: self.id.clone(),
                reason: format!("turn_count {} but {} messages", self.turn_count, self.turns.len()),
            });
        }
        Ok(())
    }
}

fn validate_turns(id: &str, turns: &[Message]) -> Result<(), CorpusError> {
    let invalid = |reason: String| CorpusError::Invalid {
        id: id.to_string(),
        reason,
    };
    if turns.is_empty() || !turns.len().is_multiple_of(2) {
        return Err(invalid(format!("{} messages; need a positive even count", turns.len())));
    }
    for (i, m) in turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Speaker::Human } else { Speaker::Gpt };
        if m.from != expected {
            return Err(invalid(format!("message {i} is from {:?}", m.from)));
        }
        if m.value.trim().is_empty() {
            return Err(invalid(format!("message {i} is empty")));
        }
    }
    Ok(())
}

/// How many turns each record keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum TurnPolicy {
    /// Every record has exactly `k` turns.
    FixedK { k: u32 },
    /// Turn counts drawn to match `weights`. `total` defaults to the largest
    /// corpus the strata can fill without running short.
    Mixture {
        weights: BTreeMap<u32, f64>,
        sample_seed: u64,
        total: Option<usize>,
    },
}

impl TurnPolicy {
    /// Turn counts 1..=4 weighted by a unit-variance Gaussian centred at 2.5.
    pub fn gaussian(sample_seed: u64) -> Self {
        let raw: Vec<(u32, f64)> = (1..=4u32)
            .map(|t| (t, (-(f64::from(t) - 2.5).powi(2) / 2.0).exp()))
            .collect();
        let sum: f64 = raw.iter().map(|(_, w)| w).sum();
        TurnPolicy::Mixture {
            weights: raw.into_iter().map(|(t, w)| (t, w / sum)).collect(),
            sample_seed,
            total: None,
        }
    }

    fn check(&self, max_turns: u32) -> Result<(), CorpusError> {
        match self {
            TurnPolicy::FixedK { k } if *k == 0 || *k > max_turns => Err(CorpusError::Policy(format!(
                "k={k} outside 1..={max_turns}"
            ))),
            TurnPolicy::FixedK { .. } => Ok(()),
            TurnPolicy::Mixture { weights, .. } => {
                if weights.is_empty() {
                    return Err(CorpusError::Policy("no weights".into()));
                }
                let sum: f64 = weights.values().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(CorpusError::Policy(format!("weights sum to {sum}")));
                }
                if let Some((t, w)) = weights.iter().find(|(t, w)| **t == 0 || **t > max_turns || **w < 0.0) {
                    return Err(CorpusError::Policy(format!(
                        "weight {w} at turn count {t} (tree supports 1..={max_turns})"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Distinct depth-`2t` ancestors of the usable leaves, per turn count `t`.
fn prefix_strata(tree: &Tree, permissive: bool) -> Result<Vec<BTreeSet<NodeId>>, CorpusError> {
    let paths = tree.leaf_paths(permissive)?;
    let max_turns = paths.first().map_or(0, |p| p.nodes.len() / 2);
    let mut strata = vec![BTreeSet::new(); max_turns];
    for path in &paths {
        for (t, stratum) in strata.iter_mut().enumerate() {
            stratum.insert(path.nodes[2 * t + 1].id.clone());
        }
    }
    Ok(strata)
}

fn record_for(tree: &Tree, end: &NodeId) -> ConversationRecord {
    let turns: Vec<Message> = tree
        .path_to(end)
        .into_iter()
        .map(|n| Message {
            from: if n.role == Role::Question { Speaker::Human } else { Speaker::Gpt },
            value: n.text.clone(),
        })
        .collect();
    ConversationRecord {
        id: format!("{RECORD_ID_PREFIX}{end}"),
        system: tree.config().system_prompt.clone(),
        turn_count: (turns.len() / 2) as u32,
        turns,
        source_leaf: end.clone(),
    }
}

/// Largest-remainder apportionment of `total` over `weights`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let left = total - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(left) {
        quotas[i] += 1;
    }
    quotas
}

/// Quotas for `total` records; strata that cannot fill their share give the
/// deficit to the others in proportion to their weights.
fn mixture_quotas(weights: &[f64], available: &[usize], total: usize) -> Vec<usize> {
    let mut quotas = vec![0; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let mut remaining = total;
    while remaining > 0 && !open.is_empty() {
        let w: Vec<f64> = open.iter().map(|&i| weights[i]).collect();
        let share = apportion(&w, remaining);
        let short: Vec<usize> = open
            .iter()
            .zip(&share)
            .filter(|(&i, &s)| quotas[i] + s > available[i])
            .map(|(&i, _)| i)
            .collect();
        if short.is_empty() {
            for (&i, s) in open.iter().zip(share) {
                quotas[i] += s;
            }
            break;
        }
        for &i in &short {
            let take = available[i] - quotas[i];
            log::warn!(
                "turn count {}: only {} prefixes, redistributing the rest",
                i + 1,
                available[i]
            );
            quotas[i] += take;
            remaining -= take;
        }
        open.retain(|i| !short.contains(i));
    }
    quotas
}

/// Materialize conversations from `tree` under `policy`. Records come out
/// sorted by id.
pub fn build_corpus(tree: &Tree, policy: &TurnPolicy, permissive: bool) -> Result<Vec<ConversationRecord>, CorpusError> {
    if tree.config().mode != Mode::Sft {
        return Err(CorpusError::Mode("conversation corpora need an SFT tree; use export_pt"));
    }
    let strata = prefix_strata(tree, permissive)?;
    let max_turns = strata.len() as u32;
    policy.check(max_turns)?;

    let mut records: Vec<ConversationRecord> = match policy {
        TurnPolicy::FixedK { k } => strata[*k as usize - 1].iter().map(|id| record_for(tree, id)).collect(),
        TurnPolicy::Mixture {
            weights,
            sample_seed,
            total,
        } => {
            let w: Vec<f64> = (1..=max_turns).map(|t| weights.get(&t).copied().unwrap_or(0.0)).collect();
            let available: Vec<usize> = strata.iter().map(BTreeSet::len).collect();
            let capacity: usize = available
                .iter()
                .zip(&w)
                .filter(|(_, &w)| w > 0.0)
                .map(|(a, _)| a)
                .sum();
            let total = match total {
                Some(n) if *n > capacity => {
                    return Err(CorpusError::TargetTooLarge {
                        target: *n,
                        available: capacity,
                    })
                }
                Some(n) => *n,
                None => (0..=capacity)
                    .rev()
                    .find(|&m| apportion(&w, m).iter().zip(&available).all(|(q, a)| q <= a))
                    .unwrap_or(0),
            };
            let quotas = mixture_quotas(&w, &available, total);
            let mut out = Vec::with_capacity(total);
            for (t, (stratum, quota)) in strata.iter().zip(quotas).enumerate() {
                let ids: Vec<&NodeId> = stratum.iter().collect();
                let stratum_seed = KeyHasher::new().u64(*sample_seed).u64(t as u64 + 1).finish();
                let mut rng = ChaCha8Rng::seed_from_u64(stratum_seed);
                let mut picks = index::sample(&mut rng, ids.len(), quota).into_vec();
                picks.sort_unstable();
                out.extend(picks.into_iter().map(|i| record_for(tree, ids[i])));
            }
            out
        }
    };
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

/// Uniform subset of exactly `target_n` records, in their original order.
pub fn sample_to_size(
    records: &[ConversationRecord],
    target_n: usize,
    seed: u64,
) -> Result<Vec<ConversationRecord>, CorpusError> {
    if target_n > records.len() {
        return Err(CorpusError::TargetTooLarge {
            target: target_n,
            available: records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, records.len(), target_n).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| records[i].clone()).collect())
}

/// Where the system prompt goes in ShareGPT output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SystemPrompt {
    #[default]
    Omit,
    /// A top-level `"system"` field.
    Include,
    /// Prepended to the first human message, separated by a blank line.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShareGptRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system: Option<String>,
    conversations: Vec<Message>,
}

impl ShareGptRecord {
    fn from_record(r: &ConversationRecord, system: SystemPrompt) -> Self {
        let mut conversations = r.turns.clone();
        if system == SystemPrompt::Inline && !r.system.is_empty() {
            if let Some(first) = conversations.first_mut() {
                first.value = format!("{}\n\n{}", r.system, first.value);
            }
        }
        ShareGptRecord {
            id: r.id.clone(),
            system: (system == SystemPrompt::Include).then(|| r.system.clone()),
            conversations,
        }
    }

    fn into_record(self) -> Result<ConversationRecord, CorpusError> {
        let leaf = self.id.strip_prefix(RECORD_ID_PREFIX).unwrap_or(&self.id);
        let source_leaf = leaf.parse::<NodeId>().map_err(|e| CorpusError::Invalid {
            id: self.id.clone(),
            reason: format!("id does not name a node: {e}"),
        })?;
        let record = ConversationRecord {
            turn_count: (self.conversations.len() / 2) as u32,
            system: self.system.unwrap_or_default(),
            turns: self.conversations,
            source_leaf,
            id: self.id,
        };
        record.validate()?;
        Ok(record)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sorted(records: &[ConversationRecord]) -> Vec<&ConversationRecord> {
    let mut refs: Vec<&ConversationRecord> = records.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    refs
}

/// Write a ShareGPT JSON array, one element per line, sorted by id.
pub fn export_sharegpt(records: &[ConversationRecord], path: &Path, system: SystemPrompt) -> Result<(), CorpusError> {
    for r in records {
        r.validate()?;
    }
    let err = io_err(path);
    let mut out = BufWriter::new(File::create(path).map_err(&err)?);
    out.write_all(b"[").map_err(&err)?;
    for (i, r) in sorted(records).into_iter().enumerate() {
        out.write_all(if i == 0 { b"\n" } else { b",\n" }).map_err(&err)?;
        serde_json::to_writer(&mut out, &ShareGptRecord::from_record(r, system)).map_err(|e| err(e.into()))?;
    }
    out.write_all(if records.is_empty() { b"]\n" } else { b"\n]\n" })
        .map_err(&err)?;
    out.flush().map_err(&err)
}

/// Same objects as the ShareGPT export, one per line.
pub fn export_jsonl(records: &[ConversationRecord], path: &Path, system: SystemPrompt) -> Result<(), CorpusError> {
    for r in records {
        r.validate()?;
    }
    let err = io_err(path);
    let mut out = BufWriter::new(File::create(path).map_err(&err)?);
    for r in sorted(records) {
        serde_json::to_writer(&mut out, &ShareGptRecord::from_record(r, system)).map_err(|e| err(e.into()))?;
        out.write_all(b"\n").map_err(&err)?;
    }
    out.flush().map_err(&err)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PtLine {
    text: String,
}

/// One `{"text": ...}` line per leaf path of a continuation tree, texts
/// joined by the template separator. The system prompt is left out.
pub fn export_pt(tree: &Tree, template: &ChatTemplate, path: &Path) -> Result<usize, CorpusError> {
    if tree.config().mode != Mode::Pt {
        return Err(CorpusError::Mode("export_pt needs a PT tree"));
    }
    if !template.separator_is_role_free() {
        return Err(CorpusError::Mode("template separator carries role markers"));
    }
    let paths = tree.leaf_paths(false)?;
    let err = io_err(path);
    let mut out = BufWriter::new(File::create(path).map_err(&err)?);
    for p in &paths {
        let texts: Vec<&str> = p.nodes.iter().map(|n| n.text.as_str()).collect();
        let line = PtLine {
            text: texts.join(&template.turn_separator),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| err(e.into()))?;
        out.write_all(b"\n").map_err(&err)?;
    }
    out.flush().map_err(&err)?;
    Ok(paths.len())
}

/// Parse a ShareGPT array written by [`export_sharegpt`]. Field names are
/// checked exactly and every record is validated.
pub fn import_sharegpt(path: &Path) -> Result<Vec<ConversationRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let raw: Vec<ShareGptRecord> =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    raw.into_iter().map(ShareGptRecord::into_record).collect()
}

pub fn import_jsonl(path: &Path) -> Result<Vec<ConversationRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ShareGptRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?;
        records.push(raw.into_record()?);
    }
    Ok(records)
}

/// Read either export format, chosen by extension (`.jsonl` or JSON array).
pub fn import_records(path: &Path) -> Result<Vec<ConversationRecord>, CorpusError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        import_jsonl(path)
    } else {
        import_sharegpt(path)
    }
}

/// Re-parse an exported ShareGPT file and check every record; returns the
/// record count.
pub fn validate_sharegpt_file(path: &Path) -> Result<usize, CorpusError> {
    let records = import_sharegpt(path)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::Invalid {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{count_tokens, ExpansionInfo, TreeConfig, TreeNode};

    /// Full tree with text "<id>" on every node.
    fn full_tree(config: TreeConfig) -> Tree {
        let mut tree = Tree::new(config.clone());
        for layer in 1..=config.depth() as u32 {
            let parents: Vec<NodeId> = tree.nodes_at_layer(layer - 1).map(|n| n.id.clone()).collect();
            let spec = config.layer(layer as usize).clone();
            for p in parents {
                let kids = (0..spec.branching)
                    .map(|i| {
                        let id = p.child(i);
                        let text = format!("text {id}");
                        TreeNode {
                            token_count: count_tokens(&text),
                            text,
                            parent_id: Some(p.clone()),
                            layer,
                            role: spec.role,
                            embedding: None,
                            children: vec![],
                            gen_meta: None,
                            id,
                        }
                    })
                    .collect();
                tree.insert_expansion(&p, kids, ExpansionInfo::default()).unwrap();
            }
        }
        tree
    }

    fn sft(branching: &[u32]) -> Tree {
        let answers: Vec<u32> = (1..=branching.len() as u32 / 2).map(|i| 16 * i).collect();
        full_tree(TreeConfig::sft("S", branching, 8, &answers))
    }

    #[test]
    fn fixed_k_counts() {
        let tree = sft(&[4, 2, 2, 2]);
        let full = build_corpus(&tree, &TurnPolicy::FixedK { k: 2 }, false).unwrap();
        assert_eq!(full.len(), 32);
        assert!(full.iter().all(|r| r.turn_count == 2 && r.validate().is_ok()));
        let short = build_corpus(&tree, &TurnPolicy::FixedK { k: 1 }, false).unwrap();
        assert_eq!(short.len(), 8);
        assert!(build_corpus(&tree, &TurnPolicy::FixedK { k: 3 }, false).is_err());
    }

    #[test]
    fn record_shape() {
        let tree = sft(&[1, 1]);
        let r = &build_corpus(&tree, &TurnPolicy::FixedK { k: 1 }, false).unwrap()[0];
        assert_eq!(r.id, "tg-0.0");
        assert_eq!(r.system, "S");
        assert_eq!(r.turns[0].from, Speaker::Human);
        assert_eq!(r.turns[0].value, "text 0");
        assert_eq!(r.turns[1].value, "text 0.0");
    }

    #[test]
    fn gaussian_weights() {
        let TurnPolicy::Mixture { weights, .. } = TurnPolicy::gaussian(0) else {
            unreachable!()
        };
        let expected = [0.1345, 0.3655, 0.3655, 0.1345];
        for (t, e) in (1..=4).zip(expected) {
            assert!((weights[&t] - e).abs() < 5e-5, "t={t}: {}", weights[&t]);
        }
    }

    #[test]
    fn apportionment_is_exact() {
        assert_eq!(apportion(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(apportion(&[0.1345, 0.3655, 0.3655, 0.1345], 100), vec![13, 37, 37, 13]);
        assert_eq!(mixture_quotas(&[0.5, 0.5], &[1, 10], 6), vec![1, 5]);
    }

    #[test]
    fn mixture_fills_quotas_and_redistributes() {
        // Depth 4: 6 one-turn prefixes, 24 two-turn prefixes.
        let tree = sft(&[3, 2, 2, 2]);
        let policy = TurnPolicy::Mixture {
            weights: BTreeMap::from([(1, 0.5), (2, 0.5)]),
            sample_seed: 9,
            total: None,
        };
        let records = build_corpus(&tree, &policy, false).unwrap();
        assert_eq!(records.len(), 12);
        assert_eq!(records.iter().filter(|r| r.turn_count == 1).count(), 6);
        let again = build_corpus(&tree, &policy, false).unwrap();
        assert_eq!(records, again);

        let over = TurnPolicy::Mixture {
            weights: BTreeMap::from([(1, 0.5), (2, 0.5)]),
            sample_seed: 9,
            total: Some(20),
        };
        let records = build_corpus(&tree, &over, false).unwrap();
        assert_eq!(records.len(), 20);
        assert_eq!(records.iter().filter(|r| r.turn_count == 1).count(), 6);
        let unique: BTreeSet<_> = records.iter().map(|r| (&r.source_leaf, r.turn_count)).collect();
        assert_eq!(unique.len(), 20);
    }

    #[test]
    fn pt_tree_is_a_mode_error() {
        let tree = full_tree(TreeConfig::pt("P", &[3, 2], 8));
        assert!(matches!(
            build_corpus(&tree, &TurnPolicy::FixedK { k: 1 }, false),
            Err(CorpusError::Mode(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pt.jsonl");
        assert_eq!(export_pt(&tree, &ChatTemplate::plain(), &out).unwrap(), 6);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap(), r#"{"text":"text 0 text 0.0"}"#);
    }

    #[test]
    fn sharegpt_round_trip() {
        let tree = sft(&[2, 1, 2, 1]);
        let records = build_corpus(&tree, &TurnPolicy::FixedK { k: 2 }, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        export_sharegpt(&records, &path, SystemPrompt::Include).unwrap();
        assert_eq!(import_sharegpt(&path).unwrap(), records);
        assert_eq!(validate_sharegpt_file(&path).unwrap(), 4);

        let jl = dir.path().join("c.jsonl");
        export_jsonl(&records, &jl, SystemPrompt::Include).unwrap();
        assert_eq!(std::fs::read_to_string(&jl).unwrap().lines().count(), 4);
        assert_eq!(import_records(&jl).unwrap(), records);

        export_sharegpt(&records[..1], &path, SystemPrompt::Omit).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let obj = v[0].as_object().unwrap();
        assert_eq!(obj.keys().collect::<Vec<_>>(), vec!["conversations", "id"]);
        assert_eq!(v[0]["conversations"].as_array().unwrap().len(), 4);

        export_sharegpt(&records[..1], &path, SystemPrompt::Inline).unwrap();
        let back = import_sharegpt(&path).unwrap();
        assert!(back[0].turns[0].value.starts_with("S\n\n"));
    }

    #[test]
    fn validator_rejects_bad_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let cases = [
            r#"[{"id":"tg-0.0","conversations":[{"from":"gpt","value":"x"},{"from":"human","value":"y"}]}]"#,
            r#"[{"id":"tg-0","conversations":[{"from":"human","value":"x"}]}]"#,
            r#"[{"id":"tg-0.0","conversations":[{"from":"human","value":"x","extra":1},{"from":"gpt","value":"y"}]}]"#,
            r#"[{"id":"tg-0.0","convs":[]}]"#,
        ];
        for case in cases {
            std::fs::write(&path, case).unwrap();
            assert!(validate_sharegpt_file(&path).is_err(), "{case}");
        }
    }

    #[test]
    fn sampling() {
        let tree = sft(&[4, 2, 2, 2]);
        let records = build_corpus(&tree, &TurnPolicy::FixedK { k: 2 }, false).unwrap();
        assert_eq!(sample_to_size(&records, 32, 1).unwrap(), records);
        let half = sample_to_size(&records, 16, 5).unwrap();
        assert_eq!(half.len(), 16);
        assert_eq!(half, sample_to_size(&records, 16, 5).unwrap());
        let positions: Vec<usize> = half
            .iter()
            .map(|h| records.iter().position(|r| r == h).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            sample_to_size(&records, 33, 1),
            Err(CorpusError::TargetTooLarge { target: 33, available: 32 })
        ));
    }
}
