//! On-disk checkpoint: `config.json`, append-only `nodes.jsonl`,
//! `manifest.json`.
//!
//! `nodes.jsonl` starts with the root record. Each expansion is written as
//! its child records followed by a commit marker line naming the parent;
//! a group without its marker is discarded on replay.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SchedulerError;
use crate::prompt::ChatTemplate;
use crate::tree::{ExpansionInfo, NodeId, Tree, TreeConfig, TreeNode};

pub const CONFIG_FILE: &str = "config.json";
pub const NODES_FILE: &str = "nodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredConfig {
    pub config_hash: String,
    pub config: TreeConfig,
    pub template: ChatTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitMarker {
    commit: NodeId,
    children: u32,
    shortfall: u32,
    dropped: u32,
    regenerations: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Record {
    Commit(CommitMarker),
    Node(Box<TreeNode>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestStatus {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: ManifestStatus,
    pub config_hash: String,
    pub nodes_committed: u64,
    pub shortfalls: u64,
    pub retries: u64,
    pub dedup_drops: u64,
    pub generator_id: String,
    pub embedder_id: String,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    #[serde(default)]
    pub failed_parents: Vec<String>,
}

/// What replay found besides the tree itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub truncated_bytes: u64,
    pub discarded_nodes: usize,
}

/// A checkpoint directory.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchedulerError + '_ {
    move |source| SchedulerError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), SchedulerError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn node_line(node: &TreeNode, include_embeddings: bool) -> String {
    let mut line = if include_embeddings || node.embedding.is_none() {
        serde_json::to_string(node)
    } else {
        let mut bare = node.clone();
        bare.embedding = None;
        serde_json::to_string(&bare)
    }
    .expect("serializable");
    line.push('\n');
    line
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CheckpointStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join(CONFIG_FILE)
    }

    pub fn nodes_path(&self) -> PathBuf {
        self.dir.join(NODES_FILE)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    /// True once `init` has run in this directory.
    pub fn exists(&self) -> bool {
        self.config_path().is_file()
    }

    /// Create the directory, `config.json`, and a `nodes.jsonl` holding the root.
    pub fn init(&self, config: &TreeConfig, template: &ChatTemplate) -> Result<Tree, SchedulerError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let stored = StoredConfig {
            config_hash: config.hash_hex(),
            config: config.clone(),
            template: template.clone(),
        };
        write_json_atomic(&self.config_path(), &stored)?;
        let tree = Tree::new(config.clone());
        let path = self.nodes_path();
        fs::write(&path, node_line(tree.root(), false)).map_err(io_err(&path))?;
        Ok(tree)
    }

    pub fn read_config(&self) -> Result<StoredConfig, SchedulerError> {
        let path = self.config_path();
        if !path.is_file() {
            return Err(SchedulerError::NoCheckpoint(self.dir.display().to_string()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| SchedulerError::Corrupt {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    /// Replay against a caller-supplied config, refusing a hash or template
    /// mismatch. Any uncommitted tail is truncated from disk.
    pub fn open(&self, config: &TreeConfig, template: &ChatTemplate) -> Result<(Tree, ReplayReport), SchedulerError> {
        let stored = self.read_config()?;
        let current = config.hash_hex();
        if stored.config_hash != current {
            return Err(SchedulerError::HashMismatch {
                stored: stored.config_hash,
                current,
            });
        }
        if &stored.template != template {
            return Err(SchedulerError::TemplateMismatch {
                stored: stored.template.id,
                current: template.id.clone(),
            });
        }
        self.replay(config, true)
    }

    /// Replay using the stored config, without modifying any file.
    pub fn load(&self) -> Result<(StoredConfig, Tree), SchedulerError> {
        let stored = self.read_config()?;
        if stored.config.hash_hex() != stored.config_hash {
            return Err(SchedulerError::HashMismatch {
                stored: stored.config_hash.clone(),
                current: stored.config.hash_hex(),
            });
        }
        let (tree, _) = self.replay(&stored.config, false)?;
        Ok((stored, tree))
    }

    fn replay(&self, config: &TreeConfig, repair: bool) -> Result<(Tree, ReplayReport), SchedulerError> {
        let path = self.nodes_path();
        let mut bytes = Vec::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(&path))?;
        let corrupt = |line: usize, message: String| SchedulerError::Corrupt {
            path: path.display().to_string(),
            line,
            message,
        };

        // Complete lines only; a partial final line is a torn write.
        let mut lines: Vec<(usize, &[u8])> = Vec::new();
        let mut start = 0;
        for (i, b) in bytes.iter().enumerate() {
            if *b == b'\n' {
                lines.push((i + 1, &bytes[start..i]));
                start = i + 1;
            }
        }

        let mut tree = Tree::new(config.clone());
        let mut report = ReplayReport::default();
        let mut committed_end = 0usize;
        let mut group: Vec<TreeNode> = Vec::new();
        for (index, &(end, raw)) in lines.iter().enumerate() {
            let last = index + 1 == lines.len();
            let record: Record = match serde_json::from_slice(raw) {
                Ok(r) => r,
                Err(e) if last => {
                    log::warn!("{}: dropping unreadable final record: {e}", path.display());
                    break;
                }
                Err(e) => return Err(corrupt(index + 1, e.to_string())),
            };
            if index == 0 {
                match record {
                    Record::Node(root) if root.id.is_root() && root.text == config.system_prompt => {
                        committed_end = end;
                        continue;
                    }
                    _ => return Err(corrupt(1, "first record must be the root".into())),
                }
            }
            match record {
                Record::Node(node) => group.push(*node),
                Record::Commit(marker) => {
                    if marker.children as usize != group.len() {
                        return Err(corrupt(
                            index + 1,
                            format!(
                                "commit for {} declares {} children, found {}",
                                marker.commit,
                                marker.children,
                                group.len()
                            ),
                        ));
                    }
                    let info = ExpansionInfo {
                        shortfall: marker.shortfall,
                        dropped: marker.dropped,
                        regenerations: marker.regenerations,
                    };
                    tree.insert_expansion(&marker.commit, std::mem::take(&mut group), info)
                        .map_err(|e| corrupt(index + 1, e.to_string()))?;
                    committed_end = end;
                }
            }
        }
        if committed_end == 0 {
            return Err(corrupt(1, "missing root record".into()));
        }
        report.discarded_nodes = group.len();
        report.truncated_bytes = (bytes.len() - committed_end) as u64;
        if report.truncated_bytes > 0 {
            log::warn!(
                "{}: discarding {} uncommitted byte(s) ({} node record(s))",
                path.display(),
                report.truncated_bytes,
                report.discarded_nodes
            );
            if repair {
                let file = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
                file.set_len(committed_end as u64).map_err(io_err(&path))?;
            }
        }
        Ok((tree, report))
    }

    /// Append one parent's children and its commit marker in a single write.
    pub fn append_expansion(
        &self,
        parent: &NodeId,
        children: &[TreeNode],
        info: &ExpansionInfo,
        include_embeddings: bool,
        fsync: bool,
    ) -> Result<(), SchedulerError> {
        let mut buf = String::new();
        for child in children {
            buf.push_str(&node_line(child, include_embeddings));
        }
        let marker = CommitMarker {
            commit: parent.clone(),
            children: children.len() as u32,
            shortfall: info.shortfall,
            dropped: info.dropped,
            regenerations: info.regenerations,
        };
        buf.push_str(&serde_json::to_string(&marker).expect("serializable"));
        buf.push('\n');
        let path = self.nodes_path();
        let mut file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        if fsync {
            file.sync_data().map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), SchedulerError> {
        write_json_atomic(&self.manifest_path(), manifest)
    }

    pub fn read_manifest(&self) -> Result<Manifest, SchedulerError> {
        let path = self.manifest_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| SchedulerError::Corrupt {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{count_tokens, Role};

    fn child(parent: &NodeId, i: u32, text: &str) -> TreeNode {
        TreeNode {
            id: parent.child(i),
            parent_id: Some(parent.clone()),
            layer: parent.depth() as u32 + 1,
            role: if parent.depth().is_multiple_of(2) { Role::Question } else { Role::Answer },
            text: text.into(),
            token_count: count_tokens(text),
            embedding: None,
            children: vec![],
            gen_meta: None,
        }
    }

    fn setup() -> (tempfile::TempDir, CheckpointStore, TreeConfig, ChatTemplate) {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path().join("run"));
        let config = TreeConfig::sft("S", &[2, 1], 8, &[16]);
        (dir, store, config, ChatTemplate::llama2_chat())
    }

    #[test]
    fn round_trip_and_uncommitted_tail() {
        let (_d, store, config, template) = setup();
        store.init(&config, &template).unwrap();
        let root = NodeId::root();
        let kids = vec![child(&root, 0, "q0"), child(&root, 1, "q1")];
        store
            .append_expansion(&root, &kids, &ExpansionInfo::default(), false, false)
            .unwrap();
        let (tree, report) = store.open(&config, &template).unwrap();
        assert_eq!(tree.node_count(), 2);
        assert_eq!(report, ReplayReport::default());

        // A group with no commit marker is dropped, and the file is repaired.
        let before = fs::read(store.nodes_path()).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.nodes_path()).unwrap();
        f.write_all(node_line(&child(&kids[0].id, 0, "a"), false).as_bytes()).unwrap();
        f.write_all(b"{\"id\":\"1.0\",\"par").unwrap();
        drop(f);
        let (tree, report) = store.open(&config, &template).unwrap();
        assert_eq!(tree.node_count(), 2);
        assert_eq!(report.discarded_nodes, 1);
        assert_eq!(fs::read(store.nodes_path()).unwrap(), before);
    }

    #[test]
    fn mid_file_corruption_is_fatal() {
        let (_d, store, config, template) = setup();
        store.init(&config, &template).unwrap();
        let root = NodeId::root();
        let mut f = OpenOptions::new().append(true).open(store.nodes_path()).unwrap();
        f.write_all(b"not json\n").unwrap();
        drop(f);
        store
            .append_expansion(&root, &[child(&root, 0, "q")], &ExpansionInfo::default(), false, false)
            .unwrap();
        assert!(matches!(store.open(&config, &template), Err(SchedulerError::Corrupt { .. })));
    }

    #[test]
    fn hash_guard() {
        let (_d, store, config, template) = setup();
        store.init(&config, &template).unwrap();
        let mut other = config.clone();
        other.seed = 7;
        assert!(matches!(
            store.open(&other, &template),
            Err(SchedulerError::HashMismatch { .. })
        ));
        assert!(matches!(
            store.open(&config, &ChatTemplate::plain()),
            Err(SchedulerError::TemplateMismatch { .. })
        ));
        let fresh = CheckpointStore::new(store.dir().join("nope"));
        assert!(matches!(fresh.load(), Err(SchedulerError::NoCheckpoint(_))));
    }
}
