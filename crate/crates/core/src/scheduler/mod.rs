//! Tree expansion with a bounded worker pool, ordered commits, and
//! checkpoint/resume.
//!
//! Workers run whole expansion tasks (generate, strip, embed, select), so
//! the number of backend calls in flight never exceeds the worker count.
//! A single writer commits finished expansions in a fixed order: the
//! smallest open parent id goes first. Balance trees dispatch one layer at
//! a time; Wide and Linear trees dispatch a parent's children as soon as
//! the parent commits, which yields chain-major order.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crossbeam_channel::unbounded;
use thiserror::Error;

use crate::backend::{BackendError, Backends, EmbeddingVector, GenerationRequest, DEFAULT_SAMPLE_CAP};
use crate::dedup::{mmr_select, near_duplicate_filter, DedupError};
use crate::hash::KeyHasher;
use crate::prompt::{render_for_layer, strip_completion, ChatTemplate, PromptError, Turn};
use crate::tree::{
    count_tokens, ExpansionInfo, GenMeta, NodeId, Role, Tree, TreeConfig, TreeError, TreeNode, TreeShape,
};

mod store;

pub use store::{
    CheckpointStore, Manifest, ManifestStatus, ReplayReport, StoredConfig, CONFIG_FILE, MANIFEST_FILE, NODES_FILE,
};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("no checkpoint in {0}")]
    NoCheckpoint(String),
    #[error("config hash mismatch: checkpoint has {stored}, config hashes to {current}")]
    HashMismatch { stored: String, current: String },
    #[error("template mismatch: checkpoint used {stored:?}, run uses {current:?}")]
    TemplateMismatch { stored: String, current: String },
    #[error("{path}:{line}: corrupt checkpoint: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("continuation mode needs a template whose separator has no role markers ({0})")]
    TemplateNotRoleFree(String),
}

/// Why one parent's expansion failed.
#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("dedup: {0}")]
    Dedup(#[from] DedupError),
}

impl ExpandError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExpandError::Backend(e) if e.is_retryable())
    }
}

/// A failed expansion task.
#[derive(Debug, Error)]
#[error("expanding {parent}: {error}")]
pub struct TaskError {
    pub parent: NodeId,
    pub error: ExpandError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// Stop dispatching on the first task that exhausts its retries.
    #[default]
    Abort,
    /// Leave the failed parent unexpanded and keep going.
    Continue,
}

/// Emitted after each commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitEvent {
    pub parent: NodeId,
    /// Layer of the committed children.
    pub layer: u32,
    pub children: usize,
    /// Non-root nodes in the tree after this commit.
    pub nodes_committed: usize,
}

pub trait RunObserver: Send + Sync {
    /// Return `Break` to stop the run after this commit.
    fn on_commit(&self, event: &CommitEvent) -> ControlFlow<()>;
}

impl<F: Fn(&CommitEvent) -> ControlFlow<()> + Send + Sync> RunObserver for F {
    fn on_commit(&self, event: &CommitEvent) -> ControlFlow<()> {
        self(event)
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Persist embeddings in `nodes.jsonl` and keep them on tree nodes.
    pub include_embeddings: bool,
    /// Extra attempts per task on retryable backend errors.
    pub retry_budget: u32,
    pub failure_policy: FailurePolicy,
    pub fsync: bool,
    pub sample_cap: u32,
    /// Overrides the template named by the config.
    pub template: Option<ChatTemplate>,
    pub observer: Option<Arc<dyn RunObserver>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 8,
            include_embeddings: false,
            retry_budget: 2,
            failure_policy: FailurePolicy::Abort,
            fsync: false,
            sample_cap: DEFAULT_SAMPLE_CAP,
            template: None,
            observer: None,
        }
    }
}

impl RunOptions {
    pub fn with_workers(workers: usize) -> Self {
        RunOptions {
            workers,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Complete,
    /// Stopped early; the checkpoint can be resumed.
    Aborted,
}

#[derive(Debug)]
pub struct RunReport {
    pub tree: Tree,
    pub status: RunStatus,
    pub replay: ReplayReport,
    /// Expansions committed by this invocation.
    pub expansions: usize,
    pub retries: u64,
    pub failures: Vec<TaskError>,
}

impl std::fmt::Debug for RunOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunOptions")
            .field("workers", &self.workers)
            .field("include_embeddings", &self.include_embeddings)
            .field("retry_budget", &self.retry_budget)
            .field("failure_policy", &self.failure_policy)
            .field("fsync", &self.fsync)
            .field("sample_cap", &self.sample_cap)
            .field("template", &self.template.as_ref().map(|t| &t.id))
            .finish()
    }
}

/// Bookkeeping for dispatched work.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpansionPlan {
    /// Dispatched, not yet committed, in commit order.
    pub pending: BTreeSet<NodeId>,
    pub completed: BTreeSet<NodeId>,
    pub failed: BTreeSet<NodeId>,
}

/// Seed for one parent's generation request.
pub fn request_seed(seed: u64, parent: &NodeId, layer: usize) -> u64 {
    KeyHasher::new()
        .u64(seed)
        .str(&parent.to_string())
        .u64(layer as u64)
        .finish()
}

/// Result of expanding one parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub children: Vec<TreeNode>,
    pub info: ExpansionInfo,
}

struct Candidate {
    text: String,
    sample_index: u32,
    finish_reason: crate::backend::FinishReason,
}

/// Knobs for [`expand_parent`] that come from the run rather than the config.
#[derive(Debug, Clone, Copy)]
pub struct ExpandOptions {
    pub sample_cap: u32,
    pub include_embeddings: bool,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions {
            sample_cap: DEFAULT_SAMPLE_CAP,
            include_embeddings: false,
        }
    }
}

/// Expand one parent: render its prompt, oversample candidates, strip them,
/// and keep up to `N_i` after MMR and near-duplicate filtering. A shortfall
/// triggers one regeneration round with fresh sample indices.
///
/// `path` holds the parent's ancestors from layer 1 down to the parent
/// itself (empty for the root).
pub fn expand_parent(
    parent: &TreeNode,
    path: &[Turn<'_>],
    config: &TreeConfig,
    template: &ChatTemplate,
    backends: &Backends,
    options: ExpandOptions,
) -> Result<Expansion, ExpandError> {
    let layer = parent.layer as usize + 1;
    let spec = config.layer(layer);
    let k = spec.branching as usize;
    let per_round = config.candidates_for_layer(layer);
    let prompt = render_for_layer(config.mode, spec.role, path, template, &config.system_prompt)?;
    let seed = request_seed(config.seed, &parent.id, layer);

    let generate = |first: u32| -> Result<Vec<Candidate>, ExpandError> {
        let mut out = Vec::new();
        let mut offset = 0;
        while offset < per_round {
            let n = (per_round - offset).min(options.sample_cap.max(1));
            let request = GenerationRequest {
                prompt: prompt.clone(),
                max_tokens: spec.max_tokens,
                temperature: spec.temperature,
                n_samples: n,
                stop: spec.stop_markers.clone(),
                request_seed: seed,
                first_sample_index: first + offset,
            };
            let result = backends.generator.generate(&request)?;
            for (i, completion) in result.completions.into_iter().enumerate() {
                if let Ok(text) = strip_completion(&completion.text, spec, template) {
                    out.push(Candidate {
                        text,
                        sample_index: first + offset + i as u32,
                        finish_reason: completion.finish_reason,
                    });
                }
            }
            offset += n;
        }
        Ok(out)
    };

    let mut pool = generate(0)?;
    let mut texts: Vec<String> = vec![parent.text.clone()];
    texts.extend(pool.iter().map(|c| c.text.clone()));
    let mut vectors = backends.embedder.embed(&texts)?;
    crate::backend::check_uniform_dim(&vectors)?;

    let select = |vectors: &[EmbeddingVector]| -> Result<(Vec<usize>, usize), ExpandError> {
        let (query, cands) = vectors.split_first().expect("query is present");
        if cands.is_empty() {
            return Ok((Vec::new(), 0));
        }
        let selection = mmr_select(cands, query, k.min(cands.len()), config.mmr_lambda)?;
        let filtered = near_duplicate_filter(cands, &selection, config.dedup_threshold);
        Ok((filtered.selected, filtered.dropped_as_duplicates.len()))
    };

    let (mut kept, mut dropped) = select(&vectors)?;
    let mut regenerations = 0;
    if kept.len() < k {
        regenerations = 1;
        let extra = generate(per_round)?;
        if !extra.is_empty() {
            let new_texts: Vec<String> = extra.iter().map(|c| c.text.clone()).collect();
            let new_vectors = backends.embedder.embed(&new_texts)?;
            vectors.extend(new_vectors);
            crate::backend::check_uniform_dim(&vectors)?;
            pool.extend(extra);
            (kept, dropped) = select(&vectors)?;
        }
    }
    if kept.len() < k {
        log::warn!("{}: kept {} of {} children", parent.id, kept.len(), k);
    }

    let children = kept
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let cand = &pool[c];
            TreeNode {
                id: parent.id.child(j as u32),
                parent_id: Some(parent.id.clone()),
                layer: layer as u32,
                role: spec.role,
                text: cand.text.clone(),
                token_count: count_tokens(&cand.text),
                embedding: options.include_embeddings.then(|| vectors[c + 1].clone()),
                children: Vec::new(),
                gen_meta: Some(GenMeta {
                    backend_id: backends.generator.id().to_string(),
                    finish_reason: cand.finish_reason,
                    sample_index: cand.sample_index,
                }),
            }
        })
        .collect::<Vec<_>>();
    let info = ExpansionInfo {
        shortfall: (k - children.len()) as u32,
        dropped: dropped as u32,
        regenerations,
    };
    Ok(Expansion { children, info })
}

struct Task {
    parent: TreeNode,
    path: Vec<(Role, String)>,
    attempt: u32,
}

struct TaskResult {
    task: Task,
    outcome: Result<Expansion, ExpandError>,
}

fn make_task(tree: &Tree, id: &NodeId) -> Task {
    let path = tree
        .path_to(id)
        .into_iter()
        .map(|n| (n.role, n.text.clone()))
        .collect();
    Task {
        parent: tree.get(id).expect("dispatched node exists").clone(),
        path,
        attempt: 0,
    }
}

fn run_task(task: &Task, config: &TreeConfig, template: &ChatTemplate, backends: &Backends, options: ExpandOptions) -> Result<Expansion, ExpandError> {
    let turns: Vec<Turn<'_>> = task.path.iter().map(|(r, t)| Turn::new(*r, t)).collect();
    expand_parent(&task.parent, &turns, config, template, backends, options)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn resolve_template(config: &TreeConfig, options: &RunOptions) -> Result<ChatTemplate, SchedulerError> {
    let template = match &options.template {
        Some(t) => t.clone(),
        None => ChatTemplate::resolve(&config.template_id)?,
    };
    if config.mode == crate::tree::Mode::Pt && !template.separator_is_role_free() {
        return Err(SchedulerError::TemplateNotRoleFree(template.id));
    }
    Ok(template)
}

/// Grow the tree to full depth, starting fresh or continuing a compatible
/// checkpoint in `store`.
pub fn run(
    config: &TreeConfig,
    backends: &Backends,
    store: &CheckpointStore,
    options: &RunOptions,
) -> Result<RunReport, SchedulerError> {
    let report = config.validate();
    if !report.is_ok() {
        return Err(SchedulerError::InvalidConfig(report.errors));
    }
    for w in &report.warnings {
        log::warn!("config: {w}");
    }
    let template = resolve_template(config, options)?;
    let (tree, replay) = if store.exists() {
        store.open(config, &template)?
    } else {
        (store.init(config, &template)?, ReplayReport::default())
    };
    drive(tree, replay, config, &template, backends, store, options)
}

/// Continue an existing checkpoint. Does nothing beyond rewriting the
/// manifest when the tree is already complete.
pub fn resume(
    config: &TreeConfig,
    backends: &Backends,
    store: &CheckpointStore,
    options: &RunOptions,
) -> Result<RunReport, SchedulerError> {
    if !store.exists() {
        return Err(SchedulerError::NoCheckpoint(store.dir().display().to_string()));
    }
    run(config, backends, store, options)
}

fn drive(
    mut tree: Tree,
    replay: ReplayReport,
    config: &TreeConfig,
    template: &ChatTemplate,
    backends: &Backends,
    store: &CheckpointStore,
    options: &RunOptions,
) -> Result<RunReport, SchedulerError> {
    let mut manifest = Manifest {
        status: ManifestStatus::Running,
        config_hash: config.hash_hex(),
        nodes_committed: tree.node_count() as u64,
        shortfalls: tree.total_shortfall(),
        retries: 0,
        dedup_drops: tree.total_dropped(),
        generator_id: backends.generator.id().to_string(),
        embedder_id: backends.embedder.id().to_string(),
        started_at: now(),
        finished_at: None,
        failed_parents: Vec::new(),
    };
    store.write_manifest(&manifest)?;

    let layered = config.shape() == TreeShape::Balance;
    let depth = config.depth() as u32;
    let expand_options = ExpandOptions {
        sample_cap: options.sample_cap,
        include_embeddings: options.include_embeddings,
    };
    let workers = options.workers.max(1);
    let cancel = AtomicBool::new(false);
    let mut plan = ExpansionPlan::default();
    let mut failures: Vec<TaskError> = Vec::new();
    let mut retries = 0u64;
    let mut expansions = 0usize;
    let mut stopped = false;
    let mut hard_error: Option<SchedulerError> = None;

    std::thread::scope(|scope| {
        let (task_tx, task_rx) = unbounded::<Task>();
        let (result_tx, result_rx) = unbounded::<TaskResult>();
        for _ in 0..workers {
            let task_rx = task_rx.clone();
            let result_tx = result_tx.clone();
            let cancel = &cancel;
            scope.spawn(move || {
                for task in task_rx.iter() {
                    if cancel.load(Ordering::SeqCst) {
                        continue;
                    }
                    let outcome = run_task(&task, config, template, backends, expand_options);
                    if result_tx.send(TaskResult { task, outcome }).is_err() {
                        break;
                    }
                }
            });
        }
        drop(result_tx);

        let dispatch = |tree: &Tree, plan: &mut ExpansionPlan, ids: Vec<NodeId>| {
            for id in ids {
                if plan.pending.insert(id.clone()) {
                    task_tx.send(make_task(tree, &id)).expect("workers alive");
                }
            }
        };
        let frontier = |tree: &Tree, plan: &ExpansionPlan| -> Vec<NodeId> {
            let open: Vec<&TreeNode> = tree.unexpanded().filter(|n| !plan.failed.contains(&n.id)).collect();
            if layered {
                let Some(min) = open.iter().map(|n| n.layer).min() else {
                    return Vec::new();
                };
                open.into_iter().filter(|n| n.layer == min).map(|n| n.id.clone()).collect()
            } else {
                open.into_iter().map(|n| n.id.clone()).collect()
            }
        };

        let mut ready: BTreeMap<NodeId, Result<Expansion, ExpandError>> = BTreeMap::new();
        let ids = frontier(&tree, &plan);
        dispatch(&tree, &mut plan, ids);

        'outer: while !plan.pending.is_empty() {
            let Ok(TaskResult { mut task, outcome }) = result_rx.recv() else {
                break;
            };
            if let Err(e) = &outcome {
                if e.is_retryable() && task.attempt < options.retry_budget {
                    task.attempt += 1;
                    retries += 1;
                    log::warn!("{}: retry {} after {e}", task.parent.id, task.attempt);
                    task_tx.send(task).expect("workers alive");
                    continue;
                }
            }
            // Chains do not wait for commit order: a child's prompt only
            // needs its parent's text.
            if let (false, Ok(exp)) = (layered, &outcome) {
                if task.parent.layer + 1 < depth {
                    for child in &exp.children {
                        if plan.pending.insert(child.id.clone()) {
                            let mut path = task.path.clone();
                            path.push((child.role, child.text.clone()));
                            let next = Task {
                                parent: child.clone(),
                                path,
                                attempt: 0,
                            };
                            task_tx.send(next).expect("workers alive");
                        }
                    }
                }
            }
            ready.insert(task.parent.id.clone(), outcome);

            while let Some(first) = plan.pending.first().cloned() {
                let Some(outcome) = ready.remove(&first) else { break };
                plan.pending.remove(&first);
                match outcome {
                    Ok(exp) => {
                        if let Err(e) = store.append_expansion(
                            &first,
                            &exp.children,
                            &exp.info,
                            options.include_embeddings,
                            options.fsync,
                        ) {
                            hard_error = Some(e);
                            break 'outer;
                        }
                        let child_ids: Vec<NodeId> = exp.children.iter().map(|c| c.id.clone()).collect();
                        let layer = first.depth() as u32 + 1;
                        if let Err(e) = tree.insert_expansion(&first, exp.children, exp.info) {
                            hard_error = Some(e.into());
                            break 'outer;
                        }
                        expansions += 1;
                        plan.completed.insert(first.clone());
                        if let Some(observer) = &options.observer {
                            let event = CommitEvent {
                                parent: first.clone(),
                                layer,
                                children: child_ids.len(),
                                nodes_committed: tree.node_count(),
                            };
                            if observer.on_commit(&event).is_break() {
                                stopped = true;
                                break 'outer;
                            }
                        }
                    }
                    Err(error) => {
                        log::error!("{first}: {error}");
                        plan.failed.insert(first.clone());
                        failures.push(TaskError { parent: first, error });
                        if options.failure_policy == FailurePolicy::Abort {
                            stopped = true;
                            break 'outer;
                        }
                    }
                }
            }
            if layered && plan.pending.is_empty() {
                let ids = frontier(&tree, &plan);
                dispatch(&tree, &mut plan, ids);
            }
        }
        cancel.store(true, Ordering::SeqCst);
        drop(task_tx);
    });

    if let Some(e) = hard_error {
        return Err(e);
    }
    let complete = !stopped && tree.is_complete();
    manifest.status = if complete {
        ManifestStatus::Complete
    } else {
        ManifestStatus::Aborted
    };
    manifest.nodes_committed = tree.node_count() as u64;
    manifest.shortfalls = tree.total_shortfall();
    manifest.dedup_drops = tree.total_dropped();
    manifest.retries = retries;
    manifest.failed_parents = failures.iter().map(|f| f.parent.to_string()).collect();
    manifest.finished_at = Some(now());
    store.write_manifest(&manifest)?;

    Ok(RunReport {
        tree,
        status: if complete { RunStatus::Complete } else { RunStatus::Aborted },
        replay,
        expansions,
        retries,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    fn mock() -> (Arc<MockBackend>, Backends) {
        let m = Arc::new(MockBackend::new());
        (m.clone(), Backends::shared(m))
    }

    #[test]
    fn seed_depends_on_all_inputs() {
        let a = request_seed(1, &NodeId::root(), 1);
        assert_ne!(a, request_seed(2, &NodeId::root(), 1));
        assert_ne!(a, request_seed(1, &NodeId::root().child(0), 1));
        assert_ne!(a, request_seed(1, &NodeId::root(), 2));
    }

    #[test]
    fn oversampled_cardinality() {
        let (m, backends) = mock();
        let config = TreeConfig::sft("S", &[2, 1], 8, &[16]);
        let root = TreeNode::root("S");
        let exp = expand_parent(
            &root,
            &[],
            &config,
            &ChatTemplate::llama2_chat(),
            &backends,
            ExpandOptions::default(),
        )
        .unwrap();
        assert_eq!(exp.children.len(), 2);
        assert_eq!(m.generate_calls(), 1);
        assert_eq!(exp.children[1].id.to_string(), "1");
    }

    #[test]
    fn duplicates_cause_shortfall_after_one_regeneration() {
        let m = Arc::new(MockBackend::new().repeating_when(|_| true));
        let backends = Backends::shared(m.clone());
        let mut config = TreeConfig::sft("S", &[3, 1], 8, &[16]);
        config.dedup_threshold = 0.95;
        let exp = expand_parent(
            &TreeNode::root("S"),
            &[],
            &config,
            &ChatTemplate::llama2_chat(),
            &backends,
            ExpandOptions::default(),
        )
        .unwrap();
        assert!(exp.children.len() < 3);
        assert_eq!(exp.info.shortfall as usize, 3 - exp.children.len());
        assert_eq!(exp.info.regenerations, 1);
        assert_eq!(m.generate_calls(), 2);
    }

    #[test]
    fn large_pools_are_split_at_the_sample_cap() {
        let (m, backends) = mock();
        let mut config = TreeConfig::pt("P", &[5], 4);
        config.dedup_threshold = 1.01;
        let options = ExpandOptions {
            sample_cap: 4,
            include_embeddings: true,
        };
        let exp = expand_parent(&TreeNode::root("P"), &[], &config, &ChatTemplate::plain(), &backends, options).unwrap();
        assert_eq!(m.generate_calls(), 3);
        assert_eq!(exp.children.len(), 5);
        assert!(exp.children.iter().all(|c| c.embedding.is_some()));
    }

    #[test]
    fn run_and_resume_noop() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path());
        let (m, backends) = mock();
        let mut config = TreeConfig::sft("S", &[2, 2], 8, &[16]);
        config.dedup_threshold = 1.01;
        let report = run(&config, &backends, &store, &RunOptions::with_workers(3)).unwrap();
        assert_eq!(report.status, RunStatus::Complete);
        assert_eq!(report.tree.leaf_paths(false).unwrap().len(), 4);
        let calls = m.generate_calls();
        let again = resume(&config, &backends, &store, &RunOptions::default()).unwrap();
        assert_eq!(m.generate_calls(), calls);
        assert_eq!(again.tree, report.tree);
        let manifest = store.read_manifest().unwrap();
        assert_eq!(manifest.status, ManifestStatus::Complete);
        assert_eq!(manifest.nodes_committed, 6);
    }

    #[test]
    fn failing_backend_aborts_resumably() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path());
        let m = Arc::new(MockBackend::new().failing_when(|r| r.max_tokens == 16));
        let backends = Backends::shared(m.clone());
        let config = TreeConfig::sft("S", &[2, 1], 8, &[16]);
        let report = run(&config, &backends, &store, &RunOptions::with_workers(2)).unwrap();
        assert_eq!(report.status, RunStatus::Aborted);
        assert_eq!(report.failures.len(), 1);
        assert!(report.retries >= 2);
        assert_eq!(store.read_manifest().unwrap().status, ManifestStatus::Aborted);

        let options = RunOptions {
            failure_policy: FailurePolicy::Continue,
            retry_budget: 0,
            ..RunOptions::with_workers(2)
        };
        let report = run(&config, &backends, &store, &options).unwrap();
        assert_eq!(report.status, RunStatus::Aborted);
        assert_eq!(report.failures.len(), 2);
    }

    #[test]
    fn pt_rejects_marker_separator() {
        let dir = tempfile::tempdir().unwrap();
        let (_m, backends) = mock();
        let mut config = TreeConfig::pt("P", &[2], 4);
        config.template_id = crate::prompt::LLAMA2_CHAT.into();
        assert!(matches!(
            run(&config, &backends, &CheckpointStore::new(dir.path()), &RunOptions::default()),
            Err(SchedulerError::TemplateNotRoleFree(_))
        ));
    }
}
