//! Tree model: configuration schema, nodes, structural validation and
//! root-to-leaf path enumeration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backend::{EmbeddingVector, FinishReason};
use crate::hash::fnv1a64;

pub const DEFAULT_OVERSAMPLE_FACTOR: f64 = 2.0;
pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.95;
pub const MAX_DEDUP_THRESHOLD: f64 = 1.01;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("incomplete tree: {0} node(s) below full depth still await expansion")]
    Incomplete(usize),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("leaf count overflows u64")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sft,
    Pt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Root,
    Question,
    Answer,
    Continuation,
}

impl Role {
    /// The role a layer must carry under `mode`. Layers are 1-based.
    pub fn for_layer(mode: Mode, layer: usize) -> Role {
        match mode {
            Mode::Pt => Role::Continuation,
            Mode::Sft if layer % 2 == 1 => Role::Question,
            Mode::Sft => Role::Answer,
        }
    }

    /// Sampling temperature used when a layer leaves it unset.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Answer => 0.7,
            _ => 1.0,
        }
    }
}

/// One layer of the generation recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawLayerSpec")]
pub struct LayerSpec {
    pub branching: u32,
    pub max_tokens: u32,
    pub role: Role,
    pub temperature: f64,
    pub stop_markers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayerSpec {
    branching: u32,
    max_tokens: u32,
    role: Role,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    stop_markers: Vec<String>,
}

impl From<RawLayerSpec> for LayerSpec {
    fn from(raw: RawLayerSpec) -> Self {
        LayerSpec {
            branching: raw.branching,
            max_tokens: raw.max_tokens,
            role: raw.role,
            temperature: raw.temperature.unwrap_or_else(|| raw.role.default_temperature()),
            stop_markers: raw.stop_markers,
        }
    }
}

impl LayerSpec {
    pub fn new(branching: u32, max_tokens: u32, role: Role) -> Self {
        LayerSpec {
            branching,
            max_tokens,
            role,
            temperature: role.default_temperature(),
            stop_markers: Vec::new(),
        }
    }
}

/// Full generation recipe. Field names are the on-disk JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawTreeConfig")]
pub struct TreeConfig {
    pub mode: Mode,
    pub system_prompt: String,
    pub layers: Vec<LayerSpec>,
    pub oversample_factor: f64,
    pub mmr_lambda: f64,
    pub dedup_threshold: f64,
    pub seed: u64,
    pub template_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTreeConfig {
    mode: Mode,
    system_prompt: String,
    layers: Vec<LayerSpec>,
    #[serde(default)]
    oversample_factor: Option<f64>,
    #[serde(default)]
    mmr_lambda: Option<f64>,
    #[serde(default)]
    dedup_threshold: Option<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    template_id: Option<String>,
}

impl From<RawTreeConfig> for TreeConfig {
    fn from(raw: RawTreeConfig) -> Self {
        let template_id = raw.template_id.unwrap_or_else(|| match raw.mode {
            Mode::Sft => crate::prompt::LLAMA2_CHAT.to_string(),
            Mode::Pt => crate::prompt::PLAIN.to_string(),
        });
        TreeConfig {
            mode: raw.mode,
            system_prompt: raw.system_prompt,
            layers: raw.layers,
            oversample_factor: raw.oversample_factor.unwrap_or(DEFAULT_OVERSAMPLE_FACTOR),
            mmr_lambda: raw.mmr_lambda.unwrap_or(DEFAULT_MMR_LAMBDA),
            dedup_threshold: raw.dedup_threshold.unwrap_or(DEFAULT_DEDUP_THRESHOLD),
            seed: raw.seed,
            template_id,
        }
    }
}

/// Structural family of a branching schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeShape {
    /// `N_1 >= 2` and every deeper layer has branching 1.
    Wide,
    /// Some layer below the first branches.
    Balance,
    /// Branching 1 everywhere: a single chain.
    Linear,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl TreeConfig {
    /// A config with the given branching schedule and default knobs.
    /// Question layers get `question_tokens`, answer layers `answer_tokens[i]`
    /// cycling through the slice.
    pub fn sft(system_prompt: &str, branching: &[u32], question_tokens: u32, answer_tokens: &[u32]) -> Self {
        let layers = branching
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let layer = i + 1;
                let role = Role::for_layer(Mode::Sft, layer);
                let tokens = match role {
                    Role::Question => question_tokens,
                    _ => answer_tokens[(layer / 2 - 1) % answer_tokens.len()],
                };
                LayerSpec::new(n, tokens, role)
            })
            .collect();
        TreeConfig {
            mode: Mode::Sft,
            system_prompt: system_prompt.to_string(),
            layers,
            oversample_factor: DEFAULT_OVERSAMPLE_FACTOR,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            seed: 0,
            template_id: crate::prompt::LLAMA2_CHAT.to_string(),
        }
    }

    /// Continuation-mode config with a uniform token budget.
    pub fn pt(system_prompt: &str, branching: &[u32], max_tokens: u32) -> Self {
        TreeConfig {
            mode: Mode::Pt,
            system_prompt: system_prompt.to_string(),
            layers: branching
                .iter()
                .map(|&n| LayerSpec::new(n, max_tokens, Role::Continuation))
                .collect(),
            oversample_factor: DEFAULT_OVERSAMPLE_FACTOR,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            seed: 0,
            template_id: crate::prompt::PLAIN.to_string(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, TreeError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, TreeError> {
        let text = std::fs::read_to_string(path).map_err(|source| TreeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn branching(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.branching).collect()
    }

    /// Layer spec for a 1-based layer index.
    pub fn layer(&self, layer: usize) -> &LayerSpec {
        &self.layers[layer - 1]
    }

    /// Number of candidates drawn before selection: `ceil(oversample * N_i)`.
    pub fn candidates_for_layer(&self, layer: usize) -> u32 {
        let n = self.layer(layer).branching as f64;
        ((self.oversample_factor * n).ceil() as u32).max(self.layer(layer).branching)
    }

    pub fn dedup_enabled(&self) -> bool {
        self.dedup_threshold <= 1.0
    }

    pub fn shape(&self) -> TreeShape {
        let first = self.layers.first().map_or(1, |l| l.branching);
        let deeper_branch = self.layers.iter().skip(1).any(|l| l.branching > 1);
        if deeper_branch {
            TreeShape::Balance
        } else if first >= 2 {
            TreeShape::Wide
        } else {
            TreeShape::Linear
        }
    }

    /// Compact JSON with recursively sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        canonical_json(&value)
    }

    /// FNV-1a-64 over [`TreeConfig::canonical_json`].
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_json().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_config(self)
    }
}

/// Serialize a JSON value with object keys sorted at every level and no
/// insignificant whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        serde_json::to_string(k).expect("string serializes"),
                        canonical_json(&map[k])
                    )
                })
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}

/// Check hard invariants (errors) and design-intent rules (warnings).
pub fn validate_config(config: &TreeConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let errors = &mut report.errors;
    let depth = config.depth();

    if depth == 0 {
        errors.push("no layers".to_string());
    }
    if config.mode == Mode::Sft && depth % 2 == 1 {
        errors.push("odd depth in SFT mode".to_string());
    }
    for (i, layer) in config.layers.iter().enumerate() {
        let idx = i + 1;
        let expected = Role::for_layer(config.mode, idx);
        if layer.role != expected {
            errors.push(format!(
                "layer {idx}: role {:?} does not match expected {:?}",
                layer.role, expected
            ));
        }
        if layer.branching < 1 {
            errors.push(format!("layer {idx}: branching must be >= 1"));
        }
        if layer.max_tokens < 1 {
            errors.push(format!("layer {idx}: max_tokens must be >= 1"));
        }
        if !(layer.temperature.is_finite() && layer.temperature >= 0.0) {
            errors.push(format!("layer {idx}: temperature must be a finite value >= 0"));
        }
    }
    if !(config.oversample_factor.is_finite() && config.oversample_factor >= 1.0) {
        errors.push("oversample_factor must be >= 1.0".to_string());
    }
    if !(0.0..=1.0).contains(&config.mmr_lambda) {
        errors.push("mmr_lambda must lie in [0, 1]".to_string());
    }
    if !(config.dedup_threshold > 0.0 && config.dedup_threshold <= MAX_DEDUP_THRESHOLD) {
        errors.push("dedup_threshold must lie in (0, 1.01]".to_string());
    }
    if config.template_id.trim().is_empty() {
        errors.push("template_id is empty".to_string());
    }

    if config.mode == Mode::Sft {
        let budgets = |role: Role| -> Vec<u32> {
            config
                .layers
                .iter()
                .filter(|l| l.role == role)
                .map(|l| l.max_tokens)
                .collect()
        };
        let answers = budgets(Role::Answer);
        if answers.windows(2).any(|w| w[1] <= w[0]) {
            report
                .warnings
                .push("answer budgets not increasing with depth".to_string());
        }
        let questions = budgets(Role::Question);
        if questions.windows(2).any(|w| w[1] != w[0]) {
            report
                .warnings
                .push("question budgets not constant across question layers".to_string());
        }
    }
    report
}

/// `prod N_i` over all layers: the leaf count of a tree with no shortfalls.
pub fn expected_leaf_count(config: &TreeConfig) -> Result<u64, TreeError> {
    let report = validate_config(config);
    if !report.is_ok() {
        return Err(TreeError::InvalidConfig(report.errors));
    }
    config
        .layers
        .iter()
        .try_fold(1u64, |acc, l| acc.checked_mul(l.branching as u64))
        .ok_or(TreeError::Overflow)
}

/// `sum_i prod_{j<=i} N_j`: non-root node count of a tree with no shortfalls.
pub fn expected_node_count(config: &TreeConfig) -> Result<u64, TreeError> {
    expected_leaf_count(config)?;
    let mut width = 1u64;
    let mut total = 0u64;
    for l in &config.layers {
        width = width.checked_mul(l.branching as u64).ok_or(TreeError::Overflow)?;
        total = total.checked_add(width).ok_or(TreeError::Overflow)?;
    }
    Ok(total)
}

/// Structural node id: the child-index path from the root (`"0.3.1"`).
/// The root is the empty path, written `"root"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(Vec<u32>);

impl NodeId {
    pub fn root() -> Self {
        NodeId(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: u32) -> NodeId {
        let mut path = self.0.clone();
        path.push(index);
        NodeId(path)
    }

    pub fn parent(&self) -> Option<NodeId> {
        if self.0.is_empty() {
            None
        } else {
            Some(NodeId(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn is_ancestor_of(&self, other: &NodeId) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{idx}")?;
        }
        Ok(())
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "root" {
            return Ok(NodeId::root());
        }
        s.split('.')
            .map(|p| p.parse::<u32>().map_err(|_| format!("bad node id {s:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(NodeId)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub backend_id: String,
    pub finish_reason: FinishReason,
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub layer: u32,
    pub role: Role,
    pub text: String,
    pub token_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    /// Rebuilt from parent links on load; never persisted.
    #[serde(skip)]
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_meta: Option<GenMeta>,
}

impl TreeNode {
    pub fn root(system_prompt: &str) -> Self {
        TreeNode {
            id: NodeId::root(),
            parent_id: None,
            layer: 0,
            role: Role::Root,
            text: system_prompt.to_string(),
            token_count: count_tokens(system_prompt),
            embedding: None,
            children: Vec::new(),
            gen_meta: None,
        }
    }
}

/// Whitespace token count; the artifact does no model tokenization.
pub fn count_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Outcome of expanding one parent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionInfo {
    /// `N_i` minus the number of children kept.
    pub shortfall: u32,
    /// Candidates removed by the near-duplicate filter.
    pub dropped: u32,
    /// Regeneration rounds spent on this parent.
    pub regenerations: u32,
}

/// An in-memory dialogue tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    config: TreeConfig,
    nodes: BTreeMap<NodeId, TreeNode>,
    expansions: BTreeMap<NodeId, ExpansionInfo>,
}

/// A root-to-leaf path. The root's system prompt is carried as metadata and
/// never appears among `nodes`.
#[derive(Debug, Clone)]
pub struct LeafPath<'a> {
    pub system_prompt: &'a str,
    pub nodes: Vec<&'a TreeNode>,
}

impl LeafPath<'_> {
    pub fn leaf(&self) -> &TreeNode {
        self.nodes.last().expect("paths are non-empty")
    }
}

impl Tree {
    pub fn new(config: TreeConfig) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId::root(), TreeNode::root(&config.system_prompt));
        Tree {
            config,
            nodes,
            expansions: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[&NodeId::root()]
    }

    pub fn get(&self, id: &NodeId) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    /// All nodes in structural (depth-first, child-index) order.
    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    /// Non-root node count.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes_at_layer(&self, layer: u32) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values().filter(move |n| n.layer == layer)
    }

    pub fn expansion(&self, id: &NodeId) -> Option<&ExpansionInfo> {
        self.expansions.get(id)
    }

    pub fn expansions(&self) -> impl Iterator<Item = (&NodeId, &ExpansionInfo)> {
        self.expansions.iter()
    }

    pub fn is_expanded(&self, id: &NodeId) -> bool {
        self.expansions.contains_key(id)
    }

    /// Nodes above full depth with no committed expansion, in structural order.
    pub fn unexpanded(&self) -> impl Iterator<Item = &TreeNode> {
        let depth = self.config.depth() as u32;
        self.nodes
            .values()
            .filter(move |n| n.layer < depth && !self.expansions.contains_key(&n.id))
    }

    pub fn is_complete(&self) -> bool {
        self.unexpanded().next().is_none()
    }

    pub fn total_shortfall(&self) -> u64 {
        self.expansions.values().map(|e| e.shortfall as u64).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.expansions.values().map(|e| e.dropped as u64).sum()
    }

    /// Attach one parent's full child set.
    pub fn insert_expansion(
        &mut self,
        parent_id: &NodeId,
        children: Vec<TreeNode>,
        info: ExpansionInfo,
    ) -> Result<(), TreeError> {
        let parent = self
            .nodes
            .get(parent_id)
            .ok_or_else(|| TreeError::Structure(format!("unknown parent {parent_id}")))?;
        if self.expansions.contains_key(parent_id) {
            return Err(TreeError::Structure(format!("parent {parent_id} already expanded")));
        }
        let layer = parent.layer as usize + 1;
        if layer > self.config.depth() {
            return Err(TreeError::Structure(format!(
                "parent {parent_id} is at full depth"
            )));
        }
        let spec = self.config.layer(layer);
        if children.len() > spec.branching as usize {
            return Err(TreeError::Structure(format!(
                "parent {parent_id}: {} children exceed branching {}",
                children.len(),
                spec.branching
            )));
        }
        for (i, child) in children.iter().enumerate() {
            let expected_id = parent_id.child(i as u32);
            if child.id != expected_id
                || child.parent_id.as_ref() != Some(parent_id)
                || child.layer as usize != layer
                || child.role != spec.role
            {
                return Err(TreeError::Structure(format!(
                    "child {} of {parent_id} is inconsistent with layer {layer}",
                    child.id
                )));
            }
        }
        let ids: Vec<NodeId> = children.iter().map(|c| c.id.clone()).collect();
        for child in children {
            self.nodes.insert(child.id.clone(), child);
        }
        self.nodes.get_mut(parent_id).expect("checked").children = ids;
        self.expansions.insert(parent_id.clone(), info);
        Ok(())
    }

    /// Ancestors of `id` from layer 1 down to the node itself.
    pub fn path_to(&self, id: &NodeId) -> Vec<&TreeNode> {
        let mut path: Vec<&TreeNode> = (1..=id.depth())
            .filter_map(|d| self.nodes.get(&NodeId(id.0[..d].to_vec())))
            .collect();
        if path.len() != id.depth() {
            path.clear();
        }
        path
    }

    /// Deepest layer `d` such that every node above `d` has been expanded.
    pub fn completed_layer(&self) -> u32 {
        let first_open = self.unexpanded().map(|n| n.layer).min();
        match first_open {
            None => self.config.depth() as u32,
            Some(layer) => layer,
        }
    }

    /// Every path from the root to a full-depth node, in structural order.
    ///
    /// An incomplete tree is an error unless `permissive`, in which case the
    /// paths end at the deepest completed layer (rounded down to a whole
    /// turn in SFT mode).
    pub fn leaf_paths(&self, permissive: bool) -> Result<Vec<LeafPath<'_>>, TreeError> {
        let depth = self.config.depth() as u32;
        let target = if self.is_complete() {
            depth
        } else if permissive {
            let done = self.completed_layer();
            match self.config.mode {
                Mode::Sft => done - done % 2,
                Mode::Pt => done,
            }
        } else {
            return Err(TreeError::Incomplete(self.unexpanded().count()));
        };
        Ok(self.paths_to_layer(target))
    }

    /// Paths from the root to every node at `layer`.
    pub fn paths_to_layer(&self, layer: u32) -> Vec<LeafPath<'_>> {
        if layer == 0 {
            return Vec::new();
        }
        self.nodes_at_layer(layer)
            .map(|leaf| LeafPath {
                system_prompt: &self.config.system_prompt,
                nodes: self.path_to(&leaf.id),
            })
            .collect()
    }
}
