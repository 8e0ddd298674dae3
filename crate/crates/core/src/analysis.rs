//! Corpus statistics and embedding-based diversity diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Embedder, EmbeddingVector};
use crate::corpus::ConversationRecord;
use crate::dedup::cosine;
use crate::tree::Tree;

/// Texts per embedding request.
const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("need at least {need} records, have {have}")]
    TooFewRecords { need: usize, have: usize },
    #[error("n_pairs must be positive")]
    NoPairs,
    #[error("embedding dimensions differ within the corpus")]
    Dimension,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub p50: usize,
    pub p95: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub record_count: usize,
    pub turn_histogram: BTreeMap<u32, usize>,
    /// Characters per message.
    pub text_length_stats: LengthStats,
    pub shortfall_count: u64,
    pub dedup_drop_count: u64,
}

impl CorpusStats {
    /// Fill the generation counters from the tree the records came from.
    pub fn with_tree(mut self, tree: &Tree) -> Self {
        self.shortfall_count = tree.total_shortfall();
        self.dedup_drop_count = tree.total_dropped();
        self
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile<T: Copy>(sorted: &[T], p: f64) -> T {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn compute_stats(records: &[ConversationRecord]) -> CorpusStats {
    let mut turn_histogram = BTreeMap::new();
    let mut lengths = Vec::new();
    for r in records {
        *turn_histogram.entry(r.turn_count).or_insert(0) += 1;
        lengths.extend(r.turns.iter().map(|m| m.value.chars().count()));
    }
    lengths.sort_unstable();
    let text_length_stats = if lengths.is_empty() {
        LengthStats::default()
    } else {
        LengthStats {
            min: lengths[0],
            max: lengths[lengths.len() - 1],
            mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
            p50: percentile(&lengths, 0.50),
            p95: percentile(&lengths, 0.95),
        }
    };
    CorpusStats {
        record_count: records.len(),
        turn_histogram,
        text_length_stats,
        shortfall_count: 0,
        dedup_drop_count: 0,
    }
}

/// The text embedded for a record: its messages joined by newlines.
pub fn record_text(record: &ConversationRecord) -> String {
    record
        .turns
        .iter()
        .map(|m| m.value.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

fn embed_records(records: &[&ConversationRecord], embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>, AnalysisError> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|r| record_text(r)).collect();
        out.extend(embedder.embed(&texts)?);
    }
    if out.windows(2).any(|w| w[0].dim() != w[1].dim()) {
        return Err(AnalysisError::Dimension);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub pairs: usize,
    pub mean_cosine: f64,
    pub p10: f64,
    pub p90: f64,
}

/// The `index`-th pair `(i, j)`, `i < j`, in row-major order over `n` items.
fn pair_at(n: usize, index: usize) -> (usize, usize) {
    // Pairs before row i: i*(2n - i - 1)/2.
    let before = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if before(mid) <= index {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + index - before(lo))
}

/// Cosine statistics over `n_pairs` distinct record pairs drawn uniformly
/// (all pairs when fewer exist).
pub fn diversity_sample(
    records: &[ConversationRecord],
    embedder: &dyn Embedder,
    n_pairs: usize,
    seed: u64,
) -> Result<DiversityStats, AnalysisError> {
    let n = records.len();
    if n < 2 {
        return Err(AnalysisError::TooFewRecords { need: 2, have: n });
    }
    if n_pairs == 0 {
        return Err(AnalysisError::NoPairs);
    }
    let total = n * (n - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, n_pairs.min(total)).into_vec();
    picks.sort_unstable();
    let pairs: Vec<(usize, usize)> = picks.into_iter().map(|p| pair_at(n, p)).collect();

    let used: BTreeSet<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    let used: Vec<usize> = used.into_iter().collect();
    let refs: Vec<&ConversationRecord> = used.iter().map(|&i| &records[i]).collect();
    let vectors = embed_records(&refs, embedder)?;
    let slot: BTreeMap<usize, usize> = used.iter().enumerate().map(|(s, &i)| (i, s)).collect();

    let mut sims: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| cosine(&vectors[slot[&i]], &vectors[slot[&j]]).map_err(|_| AnalysisError::Dimension))
        .collect::<Result<_, _>>()?;
    let mean_cosine = sims.iter().sum::<f64>() / sims.len() as f64;
    sims.sort_by(|a, b| a.partial_cmp(b).expect("finite cosines"));
    Ok(DiversityStats {
        pairs: sims.len(),
        mean_cosine,
        p10: percentile(&sims, 0.10),
        p90: percentile(&sims, 0.90),
    })
}

/// Write `id\te0..` rows, one per record, after a header line. Returns the
/// embedding dimension.
pub fn export_embeddings(
    records: &[ConversationRecord],
    embedder: &dyn Embedder,
    path: &Path,
) -> Result<usize, AnalysisError> {
    let refs: Vec<&ConversationRecord> = records.iter().collect();
    let vectors = embed_records(&refs, embedder)?;
    let dim = vectors.first().map_or(0, EmbeddingVector::dim);
    let err = |source| AnalysisError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(err)?);
    let mut header = String::from("id");
    for d in 0..dim {
        header.push_str(&format!("\te{d}"));
    }
    writeln!(out, "{header}").map_err(err)?;
    for (r, v) in records.iter().zip(&vectors) {
        let mut row = r.id.clone();
        for x in v.values() {
            row.push('\t');
            row.push_str(&x.to_string());
        }
        writeln!(out, "{row}").map_err(err)?;
    }
    out.flush().map_err(err)?;
    Ok(dim)
}
