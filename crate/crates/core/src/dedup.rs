//! Sibling deduplication: greedy maximal marginal relevance followed by a
//! near-duplicate threshold filter.

use thiserror::Error;

use crate::backend::EmbeddingVector;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("requested {k} picks from {n} candidates")]
    TooFewCandidates { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("lambda {0} outside [0, 1]")]
    Lambda(f64),
}

/// Cosine similarity. A zero vector has similarity 0 to everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DedupError> {
    if a.dim() != b.dim() {
        return Err(DedupError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(cosine_slices(a.values(), b.values()))
}

fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmrSelection {
    /// Candidate indices in pick order.
    pub selected: Vec<usize>,
    /// MMR score of each pick; the first pick's score is its relevance.
    pub scores: Vec<f64>,
    pub dropped_as_duplicates: Vec<usize>,
    /// Number of picks asked for.
    pub requested: usize,
    /// Unselected candidates in the order greedy selection would have
    /// continued, with their scores at that point.
    pub backfill: Vec<(usize, f64)>,
}

impl MmrSelection {
    pub fn shortfall(&self) -> usize {
        self.requested.saturating_sub(self.selected.len())
    }
}

/// Greedy MMR. The first pick maximizes relevance to `query`; each later pick
/// maximizes `lambda * rel - (1 - lambda) * max sim to picked`. Ties go to the
/// lowest index.
pub fn mmr_select(
    candidates: &[EmbeddingVector],
    query: &EmbeddingVector,
    k: usize,
    lambda: f64,
) -> Result<MmrSelection, DedupError> {
    if k == 0 {
        return Err(DedupError::ZeroK);
    }
    if k > candidates.len() {
        return Err(DedupError::TooFewCandidates { k, n: candidates.len() });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DedupError::Lambda(lambda));
    }
    let relevance = candidates
        .iter()
        .map(|c| cosine(c, query))
        .collect::<Result<Vec<_>, _>>()?;
    for c in candidates {
        if c.dim() != candidates[0].dim() {
            return Err(DedupError::DimensionMismatch(candidates[0].dim(), c.dim()));
        }
    }

    let n = candidates.len();
    // Running max similarity of each candidate to the picked set.
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut picked = vec![false; n];
    let mut order: Vec<(usize, f64)> = Vec::with_capacity(n);
    for step in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !picked[i]) {
            let score = if step == 0 {
                relevance[i]
            } else {
                lambda * relevance[i] - (1.0 - lambda) * max_sim[i]
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (pick, score) = best.expect("unpicked candidate remains");
        picked[pick] = true;
        order.push((pick, score));
        for i in (0..n).filter(|&i| !picked[i]) {
            let s = cosine_slices(candidates[i].values(), candidates[pick].values());
            if s > max_sim[i] {
                max_sim[i] = s;
            }
        }
    }

    let backfill = order.split_off(k);
    Ok(MmrSelection {
        selected: order.iter().map(|&(i, _)| i).collect(),
        scores: order.iter().map(|&(_, s)| s).collect(),
        dropped_as_duplicates: Vec::new(),
        requested: k,
        backfill,
    })
}

/// Drop picks whose cosine to an earlier kept pick reaches `threshold`, then
/// refill from the backfill order under the same rule. A threshold above 1
/// disables the filter.
pub fn near_duplicate_filter(
    candidates: &[EmbeddingVector],
    selection: &MmrSelection,
    threshold: f64,
) -> MmrSelection {
    if threshold > 1.0 {
        return selection.clone();
    }
    let mut kept: Vec<(usize, f64)> = Vec::with_capacity(selection.requested);
    let mut dropped = selection.dropped_as_duplicates.clone();
    let mut remaining = Vec::new();
    let stream = selection
        .selected
        .iter()
        .copied()
        .zip(selection.scores.iter().copied())
        .chain(selection.backfill.iter().copied());
    for (i, score) in stream {
        if kept.len() == selection.requested {
            remaining.push((i, score));
            continue;
        }
        let duplicate = kept.iter().any(|&(j, _)| {
            cosine_slices(candidates[i].values(), candidates[j].values()) >= threshold
        });
        if duplicate {
            dropped.push(i);
        } else {
            kept.push((i, score));
        }
    }
    MmrSelection {
        selected: kept.iter().map(|&(i, _)| i).collect(),
        scores: kept.iter().map(|&(_, s)| s).collect(),
        dropped_as_duplicates: dropped,
        requested: selection.requested,
        backfill: remaining,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[0.8, 0.6])).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(cosine(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
    }

    fn hand_example() -> (Vec<EmbeddingVector>, EmbeddingVector) {
        (vec![v(&[1.0, 0.0]), v(&[0.8, 0.6]), v(&[1.0, 0.0])], v(&[1.0, 0.0]))
    }

    #[test]
    fn hand_computed_mmr() {
        let (cands, query) = hand_example();
        let sel = mmr_select(&cands, &query, 2, 0.7).unwrap();
        assert_eq!(sel.selected, vec![0, 2]);
        assert!((sel.scores[1] - 0.40).abs() < 1e-12);
        assert_eq!(sel.backfill.len(), 1);
        assert_eq!(sel.backfill[0].0, 1);

        let filtered = near_duplicate_filter(&cands, &sel, 0.95);
        assert_eq!(filtered.selected, vec![0, 1]);
        assert_eq!(filtered.dropped_as_duplicates, vec![2]);
        assert_eq!(filtered.shortfall(), 0);

        assert_eq!(near_duplicate_filter(&cands, &sel, 1.01), sel);
    }

    #[test]
    fn k_one_is_argmax_relevance() {
        let (cands, query) = hand_example();
        for lambda in [0.0, 0.3, 1.0] {
            assert_eq!(mmr_select(&cands, &query, 1, lambda).unwrap().selected, vec![0]);
        }
    }

    #[test]
    fn identical_pool_keeps_one() {
        let cands = vec![v(&[0.3, 0.4]); 6];
        let sel = mmr_select(&cands, &v(&[1.0, 0.0]), 3, 0.5).unwrap();
        let filtered = near_duplicate_filter(&cands, &sel, 0.95);
        assert_eq!(filtered.selected, vec![0]);
        assert_eq!(filtered.shortfall(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        let (cands, query) = hand_example();
        assert!(matches!(
            mmr_select(&cands, &query, 4, 0.5),
            Err(DedupError::TooFewCandidates { .. })
        ));
        assert!(mmr_select(&cands, &v(&[1.0]), 1, 0.5).is_err());
        assert!(mmr_select(&cands, &query, 1, 1.5).is_err());
    }

    /// Recomputes every score from scratch at every step.
    fn oracle(cands: &[Vec<f64>], query: &[f64], k: usize, lambda: f64) -> Vec<usize> {
        fn cos(a: &[f64], b: &[f64]) -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (dot / (na * nb)).clamp(-1.0, 1.0)
            }
        }
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < k {
            let mut best_i = usize::MAX;
            let mut best = f64::NEG_INFINITY;
            for i in 0..cands.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let rel = cos(&cands[i], query);
                let score = if chosen.is_empty() {
                    rel
                } else {
                    let red = chosen
                        .iter()
                        .map(|&s| cos(&cands[i], &cands[s]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    lambda * rel - (1.0 - lambda) * red
                };
                if best_i == usize::MAX || score > best {
                    best_i = i;
                    best = score;
                }
            }
            chosen.push(best_i);
        }
        chosen
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize, f64)> {
        (1usize..=4, 1usize..=8).prop_flat_map(|(dim, n)| {
            // Small integer grid so exact ties actually occur.
            let vec = proptest::collection::vec(-2i32..=2, dim)
                .prop_map(|xs| xs.into_iter().map(f64::from).collect::<Vec<_>>());
            (
                proptest::collection::vec(vec.clone(), n),
                vec,
                1usize..=n.min(4),
                prop_oneof![Just(0.0), Just(0.5), Just(1.0), 0.0f64..=1.0],
            )
        })
    }

    fn embed_all(raw: &[Vec<f64>]) -> Vec<EmbeddingVector> {
        raw.iter().map(|x| v(x)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_brute_force_oracle((cands, query, k, lambda) in instance()) {
            let sel = mmr_select(&embed_all(&cands), &v(&query), k, lambda).unwrap();
            prop_assert_eq!(sel.selected, oracle(&cands, &query, k, lambda));
        }
    }

    proptest! {
        #[test]
        fn lambda_one_is_top_k_by_relevance((cands, query, k, _l) in instance()) {
            let emb = embed_all(&cands);
            let q = v(&query);
            let sel = mmr_select(&emb, &q, k, 1.0).unwrap();
            let mut idx: Vec<usize> = (0..cands.len()).collect();
            let rel: Vec<f64> = emb.iter().map(|c| cosine(c, &q).unwrap()).collect();
            idx.sort_by(|&a, &b| rel[b].partial_cmp(&rel[a]).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            prop_assert_eq!(sel.selected, idx);
        }

        #[test]
        fn selection_is_unique_and_bounded((cands, query, k, lambda) in instance()) {
            let emb = embed_all(&cands);
            let sel = mmr_select(&emb, &v(&query), k, lambda).unwrap();
            let mut s = sel.selected.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), k);
            prop_assert_eq!(sel.selected.len() + sel.backfill.len(), cands.len());
        }

        #[test]
        fn filter_leaves_no_close_pair(
            (cands, query, k, lambda) in instance(),
            threshold in 0.05f64..=1.0,
        ) {
            let emb = embed_all(&cands);
            let sel = mmr_select(&emb, &v(&query), k, lambda).unwrap();
            let out = near_duplicate_filter(&emb, &sel, threshold);
            prop_assert!(out.selected.len() <= k);
            prop_assert!(!out.selected.is_empty());
            for (a, &i) in out.selected.iter().enumerate() {
                for &j in &out.selected[a + 1..] {
                    prop_assert!(cosine(&emb[i], &emb[j]).unwrap() < threshold);
                }
            }
        }

        #[test]
        fn padding_never_picked_changes_nothing(
            (cands, query, k, lambda) in instance(),
            pads in proptest::collection::vec(proptest::collection::vec(-2i32..=2, 4), 1..4),
        ) {
            let dim = query.len();
            let base = embed_all(&cands);
            let mut padded = base.clone();
            padded.extend(pads.iter().map(|p| {
                v(&p[..dim].iter().map(|&x| f64::from(x)).collect::<Vec<_>>())
            }));
            let q = v(&query);
            let with = mmr_select(&padded, &q, k, lambda).unwrap();
            // Only meaningful when no pad made it into the selection.
            prop_assume!(with.selected.iter().all(|&i| i < cands.len()));
            prop_assert_eq!(with.selected, mmr_select(&base, &q, k, lambda).unwrap().selected);
        }

        #[test]
        fn anti_query_padding_is_inert_at_lambda_one(
            cands in proptest::collection::vec(proptest::collection::vec(0i32..=2, 3), 1..8),
            n_pad in 1usize..4,
        ) {
            let base: Vec<EmbeddingVector> = cands
                .iter()
                .map(|c| v(&c.iter().map(|&x| f64::from(x)).collect::<Vec<_>>()))
                .collect();
            let q = v(&[1.0, 1.0, 1.0]);
            let mut padded = base.clone();
            padded.extend(std::iter::repeat_n(v(&[-1.0, -1.0, -1.0]), n_pad));
            let k = base.len().min(4);
            let a = mmr_select(&base, &q, k, 1.0).unwrap();
            let b = mmr_select(&padded, &q, k, 1.0).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
