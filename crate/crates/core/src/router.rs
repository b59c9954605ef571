//! Latent-embeddings router: partition reference embeddings by unit
//! type into padded per-group batches with validity masks, keeping the
//! inverse mapping back to source positions.
//!
//! Pad slots hold the all-zeros vector, but the validity mask is the
//! single source of truth; the pad value is never inspected.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouterError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("group ({unit}, {group_id}) has non-contiguous ref indices")]
    NonContiguousGroup { unit: String, group_id: usize },
    #[error("pad_length {pad} is smaller than the largest group ({max})")]
    PadTooSmall { pad: usize, max: usize },
    #[error("outputs shape does not match batch: {0}")]
    ShapeMismatch(String),
}

/// One reference embedding with its routing coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RefEmbedding {
    pub vector: Vec<f64>,
    pub unit: String,
    /// triplet-binding identity
    pub group_id: usize,
    /// the ref index inside the binding
    pub index_in_group: usize,
    /// token offset in the answer
    pub source_position: usize,
}

/// Padded per-unit batch. `groups[g]` has `pad_length` slots; the first
/// n_g are valid, the rest hold the zero pad vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedBatch {
    pub unit: String,
    pub dim: usize,
    pub pad_length: usize,
    pub groups: Vec<Vec<Vec<f64>>>,
    pub validity: Vec<Vec<bool>>,
    /// (group, slot) → source_position, for valid slots only
    pub inverse: BTreeMap<(usize, usize), usize>,
}

impl RoutedBatch {
    pub fn valid_count(&self) -> usize {
        self.validity.iter().flatten().filter(|&&v| v).count()
    }
}

/// Partition embeddings by unit into padded batches. Within a group,
/// slot order equals ref-index order. `pad_length` defaults to the max
/// group size for each unit.
pub fn route_refs(
    embeddings: &[RefEmbedding],
    pad_length: Option<usize>,
) -> Result<BTreeMap<String, RoutedBatch>, RouterError> {
    let mut out = BTreeMap::new();
    if embeddings.is_empty() {
        return Ok(out);
    }
    let dim = embeddings[0].vector.len();
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(RouterError::DimensionMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
    }
    // (unit → group_id → members), ordered for determinism
    let mut by_unit: BTreeMap<&str, BTreeMap<usize, Vec<&RefEmbedding>>> = BTreeMap::new();
    for e in embeddings {
        by_unit
            .entry(&e.unit)
            .or_default()
            .entry(e.group_id)
            .or_default()
            .push(e);
    }
    for (unit, groups) in by_unit {
        let mut ordered: Vec<(usize, Vec<&RefEmbedding>)> = Vec::new();
        let mut max_len = 0usize;
        for (gid, mut members) in groups {
            members.sort_by_key(|e| e.index_in_group);
            let contiguous = members
                .iter()
                .enumerate()
                .all(|(i, e)| e.index_in_group == i);
            if !contiguous {
                return Err(RouterError::NonContiguousGroup {
                    unit: unit.to_string(),
                    group_id: gid,
                });
            }
            max_len = max_len.max(members.len());
            ordered.push((gid, members));
        }
        let pad = match pad_length {
            Some(p) if p < max_len => {
                return Err(RouterError::PadTooSmall { pad: p, max: max_len })
            }
            Some(p) => p,
            None => max_len,
        };
        let mut batch = RoutedBatch {
            unit: unit.to_string(),
            dim,
            pad_length: pad,
            groups: Vec::with_capacity(ordered.len()),
            validity: Vec::with_capacity(ordered.len()),
            inverse: BTreeMap::new(),
        };
        for (g, (_gid, members)) in ordered.into_iter().enumerate() {
            let mut slots = Vec::with_capacity(pad);
            let mut mask = Vec::with_capacity(pad);
            for (s, e) in members.iter().enumerate() {
                slots.push(e.vector.clone());
                mask.push(true);
                batch.inverse.insert((g, s), e.source_position);
            }
            while slots.len() < pad {
                slots.push(vec![0.0; dim]);
                mask.push(false);
            }
            batch.groups.push(slots);
            batch.validity.push(mask);
        }
        out.insert(unit.to_string(), batch);
    }
    Ok(out)
}

/// Deliver per-slot decoder outputs back to source positions. Only
/// valid slots contribute.
pub fn unroute<T: Clone>(
    batch: &RoutedBatch,
    per_slot_outputs: &[Vec<T>],
) -> Result<BTreeMap<usize, T>, RouterError> {
    if per_slot_outputs.len() != batch.groups.len() {
        return Err(RouterError::ShapeMismatch(format!(
            "{} output groups vs {} batch groups",
            per_slot_outputs.len(),
            batch.groups.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (g, outputs) in per_slot_outputs.iter().enumerate() {
        if outputs.len() != batch.pad_length {
            return Err(RouterError::ShapeMismatch(format!(
                "group {g}: {} outputs vs pad length {}",
                outputs.len(),
                batch.pad_length
            )));
        }
        for (s, value) in outputs.iter().enumerate() {
            if batch.validity[g][s] {
                let pos = batch.inverse[&(g, s)];
                out.insert(pos, value.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn emb(unit: &str, group: usize, index: usize, pos: usize) -> RefEmbedding {
        RefEmbedding {
            vector: vec![pos as f64, group as f64],
            unit: unit.into(),
            group_id: group,
            index_in_group: index,
            source_position: pos,
        }
    }

    #[test]
    fn routes_disjoint_units() {
        let batches = route_refs(
            &[emb("box", 0, 0, 10), emb("box", 0, 1, 11), emb("mask", 1, 0, 12)],
            None,
        )
        .unwrap();
        assert_eq!(batches.len(), 2);
        let b = &batches["box"];
        assert_eq!(b.groups.len(), 1);
        assert_eq!(b.pad_length, 2);
        assert_eq!(b.validity[0], vec![true, true]);
        let m = &batches["mask"];
        assert_eq!(m.groups.len(), 1);
        assert_eq!(m.pad_length, 1);
    }

    #[test]
    fn empty_input_empty_map() {
        assert!(route_refs(&[], None).unwrap().is_empty());
    }

    #[test]
    fn padded_slots_are_zero_and_invalid() {
        let batches = route_refs(
            &[
                emb("box", 0, 0, 0),
                emb("box", 0, 1, 1),
                emb("box", 0, 2, 2),
                emb("box", 1, 0, 3),
            ],
            Some(4),
        )
        .unwrap();
        let b = &batches["box"];
        assert_eq!(b.pad_length, 4);
        assert_eq!(b.validity[1], vec![true, false, false, false]);
        assert_eq!(b.groups[1][1], vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let mut bad_dim = emb("box", 0, 0, 0);
        bad_dim.vector = vec![1.0];
        assert!(matches!(
            route_refs(&[emb("box", 0, 1, 1), bad_dim], None),
            Err(RouterError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            route_refs(&[emb("box", 0, 0, 0), emb("box", 0, 2, 1)], None),
            Err(RouterError::NonContiguousGroup { .. })
        ));
        assert!(matches!(
            route_refs(&[emb("box", 0, 0, 0), emb("box", 0, 1, 1)], Some(1)),
            Err(RouterError::PadTooSmall { pad: 1, max: 2 })
        ));
    }

    #[test]
    fn inverse_is_a_bijection_onto_source_positions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
        let units = ["box", "mask", "keypoint"];
        let mut embs = Vec::new();
        let mut pos = 0usize;
        for group in 0..20 {
            let unit = units[rng.gen_range(0..3)];
            let n = rng.gen_range(1..=5);
            for i in 0..n {
                embs.push(emb(unit, group, i, pos));
                pos += 1;
            }
        }
        let batches = route_refs(&embs, None).unwrap();
        let total: usize = batches.values().map(RoutedBatch::valid_count).sum();
        assert_eq!(total, embs.len());
        let mut seen: Vec<usize> = batches
            .values()
            .flat_map(|b| b.inverse.values().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..embs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn conservation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut embs = Vec::new();
        let mut pos = 0;
        for group in 0..30 {
            let unit = if rng.gen_bool(0.5) { "box" } else { "mask" };
            for i in 0..rng.gen_range(1..=4) {
                embs.push(emb(unit, group, i, pos));
                pos += 1;
            }
        }
        let batches = route_refs(&embs, None).unwrap();
        let valid: usize = batches.values().map(RoutedBatch::valid_count).sum();
        assert_eq!(valid, embs.len());
    }

    #[test]
    fn unroute_drops_padding() {
        let batches =
            route_refs(&[emb("box", 0, 0, 5), emb("box", 0, 1, 6)], Some(4)).unwrap();
        let b = &batches["box"];
        let out = unroute(b, &[vec!["a", "b", "p", "p"]]).unwrap();
        assert_eq!(out[&5], "a");
        assert_eq!(out[&6], "b");
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn unroute_shape_mismatch() {
        let batches = route_refs(&[emb("box", 0, 0, 0)], None).unwrap();
        let b = &batches["box"];
        assert!(matches!(
            unroute(b, &[vec![1, 2]]),
            Err(RouterError::ShapeMismatch(_))
        ));
        assert!(matches!(
            unroute::<i32>(b, &[]),
            Err(RouterError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn route_unroute_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let mut embs = Vec::new();
            let mut pos = 0usize;
            for group in 0..rng.gen_range(1..=8) {
                let unit = ["box", "mask"][rng.gen_range(0..2)];
                for i in 0..rng.gen_range(1..=5) {
                    embs.push(emb(unit, group, i, pos));
                    pos += 1;
                }
            }
            let batches = route_refs(&embs, None).unwrap();
            let mut delivered: BTreeMap<usize, usize> = BTreeMap::new();
            for b in batches.values() {
                // echo each slot's source position through the decoder
                let outputs: Vec<Vec<usize>> = (0..b.groups.len())
                    .map(|g| {
                        (0..b.pad_length)
                            .map(|s| b.inverse.get(&(g, s)).copied().unwrap_or(usize::MAX))
                            .collect()
                    })
                    .collect();
                delivered.extend(unroute(b, &outputs).unwrap());
            }
            assert_eq!(delivered.len(), embs.len());
            assert!(delivered.iter().all(|(k, v)| k == v));
        }
    }
}
