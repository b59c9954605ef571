//! Region-level evaluation: REC accuracy, cumulative and mean IoU,
//! average precision at a fixed IoU threshold, and similarity-scored
//! mAP where class assignment and detection score both come from
//! cosine similarity between predicted phrases and class names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_iou, mask_inter_union, mask_iou, BinaryMask, Box, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction/ground-truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("embedding of {0:?} has zero norm")]
    ZeroNormEmbedding(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A predicted or ground-truth region.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(Box),
    Mask(BinaryMask),
}

impl Region {
    /// IoU between same-kind regions; 0 across kinds.
    pub fn iou(&self, other: &Region) -> f64 {
        match (self, other) {
            (Region::Box(a), Region::Box(b)) => box_iou(a, b),
            (Region::Mask(a), Region::Mask(b)) => mask_iou(a, b).unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

/// Deterministic text → vector map of fixed dimension.
pub trait EmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError>;
}

/// Hashed character n-gram embedder; deterministic and dependency-free,
/// meant for tests and offline evaluation without a text encoder.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder { dim: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        let normalized: String = text.to_lowercase();
        let padded = format!("^{normalized}$");
        let chars: Vec<char> = padded.chars().collect();
        let mut v = vec![0.0; self.dim];
        for n in 2..=3usize {
            for window in chars.windows(n.min(chars.len())) {
                let s: String = window.iter().collect();
                let h = fnv1a(s.as_bytes());
                v[(h % self.dim as u64) as usize] += 1.0;
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(MetricsError::ZeroNormEmbedding(text.to_string()));
        }
        Ok(v)
    }
}

/// File-backed provider reading a precomputed string → vector table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableEmbedder {
    pub table: BTreeMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let table: BTreeMap<String, Vec<f64>> = serde_json::from_str(json)?;
        Ok(TableEmbedder { table })
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| MetricsError::ZeroNormEmbedding(text.to_string()))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

/// Fraction of aligned prediction/ground-truth pairs with IoU ≥ 0.5.
pub fn rec_accuracy(preds: &[Box], gts: &[Box]) -> Result<f64, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| box_iou(p, g) >= 0.5)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Cumulative IoU: dataset-pooled Σ intersections / Σ unions.
pub fn ciou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, g) in pairs {
        let (i, u) = mask_inter_union(p, g)?;
        inter += i;
        union += u;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean of per-pair IoU.
pub fn miou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += mask_iou(p, g)?;
    }
    Ok(total / pairs.len() as f64)
}

/// A detection carrying a phrase, region, ranking score, and the class
/// index it was assigned to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub phrase: String,
    pub region: Region,
    pub score: f64,
    pub assigned_class: usize,
}

/// Average precision at one IoU threshold: per class, detections sorted
/// by descending score greedily match unmatched ground truth, and AP is
/// the area under the all-point precision envelope; classes with ≥ 1
/// ground truth are averaged.
pub fn ap_at_iou(dets: &[ScoredDetection], gts: &[Vec<Region>], iou_thresh: f64) -> f64 {
    let mut ap_sum = 0.0;
    let mut classes = 0usize;
    for (class, class_gts) in gts.iter().enumerate() {
        if class_gts.is_empty() {
            continue;
        }
        classes += 1;
        ap_sum += class_ap(dets, class, class_gts, iou_thresh);
    }
    if classes == 0 {
        return 0.0;
    }
    ap_sum / classes as f64
}

fn class_ap(dets: &[ScoredDetection], class: usize, gts: &[Region], thresh: f64) -> f64 {
    let mut class_dets: Vec<&ScoredDetection> =
        dets.iter().filter(|d| d.assigned_class == class).collect();
    // stable sort keeps input order on score ties
    class_dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut matched = vec![false; gts.len()];
    let mut tps = Vec::with_capacity(class_dets.len());
    for det in &class_dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if matched[gi] {
                continue;
            }
            let iou = det.region.iou(gt);
            if iou >= thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                tps.push(true);
            }
            None => tps.push(false),
        }
    }
    // all-point interpolated area under the precision envelope
    let total_gt = gts.len() as f64;
    let mut precisions = Vec::with_capacity(tps.len());
    let mut recalls = Vec::with_capacity(tps.len());
    let mut tp_count = 0usize;
    for (i, &tp) in tps.iter().enumerate() {
        if tp {
            tp_count += 1;
        }
        precisions.push(tp_count as f64 / (i + 1) as f64);
        recalls.push(tp_count as f64 / total_gt);
    }
    // envelope from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-threshold breakdown of the similarity-scored mAP.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSReport {
    /// (threshold, AP) pairs
    pub per_threshold: Vec<(f64, f64)>,
    pub mean: f64,
    pub detections: Vec<ScoredDetection>,
}

/// IoU thresholds 0.50 : 0.05 : 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Similarity-scored mAP: each predicted phrase is assigned the class
/// of maximum cosine similarity, the similarity serving as its
/// detection score, then AP is averaged over `thresholds`.
pub fn map_s_report(
    phrases_with_regions: &[(String, Region)],
    gt_classes: &[String],
    gts: &[Vec<Region>],
    provider: &dyn EmbeddingProvider,
    thresholds: &[f64],
) -> Result<MapSReport, MetricsError> {
    assert_eq!(gt_classes.len(), gts.len(), "class list / region list mismatch");
    if gt_classes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let class_embs: Vec<Vec<f64>> = gt_classes
        .iter()
        .map(|c| provider.embed(c))
        .collect::<Result<_, _>>()?;
    for (c, e) in gt_classes.iter().zip(&class_embs) {
        if e.iter().all(|&x| x == 0.0) {
            return Err(MetricsError::ZeroNormEmbedding(c.clone()));
        }
    }
    let mut detections = Vec::with_capacity(phrases_with_regions.len());
    for (phrase, region) in phrases_with_regions {
        let pe = provider.embed(phrase)?;
        let mut best: Option<(usize, f64)> = None;
        for (ci, ce) in class_embs.iter().enumerate() {
            let sim = cosine(&pe, ce)
                .ok_or_else(|| MetricsError::ZeroNormEmbedding(phrase.clone()))?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((ci, sim));
            }
        }
        let (assigned_class, sim) = best.expect("gt_classes non-empty");
        detections.push(ScoredDetection {
            phrase: phrase.clone(),
            region: region.clone(),
            // cosine mapped monotonically into [0, 1]; ranking unchanged
            score: (sim + 1.0) / 2.0,
            assigned_class,
        });
    }
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (t, ap_at_iou(&detections, gts, t)))
        .collect();
    let mean = per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(MapSReport { per_threshold, mean, detections })
}

pub fn map_s(
    phrases_with_regions: &[(String, Region)],
    gt_classes: &[String],
    gts: &[Vec<Region>],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    map_s_report(
        phrases_with_regions,
        gt_classes,
        gts,
        provider,
        &default_thresholds(),
    )
    .map(|r| r.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> Box {
        Box::new(x0, y0, x1, y1).unwrap()
    }

    fn mask(h: usize, w: usize, ones: &[usize]) -> BinaryMask {
        let mut data = vec![false; h * w];
        for &i in ones {
            data[i] = true;
        }
        BinaryMask::new(h, w, data).unwrap()
    }

    #[test]
    fn rec_accuracy_extremes() {
        let a = bx(0.1, 0.1, 0.5, 0.5);
        let b = bx(0.6, 0.6, 0.9, 0.9);
        assert_eq!(rec_accuracy(&[a, a], &[a, a]).unwrap(), 1.0);
        assert_eq!(rec_accuracy(&[a, a], &[b, b]).unwrap(), 0.0);
        assert!(matches!(
            rec_accuracy(&[a], &[a, b]),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn rec_accuracy_mixed_hand_set() {
        // IoUs 1.0, 0.6, ~0.43, 0.0 → 2/4
        let g = bx(0.0, 0.0, 0.5, 0.5);
        let p_exact = g;
        let p_good = bx(0.0, 0.0, 0.5, 0.375); // IoU = 0.75
        let p_bad = bx(0.0, 0.0, 0.5, 0.15); // IoU = 0.3
        let p_miss = bx(0.6, 0.6, 0.9, 0.9);
        let acc = rec_accuracy(&[p_exact, p_good, p_bad, p_miss], &[g, g, g, g]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn ciou_vs_miou_hand_case() {
        // (I,U) = (2,4) and (0,1): cIoU = 2/5, mIoU = (0.5 + 0)/2
        let a = (mask(2, 2, &[0, 1, 2]), mask(2, 2, &[0, 1, 3])); // I=2, U=4
        let b = (mask(1, 1, &[]), mask(1, 1, &[0])); // I=0, U=1
        let pairs = vec![a, b];
        assert_eq!(ciou(&pairs).unwrap(), 0.4);
        assert_eq!(miou(&pairs).unwrap(), 0.25);
    }

    #[test]
    fn empty_dataset_errors() {
        assert!(matches!(ciou(&[]), Err(MetricsError::EmptyDataset)));
        assert!(matches!(miou(&[]), Err(MetricsError::EmptyDataset)));
    }

    #[test]
    fn miou_single_identical_pair() {
        let p = (mask(2, 2, &[0, 3]), mask(2, 2, &[0, 3]));
        assert_eq!(miou(&[p.clone()]).unwrap(), 1.0);
        assert_eq!(ciou(&[p]).unwrap(), 1.0);
    }

    #[test]
    fn miou_order_invariant() {
        let a = (mask(2, 2, &[0]), mask(2, 2, &[0, 1]));
        let b = (mask(2, 2, &[2]), mask(2, 2, &[2, 3]));
        assert_eq!(
            miou(&[a.clone(), b.clone()]).unwrap(),
            miou(&[b, a]).unwrap()
        );
    }

    fn det(score: f64, class: usize, region: Region) -> ScoredDetection {
        ScoredDetection {
            phrase: String::new(),
            region,
            score,
            assigned_class: class,
        }
    }

    #[test]
    fn ap_single_perfect_detection() {
        let g = Region::Box(bx(0.1, 0.1, 0.5, 0.5));
        let ap = ap_at_iou(&[det(0.9, 0, g.clone())], &[vec![g]], 0.5);
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_false_first_true_second() {
        let g = Region::Box(bx(0.1, 0.1, 0.5, 0.5));
        let far = Region::Box(bx(0.6, 0.6, 0.9, 0.9));
        let ap = ap_at_iou(
            &[det(0.9, 0, far), det(0.5, 0, g.clone())],
            &[vec![g]],
            0.5,
        );
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn ap_duplicate_detection_is_false_positive() {
        let g = Region::Box(bx(0.1, 0.1, 0.5, 0.5));
        let ap = ap_at_iou(
            &[det(0.9, 0, g.clone()), det(0.8, 0, g.clone())],
            &[vec![g]],
            0.5,
        );
        // TP then FP: precision envelope gives recall 1 at precision 1
        assert_eq!(ap, 1.0);
        // and with two GTs only one is covered
        let g2 = Region::Box(bx(0.6, 0.6, 0.9, 0.9));
        let g1 = Region::Box(bx(0.1, 0.1, 0.5, 0.5));
        let ap2 = ap_at_iou(
            &[det(0.9, 0, g1.clone()), det(0.8, 0, g1.clone())],
            &[vec![g1, g2]],
            0.5,
        );
        assert_eq!(ap2, 0.5);
    }

    #[test]
    fn ap_score_rescale_invariant() {
        let g1 = Region::Box(bx(0.1, 0.1, 0.5, 0.5));
        let g2 = Region::Box(bx(0.6, 0.6, 0.9, 0.9));
        let dets = vec![det(0.8, 0, g1.clone()), det(0.4, 0, g2.clone())];
        let scaled: Vec<ScoredDetection> = dets
            .iter()
            .map(|d| ScoredDetection { score: d.score * 0.5, ..d.clone() })
            .collect();
        let gts = vec![vec![g1, g2]];
        assert_eq!(ap_at_iou(&dets, &gts, 0.5), ap_at_iou(&scaled, &gts, 0.5));
    }

    /// Orthogonal toy provider: each class a distinct basis vector,
    /// phrases mapped to their class's vector.
    struct Orthogonal {
        classes: Vec<String>,
    }

    impl EmbeddingProvider for Orthogonal {
        fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
            let mut v = vec![0.0; self.classes.len()];
            let i = self
                .classes
                .iter()
                .position(|c| c == text)
                .ok_or_else(|| MetricsError::ZeroNormEmbedding(text.to_string()))?;
            v[i] = 1.0;
            Ok(v)
        }
    }

    #[test]
    fn map_s_self_similarity_is_perfect() {
        let classes = vec!["cat".to_string(), "dog".to_string()];
        let g_cat = Region::Box(bx(0.0, 0.0, 0.4, 0.4));
        let g_dog = Region::Box(bx(0.5, 0.5, 0.9, 0.9));
        let preds = vec![
            ("cat".to_string(), g_cat.clone()),
            ("dog".to_string(), g_dog.clone()),
        ];
        let gts = vec![vec![g_cat], vec![g_dog]];
        let provider = HashedNgramEmbedder::default();
        assert_eq!(map_s(&preds, &classes, &gts, &provider).unwrap(), 1.0);
    }

    #[test]
    fn map_s_reduces_to_class_aware_map_with_orthogonal_provider() {
        let classes = vec!["cat".to_string(), "dog".to_string()];
        let provider = Orthogonal { classes: classes.clone() };
        let g_cat = Region::Box(bx(0.0, 0.0, 0.4, 0.4));
        let g_dog = Region::Box(bx(0.5, 0.5, 0.9, 0.9));
        let off = Region::Box(bx(0.05, 0.0, 0.45, 0.4)); // good but not perfect cat box
        let far = Region::Box(bx(0.55, 0.0, 0.95, 0.3));
        let preds = vec![
            ("cat".to_string(), off.clone()),
            ("dog".to_string(), far.clone()),
            ("dog".to_string(), g_dog.clone()),
        ];
        let gts = vec![vec![g_cat.clone()], vec![g_dog.clone()]];
        let report = map_s_report(
            &preds,
            &classes,
            &gts,
            &provider,
            &default_thresholds(),
        )
        .unwrap();
        // same instance scored as plain class-aware mAP with unit scores
        let dets: Vec<ScoredDetection> = vec![
            det(1.0, 0, off),
            det(1.0, 1, far),
            det(1.0, 1, g_dog),
        ];
        let expected: f64 = default_thresholds()
            .iter()
            .map(|&t| ap_at_iou(&dets, &gts, t))
            .sum::<f64>()
            / 10.0;
        assert_eq!(report.mean, expected);
    }

    #[test]
    fn map_s_embedding_scale_invariant() {
        struct Scaled<'a> {
            inner: &'a HashedNgramEmbedder,
            k: f64,
        }
        impl EmbeddingProvider for Scaled<'_> {
            fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
                Ok(self.inner.embed(text)?.into_iter().map(|x| x * self.k).collect())
            }
        }
        let classes = vec!["cat".to_string(), "dog".to_string(), "bird".to_string()];
        let g1 = Region::Box(bx(0.0, 0.0, 0.4, 0.4));
        let g2 = Region::Box(bx(0.5, 0.5, 0.9, 0.9));
        let preds = vec![
            ("catt".to_string(), g1.clone()),
            ("dog".to_string(), g2.clone()),
        ];
        let gts = vec![vec![g1], vec![g2], vec![]];
        let base = HashedNgramEmbedder::default();
        let m1 = map_s(&preds, &classes, &gts, &base).unwrap();
        let m2 = map_s(&preds, &classes, &gts, &Scaled { inner: &base, k: 3.5 }).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn all_metrics_within_unit_interval() {
        let g = Region::Box(bx(0.2, 0.2, 0.6, 0.6));
        let ap = ap_at_iou(&[det(0.7, 0, g.clone())], &[vec![g]], 0.5);
        assert!((0.0..=1.0).contains(&ap));
    }
}
