//! Pairwise geometric costs, padded per-group cost tensors, grouped
//! Hungarian matching, and a brute-force oracle.
//!
//! Groups come from the answer grammar: each triplet binding owns its
//! references, so matching is solved independently per group. Padding
//! cells in the batched tensor are forbidden outright (a rejection mask,
//! not a sentinel cost), so the optimizer can never be attracted to
//! them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_giou, box_l1, BinaryMask, Box, GeometryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no complete matching exists over valid entries{}", .group.map(|g| format!(" (group {g})")).unwrap_or_default())]
    InfeasibleAssignment { group: Option<usize> },
    #[error("group {0} mixes unit types")]
    MixedUnits(usize),
    #[error("brute force limited to min(N,M) <= {limit}, got {got}")]
    TooLarge { limit: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cost matrix is ragged or empty")]
    BadShape,
}

/// Matching-cost weights; defaults follow the decoder loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_mask: f64,
    pub lambda_dice: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            lambda_mask: 20.0,
            lambda_dice: 1.0,
        }
    }
}

/// λ_l1 · L1 + λ_giou · (1 − GIoU).
pub fn box_pair_cost(p: &Box, t: &Box, w: &CostWeights) -> f64 {
    w.lambda_l1 * box_l1(p, t) + w.lambda_giou * (1.0 - box_giou(p, t))
}

/// Per-pixel mask probabilities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProb {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl MaskProb {
    pub fn from_binary(m: &BinaryMask) -> Self {
        MaskProb {
            height: m.height,
            width: m.width,
            data: m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

const BCE_EPS: f64 = 1e-6;

/// λ_mask · mean BCE + λ_dice · (1 − soft Dice). Probabilities are
/// clamped to [ε, 1−ε] before the log terms.
pub fn mask_pair_cost(p: &MaskProb, t: &BinaryMask, w: &CostWeights) -> Result<f64, MatchError> {
    if p.height != t.height || p.width != t.width {
        return Err(GeometryError::DimensionMismatch(p.height, p.width, t.height, t.width).into());
    }
    let n = p.data.len() as f64;
    let mut bce = 0.0;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    for (&pv, &tb) in p.data.iter().zip(&t.data) {
        let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let tv = if tb { 1.0 } else { 0.0 };
        bce -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        inter += pv * tv;
        psum += pv;
        tsum += tv;
    }
    let soft_dice = if psum + tsum == 0.0 {
        1.0
    } else {
        2.0 * inter / (psum + tsum)
    };
    Ok(w.lambda_mask * bce / n + w.lambda_dice * (1.0 - soft_dice))
}

/// Predictions of one group, one unit type each.
#[derive(Debug, Clone)]
pub enum PredSet {
    Boxes(Vec<Box>),
    Masks(Vec<MaskProb>),
}

impl PredSet {
    pub fn len(&self) -> usize {
        match self {
            PredSet::Boxes(v) => v.len(),
            PredSet::Masks(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Targets of one group.
#[derive(Debug, Clone)]
pub enum TargetSet {
    Boxes(Vec<Box>),
    Masks(Vec<BinaryMask>),
}

impl TargetSet {
    pub fn len(&self) -> usize {
        match self {
            TargetSet::Boxes(v) => v.len(),
            TargetSet::Masks(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Padded batch of per-group cost matrices with a validity mask.
/// Entries at invalid positions are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCostTensor {
    pub batch_size: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub costs: Vec<f64>,
    pub valid: Vec<bool>,
    pub group_sizes: Vec<(usize, usize)>,
}

impl GroupCostTensor {
    fn idx(&self, i: usize, n: usize, m: usize) -> usize {
        (i * self.n_max + n) * self.m_max + m
    }

    pub fn cost(&self, i: usize, n: usize, m: usize) -> f64 {
        self.costs[self.idx(i, n, m)]
    }

    pub fn is_valid(&self, i: usize, n: usize, m: usize) -> bool {
        self.valid[self.idx(i, n, m)]
    }

    /// Unpadded N_i × M_i cost submatrix of group `i`.
    pub fn group_matrix(&self, i: usize) -> Vec<Vec<f64>> {
        let (n_i, m_i) = self.group_sizes[i];
        (0..n_i)
            .map(|n| (0..m_i).map(|m| self.cost(i, n, m)).collect())
            .collect()
    }
}

/// Build the padded (B × N_max × M_max) cost tensor for a batch of
/// groups. Each group must pair predictions and targets of one unit
/// type.
pub fn build_cost_tensor(
    groups: &[(PredSet, TargetSet)],
    w: &CostWeights,
) -> Result<GroupCostTensor, MatchError> {
    let batch_size = groups.len();
    let n_max = groups.iter().map(|(p, _)| p.len()).max().unwrap_or(0);
    let m_max = groups.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let mut costs = vec![0.0; batch_size * n_max * m_max];
    let mut valid = vec![false; batch_size * n_max * m_max];
    let mut group_sizes = Vec::with_capacity(batch_size);
    for (i, (preds, targets)) in groups.iter().enumerate() {
        let (n_i, m_i) = (preds.len(), targets.len());
        group_sizes.push((n_i, m_i));
        for n in 0..n_i {
            for m in 0..m_i {
                let c = match (preds, targets) {
                    (PredSet::Boxes(p), TargetSet::Boxes(t)) => box_pair_cost(&p[n], &t[m], w),
                    (PredSet::Masks(p), TargetSet::Masks(t)) => mask_pair_cost(&p[n], &t[m], w)?,
                    _ => return Err(MatchError::MixedUnits(i)),
                };
                let flat = (i * n_max + n) * m_max + m;
                costs[flat] = c;
                valid[flat] = true;
            }
        }
    }
    Ok(GroupCostTensor {
        batch_size,
        n_max,
        m_max,
        costs,
        valid,
        group_sizes,
    })
}

/// One group's matching: (prediction index, target index) pairs in
/// prediction order, plus the total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

fn sum_in_row_order(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted: Vec<(usize, usize)> = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(n, m)| cost[n][m]).sum()
}

/// Potential-based shortest augmenting path solver for n <= m.
/// Returns for each row its assigned column, minimizing total cost.
fn lsap(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m && n > 0);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

struct Problem<'a> {
    cost: &'a [Vec<f64>],
    valid: Option<&'a [Vec<bool>]>,
    /// rows of the working orientation are predictions iff false
    transposed: bool,
}

impl Problem<'_> {
    fn rows(&self) -> usize {
        if self.transposed {
            self.cost[0].len()
        } else {
            self.cost.len()
        }
    }

    fn cols(&self) -> usize {
        if self.transposed {
            self.cost.len()
        } else {
            self.cost[0].len()
        }
    }

    fn cost_at(&self, r: usize, c: usize) -> f64 {
        if self.transposed {
            self.cost[c][r]
        } else {
            self.cost[r][c]
        }
    }

    fn valid_at(&self, r: usize, c: usize) -> bool {
        match self.valid {
            None => true,
            Some(v) => {
                if self.transposed {
                    v[c][r]
                } else {
                    v[r][c]
                }
            }
        }
    }

    /// Penalty that dominates any sum of real costs.
    fn forbidden_cost(&self) -> f64 {
        let max_abs = self
            .cost
            .iter()
            .flatten()
            .fold(0.0f64, |a, &c| a.max(c.abs()));
        (max_abs + 1.0) * (self.rows() as f64 + 1.0) * 1e6
    }

    /// Optimal matching of every row in `rows` into distinct columns of
    /// `cols`. None if no forbidden-free complete matching exists.
    fn solve_subset(&self, rows: &[usize], cols: &[usize], big: f64) -> Option<Vec<(usize, usize)>> {
        if rows.is_empty() {
            return Some(Vec::new());
        }
        if rows.len() > cols.len() {
            return None;
        }
        let assigned = lsap(rows.len(), cols.len(), &|ri, ci| {
            let (r, c) = (rows[ri], cols[ci]);
            if self.valid_at(r, c) {
                self.cost_at(r, c)
            } else {
                big
            }
        });
        let mut pairs = Vec::with_capacity(rows.len());
        for (ri, &ci) in assigned.iter().enumerate() {
            let (r, c) = (rows[ri], cols[ci]);
            if !self.valid_at(r, c) {
                return None;
            }
            pairs.push((r, c));
        }
        Some(pairs)
    }
}

/// Minimum-cost one-to-one assignment over valid entries of an N×M cost
/// matrix. |pairs| = min(N, M); ties are broken toward the
/// lexicographically smallest pair sequence of the matched (smaller)
/// side.
pub fn hungarian_assign(
    cost: &[Vec<f64>],
    valid: Option<&[Vec<bool>]>,
) -> Result<Assignment, MatchError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment { pairs: vec![], total_cost: 0.0 });
    }
    let m = cost[0].len();
    if cost.iter().any(|row| row.len() != m) || m == 0 {
        if m == 0 {
            return Ok(Assignment { pairs: vec![], total_cost: 0.0 });
        }
        return Err(MatchError::BadShape);
    }
    let problem = Problem {
        cost,
        valid,
        transposed: n > m,
    };
    let big = problem.forbidden_cost();
    let all_rows: Vec<usize> = (0..problem.rows()).collect();
    let all_cols: Vec<usize> = (0..problem.cols()).collect();
    let mut result = problem
        .solve_subset(&all_rows, &all_cols, big)
        .ok_or(MatchError::InfeasibleAssignment { group: None })?;

    // deterministic tie-break: walk rows in order, trying smaller
    // columns; accept only completions whose total is exactly optimal
    let base_total: f64 = result.iter().map(|&(r, c)| problem.cost_at(r, c)).sum();
    for pos in 0..result.len() {
        let (r, base_c) = result[pos];
        let used: Vec<usize> = result[..pos].iter().map(|&(_, c)| c).collect();
        for c in 0..base_c {
            if !problem.valid_at(r, c) || used.contains(&c) {
                continue;
            }
            let rest_rows: Vec<usize> = result[pos + 1..].iter().map(|&(rr, _)| rr).collect();
            let rest_cols: Vec<usize> = all_cols
                .iter()
                .copied()
                .filter(|cc| !used.contains(cc) && *cc != c)
                .collect();
            if let Some(rest) = problem.solve_subset(&rest_rows, &rest_cols, big) {
                let mut candidate = result[..pos].to_vec();
                candidate.push((r, c));
                candidate.extend(rest);
                let total: f64 = candidate.iter().map(|&(r, c)| problem.cost_at(r, c)).sum();
                if total == base_total {
                    result = candidate;
                    break;
                }
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = result
        .into_iter()
        .map(|(r, c)| if problem.transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let total_cost = sum_in_row_order(cost, &pairs);
    Ok(Assignment { pairs, total_cost })
}

/// Solve every group of a padded batch. `result[i]` equals a
/// stand-alone solve of the unpadded N_i × M_i submatrix; the outcome is
/// independent of scheduling across groups.
pub fn group_match_parallel(tensor: &GroupCostTensor) -> Result<Vec<Assignment>, MatchError> {
    (0..tensor.batch_size)
        .into_par_iter()
        .map(|i| {
            let sub = tensor.group_matrix(i);
            hungarian_assign(&sub, None).map_err(|e| match e {
                MatchError::InfeasibleAssignment { .. } => {
                    MatchError::InfeasibleAssignment { group: Some(i) }
                }
                other => other,
            })
        })
        .collect()
}

const BRUTE_FORCE_LIMIT: usize = 8;

/// Exhaustive minimum over all injective mappings of the smaller side;
/// test oracle for the solver. First-found optimum under ascending
/// column exploration, i.e. the lexicographically smallest.
pub fn brute_force_match(
    cost: &[Vec<f64>],
    valid: Option<&[Vec<bool>]>,
) -> Result<Assignment, MatchError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Assignment { pairs: vec![], total_cost: 0.0 });
    }
    let m = cost[0].len();
    if m == 0 {
        return Ok(Assignment { pairs: vec![], total_cost: 0.0 });
    }
    if cost.iter().any(|row| row.len() != m) {
        return Err(MatchError::BadShape);
    }
    let small = n.min(m);
    if small > BRUTE_FORCE_LIMIT {
        return Err(MatchError::TooLarge {
            limit: BRUTE_FORCE_LIMIT,
            got: small,
        });
    }
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let at = |r: usize, c: usize| if transposed { cost[c][r] } else { cost[r][c] };
    let ok = |r: usize, c: usize| match valid {
        None => true,
        Some(v) => {
            if transposed {
                v[c][r]
            } else {
                v[r][c]
            }
        }
    };

    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut chosen = vec![usize::MAX; rows];
    let mut used = vec![false; cols];
    fn dfs(
        r: usize,
        rows: usize,
        cols: usize,
        at: &dyn Fn(usize, usize) -> f64,
        ok: &dyn Fn(usize, usize) -> bool,
        chosen: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best: &mut Option<(f64, Vec<(usize, usize)>)>,
    ) {
        if r == rows {
            let pairs: Vec<(usize, usize)> = chosen.iter().enumerate().map(|(r, &c)| (r, c)).collect();
            let total: f64 = pairs.iter().map(|&(r, c)| at(r, c)).sum();
            if best.as_ref().is_none_or(|(bt, _)| total < *bt) {
                *best = Some((total, pairs));
            }
            return;
        }
        for c in 0..cols {
            if !used[c] && ok(r, c) {
                used[c] = true;
                chosen[r] = c;
                dfs(r + 1, rows, cols, at, ok, chosen, used, best);
                used[c] = false;
            }
        }
    }
    dfs(0, rows, cols, &at, &ok, &mut chosen, &mut used, &mut best);
    let (_, small_pairs) = best.ok_or(MatchError::InfeasibleAssignment { group: None })?;
    let mut pairs: Vec<(usize, usize)> = small_pairs
        .into_iter()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let total_cost = sum_in_row_order(cost, &pairs);
    Ok(Assignment { pairs, total_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_box<R: Rng>(rng: &mut R) -> Box {
        let xs = [rng.gen::<f64>(), rng.gen::<f64>()];
        let ys = [rng.gen::<f64>(), rng.gen::<f64>()];
        Box::new(
            xs[0].min(xs[1]),
            ys[0].min(ys[1]),
            xs[0].max(xs[1]),
            ys[0].max(ys[1]),
        )
        .unwrap()
    }

    #[test]
    fn box_cost_zero_at_identity() {
        let b = Box::new(0.1, 0.2, 0.6, 0.8).unwrap();
        assert_eq!(box_pair_cost(&b, &b, &CostWeights::default()), 0.0);
    }

    #[test]
    fn box_cost_hand_case() {
        // half vs full: L1 (center-size) = 0.25 + 0.5, GIoU = IoU = 0.5
        let a = Box::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = Box::new(0.0, 0.0, 0.5, 1.0).unwrap();
        assert!((box_pair_cost(&a, &b, &CostWeights::default()) - 4.75).abs() < 1e-12);
        // adjacent halves: L1 = 0.5, GIoU = 0 → 5·0.5 + 2·1 = 4.5
        let a2 = Box::new(0.0, 0.0, 0.5, 1.0).unwrap();
        let b2 = Box::new(0.5, 0.0, 1.0, 1.0).unwrap();
        assert!((box_pair_cost(&a2, &b2, &CostWeights::default()) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn box_cost_monotone_in_separation() {
        let w = CostWeights::default();
        let t = Box::new(0.0, 0.4, 0.2, 0.6).unwrap();
        let mut last = -1.0;
        for step in 0..=40 {
            let off = step as f64 * 0.02;
            let p = Box::new(off, 0.4, 0.2 + off, 0.6).unwrap();
            let c = box_pair_cost(&p, &t, &w);
            assert!(c >= last - 1e-12, "cost decreased at offset {off}");
            last = c;
        }
    }

    #[test]
    fn mask_cost_identity_is_small() {
        let t = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let p = MaskProb::from_binary(&t);
        let c = mask_pair_cost(&p, &t, &CostWeights::default()).unwrap();
        assert!(c <= 20.0 * 2.0 * BCE_EPS, "c={c}");
    }

    #[test]
    fn mask_cost_anti_identity_is_large() {
        let t = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let flipped = MaskProb {
            height: 2,
            width: 2,
            data: t.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect(),
        };
        let c = mask_pair_cost(&flipped, &t, &CostWeights::default()).unwrap();
        assert!(c > 20.0 * 10.0); // BCE at the clamp is -ln(eps) ≈ 13.8
    }

    #[test]
    fn mask_cost_matches_naive_loop() {
        let mut r = rng(5);
        let w = CostWeights::default();
        for _ in 0..50 {
            let t = BinaryMask::new(8, 8, (0..64).map(|_| r.gen()).collect()).unwrap();
            let p = MaskProb {
                height: 8,
                width: 8,
                data: (0..64).map(|_| r.gen::<f64>()).collect(),
            };
            let mut bce = 0.0;
            let mut inter = 0.0;
            let mut ps = 0.0;
            let mut ts = 0.0;
            for i in 0..64 {
                let pv: f64 = p.data[i];
                let tv = if t.data[i] { 1.0 } else { 0.0 };
                let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                bce += -(tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln());
                inter += pv * tv;
                ps += pv;
                ts += tv;
            }
            let expected = 20.0 * bce / 64.0 + 1.0 * (1.0 - 2.0 * inter / (ps + ts));
            assert!((mask_pair_cost(&p, &t, &w).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_shapes() {
        let w = CostWeights::default();
        let mut r = rng(6);
        let one = build_cost_tensor(
            &[(
                PredSet::Boxes(vec![random_box(&mut r)]),
                TargetSet::Boxes(vec![random_box(&mut r)]),
            )],
            &w,
        )
        .unwrap();
        assert_eq!((one.batch_size, one.n_max, one.m_max), (1, 1, 1));
        assert!(one.is_valid(0, 0, 0));

        let two = build_cost_tensor(
            &[
                (
                    PredSet::Boxes((0..2).map(|_| random_box(&mut r)).collect()),
                    TargetSet::Boxes((0..2).map(|_| random_box(&mut r)).collect()),
                ),
                (
                    PredSet::Boxes(vec![random_box(&mut r)]),
                    TargetSet::Boxes((0..3).map(|_| random_box(&mut r)).collect()),
                ),
            ],
            &w,
        )
        .unwrap();
        assert_eq!((two.batch_size, two.n_max, two.m_max), (2, 2, 3));
        let valid_count = |i: usize| {
            (0..2)
                .flat_map(|n| (0..3).map(move |m| (n, m)))
                .filter(|&(n, m)| two.is_valid(i, n, m))
                .count()
        };
        assert_eq!(valid_count(0), 4);
        assert_eq!(valid_count(1), 3);
    }

    #[test]
    fn tensor_costs_match_recomputation() {
        let w = CostWeights::default();
        let mut r = rng(7);
        let preds: Vec<Box> = (0..3).map(|_| random_box(&mut r)).collect();
        let targets: Vec<Box> = (0..4).map(|_| random_box(&mut r)).collect();
        let t = build_cost_tensor(
            &[(PredSet::Boxes(preds.clone()), TargetSet::Boxes(targets.clone()))],
            &w,
        )
        .unwrap();
        for n in 0..3 {
            for m in 0..4 {
                assert_eq!(t.cost(0, n, m), box_pair_cost(&preds[n], &targets[m], &w));
            }
        }
    }

    #[test]
    fn tensor_rejects_mixed_units() {
        let w = CostWeights::default();
        let mut r = rng(8);
        let err = build_cost_tensor(
            &[(
                PredSet::Boxes(vec![random_box(&mut r)]),
                TargetSet::Masks(vec![BinaryMask::zeros(2, 2)]),
            )],
            &w,
        );
        assert!(matches!(err, Err(MatchError::MixedUnits(0))));
    }

    #[test]
    fn hungarian_two_by_two() {
        let a = hungarian_assign(&[vec![1.0, 2.0], vec![2.0, 1.0]], None).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn hungarian_one_by_one() {
        let a = hungarian_assign(&[vec![3.5]], None).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total_cost, 3.5);
    }

    #[test]
    fn hungarian_matches_brute_force_square() {
        let mut r = rng(9);
        for _ in 0..200 {
            let n = r.gen_range(1..=5);
            let cost: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| r.gen::<f64>()).collect()).collect();
            let h = hungarian_assign(&cost, None).unwrap();
            let b = brute_force_match(&cost, None).unwrap();
            assert_eq!(h.total_cost, b.total_cost, "cost={cost:?}");
            assert_eq!(h.pairs.len(), n);
        }
    }

    #[test]
    fn hungarian_matches_brute_force_rectangular() {
        let mut r = rng(10);
        for _ in 0..200 {
            let n = r.gen_range(1..=6);
            let m = r.gen_range(1..=6);
            let cost: Vec<Vec<f64>> =
                (0..n).map(|_| (0..m).map(|_| r.gen::<f64>()).collect()).collect();
            let h = hungarian_assign(&cost, None).unwrap();
            let b = brute_force_match(&cost, None).unwrap();
            assert_eq!(h.total_cost, b.total_cost, "cost={cost:?}");
            assert_eq!(h.pairs.len(), n.min(m));
        }
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // both diagonals cost 2; pick {(0,0),(1,1)}
        let a = hungarian_assign(&[vec![1.0, 1.0], vec![1.0, 1.0]], None).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let b = brute_force_match(&[vec![1.0, 1.0], vec![1.0, 1.0]], None).unwrap();
        assert_eq!(b.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn forbidden_entries_are_never_used() {
        // cheapest cells are all forbidden
        let cost = vec![vec![0.0, 10.0], vec![0.0, 20.0]];
        let valid = vec![vec![false, true], vec![false, true]];
        // only one column usable for both rows → infeasible
        assert!(matches!(
            hungarian_assign(&cost, Some(&valid)),
            Err(MatchError::InfeasibleAssignment { .. })
        ));
        let valid2 = vec![vec![false, true], vec![true, true]];
        let a = hungarian_assign(&cost, Some(&valid2)).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total_cost, 10.0);
    }

    #[test]
    fn scale_equivariance() {
        let mut r = rng(11);
        for _ in 0..50 {
            let n = r.gen_range(1..=5);
            let cost: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| r.gen::<f64>()).collect()).collect();
            let k = 7.5;
            let scaled: Vec<Vec<f64>> = cost
                .iter()
                .map(|row| row.iter().map(|&c| c * k).collect())
                .collect();
            let a = hungarian_assign(&cost, None).unwrap();
            let b = hungarian_assign(&scaled, None).unwrap();
            assert_eq!(a.pairs, b.pairs);
            assert!((b.total_cost - k * a.total_cost).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let w = CostWeights::default();
        let mut r = rng(12);
        let groups: Vec<(PredSet, TargetSet)> = (0..20)
            .map(|_| {
                let n = r.gen_range(1..=5);
                let m = r.gen_range(1..=5);
                (
                    PredSet::Boxes((0..n).map(|_| random_box(&mut r)).collect()),
                    TargetSet::Boxes((0..m).map(|_| random_box(&mut r)).collect()),
                )
            })
            .collect();
        let tensor = build_cost_tensor(&groups, &w).unwrap();
        let parallel = group_match_parallel(&tensor).unwrap();
        let sequential: Vec<Assignment> = (0..tensor.batch_size)
            .map(|i| hungarian_assign(&tensor.group_matrix(i), None).unwrap())
            .collect();
        assert_eq!(parallel, sequential);
    }

    #[test]
    fn equal_sizes_yield_perfect_match() {
        let w = CostWeights::default();
        let mut r = rng(13);
        let groups: Vec<(PredSet, TargetSet)> = (0..10)
            .map(|_| {
                let n = r.gen_range(1..=6);
                (
                    PredSet::Boxes((0..n).map(|_| random_box(&mut r)).collect()),
                    TargetSet::Boxes((0..n).map(|_| random_box(&mut r)).collect()),
                )
            })
            .collect();
        let tensor = build_cost_tensor(&groups, &w).unwrap();
        for (i, a) in group_match_parallel(&tensor).unwrap().iter().enumerate() {
            let (n_i, m_i) = tensor.group_sizes[i];
            assert_eq!(n_i, m_i);
            assert_eq!(a.pairs.len(), n_i);
            let mut preds: Vec<usize> = a.pairs.iter().map(|&(n, _)| n).collect();
            let mut tgts: Vec<usize> = a.pairs.iter().map(|&(_, m)| m).collect();
            preds.sort_unstable();
            tgts.sort_unstable();
            assert_eq!(preds, (0..n_i).collect::<Vec<_>>());
            assert_eq!(tgts, (0..n_i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn brute_force_too_large() {
        let cost = vec![vec![0.0; 9]; 9];
        assert!(matches!(
            brute_force_match(&cost, None),
            Err(MatchError::TooLarge { .. })
        ));
    }
}
