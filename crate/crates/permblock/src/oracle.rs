//! Exhaustive enumeration of the permuted-block assignment space for small
//! designs: exact distributions, exact moments, and the counting formulas
//! for the unconditional and conditional sample-space sizes.
//!
//! Ground truth for everything the normal approximation estimates.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::design::{tabulate_counts, TrialData};
use crate::error::{Error, Result};
use crate::moments;
use crate::scores::ScoreVector;

/// Exact distribution of S_A over the (possibly conditioned) assignment
/// space.
#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub total_points: BigUint,
    pub conditional_points: BigUint,
    /// (S_A value, probability), keys merged at 1e-9 resolution.
    pub distribution: Vec<(f64, f64)>,
    pub exact_mean: f64,
    pub exact_var: f64,
}

impl EnumerationResult {
    /// Exact two-sided p-value for an observed S_A:
    /// P(|S - mean| >= |S_obs - mean|), with a small slack for float keys.
    pub fn p_two_sided(&self, s_obs: f64) -> f64 {
        let d = (s_obs - self.exact_mean).abs();
        self.distribution
            .iter()
            .filter(|(s, _)| (s - self.exact_mean).abs() >= d - 1e-9)
            .map(|(_, p)| p)
            .sum()
    }
}

fn binomial(m: usize, n: usize) -> BigUint {
    // C(m, n) with the convention C(m, n) = 1 when m or n is 0
    if m == 0 || n == 0 {
        return BigUint::one();
    }
    if n > m {
        return BigUint::zero();
    }
    let mut r = BigUint::one();
    for i in 0..n.min(m - n) {
        r = r * BigUint::from(m - i) / BigUint::from(i + 1);
    }
    r
}

/// Number of points in the unconditional sample space: per block, the sum
/// over per-institution A-counts summing to N/2 of the product of binomials.
pub fn sample_space_size(n_jk: &[Vec<usize>]) -> Result<BigUint> {
    let mut total = BigUint::one();
    for (j, row) in n_jk.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidDesign(format!(
                "block {}: size {n} is not even and >= 2",
                j + 1
            )));
        }
        // weights over a_1..a_K with sum = N/2 of prod C(N_jk, a_k): a 1-D
        // convolution over institutions
        let mut conv: Vec<BigUint> = vec![BigUint::one()];
        for &njk in row {
            let mut next = vec![BigUint::zero(); conv.len() + njk];
            for (s, w) in conv.iter().enumerate() {
                for a in 0..=njk {
                    next[s + a] += w * binomial(njk, a);
                }
            }
            conv = next;
        }
        total *= conv[n / 2].clone();
    }
    Ok(total)
}

/// Number of points in the conditional sample space: same weights, with the
/// K extra constraints that the per-institution totals match `n_ka`.
pub fn conditional_space_size(n_jk: &[Vec<usize>], n_ka: &[usize]) -> Result<BigUint> {
    let p = n_jk.len();
    let k = n_ka.len();
    if n_jk.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidData("count rows disagree on K".into()));
    }
    let total_a: usize = n_ka.iter().sum();
    let half: usize = n_jk.iter().map(|row| row.iter().sum::<usize>() / 2).sum();
    if total_a != half {
        return Err(Error::InvalidData(format!(
            "institution totals sum to {total_a}, expected NP/2 = {half}"
        )));
    }
    // DP over blocks on the vector of running per-institution A-totals.
    let mut states: HashMap<Vec<usize>, BigUint> = HashMap::new();
    states.insert(vec![0; k], BigUint::one());
    for row in n_jk {
        let n: usize = row.iter().sum();
        let block_terms = block_count_vectors(row, n / 2);
        let mut next: HashMap<Vec<usize>, BigUint> = HashMap::new();
        for (state, w) in &states {
            for (vec_a, w_block) in &block_terms {
                let mut ns = state.clone();
                let mut ok = true;
                for kk in 0..k {
                    ns[kk] += vec_a[kk];
                    if ns[kk] > n_ka[kk] {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    *next.entry(ns).or_insert_with(BigUint::zero) += w * w_block;
                }
            }
        }
        states = next;
    }
    let _ = p;
    Ok(states.remove(n_ka).unwrap_or_else(BigUint::zero))
}

/// All per-institution A-count vectors for one block with their
/// multiplicities prod C(N_jk, a_k).
fn block_count_vectors(row: &[usize], half: usize) -> Vec<(Vec<usize>, BigUint)> {
    let mut out = Vec::new();
    let mut current = vec![0usize; row.len()];
    fn rec(
        row: &[usize],
        idx: usize,
        remaining: usize,
        current: &mut Vec<usize>,
        weight: BigUint,
        out: &mut Vec<(Vec<usize>, BigUint)>,
    ) {
        if idx == row.len() {
            if remaining == 0 {
                out.push((current.clone(), weight));
            }
            return;
        }
        for a in 0..=row[idx].min(remaining) {
            current[idx] = a;
            rec(row, idx + 1, remaining - a, current, weight.clone() * binomial(row[idx], a), out);
        }
        current[idx] = 0;
    }
    rec(row, 0, half, &mut current, BigUint::one(), &mut out);
    out
}

/// All index subsets of size n/2 from 0..n, lexicographic.
fn balanced_subsets(n: usize) -> Vec<Vec<usize>> {
    let half = n / 2;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(half);
    fn rec(n: usize, half: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == half {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, half, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(n, half, 0, &mut cur, &mut out);
    out
}

struct BlockChoices {
    /// For each balanced subset: (sum of scores on A, per-institution A counts)
    options: Vec<(f64, Vec<u32>)>,
}

fn prepare_blocks(data: &TrialData, scores: &ScoreVector) -> Vec<BlockChoices> {
    let k = data.design.num_institutions();
    let n = data.design.block_size();
    let subsets = balanced_subsets(n);
    data.blocks()
        .zip(&scores.per_block)
        .map(|(block, ys)| {
            let options = subsets
                .iter()
                .map(|subset| {
                    let mut s = 0.0;
                    let mut counts = vec![0u32; k];
                    for &i in subset {
                        s += ys[i];
                        counts[block[i].institution] += 1;
                    }
                    (s, counts)
                })
                .collect();
            BlockChoices { options }
        })
        .collect()
}

/// Exact joint moments of (S_A, n_A) by full enumeration of the product
/// space; the independent referee for the formula moments.
pub struct ExactJointMoments {
    pub mean_s: f64,
    pub var_s: f64,
    pub mean_n: DVector<f64>,
    pub var_n: DMatrix<f64>,
    pub cov_sn: DVector<f64>,
}

pub fn exact_joint_moments(
    data: &TrialData,
    scores: &ScoreVector,
    cap: u64,
) -> Result<ExactJointMoments> {
    let blocks = prepare_blocks(data, scores);
    let size: BigUint = blocks
        .iter()
        .map(|b| BigUint::from(b.options.len()))
        .product();
    if size > BigUint::from(cap) {
        return Err(Error::EnumerationTooLarge { size, cap: BigUint::from(cap) });
    }
    let k = data.design.num_institutions();
    let total = size.to_u64().unwrap() as f64;

    // two passes: means first, then centered second moments
    let mut mean_s = 0.0;
    let mut mean_n = vec![0.0; k];
    visit_assignments(&blocks, |s, counts| {
        mean_s += s;
        for (m, &c) in mean_n.iter_mut().zip(counts) {
            *m += c as f64;
        }
    });
    mean_s /= total;
    for m in &mut mean_n {
        *m /= total;
    }

    let mut var_s = 0.0;
    let mut var_n = DMatrix::<f64>::zeros(k, k);
    let mut cov_sn = DVector::<f64>::zeros(k);
    visit_assignments(&blocks, |s, counts| {
        let ds = s - mean_s;
        var_s += ds * ds;
        for a in 0..k {
            let da = counts[a] as f64 - mean_n[a];
            cov_sn[a] += ds * da;
            for b in 0..k {
                var_n[(a, b)] += da * (counts[b] as f64 - mean_n[b]);
            }
        }
    });
    var_s /= total;
    var_n /= total;
    cov_sn /= total;
    Ok(ExactJointMoments {
        mean_s,
        var_s,
        mean_n: DVector::from_vec(mean_n),
        var_n,
        cov_sn,
    })
}

/// Walk every point of the product assignment space, calling `f` with the
/// total S_A and per-institution A counts.
fn visit_assignments<F: FnMut(f64, &[u32])>(blocks: &[BlockChoices], mut f: F) {
    let p = blocks.len();
    let k = blocks[0].options[0].1.len();
    let mut idx = vec![0usize; p];
    let mut s_stack = vec![0.0f64; p + 1];
    let mut n_stack = vec![vec![0u32; k]; p + 1];
    let mut depth = 0usize;
    loop {
        if depth == p {
            f(s_stack[p], &n_stack[p]);
            // backtrack
            loop {
                if depth == 0 {
                    return;
                }
                depth -= 1;
                idx[depth] += 1;
                if idx[depth] < blocks[depth].options.len() {
                    break;
                }
                idx[depth] = 0;
            }
        }
        let (s, counts) = &blocks[depth].options[idx[depth]];
        s_stack[depth + 1] = s_stack[depth] + s;
        for kk in 0..k {
            n_stack[depth + 1][kk] = n_stack[depth][kk] + counts[kk];
        }
        depth += 1;
    }
}

/// Walk only the assignments whose per-institution A counts hit `target`,
/// pruning any prefix that can no longer reach it given per-block count
/// ranges for the remaining blocks.
fn visit_conditional<F: FnMut(f64)>(blocks: &[BlockChoices], target: &[u32], f: &mut F) {
    let p = blocks.len();
    let k = target.len();
    // suffix bounds: min/max total A count per institution over blocks d..p
    let mut suf_min = vec![vec![0u32; k]; p + 1];
    let mut suf_max = vec![vec![0u32; k]; p + 1];
    for d in (0..p).rev() {
        for kk in 0..k {
            let lo = blocks[d].options.iter().map(|o| o.1[kk]).min().unwrap_or(0);
            let hi = blocks[d].options.iter().map(|o| o.1[kk]).max().unwrap_or(0);
            suf_min[d][kk] = suf_min[d + 1][kk] + lo;
            suf_max[d][kk] = suf_max[d + 1][kk] + hi;
        }
    }
    struct Walker<'a, F> {
        blocks: &'a [BlockChoices],
        target: &'a [u32],
        suf_min: &'a [Vec<u32>],
        suf_max: &'a [Vec<u32>],
        f: &'a mut F,
    }
    impl<F: FnMut(f64)> Walker<'_, F> {
        fn go(&mut self, depth: usize, s: f64, counts: &mut [u32]) {
            if depth == self.blocks.len() {
                (self.f)(s);
                return;
            }
            'opts: for (ds, dc) in &self.blocks[depth].options {
                for kk in 0..self.target.len() {
                    let v = counts[kk] + dc[kk];
                    if v + self.suf_min[depth + 1][kk] > self.target[kk]
                        || v + self.suf_max[depth + 1][kk] < self.target[kk]
                    {
                        continue 'opts;
                    }
                }
                for kk in 0..self.target.len() {
                    counts[kk] += dc[kk];
                }
                self.go(depth + 1, s + ds, counts);
                for kk in 0..self.target.len() {
                    counts[kk] -= dc[kk];
                }
            }
        }
    }
    let mut counts = vec![0u32; k];
    Walker { blocks, target, suf_min: &suf_min, suf_max: &suf_max, f }.go(0, 0.0, &mut counts);
}

/// Exact distribution of S_A, optionally conditioned on matching the given
/// per-institution A totals. Unconditional enumeration caps on |S|; the
/// conditional walk prunes to matching assignments, so it caps on |T|.
pub fn exact_distribution(
    data: &TrialData,
    scores: &ScoreVector,
    condition_on_na: Option<&[usize]>,
    cap: u64,
) -> Result<EnumerationResult> {
    let blocks = prepare_blocks(data, scores);
    let size: BigUint = blocks
        .iter()
        .map(|b| BigUint::from(b.options.len()))
        .product();
    let enumerated: BigUint = match condition_on_na {
        Some(na) => {
            let counts = tabulate_counts(data)?;
            conditional_space_size(&counts.n_jk, na)?
        }
        None => size.clone(),
    };
    if enumerated > BigUint::from(cap) {
        return Err(Error::EnumerationTooLarge { size: enumerated, cap: BigUint::from(cap) });
    }
    let target: Option<Vec<u32>> =
        condition_on_na.map(|v| v.iter().map(|&c| c as u32).collect());
    let mut hist: HashMap<i64, u64> = HashMap::new();
    let mut kept: u64 = 0;
    // merge float-identical S values at 1e-9 resolution
    let mut record = |s: f64| {
        let key = (s / 1e-9).round() as i64;
        *hist.entry(key).or_insert(0) += 1;
        kept += 1;
    };
    match &target {
        Some(t) => visit_conditional(&blocks, t, &mut record),
        None => visit_assignments(&blocks, |s, _| record(s)),
    }
    if kept == 0 {
        return Err(Error::InvalidData(
            "no assignment matches the conditioning counts".into(),
        ));
    }
    let mut distribution: Vec<(f64, f64)> = hist
        .into_iter()
        .map(|(key, c)| (key as f64 * 1e-9, c as f64 / kept as f64))
        .collect();
    distribution.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let exact_mean: f64 = distribution.iter().map(|(s, p)| s * p).sum();
    let exact_var: f64 = distribution
        .iter()
        .map(|(s, p)| (s - exact_mean) * (s - exact_mean) * p)
        .sum();
    Ok(EnumerationResult {
        total_points: size,
        conditional_points: BigUint::from(kept),
        distribution,
        exact_mean,
        exact_var,
    })
}

/// Counting-formula sizes for an observed trial: S from the {N_jk} layout,
/// T additionally conditioned on the observed per-institution A totals.
pub fn space_sizes_for(data: &TrialData) -> Result<(BigUint, BigUint)> {
    let counts = tabulate_counts(data)?;
    let s = sample_space_size(&counts.n_jk)?;
    let t = conditional_space_size(&counts.n_jk, &counts.n_ka)?;
    Ok((s, t))
}

/// Formula moments for cross-checking (re-exported path used by tests).
pub fn formula_moments(data: &TrialData, scores: &ScoreVector) -> Result<moments::JointMoments> {
    moments::joint_moments(data, scores)
}
