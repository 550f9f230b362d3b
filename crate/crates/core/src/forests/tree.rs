//! Single class-weighted CART tree for the binary illicit/licit task.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;

/// Flat tree: node `i` is a leaf when `feature[i] < 0`. Children of a
/// split are `left[i]` (x ≤ threshold) and `right[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Weighted illicit fraction at each node.
    pub value: Vec<f64>,
}

/// Training rows of one tree: unique row indices with their weights (the
/// bootstrap multiplicity times the class weight).
pub(crate) struct Sample<'a> {
    pub x: &'a Matrix<f64>,
    pub y: &'a [bool],
    pub rows: Vec<usize>,
    pub weight: Vec<f64>,
}

pub(crate) struct TreeParams {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

/// `W·gini` for class masses `w0`, `w1`, i.e. `2·w0·w1 / W`.
fn weighted_gini(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    if w <= 0.0 {
        0.0
    } else {
        2.0 * w0 * w1 / w
    }
}

pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    /// `W·gini(parent) − W_L·gini(L) − W_R·gini(R)`.
    pub decrease: f64,
}

/// Best split of `members` on `feature`, with thresholds at midpoints of
/// consecutive distinct values. `None` when the feature is constant here.
pub(crate) fn best_split_on(
    s: &Sample<'_>,
    members: &[usize],
    feature: usize,
    buf: &mut Vec<(f64, usize)>,
) -> Option<BestSplit> {
    buf.clear();
    buf.extend(members.iter().map(|&k| (s.x.get(s.rows[k], feature), k)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if buf.first()?.0 == buf.last()?.0 {
        return None;
    }
    let (mut t0, mut t1) = (0.0, 0.0);
    for &(_, k) in buf.iter() {
        if s.y[s.rows[k]] {
            t1 += s.weight[k];
        } else {
            t0 += s.weight[k];
        }
    }
    let parent = weighted_gini(t0, t1);
    let (mut l0, mut l1) = (0.0, 0.0);
    let mut best: Option<BestSplit> = None;
    for i in 0..buf.len() - 1 {
        let (v, k) = buf[i];
        if s.y[s.rows[k]] {
            l1 += s.weight[k];
        } else {
            l0 += s.weight[k];
        }
        let next = buf[i + 1].0;
        if next == v {
            continue;
        }
        let dec = parent - weighted_gini(l0, l1) - weighted_gini(t0 - l0, t1 - l1);
        if best.as_ref().map_or(true, |b| dec > b.decrease) {
            let mid = v + (next - v) / 2.0;
            // Guard against rounding up onto the next value.
            let threshold = if mid >= next { v } else { mid };
            best = Some(BestSplit {
                feature,
                threshold,
                decrease: dec,
            });
        }
    }
    best
}

impl Tree {
    pub(crate) fn grow<R: Rng + ?Sized>(
        s: &Sample<'_>,
        p: &TreeParams,
        importance: &mut [f64],
        rng: &mut R,
    ) -> Tree {
        let mut t = Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
        };
        let d = s.x.cols();
        let mut order: Vec<usize> = (0..d).collect();
        let mut buf = Vec::new();
        // (node index, members, depth); node slots are reserved before pushing.
        let mut stack = vec![(
            t.push_leaf(),
            (0..s.rows.len()).collect::<Vec<usize>>(),
            0usize,
        )];
        while let Some((node, members, depth)) = stack.pop() {
            let (w0, w1) = members.iter().fold((0.0, 0.0), |(a, b), &k| {
                if s.y[s.rows[k]] {
                    (a, b + s.weight[k])
                } else {
                    (a + s.weight[k], b)
                }
            });
            t.value[node] = if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.0 };
            let pure = w0 == 0.0 || w1 == 0.0;
            if pure
                || members.len() < p.min_samples_split
                || p.max_depth.is_some_and(|m| depth >= m)
            {
                continue;
            }
            // Constant features do not count toward the candidate budget.
            order.shuffle(rng);
            let mut tried = 0;
            let mut best: Option<BestSplit> = None;
            for &f in &order {
                if tried == p.max_features {
                    break;
                }
                if let Some(b) = best_split_on(s, &members, f, &mut buf) {
                    tried += 1;
                    if best.as_ref().map_or(true, |c| b.decrease > c.decrease) {
                        best = Some(b);
                    }
                }
            }
            let Some(b) = best else { continue };
            let (l, r): (Vec<usize>, Vec<usize>) = members
                .iter()
                .partition(|&&k| s.x.get(s.rows[k], b.feature) <= b.threshold);
            importance[b.feature] += b.decrease.max(0.0);
            let li = t.push_leaf();
            let ri = t.push_leaf();
            t.feature[node] = b.feature as i32;
            t.threshold[node] = b.threshold;
            t.left[node] = li as u32;
            t.right[node] = ri as u32;
            stack.push((ri, r, depth + 1));
            stack.push((li, l, depth + 1));
        }
        t
    }

    fn push_leaf(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(0.0);
        self.feature.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            if self.feature[n] >= 0 {
                stack.push((self.left[n] as usize, d + 1));
                stack.push((self.right[n] as usize, d + 1));
            }
        }
        best
    }

    /// Index of the leaf `row` falls into.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut n = 0;
        while self.feature[n] >= 0 {
            n = if row[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_of(row)]
    }

    pub(crate) fn validate(&self, n_features: usize) -> bool {
        let n = self.feature.len();
        n > 0
            && [
                self.threshold.len(),
                self.left.len(),
                self.right.len(),
                self.value.len(),
            ]
            .iter()
            .all(|&l| l == n)
            && (0..n).all(|i| {
                self.feature[i] < 0
                    || ((self.feature[i] as usize) < n_features
                        && (self.left[i] as usize) < n
                        && (self.right[i] as usize) < n
                        && self.left[i] as usize > i
                        && self.right[i] as usize > i)
            })
            && self.value.iter().all(|v| (0.0..=1.0).contains(v))
    }
}
