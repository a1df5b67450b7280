//! Isolation forest over 3-D points, used to drop outliers before fitting
//! an object's centroid and extent.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::geometry::Vec3;

/// Euler–Mascheroni constant as used by the harmonic-number approximation.
pub const EULER_GAMMA: f64 = 0.5772156649;
/// Points scoring above this are treated as outliers.
pub const OUTLIER_SCORE: f64 = 0.6;
/// `filter_outliers` never returns fewer points than this.
pub const MIN_INLIERS: usize = 4;
/// `build_forest` refuses smaller clouds.
pub const MIN_FOREST_POINTS: usize = 10;
/// Extra attempts at drawing a split dimension with non-zero range.
const SPLIT_DIM_RETRIES: usize = 3;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

/// `H(i) ≈ ln(i) + γ`.
pub fn harmonic(i: f64) -> f64 {
    i.ln() + EULER_GAMMA
}

/// Average unsuccessful-search path length `c(n) = 2H(n-1) - 2(n-1)/n`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        dim: u8,
        split: f64,
        left: u32,
        right: u32,
    },
    External {
        size: u32,
    },
}

/// One isolation tree stored as an arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    pub nodes: Vec<Node>,
}

impl ITree {
    fn build(points: &mut [Vec3], height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = ITree { nodes: Vec::new() };
        tree.grow(points, 0, height_limit, rng);
        tree
    }

    fn grow(
        &mut self,
        points: &mut [Vec3],
        depth: usize,
        height_limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        if depth >= height_limit || points.len() <= 1 {
            self.nodes.push(Node::External {
                size: points.len() as u32,
            });
            return id;
        }
        let mut chosen = None;
        for _ in 0..=SPLIT_DIM_RETRIES {
            let dim = rng.random_range(0..3usize);
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[dim]), hi.max(p[dim]))
            });
            if hi > lo {
                chosen = Some((dim, lo, hi));
                break;
            }
        }
        let Some((dim, lo, hi)) = chosen else {
            self.nodes.push(Node::External {
                size: points.len() as u32,
            });
            return id;
        };
        let split = rng.random_range(lo..hi);
        // Placeholder until both children exist.
        self.nodes.push(Node::External { size: 0 });
        let mid = partition(points, |p| p[dim] < split);
        let (left_pts, right_pts) = points.split_at_mut(mid);
        let left = self.grow(left_pts, depth + 1, height_limit, rng);
        let right = self.grow(right_pts, depth + 1, height_limit, rng);
        self.nodes[id as usize] = Node::Internal {
            dim: dim as u8,
            split,
            left,
            right,
        };
        id
    }

    /// Depth at which `x` lands plus `c(size)` for the unresolved leaf.
    pub fn path_length(&self, x: &Vec3) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Internal {
                    dim,
                    split,
                    left,
                    right,
                } => {
                    node = if x[dim as usize] < split { left } else { right } as usize;
                    depth += 1.0;
                }
                Node::External { size } => return depth + average_path_length(size as usize),
            }
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Internal { left, right, .. } => {
                    1 + rec(nodes, left as usize).max(rec(nodes, right as usize))
                }
                Node::External { .. } => 0,
            }
        }
        rec(&self.nodes, 0)
    }
}

/// In-place stable-enough partition; returns the count of elements satisfying `pred`.
fn partition(points: &mut [Vec3], pred: impl Fn(&Vec3) -> bool) -> usize {
    let mut i = 0;
    for j in 0..points.len() {
        if pred(&points[j]) {
            points.swap(i, j);
            i += 1;
        }
    }
    i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<ITree>,
    /// Subsample size `ψ` per tree.
    pub subsample: usize,
    /// Height cap `ceil(log2 ψ)`.
    pub height_limit: usize,
}

/// Builds `n_trees` isolation trees, each on a uniform subsample of size `psi`.
pub fn build_forest(
    points: &[Vec3],
    n_trees: usize,
    psi: usize,
    seed: u64,
) -> Result<IsolationForest, ParamError> {
    if points.len() < MIN_FOREST_POINTS {
        return Err(ParamError::TooFewPoints {
            needed: MIN_FOREST_POINTS,
            got: points.len(),
        });
    }
    let psi = psi.clamp(1, points.len());
    let height_limit = (psi as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = Vec::with_capacity(psi);
    let trees = (0..n_trees)
        .map(|_| {
            scratch.clear();
            let mut idx = sample(&mut rng, points.len(), psi).into_vec();
            idx.sort_unstable();
            scratch.extend(idx.iter().map(|&i| points[i]));
            ITree::build(&mut scratch, height_limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample: psi,
        height_limit,
    })
}

impl IsolationForest {
    /// Mean path length `E(h(x))` over all trees.
    pub fn mean_path_length(&self, x: &Vec3) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Normalizer `C = c(ψ)`.
    pub fn normalizer(&self) -> f64 {
        average_path_length(self.subsample)
    }

    pub fn anomaly_score(&self, x: &Vec3) -> f64 {
        score_from_path_length(self.mean_path_length(x), self.normalizer())
    }
}

/// `2^(-E(h) / C)`; a degenerate normalizer yields the neutral score 0.5.
pub fn score_from_path_length(mean_path: f64, normalizer: f64) -> f64 {
    if normalizer <= 0.0 {
        return 0.5;
    }
    (-mean_path / normalizer).exp2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub inliers: Vec<Vec3>,
    /// Indices of the inliers in the input, ascending.
    pub indices: Vec<usize>,
    /// Score of every input point.
    pub scores: Vec<f64>,
}

/// Keeps points scoring at most [`OUTLIER_SCORE`], but never fewer than
/// [`MIN_INLIERS`] (the lowest-scoring ones are kept instead).
pub fn filter_outliers(points: &[Vec3], forest: &IsolationForest) -> FilterResult {
    let scores: Vec<f64> = points.iter().map(|p| forest.anomaly_score(p)).collect();
    let mut indices: Vec<usize> = (0..points.len())
        .filter(|&i| scores[i] <= OUTLIER_SCORE)
        .collect();
    if indices.len() < MIN_INLIERS {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        indices = order.into_iter().take(MIN_INLIERS).collect();
        indices.sort_unstable();
    }
    FilterResult {
        inliers: indices.iter().map(|&i| points[i]).collect(),
        indices,
        scores,
    }
}
