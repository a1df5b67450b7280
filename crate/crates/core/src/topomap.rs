//! Topological object maps, random-walk descriptors and map-to-map matching.
//!
//! Every object becomes a node; each node is linked to its nearest neighbors
//! within a distance limit. A descriptor for a node is a set of random walks
//! starting from it, each step recording the visited object's label and
//! volume together with its distance and bearing as seen from the origin.
//! Matching two maps pairs nodes by descriptor similarity, estimates the
//! relative scale, and fits a gravity-aligned similarity transform (yaw,
//! translation, scale) with RANSAC over the pairs.
//!
//! Bearings are measured in the horizontal plane relative to the origin
//! object's yaw axis and folded modulo π, which makes them invariant to a
//! rotation of the whole map about the vertical axis.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopoError;
use crate::geometry::{angle_between_lines, rot_z, Vec3};
use crate::parameterization::ObjectModel;

/// An object as seen by the topological map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoNode {
    pub id: u64,
    pub label: String,
    pub t: Vec3,
    pub yaw: f64,
    pub s: Vec3,
    /// Whether `yaw` is meaningful (cubes) or a placeholder (quadrics).
    pub oriented: bool,
}

impl TopoNode {
    pub fn from_model(id: u64, label: impl Into<String>, model: &ObjectModel) -> Self {
        Self {
            id,
            label: label.into(),
            t: model.center(),
            yaw: model.yaw(),
            s: model.half_extents(),
            oriented: matches!(model, ObjectModel::Cube(_)),
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.s.x * self.s.y * self.s.z
    }

    /// Bearing of `other` in this node's horizontal frame, folded to `[0, π)`.
    pub fn bearing_to(&self, other: &Vec3) -> f64 {
        if !self.oriented {
            return 0.0;
        }
        let d = other - self.t;
        (d.y.atan2(d.x) - self.yaw).rem_euclid(PI)
    }
}

/// Undirected proximity edge; `a < b` by node index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopoEdge {
    pub a: usize,
    pub b: usize,
    pub d: f64,
    /// Bearing of `b` as seen from `a`.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoGraph {
    pub nodes: Vec<TopoNode>,
    pub edges: Vec<TopoEdge>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl TopoGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Neighbor indices of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        self.adjacency = adj;
    }

    /// Restores the adjacency lists after deserialization.
    pub fn reindex(mut self) -> Self {
        self.rebuild_adjacency();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoConfig {
    pub k_nn: usize,
    pub d_max: f64,
    /// Maximum number of steps per walk.
    pub depth: usize,
    /// Walks per descriptor.
    pub walks: usize,
    pub sigma_d: f64,
    pub sigma_alpha: f64,
    pub sigma_s: f64,
    /// Inlier radius as a fraction of the estimated scale.
    pub inlier_factor: f64,
    /// Random triples drawn when exhaustive enumeration would be larger.
    pub ransac_samples: usize,
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self {
            k_nn: 4,
            d_max: 5.0,
            depth: 4,
            walks: 20,
            sigma_d: 0.3,
            sigma_alpha: 0.3,
            sigma_s: 0.7,
            inlier_factor: 0.2,
            ransac_samples: 2000,
        }
    }
}

impl TopoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_nn == 0 || self.depth == 0 || self.walks == 0 {
            return Err("k_nn, depth and walks must be positive".into());
        }
        for (name, v) in [
            ("d_max", self.d_max),
            ("sigma_d", self.sigma_d),
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_s", self.sigma_s),
            ("inlier_factor", self.inlier_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Links each node to its `k_nn` nearest neighbors closer than `d_max`.
/// Coincident centroids are never linked.
pub fn build_topo_map(nodes: Vec<TopoNode>, k_nn: usize, d_max: f64) -> TopoGraph {
    let n = nodes.len();
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut near: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((nodes[j].t - nodes[i].t).norm(), j))
            .filter(|&(d, _)| d > 0.0 && d <= d_max)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in near.iter().take(k_nn) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| TopoEdge {
            a,
            b,
            d: (nodes[b].t - nodes[a].t).norm(),
            alpha: nodes[a].bearing_to(&nodes[b].t),
        })
        .collect();
    let mut g = TopoGraph {
        nodes,
        edges,
        adjacency: Vec::new(),
    };
    g.rebuild_adjacency();
    g
}

/// One step of a walk, measured from the walk's origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkEntry {
    pub label: String,
    pub volume: f64,
    pub d: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    /// Node index of the origin.
    pub origin: usize,
    pub label: String,
    pub volume: f64,
    /// Whether the bearing entries are meaningful.
    pub oriented: bool,
    pub rows: Vec<Vec<WalkEntry>>,
}

/// `walks` self-avoiding random walks of at most `depth` steps from `origin`.
///
/// Each origin draws from its own ChaCha stream, so descriptors for
/// different origins are independent of evaluation order.
pub fn random_walk_descriptor(
    graph: &TopoGraph,
    origin: usize,
    depth: usize,
    walks: usize,
    seed: u64,
) -> Descriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(origin as u64);
    let o = &graph.nodes[origin];
    let mut rows = Vec::with_capacity(walks);
    let mut visited = vec![false; graph.len()];
    let mut open = Vec::new();
    for _ in 0..walks {
        visited.iter_mut().for_each(|v| *v = false);
        visited[origin] = true;
        let mut current = origin;
        let mut row = Vec::with_capacity(depth);
        while row.len() < depth {
            open.clear();
            open.extend(graph.neighbors(current).iter().copied().filter(|&j| !visited[j]));
            let Some(&next) = open.choose(&mut rng) else {
                break;
            };
            visited[next] = true;
            let node = &graph.nodes[next];
            row.push(WalkEntry {
                label: node.label.clone(),
                volume: node.volume(),
                d: (node.t - o.t).norm(),
                alpha: o.bearing_to(&node.t),
            });
            current = next;
        }
        rows.push(row);
    }
    Descriptor {
        origin,
        label: o.label.clone(),
        volume: o.volume(),
        oriented: o.oriented,
        rows,
    }
}

/// Which agreement factors enter the similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityTerms {
    pub distance: bool,
    pub size: bool,
}

impl SimilarityTerms {
    pub const ALL: Self = Self {
        distance: true,
        size: true,
    };
    /// Label and bearing only; independent of the unknown scale.
    pub const SCALE_FREE: Self = Self {
        distance: false,
        size: false,
    };
}

fn entry_agreement(
    a: &WalkEntry,
    b: &WalkEntry,
    rho: f64,
    use_angle: bool,
    terms: SimilarityTerms,
    cfg: &TopoConfig,
) -> f64 {
    if a.label != b.label {
        return 0.0;
    }
    let mut log_score = 0.0;
    if terms.distance {
        log_score -= (rho * a.d - b.d).abs() / cfg.sigma_d;
    }
    if use_angle {
        log_score -= angle_between_lines(a.alpha, b.alpha) / cfg.sigma_alpha;
    }
    if terms.size {
        log_score -= (b.volume / (rho.powi(3) * a.volume)).ln().abs() / cfg.sigma_s;
    }
    log_score.exp()
}

fn row_agreement(
    a: &[WalkEntry],
    b: &[WalkEntry],
    rho: f64,
    use_angle: bool,
    terms: SimilarityTerms,
    cfg: &TopoConfig,
) -> f64 {
    let len = a.len().max(b.len());
    if len == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(ea, eb)| entry_agreement(ea, eb, rho, use_angle, terms, cfg))
        .sum();
    sum / len as f64
}

/// Similarity of two descriptors under the hypothesis that map `b` is map
/// `a` scaled by `rho`.
///
/// Each row of `a` is paired with its best-agreeing row of `b` and the
/// per-row agreements are averaged, so the score lies in `[0, 1]` and equals
/// 1 for a descriptor compared with itself (unless every walk is empty).
/// The pairing is one-sided; swapping the arguments (with `1/rho`) gives the
/// same value when both descriptors hold the same rows.
pub fn descriptor_similarity(
    a: &Descriptor,
    b: &Descriptor,
    rho: f64,
    terms: SimilarityTerms,
    cfg: &TopoConfig,
) -> f64 {
    if a.rows.is_empty() || b.rows.is_empty() {
        return 0.0;
    }
    let use_angle = a.oriented && b.oriented;
    let total: f64 = a
        .rows
        .iter()
        .map(|ra| {
            b.rows
                .iter()
                .map(|rb| row_agreement(ra, rb, rho, use_angle, terms, cfg))
                .fold(0.0, f64::max)
        })
        .sum();
    total / a.rows.len() as f64
}

/// `p -> scale · Rz(yaw) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity4 {
    pub scale: f64,
    pub yaw: f64,
    pub translation: Vec3,
}

impl Similarity4 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            yaw: 0.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (rot_z(self.yaw) * p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        Self {
            scale: inv_scale,
            yaw: -self.yaw,
            translation: -inv_scale * (rot_z(-self.yaw) * self.translation),
        }
    }
}

/// Least-squares similarity with rotation restricted to the vertical axis.
///
/// The rotation is the closed-form solution of the 2×2 orthogonal
/// Procrustes problem on the centered horizontal coordinates; the scale
/// uses all three coordinates. `None` when the source points coincide or
/// have no horizontal spread.
pub fn fit_similarity_4dof(src: &[Vec3], dst: &[Vec3]) -> Option<Similarity4> {
    if src.len() != dst.len() || src.len() < 2 {
        return None;
    }
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let (mut dot, mut cross, mut var_xy, mut var) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        let (a, b) = (a - ms, b - md);
        dot += a.x * b.x + a.y * b.y;
        cross += a.x * b.y - a.y * b.x;
        var_xy += a.x * a.x + a.y * a.y;
        var += a.norm_squared();
    }
    if var_xy <= 1e-18 {
        return None;
    }
    let yaw = cross.atan2(dot);
    let r = rot_z(yaw);
    let num: f64 = src
        .iter()
        .zip(dst)
        .map(|(a, b)| (b - md).dot(&(r * (a - ms))))
        .sum();
    let scale = num / var;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    Some(Similarity4 {
        scale,
        yaw,
        translation: md - scale * (r * ms),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Node indices in the source and target graphs.
    pub a: usize,
    pub b: usize,
    pub id_a: u64,
    pub id_b: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    /// Target-over-source scale: the transform's when one was found,
    /// otherwise the edge-ratio estimate.
    pub rho: f64,
    /// Maps source coordinates into the target map.
    pub transform: Option<Similarity4>,
    /// Indices into `pairs`.
    pub inliers: Vec<usize>,
    /// RMS distance of the inliers under `transform`, meters.
    pub residual: f64,
    pub inlier_radius: f64,
}

impl MatchResult {
    pub fn is_valid(&self) -> bool {
        self.transform.is_some() && self.inliers.len() >= 3
    }
}

fn greedy_assign(mut scored: Vec<(f64, usize, usize)>) -> Vec<(f64, usize, usize)> {
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = BTreeSet::new();
    let mut used_b = BTreeSet::new();
    scored
        .into_iter()
        .filter(|&(s, a, b)| s > 0.0 && used_a.insert(a) && used_b.insert(b))
        .collect()
}

fn score_candidates(
    da: &[Descriptor],
    db: &[Descriptor],
    rho: f64,
    terms: SimilarityTerms,
    cfg: &TopoConfig,
) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::new();
    for a in da {
        for b in db.iter().filter(|b| b.label == a.label) {
            out.push((descriptor_similarity(a, b, rho, terms, cfg), a.origin, b.origin));
        }
    }
    out
}

/// Median-anchored mean of the centroid-distance ratios over all pairs of
/// matches; ratios more than 25% away from the median are ignored.
fn estimate_scale(g1: &TopoGraph, g2: &TopoGraph, matches: &[(f64, usize, usize)]) -> Option<f64> {
    let mut ratios = Vec::new();
    for (i, &(_, a1, b1)) in matches.iter().enumerate() {
        for &(_, a2, b2) in &matches[i + 1..] {
            let da = (g1.nodes[a1].t - g1.nodes[a2].t).norm();
            let db = (g2.nodes[b1].t - g2.nodes[b2].t).norm();
            if da > 1e-9 && db > 1e-9 {
                ratios.push(db / da);
            }
        }
    }
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    let kept: Vec<f64> = ratios
        .into_iter()
        .filter(|r| (r / median - 1.0).abs() <= 0.25)
        .collect();
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn inliers_of(t: &Similarity4, src: &[Vec3], dst: &[Vec3], radius: f64) -> Vec<usize> {
    (0..src.len())
        .filter(|&i| (t.apply(&src[i]) - dst[i]).norm() < radius)
        .collect()
}

fn rms_residual(t: &Similarity4, src: &[Vec3], dst: &[Vec3], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let ss: f64 = idx
        .iter()
        .map(|&i| (t.apply(&src[i]) - dst[i]).norm_squared())
        .sum();
    (ss / idx.len() as f64).sqrt()
}

fn triples(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<[usize; 3]> {
    let total = n * (n - 1) * (n - 2) / 6;
    if total <= max {
        let mut out = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    out.push([i, j, k]);
                }
            }
        }
        out
    } else {
        (0..max)
            .map(|_| {
                let v = rand::seq::index::sample(rng, n, 3);
                [v.index(0), v.index(1), v.index(2)]
            })
            .collect()
    }
}

/// Pairs the nodes of `g1` with those of `g2` and estimates the transform
/// taking `g1` coordinates into `g2`.
pub fn match_maps(
    g1: &TopoGraph,
    g2: &TopoGraph,
    cfg: &TopoConfig,
    seed: u64,
) -> Result<MatchResult, TopoError> {
    if g1.is_empty() || g2.is_empty() {
        return Err(TopoError::EmptyMap);
    }
    let da: Vec<Descriptor> = (0..g1.len())
        .map(|o| random_walk_descriptor(g1, o, cfg.depth, cfg.walks, seed))
        .collect();
    let db: Vec<Descriptor> = (0..g2.len())
        .map(|o| random_walk_descriptor(g2, o, cfg.depth, cfg.walks, seed))
        .collect();

    let initial = greedy_assign(score_candidates(&da, &db, 1.0, SimilarityTerms::SCALE_FREE, cfg));
    let rho_est = estimate_scale(g1, g2, &initial).unwrap_or(1.0);
    let assigned = greedy_assign(score_candidates(&da, &db, rho_est, SimilarityTerms::ALL, cfg));

    let pairs: Vec<MatchPair> = assigned
        .iter()
        .map(|&(score, a, b)| MatchPair {
            a,
            b,
            id_a: g1.nodes[a].id,
            id_b: g2.nodes[b].id,
            score,
        })
        .collect();
    let src: Vec<Vec3> = pairs.iter().map(|p| g1.nodes[p.a].t).collect();
    let dst: Vec<Vec3> = pairs.iter().map(|p| g2.nodes[p.b].t).collect();
    let radius = cfg.inlier_factor * rho_est;

    let mut result = MatchResult {
        pairs,
        rho: rho_est,
        transform: None,
        inliers: Vec::new(),
        residual: 0.0,
        inlier_radius: radius,
    };
    if src.len() < 3 {
        return Ok(result);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for tri in triples(src.len(), cfg.ransac_samples, &mut rng) {
        let s: Vec<Vec3> = tri.iter().map(|&i| src[i]).collect();
        let d: Vec<Vec3> = tri.iter().map(|&i| dst[i]).collect();
        let Some(t) = fit_similarity_4dof(&s, &d) else {
            continue;
        };
        let inl = inliers_of(&t, &src, &dst, radius);
        let res = rms_residual(&t, &src, &dst, &inl);
        let better = match &best {
            None => true,
            Some((n, r, _)) => inl.len() > *n || (inl.len() == *n && res < *r),
        };
        if better {
            best = Some((inl.len(), res, inl));
        }
    }
    let Some((_, _, mut inliers)) = best else {
        return Ok(result);
    };

    // Refit on the consensus set until it stops changing.
    let mut transform = None;
    for _ in 0..10 {
        if inliers.len() < 3 {
            break;
        }
        let s: Vec<Vec3> = inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<Vec3> = inliers.iter().map(|&i| dst[i]).collect();
        let Some(t) = fit_similarity_4dof(&s, &d) else {
            break;
        };
        transform = Some(t);
        let next = inliers_of(&t, &src, &dst, radius);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    if let Some(t) = transform {
        let inliers = inliers_of(&t, &src, &dst, radius);
        if inliers.len() >= 3 {
            result.residual = rms_residual(&t, &src, &dst, &inliers);
            result.rho = t.scale;
            result.transform = Some(t);
            result.inliers = inliers;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relocalization {
    /// Maps query-map coordinates into the prior map.
    pub transform: Similarity4,
    pub matching: MatchResult,
}

/// Registers a freshly built query map against a prior map.
pub fn relocalize(
    prior: &TopoGraph,
    query: Vec<TopoNode>,
    cfg: &TopoConfig,
    seed: u64,
) -> Result<Relocalization, TopoError> {
    if query.is_empty() {
        return Err(TopoError::EmptyMap);
    }
    let q = build_topo_map(query, cfg.k_nn, cfg.d_max);
    let matching = match_maps(&q, prior, cfg, seed)?;
    match matching.transform {
        Some(transform) if matching.is_valid() => Ok(Relocalization {
            transform,
            matching,
        }),
        _ => Err(TopoError::MatchFailed(format!(
            "{} candidate pairs, {} consistent",
            matching.pairs.len(),
            matching.inliers.len()
        ))),
    }
}

/// Applies a similarity to every node (positions, yaws and extents).
pub fn transform_nodes(nodes: &[TopoNode], t: &Similarity4) -> Vec<TopoNode> {
    nodes
        .iter()
        .map(|n| TopoNode {
            t: t.apply(&n.t),
            yaw: if n.oriented {
                crate::geometry::normalize_yaw(n.yaw + t.yaw)
            } else {
                n.yaw
            },
            s: n.s * t.scale,
            ..n.clone()
        })
        .collect()
}
