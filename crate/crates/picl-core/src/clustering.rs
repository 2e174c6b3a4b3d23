//! DBSCAN over target instance embeddings, producing pseudo labels.
//!
//! The metric is cosine distance `1 − ⟨a, b⟩` on unit vectors, consistent
//! with the embedding geometry used everywhere else. Noise points are
//! promoted to single-instance clusters so every instance carries a pseudo
//! label.
//!
//! Determinism contract: neighbors are enumerated in input index order and
//! clusters are seeded in scan order, so the full labeling (including
//! border-point ties) is a pure function of the input sequence.

use std::collections::VecDeque;

use crate::error::{PiclError, Result};
use crate::linalg::Vector;
use crate::memory::{ClusterPrototypes, HybridMemory};

/// DBSCAN parameters. `min_pts` counts the point itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Cosine-distance neighborhood radius, in (0, 2].
    pub eps: f64,
    /// Minimum neighborhood size (self included) for a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 2.0) {
            return Err(PiclError::Config(format!(
                "cluster eps {} outside (0, 2]",
                self.eps
            )));
        }
        if self.min_pts < 1 {
            return Err(PiclError::Config("cluster min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw per-point label: `Some(cluster)` or `None` for noise.
pub type RawLabels = Vec<Option<usize>>;

/// Pseudo labels after outlier promotion: a contiguous cluster index per
/// instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub n_outliers_promoted: usize,
}

/// DBSCAN on an index set with an arbitrary distance function.
///
/// Core points have at least `min_pts` points (self included) within
/// `eps`; clusters are the density-reachable components grown from core
/// points in scan order; border points join the first cluster that reaches
/// them; everything else is noise.
pub fn dbscan_by<D>(n: usize, distance: D, params: &DbscanParams) -> Result<RawLabels>
where
    D: Fn(usize, usize) -> f64,
{
    params.validate()?;
    if n == 0 {
        return Err(PiclError::DegenerateInput("dbscan over zero points".into()));
    }

    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut ns = Vec::new();
        for j in 0..n {
            if i == j || distance(i, j) <= params.eps {
                ns.push(j);
            }
        }
        neighbors.push(ns);
    }
    let core: Vec<bool> = neighbors.iter().map(|ns| ns.len() >= params.min_pts).collect();

    let mut labels: RawLabels = vec![None; n];
    let mut next_cluster = 0usize;
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[seed] = Some(cluster);
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    Ok(labels)
}

/// DBSCAN on unit embeddings under cosine distance.
pub fn dbscan(points: &[Vector], params: &DbscanParams) -> Result<RawLabels> {
    if points.is_empty() {
        return Err(PiclError::DegenerateInput("dbscan over zero points".into()));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(PiclError::ShapeMismatch("dbscan points differ in dim".into()));
    }
    dbscan_by(
        points.len(),
        |i, j| cosine_distance(&points[i], &points[j]),
        params,
    )
}

/// `1 − ⟨a, b⟩` for unit vectors, clamped to [0, 2].
pub fn cosine_distance(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

/// Give each noise point a fresh singleton cluster and compact all cluster
/// indices to a contiguous range (first-appearance order).
pub fn promote_outliers(raw: &RawLabels) -> PseudoLabels {
    let mut remap: Vec<Option<usize>> = Vec::new();
    let mut labels = Vec::with_capacity(raw.len());
    let mut next = 0usize;
    // First pass: compact real clusters in order of first appearance.
    for label in raw {
        if let Some(c) = label {
            if remap.len() <= *c {
                remap.resize(*c + 1, None);
            }
            if remap[*c].is_none() {
                remap[*c] = Some(next);
                next += 1;
            }
        }
    }
    // Second pass: emit labels, promoting noise to fresh singletons.
    let mut promoted = 0usize;
    for label in raw {
        match label {
            Some(c) => labels.push(remap[*c].expect("mapped in first pass")),
            None => {
                labels.push(next);
                next += 1;
                promoted += 1;
            }
        }
    }
    PseudoLabels {
        labels,
        n_clusters: next,
        n_outliers_promoted: promoted,
    }
}

/// Cluster the memory's target instances and compute cluster prototypes.
pub fn cluster_target(
    memory: &HybridMemory,
    params: &DbscanParams,
) -> Result<(PseudoLabels, ClusterPrototypes)> {
    let raw = dbscan(memory.target_instances(), params)?;
    let pseudo = promote_outliers(&raw);
    let prototypes = memory.compute_cluster_prototypes(&pseudo.labels)?;
    Ok((pseudo, prototypes))
}

/// Cluster externally supplied embeddings (e.g. freshly re-extracted ones)
/// but still derive prototypes from the memory's `{v_i}`.
pub fn cluster_target_with_points(
    memory: &HybridMemory,
    points: &[Vector],
    params: &DbscanParams,
) -> Result<(PseudoLabels, ClusterPrototypes)> {
    if points.len() != memory.n_target_instances() {
        return Err(PiclError::ShapeMismatch(format!(
            "{} points vs {} memory instances",
            points.len(),
            memory.n_target_instances()
        )));
    }
    let raw = dbscan(points, params)?;
    let pseudo = promote_outliers(&raw);
    let prototypes = memory.compute_cluster_prototypes(&pseudo.labels)?;
    Ok((pseudo, prototypes))
}
