//! Independent brute-force oracles for the acceptance suite. Everything
//! here recomputes results from first principles (all-pairs matrices,
//! exhaustive threshold enumeration, union-find closures) without touching
//! the implementation paths it checks.

use picl_core::clustering::{cosine_distance, DbscanParams, PseudoLabels, RawLabels};
use picl_core::eval::DcfParams;
use picl_core::linalg::Vector;

// -- union-find ------------------------------------------------------------

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Check an implementation labeling against the density-based ground
/// truth: identical core sets, identical partition of core points into
/// density-connected components (up to label renaming), valid border
/// assignments, and noise points with no core neighbor.
pub fn check_dbscan_against_brute_force(
    points: &[Vector],
    params: &DbscanParams,
    labels: &RawLabels,
) {
    let n = points.len();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = cosine_distance(&points[i], &points[j]);
        }
    }
    let neighbor = |i: usize, j: usize| i == j || dist[i][j] <= params.eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| neighbor(i, j)).count() >= params.min_pts)
        .collect();

    // Components: transitive closure over core-core edges.
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && neighbor(i, j) {
                uf.union(i, j);
            }
        }
    }

    for i in 0..n {
        match labels[i] {
            Some(_) if core[i] => {}
            Some(cluster) => {
                // Border point: must have a core neighbor carrying the same
                // implementation label.
                let ok = (0..n).any(|j| {
                    j != i && core[j] && neighbor(i, j) && labels[j] == Some(cluster)
                });
                assert!(ok, "border point {i} labeled {cluster} with no matching core neighbor");
            }
            None => {
                assert!(!core[i], "core point {i} marked noise");
                let has_core_neighbor = (0..n).any(|j| j != i && core[j] && neighbor(i, j));
                assert!(
                    !has_core_neighbor,
                    "noise point {i} is density-reachable from a core point"
                );
            }
        }
    }

    // Core partition equivalence up to renaming.
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] {
                let same_oracle = uf.find(i) == uf.find(j);
                let same_impl = labels[i] == labels[j];
                assert_eq!(
                    same_oracle, same_impl,
                    "core points {i},{j}: oracle connected={same_oracle}, labels {:?} vs {:?}",
                    labels[i], labels[j]
                );
            }
        }
    }
}

/// Promotion must keep every non-noise co-membership relation, give every
/// noise point a fresh singleton, and emit a contiguous label range.
pub fn check_promotion(raw: &RawLabels, pseudo: &PseudoLabels) {
    let n = raw.len();
    assert_eq!(pseudo.labels.len(), n);
    let mut used = vec![false; pseudo.n_clusters];
    for &l in &pseudo.labels {
        assert!(l < pseudo.n_clusters, "label {l} out of range");
        used[l] = true;
    }
    assert!(used.iter().all(|u| *u), "cluster indices not contiguous");
    assert_eq!(
        pseudo.n_outliers_promoted,
        raw.iter().filter(|l| l.is_none()).count()
    );
    for i in 0..n {
        for j in (i + 1)..n {
            match (&raw[i], &raw[j]) {
                (Some(a), Some(b)) => assert_eq!(
                    a == b,
                    pseudo.labels[i] == pseudo.labels[j],
                    "co-membership broken for {i},{j}"
                ),
                _ => assert_ne!(
                    pseudo.labels[i], pseudo.labels[j],
                    "noise point shares a label ({i},{j})"
                ),
            }
        }
    }
}

// -- detection metrics ------------------------------------------------------

fn frr_far_at(trials: &[(f64, bool)], theta: f64) -> (f64, f64) {
    let (mut n_t, mut n_nt, mut fr, mut fa) = (0usize, 0usize, 0usize, 0usize);
    for &(s, is_target) in trials {
        if is_target {
            n_t += 1;
            if s < theta {
                fr += 1;
            }
        } else {
            n_nt += 1;
            if s >= theta {
                fa += 1;
            }
        }
    }
    (fr as f64 / n_t as f64, fa as f64 / n_nt as f64)
}

fn distinct_scores(trials: &[(f64, bool)]) -> Vec<f64> {
    let mut scores: Vec<f64> = trials.iter().map(|&(s, _)| s).collect();
    scores.sort_unstable_by(f64::total_cmp);
    scores.dedup();
    scores
}

/// EER by evaluating FRR/FAR at every distinct score ± eps and linearly
/// interpolating the crossing.
pub fn eer_brute_force(trials: &[(f64, bool)]) -> f64 {
    let scores = distinct_scores(trials);
    let min_gap = scores
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let eps = min_gap / 4.0;
    let mut sweep = Vec::with_capacity(2 * scores.len());
    for &s in &scores {
        sweep.push(s - eps);
        sweep.push(s + eps);
    }
    let mut prev: Option<(f64, f64)> = None;
    for &theta in &sweep {
        let (frr, far) = frr_far_at(trials, theta);
        if frr >= far {
            if frr == far {
                return frr;
            }
            let (frr0, far0) = prev.expect("sweep starts below all scores with FRR 0, FAR 1");
            let denom = (frr - frr0) + (far0 - far);
            let alpha = (far0 - frr0) / denom;
            return frr0 + alpha * (frr - frr0);
        }
        prev = Some((frr, far));
    }
    unreachable!("crossing exists: FRR ends at 1, FAR at 0")
}

/// Normalized minDCF by exhaustive enumeration of every distinct score
/// plus the two trivial thresholds.
pub fn min_dcf_brute_force(trials: &[(f64, bool)], params: &DcfParams) -> f64 {
    let norm = (params.c_fr * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    let mut best = f64::INFINITY;
    let mut candidates = distinct_scores(trials);
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    for theta in candidates {
        let (frr, far) = if theta == f64::NEG_INFINITY {
            (0.0, 1.0)
        } else if theta == f64::INFINITY {
            (1.0, 0.0)
        } else {
            frr_far_at(trials, theta)
        };
        let dcf =
            (params.c_fr * params.p_target * frr + params.c_fa * (1.0 - params.p_target) * far)
                / norm;
        best = best.min(dcf);
    }
    best
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
