//! Hybrid memory: source class prototypes plus target instance embeddings,
//! both momentum-updated outside of backpropagation.
//!
//! Stored vectors are re-normalized after every momentum update so that the
//! inner products consumed by the contrastive losses stay true cosines and
//! temperature-scaled logits stay bounded. A flag disables the
//! re-normalization for ablation.

use crate::error::{PiclError, Result};
use crate::linalg::{l2_normalize, Vector};

/// Source class prototypes `{w_k}` and target instance embeddings `{v_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridMemory {
    dim: usize,
    source_prototypes: Vec<Vector>,
    target_instances: Vec<Vector>,
    pub momentum_source: f64,
    pub momentum_target: f64,
    pub renormalize: bool,
}

/// Target cluster prototypes `{c_j}` derived from the instance memory and a
/// cluster assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPrototypes {
    pub prototypes: Vec<Vector>,
    pub assignment: Vec<usize>,
}

impl ClusterPrototypes {
    pub fn n_clusters(&self) -> usize {
        self.prototypes.len()
    }
}

impl HybridMemory {
    /// Build the memory from pre-extracted embeddings: `w_k` is the
    /// normalized mean of class-`k` source embeddings, `v_i` is the `i`-th
    /// target embedding verbatim (order-preserving).
    pub fn initialize(
        source_embeddings: &[Vector],
        source_labels: &[usize],
        n_classes: usize,
        target_embeddings: Vec<Vector>,
        momentum_source: f64,
        momentum_target: f64,
        renormalize: bool,
    ) -> Result<Self> {
        if source_embeddings.len() != source_labels.len() {
            return Err(PiclError::ShapeMismatch(format!(
                "{} source embeddings vs {} labels",
                source_embeddings.len(),
                source_labels.len()
            )));
        }
        if n_classes == 0 || source_embeddings.is_empty() {
            return Err(PiclError::ContractViolation(
                "memory needs at least one source class with one embedding".into(),
            ));
        }
        for m in [momentum_source, momentum_target] {
            if !(0.0..=1.0).contains(&m) {
                return Err(PiclError::Config(format!("momentum {m} outside [0, 1]")));
            }
        }
        let dim = source_embeddings[0].dim();
        for e in source_embeddings.iter().chain(target_embeddings.iter()) {
            if e.dim() != dim {
                return Err(PiclError::ShapeMismatch(format!(
                    "embedding dim {} expected {dim}",
                    e.dim()
                )));
            }
        }

        let mut sums = vec![Vector::zeros(dim); n_classes];
        let mut counts = vec![0usize; n_classes];
        for (e, &label) in source_embeddings.iter().zip(source_labels) {
            if label >= n_classes {
                return Err(PiclError::ContractViolation(format!(
                    "source label {label} out of range ({n_classes} classes)"
                )));
            }
            for (s, x) in sums[label].0.iter_mut().zip(&e.0) {
                *s += x;
            }
            counts[label] += 1;
        }
        let mut source_prototypes = Vec::with_capacity(n_classes);
        for (k, (sum, count)) in sums.into_iter().zip(&counts).enumerate() {
            if *count == 0 {
                return Err(PiclError::ContractViolation(format!(
                    "source class {k} has no embeddings"
                )));
            }
            let mean = sum.scale(1.0 / *count as f64);
            source_prototypes.push(l2_normalize(&mean)?);
        }

        Ok(HybridMemory {
            dim,
            source_prototypes,
            target_instances: target_embeddings,
            momentum_source,
            momentum_target,
            renormalize,
        })
    }

    /// Reassemble a memory from checkpointed state.
    pub fn from_parts(
        source_prototypes: Vec<Vector>,
        target_instances: Vec<Vector>,
        momentum_source: f64,
        momentum_target: f64,
        renormalize: bool,
    ) -> Result<Self> {
        let dim = source_prototypes
            .first()
            .map(Vector::dim)
            .ok_or_else(|| PiclError::ContractViolation("no source prototypes".into()))?;
        if source_prototypes
            .iter()
            .chain(target_instances.iter())
            .any(|v| v.dim() != dim)
        {
            return Err(PiclError::ShapeMismatch("inconsistent memory dims".into()));
        }
        Ok(HybridMemory {
            dim,
            source_prototypes,
            target_instances,
            momentum_source,
            momentum_target,
            renormalize,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_source_classes(&self) -> usize {
        self.source_prototypes.len()
    }

    pub fn n_target_instances(&self) -> usize {
        self.target_instances.len()
    }

    pub fn source_prototype(&self, k: usize) -> Option<&Vector> {
        self.source_prototypes.get(k)
    }

    pub fn source_prototypes(&self) -> &[Vector] {
        &self.source_prototypes
    }

    pub fn target_instances(&self) -> &[Vector] {
        &self.target_instances
    }

    /// Momentum update of the class-`k` prototype from the class-`k`
    /// embeddings of the current batch. An empty batch set is a no-op by
    /// contract (class absent from the batch).
    pub fn update_source_prototype(&mut self, k: usize, batch: &[Vector]) -> Result<()> {
        if k >= self.source_prototypes.len() {
            return Err(PiclError::ContractViolation(format!(
                "source class {k} out of range"
            )));
        }
        if batch.is_empty() {
            return Ok(());
        }
        let mut mean = Vector::zeros(self.dim);
        for f in batch {
            if f.dim() != self.dim {
                return Err(PiclError::ShapeMismatch(format!(
                    "batch embedding dim {} expected {}",
                    f.dim(),
                    self.dim
                )));
            }
            for (m, x) in mean.0.iter_mut().zip(&f.0) {
                *m += x;
            }
        }
        let mean = mean.scale(1.0 / batch.len() as f64);
        let m = self.momentum_source;
        if m == 1.0 {
            return Ok(()); // exact no-op; prototype already unit by invariant
        }
        let mixed = mix(&self.source_prototypes[k], &mean, m);
        self.source_prototypes[k] = if self.renormalize {
            l2_normalize(&mixed)?
        } else {
            mixed
        };
        Ok(())
    }

    /// Momentum update of instance embedding `v_i` from a fresh forward
    /// pass of instance `i`.
    pub fn update_target_instance(&mut self, i: usize, f_t: &Vector) -> Result<()> {
        if i >= self.target_instances.len() {
            return Err(PiclError::ContractViolation(format!(
                "target instance {i} out of range"
            )));
        }
        if f_t.dim() != self.dim {
            return Err(PiclError::ShapeMismatch(format!(
                "embedding dim {} expected {}",
                f_t.dim(),
                self.dim
            )));
        }
        let m = self.momentum_target;
        if m == 1.0 {
            return Ok(()); // exact no-op
        }
        if m == 0.0 {
            // Exact replacement; f_t is unit by precondition.
            self.target_instances[i] = f_t.clone();
            return Ok(());
        }
        let mixed = mix(&self.target_instances[i], f_t, m);
        self.target_instances[i] = if self.renormalize {
            l2_normalize(&mixed)?
        } else {
            mixed
        };
        Ok(())
    }

    /// Cluster prototypes per the assignment: `c_j` is the normalized mean
    /// of the instance embeddings assigned to cluster `j`, recomputed from
    /// the current `{v_i}` on every call.
    pub fn compute_cluster_prototypes(&self, assignment: &[usize]) -> Result<ClusterPrototypes> {
        if assignment.len() != self.target_instances.len() {
            return Err(PiclError::ShapeMismatch(format!(
                "assignment covers {} instances, memory holds {}",
                assignment.len(),
                self.target_instances.len()
            )));
        }
        let n_clusters = assignment.iter().map(|c| c + 1).max().unwrap_or(0);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        let mut prototypes = Vec::with_capacity(n_clusters);
        for (j, idxs) in members.iter().enumerate() {
            if idxs.is_empty() {
                return Err(PiclError::ContractViolation(format!(
                    "cluster {j} is empty in the assignment"
                )));
            }
            let first = &self.target_instances[idxs[0]];
            if idxs.iter().all(|&i| self.target_instances[i] == *first) {
                // Singletons and clusters of identical vectors keep the
                // member exactly.
                prototypes.push(first.clone());
                continue;
            }
            let mut sum = Vector::zeros(self.dim);
            for &i in idxs {
                for (s, x) in sum.0.iter_mut().zip(&self.target_instances[i].0) {
                    *s += x;
                }
            }
            prototypes.push(l2_normalize(&sum.scale(1.0 / idxs.len() as f64))?);
        }
        Ok(ClusterPrototypes {
            prototypes,
            assignment: assignment.to_vec(),
        })
    }
}

fn mix(old: &Vector, new: &Vector, momentum: f64) -> Vector {
    if momentum == 1.0 {
        return old.clone();
    }
    if momentum == 0.0 {
        return new.clone();
    }
    Vector(
        old.0
            .iter()
            .zip(&new.0)
            .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
            .collect(),
    )
}
