//! Verification scoring and detection metrics: cosine trial scores, EER,
//! and normalized minimum detection cost.
//!
//! Conventions fixed here and exercised against brute-force oracles in the
//! test suites: `FRR(θ) = P(target < θ)`, `FAR(θ) = P(nontarget ≥ θ)`
//! (accept at threshold); EER sweeps thresholds at score midpoints and
//! linearly interpolates the FRR/FAR crossing; minDCF scans every distinct
//! score plus ±∞ and is normalized by the best trivial system's cost.

use crate::data::{Trial, Utterance};
use crate::encoder::EncoderModel;
use crate::error::{PiclError, Result};
use crate::linalg::{cosine, Vector};

/// Scored trials.
#[derive(Debug, Clone, Default)]
pub struct TrialSet {
    trials: Vec<(f64, bool)>,
}

impl TrialSet {
    pub fn new() -> Self {
        TrialSet { trials: Vec::new() }
    }

    pub fn push(&mut self, score: f64, is_target: bool) {
        self.trials.push((score, is_target));
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Self {
        TrialSet {
            trials: pairs.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|(_, t)| *t).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.trials.len() - self.n_target()
    }

    pub fn scores(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.trials.iter().copied()
    }

    fn split_sorted(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for &(s, t) in &self.trials {
            if !s.is_finite() {
                return Err(PiclError::DegenerateInput(format!(
                    "non-finite trial score {s}"
                )));
            }
            if t {
                targets.push(s);
            } else {
                nontargets.push(s);
            }
        }
        if targets.is_empty() || nontargets.is_empty() {
            return Err(PiclError::DegenerateInput(format!(
                "metrics need at least one target and one nontarget trial ({} / {})",
                targets.len(),
                nontargets.len()
            )));
        }
        targets.sort_unstable_by(f64::total_cmp);
        nontargets.sort_unstable_by(f64::total_cmp);
        Ok((targets, nontargets))
    }
}

/// Costs for the detection cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub c_fr: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            c_fr: 10.0,
            c_fa: 1.0,
            p_target: 0.01,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_fr > 0.0) || !(self.c_fa > 0.0) {
            return Err(PiclError::Config("DCF costs must be positive".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(PiclError::Config("DCF p_target must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One scored trial with its utterance references, for score export.
#[derive(Debug, Clone, Copy)]
pub struct ScoredTrial {
    pub enroll: usize,
    pub test: usize,
    pub score: f64,
    pub is_target: bool,
}

/// Score every trial as the cosine between the two utterances' embeddings.
/// Embeddings are extracted once per referenced utterance.
pub fn score_trials_detailed(
    model: &EncoderModel,
    utterances: &[Utterance],
    trials: &[Trial],
) -> Result<(TrialSet, Vec<ScoredTrial>)> {
    let mut cache: Vec<Option<Vector>> = vec![None; utterances.len()];
    let embed = |i: usize, cache: &mut Vec<Option<Vector>>| -> Result<Vector> {
        if i >= utterances.len() {
            return Err(PiclError::ContractViolation(format!(
                "trial references utterance {i}, only {} exist",
                utterances.len()
            )));
        }
        if cache[i].is_none() {
            cache[i] = Some(model.embed(&utterances[i].features)?);
        }
        Ok(cache[i].clone().expect("just inserted"))
    };
    let mut set = TrialSet::new();
    let mut rows = Vec::with_capacity(trials.len());
    for t in trials {
        let e = embed(t.enroll, &mut cache)?;
        let s = embed(t.test, &mut cache)?;
        let score = cosine(&e, &s)?;
        set.push(score, t.is_target);
        rows.push(ScoredTrial {
            enroll: t.enroll,
            test: t.test,
            score,
            is_target: t.is_target,
        });
    }
    Ok((set, rows))
}

/// Scores only; see [`score_trials_detailed`] for exportable rows.
pub fn score_trials(
    model: &EncoderModel,
    utterances: &[Utterance],
    trials: &[Trial],
) -> Result<TrialSet> {
    Ok(score_trials_detailed(model, utterances, trials)?.0)
}

fn frr_at(targets: &[f64], theta: f64) -> f64 {
    // P(target score < θ)
    let below = targets.partition_point(|s| *s < theta);
    below as f64 / targets.len() as f64
}

fn far_at(nontargets: &[f64], theta: f64) -> f64 {
    // P(nontarget score ≥ θ)
    let below = nontargets.partition_point(|s| *s < theta);
    (nontargets.len() - below) as f64 / nontargets.len() as f64
}

fn distinct_sorted(targets: &[f64], nontargets: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    all.sort_unstable_by(f64::total_cmp);
    all.dedup();
    all
}

/// Equal error rate and the threshold where the interpolated FRR and FAR
/// curves cross. Reported as a fraction in [0, 1].
pub fn eer(trials: &TrialSet) -> Result<(f64, f64)> {
    let (targets, nontargets) = trials.split_sorted()?;
    let distinct = distinct_sorted(&targets, &nontargets);

    // Sweep thresholds: below every score, at midpoints of adjacent
    // distinct scores, above every score.
    let mut sweep = Vec::with_capacity(distinct.len() + 1);
    sweep.push(distinct[0] - 1.0);
    for w in distinct.windows(2) {
        sweep.push(0.5 * (w[0] + w[1]));
    }
    sweep.push(distinct[distinct.len() - 1] + 1.0);

    let mut prev: Option<(f64, f64, f64)> = None; // (θ, FRR, FAR)
    for &theta in &sweep {
        let frr = frr_at(&targets, theta);
        let far = far_at(&nontargets, theta);
        if frr >= far {
            if frr == far {
                return Ok((frr, theta));
            }
            let (theta0, frr0, far0) = prev.expect("first sweep point has FRR 0 ≤ FAR");
            // Linear interpolation of the crossing between adjacent sweep
            // points: frr0 − far0 < 0 ≤ frr − far.
            let denom = (frr - frr0) + (far0 - far);
            let alpha = (far0 - frr0) / denom;
            let eer = frr0 + alpha * (frr - frr0);
            return Ok((eer, theta0 + alpha * (theta - theta0)));
        }
        prev = Some((theta, frr, far));
    }
    unreachable!("FRR reaches 1 and FAR reaches 0 at the top of the sweep")
}

/// Minimum of the normalized detection cost over all candidate thresholds
/// (every distinct score plus ±∞). Returns the minimum and its threshold.
pub fn min_dcf(trials: &TrialSet, params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    let (targets, nontargets) = trials.split_sorted()?;
    let norm = (params.c_fr * params.p_target).min(params.c_fa * (1.0 - params.p_target));

    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    candidates.extend(distinct_sorted(&targets, &nontargets));

    let mut best = f64::INFINITY;
    let mut best_theta = f64::NEG_INFINITY;
    for &theta in &candidates {
        let frr = if theta == f64::NEG_INFINITY {
            0.0
        } else if theta == f64::INFINITY {
            1.0
        } else {
            frr_at(&targets, theta)
        };
        let far = if theta == f64::NEG_INFINITY {
            1.0
        } else if theta == f64::INFINITY {
            0.0
        } else {
            far_at(&nontargets, theta)
        };
        let dcf = (params.c_fr * params.p_target * frr
            + params.c_fa * (1.0 - params.p_target) * far)
            / norm;
        if dcf < best {
            best = dcf;
            best_theta = theta;
        }
    }
    Ok((best, best_theta))
}
