//! Partner prioritization: a priority index blending partner reputation and
//! proximity, and the split of candidates into `N` priority groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentId, MarketError, PreferenceWeights};

// Slack used when comparing an index against a group boundary, so that
// values such as 0.5 computed as 0.3 + 0.2 still land on the boundary.
const BOUNDARY_SLACK: f64 = 1e-12;

/// A candidate partner as seen from one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: AgentId,
    pub reputation: f64,
    /// electrical distance to the candidate, km
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityPartition {
    pub indices: BTreeMap<AgentId, f64>,
    /// `groups[0]` is the highest-priority group; members sorted by
    /// descending index.
    pub groups: Vec<Vec<AgentId>>,
    /// Largest candidate distance, km.
    pub normalizer: f64,
}

impl PriorityPartition {
    /// 1-based group number of a partner, if it is a candidate at all.
    pub fn group_of(&self, partner: AgentId) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.contains(&partner))
            .map(|i| i + 1)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn candidates(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.groups.iter().flatten().copied()
    }
}

/// `α·η_partner + β·(1 − d/D)`. When every candidate is co-located
/// (`D = 0`) the proximity term is 1.
pub fn priority_index(
    weights: PreferenceWeights,
    partner_reputation: f64,
    distance: f64,
    normalizer: f64,
) -> Result<f64, MarketError> {
    if !(0.0..=1.0).contains(&partner_reputation) {
        return Err(MarketError::IndexOutOfRange(partner_reputation));
    }
    if !(distance >= 0.0 && normalizer >= 0.0) {
        return Err(MarketError::InvalidDistance { distance, normalizer });
    }
    if normalizer == 0.0 && distance > 0.0 {
        return Err(MarketError::ZeroNormalizer);
    }
    if distance > normalizer * (1.0 + 1e-12) {
        return Err(MarketError::InvalidDistance { distance, normalizer });
    }
    let proximity = if normalizer == 0.0 { 1.0 } else { 1.0 - distance / normalizer };
    Ok((weights.alpha * partner_reputation + weights.beta * proximity).clamp(0.0, 1.0))
}

/// Group `n` (1-based) holds indices in `[(N−n)/N, (N−n+1)/N]`; a value on a
/// shared boundary goes to the higher-priority group.
pub fn partition_partners(
    indices: &BTreeMap<AgentId, f64>,
    groups: usize,
) -> Result<PriorityPartition, MarketError> {
    if groups == 0 {
        return Err(MarketError::InvalidGroupCount);
    }
    if indices.is_empty() {
        return Err(MarketError::EmptyCandidateSet);
    }
    let mut out = vec![Vec::new(); groups];
    for (&id, &ix) in indices {
        if !(0.0..=1.0).contains(&ix) {
            return Err(MarketError::IndexOutOfRange(ix));
        }
        out[group_for(ix, groups) - 1].push(id);
    }
    for g in &mut out {
        g.sort_by(|a, b| indices[b].total_cmp(&indices[a]).then(a.cmp(b)));
    }
    Ok(PriorityPartition {
        indices: indices.clone(),
        groups: out,
        normalizer: 0.0,
    })
}

fn group_for(index: f64, groups: usize) -> usize {
    let n = groups as f64;
    let band = (index * n + BOUNDARY_SLACK).floor() as usize;
    groups.saturating_sub(band).max(1)
}

/// Indices for every candidate, normalized by the farthest one, then split
/// into `groups` groups.
pub fn prioritize(
    weights: PreferenceWeights,
    candidates: &[Candidate],
    groups: usize,
) -> Result<PriorityPartition, MarketError> {
    let normalizer = candidates.iter().map(|c| c.distance).fold(0.0, f64::max);
    let indices = candidates
        .iter()
        .map(|c| Ok((c.id, priority_index(weights, c.reputation, c.distance, normalizer)?)))
        .collect::<Result<BTreeMap<_, _>, MarketError>>()?;
    let mut partition = partition_partners(&indices, groups)?;
    partition.normalizer = normalizer;
    Ok(partition)
}
