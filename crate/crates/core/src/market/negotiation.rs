//! Decentralized market settlement by sub-gradient projection.
//!
//! Producers own the bilateral prices and their energy offers, consumers own
//! their energy bids; both keep multipliers for their flexibility bounds.
//! Each iteration runs a producer sweep followed by a consumer sweep, with
//! every message delivered before the next sweep starts. Partners are
//! negotiated group by group: a pair enters the round equal to the larger of
//! the two group numbers the parties assigned each other, and energy cleared
//! in earlier rounds stays committed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    AgentId, ConsumerParams, GridTariff, MarketError, PriorityPartition, ProducerParams, Trade,
};

/// Arithmetic operations charged for one pair update (producer and consumer side).
pub const OPS_PER_PAIR_UPDATE: u64 = 22;
/// Arithmetic operations charged for one agent's multiplier update.
pub const OPS_PER_DUAL_UPDATE: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZetaSchedule {
    /// `ζ^k = 1 / (1 + k / scale)`
    Harmonic { scale: f64 },
    Constant { value: f64 },
}

impl ZetaSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            ZetaSchedule::Harmonic { scale } => 1.0 / (1.0 + k as f64 / scale),
            ZetaSchedule::Constant { value } => value,
        }
    }
}

impl Default for ZetaSchedule {
    fn default() -> Self {
        ZetaSchedule::Harmonic { scale: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegotiationConfig {
    pub epsilon: f64,
    pub rho_price: f64,
    pub rho_dual: f64,
    pub zeta: ZetaSchedule,
    /// Iteration cap per priority round.
    pub max_iter: usize,
    /// Enforce the lower flexibility bounds on P2P volumes. Off by default:
    /// the grid covers any shortfall below `e_min` and only the upper bounds
    /// constrain the bilateral trades.
    pub enforce_lower_bounds: bool,
    /// Starting bilateral price; the tariff midpoint when absent.
    pub initial_price: Option<f64>,
    /// κ: pull of a producer's offer toward the consumer's last bid. Zero at
    /// any balanced point, it damps the price/energy oscillation that
    /// otherwise persists when the trade graph has cycles.
    pub consensus_weight: f64,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            rho_price: 0.01,
            rho_dual: 0.001,
            zeta: ZetaSchedule::default(),
            max_iter: 200_000,
            enforce_lower_bounds: false,
            initial_price: None,
            consensus_weight: 0.1,
        }
    }
}

impl NegotiationConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let zeta_ok = match self.zeta {
            ZetaSchedule::Harmonic { scale } => scale > 0.0,
            ZetaSchedule::Constant { value } => value > 0.0 && value <= 1.0,
        };
        if !(self.epsilon > 0.0 && self.rho_price > 0.0 && self.rho_dual > 0.0 && zeta_ok && self.max_iter > 0 && (0.0..1.0).contains(&self.consensus_weight)) {
            return Err(MarketError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Source of grid service charges γ_ij (¢/kWh) for a producer/consumer pair.
pub trait ChargeSource {
    fn service_charge(&self, producer: &ProducerParams, consumer: &ConsumerParams) -> Result<f64, MarketError>;
}

/// Same charge for every pair.
#[derive(Debug, Clone, Copy)]
pub struct UniformCharge(pub f64);

impl ChargeSource for UniformCharge {
    fn service_charge(&self, _: &ProducerParams, _: &ConsumerParams) -> Result<f64, MarketError> {
        Ok(self.0)
    }
}

/// Explicit γ per (producer, consumer); missing pairs are an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChargeMatrix(pub BTreeMap<(AgentId, AgentId), f64>);

impl ChargeSource for ChargeMatrix {
    fn service_charge(&self, p: &ProducerParams, c: &ConsumerParams) -> Result<f64, MarketError> {
        self.0
            .get(&(p.id, c.id))
            .copied()
            .ok_or(MarketError::MissingCharge { producer: p.id, consumer: c.id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub producer: AgentId,
    pub consumer: AgentId,
    /// γ_ij, ¢/kWh
    pub charge: f64,
    /// λ_ij, ¢/kWh
    pub price: f64,
    /// e_ij: what the producer offers this consumer
    pub producer_energy: f64,
    /// e_ji: what the consumer bids from this producer
    pub consumer_energy: f64,
    pub producer_setpoint: f64,
    pub consumer_setpoint: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundDuals {
    pub lower: f64,
    pub upper: f64,
}

/// Iterate of one negotiation round.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationState {
    pub pairs: Vec<PairState>,
    pub producer_duals: BTreeMap<AgentId, BoundDuals>,
    pub consumer_duals: BTreeMap<AgentId, BoundDuals>,
    /// Energy each agent committed in earlier rounds.
    pub producer_committed: BTreeMap<AgentId, f64>,
    pub consumer_committed: BTreeMap<AgentId, f64>,
    /// Agents whose lower bound is enforced in this round.
    pub lower_bound_active: BTreeMap<AgentId, bool>,
    pub iteration: usize,
    pub rho_price: f64,
    pub rho_dual: f64,
    pub zeta: ZetaSchedule,
    pub consensus_weight: f64,
    by_producer: BTreeMap<AgentId, Vec<usize>>,
    by_consumer: BTreeMap<AgentId, Vec<usize>>,
}

impl NegotiationState {
    pub fn new(pairs: Vec<PairState>, config: &NegotiationConfig) -> Self {
        let mut by_producer: BTreeMap<AgentId, Vec<usize>> = BTreeMap::new();
        let mut by_consumer: BTreeMap<AgentId, Vec<usize>> = BTreeMap::new();
        for (ix, pair) in pairs.iter().enumerate() {
            by_producer.entry(pair.producer).or_default().push(ix);
            by_consumer.entry(pair.consumer).or_default().push(ix);
        }
        Self {
            producer_duals: by_producer.keys().map(|&id| (id, BoundDuals::default())).collect(),
            consumer_duals: by_consumer.keys().map(|&id| (id, BoundDuals::default())).collect(),
            producer_committed: BTreeMap::new(),
            consumer_committed: BTreeMap::new(),
            lower_bound_active: BTreeMap::new(),
            pairs,
            iteration: 0,
            rho_price: config.rho_price,
            rho_dual: config.rho_dual,
            zeta: config.zeta,
            consensus_weight: config.consensus_weight,
            by_producer,
            by_consumer,
        }
    }

    pub fn producers(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.by_producer.keys().copied()
    }

    pub fn consumers(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.by_consumer.keys().copied()
    }

    pub fn pairs_of_producer(&self, id: AgentId) -> &[usize] {
        self.by_producer.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn pairs_of_consumer(&self, id: AgentId) -> &[usize] {
        self.by_consumer.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Total energy the producer currently commits: earlier rounds plus its
    /// offers in this round.
    pub fn producer_total(&self, id: AgentId) -> f64 {
        self.producer_committed.get(&id).copied().unwrap_or(0.0)
            + self.pairs_of_producer(id).iter().map(|&i| self.pairs[i].producer_energy).sum::<f64>()
    }

    pub fn consumer_total(&self, id: AgentId) -> f64 {
        self.consumer_committed.get(&id).copied().unwrap_or(0.0)
            + self.pairs_of_consumer(id).iter().map(|&i| self.pairs[i].consumer_energy).sum::<f64>()
    }

    fn lower_enforced(&self, id: AgentId) -> bool {
        self.lower_bound_active.get(&id).copied().unwrap_or(true)
    }

    /// One producer update. `received` holds the latest bid e_ji of every
    /// partner; `charges` the γ_ij of every partner. Returns the new prices.
    pub fn producer_step(
        &mut self,
        p: &ProducerParams,
        received: &BTreeMap<AgentId, f64>,
        charges: &BTreeMap<AgentId, f64>,
        tariff: &GridTariff,
    ) -> Result<BTreeMap<AgentId, f64>, MarketError> {
        let idx = self.pairs_of_producer(p.id).to_vec();
        check_messages(p.id, idx.iter().map(|&i| self.pairs[i].consumer), received)?;
        let total = self.producer_total(p.id);
        let lower = if self.lower_enforced(p.id) { p.e_min } else { 0.0 };
        let duals = self.producer_duals.entry(p.id).or_default();
        duals.lower = (duals.lower + self.rho_dual * (lower - total)).max(0.0);
        duals.upper = (duals.upper + self.rho_dual * (total - p.e_max)).max(0.0);
        let duals = *duals;
        let zeta = self.zeta.at(self.iteration);

        let mut prices = BTreeMap::new();
        for i in idx {
            let pair = &mut self.pairs[i];
            let bid = received[&pair.consumer];
            pair.consumer_energy = bid;
            if let Some(&gamma) = charges.get(&pair.consumer) {
                pair.charge = gamma;
            }
            let price = (pair.price - self.rho_price * (pair.producer_energy - bid)).max(0.0);
            pair.price = tariff.clamp(price);
            pair.producer_setpoint = (pair.price - pair.charge - duals.upper + duals.lower - p.b) / (2.0 * p.a);
            let pull = self.consensus_weight * zeta.sqrt() * (pair.producer_energy - bid);
            pair.producer_energy = (pair.producer_energy + zeta * (pair.producer_setpoint - total) - pull).max(0.0);
            prices.insert(pair.consumer, pair.price);
        }
        Ok(prices)
    }

    /// One consumer update from the latest prices λ_ij of every partner.
    /// Returns the new bids.
    pub fn consumer_step(
        &mut self,
        c: &ConsumerParams,
        received: &BTreeMap<AgentId, f64>,
        charges: &BTreeMap<AgentId, f64>,
    ) -> Result<BTreeMap<AgentId, f64>, MarketError> {
        let idx = self.pairs_of_consumer(c.id).to_vec();
        check_messages(c.id, idx.iter().map(|&i| self.pairs[i].producer), received)?;
        let total = self.consumer_total(c.id);
        let lower = if self.lower_enforced(c.id) { c.e_min } else { 0.0 };
        let duals = self.consumer_duals.entry(c.id).or_default();
        duals.lower = (duals.lower + self.rho_dual * (lower - total)).max(0.0);
        duals.upper = (duals.upper + self.rho_dual * (total - c.e_max)).max(0.0);
        let duals = *duals;
        let zeta = self.zeta.at(self.iteration);

        let mut bids = BTreeMap::new();
        for i in idx {
            let pair = &mut self.pairs[i];
            pair.price = received[&pair.producer];
            if let Some(&gamma) = charges.get(&pair.producer) {
                pair.charge = gamma;
            }
            pair.consumer_setpoint = (c.b - pair.price - pair.charge - duals.upper + duals.lower) / (2.0 * c.a);
            pair.consumer_energy = (pair.consumer_energy + zeta * (pair.consumer_setpoint - total)).max(0.0);
            bids.insert(pair.producer, pair.consumer_energy);
        }
        Ok(bids)
    }
}

fn check_messages(
    agent: AgentId,
    partners: impl Iterator<Item = AgentId>,
    received: &BTreeMap<AgentId, f64>,
) -> Result<(), MarketError> {
    let mut expected = 0;
    for partner in partners {
        if !received.contains_key(&partner) {
            return Err(MarketError::MissingMessage { agent, partner });
        }
        expected += 1;
    }
    if received.len() != expected {
        // some key names an agent that is not an active partner
        return Err(MarketError::UnknownPartner { agent });
    }
    Ok(())
}

/// Both sides' priority groups. A pair absent from either side's partition
/// never negotiates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketPartitions {
    pub producers: BTreeMap<AgentId, PriorityPartition>,
    pub consumers: BTreeMap<AgentId, PriorityPartition>,
}

impl MarketPartitions {
    /// Everyone negotiates with everyone in a single round.
    pub fn single_group(producers: &[ProducerParams], consumers: &[ConsumerParams]) -> Self {
        let full = |ids: Vec<AgentId>| PriorityPartition {
            indices: ids.iter().map(|&id| (id, 1.0)).collect(),
            groups: vec![ids],
            normalizer: 0.0,
        };
        let cids: Vec<_> = consumers.iter().map(|c| c.id).collect();
        let pids: Vec<_> = producers.iter().map(|p| p.id).collect();
        Self {
            producers: producers.iter().map(|p| (p.id, full(cids.clone()))).collect(),
            consumers: consumers.iter().map(|c| (c.id, full(pids.clone()))).collect(),
        }
    }

    /// Round in which the pair negotiates, if both sides list each other.
    pub fn round_of(&self, producer: AgentId, consumer: AgentId) -> Option<usize> {
        let a = self.producers.get(&producer)?.group_of(consumer)?;
        let b = self.consumers.get(&consumer)?.group_of(producer)?;
        Some(a.max(b))
    }

    pub fn rounds(&self) -> usize {
        self.producers
            .values()
            .chain(self.consumers.values())
            .map(PriorityPartition::group_count)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearedTrade {
    pub producer: AgentId,
    pub consumer: AgentId,
    /// Agreed energy: mean of the two sides' final quantities, kWh.
    pub energy: f64,
    pub producer_energy: f64,
    pub consumer_energy: f64,
    /// ¢/kWh
    pub price: f64,
    /// γ_ij, ¢/kWh
    pub charge: f64,
    pub round: usize,
}

impl ClearedTrade {
    pub fn as_trade(&self) -> Trade {
        Trade {
            producer: self.producer,
            consumer: self.consumer,
            energy: self.energy,
            price: self.price,
            charge: self.charge,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub pairs: usize,
    pub producers: usize,
    pub consumers: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub trades: Vec<ClearedTrade>,
    /// e_i^G, export to the grid per producer
    pub producer_grid: BTreeMap<AgentId, f64>,
    /// e_j^G, import from the grid per consumer
    pub consumer_grid: BTreeMap<AgentId, f64>,
    pub iterations: usize,
    pub rounds: Vec<RoundStats>,
    /// Bilateral price/energy exchanges over all iterations.
    pub exchanges: u64,
    /// Service-charge request/response messages.
    pub charge_queries: u64,
    pub work_units: u64,
    pub converged: bool,
}

impl Settlement {
    pub fn cleared_count(&self) -> usize {
        self.trades.len()
    }

    pub fn trades_of_producer(&self, id: AgentId) -> Vec<Trade> {
        self.trades.iter().filter(|t| t.producer == id).map(ClearedTrade::as_trade).collect()
    }

    pub fn trades_of_consumer(&self, id: AgentId) -> Vec<Trade> {
        self.trades.iter().filter(|t| t.consumer == id).map(ClearedTrade::as_trade).collect()
    }

    pub fn sold(&self, id: AgentId) -> f64 {
        self.trades.iter().filter(|t| t.producer == id).map(|t| t.energy).sum()
    }

    pub fn bought(&self, id: AgentId) -> f64 {
        self.trades.iter().filter(|t| t.consumer == id).map(|t| t.energy).sum()
    }

    /// Mean bilateral exchanges per iteration.
    pub fn messages_per_iteration(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.exchanges as f64 / self.iterations as f64
        }
    }

    /// Σ_i W_i + Σ_j W_j.
    pub fn social_welfare(
        &self,
        producers: &[ProducerParams],
        consumers: &[ConsumerParams],
        tariff: &GridTariff,
    ) -> Result<f64, MarketError> {
        let mut total = 0.0;
        for p in producers {
            let export = self.producer_grid.get(&p.id).copied().unwrap_or(0.0);
            total += super::producer_welfare(p, &self.trades_of_producer(p.id), export, tariff)?;
        }
        for c in consumers {
            let import = self.consumer_grid.get(&c.id).copied().unwrap_or(0.0);
            total += super::consumer_welfare(c, &self.trades_of_consumer(c.id), import, tariff)?;
        }
        Ok(total)
    }

    /// Fill in grid residuals: each agent tops up to the position it would
    /// hold trading with the grid alone.
    pub(crate) fn settle_residuals(
        &mut self,
        producers: &[ProducerParams],
        consumers: &[ConsumerParams],
        tariff: &GridTariff,
    ) {
        self.producer_grid = producers
            .iter()
            .map(|p| (p.id, (p.grid_only_position(tariff) - self.sold(p.id)).max(0.0)))
            .collect();
        self.consumer_grid = consumers
            .iter()
            .map(|c| (c.id, (c.grid_only_position(tariff) - self.bought(c.id)).max(0.0)))
            .collect();
    }
}

#[derive(Debug, Default)]
struct Residuals {
    max_price_step: f64,
    max_energy_step: f64,
    max_mismatch: f64,
    max_bound_violation: f64,
}

/// Run the group-wise negotiation to convergence.
pub fn negotiate(
    producers: &[ProducerParams],
    consumers: &[ConsumerParams],
    partitions: &MarketPartitions,
    charges: &dyn ChargeSource,
    tariff: &GridTariff,
    config: &NegotiationConfig,
) -> Result<Settlement, MarketError> {
    config.validate()?;
    for p in producers {
        p.validate()?;
    }
    for c in consumers {
        c.validate()?;
    }
    let eps = config.epsilon;
    let start_price = tariff.clamp(config.initial_price.unwrap_or_else(|| tariff.midpoint()));
    let pmap: BTreeMap<_, _> = producers.iter().map(|p| (p.id, p)).collect();
    let cmap: BTreeMap<_, _> = consumers.iter().map(|c| (c.id, c)).collect();

    let mut by_round: BTreeMap<usize, Vec<(AgentId, AgentId)>> = BTreeMap::new();
    for p in producers {
        for c in consumers {
            if let Some(r) = partitions.round_of(p.id, c.id) {
                by_round.entry(r).or_default().push((p.id, c.id));
            }
        }
    }
    // Lower bounds bind in the last round an agent takes part in.
    let mut last_round: BTreeMap<AgentId, usize> = BTreeMap::new();
    for (&r, pairs) in &by_round {
        for &(p, c) in pairs {
            last_round.insert(p, r);
            last_round.insert(c, r);
        }
    }

    let mut settlement = Settlement {
        converged: true,
        ..Settlement::default()
    };
    let mut producer_committed: BTreeMap<AgentId, f64> = BTreeMap::new();
    let mut consumer_committed: BTreeMap<AgentId, f64> = BTreeMap::new();
    let mut producer_duals: BTreeMap<AgentId, BoundDuals> = BTreeMap::new();
    let mut consumer_duals: BTreeMap<AgentId, BoundDuals> = BTreeMap::new();

    for (&round, candidates) in &by_round {
        // Only agents with capacity or demand left move on to this round.
        let pairs: Vec<PairState> = candidates
            .iter()
            .filter(|(p, c)| {
                pmap[p].e_max - producer_committed.get(p).copied().unwrap_or(0.0) > eps
                    && cmap[c].e_max - consumer_committed.get(c).copied().unwrap_or(0.0) > eps
            })
            .map(|&(p, c)| {
                Ok(PairState {
                    producer: p,
                    consumer: c,
                    charge: charges.service_charge(pmap[&p], cmap[&c])?,
                    price: start_price,
                    producer_energy: 0.0,
                    consumer_energy: 0.0,
                    producer_setpoint: 0.0,
                    consumer_setpoint: 0.0,
                })
            })
            .collect::<Result<_, MarketError>>()?;
        if pairs.is_empty() {
            continue;
        }
        settlement.charge_queries += 2 * pairs.len() as u64;

        let mut state = NegotiationState::new(pairs, config);
        state.producer_committed = producer_committed.clone();
        state.consumer_committed = consumer_committed.clone();
        for id in state.producers().collect::<Vec<_>>() {
            let enforce = config.enforce_lower_bounds && last_round[&id] == round;
            state.lower_bound_active.insert(id, enforce);
            if let Some(d) = producer_duals.get(&id) {
                state.producer_duals.insert(id, *d);
            }
        }
        for id in state.consumers().collect::<Vec<_>>() {
            let enforce = config.enforce_lower_bounds && last_round[&id] == round;
            state.lower_bound_active.insert(id, enforce);
            if let Some(d) = consumer_duals.get(&id) {
                state.consumer_duals.insert(id, *d);
            }
        }
        let charge_of: BTreeMap<(AgentId, AgentId), f64> =
            state.pairs.iter().map(|s| ((s.producer, s.consumer), s.charge)).collect();
        let producer_ids: Vec<AgentId> = state.producers().collect();
        let consumer_ids: Vec<AgentId> = state.consumers().collect();
        let n_pairs = state.pairs.len() as u64;
        let n_agents = (producer_ids.len() + consumer_ids.len()) as u64;

        let mut stats = RoundStats {
            round,
            pairs: state.pairs.len(),
            producers: producer_ids.len(),
            consumers: consumer_ids.len(),
            ..RoundStats::default()
        };
        for _ in 0..config.max_iter {
            let before = state.pairs.clone();
            for &pid in &producer_ids {
                let idx = state.pairs_of_producer(pid);
                let received = idx.iter().map(|&i| (state.pairs[i].consumer, state.pairs[i].consumer_energy)).collect();
                let gammas = idx.iter().map(|&i| (state.pairs[i].consumer, charge_of[&(pid, state.pairs[i].consumer)])).collect();
                state.producer_step(pmap[&pid], &received, &gammas, tariff)?;
            }
            for &cid in &consumer_ids {
                let idx = state.pairs_of_consumer(cid);
                let received = idx.iter().map(|&i| (state.pairs[i].producer, state.pairs[i].price)).collect();
                let gammas = idx.iter().map(|&i| (state.pairs[i].producer, charge_of[&(state.pairs[i].producer, cid)])).collect();
                state.consumer_step(cmap[&cid], &received, &gammas)?;
            }
            state.iteration += 1;
            stats.iterations += 1;
            settlement.exchanges += n_pairs;
            settlement.work_units += n_pairs * OPS_PER_PAIR_UPDATE + n_agents * OPS_PER_DUAL_UPDATE;

            let r = measure(&before, &state, &pmap, &cmap);
            if r.max_price_step < eps && r.max_energy_step < eps && r.max_mismatch < eps && r.max_bound_violation < eps {
                stats.converged = true;
                break;
            }
        }
        settlement.iterations += stats.iterations;
        settlement.converged &= stats.converged;

        for pair in &state.pairs {
            let energy = 0.5 * (pair.producer_energy + pair.consumer_energy);
            if energy > eps {
                *producer_committed.entry(pair.producer).or_default() += energy;
                *consumer_committed.entry(pair.consumer).or_default() += energy;
                settlement.trades.push(ClearedTrade {
                    producer: pair.producer,
                    consumer: pair.consumer,
                    energy,
                    producer_energy: pair.producer_energy,
                    consumer_energy: pair.consumer_energy,
                    price: pair.price,
                    charge: pair.charge,
                    round,
                });
            }
        }
        producer_duals.extend(state.producer_duals.iter().map(|(&k, &v)| (k, v)));
        consumer_duals.extend(state.consumer_duals.iter().map(|(&k, &v)| (k, v)));
        settlement.rounds.push(stats);
    }

    settlement.settle_residuals(producers, consumers, tariff);
    if settlement.converged {
        Ok(settlement)
    } else {
        Err(MarketError::NotConverged(Box::new(settlement)))
    }
}

fn measure(
    before: &[PairState],
    state: &NegotiationState,
    pmap: &BTreeMap<AgentId, &ProducerParams>,
    cmap: &BTreeMap<AgentId, &ConsumerParams>,
) -> Residuals {
    let mut r = Residuals::default();
    for (old, new) in before.iter().zip(&state.pairs) {
        r.max_price_step = r.max_price_step.max((new.price - old.price).abs());
        r.max_energy_step = r
            .max_energy_step
            .max((new.producer_energy - old.producer_energy).abs())
            .max((new.consumer_energy - old.consumer_energy).abs());
        r.max_mismatch = r.max_mismatch.max((new.producer_energy - new.consumer_energy).abs());
    }
    let violation = |total: f64, lo: f64, hi: f64| (lo - total).max(total - hi).max(0.0);
    for id in state.producers() {
        let p = pmap[&id];
        let lo = if state.lower_enforced(id) { p.e_min } else { 0.0 };
        r.max_bound_violation = r.max_bound_violation.max(violation(state.producer_total(id), lo, p.e_max));
    }
    for id in state.consumers() {
        let c = cmap[&id];
        let lo = if state.lower_enforced(id) { c.e_min } else { 0.0 };
        r.max_bound_violation = r.max_bound_violation.max(violation(state.consumer_total(id), lo, c.e_max));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::agents::fixtures::{consumer, producer};
    use crate::market::{consumer_welfare, partition_partners, producer_welfare};

    fn one_pair(price: f64, offer: f64, bid: f64, config: &NegotiationConfig) -> NegotiationState {
        NegotiationState::new(
            vec![PairState {
                producer: AgentId(1),
                consumer: AgentId(2),
                charge: 0.0,
                price,
                producer_energy: offer,
                consumer_energy: bid,
                producer_setpoint: 0.0,
                consumer_setpoint: 0.0,
            }],
            config,
        )
    }

    fn msg(id: u32, v: f64) -> BTreeMap<AgentId, f64> {
        BTreeMap::from([(AgentId(id), v)])
    }

    #[test]
    fn price_moves_against_excess_offer() {
        let mut st = one_pair(10.0, 5.0, 3.0, &NegotiationConfig::default());
        let prices = st
            .producer_step(&producer(1, 1.0, 5.0, 0.0), &msg(2, 3.0), &msg(2, 0.0), &GridTariff::default())
            .unwrap();
        assert!((prices[&AgentId(2)] - 9.98).abs() < 1e-12);
    }

    #[test]
    fn balanced_pair_keeps_its_price() {
        let mut st = one_pair(10.0, 4.0, 4.0, &NegotiationConfig::default());
        let prices = st
            .producer_step(&producer(1, 1.0, 5.0, 0.0), &msg(2, 4.0), &msg(2, 0.0), &GridTariff::default())
            .unwrap();
        assert_eq!(prices[&AgentId(2)], 10.0);
    }

    #[test]
    fn lower_dual_is_floored_at_zero() {
        let mut st = one_pair(10.0, 4.0, 4.0, &NegotiationConfig::default());
        st.producer_step(&producer(1, 1.0, 5.0, 0.0), &msg(2, 4.0), &msg(2, 0.0), &GridTariff::default())
            .unwrap();
        assert_eq!(st.producer_duals[&AgentId(1)].lower, 0.0);
    }

    #[test]
    fn consumer_setpoint_and_full_step() {
        let config = NegotiationConfig {
            zeta: ZetaSchedule::Constant { value: 1.0 },
            ..NegotiationConfig::default()
        };
        let mut st = one_pair(10.0, 0.0, 0.0, &config);
        let bids = st.consumer_step(&consumer(2, 1.0, 20.0), &msg(1, 10.0), &msg(1, 0.0)).unwrap();
        assert_eq!(st.pairs[0].consumer_setpoint, 5.0);
        assert_eq!(bids[&AgentId(1)], 5.0);
    }

    #[test]
    fn unprofitable_price_drives_bid_towards_zero() {
        let mut st = one_pair(20.0, 0.0, 3.0, &NegotiationConfig::default());
        st.consumer_step(&consumer(2, 1.0, 20.0), &msg(1, 20.0), &msg(1, 0.0)).unwrap();
        assert!(st.pairs[0].consumer_setpoint <= 0.0);
        assert!(st.pairs[0].consumer_energy < 3.0);
    }

    #[test]
    fn messages_must_match_partners() {
        let mut st = one_pair(10.0, 0.0, 0.0, &NegotiationConfig::default());
        let p = producer(1, 1.0, 5.0, 0.0);
        let t = GridTariff::default();
        let err = st.producer_step(&p, &BTreeMap::new(), &BTreeMap::new(), &t).unwrap_err();
        assert_eq!(err, MarketError::MissingMessage { agent: AgentId(1), partner: AgentId(2) });
        let mut two = msg(2, 1.0);
        two.insert(AgentId(9), 1.0);
        assert_eq!(st.producer_step(&p, &two, &BTreeMap::new(), &t), Err(MarketError::UnknownPartner { agent: AgentId(1) }));
        let c = consumer(2, 1.0, 20.0);
        assert!(matches!(st.consumer_step(&c, &msg(7, 1.0), &BTreeMap::new()), Err(MarketError::MissingMessage { .. })));
    }

    #[test]
    fn empty_market_buys_everything_from_the_grid() {
        let cs = [consumer(2, 1.0, 20.0), consumer(3, 2.0, 12.0)];
        let t = GridTariff::default();
        let s = negotiate(&[], &cs, &MarketPartitions::default(), &UniformCharge(0.0), &t, &NegotiationConfig::default())
            .unwrap();
        assert!(s.trades.is_empty());
        for c in &cs {
            assert_eq!(s.consumer_grid[&c.id], c.grid_only_position(&t));
        }
        let w = s.social_welfare(&[], &cs, &t).unwrap();
        let grid_only: f64 = cs
            .iter()
            .map(|c| consumer_welfare(c, &[], c.grid_only_position(&t), &t).unwrap())
            .sum();
        assert_eq!(w, grid_only);
    }

    #[test]
    fn scalar_market_reaches_closed_form() {
        let (p, c) = (producer(1, 1.0, 5.0, 0.0), consumer(2, 1.0, 20.0));
        let parts = MarketPartitions::single_group(std::slice::from_ref(&p), std::slice::from_ref(&c));
        let s = negotiate(&[p], &[c], &parts, &UniformCharge(0.0), &GridTariff::default(), &NegotiationConfig::default())
            .unwrap();
        assert_eq!(s.trades.len(), 1);
        let t = s.trades[0];
        assert!((t.energy - 3.75).abs() < 1e-2);
        assert!((t.producer_energy - t.consumer_energy).abs() < 1e-3);
        assert!((5.0..=25.0).contains(&t.price));
        assert_eq!(s.messages_per_iteration(), 1.0);
    }

    #[test]
    fn iteration_cap_returns_flagged_partial_settlement() {
        let (p, c) = (producer(1, 1.0, 5.0, 0.0), consumer(2, 1.0, 20.0));
        let parts = MarketPartitions::single_group(std::slice::from_ref(&p), std::slice::from_ref(&c));
        let config = NegotiationConfig { max_iter: 5, ..NegotiationConfig::default() };
        match negotiate(&[p], &[c], &parts, &UniformCharge(0.0), &GridTariff::default(), &config) {
            Err(MarketError::NotConverged(s)) => {
                assert!(!s.converged);
                assert_eq!(s.iterations, 5);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = NegotiationConfig { epsilon: 0.0, ..NegotiationConfig::default() };
        let r = negotiate(&[], &[], &MarketPartitions::default(), &UniformCharge(0.0), &GridTariff::default(), &config);
        assert!(matches!(r, Err(MarketError::InvalidConfig(_))));
    }

    #[test]
    fn second_group_negotiates_with_residual_capacity() {
        // producer 1 ranks consumer 3 in its second group
        let p = ProducerParams { e_max: 6.0, ..producer(1, 1.0, 5.0, 0.0) };
        let cs = [consumer(2, 1.0, 20.0), consumer(3, 1.0, 20.0)];
        let mut parts = MarketPartitions::single_group(std::slice::from_ref(&p), &cs);
        parts.producers.insert(
            p.id,
            partition_for(&[(2, 0.9), (3, 0.2)]),
        );
        let s = negotiate(std::slice::from_ref(&p), &cs, &parts, &UniformCharge(0.0), &GridTariff::default(), &NegotiationConfig::default())
            .unwrap();
        assert_eq!(s.rounds.len(), 2);
        let first = s.trades.iter().find(|t| t.consumer == AgentId(2)).unwrap();
        let second = s.trades.iter().find(|t| t.consumer == AgentId(3)).unwrap();
        assert_eq!((first.round, second.round), (1, 2));
        assert!(s.sold(p.id) <= p.e_max + 1e-3);
        assert!(second.energy > 0.0);
    }

    fn partition_for(indices: &[(u32, f64)]) -> PriorityPartition {
        let map = indices.iter().map(|&(i, x)| (AgentId(i), x)).collect();
        partition_partners(&map, 2).unwrap()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_producer(id: u32)(a in 0.51f64..=1.0, b in 5.0f64..=10.0, lo in 0.0f64..=5.0, hi in 5.0f64..=10.0) -> ProducerParams {
                ProducerParams { e_min: lo, e_max: hi, ..producer(id, a, b, 0.0) }
            }
        }

        prop_compose! {
            fn arb_consumer(id: u32)(a in 0.51f64..=10.0, b in 10.0f64..=20.0, lo in 1.0f64..=4.0, hi in 6.0f64..=10.0) -> ConsumerParams {
                ConsumerParams { e_min: lo, e_max: hi, ..consumer(id, a, b) }
            }
        }

        proptest! {
            #[test]
            fn steps_preserve_projection_bounds(
                p in arb_producer(1),
                c in arb_consumer(2),
                price in 0.0f64..40.0,
                offer in 0.0f64..10.0,
                bid in 0.0f64..10.0,
                gamma in 0.0f64..8.0,
                k in 0usize..10_000,
                lower in 0.0f64..2.0,
                upper in 0.0f64..2.0,
            ) {
                let t = GridTariff::default();
                let mut st = one_pair(price, offer, bid, &NegotiationConfig::default());
                st.iteration = k;
                st.producer_duals.insert(p.id, BoundDuals { lower, upper });
                st.consumer_duals.insert(c.id, BoundDuals { lower: upper, upper: lower });
                let prices = st.producer_step(&p, &msg(2, bid), &msg(2, gamma), &t).unwrap();
                let bids = st.consumer_step(&c, &prices.iter().map(|(_, &v)| (AgentId(1), v)).collect(), &msg(1, gamma)).unwrap();
                let pair = st.pairs[0];
                prop_assert!((t.feed_in..=t.retail).contains(&pair.price));
                prop_assert!(pair.producer_energy >= 0.0 && pair.consumer_energy >= 0.0);
                prop_assert!(bids[&AgentId(1)] >= 0.0);
                for d in st.producer_duals.values().chain(st.consumer_duals.values()) {
                    prop_assert!(d.lower >= 0.0 && d.upper >= 0.0);
                }
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn converged_settlement_is_balanced_bounded_and_dominant(
                ps in (1usize..=3).prop_flat_map(|n| (0..n as u32).map(arb_producer).collect::<Vec<_>>()),
                cs in (1usize..=3).prop_flat_map(|n| (0..n as u32).map(|j| arb_consumer(100 + j)).collect::<Vec<_>>()),
                gamma in 0.0f64..3.0,
            ) {
                let t = GridTariff::default();
                let parts = MarketPartitions::single_group(&ps, &cs);
                let config = NegotiationConfig::default();
                let s = negotiate(&ps, &cs, &parts, &UniformCharge(gamma), &t, &config).unwrap();
                let eps = config.epsilon;
                for tr in &s.trades {
                    prop_assert!((tr.producer_energy - tr.consumer_energy).abs() < eps);
                    prop_assert!((t.feed_in..=t.retail).contains(&tr.price));
                }
                for p in &ps {
                    let total = s.sold(p.id) + s.producer_grid[&p.id];
                    prop_assert!(total >= p.e_min - eps && total <= p.e_max + eps);
                    let with = producer_welfare(p, &s.trades_of_producer(p.id), s.producer_grid[&p.id], &t).unwrap();
                    let without = producer_welfare(p, &[], p.grid_only_position(&t), &t).unwrap();
                    prop_assert!(with >= without - 1e-2, "producer {} {} < {}", p.id, with, without);
                }
                for c in &cs {
                    let total = s.bought(c.id) + s.consumer_grid[&c.id];
                    prop_assert!(total >= c.e_min - eps && total <= c.e_max + eps);
                    let with = consumer_welfare(c, &s.trades_of_consumer(c.id), s.consumer_grid[&c.id], &t).unwrap();
                    let without = consumer_welfare(c, &[], c.grid_only_position(&t), &t).unwrap();
                    prop_assert!(with >= without - 1e-2, "consumer {} {} < {}", c.id, with, without);
                }
            }
        }
    }
}
