//! Deterministic tick-driven market intervals: advertisement with CoL,
//! partner prioritization, grid charge queries, negotiation, trading on the
//! ledger and dispute handling.

mod report;
mod scenario;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::apol::{certify, ApolError, CaRegistry, LeafPolicy, LocationCertificate, MeterIdentity, SigmaResolution};
use crate::crypto::{Keypair, PublicKey};
use crate::grid::{grid_service_charge, BusId, GridError, NetworkTopology};
use crate::ledger::{
    AdKind, AdQuery, Address, AdvertisementTx, EiOutcome, EnergyInjectionTx, EnergyNegotiationTx, LatePaymentTx,
    Ledger, LedgerConfig, LedgerError, Role,
};
use crate::market::{
    consumer_welfare, negotiate, prioritize, AgentId, Candidate, ChargeSource, ConsumerParams, MarketError,
    MarketPartitions, ProducerParams, Settlement,
};

pub use report::{
    sweep_csv, Ablation, AblationMetrics, AgentComparison, Comparison, ComparisonRow, DisputeRecord, IntervalResult,
    MarketResult, SweepPoint, TradeRecord,
};
pub use scenario::{AgentRole, AgentSpec, Misbehavior, Scenario, TopologyRef, BUNDLED};

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error("unknown bundled scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid scenario{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidScenario { line: Option<usize>, message: String },
    #[error("sweep values must be sorted ascending")]
    UnsortedSweep,
    #[error("interval {interval} did not converge")]
    NotConverged { interval: usize, partial: Box<MarketResult> },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Apol(#[from] ApolError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The grid operator's charge service: γ_ij = ω · d_ij.
pub struct GridOperator<'a> {
    pub topology: &'a NetworkTopology,
    pub omega: f64,
}

impl ChargeSource for GridOperator<'_> {
    fn service_charge(&self, p: &ProducerParams, c: &ConsumerParams) -> Result<f64, MarketError> {
        let charge = self
            .topology
            .electrical_distance(p.bus, c.bus)
            .and_then(|d| grid_service_charge(self.omega, d))
            .map_err(|e| MarketError::InvalidConfig(e.to_string()))?;
        Ok(charge.charge)
    }
}

struct AgentState {
    keys: Keypair,
    meter: MeterIdentity,
    cert: LocationCertificate,
}

/// A running simulation: agents, their meters and the shared ledger.
pub struct Simulation {
    scenario: Scenario,
    topology: NetworkTopology,
    producers: Vec<ProducerParams>,
    consumers: Vec<ConsumerParams>,
    agents: BTreeMap<AgentId, AgentState>,
    ca: CaRegistry,
    ledger: Ledger,
    p2p: bool,
    tick: u64,
    next_interval: usize,
    results: Vec<IntervalResult>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        Self::with_mode(scenario, true)
    }

    /// `p2p = false` leaves every agent trading with the grid only.
    pub fn with_mode(scenario: &Scenario, p2p: bool) -> Result<Self, SimError> {
        scenario.validate()?;
        let topology = scenario.topology()?;
        let (producers, consumers) = scenario.agents_params();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed_1ed9);
        let ca = CaRegistry::new(SigmaResolution::Bus);
        let ids: Vec<(AgentId, BusId)> = producers
            .iter()
            .map(|p| (p.id, p.bus))
            .chain(consumers.iter().map(|c| (c.id, c.bus)))
            .collect();
        let meters: BTreeMap<AgentId, MeterIdentity> =
            ids.iter().map(|&(id, bus)| (id, ca.install_meter(bus, &mut rng))).collect();
        let by_key: BTreeMap<PublicKey, MeterIdentity> =
            meters.values().map(|m| (m.public_key(), m.clone())).collect();
        let leaf_count = scenario.leaf_count.unwrap_or(1).max(scenario.intervals).next_power_of_two();
        let mut ledger = Ledger::new(LedgerConfig {
            ad_mode: scenario.ad_mode,
            expiry_ticks: scenario.expiry_ticks,
            ..LedgerConfig::default()
        });
        let mut agents = BTreeMap::new();
        for (id, meter) in meters {
            let cert = certify(&meter, &by_key, &ca, leaf_count, LeafPolicy::Strict, &mut rng)?;
            let keys = Keypair::generate(&mut rng);
            let reputation = producers
                .iter()
                .find(|p| p.id == id)
                .map(|p| p.reputation)
                .or_else(|| consumers.iter().find(|c| c.id == id).map(|c| c.reputation))
                .unwrap_or(1.0);
            ledger.register_agent(id, &[keys.public()], reputation);
            agents.insert(id, AgentState { keys, meter, cert });
        }
        for c in &consumers {
            ledger.fund(Address::of_key(&agents[&c.id].keys.public()), scenario.funding_cents);
        }
        Ok(Self {
            scenario: scenario.clone(),
            topology,
            producers,
            consumers,
            agents,
            ca,
            ledger,
            p2p,
            tick: 0,
            next_interval: 0,
            results: Vec::new(),
        })
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ca(&self) -> &CaRegistry {
        &self.ca
    }

    pub fn producers(&self) -> &[ProducerParams] {
        &self.producers
    }

    pub fn consumers(&self) -> &[ConsumerParams] {
        &self.consumers
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Runs every remaining interval.
    pub fn run(mut self) -> Result<MarketResult, SimError> {
        self.finish()
    }

    /// Like [`Simulation::run`] but keeps the simulation, and its ledger,
    /// around afterwards.
    pub fn finish(&mut self) -> Result<MarketResult, SimError> {
        while self.next_interval < self.scenario.intervals {
            self.step()?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> MarketResult {
        MarketResult {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            omega: self.scenario.omega,
            groups: self.scenario.groups,
            p2p: self.p2p,
            ad_mode: self.scenario.ad_mode,
            intervals: self.results.clone(),
            footprint: self.ledger.measure_footprint(),
            final_reputation: self
                .agents
                .keys()
                .filter_map(|&id| Some((id, self.ledger.reputation(id)?)))
                .collect(),
        }
    }

    /// Runs the next interval end to end.
    pub fn step(&mut self) -> Result<&IntervalResult, SimError> {
        let interval = self.next_interval;
        self.next_interval += 1;
        // Reputation carries over from the ledger.
        for p in &mut self.producers {
            p.reputation = self.ledger.reputation(p.id).unwrap_or(p.reputation);
        }
        for c in &mut self.consumers {
            c.reputation = self.ledger.reputation(c.id).unwrap_or(c.reputation);
        }
        if !self.p2p {
            let mut settlement = Settlement {
                converged: true,
                ..Settlement::default()
            };
            settlement.settle_residuals(&self.producers, &self.consumers, &self.scenario.tariff);
            let result = self.summarize(interval, &settlement, &MarketPartitions::default(), Vec::new(), Vec::new())?;
            self.results.push(result);
            return Ok(self.results.last().expect("pushed"));
        }

        let owners = self.advertise()?;
        let partitions = self.prioritize(&owners)?;
        let operator = GridOperator {
            topology: &self.topology,
            omega: self.scenario.omega,
        };
        let outcome = negotiate(
            &self.producers,
            &self.consumers,
            &partitions,
            &operator,
            &self.scenario.tariff,
            &self.scenario.negotiation_config(),
        );
        let settlement = match outcome {
            Ok(s) => s,
            Err(MarketError::NotConverged(s)) => {
                self.tick += s.iterations as u64;
                let partial = self.summarize(interval, &s, &partitions, Vec::new(), Vec::new())?;
                self.results.push(partial);
                return Err(SimError::NotConverged {
                    interval,
                    partial: Box::new(self.result()),
                });
            }
            Err(e) => return Err(e.into()),
        };
        self.tick += settlement.iterations as u64;
        let (trades, disputes) = self.trade(interval, &settlement)?;
        let result = self.summarize(interval, &settlement, &partitions, trades, disputes)?;
        self.results.push(result);
        Ok(self.results.last().expect("pushed"))
    }

    /// Every agent publishes one AT through the grid operator. Returns the
    /// simulator's private map from AT id to its author.
    fn advertise(&mut self) -> Result<BTreeMap<[u8; 32], AgentId>, SimError> {
        let mut owners = BTreeMap::new();
        let mut ads: Vec<(AgentId, AdKind)> = Vec::new();
        for p in &self.producers {
            let price = self.scenario.tariff.clamp(p.marginal_cost(p.e_min));
            ads.push((p.id, AdKind::Offer { price }));
        }
        for c in &self.consumers {
            ads.push((c.id, AdKind::Ask { amount: c.e_max }));
        }
        for (id, kind) in ads {
            let eta = self.ledger.reputation(id).unwrap_or(1.0);
            let state = self.agents.get_mut(&id).expect("registered agent");
            let at = AdvertisementTx::new(kind, eta, Some(&mut state.cert))?;
            let ad_id = self.ledger.submit_advertisement(at, Role::GridOperator, &self.ca)?;
            owners.insert(ad_id, id);
        }
        Ok(owners)
    }

    /// Partner groups from the AD: reputation from each AT and electrical
    /// distance between the certified locations.
    fn prioritize(&self, owners: &BTreeMap<[u8; 32], AgentId>) -> Result<MarketPartitions, SimError> {
        let groups = self.scenario.groups;
        let mut partitions = MarketPartitions::default();
        let read = |query: AdQuery, own_sigma: u32| -> Result<Vec<Candidate>, SimError> {
            let mut out = Vec::new();
            for at in self.ledger.ad().query(&query) {
                let (Some(&author), Some(sigma)) = (owners.get(&at.t_id), at.sigma()) else {
                    continue;
                };
                let distance = self.topology.electrical_distance(own_sigma, sigma)?.km();
                out.push(Candidate {
                    id: author,
                    reputation: at.reputation,
                    distance,
                });
            }
            Ok(out)
        };
        for p in &self.producers {
            let candidates = read(AdQuery::asks(), self.agents[&p.id].meter.sigma())?;
            if !candidates.is_empty() {
                partitions.producers.insert(p.id, prioritize(p.weights, &candidates, groups)?);
            }
        }
        for c in &self.consumers {
            let candidates = read(AdQuery::offers(), self.agents[&c.id].meter.sigma())?;
            if !candidates.is_empty() {
                partitions.consumers.insert(c.id, prioritize(c.weights, &candidates, groups)?);
            }
        }
        Ok(partitions)
    }

    fn delivered_fraction(&self, producer: AgentId, interval: usize) -> f64 {
        self.scenario
            .misbehavior
            .iter()
            .filter(|m| AgentId(m.producer) == producer && m.applies(interval))
            .map(|m| m.delivered_fraction)
            .fold(1.0, f64::min)
    }

    /// EN, LP and EI for each cleared trade, with DR on under-delivery.
    fn trade(
        &mut self,
        interval: usize,
        settlement: &Settlement,
    ) -> Result<(Vec<TradeRecord>, Vec<DisputeRecord>), SimError> {
        let mut records = Vec::new();
        let mut disputes = Vec::new();
        let start = self.tick;
        for t in &settlement.trades {
            let fraction = self.delivered_fraction(t.producer, interval);
            let (pk, ck) = (&self.agents[&t.producer].keys, &self.agents[&t.consumer].keys);
            let en = EnergyNegotiationTx::with_flags(interval as u64, t.energy, t.price, ck, pk, true, true);
            self.ledger.finalize_negotiation(en.clone())?;
            let input = Address::of_key(&ck.public());
            let lp = LatePaymentTx::new(en.total_cents(), input, &en, self.ledger.lp_expiry(start), ck);
            self.ledger.submit_lp(lp.clone(), start)?;
            let delivered = t.energy * fraction;
            let ei = EnergyInjectionTx::new(delivered, &lp, pk, ck);
            let mut record = TradeRecord {
                producer: t.producer,
                consumer: t.consumer,
                energy: t.energy,
                price: t.price,
                charge: t.charge,
                round: t.round,
                delivered,
                paid_cents: 0,
                disputed: false,
                settled: false,
            };
            match self.ledger.submit_ei(ei, start + 1)? {
                EiOutcome::Settled { payment } => {
                    record.paid_cents = payment;
                    record.settled = true;
                }
                EiOutcome::Disputed { pu, producer, reputation } => {
                    record.disputed = true;
                    disputes.push(DisputeRecord {
                        producer,
                        consumer: t.consumer,
                        old_price: pu.old_price,
                        new_price: pu.new_price,
                        reputation_after: reputation,
                    });
                    // Nothing to pay for an empty delivery.
                    if pu.new_price > 0 && delivered > crate::ledger::AMOUNT_TOLERANCE {
                        let fixed = LatePaymentTx::new(pu.new_price, input, &en, self.ledger.lp_expiry(start + 2), ck);
                        self.ledger.submit_lp(fixed.clone(), start + 2)?;
                        let ei = EnergyInjectionTx::new(delivered, &fixed, pk, ck);
                        if let EiOutcome::Settled { payment } = self.ledger.submit_ei(ei, start + 3)? {
                            record.paid_cents = payment;
                            record.settled = true;
                        }
                    }
                }
                EiOutcome::Discarded { .. } => {}
            }
            records.push(record);
        }
        self.tick = start + 4;
        self.ledger.expire(self.tick);
        self.ledger.flush();
        Ok((records, disputes))
    }

    fn summarize(
        &self,
        interval: usize,
        s: &Settlement,
        partitions: &MarketPartitions,
        trades: Vec<TradeRecord>,
        disputes: Vec<DisputeRecord>,
    ) -> Result<IntervalResult, SimError> {
        let tariff = &self.scenario.tariff;
        let mut producer_welfare = BTreeMap::new();
        for p in &self.producers {
            let export = s.producer_grid.get(&p.id).copied().unwrap_or(0.0);
            let w = crate::market::producer_welfare(p, &s.trades_of_producer(p.id), export, tariff)?;
            producer_welfare.insert(p.id, w);
        }
        let mut consumer_welfare_map = BTreeMap::new();
        for c in &self.consumers {
            let import = s.consumer_grid.get(&c.id).copied().unwrap_or(0.0);
            let w = consumer_welfare(c, &s.trades_of_consumer(c.id), import, tariff)?;
            consumer_welfare_map.insert(c.id, w);
        }
        Ok(IntervalResult {
            interval,
            n_t: trades.iter().filter(|t| t.settled).count(),
            trades,
            producer_welfare,
            consumer_welfare: consumer_welfare_map,
            grid_import: s.consumer_grid.values().sum(),
            grid_export: s.producer_grid.values().sum(),
            service_charges: s.trades.iter().fold(0.0, |acc, t| acc + t.energy * t.charge),
            p2p_energy: s.trades.iter().fold(0.0, |acc, t| acc + t.energy),
            iterations: s.iterations,
            rounds: s.rounds.len(),
            exchanges: s.exchanges,
            charge_queries: s.charge_queries,
            messages_per_iteration: s.messages_per_iteration(),
            work_units: s.work_units,
            decision_variables: self.decision_variables(partitions),
            negotiation_ticks: s.iterations as u64,
            converged: s.converged,
            disputes,
        })
    }

    fn decision_variables(&self, partitions: &MarketPartitions) -> (usize, usize) {
        let mut per_producer: BTreeMap<(AgentId, usize), usize> = BTreeMap::new();
        let mut per_consumer: BTreeMap<(AgentId, usize), usize> = BTreeMap::new();
        for p in &self.producers {
            for c in &self.consumers {
                if let Some(r) = partitions.round_of(p.id, c.id) {
                    *per_producer.entry((p.id, r)).or_default() += 1;
                    *per_consumer.entry((c.id, r)).or_default() += 1;
                }
            }
        }
        let max = |m: &BTreeMap<_, usize>| m.values().copied().max().unwrap_or(0);
        (max(&per_producer), max(&per_consumer))
    }
}

/// Runs a whole scenario.
pub fn run(scenario: &Scenario) -> Result<MarketResult, SimError> {
    Simulation::new(scenario)?.run()
}

/// Runs intervals `0..=index` and reports only the last one; earlier
/// intervals shape reputation and the ledger.
pub fn run_interval(scenario: &Scenario, index: usize) -> Result<MarketResult, SimError> {
    let scenario = Scenario {
        intervals: scenario.intervals.max(index + 1),
        ..scenario.clone()
    };
    let mut sim = Simulation::new(&scenario)?;
    for _ in 0..=index {
        sim.step()?;
    }
    let mut result = sim.result();
    result.intervals.drain(..index);
    Ok(result)
}

/// One run per ω, in parallel; results keep the input order.
pub fn run_sweep(scenario: &Scenario, omegas: &[f64]) -> Result<Vec<MarketResult>, SimError> {
    if omegas.windows(2).any(|w| w[0] > w[1]) {
        return Err(SimError::UnsortedSweep);
    }
    omegas
        .par_iter()
        .map(|&omega| run(&Scenario { omega, ..scenario.clone() }))
        .collect()
}

/// The scenario with the P2P market and with grid-only trading.
pub fn compare_p2p_vs_grid(scenario: &Scenario) -> Result<Comparison, SimError> {
    let (with, without) = rayon::join(
        || run(scenario),
        || Simulation::with_mode(scenario, false)?.run(),
    );
    let (with, without) = (with?, without?);
    let mut agents = Vec::new();
    for id in with.final_reputation.keys() {
        let sum = |r: &MarketResult| r.intervals.iter().filter_map(|i| i.agent_welfare(*id)).sum();
        agents.push(AgentComparison {
            agent: *id,
            p2p: sum(&with),
            grid_only: sum(&without),
        });
    }
    Ok(Comparison {
        p2p: ComparisonRow::from(&with),
        grid_only: ComparisonRow::from(&without),
        agents,
    })
}

/// The configured group count against a single group.
pub fn prioritization_ablation(scenario: &Scenario) -> Result<Ablation, SimError> {
    let (with, without) = rayon::join(
        || run(scenario),
        || run(&Scenario { groups: 1, ..scenario.clone() }),
    );
    Ok(Ablation {
        with: AblationMetrics::from(&with?),
        without: AblationMetrics::from(&without?),
    })
}
