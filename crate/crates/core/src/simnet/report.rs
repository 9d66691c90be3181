//! Run metrics and their JSON / CSV exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ledger::Footprint;
use crate::market::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub producer: AgentId,
    pub consumer: AgentId,
    /// Agreed energy, kWh.
    pub energy: f64,
    /// ¢/kWh
    pub price: f64,
    /// γ, ¢/kWh
    pub charge: f64,
    pub round: usize,
    /// Energy the producer's meter reported, kWh.
    pub delivered: f64,
    /// What the producer was finally paid, ¢.
    pub paid_cents: u64,
    pub disputed: bool,
    /// EI sealed for this trade.
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisputeRecord {
    pub producer: AgentId,
    pub consumer: AgentId,
    pub old_price: u64,
    pub new_price: u64,
    pub reputation_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub interval: usize,
    pub trades: Vec<TradeRecord>,
    /// Sealed EI count for the interval.
    pub n_t: usize,
    pub producer_welfare: BTreeMap<AgentId, f64>,
    pub consumer_welfare: BTreeMap<AgentId, f64>,
    /// Σ e_j^G
    pub grid_import: f64,
    /// Σ e_i^G
    pub grid_export: f64,
    /// Σ e_ij·γ_ij
    pub service_charges: f64,
    pub p2p_energy: f64,
    pub iterations: usize,
    pub rounds: usize,
    pub exchanges: u64,
    pub charge_queries: u64,
    pub messages_per_iteration: f64,
    pub work_units: u64,
    /// Largest number of pair variables any producer / consumer holds in
    /// one round.
    pub decision_variables: (usize, usize),
    /// Simulated ticks spent negotiating.
    pub negotiation_ticks: u64,
    pub converged: bool,
    pub disputes: Vec<DisputeRecord>,
}

impl IntervalResult {
    pub fn total_producer_welfare(&self) -> f64 {
        self.producer_welfare.values().sum()
    }

    pub fn total_consumer_welfare(&self) -> f64 {
        self.consumer_welfare.values().sum()
    }

    pub fn total_welfare(&self) -> f64 {
        self.total_producer_welfare() + self.total_consumer_welfare()
    }

    pub fn agent_welfare(&self, id: AgentId) -> Option<f64> {
        self.producer_welfare
            .get(&id)
            .or_else(|| self.consumer_welfare.get(&id))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketResult {
    pub scenario: String,
    pub seed: u64,
    pub omega: f64,
    pub groups: usize,
    pub p2p: bool,
    pub ad_mode: bool,
    pub intervals: Vec<IntervalResult>,
    pub footprint: Footprint,
    pub final_reputation: BTreeMap<AgentId, f64>,
}

impl MarketResult {
    pub fn n_t(&self) -> usize {
        self.intervals.iter().map(|i| i.n_t).sum()
    }

    pub fn total_welfare(&self) -> f64 {
        self.intervals.iter().map(IntervalResult::total_welfare).sum()
    }

    pub fn grid_import(&self) -> f64 {
        self.intervals.iter().map(|i| i.grid_import).sum()
    }

    pub fn iterations(&self) -> usize {
        self.intervals.iter().map(|i| i.iterations).sum()
    }

    pub fn work_units(&self) -> u64 {
        self.intervals.iter().map(|i| i.work_units).sum()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: n_T={} welfare={:.2} blocks={} omega={} groups={}",
            self.scenario,
            self.n_t(),
            self.total_welfare(),
            self.footprint.blocks,
            self.omega,
            self.groups
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// One row per trade, then one summary row per interval.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "row,interval,producer,consumer,energy_kwh,price,charge,round,delivered_kwh,paid_cents,disputed,settled,\
             n_t,welfare,grid_import,grid_export,service_charges,iterations,messages_per_iteration,work_units\n",
        );
        for i in &self.intervals {
            for t in &i.trades {
                let _ = writeln!(
                    out,
                    "trade,{},{},{},{},{},{},{},{},{},{},{},,,,,,,,",
                    i.interval, t.producer, t.consumer, t.energy, t.price, t.charge, t.round, t.delivered, t.paid_cents, t.disputed, t.settled
                );
            }
        }
        for i in &self.intervals {
            let _ = writeln!(
                out,
                "summary,{},,,{},,,,,,,,{},{},{},{},{},{},{},{}",
                i.interval,
                i.p2p_energy,
                i.n_t,
                i.total_welfare(),
                i.grid_import,
                i.grid_export,
                i.service_charges,
                i.iterations,
                i.messages_per_iteration,
                i.work_units
            );
        }
        out
    }
}

/// One sweep point: ω and its transaction count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega: f64,
    pub n_t: usize,
    pub welfare: f64,
    pub p2p_energy: f64,
    pub service_charges: f64,
}

impl From<&MarketResult> for SweepPoint {
    fn from(r: &MarketResult) -> Self {
        Self {
            omega: r.omega,
            n_t: r.n_t(),
            welfare: r.total_welfare(),
            p2p_energy: r.intervals.iter().map(|i| i.p2p_energy).sum(),
            service_charges: r.intervals.iter().map(|i| i.service_charges).sum(),
        }
    }
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("omega,n_t,welfare,p2p_energy_kwh,service_charges\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.omega, p.n_t, p.welfare, p.p2p_energy, p.service_charges);
    }
    out
}

/// The quantities compared between the P2P market and grid-only trading.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub grid_import: f64,
    pub grid_export: f64,
    pub consumer_welfare: f64,
    pub producer_welfare: f64,
    pub service_charges: f64,
}

impl From<&MarketResult> for ComparisonRow {
    fn from(r: &MarketResult) -> Self {
        let sum = |f: fn(&IntervalResult) -> f64| r.intervals.iter().map(f).sum();
        Self {
            grid_import: sum(|i| i.grid_import),
            grid_export: sum(|i| i.grid_export),
            consumer_welfare: sum(IntervalResult::total_consumer_welfare),
            producer_welfare: sum(IntervalResult::total_producer_welfare),
            service_charges: sum(|i| i.service_charges),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentComparison {
    pub agent: AgentId,
    pub p2p: f64,
    pub grid_only: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub p2p: ComparisonRow,
    pub grid_only: ComparisonRow,
    pub agents: Vec<AgentComparison>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let (a, b) = (&self.p2p, &self.grid_only);
        let mut out = String::from("quantity,p2p,grid_only\n");
        for (name, x, y) in [
            ("grid_import_kwh", a.grid_import, b.grid_import),
            ("grid_export_kwh", a.grid_export, b.grid_export),
            ("consumer_welfare", a.consumer_welfare, b.consumer_welfare),
            ("producer_welfare", a.producer_welfare, b.producer_welfare),
            ("service_charges", a.service_charges, b.service_charges),
        ] {
            let _ = writeln!(out, "{name},{x},{y}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMetrics {
    pub groups: usize,
    pub decision_variables: (usize, usize),
    pub messages_per_iteration: f64,
    pub iterations: usize,
    pub negotiation_ticks: u64,
    pub work_units: u64,
}

impl From<&MarketResult> for AblationMetrics {
    fn from(r: &MarketResult) -> Self {
        let exchanges: u64 = r.intervals.iter().map(|i| i.exchanges).sum();
        let iterations = r.iterations();
        Self {
            groups: r.groups,
            decision_variables: r
                .intervals
                .iter()
                .map(|i| i.decision_variables)
                .fold((0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1))),
            messages_per_iteration: if iterations == 0 { 0.0 } else { exchanges as f64 / iterations as f64 },
            iterations,
            negotiation_ticks: r.intervals.iter().map(|i| i.negotiation_ticks).sum(),
            work_units: r.work_units(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub with: AblationMetrics,
    pub without: AblationMetrics,
}

impl Ablation {
    pub fn to_csv(&self) -> String {
        let (a, b) = (&self.with, &self.without);
        let mut out = String::from("metric,with_prioritization,without_prioritization\n");
        let _ = writeln!(out, "groups,{},{}", a.groups, b.groups);
        let _ = writeln!(out, "producer_variables,{},{}", a.decision_variables.0, b.decision_variables.0);
        let _ = writeln!(out, "consumer_variables,{},{}", a.decision_variables.1, b.decision_variables.1);
        let _ = writeln!(out, "messages_per_iteration,{},{}", a.messages_per_iteration, b.messages_per_iteration);
        let _ = writeln!(out, "iterations,{},{}", a.iterations, b.iterations);
        let _ = writeln!(out, "negotiation_ticks,{},{}", a.negotiation_ticks, b.negotiation_ticks);
        let _ = writeln!(out, "work_units,{},{}", a.work_units, b.work_units);
        out
    }
}
