//! Agent economics, partner prioritization, the decentralized settlement
//! engine and a centralized reference solver.

mod agents;
mod negotiation;
mod oracle;
mod priority;

use thiserror::Error;

pub use agents::{
    consumer_utility, consumer_welfare, producer_cost, producer_welfare, AgentId, ConsumerParams,
    GridTariff, PreferenceWeights, ProducerParams, Trade,
};
pub use negotiation::{
    negotiate, BoundDuals, ChargeMatrix, ChargeSource, ClearedTrade, MarketPartitions,
    NegotiationConfig, NegotiationState, PairState, RoundStats, Settlement, UniformCharge,
    ZetaSchedule, OPS_PER_DUAL_UPDATE, OPS_PER_PAIR_UPDATE,
};
pub use oracle::{centralized_oracle, trade_matrix_welfare, OracleOptions};
pub use priority::{partition_partners, prioritize, priority_index, Candidate, PriorityPartition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("energy must be non-negative, got {0}")]
    NegativeEnergy(f64),
    #[error("agent {agent}: {reason}")]
    InvalidParams { agent: AgentId, reason: String },
    #[error("tariff must satisfy 0 <= feed-in <= retail, got feed-in {feed_in}, retail {retail}")]
    InvalidTariff { feed_in: f64, retail: f64 },
    #[error("trade lists of agent {agent} include a trade of agent {trade_party}")]
    MismatchedPartnerLists { agent: AgentId, trade_party: AgentId },
    #[error("priority normalizer is zero but a candidate is at positive distance")]
    ZeroNormalizer,
    #[error("distance {distance} km is invalid for normalizer {normalizer} km")]
    InvalidDistance { distance: f64, normalizer: f64 },
    #[error("priority value {0} outside [0, 1]")]
    IndexOutOfRange(f64),
    #[error("group count must be at least 1")]
    InvalidGroupCount,
    #[error("no candidate partners to partition")]
    EmptyCandidateSet,
    #[error("agent {agent} received a message from an agent that is not an active partner")]
    UnknownPartner { agent: AgentId },
    #[error("agent {agent} is missing the message of partner {partner}")]
    MissingMessage { agent: AgentId, partner: AgentId },
    #[error("no service charge for pair ({producer}, {consumer})")]
    MissingCharge { producer: AgentId, consumer: AgentId },
    #[error("invalid negotiation config: {0}")]
    InvalidConfig(String),
    #[error("negotiation hit the iteration cap after {} iterations", .0.iterations)]
    NotConverged(Box<Settlement>),
    #[error("flexibility bounds are contradictory: {0}")]
    Infeasible(String),
    #[error("reference solver did not reach tolerance: {0}")]
    SolverFailed(String),
}
