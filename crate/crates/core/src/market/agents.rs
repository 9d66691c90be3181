use std::fmt;

use serde::{Deserialize, Serialize};

use super::MarketError;
use crate::grid::BusId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Weights an agent places on partner reputation (`alpha`) and proximity (`beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl PreferenceWeights {
    pub fn from_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            beta: 1.0 - alpha,
        }
    }

    fn validate(&self, agent: AgentId) -> Result<(), MarketError> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.alpha) || !in_unit(self.beta) || (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(MarketError::InvalidParams {
                agent,
                reason: format!("weights must lie in [0,1] and sum to 1, got α={} β={}", self.alpha, self.beta),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerParams {
    pub id: AgentId,
    /// ¢/kWh²
    pub a: f64,
    /// ¢/kWh
    pub b: f64,
    /// ¢
    pub c: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub bus: BusId,
    pub reputation: f64,
    pub weights: PreferenceWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    pub id: AgentId,
    pub a: f64,
    pub b: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub bus: BusId,
    pub reputation: f64,
    pub weights: PreferenceWeights,
}

fn check_common(id: AgentId, e_min: f64, e_max: f64, reputation: f64) -> Result<(), MarketError> {
    let bad = |reason: String| Err(MarketError::InvalidParams { agent: id, reason });
    if !(e_min >= 0.0 && e_min <= e_max && e_max.is_finite()) {
        return bad(format!("need 0 <= e_min <= e_max, got [{e_min}, {e_max}]"));
    }
    if !(0.0..=1.0).contains(&reputation) {
        return bad(format!("reputation {reputation} outside [0,1]"));
    }
    Ok(())
}

impl ProducerParams {
    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.a > 0.0 && self.b >= 0.0 && self.c >= 0.0) {
            return Err(MarketError::InvalidParams {
                agent: self.id,
                reason: format!("cost needs a > 0, b >= 0, c >= 0, got ({}, {}, {})", self.a, self.b, self.c),
            });
        }
        check_common(self.id, self.e_min, self.e_max, self.reputation)?;
        self.weights.validate(self.id)
    }

    pub fn marginal_cost(&self, e: f64) -> f64 {
        2.0 * self.a * e + self.b
    }

    /// Output the producer would choose if its only outlet were the grid at
    /// the feed-in tariff.
    pub fn grid_only_position(&self, tariff: &GridTariff) -> f64 {
        ((tariff.feed_in - self.b) / (2.0 * self.a)).clamp(self.e_min, self.e_max)
    }
}

impl ConsumerParams {
    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(MarketError::InvalidParams {
                agent: self.id,
                reason: format!("utility needs a > 0, b > 0, got ({}, {})", self.a, self.b),
            });
        }
        check_common(self.id, self.e_min, self.e_max, self.reputation)?;
        self.weights.validate(self.id)
    }

    pub fn saturation(&self) -> f64 {
        self.b / (2.0 * self.a)
    }

    pub fn marginal_utility(&self, e: f64) -> f64 {
        (self.b - 2.0 * self.a * e).max(0.0)
    }

    /// Consumption the consumer would choose buying only from the grid.
    pub fn grid_only_position(&self, tariff: &GridTariff) -> f64 {
        ((self.b - tariff.retail) / (2.0 * self.a)).clamp(self.e_min, self.e_max)
    }
}

/// Grid prices bracketing every P2P price: sell-to-grid (feed-in) and
/// buy-from-grid (retail), both ¢/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTariff {
    pub feed_in: f64,
    pub retail: f64,
}

impl GridTariff {
    pub fn new(feed_in: f64, retail: f64) -> Result<Self, MarketError> {
        if !(feed_in >= 0.0 && feed_in <= retail && retail.is_finite()) {
            return Err(MarketError::InvalidTariff { feed_in, retail });
        }
        Ok(Self { feed_in, retail })
    }

    pub fn clamp(&self, price: f64) -> f64 {
        price.clamp(self.feed_in, self.retail)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.feed_in + self.retail)
    }
}

impl Default for GridTariff {
    fn default() -> Self {
        Self {
            feed_in: 5.0,
            retail: 25.0,
        }
    }
}

/// One bilateral trade as seen by both parties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub producer: AgentId,
    pub consumer: AgentId,
    /// kWh
    pub energy: f64,
    /// ¢/kWh
    pub price: f64,
    /// grid service charge, ¢/kWh
    pub charge: f64,
}

pub fn producer_cost(p: &ProducerParams, e: f64) -> Result<f64, MarketError> {
    if e < 0.0 {
        return Err(MarketError::NegativeEnergy(e));
    }
    Ok(p.a * e * e + p.b * e + p.c)
}

/// Quadratic satisfaction up to `b / 2a`, flat beyond.
pub fn consumer_utility(c: &ConsumerParams, e: f64) -> Result<f64, MarketError> {
    if e < 0.0 {
        return Err(MarketError::NegativeEnergy(e));
    }
    let e = e.min(c.saturation());
    Ok(-c.a * e * e + c.b * e)
}

/// Producer welfare given its trades and its export to the grid. The
/// producer's total output is the grid export plus all P2P sales.
pub fn producer_welfare(
    p: &ProducerParams,
    trades: &[Trade],
    grid_export: f64,
    tariff: &GridTariff,
) -> Result<f64, MarketError> {
    if let Some(t) = trades.iter().find(|t| t.producer != p.id) {
        return Err(MarketError::MismatchedPartnerLists {
            agent: p.id,
            trade_party: t.producer,
        });
    }
    if grid_export < 0.0 {
        return Err(MarketError::NegativeEnergy(grid_export));
    }
    let sold: f64 = trades.iter().map(|t| t.energy).sum();
    let revenue: f64 = trades.iter().map(|t| t.energy * (t.price - t.charge)).sum();
    Ok(tariff.feed_in * grid_export + revenue - producer_cost(p, grid_export + sold)?)
}

pub fn consumer_welfare(
    c: &ConsumerParams,
    trades: &[Trade],
    grid_import: f64,
    tariff: &GridTariff,
) -> Result<f64, MarketError> {
    if let Some(t) = trades.iter().find(|t| t.consumer != c.id) {
        return Err(MarketError::MismatchedPartnerLists {
            agent: c.id,
            trade_party: t.consumer,
        });
    }
    if grid_import < 0.0 {
        return Err(MarketError::NegativeEnergy(grid_import));
    }
    let bought: f64 = trades.iter().map(|t| t.energy).sum();
    let paid: f64 = trades.iter().map(|t| t.energy * (t.price + t.charge)).sum();
    Ok(consumer_utility(c, grid_import + bought)? - tariff.retail * grid_import - paid)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn producer(id: u32, a: f64, b: f64, c: f64) -> ProducerParams {
        ProducerParams {
            id: AgentId(id),
            a,
            b,
            c,
            e_min: 0.0,
            e_max: 10.0,
            bus: 1,
            reputation: 1.0,
            weights: PreferenceWeights::from_alpha(0.5),
        }
    }

    pub fn consumer(id: u32, a: f64, b: f64) -> ConsumerParams {
        ConsumerParams {
            id: AgentId(id),
            a,
            b,
            e_min: 0.0,
            e_max: 10.0,
            bus: 1,
            reputation: 1.0,
            weights: PreferenceWeights::from_alpha(0.5),
        }
    }
}
