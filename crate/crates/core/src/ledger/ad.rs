//! Off-chain advertisement database.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tx::{AdKind, AdvertisementTx};
use crate::codec::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdKindFilter {
    Offer,
    Ask,
}

/// Filter over stored advertisements. Empty fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdQuery {
    pub kind: Option<AdKindFilter>,
    /// Inclusive offer-price range, ¢/kWh. Asks never match a price range.
    pub price_range: Option<(f64, f64)>,
    /// Keep advertisements whose σ lies within `radius` of `sigma`.
    pub near_sigma: Option<(u32, u32)>,
}

impl AdQuery {
    pub fn offers() -> Self {
        Self {
            kind: Some(AdKindFilter::Offer),
            ..Self::default()
        }
    }

    pub fn asks() -> Self {
        Self {
            kind: Some(AdKindFilter::Ask),
            ..Self::default()
        }
    }

    pub fn matches(&self, at: &AdvertisementTx) -> bool {
        let kind_ok = matches!(
            (self.kind, at.kind),
            (None, _) | (Some(AdKindFilter::Offer), AdKind::Offer { .. }) | (Some(AdKindFilter::Ask), AdKind::Ask { .. })
        );
        let price_ok = match (self.price_range, at.kind) {
            (None, _) => true,
            (Some((lo, hi)), AdKind::Offer { price }) => (lo..=hi).contains(&price),
            (Some(_), AdKind::Ask { .. }) => false,
        };
        let sigma_ok = match (self.near_sigma, at.sigma()) {
            (None, _) => true,
            (Some((center, radius)), Some(s)) => s.abs_diff(center) <= radius,
            (Some(_), None) => false,
        };
        kind_ok && price_ok && sigma_ok
    }
}

/// Advertisements keyed by transaction id, in submission order.
#[derive(Debug, Clone, Default)]
pub struct AdDatabase {
    entries: Vec<AdvertisementTx>,
    index: BTreeMap<Digest, usize>,
}

impl AdDatabase {
    pub(super) fn insert(&mut self, at: AdvertisementTx) -> bool {
        if self.index.contains_key(&at.t_id) {
            return false;
        }
        self.index.insert(at.t_id, self.entries.len());
        self.entries.push(at);
        true
    }

    pub fn get(&self, id: &Digest) -> Option<&AdvertisementTx> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn query(&self, q: &AdQuery) -> Vec<&AdvertisementTx> {
        self.entries.iter().filter(|at| q.matches(at)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AdvertisementTx> {
        self.entries.iter()
    }
}
