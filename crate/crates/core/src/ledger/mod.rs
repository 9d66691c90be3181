//! Trading lifecycle on a hash-chained ledger: advertisements, agreed
//! terms, late payment / energy injection pairing, dispute resolution and
//! reputation.
//!
//! The ledger is a single-writer state machine. Every mutating call takes
//! `&mut self`, so submissions serialize through the owner; sealed blocks and
//! the advertisement database are read through shared references.

mod ad;
mod tx;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apol::{verify_col, CaRegistry, Rejection};
use crate::codec::{b64, sha256, Digest, Encoder};
use crate::crypto::{verify, PublicKey};
use crate::market::AgentId;

pub use ad::{AdDatabase, AdKindFilter, AdQuery};
pub use tx::{
    AdKind, Address, AdvertisementTx, EnergyInjectionTx, EnergyNegotiationTx, LatePaymentTx,
    LedgerTx, PriceUpdateTx, ReputationRecord, TxKind,
};

/// Amounts closer than this (kWh) count as equal.
pub const AMOUNT_TOLERANCE: f64 = 1e-6;
pub const DR_CONTRACT_NAME: &str = "dispute-resolution";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("only the grid operator may write to the advertisement database")]
    UnauthorizedWriter,
    #[error("advertisement carries no CoL proof")]
    MissingCoL,
    #[error("invalid CoL: {0}")]
    InvalidCoL(#[from] Rejection),
    #[error("transaction id does not match its content")]
    IdMismatch,
    #[error("transaction {} was already submitted", b64::encode(.0))]
    DuplicateTransaction(Digest),
    #[error("both parties must set their agreement flag")]
    MissingAgreement,
    #[error("signature does not verify")]
    BadSignature,
    #[error("public keys do not match the referenced transaction")]
    KeyMismatch,
    #[error("reference {} does not resolve", b64::encode(.0))]
    UnknownReference(Digest),
    #[error("energy of negotiation {} already has an open or settled payment", b64::encode(.0))]
    EnergyAlreadyClaimed(Digest),
    #[error("late payment expired at tick {expiry}, now {now}")]
    Expired { expiry: u64, now: u64 },
    #[error("late payment {} is already closed", b64::encode(.0))]
    DuplicateEI(Digest),
    #[error("insufficient funds: need {needed} ¢, have {available} ¢")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("delivered {delivered} kWh is not below the agreed {agreed} kWh")]
    NotUnderDelivery { delivered: f64, agreed: f64 },
    #[error("reputation writes are accepted only from the dispute contract")]
    UnauthorizedSource,
    #[error("reputation can only decrease, got delta {0}")]
    PositiveReputationDelta(f64),
    #[error("agent {0} is not registered")]
    UnknownAgent(AgentId),
    #[error("key is not registered to any agent")]
    UnknownKey,
    #[error("no pending transactions")]
    NothingPending,
    #[error("hash chain broken at block {0}")]
    ChainBroken(u64),
    #[error("sealed transaction {index} in block {block} has an unresolved reference")]
    DanglingReference { block: u64, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GridOperator,
    Producer,
    Consumer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerConfig {
    /// Transactions per block.
    pub block_size: usize,
    /// Keep advertisements off-chain in the AD instead of in blocks.
    pub ad_mode: bool,
    /// Ticks an LP waits for its EI.
    pub expiry_ticks: u64,
    /// Reputation penalty per unit of relative shortfall.
    pub dr_penalty: f64,
    /// Reject advertisements without a CoL proof.
    pub require_col: bool,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            block_size: 10,
            ad_mode: true,
            expiry_ticks: 10,
            dr_penalty: 0.5,
            require_col: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    #[serde(with = "b64")]
    pub prev: Digest,
    pub txs: Vec<LedgerTx>,
    #[serde(with = "b64")]
    pub digest: Digest,
}

impl Block {
    fn seal(height: u64, prev: Digest, txs: Vec<LedgerTx>) -> Self {
        let mut block = Self {
            height,
            prev,
            txs,
            digest: [0; 32],
        };
        block.digest = block.compute_digest();
        block
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(self.height)
            .bytes(&self.prev)
            .list(&self.txs, |e, t| {
                e.bytes(&t.encode());
            });
        enc.finish()
    }

    pub fn compute_digest(&self) -> Digest {
        sha256(&self.encode())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub blocks: usize,
    /// Canonical bytes of all sealed blocks.
    pub total_bytes: usize,
    pub per_kind: BTreeMap<TxKind, usize>,
    pub per_kind_count: BTreeMap<TxKind, usize>,
    /// Canonical bytes held off-chain in the AD.
    pub ad_bytes: usize,
}

/// Result of matching an EI against its LP and EN.
#[derive(Debug, Clone, PartialEq)]
pub enum EiOutcome {
    /// Pair accepted; the producer received `payment` cents.
    Settled { payment: u64 },
    /// Under-delivery. The LP is superseded and the consumer must submit a
    /// new one at `pu.new_price`.
    Disputed { pu: PriceUpdateTx, producer: AgentId, reputation: f64 },
    /// Prices disagree; LP and EI are dropped and the escrow refunded.
    Discarded { expected: u64, found: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisputeOutcome {
    pub pu: PriceUpdateTx,
    pub producer: AgentId,
    /// Negative change to the producer's η.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Open,
    Settled,
    Superseded,
    Discarded,
    Expired,
}

#[derive(Debug, Clone)]
struct OpenLp {
    lp: LatePaymentTx,
    escrow: u64,
}

/// Terms that replace the EN's after a dispute.
#[derive(Debug, Clone, Copy)]
struct Correction {
    price: u64,
    amount: f64,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    config: LedgerConfig,
    blocks: Vec<Block>,
    pending: Vec<LedgerTx>,
    ad: AdDatabase,
    reputation: BTreeMap<AgentId, f64>,
    key_owner: BTreeMap<PublicKey, AgentId>,
    balances: BTreeMap<Address, u64>,
    negotiations: BTreeMap<Digest, EnergyNegotiationTx>,
    open_lps: BTreeMap<Digest, OpenLp>,
    closed_lps: BTreeMap<Digest, LpStatus>,
    settled_ens: BTreeSet<Digest>,
    corrections: BTreeMap<Digest, Correction>,
    dr_address: Address,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new(LedgerConfig::default())
    }
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Self {
            config,
            blocks: Vec::new(),
            pending: Vec::new(),
            ad: AdDatabase::default(),
            reputation: BTreeMap::new(),
            key_owner: BTreeMap::new(),
            balances: BTreeMap::new(),
            negotiations: BTreeMap::new(),
            open_lps: BTreeMap::new(),
            closed_lps: BTreeMap::new(),
            settled_ens: BTreeSet::new(),
            corrections: BTreeMap::new(),
            dr_address: Address::contract(DR_CONTRACT_NAME),
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn dr_address(&self) -> Address {
        self.dr_address
    }

    /// Registers an agent, the keys it signs with and its starting η.
    pub fn register_agent(&mut self, agent: AgentId, keys: &[PublicKey], reputation: f64) {
        self.reputation.insert(agent, reputation.clamp(0.0, 1.0));
        for key in keys {
            self.key_owner.insert(*key, agent);
        }
    }

    pub fn owner_of(&self, key: &PublicKey) -> Option<AgentId> {
        self.key_owner.get(key).copied()
    }

    pub fn reputation(&self, agent: AgentId) -> Option<f64> {
        self.reputation.get(&agent).copied()
    }

    pub fn fund(&mut self, account: Address, cents: u64) {
        *self.balances.entry(account).or_default() += cents;
    }

    pub fn balance(&self, account: &Address) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    /// Sum of balances and escrowed payments.
    pub fn total_funds(&self) -> u64 {
        self.balances.values().sum::<u64>() + self.open_lps.values().map(|o| o.escrow).sum::<u64>()
    }

    pub fn ad(&self) -> &AdDatabase {
        &self.ad
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending(&self) -> &[LedgerTx] {
        &self.pending
    }

    pub fn negotiation(&self, id: &Digest) -> Option<&EnergyNegotiationTx> {
        self.negotiations.get(id)
    }

    pub fn lp_status(&self, id: &Digest) -> Option<LpStatus> {
        if self.open_lps.contains_key(id) {
            return Some(LpStatus::Open);
        }
        self.closed_lps.get(id).copied()
    }

    pub fn open_lp_count(&self) -> usize {
        self.open_lps.len()
    }

    /// Expiry tick for an LP created at `now`.
    pub fn lp_expiry(&self, now: u64) -> u64 {
        now + self.config.expiry_ticks
    }

    /// Publishes an advertisement relayed by `submitter`. In AD mode it is
    /// kept off-chain; otherwise it also enters the pending pool.
    pub fn submit_advertisement(
        &mut self,
        at: AdvertisementTx,
        submitter: Role,
        ca: &CaRegistry,
    ) -> Result<Digest, LedgerError> {
        if submitter != Role::GridOperator {
            return Err(LedgerError::UnauthorizedWriter);
        }
        if at.t_id != at.expected_id() {
            return Err(LedgerError::IdMismatch);
        }
        match &at.col {
            Some(proof) => verify_col(proof, ca, &AdvertisementTx::signed_content(&at.kind, at.reputation))?,
            None if self.config.require_col => return Err(LedgerError::MissingCoL),
            None => {}
        }
        let id = at.t_id;
        if self.ad.get(&id).is_some() {
            return Err(LedgerError::DuplicateTransaction(id));
        }
        if !self.config.ad_mode {
            self.pending.push(LedgerTx::Advertisement(at.clone()));
        }
        self.ad.insert(at);
        Ok(id)
    }

    /// Stores the final terms of a negotiation.
    pub fn finalize_negotiation(&mut self, en: EnergyNegotiationTx) -> Result<Digest, LedgerError> {
        if !(en.agreement_p && en.agreement_c) {
            return Err(LedgerError::MissingAgreement);
        }
        if en.t_id != en.expected_id() {
            return Err(LedgerError::IdMismatch);
        }
        if !en.signatures_valid() {
            return Err(LedgerError::BadSignature);
        }
        if self.negotiations.contains_key(&en.t_id) {
            return Err(LedgerError::DuplicateTransaction(en.t_id));
        }
        let id = en.t_id;
        self.negotiations.insert(id, en.clone());
        self.pending.push(LedgerTx::Negotiation(en));
        Ok(id)
    }

    /// Price and amount the next EI for `en` must match.
    pub fn expected_terms(&self, en: &EnergyNegotiationTx) -> (u64, f64) {
        match self.corrections.get(&en.t_id) {
            Some(c) => (c.price, c.amount),
            None => (en.total_cents(), en.amount),
        }
    }

    /// Accepts an LP and moves its price from the consumer's account into
    /// escrow. The LP is held off-chain until its EI arrives.
    pub fn submit_lp(&mut self, lp: LatePaymentTx, now: u64) -> Result<Digest, LedgerError> {
        if lp.t_id != lp.expected_id() {
            return Err(LedgerError::IdMismatch);
        }
        if self.lp_status(&lp.t_id).is_some() {
            return Err(LedgerError::DuplicateTransaction(lp.t_id));
        }
        let en = self
            .negotiations
            .get(&lp.en_ref)
            .ok_or(LedgerError::UnknownReference(lp.en_ref))?;
        if !verify(&en.pk, &lp.signed_content(), &lp.sign) {
            return Err(LedgerError::BadSignature);
        }
        if lp.output != en.pk_d || lp.input != Address::of_key(&en.pk) {
            return Err(LedgerError::KeyMismatch);
        }
        let claimed = self.settled_ens.contains(&lp.en_ref)
            || self.open_lps.values().any(|o| o.lp.en_ref == lp.en_ref);
        if claimed {
            return Err(LedgerError::EnergyAlreadyClaimed(lp.en_ref));
        }
        if now > lp.expiry {
            return Err(LedgerError::Expired { expiry: lp.expiry, now });
        }
        let available = self.balance(&lp.input);
        if available < lp.price {
            return Err(LedgerError::InsufficientFunds {
                needed: lp.price,
                available,
            });
        }
        *self.balances.entry(lp.input).or_default() -= lp.price;
        let id = lp.t_id;
        self.open_lps.insert(id, OpenLp { escrow: lp.price, lp });
        Ok(id)
    }

    fn close_lp(&mut self, id: &Digest, status: LpStatus, refund: bool) -> Option<OpenLp> {
        let open = self.open_lps.remove(id)?;
        if refund {
            *self.balances.entry(open.lp.input).or_default() += open.escrow;
        }
        self.closed_lps.insert(*id, status);
        Some(open)
    }

    /// Matches an EI against its LP and EN and settles, disputes or discards.
    pub fn submit_ei(&mut self, ei: EnergyInjectionTx, now: u64) -> Result<EiOutcome, LedgerError> {
        if self.closed_lps.contains_key(&ei.lp_id) {
            return Err(LedgerError::DuplicateEI(ei.lp_id));
        }
        let open = self
            .open_lps
            .get(&ei.lp_id)
            .ok_or(LedgerError::UnknownReference(ei.lp_id))?;
        let expiry = open.lp.expiry;
        if now > expiry {
            self.close_lp(&ei.lp_id, LpStatus::Expired, true);
            return Err(LedgerError::Expired { expiry, now });
        }
        if !ei.signatures_valid() {
            return Err(LedgerError::BadSignature);
        }
        let lp = open.lp.clone();
        let en = self.negotiations[&lp.en_ref].clone();
        if ei.pk_p != en.pk_d || ei.pk_c != en.pk {
            return Err(LedgerError::KeyMismatch);
        }
        let (price, amount) = self.expected_terms(&en);
        if lp.price != price {
            self.close_lp(&lp.t_id, LpStatus::Discarded, true);
            return Ok(EiOutcome::Discarded {
                expected: price,
                found: lp.price,
            });
        }
        if ei.amount + AMOUNT_TOLERANCE >= amount {
            let open = self.close_lp(&lp.t_id, LpStatus::Settled, false).expect("open LP");
            *self.balances.entry(Address::of_key(&lp.output)).or_default() += open.escrow;
            self.settled_ens.insert(en.t_id);
            self.pending.push(LedgerTx::LatePayment(lp));
            self.pending.push(LedgerTx::Injection(ei));
            return Ok(EiOutcome::Settled { payment: open.escrow });
        }
        let outcome = self.dispute_resolution(&ei, &lp, &en)?;
        self.close_lp(&lp.t_id, LpStatus::Superseded, true);
        self.corrections.insert(
            en.t_id,
            Correction {
                price: outcome.pu.new_price,
                amount: ei.amount.max(0.0),
            },
        );
        self.pending.push(LedgerTx::PriceUpdate(outcome.pu));
        let reputation = self.update_reputation(outcome.producer, outcome.delta, self.dr_address)?;
        Ok(EiOutcome::Disputed {
            pu: outcome.pu,
            producer: outcome.producer,
            reputation,
        })
    }

    /// Prorated price and reputation penalty for an under-delivery. Pure:
    /// nothing is written.
    pub fn dispute_resolution(
        &self,
        ei: &EnergyInjectionTx,
        lp: &LatePaymentTx,
        en: &EnergyNegotiationTx,
    ) -> Result<DisputeOutcome, LedgerError> {
        let (_, agreed) = self.expected_terms(en);
        let (pu, drop) = prorate(lp, ei.amount, agreed, self.config.dr_penalty)?;
        let producer = self.owner_of(&en.pk_d).ok_or(LedgerError::UnknownKey)?;
        Ok(DisputeOutcome {
            pu,
            producer,
            delta: -drop,
        })
    }

    /// Applies a non-positive reputation change. Only the dispute contract
    /// may call this.
    pub fn update_reputation(&mut self, agent: AgentId, delta: f64, source: Address) -> Result<f64, LedgerError> {
        if source != self.dr_address {
            return Err(LedgerError::UnauthorizedSource);
        }
        if delta > 0.0 {
            return Err(LedgerError::PositiveReputationDelta(delta));
        }
        let eta = self.reputation.get_mut(&agent).ok_or(LedgerError::UnknownAgent(agent))?;
        let old = *eta;
        *eta = (old + delta).clamp(0.0, 1.0);
        let new = *eta;
        self.pending.push(LedgerTx::Reputation(ReputationRecord {
            agent,
            old,
            new,
            source,
        }));
        Ok(new)
    }

    /// Closes every open LP whose expiry has passed and refunds its escrow.
    pub fn expire(&mut self, now: u64) -> Vec<Digest> {
        let stale: Vec<Digest> = self
            .open_lps
            .iter()
            .filter(|(_, o)| now > o.lp.expiry)
            .map(|(id, _)| *id)
            .collect();
        for id in &stale {
            self.close_lp(id, LpStatus::Expired, true);
        }
        stale
    }

    pub fn head(&self) -> Digest {
        self.blocks.last().map(|b| b.digest).unwrap_or([0; 32])
    }

    /// Seals up to `block_size` pending transactions.
    pub fn append_block(&mut self) -> Result<u64, LedgerError> {
        if self.pending.is_empty() {
            return Err(LedgerError::NothingPending);
        }
        let take = self.config.block_size.max(1).min(self.pending.len());
        let txs: Vec<LedgerTx> = self.pending.drain(..take).collect();
        let height = self.blocks.len() as u64;
        let block = Block::seal(height, self.head(), txs);
        self.blocks.push(block);
        Ok(height)
    }

    /// Seals only full blocks, leaving a partial remainder pending.
    pub fn seal_full_blocks(&mut self) -> usize {
        let mut sealed = 0;
        while self.pending.len() >= self.config.block_size.max(1) {
            self.append_block().expect("pending is non-empty");
            sealed += 1;
        }
        sealed
    }

    /// Seals everything pending.
    pub fn flush(&mut self) -> usize {
        let mut sealed = 0;
        while !self.pending.is_empty() {
            self.append_block().expect("pending is non-empty");
            sealed += 1;
        }
        sealed
    }

    /// Recomputes every block digest and back link.
    pub fn verify_chain(&self) -> Result<(), LedgerError> {
        let mut prev = [0u8; 32];
        for block in &self.blocks {
            if block.prev != prev || block.compute_digest() != block.digest {
                return Err(LedgerError::ChainBroken(block.height));
            }
            prev = block.digest;
        }
        Ok(())
    }

    /// Every sealed EI cites an earlier sealed LP, and every sealed LP cites
    /// an earlier sealed EN.
    pub fn verify_references(&self) -> Result<(), LedgerError> {
        let mut ens = BTreeSet::new();
        let mut lps = BTreeSet::new();
        for block in &self.blocks {
            for (index, tx) in block.txs.iter().enumerate() {
                let ok = match tx {
                    LedgerTx::Negotiation(en) => {
                        ens.insert(en.t_id);
                        true
                    }
                    LedgerTx::LatePayment(lp) => ens.contains(&lp.en_ref) && lps.insert(lp.t_id),
                    LedgerTx::Injection(ei) => lps.contains(&ei.lp_id),
                    _ => true,
                };
                if !ok {
                    return Err(LedgerError::DanglingReference {
                        block: block.height,
                        index,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn sealed(&self) -> impl Iterator<Item = &LedgerTx> {
        self.blocks.iter().flat_map(|b| b.txs.iter())
    }

    pub fn measure_footprint(&self) -> Footprint {
        let mut fp = Footprint {
            blocks: self.blocks.len(),
            total_bytes: self.blocks.iter().map(|b| b.encode().len()).sum(),
            ad_bytes: self.ad.iter().map(|at| at.encode().len()).sum(),
            ..Footprint::default()
        };
        for tx in self.sealed() {
            *fp.per_kind.entry(tx.kind()).or_default() += tx.encode().len();
            *fp.per_kind_count.entry(tx.kind()).or_default() += 1;
        }
        fp
    }

    /// One JSON object per line: a block marker followed by its transactions.
    pub fn export_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for block in &self.blocks {
            let marker = serde_json::json!({
                "block": block.height,
                "prev": b64::encode(&block.prev),
                "digest": b64::encode(&block.digest),
                "tx_count": block.txs.len(),
            });
            writeln!(out, "{marker}")?;
            for tx in &block.txs {
                writeln!(out, "{}", serde_json::to_string(tx).map_err(io::Error::other)?)?;
            }
        }
        Ok(())
    }
}

/// Linear proration of an LP's price by the delivered share, with a
/// reputation drop of `penalty × shortfall`.
pub fn prorate(
    lp: &LatePaymentTx,
    delivered: f64,
    agreed: f64,
    penalty: f64,
) -> Result<(PriceUpdateTx, f64), LedgerError> {
    if delivered + AMOUNT_TOLERANCE >= agreed || agreed <= 0.0 {
        return Err(LedgerError::NotUnderDelivery { delivered, agreed });
    }
    let ratio = (delivered / agreed).clamp(0.0, 1.0);
    let pu = PriceUpdateTx {
        lp_id: lp.t_id,
        old_price: lp.price,
        new_price: (lp.price as f64 * ratio).round() as u64,
    };
    Ok((pu, penalty * (1.0 - ratio)))
}
