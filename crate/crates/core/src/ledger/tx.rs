//! Transaction types and their canonical encodings.

use serde::{Deserialize, Serialize};

use crate::apol::{ApolError, CoLProof, LocationCertificate};
use crate::codec::{b64, sha256, Digest, Encoder};
use crate::crypto::{verify, PublicKey, SignatureBytes, TxSigner};
use crate::market::AgentId;

/// An account or contract address on the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address(#[serde(with = "b64")] pub Digest);

impl Address {
    /// Address controlled by a public key.
    pub fn of_key(key: &PublicKey) -> Self {
        let mut buf = vec![0x02];
        buf.extend_from_slice(&key.0);
        Address(sha256(&buf))
    }

    /// Address of a named contract.
    pub fn contract(name: &str) -> Self {
        let mut buf = vec![0x03];
        buf.extend_from_slice(name.as_bytes());
        Address(sha256(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdKind {
    /// Producer offer at a price, ¢/kWh.
    Offer { price: f64 },
    /// Consumer ask for an amount, kWh.
    Ask { amount: f64 },
}

impl AdKind {
    fn encode(&self, enc: &mut Encoder) {
        match *self {
            AdKind::Offer { price } => enc.u8(0).f64(price),
            AdKind::Ask { amount } => enc.u8(1).f64(amount),
        };
    }
}

/// AT: an offer or ask published in the advertisement database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertisementTx {
    #[serde(with = "b64")]
    pub t_id: Digest,
    pub kind: AdKind,
    /// η of the advertiser
    pub reputation: f64,
    pub col: Option<CoLProof>,
}

impl AdvertisementTx {
    /// Bytes the leaf key signs inside the attached proof.
    pub fn signed_content(kind: &AdKind, reputation: f64) -> Vec<u8> {
        let mut enc = Encoder::new();
        kind.encode(&mut enc);
        enc.f64(reputation);
        enc.finish()
    }

    pub fn new(kind: AdKind, reputation: f64, cert: Option<&mut LocationCertificate>) -> Result<Self, ApolError> {
        let col = match cert {
            Some(cert) => Some(cert.prove(&Self::signed_content(&kind, reputation))?),
            None => None,
        };
        let mut at = Self {
            t_id: [0; 32],
            kind,
            reputation,
            col,
        };
        at.t_id = at.expected_id();
        Ok(at)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        self.kind.encode(enc);
        enc.f64(self.reputation);
        match &self.col {
            Some(p) => {
                enc.bool(true);
                p.encode_into(enc);
            }
            None => {
                enc.bool(false);
            }
        }
    }

    pub fn expected_id(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.digest()
    }

    pub fn sigma(&self) -> Option<u32> {
        self.col.as_ref().map(|p| p.sigma)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::Advertisement as u8).bytes(&self.t_id);
        self.encode_body(&mut enc);
        enc.finish()
    }
}

/// EN: the final agreed trade terms, signed by both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyNegotiationTx {
    #[serde(with = "b64")]
    pub t_id: Digest,
    /// kWh
    pub amount: f64,
    /// ¢/kWh
    pub price: f64,
    /// destination (producer)
    pub pk_d: PublicKey,
    pub sign_d: SignatureBytes,
    /// generator (consumer)
    pub pk: PublicKey,
    pub sign: SignatureBytes,
    pub agreement_p: bool,
    pub agreement_c: bool,
    /// Market interval of the agreement; repeats of the same terms in
    /// later intervals get distinct ids.
    pub nonce: u64,
}

impl EnergyNegotiationTx {
    #[allow(clippy::too_many_arguments)]
    fn content(
        nonce: u64,
        amount: f64,
        price: f64,
        pk_d: &PublicKey,
        pk: &PublicKey,
        agreement_p: bool,
        agreement_c: bool,
    ) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(nonce)
            .f64(amount)
            .f64(price)
            .bytes(&pk_d.0)
            .bytes(&pk.0)
            .bool(agreement_p)
            .bool(agreement_c);
        enc.finish()
    }

    pub fn signed_content(&self) -> Vec<u8> {
        Self::content(
            self.nonce,
            self.amount,
            self.price,
            &self.pk_d,
            &self.pk,
            self.agreement_p,
            self.agreement_c,
        )
    }

    /// Terms both parties accept, signed by each.
    pub fn agreed(amount: f64, price: f64, consumer: &dyn TxSigner, producer: &dyn TxSigner) -> Self {
        Self::with_flags(0, amount, price, consumer, producer, true, true)
    }

    pub fn with_flags(
        nonce: u64,
        amount: f64,
        price: f64,
        consumer: &dyn TxSigner,
        producer: &dyn TxSigner,
        agreement_p: bool,
        agreement_c: bool,
    ) -> Self {
        let (pk, pk_d) = (consumer.public_key(), producer.public_key());
        let content = Self::content(nonce, amount, price, &pk_d, &pk, agreement_p, agreement_c);
        let mut en = Self {
            t_id: [0; 32],
            amount,
            price,
            pk_d,
            sign_d: producer.sign_bytes(&content),
            pk,
            sign: consumer.sign_bytes(&content),
            agreement_p,
            agreement_c,
            nonce,
        };
        en.t_id = en.expected_id();
        en
    }

    pub fn signatures_valid(&self) -> bool {
        let content = self.signed_content();
        verify(&self.pk, &content, &self.sign) && verify(&self.pk_d, &content, &self.sign_d)
    }

    /// Total payment for the agreed terms, whole cents.
    pub fn total_cents(&self) -> u64 {
        (self.amount * self.price).round().max(0.0) as u64
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.bytes(&self.signed_content()).bytes(&self.sign_d.0).bytes(&self.sign.0);
    }

    pub fn expected_id(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.digest()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::Negotiation as u8).bytes(&self.t_id);
        self.encode_body(&mut enc);
        enc.finish()
    }
}

/// LP: the consumer's conditional payment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatePaymentTx {
    #[serde(with = "b64")]
    pub t_id: Digest,
    /// total, ¢
    pub price: u64,
    /// funding account
    pub input: Address,
    /// producer key from the EN
    pub output: PublicKey,
    #[serde(with = "b64")]
    pub en_ref: Digest,
    /// last tick at which a matching EI is accepted
    pub expiry: u64,
    pub sign: SignatureBytes,
}

impl LatePaymentTx {
    fn content(price: u64, input: &Address, output: &PublicKey, en_ref: &Digest, expiry: u64) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(price).bytes(&input.0).bytes(&output.0).bytes(en_ref).u64(expiry);
        enc.finish()
    }

    pub fn signed_content(&self) -> Vec<u8> {
        Self::content(self.price, &self.input, &self.output, &self.en_ref, self.expiry)
    }

    pub fn new(price: u64, input: Address, en: &EnergyNegotiationTx, expiry: u64, consumer: &dyn TxSigner) -> Self {
        let content = Self::content(price, &input, &en.pk_d, &en.t_id, expiry);
        let mut lp = Self {
            t_id: [0; 32],
            price,
            input,
            output: en.pk_d,
            en_ref: en.t_id,
            expiry,
            sign: consumer.sign_bytes(&content),
        };
        lp.t_id = lp.expected_id();
        lp
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.bytes(&self.signed_content()).bytes(&self.sign.0);
    }

    pub fn expected_id(&self) -> Digest {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.digest()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::LatePayment as u8).bytes(&self.t_id);
        self.encode_body(&mut enc);
        enc.finish()
    }
}

/// EI: two-of-two signed record of the energy actually injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyInjectionTx {
    /// kWh
    pub amount: f64,
    #[serde(with = "b64")]
    pub lp_id: Digest,
    pub pk_p: PublicKey,
    pub sign_p: SignatureBytes,
    pub pk_c: PublicKey,
    pub sign_c: SignatureBytes,
}

impl EnergyInjectionTx {
    fn content(amount: f64, lp_id: &Digest, pk_p: &PublicKey, pk_c: &PublicKey) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.f64(amount).bytes(lp_id).bytes(&pk_p.0).bytes(&pk_c.0);
        enc.finish()
    }

    pub fn signed_content(&self) -> Vec<u8> {
        Self::content(self.amount, &self.lp_id, &self.pk_p, &self.pk_c)
    }

    pub fn new(amount: f64, lp: &LatePaymentTx, producer: &dyn TxSigner, consumer: &dyn TxSigner) -> Self {
        let (pk_p, pk_c) = (producer.public_key(), consumer.public_key());
        let content = Self::content(amount, &lp.t_id, &pk_p, &pk_c);
        Self {
            amount,
            lp_id: lp.t_id,
            pk_p,
            sign_p: producer.sign_bytes(&content),
            pk_c,
            sign_c: consumer.sign_bytes(&content),
        }
    }

    pub fn signatures_valid(&self) -> bool {
        let content = self.signed_content();
        verify(&self.pk_p, &content, &self.sign_p) && verify(&self.pk_c, &content, &self.sign_c)
    }

    pub fn id(&self) -> Digest {
        sha256(&self.encode())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::Injection as u8)
            .bytes(&self.signed_content())
            .bytes(&self.sign_p.0)
            .bytes(&self.sign_c.0);
        enc.finish()
    }
}

/// PU: price correction issued by the dispute contract, ¢.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceUpdateTx {
    #[serde(with = "b64")]
    pub lp_id: Digest,
    pub old_price: u64,
    pub new_price: u64,
}

impl PriceUpdateTx {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::PriceUpdate as u8)
            .bytes(&self.lp_id)
            .u64(self.old_price)
            .u64(self.new_price);
        enc.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub agent: AgentId,
    pub old: f64,
    pub new: f64,
    pub source: Address,
}

impl ReputationRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(TxKind::Reputation as u8)
            .u32(self.agent.0)
            .f64(self.old)
            .f64(self.new)
            .bytes(&self.source.0);
        enc.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Advertisement = 1,
    Negotiation = 2,
    LatePayment = 3,
    Injection = 4,
    PriceUpdate = 5,
    Reputation = 6,
}

impl TxKind {
    pub fn label(self) -> &'static str {
        match self {
            TxKind::Advertisement => "AT",
            TxKind::Negotiation => "EN",
            TxKind::LatePayment => "LP",
            TxKind::Injection => "EI",
            TxKind::PriceUpdate => "PU",
            TxKind::Reputation => "REP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerTx {
    Advertisement(AdvertisementTx),
    Negotiation(EnergyNegotiationTx),
    LatePayment(LatePaymentTx),
    Injection(EnergyInjectionTx),
    PriceUpdate(PriceUpdateTx),
    Reputation(ReputationRecord),
}

impl LedgerTx {
    pub fn kind(&self) -> TxKind {
        match self {
            LedgerTx::Advertisement(_) => TxKind::Advertisement,
            LedgerTx::Negotiation(_) => TxKind::Negotiation,
            LedgerTx::LatePayment(_) => TxKind::LatePayment,
            LedgerTx::Injection(_) => TxKind::Injection,
            LedgerTx::PriceUpdate(_) => TxKind::PriceUpdate,
            LedgerTx::Reputation(_) => TxKind::Reputation,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            LedgerTx::Advertisement(t) => t.encode(),
            LedgerTx::Negotiation(t) => t.encode(),
            LedgerTx::LatePayment(t) => t.encode(),
            LedgerTx::Injection(t) => t.encode(),
            LedgerTx::PriceUpdate(t) => t.encode(),
            LedgerTx::Reputation(t) => t.encode(),
        }
    }
}
