//! Anonymous proof of location.
//!
//! A meter receives a key pair from the certificate authority (CA) at
//! installation. To prove its location without revealing that key, it
//! commits to a batch of fresh keys in a Merkle tree and asks a randomly
//! chosen verifier meter to sign `H(MTR, σ)`. Any leaf key can then carry
//! the certificate: a proof shows the leaf is in the tree, signs the
//! message with it, and names the verifier, whose key the CA vouches for.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use log::warn;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{b64, sha256, DecodeError, Decoder, Digest, Encoder, DIGEST_LEN};
use crate::crypto::{verify, Keypair, PublicKey, SignatureBytes, TxSigner, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::grid::BusId;

/// Default number of leaf keys in a commitment.
pub const DEFAULT_LEAF_COUNT: usize = 8;

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApolError {
    #[error("requester key is not registered with the CA")]
    UnregisteredRequester,
    #[error("verifier key is not registered with the CA")]
    UnregisteredVerifier,
    #[error("request signature does not verify")]
    BadSignature,
    #[error("request identifier does not match its content")]
    TransactionIdMismatch,
    #[error("a commitment needs at least one leaf")]
    EmptyCommitment,
    #[error("leaf index {index} out of range for {count} leaves")]
    LeafOutOfRange { index: usize, count: usize },
    #[error("all {0} leaf keys of the commitment have been used")]
    LeafExhausted(usize),
    #[error("no registered meter other than the requester can verify")]
    NoVerifier,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// How finely the noisy location σ reports a bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "buses", rename_all = "snake_case")]
pub enum SigmaResolution {
    #[default]
    Bus,
    /// Consecutive runs of this many buses share one σ.
    Segment(u32),
}

impl SigmaResolution {
    pub fn quantize(self, bus: BusId) -> u32 {
        match self {
            SigmaResolution::Bus => bus,
            SigmaResolution::Segment(0 | 1) => bus,
            SigmaResolution::Segment(n) => bus.saturating_sub(1) / n,
        }
    }
}

/// Key material and location of one smart meter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterIdentity {
    keys: Keypair,
    location: BusId,
    sigma: u32,
}

impl MeterIdentity {
    pub fn public_key(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn location(&self) -> BusId {
        self.location
    }

    pub fn sigma(&self) -> u32 {
        self.sigma
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        self.keys.sign(message)
    }
}

impl TxSigner for MeterIdentity {
    fn public_key(&self) -> PublicKey {
        self.keys.public()
    }

    fn sign_bytes(&self, message: &[u8]) -> SignatureBytes {
        self.keys.sign(message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issuance {
    pub serial: u64,
    pub key: PublicKey,
}

#[derive(Debug, Default)]
struct CaState {
    locations: BTreeMap<PublicKey, BusId>,
    log: Vec<Issuance>,
}

/// Certificate authority run by the grid operator. Queries only reveal
/// whether a key is genuine, never where its meter sits.
#[derive(Debug, Default)]
pub struct CaRegistry {
    resolution: SigmaResolution,
    state: RwLock<CaState>,
}

impl CaRegistry {
    pub fn new(resolution: SigmaResolution) -> Self {
        Self {
            resolution,
            state: RwLock::default(),
        }
    }

    pub fn resolution(&self) -> SigmaResolution {
        self.resolution
    }

    /// Deploy a fresh key pair at `location` and record it.
    pub fn install_meter(&self, location: BusId, rng: &mut impl RngCore) -> MeterIdentity {
        let mut state = self.state.write().expect("CA lock poisoned");
        let keys = loop {
            let kp = Keypair::generate(rng);
            if !state.locations.contains_key(&kp.public()) {
                break kp;
            }
        };
        let key = keys.public();
        state.locations.insert(key, location);
        let serial = state.log.len() as u64;
        state.log.push(Issuance { serial, key });
        MeterIdentity {
            keys,
            location,
            sigma: self.resolution.quantize(location),
        }
    }

    pub fn is_genuine(&self, key: &PublicKey) -> bool {
        self.state.read().expect("CA lock poisoned").locations.contains_key(key)
    }

    /// Registered keys in installation order.
    pub fn registered_keys(&self) -> Vec<PublicKey> {
        self.state.read().expect("CA lock poisoned").log.iter().map(|i| i.key).collect()
    }

    pub fn issuance_log(&self) -> Vec<Issuance> {
        self.state.read().expect("CA lock poisoned").log.clone()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("CA lock poisoned").log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform pick among registered meters other than the requester.
pub fn select_verifier(
    ca: &CaRegistry,
    requester: &PublicKey,
    rng: &mut impl RngCore,
) -> Result<PublicKey, ApolError> {
    let candidates: Vec<_> = ca.registered_keys().into_iter().filter(|k| k != requester).collect();
    candidates.choose(rng).copied().ok_or(ApolError::NoVerifier)
}

pub fn leaf_hash(key: &PublicKey) -> Digest {
    let mut buf = Vec::with_capacity(1 + PUBLIC_KEY_LEN);
    buf.push(LEAF_TAG);
    buf.extend_from_slice(&key.0);
    sha256(&buf)
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut buf = Vec::with_capacity(1 + 2 * DIGEST_LEN);
    buf.push(NODE_TAG);
    buf.extend_from_slice(left);
    buf.extend_from_slice(right);
    sha256(&buf)
}

/// Inclusion path: leaf position and the sibling digests from the leaf up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerklePath {
    pub index: u32,
    #[serde(with = "digest_list")]
    pub siblings: Vec<Digest>,
}

impl MerklePath {
    /// Root implied by `key` sitting at this path, if the index fits the
    /// path height.
    pub fn root_for(&self, key: &PublicKey) -> Option<Digest> {
        let height = self.siblings.len();
        if height < 32 && (self.index as u64) >> height != 0 {
            return None;
        }
        let mut acc = leaf_hash(key);
        for (level, sib) in self.siblings.iter().enumerate() {
            acc = if (self.index >> level) & 1 == 0 {
                node_hash(&acc, sib)
            } else {
                node_hash(sib, &acc)
            };
        }
        Some(acc)
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.index);
        enc.list(&self.siblings, |e, d| {
            e.bytes(d);
        });
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let index = dec.u32()?;
        let siblings = dec.list(|d| d.fixed::<DIGEST_LEN>())?;
        Ok(Self { index, siblings })
    }
}

/// Merkle tree over fresh leaf keys. The leaf level is padded to a power
/// of two by repeating the last leaf hash.
#[derive(Debug, Clone, PartialEq)]
pub struct MerkleCommitment {
    leaves: Vec<Keypair>,
    /// `levels[0]` are the leaf hashes padded to a power of two; the last
    /// level holds the root alone.
    levels: Vec<Vec<Digest>>,
}

impl MerkleCommitment {
    pub fn from_keys(leaves: Vec<Keypair>) -> Result<Self, ApolError> {
        if leaves.is_empty() {
            return Err(ApolError::EmptyCommitment);
        }
        let mut level: Vec<Digest> = leaves.iter().map(|k| leaf_hash(&k.public())).collect();
        let width = level.len().next_power_of_two();
        let last = *level.last().expect("non-empty");
        level.resize(width, last);
        let mut levels = vec![level];
        while levels.last().expect("non-empty").len() > 1 {
            let next = levels
                .last()
                .expect("non-empty")
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        Ok(Self { leaves, levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaf_key(&self, index: usize) -> Result<PublicKey, ApolError> {
        self.keypair(index).map(Keypair::public)
    }

    fn keypair(&self, index: usize) -> Result<&Keypair, ApolError> {
        self.leaves.get(index).ok_or(ApolError::LeafOutOfRange {
            index,
            count: self.leaves.len(),
        })
    }

    pub fn path(&self, index: usize) -> Result<MerklePath, ApolError> {
        self.keypair(index)?;
        let siblings = self.levels[..self.height()]
            .iter()
            .enumerate()
            .map(|(level, nodes)| nodes[(index >> level) ^ 1])
            .collect();
        Ok(MerklePath {
            index: index as u32,
            siblings,
        })
    }

    pub fn sign_with_leaf(&self, index: usize, message: &[u8]) -> Result<SignatureBytes, ApolError> {
        Ok(self.keypair(index)?.sign(message))
    }

    /// Signing handle for one leaf key.
    pub fn leaf_signer(&self, index: usize) -> Result<&Keypair, ApolError> {
        self.keypair(index)
    }
}

pub fn build_commitment(leaf_count: usize, rng: &mut impl RngCore) -> Result<MerkleCommitment, ApolError> {
    if leaf_count == 0 {
        return Err(ApolError::EmptyCommitment);
    }
    MerkleCommitment::from_keys((0..leaf_count).map(|_| Keypair::generate(rng)).collect())
}

/// What to do once every leaf key has been used once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafPolicy {
    /// Refuse further attachments.
    #[default]
    Strict,
    /// Start over from leaf 0, logging a warning: repeated keys make
    /// transactions linkable.
    Reuse,
}

/// Hands out leaf indices, a fresh one per attachment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LeafAllocator {
    count: usize,
    used: BTreeSet<usize>,
    next: usize,
    policy: LeafPolicy,
}

impl LeafAllocator {
    pub fn new(count: usize, policy: LeafPolicy) -> Self {
        Self {
            count,
            policy,
            ..Self::default()
        }
    }

    pub fn next_leaf(&mut self) -> Result<usize, ApolError> {
        if self.count == 0 {
            return Err(ApolError::EmptyCommitment);
        }
        if self.used.len() == self.count {
            match self.policy {
                LeafPolicy::Strict => return Err(ApolError::LeafExhausted(self.count)),
                LeafPolicy::Reuse => warn!(
                    "all {} leaf keys used; reusing keys makes transactions linkable",
                    self.count
                ),
            }
        }
        let leaf = self.next % self.count;
        self.next += 1;
        self.used.insert(leaf);
        Ok(leaf)
    }

    pub fn used(&self) -> usize {
        self.used.len()
    }
}

fn hash_location(mtr: &Digest, sigma: u32) -> Digest {
    let mut enc = Encoder::new();
    enc.bytes(mtr).u32(sigma);
    enc.digest()
}

/// `<T_ID, MTR, σ, PK, Sign>` sent by a meter to its verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoLRequest {
    #[serde(with = "b64")]
    pub t_id: Digest,
    #[serde(with = "b64")]
    pub mtr: Digest,
    pub sigma: u32,
    pub pk: PublicKey,
    pub sign: SignatureBytes,
}

impl CoLRequest {
    fn signed_content(mtr: &Digest, sigma: u32, pk: &PublicKey) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(mtr).u32(sigma).bytes(&pk.0);
        enc.finish()
    }

    fn id_for(mtr: &Digest, sigma: u32, pk: &PublicKey, sign: &SignatureBytes) -> Digest {
        let mut enc = Encoder::new();
        enc.bytes(mtr).u32(sigma).bytes(&pk.0).bytes(&sign.0);
        enc.digest()
    }

    pub fn expected_id(&self) -> Digest {
        Self::id_for(&self.mtr, self.sigma, &self.pk, &self.sign)
    }

    pub fn signature_valid(&self) -> bool {
        verify(&self.pk, &Self::signed_content(&self.mtr, self.sigma, &self.pk), &self.sign)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(&self.t_id).bytes(&self.mtr).u32(self.sigma).bytes(&self.pk.0).bytes(&self.sign.0);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ApolError> {
        let mut dec = Decoder::new(bytes);
        let out = Self {
            t_id: dec.fixed()?,
            mtr: dec.fixed()?,
            sigma: dec.u32()?,
            pk: PublicKey(dec.fixed()?),
            sign: SignatureBytes(dec.fixed()?),
        };
        dec.finish()?;
        Ok(out)
    }

    pub fn to_debug_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("request serializes")
    }
}

pub fn request_col(meter: &MeterIdentity, commit: &MerkleCommitment) -> CoLRequest {
    let mtr = commit.root();
    let pk = meter.public_key();
    let sign = meter.sign(&CoLRequest::signed_content(&mtr, meter.sigma, &pk));
    CoLRequest {
        t_id: CoLRequest::id_for(&mtr, meter.sigma, &pk, &sign),
        mtr,
        sigma: meter.sigma,
        pk,
        sign,
    }
}

/// `<CoL, PK_ver, Sign_ver>` returned by the verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoLResponse {
    pub col: SignatureBytes,
    pub pk_ver: PublicKey,
    pub sign_ver: SignatureBytes,
}

fn response_content(col: &SignatureBytes, pk_ver: &PublicKey) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(&col.0).bytes(&pk_ver.0);
    enc.finish()
}

/// Sign `H(MTR, σ)` for a genuine requester.
pub fn issue_col(verifier: &MeterIdentity, req: &CoLRequest, ca: &CaRegistry) -> Result<CoLResponse, ApolError> {
    if !ca.is_genuine(&verifier.public_key()) {
        return Err(ApolError::UnregisteredVerifier);
    }
    if !req.signature_valid() {
        return Err(ApolError::BadSignature);
    }
    if req.expected_id() != req.t_id {
        return Err(ApolError::TransactionIdMismatch);
    }
    if !ca.is_genuine(&req.pk) {
        return Err(ApolError::UnregisteredRequester);
    }
    Ok(sign_location(verifier, &req.mtr, req.sigma))
}

fn sign_location(verifier: &MeterIdentity, mtr: &Digest, sigma: u32) -> CoLResponse {
    let col = verifier.sign(&hash_location(mtr, sigma));
    let pk_ver = verifier.public_key();
    let sign_ver = verifier.sign(&response_content(&col, &pk_ver));
    CoLResponse { col, pk_ver, sign_ver }
}

/// `CoL_f = (CoL, PK_ver, Sign_ver, MTR, σ, PK_A, MTL_A, Sign_A)`. The
/// prover's CA key is deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoLProof {
    pub col: SignatureBytes,
    pub pk_ver: PublicKey,
    pub sign_ver: SignatureBytes,
    #[serde(with = "b64")]
    pub mtr: Digest,
    pub sigma: u32,
    pub pk_a: PublicKey,
    pub mtl_a: MerklePath,
    pub sign_a: SignatureBytes,
}

impl CoLProof {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&self.col.0)
            .bytes(&self.pk_ver.0)
            .bytes(&self.sign_ver.0)
            .bytes(&self.mtr)
            .u32(self.sigma)
            .bytes(&self.pk_a.0);
        self.mtl_a.encode(enc);
        enc.bytes(&self.sign_a.0);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ApolError> {
        let mut dec = Decoder::new(bytes);
        let out = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(out)
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, ApolError> {
        Ok(Self {
            col: SignatureBytes(dec.fixed::<SIGNATURE_LEN>()?),
            pk_ver: PublicKey(dec.fixed()?),
            sign_ver: SignatureBytes(dec.fixed()?),
            mtr: dec.fixed()?,
            sigma: dec.u32()?,
            pk_a: PublicKey(dec.fixed()?),
            mtl_a: MerklePath::decode(dec)?,
            sign_a: SignatureBytes(dec.fixed()?),
        })
    }

    pub fn to_debug_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("proof serializes")
    }
}

pub fn attach_proof(
    commit: &MerkleCommitment,
    response: &CoLResponse,
    sigma: u32,
    leaf: usize,
    message: &[u8],
) -> Result<CoLProof, ApolError> {
    Ok(CoLProof {
        col: response.col,
        pk_ver: response.pk_ver,
        sign_ver: response.sign_ver,
        mtr: commit.root(),
        sigma,
        pk_a: commit.leaf_key(leaf)?,
        mtl_a: commit.path(leaf)?,
        sign_a: commit.sign_with_leaf(leaf, message)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStep {
    /// PK_A is a leaf of MTR.
    Inclusion = 1,
    /// Sign_A verifies under PK_A.
    LeafSignature = 2,
    /// CoL signs H(MTR, σ) under PK_ver and Sign_ver covers the response.
    Certificate = 3,
    /// The CA vouches for PK_ver.
    VerifierGenuine = 4,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[error("proof rejected at step {} ({step:?})", *.step as u8)]
pub struct Rejection {
    pub step: VerificationStep,
}

pub fn verify_col(proof: &CoLProof, ca: &CaRegistry, message: &[u8]) -> Result<(), Rejection> {
    let reject = |step| Err(Rejection { step });
    if proof.mtl_a.root_for(&proof.pk_a) != Some(proof.mtr) {
        return reject(VerificationStep::Inclusion);
    }
    if !verify(&proof.pk_a, message, &proof.sign_a) {
        return reject(VerificationStep::LeafSignature);
    }
    let certified = verify(&proof.pk_ver, &hash_location(&proof.mtr, proof.sigma), &proof.col)
        && verify(&proof.pk_ver, &response_content(&proof.col, &proof.pk_ver), &proof.sign_ver);
    if !certified {
        return reject(VerificationStep::Certificate);
    }
    if !ca.is_genuine(&proof.pk_ver) {
        return reject(VerificationStep::VerifierGenuine);
    }
    Ok(())
}

/// A meter's full certificate state: its commitment, the verifier's
/// response and the leaf allocator.
#[derive(Debug, Clone)]
pub struct LocationCertificate {
    pub commitment: MerkleCommitment,
    pub response: CoLResponse,
    pub sigma: u32,
    pub leaves: LeafAllocator,
}

impl LocationCertificate {
    /// Proof over `message` using the next unused leaf.
    pub fn prove(&mut self, message: &[u8]) -> Result<CoLProof, ApolError> {
        let leaf = self.leaves.next_leaf()?;
        attach_proof(&self.commitment, &self.response, self.sigma, leaf, message)
    }

}

/// Full round: commit, pick a verifier among `meters`, request and receive
/// the CoL.
pub fn certify(
    meter: &MeterIdentity,
    meters: &BTreeMap<PublicKey, MeterIdentity>,
    ca: &CaRegistry,
    leaf_count: usize,
    policy: LeafPolicy,
    rng: &mut impl RngCore,
) -> Result<LocationCertificate, ApolError> {
    let commitment = build_commitment(leaf_count, rng)?;
    let verifier_key = select_verifier(ca, &meter.public_key(), rng)?;
    let verifier = meters.get(&verifier_key).ok_or(ApolError::NoVerifier)?;
    let request = request_col(meter, &commitment);
    let response = issue_col(verifier, &request, ca)?;
    Ok(LocationCertificate {
        leaves: LeafAllocator::new(commitment.leaf_count(), policy),
        commitment,
        response,
        sigma: meter.sigma,
    })
}

/// Outcome of one scripted attack in [`audit`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: String,
    pub expected: VerificationStep,
    /// `None` when the forged proof was accepted.
    pub rejected_at: Option<VerificationStep>,
}

impl AttackOutcome {
    pub fn passed(&self) -> bool {
        self.rejected_at == Some(self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafCountAudit {
    pub leaf_count: usize,
    pub accepted: usize,
    /// Encoded size of the first proof, bytes.
    pub proof_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub leaf_counts: Vec<LeafCountAudit>,
    pub attacks: Vec<AttackOutcome>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.leaf_counts.iter().all(|l| l.accepted == l.leaf_count) && self.attacks.iter().all(AttackOutcome::passed)
    }
}

/// Certifies a fresh meter for every leaf count, proves and verifies on
/// each leaf, then runs the replay, rogue-verifier and moved-σ forgeries.
pub fn audit(leaf_counts: &[usize], rng: &mut impl RngCore) -> Result<AuditReport, ApolError> {
    const MESSAGE: &[u8] = b"audit";
    let ca = CaRegistry::new(SigmaResolution::Bus);
    let prover = ca.install_meter(7, rng);
    let verifier = ca.install_meter(12, rng);

    let mut rows = Vec::with_capacity(leaf_counts.len());
    let mut sample = None;
    for &m in leaf_counts {
        let commit = build_commitment(m, rng)?;
        let response = issue_col(&verifier, &request_col(&prover, &commit), &ca)?;
        let mut accepted = 0;
        let mut proof_bytes = 0;
        for leaf in 0..m {
            let proof = attach_proof(&commit, &response, prover.sigma(), leaf, MESSAGE)?;
            if leaf == 0 {
                proof_bytes = proof.encode().len();
            }
            accepted += usize::from(verify_col(&proof, &ca, MESSAGE).is_ok());
            sample.get_or_insert(proof);
        }
        rows.push(LeafCountAudit {
            leaf_count: m,
            accepted,
            proof_bytes,
        });
    }
    let honest = match sample {
        Some(p) => p,
        None => {
            let commit = build_commitment(1, rng)?;
            let response = issue_col(&verifier, &request_col(&prover, &commit), &ca)?;
            attach_proof(&commit, &response, prover.sigma(), 0, MESSAGE)?
        }
    };

    let thief = Keypair::generate(rng);
    let replay = CoLProof {
        pk_a: thief.public(),
        sign_a: thief.sign(MESSAGE),
        ..honest.clone()
    };

    // A verifier the real CA never installed, certifying a tree of its own.
    let rogue_ca = CaRegistry::new(SigmaResolution::Bus);
    let rogue_prover = rogue_ca.install_meter(7, rng);
    let rogue_verifier = rogue_ca.install_meter(12, rng);
    let rogue_commit = build_commitment(1, rng)?;
    let rogue_response = issue_col(&rogue_verifier, &request_col(&rogue_prover, &rogue_commit), &rogue_ca)?;
    let fake_verifier = attach_proof(&rogue_commit, &rogue_response, rogue_prover.sigma(), 0, MESSAGE)?;

    let moved = CoLProof {
        sigma: honest.sigma + 1,
        ..honest
    };

    let attacks = [
        ("col_replay_foreign_key", replay, VerificationStep::Inclusion),
        ("fake_verifier_key", fake_verifier, VerificationStep::VerifierGenuine),
        ("tampered_sigma", moved, VerificationStep::Certificate),
    ]
    .into_iter()
    .map(|(name, proof, expected)| AttackOutcome {
        attack: name.to_string(),
        expected,
        rejected_at: verify_col(&proof, &ca, MESSAGE).err().map(|r| r.step),
    })
    .collect();
    Ok(AuditReport {
        leaf_counts: rows,
        attacks,
    })
}

mod digest_list {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::codec::{b64, Digest};

    pub fn serialize<S: Serializer>(v: &[Digest], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| b64::encode(d)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Digest>, D::Error> {
        use base64::engine::general_purpose::STANDARD;
        use base64::Engine as _;
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| {
                let raw = STANDARD.decode(s).map_err(serde::de::Error::custom)?;
                Digest::try_from(raw).map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
            })
            .collect()
    }
}
