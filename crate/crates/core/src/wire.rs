//! Canonical documents, signed envelopes and endpoint names.
//!
//! Documents are JSON values encoded with sorted keys and no insignificant
//! whitespace. An envelope travels as
//!
//! ```text
//! [body length: u32 BE][canonical header document][body bytes][token: 32 bytes]
//! ```
//!
//! and the token is an HMAC-SHA256 over everything before it, keyed by the
//! ordered site-pair key.

use std::fmt;
use std::str::FromStr;

use base64::Engine;
use hmac::{KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    Activity, ActorKind, Audience, CacheMode, ContentType, Domain, MessageId, ObjectId, ProfileDoc, SocialId,
    Tick,
};
use crate::privacy::{Principal, Resource};

pub type Document = serde_json::Value;
type HmacSha256 = hmac::Hmac<Sha256>;

pub const TOKEN_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
}

/// Canonical bytes of a document.
pub fn encode(doc: &Document) -> Vec<u8> {
    // serde_json's default map is a BTreeMap, so keys come out sorted.
    serde_json::to_vec(doc).expect("documents always serialize")
}

pub fn decode(bytes: &[u8]) -> Result<Document, WireError> {
    serde_json::from_slice(bytes).map_err(|e| WireError::MalformedDocument(e.to_string()))
}

/// Serializes a typed value as a canonical document.
pub fn to_document<T: Serialize>(value: &T) -> Document {
    serde_json::to_value(value).expect("protocol types always serialize")
}

pub fn from_document<T: for<'de> Deserialize<'de>>(doc: &Document) -> Result<T, WireError> {
    T::deserialize(doc).map_err(|e| WireError::MalformedDocument(e.to_string()))
}

pub fn encode_value<T: Serialize>(value: &T) -> Vec<u8> {
    encode(&to_document(value))
}

pub fn decode_value<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, WireError> {
    from_document(&decode(bytes)?)
}

/// Symmetric key for one ordered (from, to) site pair.
#[derive(Clone, PartialEq, Eq)]
pub struct SitePairKey {
    pub from: Domain,
    pub to: Domain,
    key: [u8; 32],
}

impl fmt::Debug for SitePairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SitePairKey({} -> {})", self.from, self.to)
    }
}

impl SitePairKey {
    /// Derived from the simulation seed and the ordered pair.
    pub fn derive(seed: u64, from: &Domain, to: &Domain) -> Self {
        let mut h = Sha256::new();
        h.update(b"fedsim/site-pair-key/v1");
        h.update(seed.to_be_bytes());
        h.update(from.as_str().as_bytes());
        h.update([0u8]);
        h.update(to.as_str().as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        SitePairKey { from: from.clone(), to: to.clone(), key }
    }

    pub fn mac(&self, data: &[u8]) -> [u8; TOKEN_LEN] {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac takes any key length");
        mac.update(data);
        let mut out = [0u8; TOKEN_LEN];
        out.copy_from_slice(&mac.finalize().into_bytes());
        out
    }

    pub fn check(&self, data: &[u8], token: &[u8]) -> bool {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac takes any key length");
        mac.update(data);
        mac.verify_slice(token).is_ok()
    }
}

/// Source of pair keys, shared by every site of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keyring {
    seed: u64,
}

impl Keyring {
    pub fn new(seed: u64) -> Self {
        Keyring { seed }
    }

    pub fn pair(&self, from: &Domain, to: &Domain) -> SitePairKey {
        SitePairKey::derive(self.seed, from, to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeHeader {
    pub from: Domain,
    pub to: Domain,
    pub endpoint: String,
    pub message_id: MessageId,
    pub sent_tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<MessageId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub header: EnvelopeHeader,
    pub body: Vec<u8>,
    pub token: [u8; TOKEN_LEN],
}

fn signed_bytes(header: &EnvelopeHeader, body: &[u8]) -> Vec<u8> {
    let header = encode_value(header);
    let mut out = Vec::with_capacity(4 + header.len() + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(body);
    out
}

/// Authenticity token over the header fields and body.
pub fn sign(key: &SitePairKey, header: &EnvelopeHeader, body: &[u8]) -> [u8; TOKEN_LEN] {
    key.mac(&signed_bytes(header, body))
}

/// True iff the token matches the header and body under `key`.
pub fn verify(key: &SitePairKey, envelope: &Envelope) -> bool {
    key.from == envelope.header.from
        && key.to == envelope.header.to
        && key.check(&signed_bytes(&envelope.header, &envelope.body), &envelope.token)
}

impl Envelope {
    pub fn seal(key: &SitePairKey, header: EnvelopeHeader, body: Vec<u8>) -> Self {
        let token = sign(key, &header, &body);
        Envelope { header, body, token }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = signed_bytes(&self.header, &self.body);
        out.extend_from_slice(&self.token);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 4 + TOKEN_LEN {
            return Err(WireError::MalformedEnvelope("truncated".into()));
        }
        let body_len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let rest = &bytes[4..bytes.len() - TOKEN_LEN];
        if body_len > rest.len() {
            return Err(WireError::MalformedEnvelope("body length exceeds frame".into()));
        }
        let (header, body) = rest.split_at(rest.len() - body_len);
        let raw_header = header;
        let header: EnvelopeHeader =
            decode_value(raw_header).map_err(|e| WireError::MalformedEnvelope(e.to_string()))?;
        // The token is checked over the re-encoded header, so only the
        // canonical spelling of a header is accepted.
        if encode_value(&header) != raw_header {
            return Err(WireError::MalformedEnvelope("non-canonical header".into()));
        }
        let mut token = [0u8; TOKEN_LEN];
        token.copy_from_slice(&bytes[bytes.len() - TOKEN_LEN..]);
        Ok(Envelope { header, body: body.to_vec(), token })
    }

    pub fn body_document(&self) -> Result<Document, WireError> {
        decode(&self.body)
    }
}

/// Decodes a framed envelope and checks its token with the keyring.
pub fn verify_frame(keys: &Keyring, bytes: &[u8]) -> bool {
    match Envelope::from_bytes(bytes) {
        Ok(env) => verify(&keys.pair(&env.header.from, &env.header.to), &env),
        Err(_) => false,
    }
}

/// Endpoint names in the simulated wire namespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Discovery,
    Profile(String),
    Contacts(String),
    Collection(String, String),
    Object(String),
    ObjectSubscribe(String),
    Feed(String),
    FeedSubscribe(String),
    ProfileSubscribe(String),
    Inbox,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Discovery => f.write_str("/.well-known/social"),
            Endpoint::Profile(l) => write!(f, "/profile/{l}"),
            Endpoint::ProfileSubscribe(l) => write!(f, "/profile/{l}/subscribe"),
            Endpoint::Contacts(l) => write!(f, "/contacts/{l}"),
            Endpoint::Collection(l, n) => write!(f, "/collection/{l}/{n}"),
            Endpoint::Object(l) => write!(f, "/object/{l}"),
            Endpoint::ObjectSubscribe(l) => write!(f, "/object/{l}/subscribe"),
            Endpoint::Feed(l) => write!(f, "/feed/{l}"),
            Endpoint::FeedSubscribe(l) => write!(f, "/feed/{l}/subscribe"),
            Endpoint::Inbox => f.write_str("/inbox"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WireError::MalformedEnvelope(format!("unknown endpoint `{s}`"));
        if s == "/.well-known/social" {
            return Ok(Endpoint::Discovery);
        }
        if s == "/inbox" {
            return Ok(Endpoint::Inbox);
        }
        let parts: Vec<&str> = s.strip_prefix('/').ok_or_else(bad)?.split('/').collect();
        let nonempty = |p: &str| if p.is_empty() { Err(bad()) } else { Ok(p.to_string()) };
        match parts.as_slice() {
            ["profile", l] => Ok(Endpoint::Profile(nonempty(l)?)),
            ["profile", l, "subscribe"] => Ok(Endpoint::ProfileSubscribe(nonempty(l)?)),
            ["contacts", l] => Ok(Endpoint::Contacts(nonempty(l)?)),
            ["collection", l, n] => Ok(Endpoint::Collection(nonempty(l)?, nonempty(n)?)),
            ["feed", l] => Ok(Endpoint::Feed(nonempty(l)?)),
            ["feed", l, "subscribe"] => Ok(Endpoint::FeedSubscribe(nonempty(l)?)),
            ["object", rest @ ..] if !rest.is_empty() => {
                if rest.len() > 1 && rest[rest.len() - 1] == "subscribe" {
                    Ok(Endpoint::ObjectSubscribe(nonempty(&rest[..rest.len() - 1].join("/"))?))
                } else {
                    Ok(Endpoint::Object(nonempty(&rest.join("/"))?))
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Bytes carried inside JSON documents as standard base64.
pub mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => s.serialize_some(&base64::engine::general_purpose::STANDARD.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| base64::engine::general_purpose::STANDARD.decode(t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Object representation exchanged between sites.
///
/// When `payload` is present the document is payload-bearing and
/// `authorized_for` names the principal the serving site cleared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDoc {
    pub id: ObjectId,
    pub content_type: ContentType,
    pub revision: u64,
    pub author: SocialId,
    pub owner: SocialId,
    pub audience: Audience,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mentions: Vec<SocialId>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeSet::is_empty")]
    pub editors: std::collections::BTreeSet<SocialId>,
    pub deleted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "b64")]
    pub payload: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorized_for: Option<Principal>,
}

/// Profile snapshot pushed to a subscriber, already filtered by its scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub profile: ProfileDoc,
    pub epoch: u64,
}

/// Body of an `/inbox` envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Notice {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<Activity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSnapshot>,
}

/// Which (principal, resource) a payload-bearing body was released to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayloadClaim {
    /// No payload in the body.
    None,
    Cleared { principal: Principal, resource: Resource },
    /// Payload bytes with no clearing principal.
    Unattributed,
}

/// Inspects a body document for payload bytes or non-empty profile attributes.
pub fn payload_claim(to: &Domain, body: &Document) -> PayloadClaim {
    let object = body.get("object").filter(|o| o.is_object()).unwrap_or(body);
    if object.get("payload").map(|p| !p.is_null()).unwrap_or(false) {
        let id = object.get("id").and_then(|v| v.as_str()).and_then(|s| ObjectId::parse(s).ok());
        let principal = object.get("authorized_for").and_then(|p| Principal::deserialize(p).ok());
        return match (id, principal) {
            (Some(id), Some(principal)) => PayloadClaim::Cleared { principal, resource: Resource::Object(id) },
            _ => PayloadClaim::Unattributed,
        };
    }
    let profile = body.get("profile").and_then(|p| p.get("profile").or(Some(p)));
    if let Some(profile) = profile {
        let has_attrs = profile.get("attributes").and_then(|a| a.as_object()).map(|a| !a.is_empty());
        if has_attrs == Some(true) {
            let owner = profile.get("owner").and_then(|v| v.as_str()).and_then(|s| SocialId::parse(s).ok());
            return match owner {
                Some(owner) => PayloadClaim::Cleared {
                    principal: Principal::Site(to.clone()),
                    resource: Resource::Profile(owner),
                },
                None => PayloadClaim::Unattributed,
            };
        }
    }
    PayloadClaim::None
}

/// Discovery document served at `/.well-known/social`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryDoc {
    pub subject: SocialId,
    pub profile_endpoint: String,
    pub feed_endpoint: String,
    pub inbox_endpoint: String,
    pub hub_endpoint: String,
}

impl DiscoveryDoc {
    pub fn for_actor(subject: &SocialId) -> Self {
        let base = format!("https://{}", subject.authority());
        let local = subject.local();
        DiscoveryDoc {
            subject: subject.clone(),
            profile_endpoint: format!("{base}{}", Endpoint::Profile(local.into())),
            feed_endpoint: format!("{base}{}", Endpoint::Feed(local.into())),
            inbox_endpoint: format!("{base}{}", Endpoint::Inbox),
            hub_endpoint: format!("{base}{}", Endpoint::FeedSubscribe(local.into())),
        }
    }
}

/// Object summary returned by a reference-mode dereference or cache import.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRequest {
    pub requester: Principal,
    pub mode: Option<CacheMode>,
}

/// Kind the importing site should give an alien copy.
pub fn import_kind(doc: &ObjectDoc, requester: &Principal) -> ActorKind {
    match requester {
        Principal::Actor(a) if doc.editors.contains(a) => ActorKind::Foreign,
        _ => ActorKind::Alien,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn d(s: &str) -> Domain {
        Domain::parse(s).unwrap()
    }

    fn sample_envelope(key: &SitePairKey) -> Envelope {
        let header = EnvelopeHeader {
            from: d("a.example"),
            to: d("b.example"),
            endpoint: "/inbox".into(),
            message_id: MessageId::new(d("a.example"), 7),
            sent_tick: 3,
            status: None,
            in_reply_to: None,
        };
        Envelope::seal(key, header, encode(&json!({"hi": 1})))
    }

    #[test]
    fn empty_document_is_canonical() {
        assert_eq!(encode(&json!({})), b"{}");
        assert_eq!(decode(b"{}").unwrap(), json!({}));
    }

    #[test]
    fn keys_sorted_no_whitespace() {
        let doc = json!({"z": 1, "a": {"y": [1, 2], "b": "x"}});
        assert_eq!(encode(&doc), br#"{"a":{"b":"x","y":[1,2]},"z":1}"#);
    }

    #[test]
    fn truncated_bytes_are_malformed() {
        let bytes = encode(&json!({"a": "bc"}));
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "prefix {cut} decoded");
        }
    }

    #[test]
    fn sign_then_verify() {
        let key = Keyring::new(9).pair(&d("a.example"), &d("b.example"));
        let env = sample_envelope(&key);
        assert!(verify(&key, &env));
        let frame = env.to_bytes();
        assert_eq!(Envelope::from_bytes(&frame).unwrap(), env);
    }

    #[test]
    fn wrong_pair_key_fails() {
        let ring = Keyring::new(9);
        let key = ring.pair(&d("a.example"), &d("b.example"));
        let env = sample_envelope(&key);
        assert!(!verify(&ring.pair(&d("b.example"), &d("a.example")), &env));
        assert!(!verify(&Keyring::new(10).pair(&d("a.example"), &d("b.example")), &env));
    }

    #[test]
    fn header_case_change_is_rejected() {
        let ring = Keyring::new(3);
        let env = sample_envelope(&ring.pair(&d("a.example"), &d("b.example")));
        let frame = env.to_bytes();
        let at = frame.windows(9).position(|w| w == b"a.example").unwrap();
        let mut bad = frame.clone();
        bad[at] = b'A';
        assert!(Envelope::from_bytes(&bad).is_err());
        assert!(!verify_frame(&ring, &bad));
    }

    #[test]
    fn body_flip_fails() {
        let key = Keyring::new(1).pair(&d("a.example"), &d("b.example"));
        let mut env = sample_envelope(&key);
        env.body[0] ^= 1;
        assert!(!verify(&key, &env));
    }

    #[test]
    fn endpoints_round_trip() {
        for e in [
            Endpoint::Discovery,
            Endpoint::Inbox,
            Endpoint::Profile("alice".into()),
            Endpoint::ProfileSubscribe("alice".into()),
            Endpoint::Contacts("alice".into()),
            Endpoint::Collection("alice".into(), "owned".into()),
            Endpoint::Object("photo1".into()),
            Endpoint::Object("dir/photo1".into()),
            Endpoint::ObjectSubscribe("photo1".into()),
            Endpoint::Feed("alice".into()),
            Endpoint::FeedSubscribe("alice".into()),
        ] {
            assert_eq!(e.to_string().parse::<Endpoint>().unwrap(), e);
        }
        assert!("/nope".parse::<Endpoint>().is_err());
        assert!("/profile/".parse::<Endpoint>().is_err());
    }

    #[test]
    fn discovery_endpoints_live_on_home_site() {
        let id = SocialId::parse("acct:alice@a.example").unwrap();
        let doc = DiscoveryDoc::for_actor(&id);
        for ep in [&doc.profile_endpoint, &doc.feed_endpoint, &doc.inbox_endpoint, &doc.hub_endpoint] {
            assert!(ep.starts_with("https://a.example/"), "{ep}");
        }
    }
}
