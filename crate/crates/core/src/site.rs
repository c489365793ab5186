//! One federated site: its stores, sessions, subscriptions and outbox.
//!
//! A `Site` never talks to another site directly. Handlers append
//! [`Outgoing`] messages and [`SiteEvent`]s which the simulator drains after
//! every turn.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::activities::{EdgeState, Subscription, SubscriptionKey};
use crate::error::{Error, Result};
use crate::model::{
    Activity, ActivityId, ActorKind, ActorRecord, Domain, MessageId, ObjectId, ObjectRecord, SocialId, Tick,
};
use crate::privacy::{Action, Decision, Principal, Resource, ScopeGrant};
use crate::wire::{self, Document, Endpoint, Envelope, Keyring};

pub const DEFAULT_PAYLOAD_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Drop,
    Deliver,
    Apply,
    Reject,
    Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteEvent {
    pub kind: EventKind,
    pub detail: Document,
}

/// A message a handler wants sent. The simulator assigns the message id and
/// signs it.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Domain,
    pub endpoint: Endpoint,
    pub body: Document,
}

/// An authenticated actor at one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub site: Domain,
    pub actor: SocialId,
    pub kind: ActorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteConfig {
    pub payload_cap: usize,
}

impl Default for SiteConfig {
    fn default() -> Self {
        SiteConfig { payload_cap: DEFAULT_PAYLOAD_CAP }
    }
}

/// Result of handing an envelope to a site's inbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Applied,
    Duplicate,
    Rejected,
}

#[derive(Debug)]
pub struct Site {
    pub(crate) domain: Domain,
    pub(crate) keys: Keyring,
    pub(crate) config: SiteConfig,
    pub(crate) now: Tick,
    pub(crate) actors: BTreeMap<SocialId, ActorRecord>,
    pub(crate) credentials: BTreeMap<String, [u8; 32]>,
    pub(crate) sessions: BTreeMap<SocialId, ActorKind>,
    pub(crate) seen_nonces: BTreeSet<String>,
    pub(crate) objects: BTreeMap<ObjectId, ObjectRecord>,
    pub(crate) activities: BTreeMap<ActivityId, Activity>,
    pub(crate) applied: BTreeSet<ActivityId>,
    pub(crate) follow_edges: BTreeMap<(SocialId, SocialId), EdgeState>,
    pub(crate) subscriptions: BTreeMap<SubscriptionKey, Subscription>,
    pub(crate) grants: BTreeMap<(SocialId, Domain), ScopeGrant>,
    pub(crate) grant_epochs: BTreeMap<(SocialId, Domain), u64>,
    pub(crate) wall_permissions: BTreeSet<(SocialId, SocialId)>,
    pub(crate) mention_inbox: BTreeMap<SocialId, Vec<ActivityId>>,
    pub(crate) notifications: BTreeMap<SocialId, Vec<ActivityId>>,
    /// Bytes of edit proposals sent from here, by proposal activity.
    pub(crate) proposals: BTreeMap<ActivityId, Vec<u8>>,
    next_activity: u64,
    next_message: u64,
    next_object: u64,
    next_nonce: u64,
    pub(crate) outbox: Vec<Outgoing>,
    pub(crate) events: Vec<SiteEvent>,
}

impl Site {
    pub fn new(domain: Domain, keys: Keyring, config: SiteConfig) -> Self {
        Site {
            domain,
            keys,
            config,
            now: 0,
            actors: BTreeMap::new(),
            credentials: BTreeMap::new(),
            sessions: BTreeMap::new(),
            seen_nonces: BTreeSet::new(),
            objects: BTreeMap::new(),
            activities: BTreeMap::new(),
            applied: BTreeSet::new(),
            follow_edges: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            grants: BTreeMap::new(),
            grant_epochs: BTreeMap::new(),
            wall_permissions: BTreeSet::new(),
            mention_inbox: BTreeMap::new(),
            notifications: BTreeMap::new(),
            proposals: BTreeMap::new(),
            next_activity: 0,
            next_message: 0,
            next_object: 0,
            next_nonce: 0,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn actor(&self, id: &SocialId) -> Option<&ActorRecord> {
        self.actors.get(id)
    }

    pub fn actors(&self) -> impl Iterator<Item = &ActorRecord> {
        self.actors.values()
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectRecord> {
        self.objects.get(id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.values()
    }

    pub fn activity(&self, id: &ActivityId) -> Option<&Activity> {
        self.activities.get(id)
    }

    pub fn mention_inbox(&self, id: &SocialId) -> &[ActivityId] {
        self.mention_inbox.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn notifications(&self, id: &SocialId) -> &[ActivityId] {
        self.notifications.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values()
    }

    pub fn has_applied(&self, id: &ActivityId) -> bool {
        self.applied.contains(id)
    }

    pub(crate) fn set_now(&mut self, now: Tick) {
        self.now = now;
    }

    pub(crate) fn next_activity_id(&mut self) -> ActivityId {
        self.next_activity += 1;
        ActivityId::new(self.domain.clone(), self.next_activity)
    }

    /// The id `next_activity_id` will hand out.
    pub(crate) fn peek_activity_id(&self) -> ActivityId {
        ActivityId::new(self.domain.clone(), self.next_activity + 1)
    }

    pub(crate) fn next_message_id(&mut self) -> MessageId {
        self.next_message += 1;
        MessageId::new(self.domain.clone(), self.next_message)
    }

    pub(crate) fn next_object_local(&mut self, prefix: &str) -> String {
        loop {
            self.next_object += 1;
            let local = format!("{prefix}{}", self.next_object);
            let taken = ObjectId::new(self.domain.clone(), &local).map(|o| self.objects.contains_key(&o));
            if matches!(taken, Ok(false)) {
                return local;
            }
        }
    }

    pub(crate) fn next_nonce(&mut self) -> String {
        self.next_nonce += 1;
        format!("{}/n{}", self.domain, self.next_nonce)
    }

    pub(crate) fn emit(&mut self, kind: EventKind, detail: Document) {
        self.events.push(SiteEvent { kind, detail });
    }

    pub(crate) fn emit_decision(
        &mut self,
        principal: &Principal,
        resource: &Resource,
        action: Action,
        decision: Decision,
    ) {
        let action = match action {
            Action::Read => "read",
            Action::Write => "write",
        };
        self.emit(
            EventKind::Decision,
            json!({
                "principal": principal.to_string(),
                "resource": resource.to_string(),
                "action": action,
                "result": decision.to_string(),
            }),
        );
    }

    pub(crate) fn send(&mut self, to: Domain, endpoint: Endpoint, body: Document) {
        if to != self.domain {
            self.outbox.push(Outgoing { to, endpoint, body });
        }
    }

    pub(crate) fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub(crate) fn take_events(&mut self) -> Vec<SiteEvent> {
        std::mem::take(&mut self.events)
    }

    pub(crate) fn credential_digest(&self, local: &str, credential: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"fedsim/credential/v1");
        h.update(self.domain.as_str().as_bytes());
        h.update([0]);
        h.update(local.as_bytes());
        h.update([0]);
        h.update(credential.as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }

    pub fn is_session_valid(&self, session: &Session) -> bool {
        session.site == self.domain && self.sessions.get(&session.actor) == Some(&session.kind)
    }

    pub(crate) fn require_session(&self, session: &Session) -> Result<()> {
        if self.is_session_valid(session) {
            Ok(())
        } else {
            Err(Error::NoSession(session.actor.to_string()))
        }
    }

    pub(crate) fn followers_known(&self, id: &SocialId) -> Option<&BTreeSet<SocialId>> {
        self.actors.get(id).map(|r| &r.contacts.followers)
    }

    /// Creates an alien record for a remote actor if none exists.
    pub(crate) fn ensure_alien(&mut self, id: &SocialId) {
        if id.authority() != &self.domain && !self.actors.contains_key(id) {
            self.actors.insert(id.clone(), ActorRecord::new(id.clone(), ActorKind::Alien));
        }
    }

    pub(crate) fn store_activity(&mut self, activity: &Activity) {
        self.activities.entry(activity.id.clone()).or_insert_with(|| activity.clone());
    }

    /// Synchronous request entry point. Errors travel back as the response
    /// status.
    pub fn handle_request(&mut self, from: &Domain, endpoint: &Endpoint, body: &Document) -> Result<Document> {
        match endpoint {
            Endpoint::Discovery => self.serve_discovery(body),
            Endpoint::Profile(local) => self.serve_profile(from, local, body),
            Endpoint::ProfileSubscribe(local) => self.serve_profile_subscribe(from, local),
            Endpoint::Contacts(local) => self.serve_contacts(from, local),
            Endpoint::Collection(local, name) => self.serve_collection(from, local, name),
            Endpoint::Object(local) => self.serve_object(from, local, body),
            Endpoint::ObjectSubscribe(local) => self.serve_object_subscribe(from, local, body),
            Endpoint::Feed(local) => self.serve_feed(from, local),
            Endpoint::FeedSubscribe(local) => self.serve_feed_subscribe(from, local),
            Endpoint::Inbox => Err(Error::Invalid("inbox takes notices, not requests".into())),
        }
    }

    /// Inbox: verify the token, dedupe by activity id, then apply.
    pub fn deliver(&mut self, envelope: &Envelope) -> Ack {
        let key = self.keys.pair(&envelope.header.from, &envelope.header.to);
        if envelope.header.to != self.domain || !wire::verify(&key, envelope) {
            self.emit(
                EventKind::Reject,
                json!({
                    "message_id": envelope.header.message_id.to_string(),
                    "from": envelope.header.from.to_string(),
                    "reason": "bad_token",
                }),
            );
            return Ack::Rejected;
        }
        let notice = match wire::decode_value::<wire::Notice>(&envelope.body) {
            Ok(n) => n,
            Err(e) => {
                self.emit(
                    EventKind::Reject,
                    json!({
                        "message_id": envelope.header.message_id.to_string(),
                        "from": envelope.header.from.to_string(),
                        "reason": format!("malformed_document: {e}"),
                    }),
                );
                return Ack::Rejected;
            }
        };
        if let Some(activity) = &notice.activity {
            if self.applied.contains(&activity.id) {
                return Ack::Duplicate;
            }
            self.applied.insert(activity.id.clone());
        }
        self.apply_inbound(&envelope.header.from, notice);
        Ack::Applied
    }
}
