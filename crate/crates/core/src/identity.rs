//! Registration, Social ID discovery and federated authentication.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::Simulation;
use crate::model::{validate_local_name, Activity, ActorKind, ActorRecord, Domain, Ref, SocialId, Verb};
use crate::site::{EventKind, Session, Site};
use crate::wire::{self, DiscoveryDoc, Document, Endpoint};

/// Statement by an identity site that `subject` authenticated there, for use
/// at `audience`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthAssertion {
    pub subject: SocialId,
    pub issued_by: Domain,
    pub audience: Domain,
    pub nonce: String,
    /// Base64 authenticity token under the (issued_by, audience) pair key.
    pub token: String,
}

impl AuthAssertion {
    fn signed_fields(&self) -> Vec<u8> {
        wire::encode(&json!({
            "subject": self.subject.to_string(),
            "issued_by": self.issued_by.to_string(),
            "audience": self.audience.to_string(),
            "nonce": self.nonce,
        }))
    }
}

impl Site {
    /// Signs up a native actor with a local credential.
    pub fn register_native(&mut self, local_name: &str, credential: &str) -> Result<ActorRecord> {
        validate_local_name(local_name).map_err(|_| Error::InvalidName(local_name.to_string()))?;
        let id = SocialId::acct(&self.domain, local_name)?;
        if self.actors.get(&id).map(|r| r.kind == ActorKind::Native).unwrap_or(false)
            || self.credentials.contains_key(local_name)
        {
            return Err(Error::NameTaken(local_name.to_string()));
        }
        let digest = self.credential_digest(local_name, credential);
        self.credentials.insert(local_name.to_string(), digest);
        let record = ActorRecord::new(id.clone(), ActorKind::Native);
        self.actors.insert(id, record.clone());
        Ok(record)
    }

    /// Credential login of a native actor.
    pub fn login(&mut self, id: &SocialId, credential: &str) -> Result<Session> {
        if id.authority() != &self.domain {
            return Err(Error::UnknownActor(id.to_string()));
        }
        let stored = self.credentials.get(id.local()).ok_or_else(|| Error::UnknownActor(id.to_string()))?;
        if *stored != self.credential_digest(id.local(), credential) {
            return Err(Error::Forbidden(None));
        }
        let native = self.actors.get(id).map(|r| r.kind == ActorKind::Native).unwrap_or(false);
        if !native {
            return Err(Error::UnknownActor(id.to_string()));
        }
        self.sessions.insert(id.clone(), ActorKind::Native);
        Ok(Session { site: self.domain.clone(), actor: id.clone(), kind: ActorKind::Native })
    }

    /// Issues an assertion for a natively authenticated actor.
    pub fn issue_assertion(&mut self, session: &Session, audience: &Domain) -> Result<AuthAssertion> {
        self.require_session(session)?;
        if session.kind != ActorKind::Native {
            return Err(Error::Forbidden(None));
        }
        let mut a = AuthAssertion {
            subject: session.actor.clone(),
            issued_by: self.domain.clone(),
            audience: audience.clone(),
            nonce: self.next_nonce(),
            token: String::new(),
        };
        let mac = self.keys.pair(&self.domain, audience).mac(&a.signed_fields());
        a.token = base64::engine::general_purpose::STANDARD.encode(mac);
        Ok(a)
    }

    /// Token and replay checks, without consuming the nonce.
    pub fn check_assertion(&self, assertion: &AuthAssertion) -> Result<()> {
        let token = base64::engine::general_purpose::STANDARD
            .decode(&assertion.token)
            .map_err(|_| Error::BadToken)?;
        let key = self.keys.pair(&assertion.issued_by, &self.domain);
        if assertion.audience != self.domain
            || assertion.issued_by != *assertion.subject.authority()
            || !key.check(&assertion.signed_fields(), &token)
        {
            return Err(Error::BadToken);
        }
        if self.seen_nonces.contains(&assertion.nonce) {
            return Err(Error::ReplayedNonce(assertion.nonce.clone()));
        }
        Ok(())
    }

    /// Turns a verified assertion into a foreign session, upgrading the alien
    /// record created by discovery.
    pub(crate) fn accept_assertion(&mut self, assertion: &AuthAssertion) -> Result<Session> {
        self.check_assertion(assertion)?;
        self.seen_nonces.insert(assertion.nonce.clone());
        let subject = &assertion.subject;
        self.ensure_alien(subject);
        let record = self.actors.get_mut(subject).expect("stub exists");
        record.kind = ActorKind::Foreign;
        self.sessions.insert(subject.clone(), ActorKind::Foreign);
        self.emit(
            EventKind::Apply,
            json!({"login": subject.to_string(), "kind": "foreign", "issued_by": assertion.issued_by.to_string()}),
        );
        Ok(Session { site: self.domain.clone(), actor: subject.clone(), kind: ActorKind::Foreign })
    }

    pub(crate) fn serve_discovery(&mut self, body: &Document) -> Result<Document> {
        let subject: SocialId = body
            .get("subject")
            .and_then(|s| s.as_str())
            .ok_or_else(|| Error::Invalid("discovery needs a subject".into()))?
            .parse()?;
        match self.actors.get(&subject) {
            Some(r) if r.kind == ActorKind::Native && subject.authority() == &self.domain => {
                Ok(wire::to_document(&DiscoveryDoc::for_actor(&r.id)))
            }
            _ => Err(Error::UnknownActor(subject.to_string())),
        }
    }

    /// Records what discovery taught us about a remote actor.
    pub(crate) fn learn_discovery(&mut self, doc: &DiscoveryDoc) {
        self.ensure_alien(&doc.subject);
    }

    /// Re-registers a foreign actor as native here under a new Social ID
    /// that records the old one as an alias.
    pub fn promote_to_native(&mut self, session: &Session, local_name: &str, credential: &str) -> Result<(ActorRecord, Session)> {
        self.require_session(session)?;
        if session.kind != ActorKind::Foreign {
            return Err(Error::Forbidden(None));
        }
        let mut record = self.register_native(local_name, credential)?;
        let new_id = record.id.clone();
        let old_id = session.actor.clone();
        if let Some(old) = self.actors.get_mut(&old_id) {
            old.kind = ActorKind::Alien;
        }
        self.sessions.remove(&old_id);
        self.sessions.insert(new_id.clone(), ActorKind::Native);
        let rec = self.actors.get_mut(&new_id).expect("just registered");
        rec.profile.set("x-also-known-as", &old_id.to_string())?;
        let activity = Activity {
            id: self.next_activity_id(),
            verb: Verb::ProfileUpdate,
            actor: new_id.clone(),
            object: Ref::Actor(new_id.clone()),
            target: Some(Ref::Actor(old_id)),
            payload: [("attribute".to_string(), json!("x-also-known-as"))].into(),
            published: self.now,
        };
        self.store_activity(&activity);
        self.applied.insert(activity.id.clone());
        let rec = self.actors.get_mut(&new_id).expect("just registered");
        rec.record_activity(&activity.id);
        record = rec.clone();
        self.fan_out_profile(&new_id, Some(activity));
        let session = Session { site: self.domain.clone(), actor: new_id, kind: ActorKind::Native };
        Ok((record, session))
    }
}

impl Simulation {
    pub fn register_native(&mut self, site: &Domain, local_name: &str, credential: &str) -> Result<ActorRecord> {
        self.with_site(site, |s| s.register_native(local_name, credential))?
    }

    pub fn login(&mut self, site: &Domain, id: &SocialId, credential: &str) -> Result<Session> {
        self.with_site(site, |s| s.login(id, credential))?
    }

    /// Dereferences `id` at its home site. The requesting site keeps an alien
    /// stub for remote actors.
    pub fn resolve(&mut self, requesting_site: &Domain, id: &SocialId) -> Result<DiscoveryDoc> {
        let home = id.authority().clone();
        if &home == requesting_site {
            let doc = self.with_site(requesting_site, |s| s.serve_discovery(&json!({"subject": id.to_string()})))??;
            return Ok(wire::from_document(&doc)?);
        }
        let doc = self.request(requesting_site, &home, Endpoint::Discovery, json!({"subject": id.to_string()}))?;
        let doc: DiscoveryDoc = wire::from_document(&doc)?;
        self.with_site(requesting_site, |s| s.learn_discovery(&doc))?;
        Ok(doc)
    }

    pub fn issue_assertion(&mut self, session: &Session, audience: &Domain) -> Result<AuthAssertion> {
        self.with_site(&session.site.clone(), |s| s.issue_assertion(session, audience))?
    }

    /// Federated login at `remote_site`: verify the assertion, discover the
    /// subject, then open a foreign session.
    pub fn federated_login(&mut self, remote_site: &Domain, assertion: &AuthAssertion) -> Result<Session> {
        self.site_mut(remote_site)?.check_assertion(assertion)?;
        self.resolve(remote_site, &assertion.subject)?;
        self.with_site(remote_site, |s| s.accept_assertion(assertion))?
    }

    /// Native login at the identity site followed by federated login at `remote`.
    pub fn login_remote(&mut self, home_session: &Session, remote: &Domain) -> Result<Session> {
        let assertion = self.issue_assertion(home_session, remote)?;
        self.federated_login(remote, &assertion)
    }

    pub fn promote_to_native(&mut self, session: &Session, local_name: &str, credential: &str) -> Result<(ActorRecord, Session)> {
        self.with_site(&session.site.clone(), |s| s.promote_to_native(session, local_name, credential))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{d, id, join, sim};

    #[test]
    fn duplicate_and_bad_names() {
        let mut sim = sim(&["a.example"]);
        join(&mut sim, "a.example", "alice");
        assert_eq!(sim.register_native(&d("a.example"), "alice", "x").unwrap_err().code(), "name_taken");
        assert_eq!(sim.register_native(&d("a.example"), "Al ice", "x").unwrap_err().code(), "invalid_name");
    }

    #[test]
    fn wrong_credential_is_refused() {
        let mut sim = sim(&["a.example"]);
        join(&mut sim, "a.example", "alice");
        let err = sim.login(&d("a.example"), &id("alice@a.example"), "nope").unwrap_err();
        assert_eq!(err.code(), "forbidden");
    }

    #[test]
    fn federated_login_makes_a_foreign_actor() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let remote = sim.login_remote(&alice, &d("b.example")).unwrap();
        assert_eq!(remote.kind, ActorKind::Foreign);
        assert_eq!(remote.site, d("b.example"));
        let rec = sim.site(&d("b.example")).unwrap().actor(&alice.actor).unwrap();
        assert_eq!(rec.kind, ActorKind::Foreign);
    }

    #[test]
    fn assertion_replay_and_tampering() {
        let mut sim = sim(&["a.example", "b.example", "c.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let assertion = sim.issue_assertion(&alice, &d("b.example")).unwrap();
        sim.federated_login(&d("b.example"), &assertion).unwrap();
        assert_eq!(sim.federated_login(&d("b.example"), &assertion).unwrap_err().code(), "replayed_nonce");
        let fresh = sim.issue_assertion(&alice, &d("b.example")).unwrap();
        assert_eq!(sim.federated_login(&d("c.example"), &fresh).unwrap_err().code(), "bad_token");
        let mut forged = sim.issue_assertion(&alice, &d("b.example")).unwrap();
        forged.subject = id("mallory@a.example");
        assert_eq!(sim.federated_login(&d("b.example"), &forged).unwrap_err().code(), "bad_token");
    }

    #[test]
    fn resolve_leaves_an_alien_stub() {
        let mut sim = sim(&["a.example", "b.example"]);
        join(&mut sim, "a.example", "alice");
        let doc = sim.resolve(&d("b.example"), &id("alice@a.example")).unwrap();
        assert_eq!(doc.subject, id("alice@a.example"));
        let rec = sim.site(&d("b.example")).unwrap().actor(&id("alice@a.example")).unwrap();
        assert_eq!(rec.kind, ActorKind::Alien);
        assert_eq!(sim.resolve(&d("b.example"), &id("zed@a.example")).unwrap_err().code(), "unknown_actor");
    }

    #[test]
    fn promotion_records_the_old_id() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let remote = sim.login_remote(&alice, &d("b.example")).unwrap();
        let (rec, session) = sim.promote_to_native(&remote, "alice2", "pw").unwrap();
        assert_eq!(session.kind, ActorKind::Native);
        assert_eq!(rec.profile.attributes.get("x-also-known-as").map(String::as_str), Some("acct:alice@a.example"));
        let old = sim.site(&d("b.example")).unwrap().actor(&alice.actor).unwrap();
        assert_eq!(old.kind, ActorKind::Alien);
    }
}
