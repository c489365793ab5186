//! Content objects: creation at the content site, alien copies in reference
//! or cache mode, authorized fetches, and edits routed through the owner.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use crate::activities::Topic;
use crate::error::{Error, Result};
use crate::harness::Simulation;
use crate::model::{
    Activity, ActorKind, Audience, CacheMode, ContentType, Domain, ObjectId, ObjectRecord, RatingAggregate, Ref,
    SocialId, Verb,
};
use crate::privacy::{Action, Decision, Principal, Resource};
use crate::site::{EventKind, Session, Site};
use crate::wire::{self, import_kind, Document, Endpoint, Notice, ObjectDoc};

/// Parameters of a new object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewObject {
    /// Local part of the id; generated when absent.
    pub local: Option<String>,
    pub content_type: ContentType,
    pub payload: Vec<u8>,
    pub audience: Audience,
    /// Wall owner; the author when absent.
    pub owner: Option<SocialId>,
    pub mentions: Vec<SocialId>,
}

impl NewObject {
    pub fn text(text: &str, audience: Audience) -> Self {
        NewObject {
            local: None,
            content_type: ContentType::Text,
            payload: text.as_bytes().to_vec(),
            audience,
            owner: None,
            mentions: Vec::new(),
        }
    }
}

fn requester_of(body: &Document, from: &Domain) -> Result<Principal> {
    match body.get("requester").and_then(|r| r.as_str()) {
        Some(p) => p.parse(),
        None => Ok(Principal::Site(from.clone())),
    }
}

impl Site {
    /// Summary of a record; payload included only when cleared for `cleared`.
    pub(crate) fn object_doc(&self, obj: &ObjectRecord, cleared: Option<Principal>) -> ObjectDoc {
        let payload = match &cleared {
            Some(_) if !obj.deleted => obj.payload.clone(),
            _ => None,
        };
        let revision = if obj.is_native() { obj.revision } else { obj.cached_revision.unwrap_or(obj.revision) };
        ObjectDoc {
            id: obj.id.clone(),
            content_type: obj.content_type,
            revision,
            author: obj.author.clone(),
            owner: obj.owner.clone(),
            audience: obj.audience.clone(),
            mentions: obj.mentions.clone(),
            editors: obj.editors.clone(),
            deleted: obj.deleted || obj.deleted_at_origin,
            authorized_for: payload.as_ref().and(cleared),
            payload,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn insert_native_object(
        &mut self,
        session: &Session,
        local: &str,
        content_type: ContentType,
        payload: Vec<u8>,
        audience: Audience,
        owner: &SocialId,
        mentions: Vec<SocialId>,
    ) -> Result<ObjectRecord> {
        if payload.len() > self.config.payload_cap {
            return Err(Error::PayloadTooLarge { size: payload.len(), cap: self.config.payload_cap });
        }
        let id = ObjectId::new(self.domain.clone(), local)?;
        if self.objects.contains_key(&id) {
            return Err(Error::NameTaken(id.to_string()));
        }
        let record = ObjectRecord {
            id: id.clone(),
            kind: ActorKind::Native,
            content_type,
            mode: None,
            payload: Some(payload),
            cached_revision: None,
            revision: 1,
            author: session.actor.clone(),
            owner: owner.clone(),
            audience,
            mentions,
            reply_collection: Vec::new(),
            rating_aggregate: RatingAggregate::default(),
            ratings: BTreeMap::new(),
            editors: BTreeSet::new(),
            created: self.now,
            deleted: false,
            deleted_at_origin: false,
            pending_edit: None,
        };
        self.objects.insert(id, record.clone());
        Ok(record)
    }

    /// Creates a native object and emits `post`, `own` (wall posts) and one
    /// `mention` per mentioned actor.
    pub fn create_object(&mut self, session: &Session, new: NewObject) -> Result<(ObjectRecord, Activity)> {
        self.require_session(session)?;
        let owner = new.owner.clone().unwrap_or_else(|| session.actor.clone());
        if owner != session.actor {
            let owner_native =
                owner.authority() == &self.domain && self.actors.get(&owner).map(|r| r.kind == ActorKind::Native) == Some(true);
            if !owner_native {
                return Err(Error::UnknownTarget(owner.to_string()));
            }
            if !self.wall_permissions.contains(&(owner.clone(), session.actor.clone())) {
                return Err(Error::Forbidden(None));
            }
        }
        if let Some(m) = new.mentions.iter().find(|m| !self.actors.contains_key(*m)) {
            return Err(Error::UnknownTarget(m.to_string()));
        }
        let local = match new.local {
            Some(l) => l,
            None => self.next_object_local("obj-"),
        };
        let record =
            self.insert_native_object(session, &local, new.content_type, new.payload, new.audience, &owner, new.mentions.clone())?;
        let attach = || Notice { object: Some(self.object_doc(&record, None)), ..Default::default() };
        let post = self.record_and_apply(session, Verb::Post, Ref::Object(record.id.clone()), None, BTreeMap::new(), attach());
        if owner != session.actor {
            let attach = Notice { object: Some(self.object_doc(&record, None)), ..Default::default() };
            self.record_and_apply(
                session,
                Verb::Own,
                Ref::Object(record.id.clone()),
                Some(Ref::Actor(owner.clone())),
                BTreeMap::new(),
                attach,
            );
        }
        for m in &new.mentions {
            self.mention(session, &record.id, m)?;
        }
        Ok((self.objects[&record.id].clone(), post))
    }

    /// Learns or refreshes metadata of a remote object. Payloads are never
    /// taken from here.
    pub(crate) fn learn_object(&mut self, doc: &ObjectDoc) {
        if doc.id.authority() == &self.domain {
            return;
        }
        match self.objects.get_mut(&doc.id) {
            Some(obj) => {
                obj.audience = doc.audience.clone();
                obj.mentions = doc.mentions.clone();
                obj.editors = doc.editors.clone();
                obj.owner = doc.owner.clone();
                obj.revision = obj.revision.max(doc.revision);
                if doc.deleted {
                    obj.deleted_at_origin = true;
                }
            }
            None => {
                let mut rec = self.record_from_doc(doc, CacheMode::Reference, ActorKind::Alien);
                rec.payload = None;
                rec.cached_revision = None;
                self.objects.insert(doc.id.clone(), rec);
            }
        }
    }

    fn record_from_doc(&self, doc: &ObjectDoc, mode: CacheMode, kind: ActorKind) -> ObjectRecord {
        ObjectRecord {
            id: doc.id.clone(),
            kind,
            content_type: doc.content_type,
            mode: Some(mode),
            payload: doc.payload.clone(),
            cached_revision: doc.payload.as_ref().map(|_| doc.revision),
            revision: doc.revision,
            author: doc.author.clone(),
            owner: doc.owner.clone(),
            audience: doc.audience.clone(),
            mentions: doc.mentions.clone(),
            reply_collection: Vec::new(),
            rating_aggregate: RatingAggregate::default(),
            ratings: BTreeMap::new(),
            editors: doc.editors.clone(),
            created: self.now,
            deleted: false,
            deleted_at_origin: doc.deleted,
            pending_edit: None,
        }
    }

    /// Stores an imported copy. Cache mode keeps the payload; an existing
    /// reference record is upgraded.
    pub(crate) fn store_import(&mut self, doc: &ObjectDoc, mode: CacheMode, requester: &Principal) -> ObjectRecord {
        let kind = import_kind(doc, requester);
        let mut rec = self.record_from_doc(doc, mode, kind);
        if mode == CacheMode::Reference {
            rec.payload = None;
            rec.cached_revision = None;
        }
        if let Some(old) = self.objects.get(&doc.id) {
            rec.created = old.created;
            rec.pending_edit = old.pending_edit.clone();
            if old.kind == ActorKind::Foreign {
                rec.kind = ActorKind::Foreign;
            }
            if old.mode == Some(CacheMode::Cache) && mode == CacheMode::Reference {
                return old.clone();
            }
        }
        self.objects.insert(doc.id.clone(), rec.clone());
        self.emit(
            EventKind::Apply,
            json!({"import": doc.id.to_string(), "mode": mode.to_string(), "kind": rec.kind.to_string()}),
        );
        rec
    }

    /// Object endpoint. The body names the `requester` principal and a
    /// `mode`: `reference` (metadata), `cache` (payload plus subscription)
    /// or `fetch` (payload only).
    pub(crate) fn serve_object(&mut self, from: &Domain, local: &str, body: &Document) -> Result<Document> {
        let oid = ObjectId::new(self.domain.clone(), local)?;
        let obj = match self.objects.get(&oid) {
            Some(o) if o.is_native() => o,
            _ => return Err(Error::UnknownObject(oid.to_string())),
        };
        if obj.deleted {
            return Err(Error::StaleUnavailable(oid.to_string()));
        }
        let requester = requester_of(body, from)?;
        let mode = body.get("mode").and_then(|m| m.as_str()).unwrap_or("reference");
        self.check(&requester, &Resource::Object(oid.clone()), Action::Read).into_result()?;
        let cleared = match mode {
            "reference" => None,
            "cache" => {
                self.add_subscription(Topic::Object(oid.clone()), from.clone(), Some(requester.clone()));
                Some(requester)
            }
            "fetch" => Some(requester),
            other => return Err(Error::Invalid(format!("unknown mode `{other}`"))),
        };
        let doc = self.object_doc(&self.objects[&oid], cleared);
        Ok(json!({"object": wire::to_document(&doc)}))
    }

    pub(crate) fn serve_object_subscribe(&mut self, from: &Domain, local: &str, body: &Document) -> Result<Document> {
        let oid = ObjectId::new(self.domain.clone(), local)?;
        if !self.objects.get(&oid).map(|o| o.is_native()).unwrap_or(false) {
            return Err(Error::UnknownObject(oid.to_string()));
        }
        let requester = requester_of(body, from)?;
        self.check(&requester, &Resource::Object(oid.clone()), Action::Read).into_result()?;
        let sub = self.add_subscription(Topic::Object(oid), from.clone(), Some(requester));
        Ok(wire::to_document(&sub))
    }

    /// Replaces the payload of a native object and pushes the new revision
    /// to authorized subscribers.
    pub fn update_object(&mut self, session: &Session, oid: &ObjectId, payload: Vec<u8>) -> Result<Activity> {
        self.require_session(session)?;
        let principal = Principal::Actor(session.actor.clone());
        match self.objects.get(oid) {
            Some(o) if o.is_native() && !o.deleted => {
                let party = o.author == session.actor || o.owner == session.actor;
                if !party {
                    self.check(&principal, &Resource::Object(oid.clone()), Action::Write).into_result()?;
                }
            }
            _ => return Err(Error::UnknownObject(oid.to_string())),
        }
        if payload.len() > self.config.payload_cap {
            return Err(Error::PayloadTooLarge { size: payload.len(), cap: self.config.payload_cap });
        }
        let obj = self.objects.get_mut(oid).expect("checked");
        obj.payload = Some(payload);
        obj.revision += 1;
        let revision = obj.revision;
        Ok(self.record_and_apply(
            session,
            Verb::ObjectUpdate,
            Ref::Object(oid.clone()),
            None,
            [("revision".to_string(), json!(revision))].into(),
            Notice::default(),
        ))
    }

    /// Tombstones a native object. Remote copies are marked deleted at origin.
    pub fn delete_object(&mut self, session: &Session, oid: &ObjectId) -> Result<Activity> {
        self.require_session(session)?;
        match self.objects.get_mut(oid) {
            Some(o) if o.is_native() && !o.deleted => {
                if o.author != session.actor && o.owner != session.actor {
                    return Err(Error::Forbidden(None));
                }
                o.deleted = true;
                o.payload = None;
            }
            _ => return Err(Error::UnknownObject(oid.to_string())),
        }
        Ok(self.record_and_apply(session, Verb::ObjectDelete, Ref::Object(oid.clone()), None, BTreeMap::new(), Notice::default()))
    }

    /// Sends an edit of a remote object to its content site. Only one edit
    /// per object may be outstanding at this site.
    pub fn edit_foreign_object(&mut self, session: &Session, oid: &ObjectId, payload: Vec<u8>) -> Result<Activity> {
        self.require_session(session)?;
        if oid.authority() == &self.domain {
            return self.update_object(session, oid, payload);
        }
        if payload.len() > self.config.payload_cap {
            return Err(Error::PayloadTooLarge { size: payload.len(), cap: self.config.payload_cap });
        }
        let obj = self.objects.get(oid).ok_or_else(|| Error::UnknownObject(oid.to_string()))?;
        if obj.deleted_at_origin {
            return Err(Error::StaleUnavailable(oid.to_string()));
        }
        if obj.pending_edit.is_some() {
            return Err(Error::ConflictRetry(oid.to_string()));
        }
        let principal = Principal::Actor(session.actor.clone());
        self.check(&principal, &Resource::Object(oid.clone()), Action::Write).into_result()?;
        let next = self.peek_activity_id();
        self.proposals.insert(next.clone(), payload);
        self.objects.get_mut(oid).expect("known").pending_edit = Some(next);
        let based_on = self.objects[oid].cached_revision.unwrap_or(self.objects[oid].revision);
        let activity = self.record_and_apply(
            session,
            Verb::ObjectUpdate,
            Ref::Object(oid.clone()),
            None,
            [("based_on".to_string(), json!(based_on))].into(),
            Notice::default(),
        );
        Ok(activity)
    }

    /// Object document carrying the bytes of an edit proposal from here.
    pub(crate) fn pending_proposal_doc(&self, activity: &Activity) -> Option<ObjectDoc> {
        let bytes = self.proposals.get(&activity.id)?;
        let obj = self.objects.get(activity.object.as_object()?)?;
        let mut doc = self.object_doc(obj, None);
        doc.payload = Some(bytes.clone());
        doc.authorized_for = Some(Principal::Actor(activity.actor.clone()));
        Some(doc)
    }

    /// `object_update` application: proposals at the content site, cache
    /// refreshes elsewhere.
    pub(crate) fn apply_object_update(&mut self, activity: &Activity, notice: &Notice) {
        let Some(oid) = activity.object.as_object().cloned() else { return };
        let here = self.domain.clone();
        if oid.authority() == &here {
            if activity.id.authority() != &here {
                self.accept_proposal(activity, notice, &oid);
            }
            return;
        }
        if let Some(edit_of) = activity.payload.get("edit_of").and_then(|v| v.as_str()) {
            if let Some(obj) = self.objects.get_mut(&oid) {
                if obj.pending_edit.as_ref().map(|p| p.to_string()).as_deref() == Some(edit_of) {
                    obj.pending_edit = None;
                    self.proposals.retain(|k, _| k.to_string() != edit_of);
                }
            }
        }
        let Some(doc) = &notice.object else { return };
        if let Some(obj) = self.objects.get_mut(&oid) {
            if obj.mode == Some(CacheMode::Cache) {
                if let Some(bytes) = &doc.payload {
                    if Some(doc.revision) > obj.cached_revision {
                        obj.payload = Some(bytes.clone());
                        obj.cached_revision = Some(doc.revision);
                    }
                }
            }
        }
    }

    fn accept_proposal(&mut self, proposal: &Activity, notice: &Notice, oid: &ObjectId) {
        let editor = Principal::Actor(proposal.actor.clone());
        let bytes = notice.object.as_ref().and_then(|d| d.payload.clone());
        let native = self.objects.get(oid).map(|o| o.is_native() && !o.deleted).unwrap_or(false);
        let decision = if native {
            self.check(&editor, &Resource::Object(oid.clone()), Action::Write)
        } else {
            Decision::Deny(crate::privacy::DenyReason::NotInAudience)
        };
        let mut payload: BTreeMap<String, serde_json::Value> =
            [("edit_of".to_string(), json!(proposal.id.to_string()))].into();
        let accepted = decision.is_allow() && bytes.as_ref().map(|b| b.len() <= self.config.payload_cap) == Some(true);
        if accepted {
            let obj = self.objects.get_mut(oid).expect("native");
            obj.payload = bytes;
            obj.revision += 1;
            payload.insert("revision".into(), json!(obj.revision));
        } else {
            payload.insert("rejected".into(), json!(true));
        }
        let echo = Activity {
            id: self.next_activity_id(),
            verb: Verb::ObjectUpdate,
            actor: proposal.actor.clone(),
            object: Ref::Object(oid.clone()),
            target: Some(Ref::Activity(proposal.id.clone())),
            payload,
            published: self.now,
        };
        self.store_activity(&echo);
        self.applied.insert(echo.id.clone());
        self.emit(
            EventKind::Apply,
            json!({"activity": echo.id.to_string(), "verb": "object_update", "edit_of": proposal.id.to_string(), "accepted": accepted}),
        );
        self.route_activity(&echo, None);
        let proposer = proposal.id.authority().clone();
        let subscribed = self.subscriptions.contains_key(&(Topic::Object(oid.clone()), proposer.clone()));
        if !accepted || !subscribed {
            let object = self.objects.get(oid).map(|o| self.object_doc(o, None));
            let notice = Notice { activity: Some(echo), object, profile: None };
            self.send(proposer, Endpoint::Inbox, wire::to_document(&notice));
        }
    }

    pub fn grant_wall(&mut self, session: &Session, author: &SocialId) -> Result<()> {
        self.require_session(session)?;
        if session.kind != ActorKind::Native {
            return Err(Error::Forbidden(None));
        }
        self.wall_permissions.insert((session.actor.clone(), author.clone()));
        Ok(())
    }

    pub fn grant_edit(&mut self, session: &Session, oid: &ObjectId, editor: &SocialId) -> Result<()> {
        self.require_session(session)?;
        match self.objects.get_mut(oid) {
            Some(o) if o.is_native() && o.owner == session.actor => {
                o.editors.insert(editor.clone());
                Ok(())
            }
            Some(_) => Err(Error::Forbidden(None)),
            None => Err(Error::UnknownObject(oid.to_string())),
        }
    }
}

impl Simulation {
    pub fn create_object(&mut self, session: &Session, new: NewObject) -> Result<(ObjectRecord, Activity)> {
        for m in &new.mentions {
            self.ensure_actor_known(&session.site, m).map_err(|e| match e {
                Error::UnknownActor(t) => Error::UnknownTarget(t),
                other => other,
            })?;
        }
        self.with_site(&session.site.clone(), |s| s.create_object(session, new))?
    }

    /// Imports a remote object at `site` on behalf of `requester`.
    pub fn import_alien(&mut self, site: &Domain, requester: &Principal, oid: &ObjectId, mode: CacheMode) -> Result<ObjectRecord> {
        if oid.authority() == site {
            return Err(Error::Invalid(format!("{oid} is native at {site}")));
        }
        let body = json!({"requester": requester.to_string(), "mode": mode.to_string()});
        let doc = self.request(site, oid.authority(), Endpoint::Object(oid.local().to_string()), body)?;
        let doc: ObjectDoc = wire::from_document(doc.get("object").unwrap_or(&json!(null)))?;
        self.with_site(site, |s| s.store_import(&doc, mode, requester))
    }

    /// Checks that `actor` at `site` may read `oid`, learning its metadata
    /// from the content site when remote.
    pub(crate) fn ensure_object_visible(&mut self, site: &Domain, actor: &SocialId, oid: &ObjectId) -> Result<()> {
        let principal = Principal::Actor(actor.clone());
        if oid.authority() == site {
            return self.with_site(site, |s| {
                match s.objects.get(oid) {
                    Some(o) if o.is_native() && !o.deleted => {}
                    _ => return Err(Error::UnknownTarget(oid.to_string())),
                }
                s.check(&principal, &Resource::Object(oid.clone()), Action::Read).into_result()
            })?;
        }
        let body = json!({"requester": principal.to_string(), "mode": "reference"});
        let doc = self
            .request(site, oid.authority(), Endpoint::Object(oid.local().to_string()), body)
            .map_err(|e| match e {
                Error::UnknownObject(t) | Error::UnknownSite(t) => Error::UnknownTarget(t),
                other => other,
            })?;
        let doc: ObjectDoc = wire::from_document(doc.get("object").unwrap_or(&json!(null)))?;
        self.with_site(site, |s| s.learn_object(&doc))
    }

    /// Serves an object's representation to `requester` at `site`: natively,
    /// from a local cache, or by forwarding to the content site.
    pub fn fetch_representation(&mut self, site: &Domain, requester: &Principal, oid: &ObjectId) -> Result<ObjectDoc> {
        let resource = Resource::Object(oid.clone());
        let local = self.site(site).ok_or_else(|| Error::UnknownSite(site.to_string()))?.object(oid).cloned();
        let serve_locally = match &local {
            Some(o) if o.is_native() => {
                if o.deleted {
                    return Err(Error::StaleUnavailable(oid.to_string()));
                }
                true
            }
            Some(o) => o.mode == Some(CacheMode::Cache) && o.payload.is_some(),
            None => oid.authority() == site,
        };
        if serve_locally {
            let doc = self.with_site(site, |s| {
                let Some(obj) = s.objects.get(oid).cloned() else {
                    return Err(Error::UnknownObject(oid.to_string()));
                };
                s.check(requester, &resource, Action::Read).into_result()?;
                Ok(s.object_doc(&obj, Some(requester.clone())))
            })??;
            self.trace_client_delivery(site, requester, &resource);
            return Ok(doc);
        }
        let body = json!({"requester": requester.to_string(), "mode": "fetch"});
        let doc = self
            .request(site, oid.authority(), Endpoint::Object(oid.local().to_string()), body)
            .map_err(|e| match e {
                Error::Unreachable(_) => Error::StaleUnavailable(oid.to_string()),
                other => other,
            })?;
        Ok(wire::from_document(doc.get("object").unwrap_or(&json!(null)))?)
    }

    pub fn update_object(&mut self, session: &Session, oid: &ObjectId, payload: Vec<u8>) -> Result<Activity> {
        self.with_site(&session.site.clone(), |s| s.update_object(session, oid, payload))?
    }

    pub fn delete_object(&mut self, session: &Session, oid: &ObjectId) -> Result<Activity> {
        self.with_site(&session.site.clone(), |s| s.delete_object(session, oid))?
    }

    pub fn edit_foreign_object(&mut self, session: &Session, oid: &ObjectId, payload: Vec<u8>) -> Result<Activity> {
        self.with_site(&session.site.clone(), |s| s.edit_foreign_object(session, oid, payload))?
    }

    pub fn grant_wall(&mut self, session: &Session, author: &SocialId) -> Result<()> {
        self.with_site(&session.site.clone(), |s| s.grant_wall(session, author))?
    }

    pub fn grant_edit(&mut self, session: &Session, oid: &ObjectId, editor: &SocialId) -> Result<()> {
        self.with_site(&session.site.clone(), |s| s.grant_edit(session, oid, editor))?
    }
}
