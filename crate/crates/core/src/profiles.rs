//! Profiles, contact lists and object collections, with scope-filtered
//! push to subscribed sites.

use std::collections::BTreeSet;

use serde_json::json;

use crate::activities::Topic;
use crate::error::{Error, Result};
use crate::harness::Simulation;
use crate::model::{
    is_known_collection, Activity, ActorKind, ContactCollection, Domain, ObjectId, ProfileDoc, Ref, SocialId, Verb,
};
use crate::privacy::{filter_profile, Action, Principal, Resource, ScopeGrant};
use crate::site::{Session, Site};
use crate::wire::{self, Document, Endpoint, Notice, ProfileSnapshot};

impl Site {
    fn native_actor(&self, local: &str) -> Result<SocialId> {
        let id = SocialId::acct(&self.domain, local)?;
        match self.actors.get(&id) {
            Some(r) if r.kind == ActorKind::Native => Ok(id),
            _ => Err(Error::UnknownActor(id.to_string())),
        }
    }

    /// The profile of a native actor as `site` may see it.
    pub(crate) fn profile_for_site(&mut self, id: &SocialId, site: &Domain) -> ProfileSnapshot {
        let principal = Principal::Site(site.clone());
        let decision = self.check(&principal, &Resource::Profile(id.clone()), Action::Read);
        let scope = if decision.is_allow() {
            self.grant(id, site).map(|g| g.readable_attributes.clone())
        } else {
            None
        };
        let profile = filter_profile(&self.actors[id].profile, scope.as_ref());
        let epoch = self.grant_epochs.get(&(id.clone(), site.clone())).copied().unwrap_or(0);
        ProfileSnapshot { profile, epoch }
    }

    pub(crate) fn serve_profile(&mut self, from: &Domain, local: &str, body: &Document) -> Result<Document> {
        let id = self.native_actor(local)?;
        if let Some(set) = body.get("set").and_then(|s| s.as_object()) {
            let writes: Vec<(String, String)> =
                set.iter().map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string())).collect();
            for (name, value) in writes {
                let resource = Resource::Attribute(id.clone(), name.clone());
                self.check(&Principal::Site(from.clone()), &resource, Action::Write)
                    .into_result()
                    .map_err(|_| Error::ForbiddenScope)?;
                self.set_attribute(&id, &name, &value)?;
            }
        }
        Ok(json!({"profile": wire::to_document(&self.profile_for_site(&id, from))}))
    }

    pub(crate) fn serve_profile_subscribe(&mut self, from: &Domain, local: &str) -> Result<Document> {
        let id = self.native_actor(local)?;
        let sub = self.add_subscription(Topic::Profile(id.clone()), from.clone(), None);
        Ok(json!({
            "subscription": wire::to_document(&sub),
            "profile": wire::to_document(&self.profile_for_site(&id, from)),
        }))
    }

    pub(crate) fn serve_contacts(&mut self, from: &Domain, local: &str) -> Result<Document> {
        let id = self.native_actor(local)?;
        self.check(&Principal::Site(from.clone()), &Resource::Contacts(id.clone()), Action::Read)
            .into_result()
            .map_err(|_| Error::ForbiddenScope)?;
        Ok(wire::to_document(&self.actors[&id].contacts))
    }

    pub(crate) fn serve_collection(&mut self, from: &Domain, local: &str, name: &str) -> Result<Document> {
        let id = self.native_actor(local)?;
        let list = self.visible_collection(&id, name, &Principal::Site(from.clone()))?;
        Ok(wire::to_document(&list))
    }

    /// A collection without deleted entries and those `principal` may not read.
    pub fn visible_collection(&self, id: &SocialId, name: &str, principal: &Principal) -> Result<Vec<ObjectId>> {
        if !is_known_collection(name) {
            return Err(Error::UnknownCollection(name.to_string()));
        }
        let rec = self.actors.get(id).ok_or_else(|| Error::UnknownActor(id.to_string()))?;
        let entries = rec.object_collections.get(name).cloned().unwrap_or_default();
        Ok(entries
            .into_iter()
            .filter(|oid| match self.objects.get(oid) {
                Some(o) if o.deleted || o.deleted_at_origin => false,
                Some(_) => self.authorize(principal, &Resource::Object(oid.clone()), Action::Read).is_allow(),
                None => true,
            })
            .collect())
    }

    /// Sets an attribute of a native actor, records a `profile_update`
    /// activity and pushes the new profile.
    fn set_attribute(&mut self, id: &SocialId, name: &str, value: &str) -> Result<Activity> {
        let rec = self.actors.get_mut(id).ok_or_else(|| Error::UnknownActor(id.to_string()))?;
        let revision = rec.profile.set(name, value)?;
        let activity = Activity {
            id: self.next_activity_id(),
            verb: Verb::ProfileUpdate,
            actor: id.clone(),
            object: Ref::Actor(id.clone()),
            target: None,
            payload: [("attribute".to_string(), json!(name)), ("revision".to_string(), json!(revision))].into(),
            published: self.now,
        };
        self.store_activity(&activity);
        self.applied.insert(activity.id.clone());
        self.actors.get_mut(id).expect("exists").record_activity(&activity.id);
        self.fan_out_profile(id, Some(activity.clone()));
        Ok(activity)
    }

    pub fn update_profile_attribute(&mut self, session: &Session, name: &str, value: &str) -> Result<Activity> {
        self.require_session(session)?;
        if session.kind != ActorKind::Native {
            return Err(Error::ForbiddenScope);
        }
        self.set_attribute(&session.actor.clone(), name, value)
    }

    /// Pushes `id`'s profile to every profile subscriber, filtered per
    /// subscriber grant, and `activity` to actor subscribers.
    pub(crate) fn fan_out_profile(&mut self, id: &SocialId, activity: Option<Activity>) {
        let profile_subs = self.subscriber_sites(&Topic::Profile(id.clone()));
        let mut recipients: BTreeSet<Domain> = profile_subs.clone();
        if activity.is_some() {
            recipients.extend(self.subscriber_sites(&Topic::ActorActivities(id.clone())));
        }
        for site in recipients {
            let profile = profile_subs.contains(&site).then(|| self.profile_for_site(id, &site));
            let notice = Notice { activity: activity.clone(), object: None, profile };
            self.send(site, Endpoint::Inbox, wire::to_document(&notice));
        }
    }

    /// Sends the current profile to one subscribed site.
    pub(crate) fn push_profile_to(&mut self, id: &SocialId, site: &Domain) {
        if self.subscriptions.contains_key(&(Topic::Profile(id.clone()), site.clone())) {
            let profile = Some(self.profile_for_site(id, site));
            let notice = Notice { activity: None, object: None, profile };
            self.send(site.clone(), Endpoint::Inbox, wire::to_document(&notice));
        }
    }

    /// Replaces a cached remote profile if the snapshot is newer by
    /// (revision, epoch).
    pub(crate) fn apply_profile_snapshot(&mut self, snapshot: &ProfileSnapshot) {
        let owner = &snapshot.profile.owner;
        if owner.authority() == &self.domain {
            return;
        }
        self.ensure_alien(owner);
        let rec = self.actors.get_mut(owner).expect("stub exists");
        if (snapshot.profile.revision, snapshot.epoch) > (rec.profile.revision, rec.profile_epoch) {
            rec.profile = snapshot.profile.clone();
            rec.profile_epoch = snapshot.epoch;
        }
    }
}

fn snapshot_from(doc: &Document) -> Result<ProfileSnapshot> {
    let p = doc.get("profile").cloned().ok_or_else(|| Error::Invalid("response lacks a profile".into()))?;
    Ok(wire::from_document(&p)?)
}

impl Simulation {
    /// Reads `id`'s profile from `requesting_site`, filtered by the scope its
    /// owner granted that site. The requesting site caches the result.
    pub fn get_profile(&mut self, requesting_site: &Domain, id: &SocialId) -> Result<ProfileDoc> {
        let home = id.authority().clone();
        if &home == requesting_site {
            let site = self.site(&home).ok_or_else(|| Error::UnknownSite(home.to_string()))?;
            return site.actor(id).map(|r| r.profile.clone()).ok_or_else(|| Error::UnknownActor(id.to_string()));
        }
        let doc = self.request(requesting_site, &home, Endpoint::Profile(id.local().to_string()), json!({}))?;
        let snapshot = snapshot_from(&doc)?;
        self.with_site(requesting_site, |s| s.apply_profile_snapshot(&snapshot))?;
        Ok(snapshot.profile)
    }

    pub fn subscribe_profile(&mut self, requesting_site: &Domain, id: &SocialId) -> Result<ProfileDoc> {
        let home = id.authority().clone();
        let doc =
            self.request(requesting_site, &home, Endpoint::ProfileSubscribe(id.local().to_string()), json!({}))?;
        let snapshot = snapshot_from(&doc)?;
        self.with_site(requesting_site, |s| s.apply_profile_snapshot(&snapshot))?;
        Ok(snapshot.profile)
    }

    /// Writes an attribute. At the owner's home the owner writes directly;
    /// from another site the write needs a write scope for that site.
    pub fn update_profile_attribute(&mut self, session: &Session, owner: &SocialId, name: &str, value: &str) -> Result<ProfileDoc> {
        let home = owner.authority().clone();
        if session.site == home && &session.actor == owner {
            self.with_site(&home, |s| s.update_profile_attribute(session, name, value))??;
            return Ok(self.site(&home).and_then(|s| s.actor(owner)).expect("native").profile.clone());
        }
        if !self.site(&session.site).map(|s| s.is_session_valid(session)).unwrap_or(false) {
            return Err(Error::NoSession(session.actor.to_string()));
        }
        let body = json!({"set": {name: value}});
        let doc = self.request(&session.site, &home, Endpoint::Profile(owner.local().to_string()), body)?;
        let snapshot = snapshot_from(&doc)?;
        let site = session.site.clone();
        self.with_site(&site, |s| s.apply_profile_snapshot(&snapshot))?;
        Ok(snapshot.profile)
    }

    pub fn get_contacts(&mut self, requesting_site: &Domain, id: &SocialId) -> Result<ContactCollection> {
        let home = id.authority().clone();
        if &home == requesting_site {
            let site = self.site(&home).ok_or_else(|| Error::UnknownSite(home.to_string()))?;
            return site.actor(id).map(|r| r.contacts.clone()).ok_or_else(|| Error::UnknownActor(id.to_string()));
        }
        let doc = self.request(requesting_site, &home, Endpoint::Contacts(id.local().to_string()), json!({}))?;
        Ok(wire::from_document(&doc)?)
    }

    pub fn get_collection(&mut self, requesting_site: &Domain, id: &SocialId, name: &str) -> Result<Vec<ObjectId>> {
        let home = id.authority().clone();
        if &home == requesting_site {
            let site = self.site(&home).ok_or_else(|| Error::UnknownSite(home.to_string()))?;
            return site.visible_collection(id, name, &Principal::Actor(id.clone()));
        }
        let endpoint = Endpoint::Collection(id.local().to_string(), name.to_string());
        let doc = self.request(requesting_site, &home, endpoint, json!({}))?;
        Ok(wire::from_document(&doc)?)
    }

    /// Stores a grant at the grantor's home and re-pushes the profile to the
    /// grantee if it is subscribed. Returns the new scope epoch.
    pub fn grant_scope(&mut self, session: &Session, grant: ScopeGrant) -> Result<u64> {
        let site = session.site.clone();
        let grantee = grant.grantee_site.clone();
        let grantor = grant.grantor.clone();
        self.with_site(&site, |s| {
            let epoch = s.grant_scope(session, grant)?;
            s.push_profile_to(&grantor, &grantee);
            Ok(epoch)
        })?
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{d, id, join, sim};

    fn grant(sim: &mut Simulation, session: &Session, site: &str, spec: &str) {
        let g = ScopeGrant::parse_spec(session.actor.clone(), d(site), spec).unwrap();
        sim.grant_scope(session, g).unwrap();
    }

    #[test]
    fn reads_are_filtered_by_grant() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        for (k, v) in [("name", "Alice"), ("email", "a@x.example"), ("bio", "hi")] {
            sim.update_profile_attribute(&alice, &alice.actor, k, v).unwrap();
        }
        assert!(sim.get_profile(&d("b.example"), &alice.actor).unwrap().attributes.is_empty());
        grant(&mut sim, &alice, "b.example", "read=name|bio");
        let seen = sim.get_profile(&d("b.example"), &alice.actor).unwrap();
        assert_eq!(seen.attributes.keys().collect::<Vec<_>>(), ["bio", "name"]);
        assert_eq!(seen.revision, 3);
    }

    #[test]
    fn push_follows_grant_changes() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        grant(&mut sim, &alice, "b.example", "full");
        sim.subscribe_profile(&d("b.example"), &alice.actor).unwrap();
        sim.update_profile_attribute(&alice, &alice.actor, "bio", "hello").unwrap();
        sim.run_until_quiescent().unwrap();
        let cached = |sim: &Simulation| sim.site(&d("b.example")).unwrap().actor(&alice.actor).unwrap().profile.clone();
        assert_eq!(cached(&sim).attributes.get("bio").map(String::as_str), Some("hello"));
        grant(&mut sim, &alice, "b.example", "minimal");
        sim.run_until_quiescent().unwrap();
        assert!(!cached(&sim).attributes.contains_key("bio"));
    }

    #[test]
    fn remote_writes_need_write_scope() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let remote = sim.login_remote(&alice, &d("b.example")).unwrap();
        let err = sim.update_profile_attribute(&remote, &alice.actor, "location", "Oxford").unwrap_err();
        assert_eq!(err.code(), "forbidden_scope");
        grant(&mut sim, &alice, "b.example", "read=location,write=location");
        let p = sim.update_profile_attribute(&remote, &alice.actor, "location", "Oxford").unwrap();
        assert_eq!(p.attributes.get("location").map(String::as_str), Some("Oxford"));
        let err = sim.update_profile_attribute(&alice, &alice.actor, "shoe-size", "9").unwrap_err();
        assert_eq!(err.code(), "unknown_attribute");
    }

    #[test]
    fn contacts_need_contacts_scope() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        join(&mut sim, "b.example", "bob");
        sim.follow(&alice, &id("bob@b.example")).unwrap();
        sim.run_until_quiescent().unwrap();
        assert_eq!(sim.get_contacts(&d("b.example"), &alice.actor).unwrap_err().code(), "forbidden_scope");
        grant(&mut sim, &alice, "b.example", "contacts");
        let c = sim.get_contacts(&d("b.example"), &alice.actor).unwrap();
        assert!(c.following.contains(&id("bob@b.example")));
    }

    #[test]
    fn unknown_collection_name() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        assert!(sim.get_collection(&d("b.example"), &alice.actor, "x-albums").unwrap().is_empty());
        assert_eq!(sim.get_collection(&d("b.example"), &alice.actor, "albums").unwrap_err().code(), "unknown_collection");
    }
}
