//! The verb engine: performing actions, timelines and feeds, subscriptions,
//! notification fan-out, and applying inbound activities to local state.
//!
//! Every activity is applied through [`Site::apply_effects`], whether it was
//! performed locally or arrived in the inbox. What an application changes
//! depends only on the role this site plays for it (the actor's home, the
//! object's content site, the acting site, or a plain subscriber).

use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::Simulation;
use crate::model::{
    Activity, ActivityId, ActorKind, Domain, ObjectId, Ref, RatingEntry, SocialId, Tick, Verb,
};
use crate::privacy::{Action, Decision, Principal, Resource};
use crate::site::{EventKind, Session, Site};
use crate::wire::{self, Document, Endpoint, Notice};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    ActorActivities(SocialId),
    Profile(SocialId),
    Object(ObjectId),
}

pub type SubscriptionKey = (Topic, Domain);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub topic: Topic,
    pub subscriber_site: Domain,
    pub created: Tick,
    /// Principal whose authorization covers payload pushes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_behalf: Option<Principal>,
    /// Created implicitly by a follow; removed when the last follow through
    /// that site is undone.
    #[serde(default)]
    pub via_follow: bool,
}

/// Last-writer-wins state of one follow edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeState {
    pub key: (Tick, ActivityId),
    pub active: bool,
    /// Site where the follow was performed.
    pub via: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityFeed {
    pub subject: Ref,
    /// Newest first.
    pub entries: Vec<Activity>,
    pub as_of: Tick,
}

fn newest_first(entries: &mut [Activity]) {
    entries.sort_by(|a, b| (b.published, &b.id).cmp(&(a.published, &a.id)));
}

/// The object an activity is about, for routing and feed filtering.
pub(crate) fn object_of_interest(a: &Activity) -> Option<&ObjectId> {
    match a.verb {
        Verb::Reply | Verb::Mention => a.target.as_ref().and_then(Ref::as_object).or(a.object.as_object()),
        _ => a.object.as_object(),
    }
}

impl Site {
    /// Records a new activity performed here by `session`'s actor and applies it.
    pub(crate) fn record_and_apply(
        &mut self,
        session: &Session,
        verb: Verb,
        object: Ref,
        target: Option<Ref>,
        payload: BTreeMap<String, serde_json::Value>,
        attachments: Notice,
    ) -> Activity {
        let activity = Activity {
            id: self.next_activity_id(),
            verb,
            actor: session.actor.clone(),
            object,
            target,
            payload,
            published: self.now,
        };
        self.applied.insert(activity.id.clone());
        let notice = Notice { activity: Some(activity.clone()), ..attachments };
        self.apply_effects(&activity, &notice);
        self.route_activity(&activity, None);
        activity
    }

    /// Applies a deduplicated inbound notice and relays it where this site is
    /// authoritative.
    pub(crate) fn apply_inbound(&mut self, from: &Domain, notice: Notice) {
        match notice.activity.clone() {
            Some(activity) => {
                self.apply_effects(&activity, &notice);
                self.route_activity(&activity, Some(from));
            }
            None => {
                if let Some(snapshot) = &notice.profile {
                    self.apply_profile_snapshot(snapshot);
                }
            }
        }
    }

    pub(crate) fn apply_effects(&mut self, activity: &Activity, notice: &Notice) {
        self.store_activity(activity);
        let actor = activity.actor.clone();
        self.ensure_alien(&actor);
        if let Some(doc) = &notice.object {
            self.learn_object(doc);
        }
        if let Some(rec) = self.actors.get_mut(&actor) {
            rec.record_activity(&activity.id);
        }
        let mut detail = json!({
            "activity": activity.id.to_string(),
            "verb": activity.verb.as_str(),
            "actor": actor.to_string(),
        });
        match &activity.verb {
            Verb::Follow | Verb::Unfollow => {
                if let Some(target) = activity.object.as_actor() {
                    let active = activity.verb == Verb::Follow;
                    self.apply_follow_edge(&actor, target, active, activity);
                }
            }
            Verb::Post | Verb::Own => {
                if let Some(oid) = activity.object.as_object() {
                    if actor.authority() == &self.domain {
                        if let Some(rec) = self.actors.get_mut(&actor) {
                            if activity.verb == Verb::Post {
                                rec.add_to_collection("authored", oid);
                            }
                        }
                    }
                    let owner = self.objects.get(oid).map(|o| o.owner.clone());
                    if let Some(owner) = owner {
                        if owner.authority() == &self.domain {
                            if let Some(rec) = self.actors.get_mut(&owner) {
                                rec.add_to_collection("owned", oid);
                            }
                        }
                    }
                }
            }
            Verb::Reply => {
                let (Some(comment), Some(target)) =
                    (activity.object.as_object(), activity.target.as_ref().and_then(Ref::as_object))
                else {
                    return;
                };
                if target.authority() == &self.domain {
                    if let Some(obj) = self.objects.get_mut(target) {
                        if obj.is_native() && !obj.reply_collection.contains(comment) {
                            obj.reply_collection.push(comment.clone());
                        }
                    }
                }
                self.notify_object_parties(target, &activity.id, true);
            }
            Verb::Rate => {
                let Some(oid) = activity.object.as_object() else { return };
                let value = activity.payload.get("value").and_then(|v| v.as_i64()).unwrap_or(0);
                if oid.authority() == &self.domain {
                    if let Some(obj) = self.objects.get_mut(oid) {
                        if obj.is_native() {
                            let entry = RatingEntry { published: activity.published, activity: activity.id.clone(), value };
                            obj.fold_rating(&actor, entry);
                        }
                    }
                }
                self.notify_object_parties(oid, &activity.id, false);
            }
            Verb::Mention => {
                if let Some(m) = activity.target.as_ref().and_then(Ref::as_actor) {
                    if m.authority() == &self.domain && self.actors.contains_key(m) {
                        let inbox = self.mention_inbox.entry(m.clone()).or_default();
                        if !inbox.contains(&activity.id) {
                            inbox.push(activity.id.clone());
                        }
                    }
                }
            }
            Verb::Reshare => {
                if let Some(oid) = activity.object.as_object() {
                    self.notify_object_parties(oid, &activity.id, false);
                }
            }
            Verb::ProfileUpdate => {
                if let Some(snapshot) = &notice.profile {
                    self.apply_profile_snapshot(snapshot);
                }
            }
            Verb::ObjectUpdate => self.apply_object_update(activity, notice),
            Verb::ObjectDelete => {
                if let Some(oid) = activity.object.as_object() {
                    if oid.authority() != &self.domain {
                        if let Some(obj) = self.objects.get_mut(oid) {
                            obj.deleted_at_origin = true;
                        }
                    }
                }
            }
            Verb::Other(name) => {
                info!("{}: skipping unknown verb `{name}` in {}", self.domain, activity.id);
                detail["skipped"] = json!(true);
            }
        }
        self.emit(EventKind::Apply, detail);
    }

    /// Adds a notification entry for the native parties of an object known here.
    fn notify_object_parties(&mut self, oid: &ObjectId, id: &ActivityId, include_mentions: bool) {
        let Some(obj) = self.objects.get(oid) else { return };
        let mut parties: BTreeSet<SocialId> = [obj.author.clone(), obj.owner.clone()].into();
        if include_mentions {
            parties.extend(obj.mentions.iter().cloned());
        }
        for p in parties {
            if p.authority() == &self.domain && self.actors.get(&p).map(|r| r.kind == ActorKind::Native).unwrap_or(false)
            {
                let list = self.notifications.entry(p).or_default();
                if !list.contains(id) {
                    list.push(id.clone());
                }
            }
        }
    }

    fn apply_follow_edge(&mut self, follower: &SocialId, followee: &SocialId, active: bool, activity: &Activity) {
        let key = activity.order_key();
        let via = activity.id.authority().clone();
        let edge = (follower.clone(), followee.clone());
        if let Some(prev) = self.follow_edges.get(&edge) {
            if prev.key >= key {
                return;
            }
        }
        self.follow_edges.insert(edge, EdgeState { key, active, via: via.clone() });
        if let Some(rec) = self.actors.get_mut(followee) {
            if active {
                rec.contacts.followers.insert(follower.clone());
            } else {
                rec.contacts.followers.remove(follower);
            }
        }
        if let Some(rec) = self.actors.get_mut(follower) {
            if active {
                rec.contacts.following.insert(followee.clone());
            } else {
                rec.contacts.following.remove(followee);
            }
        }
        if followee.authority() == &self.domain && via != self.domain {
            let key = (Topic::ActorActivities(followee.clone()), via.clone());
            if active {
                let now = self.now;
                self.subscriptions.entry(key).or_insert_with(|| Subscription {
                    topic: Topic::ActorActivities(followee.clone()),
                    subscriber_site: via,
                    created: now,
                    on_behalf: None,
                    via_follow: true,
                });
            } else {
                let still_used =
                    self.follow_edges.iter().any(|((_, f), e)| f == followee && e.active && e.via == key.1);
                if !still_used && self.subscriptions.get(&key).map(|s| s.via_follow).unwrap_or(false) {
                    self.subscriptions.remove(&key);
                }
            }
        }
    }

    pub(crate) fn subscriber_sites(&self, topic: &Topic) -> BTreeSet<Domain> {
        self.subscriptions.keys().filter(|(t, _)| t == topic).map(|(_, d)| d.clone()).collect()
    }

    pub(crate) fn add_subscription(&mut self, topic: Topic, subscriber: Domain, on_behalf: Option<Principal>) -> Subscription {
        let now = self.now;
        let sub = self
            .subscriptions
            .entry((topic.clone(), subscriber.clone()))
            .or_insert_with(|| Subscription { topic, subscriber_site: subscriber, created: now, on_behalf: None, via_follow: false });
        sub.via_follow = false;
        if on_behalf.is_some() {
            sub.on_behalf = on_behalf;
        }
        sub.clone()
    }

    /// Computes the recipients of `activity` from this site's point of view
    /// and queues one notice per recipient site.
    pub(crate) fn route_activity(&mut self, activity: &Activity, from: Option<&Domain>) {
        if matches!(activity.verb, Verb::ProfileUpdate | Verb::Other(_)) {
            return;
        }
        let here = self.domain.clone();
        let acting = activity.id.authority() == &here;
        let home = activity.actor.authority() == &here;
        let object_verb = matches!(activity.verb, Verb::ObjectUpdate | Verb::ObjectDelete);
        let interest = object_of_interest(activity).cloned();
        let mut recipients: BTreeSet<Domain> = BTreeSet::new();

        if home && !object_verb {
            recipients.extend(self.subscriber_sites(&Topic::ActorActivities(activity.actor.clone())));
        }
        if acting && !home && !object_verb {
            recipients.insert(activity.actor.authority().clone());
        }
        if acting {
            match activity.verb {
                Verb::Follow | Verb::Unfollow | Verb::Own | Verb::Mention => {
                    let who = if activity.verb == Verb::Mention {
                        activity.target.as_ref().and_then(Ref::as_actor)
                    } else if activity.verb == Verb::Own {
                        self.objects.get(activity.object.as_object().expect("own names an object")).map(|o| &o.owner)
                    } else {
                        activity.object.as_actor()
                    };
                    if let Some(who) = who {
                        recipients.insert(who.authority().clone());
                    }
                }
                Verb::Reply | Verb::Rate | Verb::Reshare | Verb::ObjectUpdate => {
                    if let Some(oid) = &interest {
                        recipients.insert(oid.authority().clone());
                    }
                }
                _ => {}
            }
        }
        let mut payload_for: BTreeMap<Domain, Principal> = BTreeMap::new();
        let content_here = interest
            .as_ref()
            .map(|oid| oid.authority() == &here && self.objects.get(oid).map(|o| o.is_native()).unwrap_or(false))
            .unwrap_or(false);
        if content_here {
            let oid = interest.clone().expect("checked");
            let obj = self.objects.get(&oid).expect("checked").clone();
            let subscribers: Vec<(Domain, Option<Principal>)> = self
                .subscriptions
                .values()
                .filter(|s| s.topic == Topic::Object(oid.clone()))
                .map(|s| (s.subscriber_site.clone(), s.on_behalf.clone()))
                .collect();
            match activity.verb {
                Verb::Reply | Verb::Rate | Verb::Reshare => {
                    recipients.insert(obj.author.authority().clone());
                    recipients.insert(obj.owner.authority().clone());
                    if activity.verb == Verb::Reply {
                        recipients.extend(obj.mentions.iter().map(|m| m.authority().clone()));
                    }
                    if activity.verb != Verb::Reshare {
                        recipients.extend(subscribers.iter().map(|(d, _)| d.clone()));
                    }
                }
                Verb::ObjectUpdate | Verb::ObjectDelete if acting => {
                    for (site, principal) in subscribers {
                        recipients.insert(site.clone());
                        if activity.verb == Verb::ObjectDelete || obj.deleted {
                            continue;
                        }
                        let principal = principal.unwrap_or(Principal::Site(site.clone()));
                        match self.check(&principal, &Resource::Object(oid.clone()), Action::Read) {
                            Decision::Allow => {
                                payload_for.insert(site, principal);
                            }
                            Decision::Deny(_) => {
                                self.subscriptions.remove(&(Topic::Object(oid.clone()), site));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        recipients.remove(&here);
        recipients.remove(activity.id.authority());
        if let Some(from) = from {
            recipients.remove(from);
        }
        let summary = interest.as_ref().and_then(|oid| self.objects.get(oid)).map(|o| self.object_doc(o, None));
        for to in recipients {
            let mut object = summary.clone();
            if let Some(principal) = payload_for.get(&to) {
                let obj = self.objects.get(interest.as_ref().expect("payload implies object")).expect("known");
                object = Some(self.object_doc(obj, Some(principal.clone())));
            }
            // Edit proposals carry the editor's bytes to the content site.
            if activity.verb == Verb::ObjectUpdate && acting && !content_here {
                if let Some(doc) = self.pending_proposal_doc(activity) {
                    object = Some(doc);
                }
            }
            let notice = Notice { activity: Some(activity.clone()), object, profile: None };
            self.send(to, Endpoint::Inbox, wire::to_document(&notice));
        }
    }

    /// Feed of `actor` as recorded here.
    pub fn timeline(&self, actor: &SocialId) -> Result<ActivityFeed> {
        let rec = self.actors.get(actor).ok_or_else(|| Error::UnknownActor(actor.to_string()))?;
        let mut entries: Vec<Activity> =
            rec.timeline.iter().filter_map(|id| self.activities.get(id)).cloned().collect();
        newest_first(&mut entries);
        Ok(ActivityFeed { subject: Ref::Actor(actor.clone()), entries, as_of: self.now })
    }

    /// Local actor's feed as visible to `requester`.
    pub fn publish_feed(&self, subject: &SocialId, requester: &Principal) -> Result<ActivityFeed> {
        match self.actors.get(subject) {
            Some(r) if r.kind == ActorKind::Native => {}
            _ => return Err(Error::UnknownSubject(subject.to_string())),
        }
        self.authorize(requester, &Resource::Feed(subject.clone()), Action::Read).into_result()?;
        let trusted = match requester {
            Principal::Site(d) => self
                .grant(subject, d)
                .map(|g| g.readable_attributes == crate::privacy::ReadScope::Full)
                .unwrap_or(false),
            Principal::Actor(a) => a == subject,
        };
        let mut feed = self.timeline(subject)?;
        if !trusted {
            feed.entries.retain(|a| match object_of_interest(a) {
                Some(oid) if self.objects.contains_key(oid) => {
                    self.authorize(requester, &Resource::Object(oid.clone()), Action::Read).is_allow()
                }
                _ => true,
            });
        }
        Ok(feed)
    }

    pub(crate) fn serve_feed(&mut self, from: &Domain, local: &str) -> Result<Document> {
        let subject = SocialId::acct(&self.domain, local)?;
        Ok(wire::to_document(&self.publish_feed(&subject, &Principal::Site(from.clone()))?))
    }

    pub(crate) fn serve_feed_subscribe(&mut self, from: &Domain, local: &str) -> Result<Document> {
        let subject = SocialId::acct(&self.domain, local)?;
        match self.actors.get(&subject) {
            Some(r) if r.kind == ActorKind::Native => {}
            _ => return Err(Error::UnknownSubject(subject.to_string())),
        }
        let principal = Principal::Site(from.clone());
        self.check(&principal, &Resource::Feed(subject.clone()), Action::Read).into_result()?;
        let sub = self.add_subscription(Topic::ActorActivities(subject), from.clone(), None);
        Ok(wire::to_document(&sub))
    }

    pub fn follow(&mut self, session: &Session, target: &SocialId) -> Result<Activity> {
        self.follow_edge(session, target, Verb::Follow)
    }

    pub fn unfollow(&mut self, session: &Session, target: &SocialId) -> Result<Activity> {
        self.follow_edge(session, target, Verb::Unfollow)
    }

    fn follow_edge(&mut self, session: &Session, target: &SocialId, verb: Verb) -> Result<Activity> {
        self.require_session(session)?;
        if &session.actor == target {
            return Err(Error::SelfFollow);
        }
        if !self.actors.contains_key(target) {
            return Err(Error::UnknownTarget(target.to_string()));
        }
        Ok(self.record_and_apply(session, verb, Ref::Actor(target.clone()), None, BTreeMap::new(), Notice::default()))
    }

    /// Re-sends a foreign actor's active follow edges to their identity site.
    pub fn propagate_foreign_contact(&mut self, session: &Session, followed: &SocialId) -> Result<()> {
        self.require_session(session)?;
        if session.kind != ActorKind::Foreign {
            return Err(Error::Forbidden(None));
        }
        let edge = self
            .follow_edges
            .get(&(session.actor.clone(), followed.clone()))
            .ok_or_else(|| Error::UnknownTarget(followed.to_string()))?;
        let activity = self
            .activities
            .get(&edge.key.1)
            .cloned()
            .ok_or_else(|| Error::UnknownTarget(followed.to_string()))?;
        let notice = Notice { activity: Some(activity), ..Default::default() };
        self.send(session.actor.authority().clone(), Endpoint::Inbox, wire::to_document(&notice));
        Ok(())
    }

    pub fn reply(&mut self, session: &Session, target: &ObjectId, text: &str, local: Option<&str>) -> Result<Activity> {
        self.require_session(session)?;
        if !self.objects.contains_key(target) {
            return Err(Error::UnknownTarget(target.to_string()));
        }
        let local = match local {
            Some(l) => l.to_string(),
            None => self.next_object_local("reply-"),
        };
        let comment = self.insert_native_object(
            session,
            &local,
            crate::model::ContentType::Text,
            text.as_bytes().to_vec(),
            crate::model::Audience::public(),
            &session.actor.clone(),
            Vec::new(),
        )?;
        let attachments = Notice { object: self.objects.get(target).map(|o| self.object_doc(o, None)), ..Default::default() };
        Ok(self.record_and_apply(
            session,
            Verb::Reply,
            Ref::Object(comment.id),
            Some(Ref::Object(target.clone())),
            [("content".to_string(), json!(text))].into(),
            attachments,
        ))
    }

    pub fn rate(&mut self, session: &Session, target: &ObjectId, value: i64) -> Result<Activity> {
        self.require_session(session)?;
        if !self.objects.contains_key(target) {
            return Err(Error::UnknownTarget(target.to_string()));
        }
        let attachments = Notice { object: self.objects.get(target).map(|o| self.object_doc(o, None)), ..Default::default() };
        Ok(self.record_and_apply(
            session,
            Verb::Rate,
            Ref::Object(target.clone()),
            None,
            [("value".to_string(), json!(value))].into(),
            attachments,
        ))
    }

    pub fn mention(&mut self, session: &Session, object: &ObjectId, mentioned: &SocialId) -> Result<Activity> {
        self.require_session(session)?;
        if !self.actors.contains_key(mentioned) {
            return Err(Error::UnknownTarget(mentioned.to_string()));
        }
        let attachments = Notice { object: self.objects.get(object).map(|o| self.object_doc(o, None)), ..Default::default() };
        Ok(self.record_and_apply(
            session,
            Verb::Mention,
            Ref::Object(object.clone()),
            Some(Ref::Actor(mentioned.clone())),
            BTreeMap::new(),
            attachments,
        ))
    }

    /// Repeats an activity; the copy points at the original through `provenance`.
    pub fn reshare(&mut self, session: &Session, original: &ActivityId) -> Result<Activity> {
        self.require_session(session)?;
        let orig = self.activities.get(original).cloned().ok_or_else(|| Error::UnknownTarget(original.to_string()))?;
        let object = match object_of_interest(&orig) {
            Some(oid) => Ref::Object(oid.clone()),
            None => orig.object.clone(),
        };
        let attachments = Notice {
            object: object.as_object().and_then(|oid| self.objects.get(oid)).map(|o| self.object_doc(o, None)),
            ..Default::default()
        };
        Ok(self.record_and_apply(
            session,
            Verb::Reshare,
            object,
            Some(Ref::Activity(original.clone())),
            [("provenance".to_string(), json!(original.to_string()))].into(),
            attachments,
        ))
    }
}

impl Simulation {
    /// Makes sure `site` knows `id`, resolving it at its home when remote.
    pub(crate) fn ensure_actor_known(&mut self, site: &Domain, id: &SocialId) -> Result<()> {
        let known = self.site(site).ok_or_else(|| Error::UnknownSite(site.to_string()))?.actor(id).is_some();
        if !known {
            if id.authority() == site {
                return Err(Error::UnknownActor(id.to_string()));
            }
            self.resolve(site, id)?;
        }
        Ok(())
    }

    pub fn follow(&mut self, session: &Session, target: &SocialId) -> Result<Activity> {
        if &session.actor == target {
            return Err(Error::SelfFollow);
        }
        self.ensure_actor_known(&session.site, target).map_err(|e| match e {
            Error::UnknownActor(t) => Error::UnknownTarget(t),
            other => other,
        })?;
        self.with_site(&session.site.clone(), |s| s.follow(session, target))?
    }

    pub fn unfollow(&mut self, session: &Session, target: &SocialId) -> Result<Activity> {
        self.with_site(&session.site.clone(), |s| s.unfollow(session, target))?
    }

    pub fn propagate_foreign_contact(&mut self, session: &Session, followed: &SocialId) -> Result<()> {
        self.with_site(&session.site.clone(), |s| s.propagate_foreign_contact(session, followed))?
    }

    pub fn reply(&mut self, session: &Session, target: &ObjectId, text: &str, local: Option<&str>) -> Result<Activity> {
        self.ensure_object_visible(&session.site, &session.actor, target)?;
        self.with_site(&session.site.clone(), |s| s.reply(session, target, text, local))?
    }

    pub fn rate(&mut self, session: &Session, target: &ObjectId, value: i64) -> Result<Activity> {
        self.ensure_object_visible(&session.site, &session.actor, target)?;
        self.with_site(&session.site.clone(), |s| s.rate(session, target, value))?
    }

    pub fn mention(&mut self, session: &Session, object: &ObjectId, mentioned: &SocialId) -> Result<Activity> {
        self.ensure_actor_known(&session.site, mentioned).map_err(|e| match e {
            Error::UnknownActor(t) => Error::UnknownTarget(t),
            other => other,
        })?;
        self.with_site(&session.site.clone(), |s| s.mention(session, object, mentioned))?
    }

    pub fn reshare(&mut self, session: &Session, original: &ActivityId) -> Result<Activity> {
        self.with_site(&session.site.clone(), |s| s.reshare(session, original))?
    }

    /// Generic verb entry point.
    pub fn perform(
        &mut self,
        session: &Session,
        verb: Verb,
        object: Ref,
        target: Option<Ref>,
        payload: BTreeMap<String, serde_json::Value>,
    ) -> Result<Activity> {
        let bad = || Error::Invalid(format!("bad operands for {verb}"));
        match (&verb, &object, &target) {
            (Verb::Follow, Ref::Actor(t), None) => self.follow(session, t),
            (Verb::Unfollow, Ref::Actor(t), None) => self.unfollow(session, t),
            (Verb::Reply, _, Some(Ref::Object(t))) => {
                let text = payload.get("content").and_then(|v| v.as_str()).unwrap_or_default().to_string();
                self.reply(session, t, &text, None)
            }
            (Verb::Rate, Ref::Object(o), None) => {
                let value = payload.get("value").and_then(|v| v.as_i64()).ok_or_else(bad)?;
                self.rate(session, o, value)
            }
            (Verb::Mention, Ref::Object(o), Some(Ref::Actor(m))) => self.mention(session, o, m),
            (Verb::Reshare, Ref::Activity(a), None) => self.reshare(session, a),
            _ => Err(bad()),
        }
    }

    pub fn timeline(&self, site: &Domain, actor: &SocialId) -> Result<ActivityFeed> {
        self.site(site).ok_or_else(|| Error::UnknownSite(site.to_string()))?.timeline(actor)
    }

    /// Fetches `subject`'s feed from its home on behalf of `requesting_site`.
    pub fn publish_feed(&mut self, requesting_site: &Domain, subject: &SocialId) -> Result<ActivityFeed> {
        let home = subject.authority().clone();
        let doc = if &home == requesting_site {
            let feed = self
                .site(&home)
                .ok_or_else(|| Error::UnknownSite(home.to_string()))?
                .publish_feed(subject, &Principal::Actor(subject.clone()))?;
            return Ok(feed);
        } else {
            self.request(requesting_site, &home, Endpoint::Feed(subject.local().to_string()), json!({}))?
        };
        Ok(wire::from_document(&doc)?)
    }

    /// Registers `remote_site` for activities about an actor or an object.
    pub fn subscribe_activities(&mut self, remote_site: &Domain, subject: &Ref, requester: Option<Principal>) -> Result<Subscription> {
        let (home, endpoint) = match subject {
            Ref::Actor(id) => (id.authority().clone(), Endpoint::FeedSubscribe(id.local().to_string())),
            Ref::Object(oid) => (oid.authority().clone(), Endpoint::ObjectSubscribe(oid.local().to_string())),
            Ref::Activity(a) => return Err(Error::UnknownSubject(a.to_string())),
        };
        let body = match &requester {
            Some(p) => json!({"requester": p.to_string()}),
            None => json!({}),
        };
        let doc = self.request(remote_site, &home, endpoint, body).map_err(|e| match e {
            Error::UnknownActor(s) | Error::UnknownObject(s) => Error::UnknownSubject(s),
            other => other,
        })?;
        Ok(wire::from_document(&doc)?)
    }

    /// Hands a raw envelope straight to a site's inbox.
    pub fn deliver(&mut self, site: &Domain, envelope: &wire::Envelope) -> Result<crate::site::Ack> {
        self.with_site(site, |s| s.deliver(envelope))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Audience, MessageId};
    use crate::objects::NewObject;
    use crate::site::Ack;
    use crate::testutil::{d, id, join, oid, sim};
    use crate::wire::{Envelope, EnvelopeHeader};

    #[test]
    fn follow_and_unfollow_reach_both_ends() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        join(&mut sim, "b.example", "bob");
        let bob = id("bob@b.example");
        sim.follow(&alice, &bob).unwrap();
        sim.run_until_quiescent().unwrap();
        let at_b = sim.site(&d("b.example")).unwrap().actor(&bob).unwrap();
        assert!(at_b.contacts.followers.contains(&alice.actor));
        sim.unfollow(&alice, &bob).unwrap();
        sim.run_until_quiescent().unwrap();
        let at_b = sim.site(&d("b.example")).unwrap().actor(&bob).unwrap();
        assert!(at_b.contacts.followers.is_empty());
        assert!(sim.site(&d("a.example")).unwrap().actor(&alice.actor).unwrap().contacts.following.is_empty());
    }

    #[test]
    fn follow_errors() {
        let mut sim = sim(&["a.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        assert_eq!(sim.follow(&alice, &alice.actor.clone()).unwrap_err().code(), "self_follow");
        assert_eq!(sim.follow(&alice, &id("ghost@a.example")).unwrap_err().code(), "unknown_target");
    }

    #[test]
    fn distinct_raters_are_counted_once_each() {
        let mut sim = sim(&["a.example", "b.example", "c.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let raters = [join(&mut sim, "b.example", "bob"), join(&mut sim, "c.example", "carol"), join(&mut sim, "a.example", "dave")];
        sim.create_object(&alice, NewObject::text("photo", Audience::public())).unwrap();
        let photo = sim.site(&d("a.example")).unwrap().objects().next().unwrap().id.clone();
        for (i, r) in raters.iter().enumerate() {
            sim.rate(r, &photo, i as i64 + 1).unwrap();
        }
        sim.rate(&raters[0], &photo, 5).unwrap();
        sim.run_until_quiescent().unwrap();

        // Fold the applied rate activities at the content site by actor,
        // keeping the latest.
        let site = sim.site(&d("a.example")).unwrap();
        let mut latest = BTreeMap::new();
        for e in sim.trace().of_kind(EventKind::Apply).filter(|e| e.site == d("a.example")) {
            if e.detail["verb"] == "rate" {
                let act = site.activity(&e.detail["activity"].as_str().unwrap().parse().unwrap()).unwrap();
                latest.insert(act.actor.clone(), act.payload["value"].as_i64().unwrap());
            }
        }
        let agg = &site.object(&photo).unwrap().rating_aggregate;
        assert_eq!(agg.count as usize, latest.len());
        assert_eq!(agg.count, 3);
        assert_eq!(agg.sum, latest.values().sum::<i64>());
    }

    #[test]
    fn reply_notifies_author_and_subscribers() {
        let mut sim = sim(&["a.example", "b.example", "c.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let bob = join(&mut sim, "b.example", "bob");
        sim.create_object(&alice, NewObject { local: Some("p".into()), ..NewObject::text("hi", Audience::public()) })
            .unwrap();
        let p = oid("a.example/p");
        sim.subscribe_activities(&d("c.example"), &Ref::Object(p.clone()), None).unwrap();
        let reply = sim.reply(&bob, &p, "hello", Some("r")).unwrap();
        sim.run_until_quiescent().unwrap();
        let a = sim.site(&d("a.example")).unwrap();
        assert_eq!(a.object(&p).unwrap().reply_collection, vec![oid("b.example/r")]);
        assert!(a.notifications(&alice.actor).contains(&reply.id));
        assert!(sim.site(&d("c.example")).unwrap().has_applied(&reply.id));
    }

    #[test]
    fn reshare_keeps_provenance() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let bob = join(&mut sim, "b.example", "bob");
        sim.follow(&bob, &alice.actor).unwrap();
        sim.run_until_quiescent().unwrap();
        let (_, post) = sim.create_object(&alice, NewObject::text("hi", Audience::public())).unwrap();
        sim.run_until_quiescent().unwrap();
        let copy = sim.reshare(&bob, &post.id).unwrap();
        assert_eq!(copy.verb, Verb::Reshare);
        assert_eq!(copy.target, Some(Ref::Activity(post.id.clone())));
        assert_eq!(copy.payload["provenance"], post.id.to_string());
        assert_eq!(sim.reshare(&bob, &"b.example/999".parse().unwrap()).unwrap_err().code(), "unknown_target");
    }

    #[test]
    fn duplicate_notice_is_applied_once() {
        let mut sim = sim(&["a.example", "b.example"]);
        let alice = join(&mut sim, "a.example", "alice");
        let (_, post) = sim.create_object(&alice, NewObject::text("hi", Audience::public())).unwrap();
        let (a, b) = (d("a.example"), d("b.example"));
        let header = EnvelopeHeader {
            from: a.clone(),
            to: b.clone(),
            endpoint: "/inbox".into(),
            message_id: MessageId::new(a.clone(), 900),
            sent_tick: 0,
            status: None,
            in_reply_to: None,
        };
        let notice = Notice { activity: Some(post.clone()), ..Default::default() };
        let env = Envelope::seal(&sim.keys().pair(&a, &b), header, wire::encode_value(&notice));
        assert_eq!(sim.deliver(&b, &env).unwrap(), Ack::Applied);
        assert_eq!(sim.deliver(&b, &env).unwrap(), Ack::Duplicate);
        let mut forged = env.clone();
        forged.token[0] ^= 1;
        assert_eq!(sim.deliver(&b, &forged).unwrap(), Ack::Rejected);
    }

    #[test]
    fn feed_of_unknown_actor() {
        let mut sim = sim(&["a.example", "b.example"]);
        join(&mut sim, "a.example", "alice");
        assert!(sim.publish_feed(&d("b.example"), &id("alice@a.example")).unwrap().entries.is_empty());
        assert_eq!(sim.publish_feed(&d("b.example"), &id("zed@a.example")).unwrap_err().code(), "unknown_subject");
    }
}
