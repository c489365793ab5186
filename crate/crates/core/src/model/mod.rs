//! Domain types shared by every protocol module.

mod id;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use id::{
    parse_object_id, parse_social_id, validate_local_name, ActivityId, Domain, IdError, IdScheme,
    MessageId, ObjectId, SocialId,
};

use crate::error::Error;

/// Simulation time.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Native,
    Alien,
    Foreign,
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActorKind::Native => "native",
            ActorKind::Alien => "alien",
            ActorKind::Foreign => "foreign",
        })
    }
}

pub const RECOGNIZED_ATTRIBUTES: [&str; 6] = ["name", "avatar_ref", "location", "email", "bio", "website"];

/// True for the closed attribute set and `x-` extensions.
pub fn is_known_attribute(name: &str) -> bool {
    RECOGNIZED_ATTRIBUTES.contains(&name) || (name.len() > 2 && name.starts_with("x-"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileDoc {
    pub owner: SocialId,
    pub revision: u64,
    pub attributes: BTreeMap<String, String>,
}

impl ProfileDoc {
    pub fn empty(owner: SocialId) -> Self {
        ProfileDoc { owner, revision: 0, attributes: BTreeMap::new() }
    }

    /// Sets one attribute and bumps the revision.
    pub fn set(&mut self, name: &str, value: &str) -> Result<u64, Error> {
        if !is_known_attribute(name) {
            return Err(Error::UnknownAttribute(name.to_string()));
        }
        self.attributes.insert(name.to_string(), value.to_string());
        self.revision += 1;
        Ok(self.revision)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactCollection {
    pub following: BTreeSet<SocialId>,
    pub followers: BTreeSet<SocialId>,
}

pub const COLLECTION_NAMES: [&str; 3] = ["owned", "authored", "favorites"];

pub fn is_known_collection(name: &str) -> bool {
    COLLECTION_NAMES.contains(&name) || (name.len() > 2 && name.starts_with("x-"))
}

/// An actor as seen by one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub id: SocialId,
    pub kind: ActorKind,
    pub home_site: Domain,
    pub profile: ProfileDoc,
    /// Scope epoch of the cached profile (alien and foreign records only).
    pub profile_epoch: u64,
    pub contacts: ContactCollection,
    /// Collection name to ObjectIDs, newest first.
    pub object_collections: BTreeMap<String, Vec<ObjectId>>,
    pub timeline: Vec<ActivityId>,
}

impl ActorRecord {
    pub fn new(id: SocialId, kind: ActorKind) -> Self {
        let home_site = id.authority().clone();
        let mut object_collections = BTreeMap::new();
        for name in COLLECTION_NAMES {
            object_collections.insert(name.to_string(), Vec::new());
        }
        ActorRecord {
            profile: ProfileDoc::empty(id.clone()),
            profile_epoch: 0,
            id,
            kind,
            home_site,
            contacts: ContactCollection::default(),
            object_collections,
            timeline: Vec::new(),
        }
    }

    pub fn add_to_collection(&mut self, name: &str, oid: &ObjectId) {
        let list = self.object_collections.entry(name.to_string()).or_default();
        if !list.contains(oid) {
            list.insert(0, oid.clone());
        }
    }

    pub fn record_activity(&mut self, id: &ActivityId) {
        if !self.timeline.contains(id) {
            self.timeline.push(id.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentType {
    Text,
    Photo,
    Generic,
}

impl FromStr for ContentType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ContentType::Text),
            "photo" => Ok(ContentType::Photo),
            "generic" => Ok(ContentType::Generic),
            other => Err(Error::Invalid(format!("unknown content type `{other}`"))),
        }
    }
}

/// How a remote site holds an alien object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    Reference,
    Cache,
}

impl FromStr for CacheMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(CacheMode::Reference),
            "cache" => Ok(CacheMode::Cache),
            other => Err(Error::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheMode::Reference => "reference",
            CacheMode::Cache => "cache",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudiencePolicy {
    Public,
    FollowersOnly,
    Listed,
}

/// Visibility policy of an object. Immutable after creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AudienceRepr", into = "AudienceRepr")]
pub struct Audience {
    policy: AudiencePolicy,
    listed: BTreeSet<SocialId>,
}

#[derive(Serialize, Deserialize)]
struct AudienceRepr {
    policy: AudiencePolicy,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    listed: BTreeSet<SocialId>,
}

impl TryFrom<AudienceRepr> for Audience {
    type Error = Error;
    fn try_from(r: AudienceRepr) -> Result<Self, Self::Error> {
        match r.policy {
            AudiencePolicy::Listed => Audience::listed(r.listed),
            p if r.listed.is_empty() => Ok(Audience { policy: p, listed: BTreeSet::new() }),
            _ => Err(Error::Invalid("listed members given for a non-listed audience".into())),
        }
    }
}

impl From<Audience> for AudienceRepr {
    fn from(a: Audience) -> Self {
        AudienceRepr { policy: a.policy, listed: a.listed }
    }
}

impl Audience {
    pub fn public() -> Self {
        Audience { policy: AudiencePolicy::Public, listed: BTreeSet::new() }
    }

    pub fn followers_only() -> Self {
        Audience { policy: AudiencePolicy::FollowersOnly, listed: BTreeSet::new() }
    }

    pub fn listed(members: impl IntoIterator<Item = SocialId>) -> Result<Self, Error> {
        let listed: BTreeSet<_> = members.into_iter().collect();
        if listed.is_empty() {
            return Err(Error::Invalid("listed audience needs at least one member".into()));
        }
        Ok(Audience { policy: AudiencePolicy::Listed, listed })
    }

    pub fn policy(&self) -> AudiencePolicy {
        self.policy
    }

    pub fn members(&self) -> &BTreeSet<SocialId> {
        &self.listed
    }
}

impl fmt::Display for Audience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.policy {
            AudiencePolicy::Public => f.write_str("public"),
            AudiencePolicy::FollowersOnly => f.write_str("followers"),
            AudiencePolicy::Listed => {
                let ids: Vec<String> = self.listed.iter().map(|id| id.to_string()).collect();
                write!(f, "listed:{}", ids.join(","))
            }
        }
    }
}

impl FromStr for Audience {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "public" => Ok(Audience::public()),
            "followers" | "followers_only" => Ok(Audience::followers_only()),
            _ => {
                let rest = s
                    .strip_prefix("listed:")
                    .ok_or_else(|| Error::Invalid(format!("bad audience `{s}`")))?;
                let ids = rest
                    .split(',')
                    .filter(|p| !p.is_empty())
                    .map(SocialId::parse)
                    .collect::<Result<Vec<_>, _>>()?;
                Audience::listed(ids)
            }
        }
    }
}

/// Count and sum of the distinct per-actor ratings on an object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingAggregate {
    pub count: u64,
    pub sum: i64,
}

/// The latest rating from one actor, ordered by (published, activity id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingEntry {
    pub published: Tick,
    pub activity: ActivityId,
    pub value: i64,
}

/// Content held by one site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub kind: ActorKind,
    pub content_type: ContentType,
    /// Set for alien and foreign copies.
    pub mode: Option<CacheMode>,
    pub payload: Option<Vec<u8>>,
    pub cached_revision: Option<u64>,
    pub revision: u64,
    pub author: SocialId,
    pub owner: SocialId,
    pub audience: Audience,
    pub mentions: Vec<SocialId>,
    pub reply_collection: Vec<ObjectId>,
    pub rating_aggregate: RatingAggregate,
    pub ratings: BTreeMap<SocialId, RatingEntry>,
    /// Actors allowed to edit this object from remote sites.
    pub editors: BTreeSet<SocialId>,
    pub created: Tick,
    /// Tombstone at the content site.
    pub deleted: bool,
    /// Provenance flag on remote copies once the content site deleted the original.
    pub deleted_at_origin: bool,
    /// An edit sent to the content site and not yet echoed back.
    pub pending_edit: Option<ActivityId>,
}

impl ObjectRecord {
    pub fn is_native(&self) -> bool {
        self.kind == ActorKind::Native
    }

    /// Replaces `actor`'s rating if `entry` is newer; refreshes the aggregate.
    pub fn fold_rating(&mut self, actor: &SocialId, entry: RatingEntry) -> bool {
        let newer = match self.ratings.get(actor) {
            Some(prev) => (entry.published, &entry.activity) > (prev.published, &prev.activity),
            None => true,
        };
        if newer {
            self.ratings.insert(actor.clone(), entry);
            self.rating_aggregate = RatingAggregate {
                count: self.ratings.len() as u64,
                sum: self.ratings.values().map(|r| r.value).sum(),
            };
        }
        newer
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Verb {
    Follow,
    Unfollow,
    Post,
    Own,
    Reply,
    Rate,
    Mention,
    Reshare,
    ProfileUpdate,
    ObjectUpdate,
    ObjectDelete,
    /// Unrecognized verb, carried through and skipped on application.
    Other(String),
}

impl Verb {
    pub fn as_str(&self) -> &str {
        match self {
            Verb::Follow => "follow",
            Verb::Unfollow => "unfollow",
            Verb::Post => "post",
            Verb::Own => "own",
            Verb::Reply => "reply",
            Verb::Rate => "rate",
            Verb::Mention => "mention",
            Verb::Reshare => "reshare",
            Verb::ProfileUpdate => "profile_update",
            Verb::ObjectUpdate => "object_update",
            Verb::ObjectDelete => "object_delete",
            Verb::Other(s) => s,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for Verb {
    fn from(s: &str) -> Self {
        match s {
            "follow" => Verb::Follow,
            "unfollow" => Verb::Unfollow,
            "post" => Verb::Post,
            "own" => Verb::Own,
            "reply" => Verb::Reply,
            "rate" => Verb::Rate,
            "mention" => Verb::Mention,
            "reshare" => Verb::Reshare,
            "profile_update" => Verb::ProfileUpdate,
            "object_update" => Verb::ObjectUpdate,
            "object_delete" => Verb::ObjectDelete,
            other => Verb::Other(other.to_string()),
        }
    }
}

impl From<String> for Verb {
    fn from(s: String) -> Self {
        Verb::from(s.as_str())
    }
}

impl From<Verb> for String {
    fn from(v: Verb) -> String {
        v.as_str().to_string()
    }
}

/// What an activity points at.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ref {
    Actor(SocialId),
    Object(ObjectId),
    Activity(ActivityId),
}

impl Ref {
    pub fn as_actor(&self) -> Option<&SocialId> {
        match self {
            Ref::Actor(id) => Some(id),
            _ => None,
        }
    }

    pub fn as_object(&self) -> Option<&ObjectId> {
        match self {
            Ref::Object(id) => Some(id),
            _ => None,
        }
    }
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Actor(id) => id.fmt(f),
            Ref::Object(id) => id.fmt(f),
            Ref::Activity(id) => write!(f, "activity:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub id: ActivityId,
    pub verb: Verb,
    pub actor: SocialId,
    pub object: Ref,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Ref>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: BTreeMap<String, serde_json::Value>,
    pub published: Tick,
}

impl Activity {
    /// Ordering key for last-writer-wins folds.
    pub fn order_key(&self) -> (Tick, ActivityId) {
        (self.published, self.id.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alice() -> SocialId {
        SocialId::parse("acct:alice@a.example").unwrap()
    }

    #[test]
    fn profile_revisions_increase() {
        let mut p = ProfileDoc::empty(alice());
        assert_eq!(p.revision, 0);
        assert_eq!(p.set("name", "Alice").unwrap(), 1);
        assert_eq!(p.set("x-mood", "ok").unwrap(), 2);
        assert!(matches!(p.set("shoe_size", "9"), Err(Error::UnknownAttribute(_))));
        assert_eq!(p.revision, 2);
    }

    #[test]
    fn audience_parse_and_invariant() {
        assert_eq!("public".parse::<Audience>().unwrap(), Audience::public());
        let listed: Audience = "listed:acct:bob@b.example".parse().unwrap();
        assert_eq!(listed.policy(), AudiencePolicy::Listed);
        assert_eq!(listed.members().len(), 1);
        assert!("listed:".parse::<Audience>().is_err());
        assert!(Audience::listed(Vec::new()).is_err());
        let json = serde_json::to_value(&listed).unwrap();
        assert_eq!(serde_json::from_value::<Audience>(json).unwrap(), listed);
        let bad = serde_json::json!({"policy": "public", "listed": ["acct:bob@b.example"]});
        assert!(serde_json::from_value::<Audience>(bad).is_err());
    }

    #[test]
    fn rerating_replaces() {
        let oid = ObjectId::parse("a.example/p").unwrap();
        let mut obj = ObjectRecord {
            id: oid,
            kind: ActorKind::Native,
            content_type: ContentType::Photo,
            mode: None,
            payload: Some(vec![1]),
            cached_revision: None,
            revision: 1,
            author: alice(),
            owner: alice(),
            audience: Audience::public(),
            mentions: vec![],
            reply_collection: vec![],
            rating_aggregate: RatingAggregate::default(),
            ratings: BTreeMap::new(),
            editors: BTreeSet::new(),
            created: 0,
            deleted: false,
            deleted_at_origin: false,
            pending_edit: None,
        };
        let bob = SocialId::parse("acct:bob@b.example").unwrap();
        let d = Domain::parse("b.example").unwrap();
        let e = |c, v| RatingEntry { published: c, activity: ActivityId::new(d.clone(), c), value: v };
        assert!(obj.fold_rating(&bob, e(2, 4)));
        assert!(!obj.fold_rating(&bob, e(1, 1)));
        assert!(obj.fold_rating(&bob, e(3, 2)));
        assert_eq!(obj.rating_aggregate, RatingAggregate { count: 1, sum: 2 });
        assert!(obj.fold_rating(&alice(), e(4, 5)));
        assert_eq!(obj.rating_aggregate, RatingAggregate { count: 2, sum: 7 });
    }

    #[test]
    fn unknown_verbs_survive_serde() {
        let v: Verb = serde_json::from_str("\"x-poke\"").unwrap();
        assert_eq!(v, Verb::Other("x-poke".into()));
        assert_eq!(serde_json::to_string(&v).unwrap(), "\"x-poke\"");
    }
}
