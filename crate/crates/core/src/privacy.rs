//! Audiences, per-site profile scopes and the single authorization decision
//! point used by every read and write path.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    is_known_attribute, ActorKind, Audience, AudiencePolicy, Domain, ObjectId, ProfileDoc, SocialId,
};
use crate::site::{Session, Site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    NotInAudience,
    NoScope,
    NotFollower,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::NotInAudience => "not_in_audience",
            DenyReason::NoScope => "no_scope",
            DenyReason::NotFollower => "not_follower",
        })
    }
}

impl FromStr for DenyReason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "not_in_audience" => Ok(DenyReason::NotInAudience),
            "no_scope" => Ok(DenyReason::NoScope),
            "not_follower" => Ok(DenyReason::NotFollower),
            _ => Err(Error::Invalid(format!("unknown deny reason `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }

    pub fn into_result(self) -> Result<()> {
        match self {
            Decision::Allow => Ok(()),
            Decision::Deny(r) => Err(Error::Forbidden(Some(r))),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Allow => f.write_str("allow"),
            Decision::Deny(r) => write!(f, "deny:{r}"),
        }
    }
}

/// Who is asking: an actor, or a whole remote site acting as an application.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Principal {
    Actor(SocialId),
    Site(Domain),
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Actor(id) => id.fmt(f),
            Principal::Site(d) => write!(f, "site:{d}"),
        }
    }
}

impl FromStr for Principal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("site:") {
            Some(d) => Ok(Principal::Site(Domain::parse(d)?)),
            None => Ok(Principal::Actor(SocialId::parse(s)?)),
        }
    }
}

impl TryFrom<String> for Principal {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Principal> for String {
    fn from(p: Principal) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resource {
    Object(ObjectId),
    Profile(SocialId),
    Attribute(SocialId, String),
    Contacts(SocialId),
    Feed(SocialId),
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Object(o) => write!(f, "object:{o}"),
            Resource::Profile(a) => write!(f, "profile:{a}"),
            Resource::Attribute(a, n) => write!(f, "attribute:{a}#{n}"),
            Resource::Contacts(a) => write!(f, "contacts:{a}"),
            Resource::Feed(a) => write!(f, "feed:{a}"),
        }
    }
}

/// Which profile attributes a grantee site may read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadScope {
    Full,
    Minimal,
    Attributes(BTreeSet<String>),
}

impl ReadScope {
    pub fn allows(&self, attribute: &str) -> bool {
        match self {
            ReadScope::Full => true,
            ReadScope::Minimal => attribute == "name",
            ReadScope::Attributes(set) => set.contains(attribute),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ReadScope::Attributes(s) if s.is_empty())
    }
}

/// Permissions an actor grants to one remote site. A new grant for the same
/// site replaces the old one entirely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeGrant {
    pub grantor: SocialId,
    pub grantee_site: Domain,
    pub readable_attributes: ReadScope,
    pub writable_attributes: BTreeSet<String>,
    pub collections_readable: bool,
    pub contacts_readable: bool,
}

impl ScopeGrant {
    pub fn none(grantor: SocialId, grantee_site: Domain) -> Self {
        ScopeGrant {
            grantor,
            grantee_site,
            readable_attributes: ReadScope::Attributes(BTreeSet::new()),
            writable_attributes: BTreeSet::new(),
            collections_readable: false,
            contacts_readable: false,
        }
    }

    /// Parses a comma-separated scope spec:
    /// `full`, `minimal`, `read=a|b`, `write=a|b`, `contacts`, `collections`, `none`.
    pub fn parse_spec(grantor: SocialId, grantee_site: Domain, spec: &str) -> Result<Self> {
        let mut g = ScopeGrant::none(grantor, grantee_site);
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "none" => {}
                "full" => g.readable_attributes = ReadScope::Full,
                "minimal" => g.readable_attributes = ReadScope::Minimal,
                "contacts" => g.contacts_readable = true,
                "collections" => g.collections_readable = true,
                _ => {
                    let (key, list) = item
                        .split_once('=')
                        .ok_or_else(|| Error::Invalid(format!("bad scope item `{item}`")))?;
                    let names: BTreeSet<String> =
                        list.split('|').filter(|s| !s.is_empty()).map(str::to_string).collect();
                    if let Some(bad) = names.iter().find(|n| !is_known_attribute(n)) {
                        return Err(Error::UnknownAttribute(bad.clone()));
                    }
                    match key {
                        "read" => g.readable_attributes = ReadScope::Attributes(names),
                        "write" => g.writable_attributes = names,
                        _ => return Err(Error::Invalid(format!("bad scope item `{item}`"))),
                    }
                }
            }
        }
        Ok(g)
    }
}

/// Copy of `profile` keeping only the attributes `scope` allows.
pub fn filter_profile(profile: &ProfileDoc, scope: Option<&ReadScope>) -> ProfileDoc {
    let attributes = match scope {
        Some(scope) => {
            profile.attributes.iter().filter(|(k, _)| scope.allows(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
        }
        None => Default::default(),
    };
    ProfileDoc { owner: profile.owner.clone(), revision: profile.revision, attributes }
}

/// Facts about an object known at the serving site.
#[derive(Debug, Clone, Copy)]
pub struct ObjectFacts<'a> {
    pub audience: &'a Audience,
    pub owner: &'a SocialId,
    pub author: &'a SocialId,
    /// The owner's followers as known at the serving site.
    pub owner_followers: &'a BTreeSet<SocialId>,
    pub editors: &'a BTreeSet<SocialId>,
    /// The owner's grant to the requesting site, when the principal is a site.
    pub site_grant: Option<&'a ScopeGrant>,
}

/// Object access rule.
pub fn decide_object(principal: &Principal, facts: ObjectFacts<'_>, action: Action) -> Decision {
    let read = match principal {
        Principal::Actor(a) if a == facts.owner || a == facts.author => return Decision::Allow,
        Principal::Actor(a) => match facts.audience.policy() {
            AudiencePolicy::Public => Decision::Allow,
            AudiencePolicy::FollowersOnly if facts.owner_followers.contains(a) => Decision::Allow,
            AudiencePolicy::FollowersOnly => Decision::Deny(DenyReason::NotFollower),
            AudiencePolicy::Listed if facts.audience.members().contains(a) => Decision::Allow,
            AudiencePolicy::Listed => Decision::Deny(DenyReason::NotInAudience),
        },
        Principal::Site(_) => {
            if facts.audience.policy() == AudiencePolicy::Public
                || facts.site_grant.map(|g| g.collections_readable).unwrap_or(false)
            {
                Decision::Allow
            } else {
                Decision::Deny(DenyReason::NoScope)
            }
        }
    };
    match action {
        Action::Read => read,
        Action::Write => match (principal, read) {
            (Principal::Actor(a), Decision::Allow) if facts.editors.contains(a) => Decision::Allow,
            (_, Decision::Deny(r)) => Decision::Deny(r),
            _ => Decision::Deny(DenyReason::NoScope),
        },
    }
}

/// Profile, attribute, contacts and feed access rule. `private_feed` is the
/// owner's `x-private-feed` flag.
pub fn decide_actor_resource(
    principal: &Principal,
    resource: &Resource,
    action: Action,
    grant: Option<&ScopeGrant>,
    owner_followers: &BTreeSet<SocialId>,
    private_feed: bool,
) -> Decision {
    let owner = match resource {
        Resource::Profile(o) | Resource::Attribute(o, _) | Resource::Contacts(o) | Resource::Feed(o) => o,
        Resource::Object(_) => return Decision::Deny(DenyReason::NoScope),
    };
    if matches!(principal, Principal::Actor(a) if a == owner) {
        return Decision::Allow;
    }
    let allowed = match (resource, action) {
        (Resource::Profile(_), Action::Read) => grant.map(|g| !g.readable_attributes.is_empty()).unwrap_or(false),
        (Resource::Attribute(_, name), Action::Read) => {
            grant.map(|g| g.readable_attributes.allows(name)).unwrap_or(false)
        }
        (Resource::Attribute(_, name), Action::Write) => {
            grant.map(|g| g.writable_attributes.contains(name)).unwrap_or(false)
        }
        (Resource::Contacts(_), Action::Read) => grant.map(|g| g.contacts_readable).unwrap_or(false),
        (Resource::Feed(_), Action::Read) => {
            if !private_feed {
                true
            } else {
                match principal {
                    Principal::Site(_) => grant.is_some(),
                    Principal::Actor(a) => {
                        if owner_followers.contains(a) {
                            true
                        } else {
                            return Decision::Deny(DenyReason::NotFollower);
                        }
                    }
                }
            }
        }
        _ => false,
    };
    if allowed {
        Decision::Allow
    } else {
        Decision::Deny(DenyReason::NoScope)
    }
}

impl Site {
    /// Pure decision from this site's current knowledge.
    pub fn authorize(&self, principal: &Principal, resource: &Resource, action: Action) -> Decision {
        match resource {
            Resource::Object(oid) => {
                let Some(obj) = self.objects.get(oid) else {
                    return Decision::Deny(DenyReason::NotInAudience);
                };
                let empty = BTreeSet::new();
                let followers = self.followers_known(&obj.owner).unwrap_or(&empty);
                let site_grant = match principal {
                    Principal::Site(d) => self.grants.get(&(obj.owner.clone(), d.clone())),
                    Principal::Actor(_) => None,
                };
                let facts = ObjectFacts {
                    audience: &obj.audience,
                    owner: &obj.owner,
                    author: &obj.author,
                    owner_followers: followers,
                    editors: &obj.editors,
                    site_grant,
                };
                decide_object(principal, facts, action)
            }
            Resource::Profile(o) | Resource::Attribute(o, _) | Resource::Contacts(o) | Resource::Feed(o) => {
                let grant = match principal {
                    Principal::Site(d) => self.grants.get(&(o.clone(), d.clone())),
                    Principal::Actor(_) => None,
                };
                let empty = BTreeSet::new();
                let followers = self.followers_known(o).unwrap_or(&empty);
                let private_feed = self
                    .actors
                    .get(o)
                    .and_then(|r| r.profile.attributes.get("x-private-feed"))
                    .map(|v| v == "true")
                    .unwrap_or(false);
                decide_actor_resource(principal, resource, action, grant, followers, private_feed)
            }
        }
    }

    /// `authorize` plus a `decision` trace event.
    pub(crate) fn check(&mut self, principal: &Principal, resource: &Resource, action: Action) -> Decision {
        let decision = self.authorize(principal, resource, action);
        self.emit_decision(principal, resource, action, decision);
        decision
    }

    pub fn grant(&self, grantor: &SocialId, site: &Domain) -> Option<&ScopeGrant> {
        self.grants.get(&(grantor.clone(), site.clone()))
    }

    /// Stores `grant` at the grantor's home, replacing any earlier grant to
    /// the same site. Returns the new scope epoch for that site.
    pub fn grant_scope(&mut self, session: &Session, grant: ScopeGrant) -> Result<u64> {
        self.require_session(session)?;
        if session.actor != grant.grantor || session.kind != ActorKind::Native || session.site != self.domain {
            return Err(Error::Forbidden(None));
        }
        let key = (grant.grantor.clone(), grant.grantee_site.clone());
        self.grants.insert(key.clone(), grant);
        let epoch = self.grant_epochs.entry(key).or_insert(0);
        *epoch += 1;
        Ok(*epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> SocialId {
        SocialId::parse(s).unwrap()
    }

    fn facts<'a>(
        audience: &'a Audience,
        owner: &'a SocialId,
        followers: &'a BTreeSet<SocialId>,
        editors: &'a BTreeSet<SocialId>,
    ) -> ObjectFacts<'a> {
        ObjectFacts { audience, owner, author: owner, owner_followers: followers, editors, site_grant: None }
    }

    #[test]
    fn carol_is_not_in_audience() {
        let alice = id("acct:alice@a.example");
        let bob = id("acct:bob@b.example");
        let carol = id("acct:carol@b.example");
        let aud = Audience::listed([bob.clone()]).unwrap();
        let none = BTreeSet::new();
        let f = facts(&aud, &alice, &none, &none);
        assert_eq!(
            decide_object(&Principal::Actor(carol), f, Action::Read),
            Decision::Deny(DenyReason::NotInAudience)
        );
        assert_eq!(decide_object(&Principal::Actor(bob), f, Action::Read), Decision::Allow);
        assert_eq!(decide_object(&Principal::Actor(alice.clone()), f, Action::Read), Decision::Allow);
    }

    #[test]
    fn public_allows_anyone() {
        let alice = id("acct:alice@a.example");
        let aud = Audience::public();
        let none = BTreeSet::new();
        let f = facts(&aud, &alice, &none, &none);
        assert!(decide_object(&Principal::Actor(id("acct:z@z.example")), f, Action::Read).is_allow());
        assert!(decide_object(&Principal::Site(Domain::parse("q.example").unwrap()), f, Action::Read).is_allow());
    }

    #[test]
    fn followers_only_uses_known_followers() {
        let alice = id("acct:alice@a.example");
        let bob = id("acct:bob@b.example");
        let aud = Audience::followers_only();
        let none = BTreeSet::new();
        let before = facts(&aud, &alice, &none, &none);
        assert_eq!(
            decide_object(&Principal::Actor(bob.clone()), before, Action::Read),
            Decision::Deny(DenyReason::NotFollower)
        );
        let followers: BTreeSet<_> = [bob.clone()].into();
        let after = facts(&aud, &alice, &followers, &none);
        assert!(decide_object(&Principal::Actor(bob), after, Action::Read).is_allow());
    }

    #[test]
    fn writes_need_editor_grant() {
        let alice = id("acct:alice@a.example");
        let bob = id("acct:bob@b.example");
        let aud = Audience::public();
        let none = BTreeSet::new();
        let editors: BTreeSet<_> = [bob.clone()].into();
        assert_eq!(
            decide_object(&Principal::Actor(bob.clone()), facts(&aud, &alice, &none, &none), Action::Write),
            Decision::Deny(DenyReason::NoScope)
        );
        assert!(decide_object(&Principal::Actor(bob), facts(&aud, &alice, &none, &editors), Action::Write)
            .is_allow());
    }

    #[test]
    fn deny_by_default_for_profiles() {
        let alice = id("acct:alice@a.example");
        let site = Principal::Site(Domain::parse("b.example").unwrap());
        let none = BTreeSet::new();
        for res in [
            Resource::Profile(alice.clone()),
            Resource::Contacts(alice.clone()),
            Resource::Attribute(alice.clone(), "location".into()),
        ] {
            for action in [Action::Read, Action::Write] {
                assert_eq!(
                    decide_actor_resource(&site, &res, action, None, &none, false),
                    Decision::Deny(DenyReason::NoScope)
                );
            }
        }
    }

    #[test]
    fn grant_replacement_leaves_no_residue() {
        let alice = id("acct:alice@a.example");
        let b = Domain::parse("b.example").unwrap();
        let site = Principal::Site(b.clone());
        let none = BTreeSet::new();
        let wide = ScopeGrant::parse_spec(alice.clone(), b.clone(), "full,write=location,contacts").unwrap();
        let narrow = ScopeGrant::parse_spec(alice.clone(), b.clone(), "minimal").unwrap();
        let loc = Resource::Attribute(alice.clone(), "location".into());
        assert!(decide_actor_resource(&site, &loc, Action::Write, Some(&wide), &none, false).is_allow());
        assert!(!decide_actor_resource(&site, &loc, Action::Write, Some(&narrow), &none, false).is_allow());
        assert!(!decide_actor_resource(&site, &Resource::Contacts(alice), Action::Read, Some(&narrow), &none, false)
            .is_allow());
    }

    #[test]
    fn minimal_is_exactly_name() {
        let alice = id("acct:alice@a.example");
        let mut p = ProfileDoc::empty(alice);
        for (k, v) in [("name", "Alice"), ("location", "Madrid"), ("bio", "hi"), ("x-extra", "1")] {
            p.set(k, v).unwrap();
        }
        let min = filter_profile(&p, Some(&ReadScope::Minimal));
        assert_eq!(min.attributes.keys().collect::<Vec<_>>(), vec!["name"]);
        assert_eq!(filter_profile(&p, Some(&ReadScope::Full)).attributes, p.attributes);
        assert!(filter_profile(&p, None).attributes.is_empty());
        assert_eq!(min.revision, p.revision);
    }

    #[test]
    fn scope_spec_parsing() {
        let alice = id("acct:alice@a.example");
        let b = Domain::parse("b.example").unwrap();
        let g = ScopeGrant::parse_spec(alice.clone(), b.clone(), "read=name|bio,write=location,collections").unwrap();
        assert_eq!(g.readable_attributes, ReadScope::Attributes(["name".into(), "bio".into()].into()));
        assert!(g.writable_attributes.contains("location"));
        assert!(g.collections_readable && !g.contacts_readable);
        assert!(matches!(
            ScopeGrant::parse_spec(alice.clone(), b.clone(), "write=shoe"),
            Err(Error::UnknownAttribute(_))
        ));
        assert!(ScopeGrant::parse_spec(alice, b, "bogus").is_err());
    }

    #[test]
    fn principal_text_forms() {
        let p: Principal = "site:b.example".parse().unwrap();
        assert_eq!(p, Principal::Site(Domain::parse("b.example").unwrap()));
        let a: Principal = "acct:bob@b.example".parse().unwrap();
        assert_eq!(a.to_string(), "acct:bob@b.example");
    }
}
