//! Identifier grammars for sites, actors, objects, activities and wire messages.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("malformed identifier `{input}`: {reason}")]
    Malformed { input: String, reason: &'static str },
}

impl IdError {
    fn malformed(input: &str, reason: &'static str) -> Self {
        IdError::Malformed { input: input.to_string(), reason }
    }
}

/// A site domain name: dot-separated lowercase DNS labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Domain(String);

impl Domain {
    /// Parses and lowercases a domain name.
    pub fn parse(text: &str) -> Result<Self, IdError> {
        if text.is_empty() {
            return Err(IdError::malformed(text, "empty authority"));
        }
        let lower = text.to_ascii_lowercase();
        for label in lower.split('.') {
            if label.is_empty() || label.len() > 63 {
                return Err(IdError::malformed(text, "bad label length"));
            }
            if !label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-') {
                return Err(IdError::malformed(text, "illegal character in authority"));
            }
            if label.starts_with('-') || label.ends_with('-') {
                return Err(IdError::malformed(text, "label starts or ends with hyphen"));
            }
        }
        Ok(Domain(lower))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Domain {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::parse(s)
    }
}

impl TryFrom<String> for Domain {
    type Error = IdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Domain::parse(&s)
    }
}

impl From<Domain> for String {
    fn from(d: Domain) -> String {
        d.0
    }
}

fn valid_actor_local(local: &str) -> bool {
    !local.is_empty()
        && local
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-'))
}

/// Validates a local actor name (`[a-z0-9._-]+`).
pub fn validate_local_name(local: &str) -> Result<(), IdError> {
    if valid_actor_local(local) {
        Ok(())
    } else {
        Err(IdError::malformed(local, "local part must match [a-z0-9._-]+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdScheme {
    Uri,
    Acct,
}

/// Globally unique actor identifier.
///
/// Equality, ordering and hashing ignore the scheme: `acct:alice@a.example`
/// and `https://a.example/alice` name the same actor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SocialId {
    scheme: IdScheme,
    authority: Domain,
    local: String,
}

impl SocialId {
    pub fn new(scheme: IdScheme, authority: Domain, local: &str) -> Result<Self, IdError> {
        validate_local_name(local)?;
        Ok(SocialId { scheme, authority, local: local.to_string() })
    }

    pub fn acct(authority: &Domain, local: &str) -> Result<Self, IdError> {
        SocialId::new(IdScheme::Acct, authority.clone(), local)
    }

    /// Accepts `acct:<local>@<authority>`, `https://<authority>/<local>`, and
    /// the bare shorthand `<local>@<authority>`.
    pub fn parse(text: &str) -> Result<Self, IdError> {
        if let Some(rest) = text.strip_prefix("https://") {
            let (authority, local) =
                rest.split_once('/').ok_or_else(|| IdError::malformed(text, "missing local part"))?;
            let authority = Domain::parse(authority)?;
            if !valid_actor_local(local) {
                return Err(IdError::malformed(text, "illegal local part"));
            }
            return SocialId::new(IdScheme::Uri, authority, local);
        }
        let body = text.strip_prefix("acct:").unwrap_or(text);
        let (local, authority) =
            body.rsplit_once('@').ok_or_else(|| IdError::malformed(text, "missing authority"))?;
        if !valid_actor_local(local) {
            return Err(IdError::malformed(text, "illegal local part"));
        }
        SocialId::new(IdScheme::Acct, Domain::parse(authority)?, local)
    }

    pub fn scheme(&self) -> IdScheme {
        self.scheme
    }

    /// The identity site of this actor.
    pub fn authority(&self) -> &Domain {
        &self.authority
    }

    pub fn local(&self) -> &str {
        &self.local
    }

    pub fn canonical_text(&self) -> String {
        self.to_string()
    }
}

impl PartialEq for SocialId {
    fn eq(&self, other: &Self) -> bool {
        self.authority == other.authority && self.local == other.local
    }
}

impl Eq for SocialId {}

impl Hash for SocialId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.authority.hash(state);
        self.local.hash(state);
    }
}

impl PartialOrd for SocialId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SocialId {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.authority, &self.local).cmp(&(&other.authority, &other.local))
    }
}

impl fmt::Display for SocialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scheme {
            IdScheme::Acct => write!(f, "acct:{}@{}", self.local, self.authority),
            IdScheme::Uri => write!(f, "https://{}/{}", self.authority, self.local),
        }
    }
}

impl FromStr for SocialId {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SocialId::parse(s)
    }
}

impl TryFrom<String> for SocialId {
    type Error = IdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        SocialId::parse(&s)
    }
}

impl From<SocialId> for String {
    fn from(id: SocialId) -> String {
        id.to_string()
    }
}

fn valid_object_local(local: &str) -> bool {
    !local.is_empty()
        && local
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'~' | b'/'))
}

/// Content identifier, `<authority>/<local>`; the authority is the content site.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectId {
    authority: Domain,
    local: String,
}

impl ObjectId {
    pub fn new(authority: Domain, local: &str) -> Result<Self, IdError> {
        if !valid_object_local(local) {
            return Err(IdError::malformed(local, "illegal object key"));
        }
        Ok(ObjectId { authority, local: local.to_string() })
    }

    pub fn parse(text: &str) -> Result<Self, IdError> {
        let (authority, local) =
            text.split_once('/').ok_or_else(|| IdError::malformed(text, "missing object key"))?;
        if local.is_empty() {
            return Err(IdError::malformed(text, "empty object key"));
        }
        ObjectId::new(Domain::parse(authority)?, local)
    }

    pub fn authority(&self) -> &Domain {
        &self.authority
    }

    pub fn local(&self) -> &str {
        &self.local
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.authority, self.local)
    }
}

impl FromStr for ObjectId {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectId::parse(s)
    }
}

impl TryFrom<String> for ObjectId {
    type Error = IdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ObjectId::parse(&s)
    }
}

impl From<ObjectId> for String {
    fn from(id: ObjectId) -> String {
        id.to_string()
    }
}

macro_rules! counter_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name {
            authority: Domain,
            counter: u64,
        }

        impl $name {
            pub fn new(authority: Domain, counter: u64) -> Self {
                $name { authority, counter }
            }

            pub fn parse(text: &str) -> Result<Self, IdError> {
                let (authority, counter) = text
                    .rsplit_once('/')
                    .ok_or_else(|| IdError::malformed(text, "missing counter"))?;
                if counter.is_empty() || !counter.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(IdError::malformed(text, "counter must be decimal"));
                }
                if counter.len() > 1 && counter.starts_with('0') {
                    return Err(IdError::malformed(text, "counter has leading zero"));
                }
                let counter = counter
                    .parse()
                    .map_err(|_| IdError::malformed(text, "counter out of range"))?;
                Ok($name { authority: Domain::parse(authority)?, counter })
            }

            pub fn authority(&self) -> &Domain {
                &self.authority
            }

            pub fn counter(&self) -> u64 {
                self.counter
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}/{}", self.authority, self.counter)
            }
        }

        impl FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $name::parse(s)
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                $name::parse(&s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.to_string()
            }
        }
    };
}

counter_id!(
    /// `<authority>/<counter>`, issued by the site that records the activity first.
    ///
    /// Orders by authority, then numerically by counter.
    ActivityId
);

counter_id!(
    /// `<domain>/<counter>`, unique per sending site.
    MessageId
);

/// Parses a SocialID from its canonical text form.
pub fn parse_social_id(text: &str) -> Result<SocialId, IdError> {
    SocialId::parse(text)
}

/// Parses an ObjectID from its canonical text form.
pub fn parse_object_id(text: &str) -> Result<ObjectId, IdError> {
    ObjectId::parse(text)
}
