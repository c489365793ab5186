use thiserror::Error;

use crate::model::IdError;
use crate::privacy::DenyReason;
use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Protocol-level failures. Every variant has a stable snake_case code that
/// travels in the envelope status field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("name `{0}` already taken")]
    NameTaken(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("unknown actor {0}")]
    UnknownActor(String),
    #[error("site {0} unreachable")]
    Unreachable(String),
    #[error("authenticity token rejected")]
    BadToken,
    #[error("nonce {0} already used")]
    ReplayedNonce(String),
    #[error("missing scope")]
    ForbiddenScope,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("forbidden{}", .0.map(|r| format!(" ({r})")).unwrap_or_default())]
    Forbidden(Option<DenyReason>),
    #[error("payload of {size} bytes exceeds cap of {cap}")]
    PayloadTooLarge { size: usize, cap: usize },
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("representation unavailable for {0}")]
    StaleUnavailable(String),
    #[error("an earlier edit of {0} is still unresolved")]
    ConflictRetry(String),
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("an actor cannot follow itself")]
    SelfFollow,
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("no valid session for {0}")]
    NoSession(String),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("simulation is quiescent")]
    Quiescent,
}

impl Error {
    /// Wire status code, e.g. `unknown_object` or `deny:not_in_audience`.
    pub fn code(&self) -> String {
        match self {
            Error::Id(_) => "malformed".into(),
            Error::Wire(_) => "malformed_document".into(),
            Error::Invalid(_) => "invalid".into(),
            Error::NameTaken(_) => "name_taken".into(),
            Error::InvalidName(_) => "invalid_name".into(),
            Error::UnknownActor(_) => "unknown_actor".into(),
            Error::Unreachable(_) => "unreachable".into(),
            Error::BadToken => "bad_token".into(),
            Error::ReplayedNonce(_) => "replayed_nonce".into(),
            Error::ForbiddenScope => "forbidden_scope".into(),
            Error::UnknownAttribute(_) => "unknown_attribute".into(),
            Error::UnknownCollection(_) => "unknown_collection".into(),
            Error::Forbidden(Some(r)) => format!("deny:{r}"),
            Error::Forbidden(None) => "forbidden".into(),
            Error::PayloadTooLarge { .. } => "payload_too_large".into(),
            Error::UnknownObject(_) => "unknown_object".into(),
            Error::StaleUnavailable(_) => "stale_unavailable".into(),
            Error::ConflictRetry(_) => "conflict_retry".into(),
            Error::UnknownTarget(_) => "unknown_target".into(),
            Error::SelfFollow => "self_follow".into(),
            Error::UnknownSubject(_) => "unknown_subject".into(),
            Error::NoSession(_) => "no_session".into(),
            Error::UnknownSite(_) => "unknown_site".into(),
            Error::Quiescent => "quiescent".into(),
        }
    }

    /// Rebuilds an error from a wire status code and detail text.
    pub fn from_code(code: &str, detail: &str) -> Error {
        if let Some(reason) = code.strip_prefix("deny:") {
            return Error::Forbidden(reason.parse().ok());
        }
        let d = detail.to_string();
        match code {
            "malformed" | "invalid" => Error::Invalid(d),
            "malformed_document" => Error::Wire(WireError::MalformedDocument(d)),
            "name_taken" => Error::NameTaken(d),
            "invalid_name" => Error::InvalidName(d),
            "unknown_actor" => Error::UnknownActor(d),
            "unreachable" => Error::Unreachable(d),
            "bad_token" => Error::BadToken,
            "replayed_nonce" => Error::ReplayedNonce(d),
            "forbidden_scope" => Error::ForbiddenScope,
            "unknown_attribute" => Error::UnknownAttribute(d),
            "unknown_collection" => Error::UnknownCollection(d),
            "payload_too_large" => Error::PayloadTooLarge { size: 0, cap: 0 },
            "unknown_object" => Error::UnknownObject(d),
            "stale_unavailable" => Error::StaleUnavailable(d),
            "conflict_retry" => Error::ConflictRetry(d),
            "unknown_target" => Error::UnknownTarget(d),
            "self_follow" => Error::SelfFollow,
            "unknown_subject" => Error::UnknownSubject(d),
            "no_session" => Error::NoSession(d),
            "unknown_site" => Error::UnknownSite(d),
            _ => Error::Forbidden(None),
        }
    }

    /// The short detail string carried alongside the code.
    pub fn detail(&self) -> String {
        match self {
            Error::NameTaken(s)
            | Error::InvalidName(s)
            | Error::UnknownActor(s)
            | Error::Unreachable(s)
            | Error::ReplayedNonce(s)
            | Error::UnknownAttribute(s)
            | Error::UnknownCollection(s)
            | Error::UnknownObject(s)
            | Error::StaleUnavailable(s)
            | Error::ConflictRetry(s)
            | Error::UnknownTarget(s)
            | Error::UnknownSubject(s)
            | Error::NoSession(s)
            | Error::UnknownSite(s)
            | Error::Invalid(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        let cases = [
            Error::UnknownActor("x".into()),
            Error::Forbidden(Some(DenyReason::NotInAudience)),
            Error::Forbidden(Some(DenyReason::NotFollower)),
            Error::ForbiddenScope,
            Error::StaleUnavailable("a.example/p".into()),
            Error::SelfFollow,
        ];
        for e in cases {
            let back = Error::from_code(&e.code(), &e.detail());
            assert_eq!(back.code(), e.code());
        }
        assert_eq!(Error::Forbidden(Some(DenyReason::NotInAudience)).code(), "deny:not_in_audience");
    }
}
