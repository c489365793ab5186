//! Checks over a finished run: trace-level privacy and delivery audits and
//! state-level convergence checks.

use std::collections::{BTreeMap, BTreeSet};

use super::sim::Simulation;
use super::trace::Trace;
use crate::model::CacheMode;
use crate::site::EventKind;

fn field<'a>(detail: &'a serde_json::Value, key: &str) -> Option<&'a str> {
    detail.get(key).and_then(|v| v.as_str())
}

/// Every payload-bearing delivery must follow an `allow` decision for the
/// same principal and resource at the serving site.
pub fn privacy_audit(trace: &Trace) -> Vec<String> {
    let mut allowed: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut violations = Vec::new();
    for e in trace.events() {
        match e.kind {
            EventKind::Decision if field(&e.detail, "result") == Some("allow") => {
                if let (Some(p), Some(r)) = (field(&e.detail, "principal"), field(&e.detail, "resource")) {
                    allowed.insert((e.site.to_string(), p.to_string(), r.to_string()));
                }
            }
            EventKind::Deliver if e.detail.get("payload").and_then(|v| v.as_bool()) == Some(true) => {
                let served_by = field(&e.detail, "served_by").unwrap_or_default().to_string();
                match (field(&e.detail, "requester"), field(&e.detail, "resource")) {
                    (Some(p), Some(r)) => {
                        if !allowed.contains(&(served_by.clone(), p.to_string(), r.to_string())) {
                            violations.push(format!(
                                "seq {}: payload of {r} delivered to {p} without an allow at {served_by}",
                                e.seq
                            ));
                        }
                    }
                    _ => violations.push(format!("seq {}: unattributed payload from {served_by}", e.seq)),
                }
            }
            _ => {}
        }
    }
    violations
}

/// No activity is applied twice at one site, and every notice abandoned
/// after its retries had in fact been delivered.
pub fn exactly_once(trace: &Trace) -> Vec<String> {
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut delivered: BTreeSet<String> = BTreeSet::new();
    let mut abandoned: Vec<(u64, String, String)> = Vec::new();
    for e in trace.events() {
        match e.kind {
            EventKind::Apply => {
                if let Some(id) = field(&e.detail, "activity") {
                    *seen.entry((e.site.to_string(), id.to_string())).or_default() += 1;
                }
            }
            EventKind::Deliver => {
                if let Some(id) = field(&e.detail, "message_id") {
                    delivered.insert(id.to_string());
                }
            }
            EventKind::Drop if field(&e.detail, "reason") == Some("retries_exhausted") => {
                let id = field(&e.detail, "message_id").unwrap_or("?").to_string();
                abandoned.push((e.seq, e.site.to_string(), id));
            }
            _ => {}
        }
    }
    let mut violations: Vec<String> = abandoned
        .into_iter()
        .filter(|(_, _, id)| !delivered.contains(id))
        .map(|(seq, site, id)| format!("seq {seq}: {site} gave up on {id} before any delivery"))
        .collect();
    for ((site, id), n) in seen {
        if n > 1 {
            violations.push(format!("{id} applied {n} times at {site}"));
        }
    }
    violations
}

/// After quiescence every subscribed cache holds the content site's current
/// revision and bytes.
pub fn quiescent_equality(sim: &Simulation) -> Vec<String> {
    let mut violations = Vec::new();
    for site in sim.sites() {
        for obj in site.objects() {
            if obj.mode != Some(CacheMode::Cache) || obj.deleted_at_origin {
                continue;
            }
            let Some(origin) = sim.site(obj.id.authority()) else { continue };
            let Some(native) = origin.object(&obj.id) else { continue };
            let subscribed = origin.subscriptions().any(|s| {
                s.subscriber_site == *site.domain()
                    && s.topic == crate::activities::Topic::Object(obj.id.clone())
            });
            if !subscribed || native.deleted {
                continue;
            }
            if obj.cached_revision != Some(native.revision) || obj.payload != native.payload {
                violations.push(format!(
                    "cache of {} at {} holds revision {:?}, origin has {}",
                    obj.id,
                    site.domain(),
                    obj.cached_revision,
                    native.revision
                ));
            }
        }
    }
    violations
}

/// Both ends of every follow edge agree: the follower's home lists the
/// followee and the followee's home lists the follower, or neither does.
pub fn follow_symmetry(sim: &Simulation) -> Vec<String> {
    let mut violations = Vec::new();
    for site in sim.sites() {
        for rec in site.actors().filter(|r| r.kind == crate::model::ActorKind::Native) {
            for followee in &rec.contacts.following {
                let back = sim
                    .site(followee.authority())
                    .and_then(|s| s.actor(followee))
                    .map(|f| f.contacts.followers.contains(&rec.id))
                    .unwrap_or(false);
                if !back {
                    violations.push(format!("{} follows {} but is not among its followers", rec.id, followee));
                }
            }
            for follower in &rec.contacts.followers {
                let fwd = sim
                    .site(follower.authority())
                    .and_then(|s| s.actor(follower))
                    .map(|f| f.contacts.following.contains(&rec.id))
                    .unwrap_or(false);
                if !fwd {
                    violations.push(format!("{} lists follower {} which does not follow it", rec.id, follower));
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;
    use serde_json::json;

    fn d(s: &str) -> Domain {
        Domain::parse(s).unwrap()
    }

    fn allow(site: &str) -> (Domain, serde_json::Value) {
        (d(site), json!({"principal": "acct:carol@c.example", "resource": "object:a.example/p", "result": "allow"}))
    }

    fn payload_from(served_by: &str) -> serde_json::Value {
        json!({"payload": true, "served_by": served_by, "requester": "acct:carol@c.example", "resource": "object:a.example/p"})
    }

    #[test]
    fn payload_needs_a_prior_allow_at_the_server() {
        let mut t = Trace::new();
        t.push(0, &d("c.example"), EventKind::Deliver, payload_from("a.example"));
        assert_eq!(privacy_audit(&t).len(), 1);

        let mut t = Trace::new();
        let (site, detail) = allow("b.example");
        t.push(0, &site, EventKind::Decision, detail);
        t.push(0, &d("c.example"), EventKind::Deliver, payload_from("a.example"));
        assert_eq!(privacy_audit(&t).len(), 1, "an allow elsewhere does not count");

        let mut t = Trace::new();
        let (site, detail) = allow("a.example");
        t.push(0, &site, EventKind::Decision, detail);
        t.push(0, &d("c.example"), EventKind::Deliver, payload_from("a.example"));
        assert!(privacy_audit(&t).is_empty());
    }

    #[test]
    fn allow_after_delivery_is_too_late() {
        let mut t = Trace::new();
        t.push(0, &d("c.example"), EventKind::Deliver, payload_from("a.example"));
        let (site, detail) = allow("a.example");
        t.push(0, &site, EventKind::Decision, detail);
        assert_eq!(privacy_audit(&t).len(), 1);
    }

    #[test]
    fn exactly_once_flags_double_apply_and_silent_abandonment() {
        let mut t = Trace::new();
        let b = d("b.example");
        t.push(1, &b, EventKind::Apply, json!({"activity": "a.example/1"}));
        t.push(2, &b, EventKind::Apply, json!({"activity": "a.example/1"}));
        t.push(3, &d("a.example"), EventKind::Drop, json!({"message_id": "a.example/9", "reason": "retries_exhausted"}));
        assert_eq!(exactly_once(&t).len(), 2);

        let mut t = Trace::new();
        t.push(1, &b, EventKind::Deliver, json!({"message_id": "a.example/9"}));
        t.push(1, &b, EventKind::Apply, json!({"activity": "a.example/1"}));
        t.push(3, &d("a.example"), EventKind::Drop, json!({"message_id": "a.example/9", "reason": "retries_exhausted"}));
        assert!(exactly_once(&t).is_empty());
    }
}
