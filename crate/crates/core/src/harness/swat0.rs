//! The SWAT0 cross-site interaction: carol follows alice, alice posts a
//! photo tagging bob, carol replies, and both alice and bob are told.

use super::scenario::RunOptions;
use super::sim::{SimConfig, Simulation};
use super::topology::{LinkParams, Topology};
use crate::error::Result;
use crate::model::{Audience, ContentType, Domain, ObjectId, SocialId, Verb};
use crate::objects::NewObject;

#[derive(Debug)]
pub struct Swat0Outcome {
    /// Missing effects, in check order. Empty on success.
    pub failures: Vec<String>,
    pub sim: Simulation,
}

impl Swat0Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn dom(s: &str) -> Domain {
    Domain::parse(s).expect("static domain")
}

/// Runs SWAT0. `links` overrides individual directed links.
pub fn run_swat0(options: RunOptions, links: &[(&str, &str, LinkParams)]) -> Result<Swat0Outcome> {
    let (a, b, c) = (dom("a.example"), dom("b.example"), dom("c.example"));
    let mut topology = Topology::new(options.seed).with_default_link(options.default_link);
    for d in [&a, &b, &c] {
        topology.add_site(d.clone());
    }
    for (from, to, params) in links {
        topology.set_link(dom(from), dom(to), *params)?;
    }
    let config = SimConfig { retries: options.retries, check_cache_bound: true, ..SimConfig::default() };
    let mut sim = Simulation::new(topology, config)?;
    let mut failures = Vec::new();

    let join = |sim: &mut Simulation, site: &Domain, name: &str| -> Result<_> {
        let rec = sim.register_native(site, name, name)?;
        sim.login(site, &rec.id, name)
    };
    let alice = join(&mut sim, &a, "alice")?;
    let bob = join(&mut sim, &b, "bob")?;
    let carol = join(&mut sim, &c, "carol")?;

    if let Err(e) = sim.follow(&carol, &alice.actor) {
        failures.push(format!("carol could not follow alice: {}", e.code()));
    }
    sim.run_until_quiescent()?;

    let photo = ObjectId::new(a.clone(), "photo1")?;
    let new = NewObject {
        local: Some("photo1".into()),
        content_type: ContentType::Photo,
        payload: b"<photo bytes>".to_vec(),
        audience: Audience::public(),
        owner: None,
        mentions: vec![bob.actor.clone()],
    };
    if let Err(e) = sim.create_object(&alice, new) {
        failures.push(format!("alice could not post the photo: {}", e.code()));
    }
    sim.run_until_quiescent()?;

    let seen_by_carol = sim
        .site(&c)
        .and_then(|s| s.timeline(&alice.actor).ok())
        .map(|f| f.entries.iter().any(|e| e.verb == Verb::Post && e.object.as_object() == Some(&photo)))
        .unwrap_or(false);
    if !seen_by_carol {
        failures.push("post not delivered to carol's site".into());
    }

    let reply = sim.reply(&carol, &photo, "nice photo", Some("comment1"));
    if let Err(e) = &reply {
        failures.push(format!("carol's reply failed: {}", e.code()));
    }
    sim.run_until_quiescent()?;

    let comment = ObjectId::new(c.clone(), "comment1")?;
    let site_a = sim.site(&a).expect("site a");
    let site_b = sim.site(&b).expect("site b");

    let tagged = site_b
        .mention_inbox(&bob.actor)
        .iter()
        .filter_map(|id| site_b.activity(id))
        .any(|act| act.object.as_object() == Some(&photo));
    if !tagged {
        failures.push("bob was not told about the tag".into());
    }
    let attached = site_a.object(&photo).map(|o| o.reply_collection.contains(&comment)).unwrap_or(false);
    if !attached {
        failures.push("missing reply propagation: comment not in the photo's replies at a.example".into());
    }
    let told = |site: &crate::site::Site, who: &SocialId| {
        site.notifications(who)
            .iter()
            .filter_map(|id| site.activity(id))
            .any(|act| act.verb == Verb::Reply && act.actor == carol.actor)
    };
    if !told(site_a, &alice.actor) {
        failures.push("alice was not notified of carol's reply".into());
    }
    if !told(site_b, &bob.actor) {
        failures.push("bob was not notified of carol's reply".into());
    }
    failures.extend(sim.violations().iter().cloned());
    Ok(Swat0Outcome { failures, sim })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_passes() {
        let o = run_swat0(RunOptions::new(1), &[]).unwrap();
        assert!(o.passed(), "{:?}", o.failures);
    }

    #[test]
    fn dead_link_to_carol_fails_with_a_reason() {
        let dead = LinkParams::new(1, 1.0, 0.0).unwrap();
        let o = run_swat0(RunOptions::new(1), &[("a.example", "c.example", dead)]).unwrap();
        assert!(!o.passed());
        assert!(o.failures.iter().any(|f| f.contains("missing reply propagation")), "{:?}", o.failures);
    }
}
