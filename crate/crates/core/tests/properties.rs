use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use serde_json::json;

use fedsim::harness::oracle::{generate, run_workload, site_names, WorkloadSpec};
use fedsim::harness::{Faults, LinkParams, RunOptions};
use fedsim::model::{ActivityId, Audience, Domain, MessageId, ProfileDoc, SocialId, RECOGNIZED_ATTRIBUTES};
use fedsim::privacy::{decide_object, filter_profile, Action, Decision, ObjectFacts, Principal, ReadScope};
use fedsim::wire::{self, Envelope, EnvelopeHeader, Keyring};

fn domain() -> impl Strategy<Value = Domain> {
    prop::collection::vec("[a-z0-9]([a-z0-9-]{0,6}[a-z0-9])?", 1..4)
        .prop_map(|l| Domain::parse(&l.join(".")).unwrap())
}

fn social_id() -> impl Strategy<Value = SocialId> {
    (domain(), "[a-z0-9._-]{1,10}").prop_map(|(d, l)| SocialId::acct(&d, &l).unwrap())
}

fn attribute_subset() -> impl Strategy<Value = BTreeSet<String>> {
    prop::sample::subsequence(RECOGNIZED_ATTRIBUTES.to_vec(), 0..=RECOGNIZED_ATTRIBUTES.len())
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

proptest! {
    #[test]
    fn activity_ids_round_trip(d in domain(), n in 1u64..u64::MAX) {
        let text = format!("{d}/{n}");
        let id: ActivityId = text.parse().unwrap();
        prop_assert_eq!(id.to_string(), text);
    }

    #[test]
    fn uppercase_domains_normalize(d in domain()) {
        let upper = Domain::parse(&d.as_str().to_ascii_uppercase()).unwrap();
        prop_assert_eq!(upper, d);
    }

    #[test]
    fn wider_read_scope_never_hides_more(
        owner in social_id(),
        values in prop::collection::btree_map(prop::sample::select(RECOGNIZED_ATTRIBUTES.to_vec()), "[a-z ]{0,8}", 0..6),
        narrow in attribute_subset(),
        extra in attribute_subset(),
    ) {
        let attributes: BTreeMap<String, String> = values.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let profile = ProfileDoc { owner, revision: 1, attributes };
        let wide: BTreeSet<String> = narrow.union(&extra).cloned().collect();
        let a = filter_profile(&profile, Some(&ReadScope::Attributes(narrow)));
        let b = filter_profile(&profile, Some(&ReadScope::Attributes(wide)));
        let full = filter_profile(&profile, Some(&ReadScope::Full));
        prop_assert!(a.attributes.iter().all(|(k, v)| b.attributes.get(k) == Some(v)));
        prop_assert!(b.attributes.iter().all(|(k, v)| full.attributes.get(k) == Some(v)));
        prop_assert_eq!(&full.attributes, &profile.attributes);
        prop_assert!(filter_profile(&profile, None).attributes.is_empty());
    }

    #[test]
    fn listed_audience_admits_exactly_its_members(
        owner in social_id(),
        members in prop::collection::btree_set(social_id(), 1..5),
        outsider in social_id(),
        followers in prop::collection::btree_set(social_id(), 0..5),
    ) {
        let audience = Audience::listed(members.clone()).unwrap();
        let editors = BTreeSet::new();
        let facts = ObjectFacts {
            audience: &audience,
            owner: &owner,
            author: &owner,
            owner_followers: &followers,
            editors: &editors,
            site_grant: None,
        };
        for m in &members {
            prop_assert!(decide_object(&Principal::Actor(m.clone()), facts, Action::Read).is_allow());
        }
        let d = decide_object(&Principal::Actor(outsider.clone()), facts, Action::Read);
        prop_assert_eq!(d.is_allow(), members.contains(&outsider) || outsider == owner);
        let site = Principal::Site(outsider.authority().clone());
        prop_assert!(!decide_object(&site, facts, Action::Read).is_allow());
        prop_assert!(matches!(decide_object(&Principal::Actor(owner.clone()), facts, Action::Write), Decision::Allow));
    }

    #[test]
    fn any_single_flip_breaks_a_random_envelope(
        body in prop::collection::vec(any::<u8>(), 0..120),
        tick in 0u64..1000,
        seq in 1u64..1000,
        at in any::<prop::sample::Index>(),
        mask in 1u8..=255,
    ) {
        let (a, b) = (Domain::parse("a.example").unwrap(), Domain::parse("b.example").unwrap());
        let keys = Keyring::new(seq);
        let header = EnvelopeHeader {
            from: a.clone(),
            to: b.clone(),
            endpoint: "/inbox".into(),
            message_id: MessageId::new(a.clone(), seq),
            sent_tick: tick,
            status: None,
            in_reply_to: None,
        };
        let frame = Envelope::seal(&keys.pair(&a, &b), header, body).to_bytes();
        prop_assert!(wire::verify_frame(&keys, &frame));
        let mut bad = frame.clone();
        let i = at.index(bad.len());
        bad[i] ^= mask;
        prop_assert!(!wire::verify_frame(&keys, &bad));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn same_seed_same_trace(seed in any::<u64>(), lossy in any::<bool>()) {
        let spec = WorkloadSpec { sites: 3, ops: 60, seed, caches: true };
        let ops = generate(spec);
        let link = if lossy { LinkParams::new(3, 0.3, 0.5).unwrap() } else { LinkParams::default() };
        let options = RunOptions { seed, default_link: link, retries: 16 };
        let a = run_workload(&site_names(3), &ops, options, Faults::default()).unwrap();
        let b = run_workload(&site_names(3), &ops, options, Faults::default()).unwrap();
        prop_assert_eq!(a.sim.trace().to_bytes(), b.sim.trace().to_bytes());
    }
}

#[test]
fn documents_with_every_value_kind() {
    let doc = json!({"n": null, "b": true, "i": -3, "u": u64::MAX, "f": 0.1, "s": "é\"\n", "a": [1, [2, {}]]});
    let bytes = wire::encode(&doc);
    assert_eq!(wire::decode(&bytes).unwrap(), doc);
    assert_eq!(wire::encode(&wire::decode(&bytes).unwrap()), bytes);
}
