//! Centralized reference model and random workloads.
//!
//! The model applies the same operations as one global store with no
//! network. After a workload reaches quiescence, the federated state at each
//! authoritative site must match it.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audit;
use super::scenario::RunOptions;
use super::sim::{Faults, SimConfig, Simulation};
use super::topology::Topology;
use crate::error::Result;
use crate::model::{Audience, CacheMode, Domain, ObjectId, Ref, SocialId};
use crate::objects::NewObject;
use crate::privacy::Principal;
use crate::site::{EventKind, Session};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Register { site: Domain, name: String },
    Follow { actor: SocialId, target: SocialId },
    Unfollow { actor: SocialId, target: SocialId },
    Post { actor: SocialId, local: String },
    Reply { actor: SocialId, target: ObjectId, local: String },
    Rate { actor: SocialId, target: ObjectId, value: i64 },
    /// Cache-mode import at the actor's home site.
    Import { actor: SocialId, object: ObjectId },
    Update { actor: SocialId, object: ObjectId, payload: String },
}

/// Timeline entry projection: (verb, object, target).
pub type Entry = (String, String, String);

fn short(r: &Ref) -> String {
    match r {
        Ref::Actor(id) => format!("{}@{}", id.local(), id.authority()),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct Model {
    pub actors: Vec<SocialId>,
    pub followers: BTreeMap<SocialId, BTreeSet<SocialId>>,
    pub following: BTreeMap<SocialId, BTreeSet<SocialId>>,
    /// Posts with their authors.
    pub posts: BTreeMap<ObjectId, SocialId>,
    pub replies: BTreeMap<ObjectId, BTreeSet<ObjectId>>,
    pub ratings: BTreeMap<ObjectId, BTreeMap<SocialId, i64>>,
    pub timelines: BTreeMap<SocialId, Vec<Entry>>,
}

impl Model {
    fn log(&mut self, actor: &SocialId, verb: &str, object: Ref, target: Option<Ref>) {
        let entry = (verb.to_string(), short(&object), target.as_ref().map(short).unwrap_or_default());
        self.timelines.entry(actor.clone()).or_default().push(entry);
    }

    pub fn apply(&mut self, op: &Op) {
        match op {
            Op::Register { site, name } => {
                let id = SocialId::acct(site, name).expect("generated names are valid");
                self.actors.push(id.clone());
                self.followers.insert(id.clone(), BTreeSet::new());
                self.following.insert(id.clone(), BTreeSet::new());
                self.timelines.insert(id, Vec::new());
            }
            Op::Follow { actor, target } => {
                self.following.get_mut(actor).expect("registered").insert(target.clone());
                self.followers.get_mut(target).expect("registered").insert(actor.clone());
                self.log(actor, "follow", Ref::Actor(target.clone()), None);
            }
            Op::Unfollow { actor, target } => {
                self.following.get_mut(actor).expect("registered").remove(target);
                self.followers.get_mut(target).expect("registered").remove(actor);
                self.log(actor, "unfollow", Ref::Actor(target.clone()), None);
            }
            Op::Post { actor, local } => {
                let oid = ObjectId::new(actor.authority().clone(), local).expect("generated keys are valid");
                self.posts.insert(oid.clone(), actor.clone());
                self.replies.insert(oid.clone(), BTreeSet::new());
                self.ratings.insert(oid.clone(), BTreeMap::new());
                self.log(actor, "post", Ref::Object(oid), None);
            }
            Op::Reply { actor, target, local } => {
                let comment = ObjectId::new(actor.authority().clone(), local).expect("generated keys are valid");
                self.replies.get_mut(target).expect("known post").insert(comment.clone());
                self.log(actor, "reply", Ref::Object(comment), Some(Ref::Object(target.clone())));
            }
            Op::Rate { actor, target, value } => {
                self.ratings.get_mut(target).expect("known post").insert(actor.clone(), *value);
                self.log(actor, "rate", Ref::Object(target.clone()), None);
            }
            Op::Import { .. } => {}
            Op::Update { actor, object, .. } => {
                self.log(actor, "object_update", Ref::Object(object.clone()), None);
            }
        }
    }

    /// Differences between the model and the authoritative federated state.
    pub fn diff(&self, sim: &Simulation) -> Vec<String> {
        let mut out = Vec::new();
        for id in &self.actors {
            let Some(rec) = sim.site(id.authority()).and_then(|s| s.actor(id)) else {
                out.push(format!("{id}: missing at home"));
                continue;
            };
            if rec.contacts.followers != self.followers[id] {
                out.push(format!("{id}: followers {:?} != model {:?}", rec.contacts.followers, self.followers[id]));
            }
            if rec.contacts.following != self.following[id] {
                out.push(format!("{id}: following {:?} != model {:?}", rec.contacts.following, self.following[id]));
            }
            let site = sim.site(id.authority()).expect("home exists");
            let mut got: Vec<Entry> = rec
                .timeline
                .iter()
                .filter_map(|a| site.activity(a))
                .filter(|a| &a.actor == id)
                .map(|a| (a.verb.to_string(), short(&a.object), a.target.as_ref().map(short).unwrap_or_default()))
                .collect();
            let mut want = self.timelines[id].clone();
            got.sort();
            want.sort();
            if got != want {
                out.push(format!("{id}: timeline {got:?} != model {want:?}"));
            }
        }
        for (oid, replies) in &self.replies {
            let Some(obj) = sim.site(oid.authority()).and_then(|s| s.object(oid)) else {
                out.push(format!("{oid}: missing at content site"));
                continue;
            };
            let got: BTreeSet<ObjectId> = obj.reply_collection.iter().cloned().collect();
            if &got != replies || obj.reply_collection.len() != got.len() {
                out.push(format!("{oid}: replies {:?} != model {replies:?}", obj.reply_collection));
            }
            let ratings = &self.ratings[oid];
            let want = (ratings.len() as u64, ratings.values().sum::<i64>());
            let got = (obj.rating_aggregate.count, obj.rating_aggregate.sum);
            if got != want {
                out.push(format!("{oid}: rating (count, sum) {got:?} != model {want:?}"));
            }
        }
        out
    }
}

/// Shape of a random workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub sites: usize,
    pub ops: usize,
    pub seed: u64,
    /// Mix in cache imports and object updates.
    pub caches: bool,
}

pub fn site_names(n: usize) -> Vec<Domain> {
    (0..n).map(|i| Domain::parse(&format!("s{i}.example")).expect("valid domain")).collect()
}

/// Generates a valid operation sequence; validity is judged by the model.
pub fn generate(spec: WorkloadSpec) -> Vec<Op> {
    let sites = site_names(spec.sites.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut model = Model::default();
    let mut ops = Vec::with_capacity(spec.ops);
    let mut names = 0usize;
    let mut keys = 0usize;
    let mut imported: BTreeSet<(Domain, ObjectId)> = BTreeSet::new();
    while ops.len() < spec.ops {
        let k = ops.len();
        let need_actors = model.actors.len() < 2.max(spec.sites);
        let roll: u32 = rng.random_range(0..100);
        let pick = |rng: &mut ChaCha8Rng, v: &[SocialId]| v[rng.random_range(0..v.len())].clone();
        let posts: Vec<ObjectId> = model.posts.keys().cloned().collect();
        let op = if need_actors || roll < 6 {
            names += 1;
            let site = if need_actors { sites[model.actors.len() % sites.len()].clone() } else { sites[rng.random_range(0..sites.len())].clone() };
            Op::Register { site, name: format!("u{names}") }
        } else if roll < 30 {
            let a = pick(&mut rng, &model.actors);
            let b = pick(&mut rng, &model.actors);
            if a == b {
                continue;
            }
            Op::Follow { actor: a, target: b }
        } else if roll < 40 {
            let a = pick(&mut rng, &model.actors);
            let Some(b) = model.following[&a].iter().next().cloned() else { continue };
            Op::Unfollow { actor: a, target: b }
        } else if roll < 58 || posts.is_empty() {
            keys += 1;
            Op::Post { actor: pick(&mut rng, &model.actors), local: format!("p{keys}") }
        } else if roll < 76 {
            keys += 1;
            let target = posts[rng.random_range(0..posts.len())].clone();
            Op::Reply { actor: pick(&mut rng, &model.actors), target, local: format!("r{keys}") }
        } else if roll < 92 || !spec.caches {
            let target = posts[rng.random_range(0..posts.len())].clone();
            Op::Rate { actor: pick(&mut rng, &model.actors), target, value: rng.random_range(1..=5) }
        } else if roll < 96 {
            let actor = pick(&mut rng, &model.actors);
            let object = posts[rng.random_range(0..posts.len())].clone();
            if object.authority() == actor.authority() || !imported.insert((actor.authority().clone(), object.clone())) {
                continue;
            }
            Op::Import { actor, object }
        } else {
            let object = posts[rng.random_range(0..posts.len())].clone();
            Op::Update { actor: model.posts[&object].clone(), object, payload: format!("v{k}") }
        };
        model.apply(&op);
        ops.push(op);
    }
    ops
}

#[derive(Debug)]
pub struct WorkloadRun {
    pub model: Model,
    pub sim: Simulation,
    /// Operations the federation refused.
    pub errors: Vec<String>,
}

/// Runs `ops` one per tick with one scheduler step in between, then drains
/// the network.
pub fn run_workload(sites: &[Domain], ops: &[Op], options: RunOptions, faults: Faults) -> Result<WorkloadRun> {
    let mut topology = Topology::new(options.seed).with_default_link(options.default_link);
    for d in sites {
        topology.add_site(d.clone());
    }
    let config = SimConfig { retries: options.retries, check_cache_bound: true, ..SimConfig::default() };
    let mut sim = Simulation::new(topology, config)?;
    sim.set_faults(faults);
    let mut model = Model::default();
    let mut sessions: BTreeMap<SocialId, Session> = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        let s = |a: &SocialId| sessions[a].clone();
        let result = match op {
            Op::Register { site, name } => sim.register_native(site, name, name).and_then(|rec| {
                let session = sim.login(site, &rec.id, name)?;
                sessions.insert(rec.id, session);
                Ok(())
            }),
            Op::Follow { actor, target } => sim.follow(&s(actor), target).map(drop),
            Op::Unfollow { actor, target } => sim.unfollow(&s(actor), target).map(drop),
            Op::Post { actor, local } => {
                let mut new = NewObject::text(local, Audience::public());
                new.local = Some(local.clone());
                sim.create_object(&s(actor), new).map(drop)
            }
            Op::Reply { actor, target, local } => sim.reply(&s(actor), target, local, Some(local)).map(drop),
            Op::Rate { actor, target, value } => sim.rate(&s(actor), target, *value).map(drop),
            Op::Import { actor, object } => {
                sim.import_alien(actor.authority(), &Principal::Actor(actor.clone()), object, CacheMode::Cache).map(drop)
            }
            Op::Update { actor, object, payload } => {
                sim.update_object(&s(actor), object, payload.as_bytes().to_vec()).map(drop)
            }
        };
        match result {
            Ok(()) => model.apply(op),
            Err(e) => errors.push(format!("op {i} {op:?}: {e}")),
        }
        sim.advance(1)?;
    }
    sim.run_until_quiescent()?;
    Ok(WorkloadRun { model, sim, errors })
}

#[derive(Debug)]
pub struct OracleReport {
    pub diff: Vec<String>,
    pub run: WorkloadRun,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.diff.is_empty()
    }
}

/// Random workload on a lossless network, compared against the model.
pub fn oracle_check(sites: usize, ops: usize, seed: u64, faults: Faults) -> Result<OracleReport> {
    let spec = WorkloadSpec { sites, ops, seed, caches: false };
    let run = run_workload(&site_names(sites), &generate(spec), RunOptions::new(seed), faults)?;
    let mut diff = run.errors.clone();
    diff.extend(run.model.diff(&run.sim));
    Ok(OracleReport { diff, run })
}

/// Everything checked after a faulty-network run.
#[derive(Debug, Default)]
pub struct FaultReport {
    pub oracle: Vec<String>,
    pub cache_bound: Vec<String>,
    pub quiescent_equality: Vec<String>,
    pub exactly_once: Vec<String>,
    pub follow_symmetry: Vec<String>,
    pub privacy: Vec<String>,
    /// Sends and acks the network dropped.
    pub losses: usize,
    /// Sends beyond the first attempt.
    pub resends: usize,
}

impl FaultReport {
    pub fn passed(&self) -> bool {
        [
            &self.oracle,
            &self.cache_bound,
            &self.quiescent_equality,
            &self.exactly_once,
            &self.follow_symmetry,
            &self.privacy,
        ]
        .iter()
        .all(|v| v.is_empty())
    }

    pub fn problems(&self) -> Vec<String> {
        [
            ("oracle", &self.oracle),
            ("cache_bound", &self.cache_bound),
            ("quiescent_equality", &self.quiescent_equality),
            ("exactly_once", &self.exactly_once),
            ("follow_symmetry", &self.follow_symmetry),
            ("privacy", &self.privacy),
        ]
        .iter()
        .flat_map(|(k, v)| v.iter().map(move |m| format!("{k}: {m}")))
        .collect()
    }
}

/// Random workload with caches over the given lossy network.
pub fn fault_check(sites: usize, ops: usize, options: RunOptions) -> Result<FaultReport> {
    let spec = WorkloadSpec { sites, ops, seed: options.seed, caches: true };
    let run = run_workload(&site_names(sites), &generate(spec), options, Faults::default())?;
    let mut oracle = run.errors.clone();
    oracle.extend(run.model.diff(&run.sim));
    let trace = run.sim.trace();
    Ok(FaultReport {
        oracle,
        cache_bound: run.sim.violations().to_vec(),
        quiescent_equality: audit::quiescent_equality(&run.sim),
        exactly_once: audit::exactly_once(run.sim.trace()),
        follow_symmetry: audit::follow_symmetry(&run.sim),
        privacy: audit::privacy_audit(run.sim.trace()),
        losses: trace.of_kind(EventKind::Drop).filter(|e| e.detail["reason"] == "loss").count(),
        resends: trace.of_kind(EventKind::Send).filter(|e| e.detail["attempt"].as_u64() > Some(1)).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_workload_has_no_diff() {
        let r = oracle_check(2, 0, 1, Faults::default()).unwrap();
        assert!(r.passed());
        assert_eq!(r.run.sim.now(), 0);
    }

    #[test]
    fn workloads_are_reproducible() {
        let spec = WorkloadSpec { sites: 3, ops: 100, seed: 4, caches: true };
        assert_eq!(generate(spec), generate(spec));
        assert_ne!(generate(spec), generate(WorkloadSpec { seed: 5, ..spec }));
        assert_eq!(generate(spec).len(), 100);
    }

    #[test]
    fn small_workload_matches() {
        let r = oracle_check(3, 200, 7, Faults::default()).unwrap();
        assert!(r.passed(), "{:?}", r.diff);
    }

    #[test]
    fn swallowed_follow_is_caught() {
        let sites = site_names(2);
        let u = |i: usize, s: usize| SocialId::acct(&sites[s], &format!("u{i}")).unwrap();
        let ops = vec![
            Op::Register { site: sites[0].clone(), name: "u1".into() },
            Op::Register { site: sites[1].clone(), name: "u2".into() },
            Op::Follow { actor: u(1, 0), target: u(2, 1) },
            Op::Post { actor: u(1, 0), local: "p1".into() },
        ];
        let clean = run_workload(&sites, &ops, RunOptions::new(1), Faults::default()).unwrap();
        assert!(clean.model.diff(&clean.sim).is_empty());

        let faults = Faults { skip_follow_notice: Some(1) };
        let run = run_workload(&sites, &ops, RunOptions::new(1), faults).unwrap();
        let diff = run.model.diff(&run.sim);
        assert!(!diff.is_empty());
        assert!(diff.iter().any(|m| m.contains("followers") && m.contains("u2@s1.example")), "{diff:?}");
        assert!(!audit::follow_symmetry(&run.sim).is_empty());
    }
}
