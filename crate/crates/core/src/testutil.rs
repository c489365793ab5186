use crate::harness::{SimConfig, Simulation, Topology};
use crate::model::{Domain, ObjectId, SocialId};
use crate::site::Session;

pub fn d(s: &str) -> Domain {
    Domain::parse(s).unwrap()
}

pub fn id(s: &str) -> SocialId {
    SocialId::parse(s).unwrap()
}

pub fn oid(s: &str) -> ObjectId {
    ObjectId::parse(s).unwrap()
}

/// Lossless simulation over `sites` with the cache-bound check on.
pub fn sim(sites: &[&str]) -> Simulation {
    let topology = Topology::with_sites(1, sites).unwrap();
    Simulation::new(topology, SimConfig { check_cache_bound: true, ..SimConfig::default() }).unwrap()
}

/// Registers `name` at `site` and logs them in.
pub fn join(sim: &mut Simulation, site: &str, name: &str) -> Session {
    let rec = sim.register_native(&d(site), name, "pw").unwrap();
    sim.login(&d(site), &rec.id, "pw").unwrap()
}
