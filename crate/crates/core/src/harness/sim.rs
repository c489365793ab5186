//! Deterministic discrete-tick scheduler owning every site.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::topology::{LinkParams, Topology};
use super::trace::Trace;
use crate::error::{Error, Result};
use crate::model::{CacheMode, Domain, MessageId, Tick};
use crate::site::{Ack, EventKind, Outgoing, Site, SiteConfig};
use crate::wire::{self, Document, Endpoint, Envelope, EnvelopeHeader, Keyring, PayloadClaim};

pub const DEFAULT_RETRIES: u32 = 16;
pub const DEFAULT_MAX_TICKS: Tick = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Resends of an unacknowledged envelope before giving up.
    pub retries: u32,
    pub payload_cap: usize,
    /// Guard for `run_until_quiescent`.
    pub max_ticks: Tick,
    /// Check the cache-bound invariant after every tick.
    pub check_cache_bound: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            retries: DEFAULT_RETRIES,
            payload_cap: crate::site::DEFAULT_PAYLOAD_CAP,
            max_ticks: DEFAULT_MAX_TICKS,
            check_cache_bound: false,
        }
    }
}

/// Deliberate protocol faults for mutation testing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Silently swallow the n-th (1-based) follow notice, as if acknowledged.
    pub skip_follow_notice: Option<u32>,
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: Tick,
    to: Domain,
    message_id: MessageId,
    frame: Vec<u8>,
}

#[derive(Debug, Clone)]
struct Pending {
    envelope: Envelope,
    attempts: u32,
    in_flight: u32,
}

#[derive(Debug, Default)]
struct Transport {
    in_flight: Vec<InFlight>,
    pending: BTreeMap<MessageId, Pending>,
    rngs: BTreeMap<(Domain, Domain), ChaCha8Rng>,
    fifo: BTreeMap<(Domain, Domain), Tick>,
    follow_notices: u32,
}

/// Outcome of one `step`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    pub tick: Tick,
    /// Message ids in processing order.
    pub delivered: Vec<MessageId>,
    pub retried: Vec<MessageId>,
    pub abandoned: Vec<MessageId>,
}

pub struct Simulation {
    pub(crate) config: SimConfig,
    pub(crate) topology: Topology,
    pub(crate) keys: Keyring,
    pub(crate) sites: BTreeMap<Domain, Site>,
    pub(crate) now: Tick,
    transport: Transport,
    pub(crate) trace: Trace,
    pub(crate) faults: Faults,
    violations: Vec<String>,
}

fn link_rng(seed: u64, from: &Domain, to: &Domain) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"fedsim/link-rng/v1");
    h.update(seed.to_be_bytes());
    h.update(from.as_str().as_bytes());
    h.update([0]);
    h.update(to.as_str().as_bytes());
    let mut seed_bytes = [0u8; 32];
    seed_bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(seed_bytes)
}

impl Simulation {
    pub fn new(topology: Topology, config: SimConfig) -> Result<Self> {
        topology.validate()?;
        let keys = Keyring::new(topology.seed);
        let mut sim = Simulation {
            config,
            keys,
            sites: BTreeMap::new(),
            now: 0,
            transport: Transport::default(),
            trace: Trace::new(),
            faults: Faults::default(),
            violations: Vec::new(),
            topology: Topology { sites: Vec::new(), ..topology.clone() },
        };
        for d in &topology.sites {
            sim.add_site(d.clone());
        }
        Ok(sim)
    }

    pub fn add_site(&mut self, domain: Domain) {
        if self.topology.add_site(domain.clone()) {
            let cfg = SiteConfig { payload_cap: self.config.payload_cap };
            self.sites.insert(domain.clone(), Site::new(domain, self.keys, cfg));
        }
    }

    pub fn set_link(&mut self, from: Domain, to: Domain, params: LinkParams) -> Result<()> {
        self.topology.set_link(from, to, params)
    }

    pub fn set_faults(&mut self, faults: Faults) {
        self.faults = faults;
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn keys(&self) -> Keyring {
        self.keys
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn site(&self, domain: &Domain) -> Option<&Site> {
        self.sites.get(domain)
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    /// Invariant violations recorded by per-tick checks.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn in_flight(&self) -> usize {
        self.transport.in_flight.len()
    }

    pub fn is_quiescent(&self) -> bool {
        self.transport.in_flight.is_empty() && self.transport.pending.is_empty()
    }

    pub(crate) fn site_mut(&mut self, domain: &Domain) -> Result<&mut Site> {
        let now = self.now;
        let site = self.sites.get_mut(domain).ok_or_else(|| Error::UnknownSite(domain.to_string()))?;
        site.set_now(now);
        Ok(site)
    }

    /// Runs `f` against one site, then records its events and sends its outbox.
    pub(crate) fn with_site<T>(&mut self, domain: &Domain, f: impl FnOnce(&mut Site) -> T) -> Result<T> {
        let out = f(self.site_mut(domain)?);
        self.flush_site(domain);
        Ok(out)
    }

    pub(crate) fn flush_site(&mut self, domain: &Domain) {
        let Some(site) = self.sites.get_mut(domain) else { return };
        let events = site.take_events();
        let outbox = site.take_outbox();
        for e in events {
            self.trace.push(self.now, domain, e.kind, e.detail);
        }
        for msg in outbox {
            self.send_notice(domain, msg);
        }
    }

    fn seal(&mut self, from: &Domain, to: &Domain, endpoint: String, body: Vec<u8>, status: Option<String>, in_reply_to: Option<MessageId>) -> Envelope {
        let message_id = self.sites.get_mut(from).expect("sender exists").next_message_id();
        let header = EnvelopeHeader {
            from: from.clone(),
            to: to.clone(),
            endpoint,
            message_id,
            sent_tick: self.now,
            status,
            in_reply_to,
        };
        Envelope::seal(&self.keys.pair(from, to), header, body)
    }

    fn send_notice(&mut self, from: &Domain, msg: Outgoing) {
        let Outgoing { to, endpoint, body } = msg;
        if !self.topology.contains(&to) {
            self.trace.push(
                self.now,
                from,
                EventKind::Drop,
                json!({"to": to.to_string(), "endpoint": endpoint.to_string(), "reason": "unreachable"}),
            );
            return;
        }
        let is_follow = body
            .get("activity")
            .and_then(|a| a.get("verb"))
            .and_then(|v| v.as_str())
            .map(|v| v == "follow")
            .unwrap_or(false);
        let env = self.seal(from, &to, endpoint.to_string(), wire::encode(&body), None, None);
        if is_follow {
            self.transport.follow_notices += 1;
            if self.faults.skip_follow_notice == Some(self.transport.follow_notices) {
                self.trace.push(
                    self.now,
                    from,
                    EventKind::Drop,
                    json!({"message_id": env.header.message_id.to_string(), "reason": "fault"}),
                );
                return;
            }
        }
        let id = env.header.message_id.clone();
        self.transport.pending.insert(id.clone(), Pending { envelope: env, attempts: 0, in_flight: 0 });
        self.transmit(&id);
    }

    /// Hands a pending envelope to the link, which may drop or delay it.
    fn transmit(&mut self, id: &MessageId) {
        let pending = self.transport.pending.get_mut(id).expect("pending entry");
        pending.attempts += 1;
        let env = pending.envelope.clone();
        let attempt = pending.attempts;
        let (from, to) = (env.header.from.clone(), env.header.to.clone());
        let link = self.topology.link(&from, &to);
        let seed = self.topology.seed;
        let rng = self
            .transport
            .rngs
            .entry((from.clone(), to.clone()))
            .or_insert_with(|| link_rng(seed, &from, &to));
        let lost = rng.random::<f64>() < link.loss_p;
        let reordered = rng.random::<f64>() < link.reorder_p;
        let delay = rng.random_range(1..=link.delay_max);
        let mut detail = json!({
            "message_id": id.to_string(),
            "to": to.to_string(),
            "endpoint": env.header.endpoint,
            "attempt": attempt,
        });
        if lost {
            self.trace.push(self.now, &from, EventKind::Send, detail.clone());
            detail["reason"] = json!("loss");
            self.trace.push(self.now, &from, EventKind::Drop, detail);
            return;
        }
        let mut deliver_at = self.now + delay;
        let fifo = self.transport.fifo.entry((from.clone(), to.clone())).or_insert(0);
        if !reordered {
            deliver_at = deliver_at.max(*fifo);
            *fifo = deliver_at;
        }
        detail["deliver_at"] = json!(deliver_at);
        if reordered {
            detail["reordered"] = json!(true);
        }
        self.trace.push(self.now, &from, EventKind::Send, detail);
        self.transport.pending.get_mut(id).expect("pending entry").in_flight += 1;
        self.transport.in_flight.push(InFlight {
            deliver_at,
            to,
            message_id: id.clone(),
            frame: env.to_bytes(),
        });
    }

    /// Queues a raw frame for delivery next tick, bypassing signing. Used to
    /// exercise the inbox against forged or corrupted envelopes.
    pub fn inject_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        let env = Envelope::from_bytes(&frame)?;
        if !self.topology.contains(&env.header.to) {
            return Err(Error::Unreachable(env.header.to.to_string()));
        }
        self.transport.in_flight.push(InFlight {
            deliver_at: self.now + 1,
            to: env.header.to.clone(),
            message_id: env.header.message_id.clone(),
            frame,
        });
        Ok(())
    }

    /// Advances one tick: due envelopes are delivered in (destination,
    /// message id) order, then unacknowledged envelopes with nothing in
    /// flight are resent or abandoned.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_quiescent() {
            return Err(Error::Quiescent);
        }
        self.now += 1;
        let now = self.now;
        let mut report = StepReport { tick: now, ..Default::default() };
        let (mut due, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.transport.in_flight).into_iter().partition(|f| f.deliver_at <= now);
        self.transport.in_flight = rest;
        due.sort_by(|a, b| (&a.to, &a.message_id).cmp(&(&b.to, &b.message_id)));
        for item in due {
            report.delivered.push(item.message_id.clone());
            self.deliver_frame(item);
        }
        let retry: Vec<MessageId> = self
            .transport
            .pending
            .iter()
            .filter(|(_, p)| p.in_flight == 0)
            .map(|(id, _)| id.clone())
            .collect();
        for id in retry {
            let attempts = self.transport.pending[&id].attempts;
            if attempts > self.config.retries {
                let p = self.transport.pending.remove(&id).expect("pending entry");
                self.trace.push(
                    now,
                    &p.envelope.header.from,
                    EventKind::Drop,
                    json!({"message_id": id.to_string(), "reason": "retries_exhausted", "attempts": attempts}),
                );
                report.abandoned.push(id);
            } else {
                self.transmit(&id);
                report.retried.push(id);
            }
        }
        if self.config.check_cache_bound {
            self.check_cache_bound();
        }
        Ok(report)
    }

    fn deliver_frame(&mut self, item: InFlight) {
        let now = self.now;
        if let Some(p) = self.transport.pending.get_mut(&item.message_id) {
            p.in_flight = p.in_flight.saturating_sub(1);
        }
        let env = match Envelope::from_bytes(&item.frame) {
            Ok(env) => env,
            Err(e) => {
                self.trace.push(
                    now,
                    &item.to,
                    EventKind::Reject,
                    json!({"message_id": item.message_id.to_string(), "reason": format!("malformed_envelope: {e}")}),
                );
                return;
            }
        };
        let mut detail = json!({
            "message_id": env.header.message_id.to_string(),
            "from": env.header.from.to_string(),
            "endpoint": env.header.endpoint,
        });
        annotate_payload(&mut detail, &env);
        self.trace.push(now, &item.to, EventKind::Deliver, detail);
        let Some(site) = self.sites.get_mut(&item.to) else { return };
        site.set_now(now);
        let ack = site.deliver(&env);
        self.flush_site(&item.to);
        if ack == Ack::Rejected {
            return;
        }
        let (from, to) = (env.header.from.clone(), env.header.to.clone());
        let reverse = self.topology.link(&to, &from);
        let seed = self.topology.seed;
        let rng = self
            .transport
            .rngs
            .entry((to.clone(), from.clone()))
            .or_insert_with(|| link_rng(seed, &to, &from));
        let ack_lost = rng.random::<f64>() < reverse.loss_p;
        if ack_lost {
            self.trace.push(
                now,
                &to,
                EventKind::Drop,
                json!({"ack_for": env.header.message_id.to_string(), "reason": "loss"}),
            );
        } else {
            self.transport.pending.remove(&env.header.message_id);
        }
    }

    /// Steps until nothing is in flight or pending.
    pub fn run_until_quiescent(&mut self) -> Result<Tick> {
        let start = self.now;
        while !self.is_quiescent() {
            if self.now - start >= self.config.max_ticks {
                return Err(Error::Invalid(format!("no quiescence after {} ticks", self.config.max_ticks)));
            }
            self.step()?;
        }
        Ok(self.now - start)
    }

    /// Advances `n` ticks, idling once quiescent.
    pub fn advance(&mut self, n: Tick) -> Result<()> {
        for _ in 0..n {
            if self.is_quiescent() {
                self.now += 1;
            } else {
                self.step()?;
            }
        }
        Ok(())
    }

    /// Synchronous request/response between two sites. Fails with
    /// `unreachable` when either direction of the link is down.
    pub(crate) fn request(&mut self, from: &Domain, to: &Domain, endpoint: Endpoint, body: Document) -> Result<Document> {
        if !self.topology.contains(to) {
            return Err(Error::Unreachable(to.to_string()));
        }
        if !self.sites.contains_key(from) {
            return Err(Error::UnknownSite(from.to_string()));
        }
        let now = self.now;
        let req = self.seal(from, to, endpoint.to_string(), wire::encode(&body), None, None);
        self.trace.push(
            now,
            from,
            EventKind::Send,
            json!({"message_id": req.header.message_id.to_string(), "to": to.to_string(), "endpoint": endpoint.to_string(), "sync": true}),
        );
        if self.topology.link(from, to).is_down() || self.topology.link(to, from).is_down() {
            self.trace.push(
                now,
                from,
                EventKind::Drop,
                json!({"message_id": req.header.message_id.to_string(), "reason": "unreachable"}),
            );
            return Err(Error::Unreachable(to.to_string()));
        }
        let frame = req.to_bytes();
        let req = Envelope::from_bytes(&frame)?;
        if !wire::verify(&self.keys.pair(from, to), &req) {
            self.trace.push(now, to, EventKind::Reject, json!({"message_id": req.header.message_id.to_string(), "reason": "bad_token"}));
            return Err(Error::BadToken);
        }
        self.trace.push(
            now,
            to,
            EventKind::Deliver,
            json!({"message_id": req.header.message_id.to_string(), "from": from.to_string(), "endpoint": req.header.endpoint}),
        );
        let body = req.body_document()?;
        let result = self.site_mut(to)?.handle_request(from, &endpoint, &body);
        let events = self.sites.get_mut(to).map(Site::take_events).unwrap_or_default();
        for e in events {
            self.trace.push(now, to, e.kind, e.detail);
        }
        let (status, resp_body) = match &result {
            Ok(doc) => ("ok".to_string(), doc.clone()),
            Err(e) => (e.code(), json!({"detail": e.detail()})),
        };
        let resp = self.seal(to, from, endpoint.to_string(), wire::encode(&resp_body), Some(status.clone()), Some(req.header.message_id.clone()));
        self.trace.push(
            now,
            to,
            EventKind::Send,
            json!({"message_id": resp.header.message_id.to_string(), "to": from.to_string(), "endpoint": endpoint.to_string(), "status": status, "sync": true}),
        );
        let resp = Envelope::from_bytes(&resp.to_bytes())?;
        if !wire::verify(&self.keys.pair(to, from), &resp) {
            return Err(Error::BadToken);
        }
        let mut detail = json!({
            "message_id": resp.header.message_id.to_string(),
            "from": to.to_string(),
            "endpoint": resp.header.endpoint,
            "status": status,
        });
        annotate_payload(&mut detail, &resp);
        self.trace.push(now, from, EventKind::Deliver, detail);
        let outbox = self.sites.get_mut(to).map(Site::take_outbox).unwrap_or_default();
        for msg in outbox {
            self.send_notice(to, msg);
        }
        match result {
            Ok(_) => Ok(resp.body_document()?),
            Err(_) => {
                let detail = resp
                    .body_document()?
                    .get("detail")
                    .and_then(|d| d.as_str())
                    .unwrap_or_default()
                    .to_string();
                Err(Error::from_code(&status, &detail))
            }
        }
    }

    /// Records a payload handed directly to a client of `site`.
    pub(crate) fn trace_client_delivery(&mut self, site: &Domain, principal: &crate::privacy::Principal, resource: &crate::privacy::Resource) {
        self.trace.push(
            self.now,
            site,
            EventKind::Deliver,
            json!({
                "to": "client",
                "payload": true,
                "requester": principal.to_string(),
                "resource": resource.to_string(),
                "served_by": site.to_string(),
            }),
        );
    }

    fn check_cache_bound(&mut self) {
        let mut found = Vec::new();
        for site in self.sites.values() {
            for obj in site.objects() {
                if obj.mode != Some(CacheMode::Cache) {
                    continue;
                }
                let native = self
                    .sites
                    .get(obj.id.authority())
                    .and_then(|s| s.object(&obj.id))
                    .map(|o| o.revision)
                    .unwrap_or(0);
                let cached = obj.cached_revision.unwrap_or(0);
                if cached > native {
                    found.push(format!(
                        "tick {}: cache of {} at {} has revision {cached} > native {native}",
                        self.now, obj.id, site.domain()
                    ));
                }
            }
        }
        self.violations.extend(found);
    }
}

fn annotate_payload(detail: &mut Document, env: &Envelope) {
    let Ok(body) = env.body_document() else { return };
    match wire::payload_claim(&env.header.to, &body) {
        PayloadClaim::None => {}
        PayloadClaim::Cleared { principal, resource } => {
            detail["payload"] = json!(true);
            detail["requester"] = json!(principal.to_string());
            detail["resource"] = json!(resource.to_string());
            detail["served_by"] = json!(env.header.from.to_string());
        }
        PayloadClaim::Unattributed => {
            detail["payload"] = json!(true);
            detail["served_by"] = json!(env.header.from.to_string());
        }
    }
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("now", &self.now)
            .field("sites", &self.sites.keys().collect::<Vec<_>>())
            .field("in_flight", &self.transport.in_flight.len())
            .field("pending", &self.transport.pending.len())
            .finish()
    }
}
