use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Domain, Tick};

/// Per ordered link transport behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub delay_max: Tick,
    pub loss_p: f64,
    pub reorder_p: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { delay_max: 1, loss_p: 0.0, reorder_p: 0.0 }
    }
}

impl LinkParams {
    pub fn new(delay_max: Tick, loss_p: f64, reorder_p: f64) -> Result<Self> {
        let p = LinkParams { delay_max, loss_p, reorder_p };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.loss_p) || !unit(self.reorder_p) {
            return Err(Error::Invalid("probabilities must lie in [0, 1]".into()));
        }
        if self.delay_max < 1 {
            return Err(Error::Invalid("delay_max must be at least 1".into()));
        }
        Ok(())
    }

    /// A link that drops everything is treated as down for synchronous requests.
    pub fn is_down(&self) -> bool {
        self.loss_p >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub sites: Vec<Domain>,
    pub default_link: LinkParams,
    pub links: BTreeMap<(Domain, Domain), LinkParams>,
    pub seed: u64,
}

impl Topology {
    pub fn new(seed: u64) -> Self {
        Topology { sites: Vec::new(), default_link: LinkParams::default(), links: BTreeMap::new(), seed }
    }

    pub fn with_sites(seed: u64, sites: &[&str]) -> Result<Self> {
        let mut t = Topology::new(seed);
        for s in sites {
            t.add_site(Domain::parse(s)?);
        }
        Ok(t)
    }

    pub fn with_default_link(mut self, link: LinkParams) -> Self {
        self.default_link = link;
        self
    }

    pub fn add_site(&mut self, domain: Domain) -> bool {
        if self.sites.contains(&domain) {
            return false;
        }
        self.sites.push(domain);
        true
    }

    pub fn contains(&self, domain: &Domain) -> bool {
        self.sites.contains(domain)
    }

    pub fn set_link(&mut self, from: Domain, to: Domain, params: LinkParams) -> Result<()> {
        params.validate()?;
        self.links.insert((from, to), params);
        Ok(())
    }

    pub fn link(&self, from: &Domain, to: &Domain) -> LinkParams {
        self.links.get(&(from.clone(), to.clone())).copied().unwrap_or(self.default_link)
    }

    pub fn validate(&self) -> Result<()> {
        self.default_link.validate()?;
        self.links.values().try_for_each(LinkParams::validate)
    }
}
