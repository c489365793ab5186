//! Line-oriented scenario language.
//!
//! One command per line, `#` starts a comment. Tokens are split on
//! whitespace; double quotes group a token and `\"` escapes a quote inside
//! one. Actor ids may be written `alice@a.example`, object ids
//! `a.example/photo1`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::sim::{SimConfig, Simulation};
use super::topology::{LinkParams, Topology};
use super::trace::Trace;
use crate::error::Error;
use crate::model::{ActivityId, Audience, CacheMode, ContentType, Domain, ObjectId, Ref, SocialId};
use crate::objects::NewObject;
use crate::privacy::{Action, Principal, Resource, ScopeGrant};
use crate::site::Session;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Ne,
    Contains,
    Excludes,
    Size,
    Ge,
    Le,
}

impl Relation {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "==" => Relation::Eq,
            "!=" => Relation::Ne,
            "contains" => Relation::Contains,
            "excludes" => Relation::Excludes,
            "size" => Relation::Size,
            ">=" => Relation::Ge,
            "<=" => Relation::Le,
            _ => return None,
        })
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Eq => "==",
            Relation::Ne => "!=",
            Relation::Contains => "contains",
            Relation::Excludes => "excludes",
            Relation::Size => "size",
            Relation::Ge => ">=",
            Relation::Le => "<=",
        })
    }
}

/// Result of a query, or an expected value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Str(String),
    /// Sorted multiset.
    Items(Vec<String>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::Items(items) => write!(f, "{{{}}}", items.join(",")),
        }
    }
}

/// Drops `acct:` prefixes so both id spellings compare equal.
fn normalize(s: &str) -> String {
    s.replace("acct:", "")
}

fn short(id: &SocialId) -> String {
    format!("{}@{}", id.local(), id.authority())
}

fn items(iter: impl IntoIterator<Item = String>) -> Value {
    let mut v: Vec<String> = iter.into_iter().map(|s| normalize(&s)).collect();
    v.sort();
    Value::Items(v)
}

impl Value {
    fn parse(text: &str) -> Value {
        if let Some(inner) = text.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            return items(inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(normalize));
        }
        match text.parse::<i64>() {
            Ok(n) => Value::Int(n),
            Err(_) => Value::Str(normalize(text)),
        }
    }

    fn holds(&self, rel: Relation, expected: &Value) -> bool {
        match (rel, self, expected) {
            (Relation::Eq, a, b) => a == b,
            (Relation::Ne, a, b) => a != b,
            (Relation::Contains, Value::Items(a), Value::Str(b)) => a.contains(b),
            (Relation::Contains, Value::Items(a), Value::Items(b)) => b.iter().all(|x| a.contains(x)),
            (Relation::Contains, Value::Str(a), Value::Str(b)) => a.contains(b.as_str()),
            (Relation::Excludes, Value::Items(a), Value::Str(b)) => !a.contains(b),
            (Relation::Excludes, Value::Items(a), Value::Items(b)) => b.iter().all(|x| !a.contains(x)),
            (Relation::Excludes, Value::Str(a), Value::Str(b)) => !a.contains(b.as_str()),
            (Relation::Size, Value::Items(a), Value::Int(n)) => a.len() as i64 == *n,
            (Relation::Ge, Value::Int(a), Value::Int(b)) => a >= b,
            (Relation::Le, Value::Int(a), Value::Int(b)) => a <= b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub name: String,
    pub args: Vec<String>,
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Site(Domain),
    Link { from: Domain, to: Domain, params: LinkParams },
    Register { site: Domain, name: String },
    Login { id: SocialId, at: Domain },
    Grant { id: SocialId, site: Domain, spec: String },
    Follow { id: SocialId, target: SocialId, at: Option<Domain> },
    Unfollow { id: SocialId, target: SocialId, at: Option<Domain> },
    Post { id: SocialId, object: NewObject, at: Option<Domain> },
    Reply { id: SocialId, target: ObjectId, text: String, local: Option<String>, at: Option<Domain> },
    Rate { id: SocialId, target: ObjectId, value: i64, at: Option<Domain> },
    Reshare { id: SocialId, activity: ActivityId, at: Option<Domain> },
    Import { id: SocialId, object: ObjectId, mode: CacheMode, at: Option<Domain> },
    Update { id: SocialId, object: ObjectId, payload: String },
    Edit { id: SocialId, object: ObjectId, payload: String, at: Domain },
    Delete { id: SocialId, object: ObjectId },
    Set { id: SocialId, owner: SocialId, attr: String, value: String, at: Option<Domain> },
    SubscribeProfile { site: Domain, id: SocialId },
    Subscribe { site: Domain, subject: Ref },
    AllowWall { owner: SocialId, author: SocialId },
    AllowEdit { owner: SocialId, object: ObjectId, editor: SocialId },
    Promote { id: SocialId, at: Domain, name: String },
    Tick(u64),
    Quiesce,
    Expect { query: Query, relation: Relation, value: Value },
    ExpectFail { code: String, command: Box<Command> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub number: usize,
    pub text: String,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub lines: Vec<Line>,
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut quoted = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                quoted = !quoted;
                in_token = true;
            }
            '\\' if quoted => match chars.next() {
                Some(n) => cur.push(n),
                None => return Err("dangling escape".into()),
            },
            '#' if !quoted => break,
            c if c.is_whitespace() && !quoted => {
                if in_token {
                    tokens.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                cur.push(c);
                in_token = true;
            }
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    if in_token {
        tokens.push(cur);
    }
    Ok(tokens)
}

struct Args {
    positional: Vec<String>,
    named: BTreeMap<String, String>,
    at: Option<String>,
    alias: Option<String>,
}

/// Splits tokens into positionals, `key=value` options and the `at` / `as`
/// clauses.
fn split_args(tokens: &[String]) -> Result<Args, String> {
    let mut a = Args { positional: Vec::new(), named: BTreeMap::new(), at: None, alias: None };
    let mut it = tokens.iter();
    while let Some(t) = it.next() {
        match t.as_str() {
            "at" => a.at = Some(it.next().ok_or("`at` needs a site")?.clone()),
            "as" => a.alias = Some(it.next().ok_or("`as` needs a name")?.clone()),
            _ => match t.split_once('=') {
                Some((k, v)) if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                    a.named.insert(k.to_string(), v.to_string());
                }
                _ => a.positional.push(t.clone()),
            },
        }
    }
    Ok(a)
}

fn dom(s: &str) -> Result<Domain, String> {
    Domain::parse(s).map_err(|e| e.to_string())
}

fn sid(s: &str) -> Result<SocialId, String> {
    SocialId::parse(s).map_err(|e| e.to_string())
}

fn oid(s: &str) -> Result<ObjectId, String> {
    ObjectId::parse(s).map_err(|e| e.to_string())
}

fn want(a: &Args, n: usize, usage: &str) -> Result<(), String> {
    if a.positional.len() == n {
        Ok(())
    } else {
        Err(format!("usage: {usage}"))
    }
}

fn parse_command(tokens: &[String]) -> Result<Command, String> {
    let (head, rest) = tokens.split_first().ok_or("empty command")?;
    if head == "expect-fail" {
        let (code, inner) = rest.split_first().ok_or("usage: expect-fail <code> <command...>")?;
        return Ok(Command::ExpectFail { code: code.clone(), command: Box::new(parse_command(inner)?) });
    }
    if head == "expect" {
        return parse_expect(rest);
    }
    let a = split_args(rest)?;
    let at = a.at.as_deref().map(dom).transpose()?;
    let p = &a.positional;
    Ok(match head.as_str() {
        "site" => {
            want(&a, 1, "site <domain>")?;
            Command::Site(dom(&p[0])?)
        }
        "link" => {
            want(&a, 2, "link <from> <to> [loss=p] [reorder=p] [delay=n]")?;
            let num = |k: &str, d: f64| -> Result<f64, String> {
                a.named.get(k).map(|v| v.parse::<f64>().map_err(|e| format!("{k}: {e}"))).unwrap_or(Ok(d))
            };
            let params = LinkParams {
                loss_p: num("loss", 0.0)?,
                reorder_p: num("reorder", 0.0)?,
                delay_max: num("delay", 1.0)? as u64,
            };
            params.validate().map_err(|e| e.to_string())?;
            Command::Link { from: dom(&p[0])?, to: dom(&p[1])?, params }
        }
        "register" => {
            want(&a, 2, "register <domain> <name>")?;
            Command::Register { site: dom(&p[0])?, name: p[1].clone() }
        }
        "login" => {
            want(&a, 1, "login <id> at <domain>")?;
            Command::Login { id: sid(&p[0])?, at: at.ok_or("usage: login <id> at <domain>")? }
        }
        "grant" => {
            if rest.len() != 3 {
                return Err("usage: grant <id> <domain> <scope>".into());
            }
            Command::Grant { id: sid(&rest[0])?, site: dom(&rest[1])?, spec: rest[2].clone() }
        }
        "follow" | "unfollow" => {
            want(&a, 2, "follow <id> <target> [at <domain>]")?;
            let (id, target) = (sid(&p[0])?, sid(&p[1])?);
            if head == "follow" {
                Command::Follow { id, target, at }
            } else {
                Command::Unfollow { id, target, at }
            }
        }
        "post" => {
            want(&a, 2, "post <id> <local> audience=<a> [mentions=..] [owner=..] [type=..] [payload=..]")?;
            let audience: Audience = a
                .named
                .get("audience")
                .ok_or("post needs audience=")?
                .parse()
                .map_err(|e: Error| e.to_string())?;
            let mentions = match a.named.get("mentions") {
                Some(list) => list.split(',').filter(|s| !s.is_empty()).map(sid).collect::<Result<_, _>>()?,
                None => Vec::new(),
            };
            let content_type: ContentType = match a.named.get("type") {
                Some(t) => t.parse().map_err(|e: Error| e.to_string())?,
                None => ContentType::Text,
            };
            let payload = a.named.get("payload").cloned().unwrap_or_else(|| p[1].clone());
            let object = NewObject {
                local: Some(p[1].clone()),
                content_type,
                payload: payload.into_bytes(),
                audience,
                owner: a.named.get("owner").map(|o| sid(o)).transpose()?,
                mentions,
            };
            Command::Post { id: sid(&p[0])?, object, at }
        }
        "reply" => {
            want(&a, 3, "reply <id> <object> \"<text>\" [as <local>] [at <domain>]")?;
            Command::Reply { id: sid(&p[0])?, target: oid(&p[1])?, text: p[2].clone(), local: a.alias.clone(), at }
        }
        "rate" => {
            want(&a, 3, "rate <id> <object> <value> [at <domain>]")?;
            let value = p[2].parse().map_err(|_| format!("bad rating `{}`", p[2]))?;
            Command::Rate { id: sid(&p[0])?, target: oid(&p[1])?, value, at }
        }
        "reshare" => {
            want(&a, 2, "reshare <id> <activity-id> [at <domain>]")?;
            let activity = p[1].parse().map_err(|e: crate::model::IdError| e.to_string())?;
            Command::Reshare { id: sid(&p[0])?, activity, at }
        }
        "import" => {
            want(&a, 3, "import <id> <object> cache|reference [at <domain>]")?;
            let mode = p[2].parse().map_err(|e: Error| e.to_string())?;
            Command::Import { id: sid(&p[0])?, object: oid(&p[1])?, mode, at }
        }
        "update" => {
            want(&a, 3, "update <id> <object> \"<payload>\"")?;
            Command::Update { id: sid(&p[0])?, object: oid(&p[1])?, payload: p[2].clone() }
        }
        "edit" => {
            want(&a, 3, "edit <id> <object> \"<payload>\" at <domain>")?;
            let at = at.ok_or("usage: edit <id> <object> \"<payload>\" at <domain>")?;
            Command::Edit { id: sid(&p[0])?, object: oid(&p[1])?, payload: p[2].clone(), at }
        }
        "delete" => {
            want(&a, 2, "delete <id> <object>")?;
            Command::Delete { id: sid(&p[0])?, object: oid(&p[1])? }
        }
        "set" => {
            // set <id> <attr> "<value>" [of <owner>] [at <domain>]
            let usage = "set <id> <attr> \"<value>\" [of <owner>] [at <domain>]";
            let (owner, pos) = match p.iter().position(|t| t == "of") {
                Some(i) if i + 1 < p.len() => (Some(sid(&p[i + 1])?), [&p[..i], &p[i + 2..]].concat()),
                _ => (None, p.clone()),
            };
            if pos.len() != 3 {
                return Err(format!("usage: {usage}"));
            }
            let id = sid(&pos[0])?;
            Command::Set { owner: owner.unwrap_or_else(|| id.clone()), id, attr: pos[1].clone(), value: pos[2].clone(), at }
        }
        "subscribe-profile" => {
            want(&a, 2, "subscribe-profile <site> <id>")?;
            Command::SubscribeProfile { site: dom(&p[0])?, id: sid(&p[1])? }
        }
        "subscribe" => {
            want(&a, 2, "subscribe <site> <id|object>")?;
            let subject = match sid(&p[1]) {
                Ok(id) => Ref::Actor(id),
                Err(_) => Ref::Object(oid(&p[1])?),
            };
            Command::Subscribe { site: dom(&p[0])?, subject }
        }
        "allow-wall" => {
            want(&a, 2, "allow-wall <owner> <author>")?;
            Command::AllowWall { owner: sid(&p[0])?, author: sid(&p[1])? }
        }
        "allow-edit" => {
            want(&a, 3, "allow-edit <owner> <object> <editor>")?;
            Command::AllowEdit { owner: sid(&p[0])?, object: oid(&p[1])?, editor: sid(&p[2])? }
        }
        "promote" => {
            want(&a, 1, "promote <id> at <domain> as <name>")?;
            let at = at.ok_or("usage: promote <id> at <domain> as <name>")?;
            Command::Promote { id: sid(&p[0])?, at, name: a.alias.clone().ok_or("promote needs `as <name>`")? }
        }
        "tick" => {
            want(&a, 1, "tick <n>")?;
            Command::Tick(p[0].parse().map_err(|_| format!("bad tick count `{}`", p[0]))?)
        }
        "quiesce" => {
            want(&a, 0, "quiesce")?;
            Command::Quiesce
        }
        other => return Err(format!("unknown command `{other}`")),
    })
}

fn parse_expect(rest: &[String]) -> Result<Command, String> {
    let usage = "usage: expect <query>(<args>) <relation> <value>";
    if rest.len() != 3 {
        return Err(usage.into());
    }
    let (name, args) = rest[0].split_once('(').ok_or(usage)?;
    let args = args.strip_suffix(')').ok_or(usage)?;
    let query = Query {
        name: name.to_string(),
        args: args.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect(),
    };
    let relation = Relation::parse(&rest[1]).ok_or_else(|| format!("unknown relation `{}`", rest[1]))?;
    Ok(Command::Expect { query, relation, value: Value::parse(&rest[2]) })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let err = |message: String| ParseError { line: number, message };
        let tokens = tokenize(raw).map_err(err)?;
        if tokens.is_empty() {
            continue;
        }
        let command = parse_command(&tokens).map_err(err)?;
        lines.push(Line { number, text: raw.trim().to_string(), command });
    }
    Ok(Scenario { lines })
}

/// Transport and retry settings for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub default_link: LinkParams,
    pub retries: u32,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        RunOptions { seed, default_link: LinkParams::default(), retries: super::sim::DEFAULT_RETRIES }
    }
}

#[derive(Debug)]
pub struct Outcome {
    /// One message per failed expectation or unexpected command error.
    pub failures: Vec<String>,
    pub expectations: usize,
    pub sim: Simulation,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn trace(&self) -> &Trace {
        self.sim.trace()
    }
}

struct Runner {
    sim: Simulation,
    sessions: BTreeMap<(Domain, SocialId), Session>,
}

fn parse_principal(s: &str) -> Result<Principal, Error> {
    if s.starts_with("site:") {
        s.parse()
    } else {
        Ok(Principal::Actor(SocialId::parse(s)?))
    }
}

impl Runner {
    fn session(&self, id: &SocialId, at: Option<&Domain>) -> Result<Session, Error> {
        let site = at.unwrap_or(id.authority());
        self.sessions.get(&(site.clone(), id.clone())).cloned().ok_or_else(|| Error::NoSession(id.to_string()))
    }

    fn exec(&mut self, cmd: &Command) -> Result<(), Error> {
        let sim = &mut self.sim;
        match cmd {
            Command::Site(d) => sim.add_site(d.clone()),
            Command::Link { from, to, params } => sim.set_link(from.clone(), to.clone(), *params)?,
            Command::Register { site, name } => {
                let rec = sim.register_native(site, name, name)?;
                let session = sim.login(site, &rec.id, name)?;
                self.sessions.insert((site.clone(), rec.id), session);
            }
            Command::Login { id, at } => {
                let home = self.session(id, None)?;
                let session = self.sim.login_remote(&home, at)?;
                self.sessions.insert((at.clone(), id.clone()), session);
            }
            Command::Grant { id, site, spec } => {
                let s = self.session(id, None)?;
                let grant = ScopeGrant::parse_spec(id.clone(), site.clone(), spec)?;
                self.sim.grant_scope(&s, grant)?;
            }
            Command::Follow { id, target, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.follow(&s, target)?;
            }
            Command::Unfollow { id, target, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.unfollow(&s, target)?;
            }
            Command::Post { id, object, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.create_object(&s, object.clone())?;
            }
            Command::Reply { id, target, text, local, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.reply(&s, target, text, local.as_deref())?;
            }
            Command::Rate { id, target, value, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.rate(&s, target, *value)?;
            }
            Command::Reshare { id, activity, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.reshare(&s, activity)?;
            }
            Command::Import { id, object, mode, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.import_alien(&s.site, &Principal::Actor(id.clone()), object, *mode)?;
            }
            Command::Update { id, object, payload } => {
                let s = self.session(id, Some(object.authority()))?;
                self.sim.update_object(&s, object, payload.as_bytes().to_vec())?;
            }
            Command::Edit { id, object, payload, at } => {
                let s = self.session(id, Some(at))?;
                self.sim.edit_foreign_object(&s, object, payload.as_bytes().to_vec())?;
            }
            Command::Delete { id, object } => {
                let s = self.session(id, Some(object.authority()))?;
                self.sim.delete_object(&s, object)?;
            }
            Command::Set { id, owner, attr, value, at } => {
                let s = self.session(id, at.as_ref())?;
                self.sim.update_profile_attribute(&s, owner, attr, value)?;
            }
            Command::SubscribeProfile { site, id } => {
                self.sim.subscribe_profile(site, id)?;
            }
            Command::Subscribe { site, subject } => {
                self.sim.subscribe_activities(site, subject, None)?;
            }
            Command::AllowWall { owner, author } => {
                let s = self.session(owner, None)?;
                self.sim.grant_wall(&s, author)?;
            }
            Command::AllowEdit { owner, object, editor } => {
                let s = self.session(owner, None)?;
                self.sim.grant_edit(&s, object, editor)?;
            }
            Command::Promote { id, at, name } => {
                let s = self.session(id, Some(at))?;
                let (rec, session) = self.sim.promote_to_native(&s, name, name)?;
                self.sessions.remove(&(at.clone(), id.clone()));
                self.sessions.insert((at.clone(), rec.id), session);
            }
            Command::Tick(n) => sim.advance(*n)?,
            Command::Quiesce => {
                sim.run_until_quiescent()?;
            }
            Command::Expect { .. } | Command::ExpectFail { .. } => unreachable!("handled by run"),
        }
        Ok(())
    }

    fn site_arg(&self, args: &[String], i: usize, default: &Domain) -> Result<Domain, Error> {
        match args.get(i) {
            Some(s) => Ok(Domain::parse(s)?),
            None => Ok(default.clone()),
        }
    }

    fn site(&self, d: &Domain) -> Result<&crate::site::Site, Error> {
        self.sim.site(d).ok_or_else(|| Error::UnknownSite(d.to_string()))
    }

    fn eval(&mut self, q: &Query) -> Result<Value, Error> {
        let a = &q.args;
        let arity = |n: std::ops::RangeInclusive<usize>| {
            if n.contains(&a.len()) {
                Ok(())
            } else {
                Err(Error::Invalid(format!("wrong number of arguments to {}", q.name)))
            }
        };
        let status = |r: Result<Value, Error>| match r {
            Ok(v) => v,
            Err(e) => Value::Str(e.code()),
        };
        match q.name.as_str() {
            "followers" | "following" => {
                arity(1..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = self.site_arg(a, 1, id.authority())?;
                let rec = self.site(&site)?.actor(&id).ok_or_else(|| Error::UnknownActor(id.to_string()))?;
                let set = if q.name == "followers" { &rec.contacts.followers } else { &rec.contacts.following };
                Ok(items(set.iter().map(short)))
            }
            "kind" => {
                arity(2..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[1])?;
                Ok(Value::Str(self.site(&site)?.actor(&id).map(|r| r.kind.to_string()).unwrap_or("absent".into())))
            }
            "attr" => {
                arity(3..=3)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[1])?;
                let v = self.site(&site)?.actor(&id).and_then(|r| r.profile.attributes.get(&a[2]).cloned());
                Ok(Value::Str(v.unwrap_or_else(|| "<none>".into())))
            }
            "revision" => {
                arity(1..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = self.site_arg(a, 1, id.authority())?;
                let rec = self.site(&site)?.actor(&id).ok_or_else(|| Error::UnknownActor(id.to_string()))?;
                Ok(Value::Int(rec.profile.revision as i64))
            }
            "profile" => {
                arity(2..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[1])?;
                Ok(status(
                    self.sim
                        .get_profile(&site, &id)
                        .map(|p| items(p.attributes.iter().map(|(k, v)| format!("{k}={v}")))),
                ))
            }
            "replies" | "rating_count" | "rating_sum" | "object_rev" | "payload" | "mode" | "deleted" => {
                arity(1..=2)?;
                let oid = ObjectId::parse(&a[0])?;
                let site = self.site_arg(a, 1, oid.authority())?;
                let obj = self.site(&site)?.object(&oid);
                Ok(match (q.name.as_str(), obj) {
                    ("mode", None) => Value::Str("absent".into()),
                    (_, None) => return Err(Error::UnknownObject(oid.to_string())),
                    ("replies", Some(o)) => items(o.reply_collection.iter().map(|c| c.to_string())),
                    ("rating_count", Some(o)) => Value::Int(o.rating_aggregate.count as i64),
                    ("rating_sum", Some(o)) => Value::Int(o.rating_aggregate.sum),
                    ("object_rev", Some(o)) => {
                        Value::Int(if o.is_native() { o.revision } else { o.cached_revision.unwrap_or(o.revision) } as i64)
                    }
                    ("payload", Some(o)) => Value::Str(
                        o.payload.as_ref().map(|p| String::from_utf8_lossy(p).into_owned()).unwrap_or("<none>".into()),
                    ),
                    ("mode", Some(o)) => Value::Str(o.mode.map(|m| m.to_string()).unwrap_or("native".into())),
                    ("deleted", Some(o)) => Value::Str((o.deleted || o.deleted_at_origin).to_string()),
                    _ => unreachable!(),
                })
            }
            "mentions" | "notifications" | "timeline" => {
                arity(1..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = self.site_arg(a, 1, id.authority())?;
                let s = self.site(&site)?;
                let ids: Vec<ActivityId> = match q.name.as_str() {
                    "mentions" => s.mention_inbox(&id).to_vec(),
                    "notifications" => s.notifications(&id).to_vec(),
                    _ => s.actor(&id).map(|r| r.timeline.clone()).unwrap_or_default(),
                };
                Ok(items(ids.iter().filter_map(|i| s.activity(i)).map(|act| match q.name.as_str() {
                    "mentions" => act.object.to_string(),
                    "notifications" => format!("{}:{}", act.verb, short(&act.actor)),
                    _ => format!("{}:{}", act.verb, act.object),
                })))
            }
            "feed" => {
                arity(2..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[1])?;
                Ok(status(
                    self.sim
                        .publish_feed(&site, &id)
                        .map(|f| items(f.entries.iter().map(|act| format!("{}:{}", act.verb, act.object)))),
                ))
            }
            "fetch" => {
                arity(3..=3)?;
                let principal = parse_principal(&a[0])?;
                let oid = ObjectId::parse(&a[1])?;
                let site = Domain::parse(&a[2])?;
                Ok(status(self.sim.fetch_representation(&site, &principal, &oid).map(|_| Value::Str("ok".into()))))
            }
            "authorize" => {
                arity(3..=3)?;
                let principal = parse_principal(&a[0])?;
                let oid = ObjectId::parse(&a[1])?;
                let site = Domain::parse(&a[2])?;
                let d = self.sim.with_site(&site, |s| s.check(&principal, &Resource::Object(oid), Action::Read))?;
                Ok(Value::Str(d.to_string()))
            }
            "contacts" => {
                arity(2..=2)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[1])?;
                Ok(status(self.sim.get_contacts(&site, &id).map(|c| items(c.following.iter().map(short)))))
            }
            "collection" => {
                arity(3..=3)?;
                let id = SocialId::parse(&a[0])?;
                let site = Domain::parse(&a[2])?;
                Ok(status(
                    self.sim.get_collection(&site, &id, &a[1]).map(|c| items(c.iter().map(|o| o.to_string()))),
                ))
            }
            other => Err(Error::Invalid(format!("unknown query `{other}`"))),
        }
    }
}

/// Runs a scenario to completion. Failed expectations do not stop the run.
pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> Result<Outcome, Error> {
    let topology = Topology::new(options.seed).with_default_link(options.default_link);
    let config = SimConfig { retries: options.retries, check_cache_bound: true, ..SimConfig::default() };
    let mut runner = Runner { sim: Simulation::new(topology, config)?, sessions: BTreeMap::new() };
    let mut failures = Vec::new();
    let mut expectations = 0;
    for line in &scenario.lines {
        let fail = |msg: String| format!("line {}: {msg}", line.number);
        match &line.command {
            Command::Expect { query, relation, value } => {
                expectations += 1;
                runner.sim.run_until_quiescent()?;
                match runner.eval(query) {
                    Ok(got) if got.holds(*relation, value) => {}
                    Ok(got) => failures.push(fail(format!("expected {query} {relation} {value}, got {got}"))),
                    Err(e) => failures.push(fail(format!("{query}: {e}"))),
                }
            }
            Command::ExpectFail { code, command } => {
                expectations += 1;
                match runner.exec(command) {
                    Ok(()) => failures.push(fail(format!("expected failure {code}, command succeeded"))),
                    Err(e) if &e.code() == code => {}
                    Err(e) => failures.push(fail(format!("expected failure {code}, got {}", e.code()))),
                }
            }
            cmd => {
                if let Err(e) = runner.exec(cmd) {
                    failures.push(fail(format!("`{}` failed: {} ({e})", line.text, e.code())));
                }
            }
        }
    }
    runner.sim.run_until_quiescent()?;
    failures.extend(runner.sim.violations().iter().cloned());
    Ok(Outcome { failures, expectations, sim: runner.sim })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> Outcome {
        run_scenario(&parse_scenario(text).unwrap(), RunOptions::new(1)).unwrap()
    }

    #[test]
    fn tokens_quotes_and_comments() {
        assert_eq!(tokenize(r#"set a b "x y" # note"#).unwrap(), ["set", "a", "b", "x y"]);
        assert_eq!(tokenize(r#"say "a \"q\" b""#).unwrap(), ["say", r#"a "q" b"#]);
        assert_eq!(tokenize(r##"post x "# not a comment""##).unwrap(), ["post", "x", "# not a comment"]);
        assert_eq!(tokenize(r#"x """#).unwrap(), ["x", ""]);
        assert!(tokenize(r#"x "open"#).is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_scenario("site a.example\n\n# c\nfrobnicate x\n").unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.message.contains("frobnicate"));
        assert_eq!(parse_scenario("site a.example\nregister a.example").unwrap_err().line, 2);
        assert_eq!(parse_scenario("expect followers(x) ~= 1").unwrap_err().line, 1);
        assert_eq!(parse_scenario("post alice@a.example p").unwrap_err().line, 1);
    }

    #[test]
    fn expectations_pass_and_fail() {
        let o = run("site a.example\nregister a.example alice\nregister a.example bob\n\
                     follow alice@a.example bob@a.example\n\
                     expect followers(bob@a.example) == {alice@a.example}\n\
                     expect followers(bob@a.example) size 1\n\
                     expect followers(alice@a.example) == {bob@a.example}\n");
        assert_eq!(o.expectations, 3);
        assert_eq!(o.failures.len(), 1);
        assert!(o.failures[0].starts_with("line 7:"), "{:?}", o.failures);
    }

    #[test]
    fn expect_fail_checks_the_code() {
        let o = run("site a.example\nregister a.example alice\n\
                     expect-fail self_follow follow alice@a.example alice@a.example\n\
                     expect-fail self_follow register a.example bob\n");
        assert_eq!(o.failures.len(), 1);
        assert!(o.failures[0].contains("line 4"));
    }

    #[test]
    fn runs_are_deterministic() {
        let text = "site a.example\nsite b.example\nlink a.example b.example loss=0.5 delay=3\n\
                    register a.example alice\nregister b.example bob\n\
                    follow alice@a.example bob@b.example\npost bob@b.example p audience=public\nquiesce\n";
        let scenario = parse_scenario(text).unwrap();
        let a = run_scenario(&scenario, RunOptions::new(5)).unwrap();
        let b = run_scenario(&scenario, RunOptions::new(5)).unwrap();
        assert_eq!(a.trace().to_bytes(), b.trace().to_bytes());
    }
}
