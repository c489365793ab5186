//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

use fedsim::harness::{audit, oracle, parse_scenario, run_scenario, run_swat0, Faults, LinkParams, RunOptions, Trace};
use fedsim::model::{Domain, MessageId, ObjectId, SocialId};
use fedsim::site::EventKind;
use fedsim::wire::{self, Envelope, EnvelopeHeader, Keyring};

const SWAT0_SEEDS: u64 = 20;
const SWAT0_BUDGET: Duration = Duration::from_secs(10);
const SWAT0_LOSS: f64 = 0.2;
const RETRIES: u32 = 16;
const ORACLE_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
const ORACLE_SITES: usize = 3;
const ORACLE_OPS: usize = 500;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const FAULT_SEEDS: [u64; 10] = [11, 12, 13, 14, 15, 16, 17, 18, 19, 20];
const FAULT_OPS: usize = 200;
const FAULT_LOSS: f64 = 0.3;
const FAULT_REORDER: f64 = 0.5;
const FAULT_DELAY_MAX: u64 = 4;
const ID_CASES: u32 = 10_000;
const DOC_CASES: u32 = 1_000;
const ENVELOPE_MAX: usize = 256;
const SCENARIO_SEED: u64 = 1;

const FIGURES: [&str; 5] = [
    "fig1_auth_profile.fed",
    "fig2_contacts_export.fed",
    "fig3_content_export.fed",
    "fig4_activity_generation.fed",
    "fig5_symmetric_federation.fed",
];
const CAROL: &str = "privacy_listed_audience.fed";

type Check = Result<String, String>;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "fed"))
        .collect();
    files.sort();
    files
}

fn lossless(seed: u64) -> RunOptions {
    RunOptions { seed, default_link: LinkParams::default(), retries: RETRIES }
}

fn lossy(seed: u64, loss: f64, reorder: f64, delay_max: u64) -> RunOptions {
    RunOptions { seed, default_link: LinkParams::new(delay_max, loss, reorder).expect("valid link"), retries: RETRIES }
}

fn run_file(name: &str, options: RunOptions) -> Result<fedsim::harness::scenario::Outcome, String> {
    let path = scenario_dir().join(name);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = parse_scenario(&text).map_err(|e| format!("{name}: {e}"))?;
    run_scenario(&parsed, options).map_err(|e| format!("{name}: {e}"))
}

fn name_of(p: &std::path::Path) -> String {
    p.file_name().expect("file").to_string_lossy().into_owned()
}

fn swat0() -> Check {
    let start = Instant::now();
    let mut problems = Vec::new();
    for seed in 1..=SWAT0_SEEDS {
        for (label, options) in [("lossless", lossless(seed)), ("lossy", lossy(seed, SWAT0_LOSS, 0.0, 1))] {
            match run_swat0(options, &[]) {
                Ok(o) if o.passed() => {}
                Ok(o) => problems.push(format!("seed {seed} {label}: {}", o.failures.join("; "))),
                Err(e) => problems.push(format!("seed {seed} {label}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > SWAT0_BUDGET {
        problems.push(format!("took {elapsed:?}, budget {SWAT0_BUDGET:?}"));
    }
    // A dead A->C link must make SWAT0 fail and say why.
    let dead = LinkParams::new(1, 1.0, 0.0).expect("valid link");
    match run_swat0(lossless(1), &[("a.example", "c.example", dead)]) {
        Ok(o) if o.failures.iter().any(|f| f.contains("missing reply propagation")) => {}
        Ok(o) => problems.push(format!("dead a->c link not detected: {:?}", o.failures)),
        Err(e) => problems.push(format!("dead a->c link: {e}")),
    }
    if problems.is_empty() {
        Ok(format!("{} runs in {elapsed:.2?}", 2 * SWAT0_SEEDS))
    } else {
        Err(problems.join(" | "))
    }
}

fn figures() -> Check {
    let mut problems = Vec::new();
    let mut expectations = 0;
    for name in FIGURES {
        match run_file(name, lossless(SCENARIO_SEED)) {
            Ok(o) if o.passed() && o.expectations > 0 => expectations += o.expectations,
            Ok(o) if o.passed() => problems.push(format!("{name}: no expectations")),
            Ok(o) => problems.push(format!("{name}: {}", o.failures.join("; "))),
            Err(e) => problems.push(e),
        }
    }
    if problems.is_empty() {
        Ok(format!("{} scripts, {expectations} expectations", FIGURES.len()))
    } else {
        Err(problems.join(" | "))
    }
}

fn oracle_equivalence(traces: &mut Vec<(String, Trace)>) -> Check {
    let mut problems = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in ORACLE_SEEDS {
        let start = Instant::now();
        match oracle::oracle_check(ORACLE_SITES, ORACLE_OPS, seed, Faults::default()) {
            Ok(r) => {
                if !r.passed() {
                    problems.push(format!("seed {seed}: {}", r.diff.join("; ")));
                }
                traces.push((format!("oracle seed {seed}"), r.run.sim.trace().clone()));
            }
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        if elapsed > ORACLE_BUDGET {
            problems.push(format!("seed {seed} took {elapsed:?}"));
        }
    }
    if problems.is_empty() {
        Ok(format!("{} seeds, slowest {slowest:.2?}", ORACLE_SEEDS.len()))
    } else {
        Err(problems.join(" | "))
    }
}

fn denied_at(trace: &Trace, site: &str, principal: &str, reason: &str) -> bool {
    trace.events().iter().any(|e| {
        e.kind == EventKind::Decision
            && e.site.as_str() == site
            && e.detail.get("principal").and_then(Value::as_str) == Some(principal)
            && e.detail.get("result").and_then(Value::as_str) == Some(reason)
    })
}

fn privacy(traces: &mut Vec<(String, Trace)>) -> Check {
    let mut problems = Vec::new();
    for path in bundled() {
        let name = name_of(&path);
        for (label, options) in [("lossless", lossless(SCENARIO_SEED)), ("lossy", lossy(SCENARIO_SEED, 0.2, 0.3, 3))] {
            match run_file(&name, options) {
                Ok(o) => traces.push((format!("{name} {label}"), o.sim.trace().clone())),
                Err(e) => problems.push(e),
            }
        }
    }
    for seed in [1, 2, 3] {
        if let Ok(o) = run_swat0(lossy(seed, SWAT0_LOSS, 0.0, 1), &[]) {
            traces.push((format!("swat0 seed {seed}"), o.sim.trace().clone()));
        }
    }
    for (label, trace) in traces.iter() {
        for v in audit::privacy_audit(trace) {
            problems.push(format!("{label}: {v}"));
        }
    }
    match run_file(CAROL, lossless(SCENARIO_SEED)) {
        Ok(o) => {
            if !o.passed() {
                problems.push(format!("{CAROL}: {}", o.failures.join("; ")));
            }
            for site in ["a.example", "b.example"] {
                if !denied_at(o.sim.trace(), site, "acct:carol@c.example", "deny:not_in_audience") {
                    problems.push(format!("no not_in_audience deny for carol at {site}"));
                }
            }
        }
        Err(e) => problems.push(e),
    }
    if problems.is_empty() {
        Ok(format!("{} traces audited", traces.len()))
    } else {
        Err(problems.join(" | "))
    }
}

fn faults() -> Check {
    let mut problems = Vec::new();
    let (mut losses, mut resends) = (0, 0);
    for seed in FAULT_SEEDS {
        let options = lossy(seed, FAULT_LOSS, FAULT_REORDER, FAULT_DELAY_MAX);
        match oracle::fault_check(ORACLE_SITES, FAULT_OPS, options) {
            Ok(r) if r.passed() => {
                losses += r.losses;
                resends += r.resends;
            }
            Ok(r) => problems.push(format!("seed {seed}: {}", r.problems().join("; "))),
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(format!("{} seeds, {losses} losses, {resends} resends", FAULT_SEEDS.len()))
    } else {
        Err(problems.join(" | "))
    }
}

fn determinism() -> Check {
    let mut problems = Vec::new();
    let files = bundled();
    for path in &files {
        let name = name_of(path);
        for options in [lossless(SCENARIO_SEED), lossy(SCENARIO_SEED, 0.2, 0.5, 4)] {
            let a = run_file(&name, options).map(|o| o.sim.trace().to_bytes());
            let b = run_file(&name, options).map(|o| o.sim.trace().to_bytes());
            match (a, b) {
                (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
                (Ok(_), Ok(_)) => problems.push(format!("{name}: traces differ")),
                (Err(e), _) | (_, Err(e)) => problems.push(e),
            }
        }
    }
    if problems.is_empty() {
        Ok(format!("{} scenarios, two link settings", files.len()))
    } else {
        Err(problems.join(" | "))
    }
}

fn label() -> impl Strategy<Value = String> {
    "[a-z0-9]([a-z0-9-]{0,8}[a-z0-9])?"
}

fn domain() -> impl Strategy<Value = Domain> {
    prop::collection::vec(label(), 1..4).prop_map(|l| Domain::parse(&l.join(".")).expect("generated domain"))
}

fn json_doc() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Value::from),
        any::<String>().prop_map(Value::from),
    ];
    leaf.prop_recursive(4, 64, 8, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..8).prop_map(Value::Array),
            prop::collection::btree_map(any::<String>(), inner, 0..8)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn round_trips() -> Check {
    let mut problems = Vec::new();

    let ids = (domain(), "[a-z0-9._-]{1,12}", any::<bool>(), "[A-Za-z0-9._~-]{1,12}");
    let mut runner = TestRunner::new(Config { cases: ID_CASES, failure_persistence: None, ..Config::default() });
    let result = runner.run(&ids, |(d, local, uri, object_local)| {
        let text = if uri { format!("https://{d}/{local}") } else { format!("acct:{local}@{d}") };
        let id = SocialId::parse(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(id.to_string(), text.clone());
        prop_assert_eq!(SocialId::parse(&id.to_string()).unwrap(), id.clone());
        let back: SocialId = wire::decode_value(&wire::encode_value(&id)).unwrap();
        prop_assert_eq!(back.to_string(), text);
        let oid = ObjectId::new(d.clone(), &object_local).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(ObjectId::parse(&oid.to_string()).unwrap(), oid.clone());
        let back: ObjectId = wire::decode_value(&wire::encode_value(&oid)).unwrap();
        prop_assert_eq!(back, oid);
        Ok(())
    });
    if let Err(e) = result {
        problems.push(format!("ids: {e}"));
    }

    let mut runner = TestRunner::new(Config { cases: DOC_CASES, failure_persistence: None, ..Config::default() });
    let result = runner.run(&json_doc(), |doc| {
        let bytes = wire::encode(&doc);
        let back = wire::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(wire::encode(&back), bytes);
        Ok(())
    });
    if let Err(e) = result {
        problems.push(format!("documents: {e}"));
    }

    let flips = exhaustive_flips();
    match &flips {
        Ok(_) => {}
        Err(e) => problems.push(format!("envelope: {e}")),
    }
    if problems.is_empty() {
        Ok(format!("{ID_CASES} ids, {DOC_CASES} documents, {}", flips.unwrap_or_default()))
    } else {
        Err(problems.join(" | "))
    }
}

/// Flips every byte of a framed envelope to every other value and checks
/// that each variant fails verification.
fn exhaustive_flips() -> Result<String, String> {
    let (a, b) = (Domain::parse("a.example").unwrap(), Domain::parse("b.example").unwrap());
    let keys = Keyring::new(42);
    let header = EnvelopeHeader {
        from: a.clone(),
        to: b.clone(),
        endpoint: "/inbox".into(),
        message_id: MessageId::new(a.clone(), 1),
        sent_tick: 5,
        status: None,
        in_reply_to: None,
    };
    let body = wire::encode(&json!({"activity": {"verb": "post", "object": "a.example/p1"}}));
    let frame = Envelope::seal(&keys.pair(&a, &b), header, body).to_bytes();
    if frame.len() > ENVELOPE_MAX {
        return Err(format!("envelope is {} bytes, over {ENVELOPE_MAX}", frame.len()));
    }
    if !wire::verify_frame(&keys, &frame) {
        return Err("pristine envelope rejected".into());
    }
    let mut variants = 0;
    for i in 0..frame.len() {
        for mask in 1..=255u8 {
            let mut bad = frame.clone();
            bad[i] ^= mask;
            if wire::verify_frame(&keys, &bad) {
                return Err(format!("byte {i} xor {mask:#04x} accepted"));
            }
            variants += 1;
        }
    }
    Ok(format!("{variants} flips of a {}-byte envelope", frame.len()))
}

fn main() -> ExitCode {
    let mut traces = Vec::new();
    let results: Vec<(&str, Check)> = vec![
        ("1 swat0", swat0()),
        ("2 paradigm scenarios", figures()),
        ("3 oracle equivalence", oracle_equivalence(&mut traces)),
        ("4 privacy audit", privacy(&mut traces)),
        ("5 convergence under faults", faults()),
        ("6 determinism", determinism()),
        ("7 unit properties", round_trips()),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
