//! Synthetic smart-home evidence source.
//!
//! A seeded discrete-event simulation of an IoT botnet inside one home
//! network: propagation from a patient-zero device to neighbours with
//! default credentials or vulnerable firmware, rallying (periodic C&C
//! beacons on ports 80/443 to generated domains), then MITM, DDoS or spam.
//! A gateway rule set ([`Detector`]) classifies aggregated traffic events
//! and a device-agent rule set ([`detect_local`]) contributes device-image
//! stubs for agents installed on infected devices. Every detection yields an
//! [`IncidentDescriptor`] and an evidence payload of length-prefixed flow
//! records.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::hash::sha256;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("scenario spec: {0}")]
    Invalid(String),
    #[error("scenario spec parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario spec i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    Mitm,
    Ddos,
    Spam,
    Propagation,
    Rallying,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mitm => "MITM",
            Self::Ddos => "DDOS",
            Self::Spam => "SPAM",
            Self::Propagation => "PROPAGATION",
            Self::Rallying => "RALLYING",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentDescriptor {
    pub attack_kind: AttackKind,
    pub source_device: String,
    pub target: String,
    pub tm: u64,
    /// Type of the attacked IoT device.
    pub device_type: String,
    pub summary: String,
}

impl IncidentDescriptor {
    /// Incident description as recorded on-chain.
    pub fn description(&self) -> String {
        format!(
            "{} {} -> {}: {}",
            self.attack_kind, self.source_device, self.target, self.summary
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Service {
    Telnet,
    Ftp,
    Ssh,
}

impl Service {
    pub fn port(&self) -> u16 {
        match self {
            Self::Telnet => 23,
            Self::Ftp => 21,
            Self::Ssh => 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub device_type: String,
    #[serde(default)]
    pub services: BTreeSet<Service>,
    #[serde(default)]
    pub default_credentials: bool,
    #[serde(default)]
    pub vulnerable_firmware: bool,
    /// On-device agent installed.
    #[serde(default)]
    pub sda: bool,
}

impl DeviceSpec {
    /// Reachable by credential stuffing or a firmware exploit.
    pub fn is_vulnerable(&self) -> bool {
        (self.default_credentials && !self.services.is_empty()) || self.vulnerable_firmware
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimDevice {
    pub spec: DeviceSpec,
    pub infected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub syn_rate_per_sec: u32,
    pub login_attempts: u32,
    pub beacon_min_count: u32,
    pub beacon_max_jitter_secs: u32,
    pub smtp_per_min: u32,
    pub arp_replies: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            syn_rate_per_sec: 50,
            login_attempts: 20,
            beacon_min_count: 4,
            beacon_max_jitter_secs: 5,
            smtp_per_min: 30,
            arp_replies: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub scan_interval_secs: u64,
    pub beacon_interval_secs: u64,
    pub attack_delay_secs: u64,
    pub baseline_interval_secs: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            scan_interval_secs: 30,
            beacon_interval_secs: 60,
            attack_delay_secs: 600,
            baseline_interval_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_start")]
    pub start_time: u64,
    #[serde(default = "default_duration")]
    pub duration_secs: u64,
    pub patient_zero: String,
    pub devices: Vec<DeviceSpec>,
    /// Adjacency. Empty means a flat LAN where every device sees every other.
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub timing: Timing,
}

fn default_start() -> u64 {
    1_700_000_000
}

fn default_duration() -> u64 {
    3_600
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        let mut ids = BTreeSet::new();
        for d in &self.devices {
            if d.id.is_empty() {
                return bad("device with empty id".into());
            }
            if !ids.insert(d.id.as_str()) {
                return bad(format!("duplicate device `{}`", d.id));
            }
        }
        if !ids.contains(self.patient_zero.as_str()) {
            return bad(format!("patient zero `{}` is not a device", self.patient_zero));
        }
        for l in &self.links {
            if !ids.contains(l.a.as_str()) || !ids.contains(l.b.as_str()) {
                return bad(format!("link {} - {} names an unknown device", l.a, l.b));
            }
        }
        if self.duration_secs == 0 {
            return bad("duration_secs must be positive".into());
        }
        let t = &self.timing;
        if t.scan_interval_secs == 0 || t.beacon_interval_secs == 0 || t.baseline_interval_secs == 0 {
            return bad("timing intervals must be positive".into());
        }
        Ok(())
    }

    fn neighbours(&self) -> BTreeMap<usize, Vec<usize>> {
        let index: BTreeMap<&str, usize> =
            self.devices.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let n = self.devices.len();
        let mut adj: BTreeMap<usize, BTreeSet<usize>> = (0..n).map(|i| (i, BTreeSet::new())).collect();
        if self.links.is_empty() {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        adj.get_mut(&i).unwrap().insert(j);
                    }
                }
            }
        } else {
            for l in &self.links {
                let (a, b) = (index[l.a.as_str()], index[l.b.as_str()]);
                if a != b {
                    adj.get_mut(&a).unwrap().insert(b);
                    adj.get_mut(&b).unwrap().insert(a);
                }
            }
        }
        adj.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }
}

/// Aggregated traffic observations seen by the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrafficEvent {
    Web { src: String, domain: String, port: u16, t: u64 },
    PortScan { src: String, dst: String, ports: Vec<u16>, t: u64 },
    LoginBurst { src: String, dst: String, service: Service, attempts: u32, success: bool, t: u64 },
    Exploit { src: String, dst: String, port: u16, t: u64 },
    Beacon { src: String, domain: String, port: u16, interval_secs: u64, jitter_secs: u64, observations: u32, t: u64 },
    SynFlood { src: String, dst: String, syn_per_sec: u32, t: u64 },
    SmtpBurst { src: String, messages_per_min: u32, t: u64 },
    ArpSpoof { src: String, impersonated: String, replies: u32, t: u64 },
}

/// Events observed by an on-device agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LocalEvent {
    UnexpectedBinary { device: String, binary_hash: String, dropped_by: String, t: u64 },
    ConfigChange { device: String, t: u64 },
}

const KNOWN_GOOD_SUFFIXES: [&str; 4] = [".example.com", ".example.org", ".example.net", ".iana.org"];

fn known_good(domain: &str) -> bool {
    KNOWN_GOOD_SUFFIXES.iter().any(|s| domain.ends_with(s))
}

/// Gateway rule set.
#[derive(Debug, Clone)]
pub struct Detector {
    pub thresholds: Thresholds,
    device_types: BTreeMap<String, String>,
}

impl Detector {
    pub fn new(thresholds: Thresholds, devices: &[DeviceSpec]) -> Self {
        Self {
            thresholds,
            device_types: devices.iter().map(|d| (d.id.clone(), d.device_type.clone())).collect(),
        }
    }

    fn device_type(&self, id: &str) -> String {
        self.device_types.get(id).cloned().unwrap_or_else(|| "unknown".into())
    }

    fn incident(&self, kind: AttackKind, src: &str, target: &str, attacked: &str, t: u64, summary: String) -> IncidentDescriptor {
        IncidentDescriptor {
            attack_kind: kind,
            source_device: src.to_owned(),
            target: target.to_owned(),
            tm: t,
            device_type: self.device_type(attacked),
            summary,
        }
    }

    pub fn detect(&self, event: &TrafficEvent) -> Option<IncidentDescriptor> {
        let th = &self.thresholds;
        match event {
            TrafficEvent::Web { .. } | TrafficEvent::PortScan { .. } => None,
            TrafficEvent::LoginBurst { src, dst, service, attempts, t, .. } => (*attempts >= th.login_attempts).then(|| {
                self.incident(AttackKind::Propagation, src, dst, dst, *t,
                    format!("{attempts} {service:?} login attempts"))
            }),
            TrafficEvent::Exploit { src, dst, port, t } => Some(self.incident(
                AttackKind::Propagation, src, dst, dst, *t, format!("firmware exploit on port {port}"))),
            TrafficEvent::Beacon { src, domain, port, interval_secs, jitter_secs, observations, t } => {
                let periodic = *observations >= th.beacon_min_count && *jitter_secs <= th.beacon_max_jitter_secs as u64;
                (periodic && matches!(port, 80 | 443) && !known_good(domain)).then(|| {
                    self.incident(AttackKind::Rallying, src, domain, src, *t,
                        format!("{observations} beacons every {interval_secs}s on port {port}"))
                })
            }
            TrafficEvent::SynFlood { src, dst, syn_per_sec, t } => (*syn_per_sec >= th.syn_rate_per_sec).then(|| {
                self.incident(AttackKind::Ddos, src, dst, src, *t, format!("{syn_per_sec} SYN/s"))
            }),
            TrafficEvent::SmtpBurst { src, messages_per_min, t } => (*messages_per_min >= th.smtp_per_min).then(|| {
                self.incident(AttackKind::Spam, src, "smtp", src, *t, format!("{messages_per_min} SMTP messages/min"))
            }),
            TrafficEvent::ArpSpoof { src, impersonated, replies, t } => (*replies >= th.arp_replies).then(|| {
                self.incident(AttackKind::Mitm, src, impersonated, src, *t, format!("{replies} gratuitous ARP replies"))
            }),
        }
    }
}

/// Device-agent rule set: an unexpected binary on the device is a
/// propagation from `dropped_by`.
pub fn detect_local(event: &LocalEvent, device_type: &str) -> Option<IncidentDescriptor> {
    match event {
        LocalEvent::UnexpectedBinary { device, binary_hash, dropped_by, t } => Some(IncidentDescriptor {
            attack_kind: AttackKind::Propagation,
            source_device: dropped_by.clone(),
            target: device.clone(),
            tm: *t,
            device_type: device_type.to_owned(),
            summary: format!("unexpected binary {binary_hash}"),
        }),
        LocalEvent::ConfigChange { .. } => None,
    }
}

/// One synthetic flow record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src: String,
    pub dst: String,
    pub port: u16,
    pub proto: String,
    pub bytes: u64,
    pub t: u64,
}

impl Canonical for FlowRecord {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.str(&self.src)
            .str(&self.dst)
            .u32(self.port as u32)
            .str(&self.proto)
            .u64(self.bytes)
            .u64(self.t);
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            src: dec.string()?,
            dst: dec.string()?,
            port: u16::try_from(dec.u32()?).map_err(|_| dec.invalid("port"))?,
            proto: dec.string()?,
            bytes: dec.u64()?,
            t: dec.u64()?,
        })
    }
}

const PAYLOAD_MAGIC: &[u8; 8] = b"CTBFLOW1";

/// Evidence payload: magic, a list of length-prefixed flow records, and an
/// optional device-image stub from an on-device agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidencePayload {
    pub flows: Vec<FlowRecord>,
    pub device_image: Option<Vec<u8>>,
}

impl EvidencePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(PAYLOAD_MAGIC).u32(self.flows.len() as u32);
        for f in &self.flows {
            enc.bytes(&f.to_canonical_bytes());
        }
        enc.option(&self.device_image);
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        if &dec.fixed::<8>()? != PAYLOAD_MAGIC {
            return Err(dec.invalid("payload magic"));
        }
        let n = dec.u32()? as usize;
        let mut flows = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            flows.push(FlowRecord::from_canonical_bytes(&dec.bytes()?)?);
        }
        let device_image = dec.option()?;
        dec.finish()?;
        Ok(Self { flows, device_image })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedIncident {
    pub descriptor: IncidentDescriptor,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infection {
    pub device: String,
    pub at: u64,
    pub by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub seed: u64,
    pub incidents: Vec<EmittedIncident>,
    pub infections: Vec<Infection>,
    pub traffic_events: usize,
    pub devices: Vec<SimDevice>,
}

impl ScenarioOutcome {
    pub fn count(&self, kind: AttackKind) -> usize {
        self.incidents.iter().filter(|i| i.descriptor.attack_kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SimEvent {
    Baseline(usize),
    Scan(usize),
    Beacon(usize),
    Attack(usize),
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    seed: u64,
    rng: ChaCha20Rng,
    devices: Vec<SimDevice>,
    adj: BTreeMap<usize, Vec<usize>>,
    detector: Detector,
    queue: BinaryHeap<Reverse<(u64, u64, SimEvent)>>,
    seq: u64,
    beacons: BTreeMap<usize, u32>,
    reported: BTreeSet<(usize, AttackKind)>,
    outcome_incidents: Vec<EmittedIncident>,
    infections: Vec<Infection>,
    traffic: usize,
}

/// Generated C&C domain for a bot on a given day.
pub fn dga_domain(seed: u64, device: &str, day: u64) -> String {
    let mut material = Vec::new();
    material.extend_from_slice(&seed.to_be_bytes());
    material.extend_from_slice(device.as_bytes());
    material.extend_from_slice(&day.to_be_bytes());
    let digest = sha256(&material);
    let label: String = digest.as_bytes()[..12]
        .iter()
        .map(|b| (b'a' + b % 26) as char)
        .collect();
    format!("{label}.net")
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at: u64, ev: SimEvent) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq, ev)));
    }

    fn end(&self) -> u64 {
        self.spec.start_time + self.spec.duration_secs
    }

    fn id(&self, i: usize) -> String {
        self.devices[i].spec.id.clone()
    }

    fn emit(&mut self, device: usize, descriptor: IncidentDescriptor, payload: EvidencePayload) {
        debug_assert!(self.devices[device].infected);
        self.outcome_incidents.push(EmittedIncident {
            descriptor,
            payload: payload.encode(),
        });
    }

    fn flows(&mut self, src: &str, dst: &str, port: u16, proto: &str, n: usize, t: u64) -> Vec<FlowRecord> {
        (0..n)
            .map(|k| FlowRecord {
                src: src.to_owned(),
                dst: dst.to_owned(),
                port,
                proto: proto.to_owned(),
                bytes: self.rng.gen_range(40..1500),
                t: t + k as u64,
            })
            .collect()
    }

    fn observe(&mut self, bot: usize, kind: AttackKind, event: TrafficEvent, flows: Vec<FlowRecord>) {
        self.traffic += 1;
        if self.reported.contains(&(bot, kind)) {
            return;
        }
        if let Some(descriptor) = self.detector.detect(&event) {
            self.reported.insert((bot, kind));
            self.emit(bot, descriptor, EvidencePayload { flows, device_image: None });
        }
    }

    fn infect(&mut self, bot: usize, target: usize, t: u64) {
        let (src, dst) = (self.id(bot), self.id(target));
        let spec = self.devices[target].spec.clone();
        let (event, flows) = if spec.default_credentials && !spec.services.is_empty() {
            let service = *spec.services.iter().next().expect("non-empty");
            let attempts = self.rng.gen_range(self.spec.thresholds.login_attempts.max(1)..=self.spec.thresholds.login_attempts.max(1) * 3);
            let flows = self.flows(&src, &dst, service.port(), "TCP", attempts.min(16) as usize, t);
            (TrafficEvent::LoginBurst { src: src.clone(), dst: dst.clone(), service, attempts, success: true, t }, flows)
        } else {
            let flows = self.flows(&src, &dst, 80, "TCP", 3, t);
            (TrafficEvent::Exploit { src: src.clone(), dst: dst.clone(), port: 80, t }, flows)
        };
        self.traffic += 1;
        self.devices[target].infected = true;
        self.infections.push(Infection { device: dst.clone(), at: t, by: Some(src.clone()) });

        let mut detection = self.detector.detect(&event);
        let mut image = None;
        if spec.sda {
            let mut stub = vec![0u8; 256];
            self.rng.fill_bytes(&mut stub);
            let local = LocalEvent::UnexpectedBinary {
                device: dst.clone(),
                binary_hash: sha256(&stub).to_hex(),
                dropped_by: src.clone(),
                t,
            };
            if let Some(d) = detect_local(&local, &spec.device_type) {
                detection.get_or_insert(d);
                image = Some(stub);
            }
        }
        if let Some(descriptor) = detection {
            self.emit(bot, descriptor, EvidencePayload { flows, device_image: image });
        }
        self.start_bot(target, t);
    }

    fn start_bot(&mut self, bot: usize, t: u64) {
        let timing = self.spec.timing;
        let scan_at = t + self.rng.gen_range(1..=timing.scan_interval_secs);
        self.schedule(scan_at, SimEvent::Scan(bot));
        self.schedule(t + timing.beacon_interval_secs, SimEvent::Beacon(bot));
        self.schedule(t + timing.attack_delay_secs, SimEvent::Attack(bot));
    }

    fn step(&mut self, t: u64, ev: SimEvent) {
        let timing = self.spec.timing;
        match ev {
            SimEvent::Baseline(d) => {
                let domain = format!("cdn{}.example.com", self.rng.gen_range(0..8));
                let event = TrafficEvent::Web { src: self.id(d), domain, port: 443, t };
                self.traffic += 1;
                debug_assert!(self.detector.detect(&event).is_none());
                let jitter = self.rng.gen_range(0..=timing.baseline_interval_secs);
                self.schedule(t + timing.baseline_interval_secs / 2 + jitter, SimEvent::Baseline(d));
            }
            SimEvent::Scan(bot) => {
                let mut candidates: Vec<usize> = self.adj[&bot]
                    .iter()
                    .copied()
                    .filter(|&n| !self.devices[n].infected && self.devices[n].spec.is_vulnerable())
                    .collect();
                let src = self.id(bot);
                for &n in &self.adj[&bot].clone() {
                    let ports: Vec<u16> = self.devices[n].spec.services.iter().map(Service::port).collect();
                    self.traffic += 1;
                    let _ = TrafficEvent::PortScan { src: src.clone(), dst: self.id(n), ports, t };
                }
                if !candidates.is_empty() {
                    candidates.shuffle(&mut self.rng);
                    self.infect(bot, candidates[0], t);
                    self.schedule(t + timing.scan_interval_secs, SimEvent::Scan(bot));
                } else if self.adj[&bot].iter().any(|&n| !self.devices[n].infected && self.devices[n].spec.is_vulnerable()) {
                    self.schedule(t + timing.scan_interval_secs, SimEvent::Scan(bot));
                }
            }
            SimEvent::Beacon(bot) => {
                let count = {
                    let c = self.beacons.entry(bot).or_default();
                    *c += 1;
                    *c
                };
                let src = self.id(bot);
                let domain = dga_domain(self.seed, &src, t / 86_400);
                let port = if self.rng.gen_bool(0.5) { 443 } else { 80 };
                let jitter = self.rng.gen_range(0..=2);
                let flows = self.flows(&src, &domain, port, "TCP", count.min(8) as usize, t);
                let event = TrafficEvent::Beacon {
                    src,
                    domain,
                    port,
                    interval_secs: timing.beacon_interval_secs,
                    jitter_secs: jitter,
                    observations: count,
                    t,
                };
                self.observe(bot, AttackKind::Rallying, event, flows);
                self.schedule(t + timing.beacon_interval_secs + jitter, SimEvent::Beacon(bot));
            }
            SimEvent::Attack(bot) => {
                let src = self.id(bot);
                let kind = *[AttackKind::Ddos, AttackKind::Spam, AttackKind::Mitm]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                let (event, flows) = match kind {
                    AttackKind::Ddos => {
                        let dst = format!("198.51.100.{}", self.rng.gen_range(1..255));
                        let rate = self.rng.gen_range(self.spec.thresholds.syn_rate_per_sec.max(1) * 2..=self.spec.thresholds.syn_rate_per_sec.max(1) * 4);
                        let flows = self.flows(&src, &dst, 80, "TCP", 10, t);
                        (TrafficEvent::SynFlood { src: src.clone(), dst, syn_per_sec: rate, t }, flows)
                    }
                    AttackKind::Spam => {
                        let rate = self.rng.gen_range(self.spec.thresholds.smtp_per_min.max(1) * 2..=self.spec.thresholds.smtp_per_min.max(1) * 4);
                        let flows = self.flows(&src, "mx.203.0.113.25", 25, "TCP", 10, t);
                        (TrafficEvent::SmtpBurst { src: src.clone(), messages_per_min: rate, t }, flows)
                    }
                    _ => {
                        let replies = self.spec.thresholds.arp_replies.max(1) * 2;
                        let flows = self.flows(&src, "gateway", 0, "ARP", 6, t);
                        (TrafficEvent::ArpSpoof { src: src.clone(), impersonated: "gateway".into(), replies, t }, flows)
                    }
                };
                self.observe(bot, kind, event, flows);
            }
        }
    }
}

/// Runs the scenario. Equal `(spec, seed)` give identical outcomes.
pub fn run_scenario(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioOutcome, SpecError> {
    spec.validate()?;
    let mut sim = Sim {
        spec,
        seed,
        rng: ChaCha20Rng::seed_from_u64(seed),
        devices: spec
            .devices
            .iter()
            .map(|d| SimDevice { spec: d.clone(), infected: false })
            .collect(),
        adj: spec.neighbours(),
        detector: Detector::new(spec.thresholds, &spec.devices),
        queue: BinaryHeap::new(),
        seq: 0,
        beacons: BTreeMap::new(),
        reported: BTreeSet::new(),
        outcome_incidents: Vec::new(),
        infections: Vec::new(),
        traffic: 0,
    };
    let t0 = spec.start_time;
    for i in 0..sim.devices.len() {
        let offset = sim.rng.gen_range(0..spec.timing.baseline_interval_secs);
        sim.schedule(t0 + offset, SimEvent::Baseline(i));
    }
    let pz = spec
        .devices
        .iter()
        .position(|d| d.id == spec.patient_zero)
        .expect("validated");
    // the initial compromise needs the same weakness as any later one
    if sim.devices[pz].spec.is_vulnerable() {
        sim.devices[pz].infected = true;
        sim.infections.push(Infection { device: spec.patient_zero.clone(), at: t0, by: None });
        sim.start_bot(pz, t0);
    }
    while let Some(Reverse((t, _, ev))) = sim.queue.pop() {
        if t > sim.end() {
            break;
        }
        sim.step(t, ev);
    }
    Ok(ScenarioOutcome {
        seed,
        incidents: sim.outcome_incidents,
        infections: sim.infections,
        traffic_events: sim.traffic,
        devices: sim.devices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(id: &str, vulnerable: bool) -> DeviceSpec {
        DeviceSpec {
            id: id.into(),
            device_type: "camera".into(),
            services: if vulnerable { [Service::Telnet].into() } else { BTreeSet::new() },
            default_credentials: vulnerable,
            vulnerable_firmware: false,
            sda: false,
        }
    }

    fn spec(devices: Vec<DeviceSpec>, links: Vec<Link>) -> ScenarioSpec {
        ScenarioSpec {
            seed: None,
            start_time: 1_700_000_000,
            duration_secs: 3_600,
            patient_zero: devices[0].id.clone(),
            devices,
            links,
            thresholds: Thresholds::default(),
            timing: Timing::default(),
        }
    }

    fn link(a: &str, b: &str) -> Link {
        Link { a: a.into(), b: b.into() }
    }

    #[test]
    fn one_vulnerable_neighbour_gives_one_propagation() {
        let s = spec(
            vec![device("pz", true), device("v", true), device("c1", false), device("c2", false)],
            vec![link("pz", "v"), link("pz", "c1"), link("v", "c2")],
        );
        let out = run_scenario(&s, 7).unwrap();
        assert_eq!(out.count(AttackKind::Propagation), 1);
    }

    #[test]
    fn no_vulnerable_devices_no_incidents() {
        let s = spec(vec![device("a", false), device("b", false), device("c", false)], vec![]);
        let out = run_scenario(&s, 7).unwrap();
        assert!(out.incidents.is_empty());
        assert!(out.traffic_events > 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec((0..8).map(|i| device(&format!("d{i}"), i % 2 == 0)).collect(), vec![]);
        let a = run_scenario(&s, 42).unwrap();
        let b = run_scenario(&s, 42).unwrap();
        assert_eq!(a, b);
        let c = run_scenario(&s, 43).unwrap();
        assert_ne!(a.incidents, c.incidents);
    }

    #[test]
    fn conservation_and_infected_sources() {
        for seed in 0..20 {
            let mut devices: Vec<DeviceSpec> = (0..10).map(|i| device(&format!("d{i}"), i % 3 != 2)).collect();
            devices[4].vulnerable_firmware = true;
            devices[4].default_credentials = false;
            devices[5].sda = true;
            let s = spec(devices, vec![]);
            let out = run_scenario(&s, seed).unwrap();
            assert_eq!(out.count(AttackKind::Propagation), out.infections.len() - 1, "seed {seed}");
            let infected: BTreeSet<&str> = out.infections.iter().map(|i| i.device.as_str()).collect();
            for inc in &out.incidents {
                assert!(infected.contains(inc.descriptor.source_device.as_str()));
                let at = out.infections.iter().find(|i| i.device == inc.descriptor.source_device).unwrap().at;
                assert!(at <= inc.descriptor.tm);
            }
        }
    }

    #[test]
    fn payloads_decode() {
        let mut devices: Vec<DeviceSpec> = (0..4).map(|i| device(&format!("d{i}"), true)).collect();
        devices[1].sda = true;
        let out = run_scenario(&spec(devices, vec![]), 3).unwrap();
        assert!(!out.incidents.is_empty());
        let mut saw_image = false;
        for inc in &out.incidents {
            let p = EvidencePayload::decode(&inc.payload).unwrap();
            assert!(!p.flows.is_empty());
            saw_image |= p.device_image.is_some();
        }
        assert!(saw_image);
    }

    #[test]
    fn detector_rules() {
        let devices = vec![device("cam", true)];
        let d = Detector::new(Thresholds::default(), &devices);
        let flood = TrafficEvent::SynFlood { src: "cam".into(), dst: "x".into(), syn_per_sec: 100, t: 1 };
        assert_eq!(d.detect(&flood).unwrap().attack_kind, AttackKind::Ddos);
        let weak = TrafficEvent::SynFlood { src: "cam".into(), dst: "x".into(), syn_per_sec: 49, t: 1 };
        assert!(d.detect(&weak).is_none());
        let web = TrafficEvent::Web { src: "cam".into(), domain: "cdn1.example.com".into(), port: 443, t: 1 };
        assert!(d.detect(&web).is_none());
        let beacon = TrafficEvent::Beacon {
            src: "cam".into(),
            domain: dga_domain(1, "cam", 0),
            port: 443,
            interval_secs: 60,
            jitter_secs: 1,
            observations: 5,
            t: 1,
        };
        assert_eq!(d.detect(&beacon).unwrap().attack_kind, AttackKind::Rallying);
    }

    #[test]
    fn malformed_specs_rejected() {
        let mut s = spec(vec![device("a", true)], vec![]);
        s.patient_zero = "nope".into();
        assert!(run_scenario(&s, 1).is_err());
        let s = spec(vec![device("a", true), device("a", false)], vec![]);
        assert!(s.validate().is_err());
        assert!(ScenarioSpec::from_toml("patient_zero = 3").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            seed = 9
            patient_zero = "cam"
            [[devices]]
            id = "cam"
            device_type = "camera"
            services = ["TELNET"]
            default_credentials = true
            [thresholds]
            syn_rate_per_sec = 60
        "#;
        let s = ScenarioSpec::from_toml(text).unwrap();
        assert_eq!(s.thresholds.syn_rate_per_sec, 60);
        assert_eq!(s.thresholds.login_attempts, 20);
        assert_eq!(s.seed, Some(9));
    }
}
