//! Synthetic vehicle traffic and attack injection.
//!
//! Normal traffic is modelled as a set of periodic senders, one per
//! arbitration id, each with a random phase and uniform per-frame jitter.
//! Attacks are purely additive: injected frames are merged into the base
//! log in timestamp order and never displace or alter base frames.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::can::{CanFrame, CanId, CanLog, FrameLabel, Payload, Timestamp};
use crate::config::KeyValues;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("traffic profile has no identifiers")]
    EmptyProfile,
    #[error("invalid profile entry for id {id}: {reason}")]
    InvalidSchedule { id: CanId, reason: String },
    #[error("duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("attack window {start_s}..{end_s} s does not overlap the base log span of {span_s} s")]
    WindowOutOfRange { start_s: f64, end_s: f64, span_s: f64 },
    #[error("invalid attack spec: {0}")]
    InvalidAttack(String),
}

/// How payload bytes evolve for a normal sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadMode {
    Constant,
    /// First byte counts up per transmission; the rest stay fixed.
    #[default]
    Counter,
    Random,
}

impl FromStr for PayloadMode {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(PayloadMode::Constant),
            "counter" => Ok(PayloadMode::Counter),
            "random" => Ok(PayloadMode::Random),
            other => Err(SynthError::InvalidAttack(format!("unknown payload mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdSchedule {
    pub period_ms: f64,
    /// Fraction of the period, in `[0, 0.5]`.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub schedules: BTreeMap<CanId, IdSchedule>,
    pub payload_mode: PayloadMode,
    pub seed: u64,
}

/// Sender ids and periods (ms) of the built-in profile, about 1,600 frames/s.
const DEFAULT_SENDERS: [(u16, f64); 20] = [
    (0x002, 10.0),
    (0x153, 10.0),
    (0x164, 10.0),
    (0x18f, 10.0),
    (0x1f1, 20.0),
    (0x220, 10.0),
    (0x260, 10.0),
    (0x2a0, 10.0),
    (0x2c0, 10.0),
    (0x316, 10.0),
    (0x329, 10.0),
    (0x350, 20.0),
    (0x370, 20.0),
    (0x43f, 10.0),
    (0x440, 10.0),
    (0x4b0, 10.0),
    (0x4f0, 20.0),
    (0x545, 10.0),
    (0x5f0, 100.0),
    (0x690, 100.0),
];

pub const DEFAULT_JITTER: f64 = 0.1;

impl TrafficProfile {
    /// Twenty senders with 10-100 ms periods.
    pub fn default_vehicle(seed: u64) -> Self {
        let schedules = DEFAULT_SENDERS
            .iter()
            .map(|&(id, period_ms)| {
                (CanId::new(u32::from(id)).unwrap(), IdSchedule { period_ms, jitter: DEFAULT_JITTER })
            })
            .collect();
        TrafficProfile { schedules, payload_mode: PayloadMode::Counter, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.schedules.is_empty() {
            return Err(SynthError::EmptyProfile);
        }
        for (&id, s) in &self.schedules {
            if !(s.period_ms.is_finite() && s.period_ms > 0.0) {
                return Err(SynthError::InvalidSchedule { id, reason: format!("period {} ms", s.period_ms) });
            }
            if !(0.0..=0.5).contains(&s.jitter) {
                return Err(SynthError::InvalidSchedule { id, reason: format!("jitter {}", s.jitter) });
            }
        }
        Ok(())
    }

    /// Reads `period.<hex id> = <ms>[,<jitter>]`, `jitter`, `payload` and `seed` keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, SynthError> {
        let bad = |m: String| SynthError::InvalidAttack(m);
        let default_jitter = match kv.get("jitter") {
            Some(v) => v.parse::<f64>().map_err(|_| bad(format!("bad jitter {v:?}")))?,
            None => DEFAULT_JITTER,
        };
        let mut schedules = BTreeMap::new();
        for (key, value) in kv.iter() {
            let Some(hex) = key.strip_prefix("period.") else { continue };
            let raw = u32::from_str_radix(hex.trim_start_matches("0x"), 16)
                .map_err(|_| bad(format!("bad id in key {key:?}")))?;
            let id = CanId::new(raw).map_err(|e| bad(e.to_string()))?;
            let (period, jitter) = match value.split_once(',') {
                Some((p, j)) => (p.trim(), j.trim().parse::<f64>().map_err(|_| bad(format!("bad jitter {j:?}")))?),
                None => (value.trim(), default_jitter),
            };
            let period_ms = period.parse::<f64>().map_err(|_| bad(format!("bad period {period:?}")))?;
            schedules.insert(id, IdSchedule { period_ms, jitter });
        }
        let payload_mode = kv.get("payload").map(str::parse).transpose()?.unwrap_or_default();
        let seed = match kv.get("seed") {
            Some(v) => v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
            None => 0,
        };
        let profile = TrafficProfile { schedules, payload_mode, seed };
        profile.validate()?;
        Ok(profile)
    }
}

/// Generates attack-free traffic over `[0, duration_s)`, every frame labelled normal.
pub fn gen_normal_traffic(profile: &TrafficProfile, duration_s: f64) -> Result<CanLog, SynthError> {
    profile.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SynthError::InvalidDuration(duration_s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let duration_us = duration_s * 1e6;
    let mut frames = Vec::new();
    for (&id, sched) in &profile.schedules {
        let period_us = sched.period_ms * 1e3;
        let phase_us = rng.gen_range(0.0..period_us).floor();
        let mut base: [u8; 8] = rng.gen();
        let mut k = 0u64;
        loop {
            let nominal = phase_us + k as f64 * period_us;
            if nominal >= duration_us {
                break;
            }
            let jitter = if sched.jitter > 0.0 {
                rng.gen_range(-sched.jitter..=sched.jitter) * period_us
            } else {
                0.0
            };
            let t = (nominal + jitter).round();
            match profile.payload_mode {
                PayloadMode::Constant => {}
                PayloadMode::Counter => base[0] = (k % 256) as u8,
                PayloadMode::Random => base = rng.gen(),
            }
            if (0.0..duration_us).contains(&t) {
                frames.push(CanFrame {
                    timestamp: Timestamp::from_micros(t as u64),
                    id,
                    payload: Payload::new(&base).unwrap(),
                    label: FrameLabel::Normal,
                });
            }
            k += 1;
        }
    }
    frames.sort_by_key(|f| f.timestamp);
    Ok(CanLog::new(frames, format!("synthetic seed={} duration={duration_s}s", profile.seed)).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// Highest-priority id `0x000` flooded at a short period.
    Dos,
    /// Uniformly random ids and payloads.
    Fuzzy,
    /// Spoofed frames on one function-specific id (RPM, gear, ...).
    Targeted,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Dos => "dos",
            AttackKind::Fuzzy => "fuzzy",
            AttackKind::Targeted => "targeted",
        })
    }
}

pub const DOS_PERIOD_MS: f64 = 0.3;
pub const FUZZY_PERIOD_MS: f64 = 0.5;
pub const TARGETED_PERIOD_MS: f64 = 1.0;
pub const RPM_TARGET_ID: u16 = 0x316;
pub const GEAR_TARGET_ID: u16 = 0x43f;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub period_ms: f64,
    /// Only meaningful for [`AttackKind::Targeted`].
    pub target_id: Option<CanId>,
    /// Active window in seconds relative to the first base frame.
    pub start_s: f64,
    pub end_s: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn dos(start_s: f64, end_s: f64) -> Self {
        AttackSpec { kind: AttackKind::Dos, period_ms: DOS_PERIOD_MS, target_id: None, start_s, end_s, seed: 0 }
    }

    pub fn fuzzy(start_s: f64, end_s: f64, seed: u64) -> Self {
        AttackSpec { kind: AttackKind::Fuzzy, period_ms: FUZZY_PERIOD_MS, target_id: None, start_s, end_s, seed }
    }

    pub fn targeted(target: u16, start_s: f64, end_s: f64, seed: u64) -> Self {
        AttackSpec {
            kind: AttackKind::Targeted,
            period_ms: TARGETED_PERIOD_MS,
            target_id: Some(CanId::new(u32::from(target)).expect("target id within 11 bits")),
            start_s,
            end_s,
            seed,
        }
    }

    pub fn rpm(start_s: f64, end_s: f64, seed: u64) -> Self {
        Self::targeted(RPM_TARGET_ID, start_s, end_s, seed)
    }

    pub fn gear(start_s: f64, end_s: f64, seed: u64) -> Self {
        Self::targeted(GEAR_TARGET_ID, start_s, end_s, seed)
    }

    /// Named preset: `dos`, `fuzzy`, `rpm`, `gear` or `targeted` (needs `target_id`).
    pub fn preset(name: &str, start_s: f64, end_s: f64, seed: u64) -> Result<Self, SynthError> {
        match name.to_ascii_lowercase().as_str() {
            "dos" => Ok(AttackSpec { seed, ..Self::dos(start_s, end_s) }),
            "fuzzy" => Ok(Self::fuzzy(start_s, end_s, seed)),
            "rpm" => Ok(Self::rpm(start_s, end_s, seed)),
            "gear" => Ok(Self::gear(start_s, end_s, seed)),
            "targeted" => Ok(AttackSpec { target_id: None, ..Self::rpm(start_s, end_s, seed) }),
            other => Err(SynthError::InvalidAttack(format!("unknown attack {other:?}"))),
        }
    }

    /// Builds a spec from `attack`, `period_ms`, `window` (`start:end`), `target_id` and `seed` keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, SynthError> {
        let bad = |m: String| SynthError::InvalidAttack(m);
        let name = kv.get("attack").ok_or_else(|| bad("missing `attack`".into()))?;
        let (start_s, end_s) = parse_window(kv.get("window").ok_or_else(|| bad("missing `window`".into()))?)?;
        let seed = match kv.get("seed") {
            Some(v) => v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
            None => 0,
        };
        let mut spec = Self::preset(name, start_s, end_s, seed)?;
        if let Some(p) = kv.get("period_ms") {
            spec.period_ms = p.parse().map_err(|_| bad(format!("bad period_ms {p:?}")))?;
        }
        if let Some(t) = kv.get("target_id") {
            spec.target_id = Some(parse_id(t)?);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidAttack(m));
        if !(self.period_ms.is_finite() && self.period_ms > 0.0) {
            return bad(format!("period_ms must be positive, got {}", self.period_ms));
        }
        if !(self.start_s.is_finite() && self.end_s.is_finite() && self.start_s < self.end_s) {
            return bad(format!("window {}..{} is empty", self.start_s, self.end_s));
        }
        if self.kind == AttackKind::Targeted && self.target_id.is_none() {
            return bad("targeted attack needs a target id".into());
        }
        Ok(())
    }
}

/// `start:end` in seconds.
pub fn parse_window(s: &str) -> Result<(f64, f64), SynthError> {
    let bad = || SynthError::InvalidAttack(format!("bad window {s:?}, expected start:end"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Hex id with or without `0x`.
pub fn parse_id(s: &str) -> Result<CanId, SynthError> {
    let s = s.trim();
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    let raw = u32::from_str_radix(digits, 16).map_err(|_| SynthError::InvalidAttack(format!("bad id {s:?}")))?;
    CanId::new(raw).map_err(|e| SynthError::InvalidAttack(e.to_string()))
}

/// Merges attack frames into `base`.
///
/// Injections happen at `start + k * period` for every `k` whose full period
/// fits in the window, clipped to the base log's span. On equal timestamps the
/// base frame comes first.
pub fn inject_attack(base: &CanLog, spec: &AttackSpec) -> Result<CanLog, SynthError> {
    spec.validate()?;
    let Some((first, last)) = base.span() else {
        return Err(SynthError::WindowOutOfRange { start_s: spec.start_s, end_s: spec.end_s, span_s: 0.0 });
    };
    let span_us = (last.as_micros() - first.as_micros()) as f64;
    let start_us = spec.start_s * 1e6;
    let end_us = (spec.end_s * 1e6).min(span_us);
    if spec.start_s < 0.0 || start_us >= end_us {
        return Err(SynthError::WindowOutOfRange { start_s: spec.start_s, end_s: spec.end_s, span_s: span_us * 1e-6 });
    }
    let period_us = spec.period_ms * 1e3;
    let count = ((end_us - start_us) / period_us + 1e-9).floor() as u64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spoofed: [u8; 8] = rng.gen();
    let mut injected = Vec::with_capacity(count as usize);
    for k in 0..count {
        let t = first.as_micros() + (start_us + k as f64 * period_us).round() as u64;
        let (id, data) = match spec.kind {
            AttackKind::Dos => (CanId::new(0).unwrap(), [0u8; 8]),
            AttackKind::Fuzzy => (CanId::new(rng.gen_range(0..=0x7FF)).unwrap(), rng.gen()),
            AttackKind::Targeted => (spec.target_id.expect("validated"), spoofed),
        };
        injected.push(CanFrame {
            timestamp: Timestamp::from_micros(t),
            id,
            payload: Payload::new(&data).unwrap(),
            label: FrameLabel::Injected,
        });
    }

    let mut merged = Vec::with_capacity(base.len() + injected.len());
    let mut attack = injected.into_iter().peekable();
    for &frame in base.frames() {
        while let Some(a) = attack.next_if(|a| a.timestamp < frame.timestamp) {
            merged.push(a);
        }
        merged.push(frame);
    }
    merged.extend(attack);
    let source = format!("{} + {} attack {}..{} s", base.source, spec.kind, spec.start_s, spec.end_s);
    Ok(CanLog::new(merged, source).expect("merge preserves order"))
}
