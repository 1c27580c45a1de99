//! Simulated sensors and actuators.
//!
//! Inputs (four proximity sensors, the camera, QR scans and NGO selections)
//! are scripted as [`Stimulus`] values and released by [`DeviceSim`] as the
//! virtual clock passes them. Outputs (LED strip, LCD, camera shutter) are
//! sinks that keep their full history for assertions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerEvent, LcdScreen, LedPattern, TimedEvent};
use crate::domain::{BinColor, NgoId};

pub const DEFAULT_TICK_INTERVAL: Duration = Duration::milliseconds(100);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("stimulus at {at} is before the clock ({now})")]
    StimulusInPast { at: DateTime<Utc>, now: DateTime<Utc> },
    #[error("channel {channel} needs a payload")]
    MissingPayload { channel: Channel },
    #[error("invalid payload for {channel}: {reason}")]
    InvalidPayload { channel: Channel, reason: String },
    #[error("cannot move the clock backwards to {0}")]
    ClockRegression(DateTime<Utc>),
}

/// Deterministic clock that only moves when told to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: DateTime<Utc>,
}

impl VirtualClock {
    pub fn starting_at(now: DateTime<Utc>) -> Self {
        VirtualClock { now }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    /// Negative durations are ignored.
    pub fn advance(&mut self, d: Duration) {
        if d > Duration::zero() {
            self.now += d;
        }
    }

    pub fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), DeviceError> {
        if t < self.now {
            return Err(DeviceError::ClockRegression(t));
        }
        self.now = t;
        Ok(())
    }
}

/// The four proximity sensors: I sits by the camera, II-IV above the bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProximitySensor {
    Main,
    Bin(BinColor),
}

impl ProximitySensor {
    pub const ALL: [ProximitySensor; 4] = [
        ProximitySensor::Main,
        ProximitySensor::Bin(BinColor::Blue),
        ProximitySensor::Bin(BinColor::Yellow),
        ProximitySensor::Bin(BinColor::Brown),
    ];
}

/// Input channel of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Proximity(ProximitySensor),
    /// Payload: base64 image bytes.
    Camera,
    /// Payload: scanned QR text.
    Qr,
    /// Payload: NGO number 1..=4.
    Ngo,
}

impl Channel {
    pub fn main_proximity() -> Self {
        Channel::Proximity(ProximitySensor::Main)
    }

    pub fn bin(color: BinColor) -> Self {
        Channel::Proximity(ProximitySensor::Bin(color))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Proximity(ProximitySensor::Main) => f.write_str("main_proximity"),
            Channel::Proximity(ProximitySensor::Bin(c)) => write!(f, "bin_proximity:{c}"),
            Channel::Camera => f.write_str("camera"),
            Channel::Qr => f.write_str("qr"),
            Channel::Ngo => f.write_str("ngo"),
        }
    }
}

impl FromStr for Channel {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main_proximity" => Ok(Channel::main_proximity()),
            "camera" => Ok(Channel::Camera),
            "qr" => Ok(Channel::Qr),
            "ngo" => Ok(Channel::Ngo),
            other => other
                .strip_prefix("bin_proximity:")
                .and_then(|c| c.parse::<BinColor>().ok())
                .map(Channel::bin)
                .ok_or_else(|| DeviceError::UnknownChannel(other.to_string())),
        }
    }
}

impl Serialize for Channel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Channel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// One scripted input; a line of a stimulus script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub at: DateTime<Utc>,
    pub channel: Channel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Stimulus {
    pub fn new(at: DateTime<Utc>, channel: Channel) -> Self {
        Stimulus {
            at,
            channel,
            payload: None,
        }
    }

    pub fn camera(at: DateTime<Utc>, image: &[u8]) -> Self {
        Stimulus {
            at,
            channel: Channel::Camera,
            payload: Some(BASE64.encode(image)),
        }
    }

    pub fn with_payload(at: DateTime<Utc>, channel: Channel, payload: impl Into<String>) -> Self {
        Stimulus {
            at,
            channel,
            payload: Some(payload.into()),
        }
    }

    /// The controller event this stimulus produces.
    pub fn to_event(&self) -> Result<ControllerEvent, DeviceError> {
        let channel = self.channel;
        let payload = || {
            self.payload
                .as_deref()
                .ok_or(DeviceError::MissingPayload { channel })
        };
        let invalid = |reason: String| DeviceError::InvalidPayload { channel, reason };
        Ok(match channel {
            Channel::Proximity(ProximitySensor::Main) => ControllerEvent::MainProximityTriggered,
            Channel::Proximity(ProximitySensor::Bin(c)) => ControllerEvent::BinSensorTriggered(c),
            Channel::Camera => {
                let bytes = BASE64.decode(payload()?).map_err(|e| invalid(e.to_string()))?;
                ControllerEvent::ImageCaptured(bytes)
            }
            Channel::Qr => ControllerEvent::QrScanned(payload()?.to_string()),
            Channel::Ngo => {
                let n: u32 = payload()?.trim().parse().map_err(|_| invalid("not a number".into()))?;
                ControllerEvent::NgoSelected(NgoId::new(n).map_err(|e| invalid(e.to_string()))?)
            }
        })
    }
}

/// Parses a stimulus script (one JSON object per line, blank lines allowed).
pub fn parse_script(text: &str) -> Result<Vec<Stimulus>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn script_to_jsonl(stimuli: &[Stimulus]) -> String {
    stimuli
        .iter()
        .map(|s| serde_json::to_string(s).expect("stimulus serialization is infallible") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub at: DateTime<Utc>,
}

/// Releases scripted stimuli as controller events, interleaved with ticks.
#[derive(Debug, Clone)]
pub struct DeviceSim {
    clock: VirtualClock,
    tick_interval: Duration,
    next_tick: DateTime<Utc>,
    pending: BTreeMap<(DateTime<Utc>, u64), ControllerEvent>,
    seq: u64,
}

impl DeviceSim {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self::with_tick_interval(start, DEFAULT_TICK_INTERVAL)
    }

    pub fn with_tick_interval(start: DateTime<Utc>, tick_interval: Duration) -> Self {
        assert!(tick_interval > Duration::zero(), "tick interval must be positive");
        DeviceSim {
            clock: VirtualClock::starting_at(start),
            tick_interval,
            next_tick: start + tick_interval,
            pending: BTreeMap::new(),
            seq: 0,
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn tick_interval(&self) -> Duration {
        self.tick_interval
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.pending.keys().next().map(|(at, _)| *at)
    }

    /// Schedules a stimulus. Validation (channel, payload, time) happens
    /// here so a bad script fails at load time rather than mid-replay.
    pub fn inject_stimulus(&mut self, s: &Stimulus) -> Result<Ack, DeviceError> {
        if s.at < self.clock.now() {
            return Err(DeviceError::StimulusInPast {
                at: s.at,
                now: self.clock.now(),
            });
        }
        let event = s.to_event()?;
        self.seq += 1;
        self.pending.insert((s.at, self.seq), event);
        Ok(Ack { seq: self.seq, at: s.at })
    }

    /// Like [`inject_stimulus`](Self::inject_stimulus) but with the channel
    /// given as text.
    pub fn inject_raw(&mut self, at: DateTime<Utc>, channel: &str, payload: Option<String>) -> Result<Ack, DeviceError> {
        let channel: Channel = channel.parse()?;
        self.inject_stimulus(&Stimulus { at, channel, payload })
    }

    fn pop_due(&mut self, until: DateTime<Utc>) -> Option<TimedEvent> {
        let key = *self.pending.keys().next()?;
        if key.0 > until {
            return None;
        }
        let event = self.pending.remove(&key).expect("key exists");
        Some(TimedEvent::new(key.0, event))
    }

    /// Advances the clock by `d`, returning due stimuli and ticks in time
    /// order. A stimulus sharing an instant with a tick comes first.
    pub fn advance_clock(&mut self, d: Duration) -> Vec<TimedEvent> {
        let target = self.clock.now() + d.max(Duration::zero());
        let mut out = Vec::new();
        loop {
            let next_stim = self.next_due().filter(|at| *at <= target);
            let tick_due = self.next_tick <= target;
            match (next_stim, tick_due) {
                (Some(at), true) if at <= self.next_tick => out.extend(self.pop_due(at)),
                (Some(at), false) => out.extend(self.pop_due(at)),
                (_, true) => {
                    out.push(TimedEvent::tick(self.next_tick));
                    self.next_tick += self.tick_interval;
                }
                (None, false) => break,
            }
        }
        self.clock
            .advance_to(target)
            .expect("target is never before now");
        out
    }

    /// Moves the clock to `t` without generating ticks. Only useful when the
    /// caller knows ticks would be no-ops (the controller is idle). Due
    /// stimuli are still returned.
    pub fn jump_to(&mut self, t: DateTime<Utc>) -> Result<Vec<TimedEvent>, DeviceError> {
        self.clock.advance_to(t)?;
        let mut out = Vec::new();
        while let Some(ev) = self.pop_due(t) {
            out.push(ev);
        }
        self.next_tick = t + self.tick_interval;
        Ok(out)
    }
}

pub trait LedStrip {
    fn set_pattern(&mut self, pattern: LedPattern, at: DateTime<Utc>);
    fn current(&self) -> LedPattern;
}

pub trait Lcd {
    fn show(&mut self, screen: LcdScreen, at: DateTime<Utc>);
    fn current(&self) -> Option<LcdScreen>;
}

pub trait Camera {
    fn trigger(&mut self, at: DateTime<Utc>);
}

#[derive(Debug, Clone, Default)]
pub struct RecordingLed {
    pub history: Vec<(DateTime<Utc>, LedPattern)>,
}

impl LedStrip for RecordingLed {
    fn set_pattern(&mut self, pattern: LedPattern, at: DateTime<Utc>) {
        self.history.push((at, pattern));
    }

    fn current(&self) -> LedPattern {
        self.history.last().map(|(_, p)| *p).unwrap_or(LedPattern::Ready)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RecordingLcd {
    pub history: Vec<(DateTime<Utc>, LcdScreen)>,
}

impl Lcd for RecordingLcd {
    fn show(&mut self, screen: LcdScreen, at: DateTime<Utc>) {
        self.history.push((at, screen));
    }

    fn current(&self) -> Option<LcdScreen> {
        self.history.last().map(|(_, s)| *s)
    }
}

/// Records shutter requests; frames themselves arrive as camera stimuli.
#[derive(Debug, Clone, Default)]
pub struct SimCamera {
    pub shutter_log: Vec<DateTime<Utc>>,
}

impl Camera for SimCamera {
    fn trigger(&mut self, at: DateTime<Utc>) {
        self.shutter_log.push(at);
    }
}

/// Output side of the simulated hardware.
#[derive(Debug, Clone, Default)]
pub struct SimDevices {
    pub led: RecordingLed,
    pub lcd: RecordingLcd,
    pub camera: SimCamera,
}
