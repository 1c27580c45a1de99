//! Event-driven controller for one trashcan.
//!
//! [`step`] is a pure, total transition function: it never fails, and any
//! (state, event) pair it does not recognise leaves the state untouched with
//! no effects. Timeouts are only evaluated on [`ControllerEvent::Tick`], so
//! the machine can be driven by a virtual clock.

use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::domain::{BinColor, ClassificationOutcome, DisposalRecord, NgoId, SessionOutcome};
use crate::ledger::{parse_qr, Address, Tokens};

/// Namespace for record ids derived from session start instants.
const SESSION_NAMESPACE: Uuid = Uuid::from_u128(0x5a1e_0c4b_7f3e_4d2a_9b61_c0ff_ee00_b1u128);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("event at {at} is earlier than the previous event at {previous}")]
    TimeRegression {
        previous: DateTime<Utc>,
        at: DateTime<Utc>,
    },
    #[error("invalid controller config: {0}")]
    InvalidConfig(&'static str),
}

/// Durations in config files are whole milliseconds.
pub mod duration_ms {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_milliseconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::milliseconds(i64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Time allowed between the LED indication and a bin sensor firing.
    #[serde(with = "duration_ms")]
    pub disposal_timeout: Duration,
    /// Time the QR prompt stays up before the NGO menu replaces it.
    #[serde(with = "duration_ms")]
    pub reward_timeout: Duration,
    /// Time the NGO menu stays up before the reward is left unclaimed.
    #[serde(with = "duration_ms")]
    pub donate_timeout: Duration,
    /// How long the error LED lingers after an unusable image.
    #[serde(with = "duration_ms")]
    pub retry_linger: Duration,
    /// Capture/classification must finish within this time of the trigger.
    #[serde(with = "duration_ms")]
    pub stall_timeout: Duration,
    pub reward_amount: Tokens,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            disposal_timeout: Duration::seconds(10),
            reward_timeout: Duration::seconds(10),
            donate_timeout: Duration::seconds(30),
            retry_linger: Duration::seconds(3),
            stall_timeout: Duration::seconds(5),
            reward_amount: Tokens::from_drops(10_000),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let positive = [
            (self.disposal_timeout, "disposal_timeout must be positive"),
            (self.reward_timeout, "reward_timeout must be positive"),
            (self.donate_timeout, "donate_timeout must be positive"),
            (self.retry_linger, "retry_linger must be positive"),
            (self.stall_timeout, "stall_timeout must be positive"),
        ];
        for (d, msg) in positive {
            if d <= Duration::zero() {
                return Err(ControllerError::InvalidConfig(msg));
            }
        }
        if self.reward_amount == Tokens::ZERO {
            return Err(ControllerError::InvalidConfig("reward_amount must be positive"));
        }
        Ok(())
    }

    /// Upper bound on the time any session can take to get back to idle when
    /// only ticks arrive.
    pub fn liveness_bound(&self) -> Duration {
        self.donate_timeout + self.disposal_timeout + self.reward_timeout + self.retry_linger
    }
}

/// Context of the interaction in progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub record_id: String,
    pub started_at: DateTime<Utc>,
    #[serde(with = "b64_bytes")]
    pub image: Vec<u8>,
    pub predicted: Option<BinColor>,
    pub thrown: Option<BinColor>,
}

impl Session {
    fn start(now: DateTime<Utc>) -> Self {
        let id = Uuid::new_v5(&SESSION_NAMESPACE, &now.timestamp_millis().to_be_bytes());
        Session {
            record_id: id.to_string(),
            started_at: now,
            image: Vec::new(),
            predicted: None,
            thrown: None,
        }
    }

    fn record(&self, outcome: SessionOutcome) -> DisposalRecord {
        DisposalRecord::new(
            self.record_id.clone(),
            &self.image,
            self.started_at,
            self.predicted,
            self.thrown,
            None,
            outcome,
        )
        .expect("controller only builds consistent records")
    }
}

mod b64_bytes {
    use super::{Engine, BASE64};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&BASE64.encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let raw = String::deserialize(d)?;
        BASE64.decode(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ControllerState {
    Idle,
    Capturing {
        session: Session,
    },
    Classifying {
        session: Session,
    },
    PromptRetry {
        until: DateTime<Utc>,
    },
    AwaitDisposal {
        session: Session,
        predicted: BinColor,
        deadline: DateTime<Utc>,
    },
    RewardPrompt {
        session: Session,
        deadline: DateTime<Utc>,
    },
    DonateMenu {
        session: Session,
        deadline: DateTime<Utc>,
    },
    Finalizing {
        session: Session,
        outcome: SessionOutcome,
    },
}

impl ControllerState {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerState::Idle => "Idle",
            ControllerState::Capturing { .. } => "Capturing",
            ControllerState::Classifying { .. } => "Classifying",
            ControllerState::PromptRetry { .. } => "PromptRetry",
            ControllerState::AwaitDisposal { .. } => "AwaitDisposal",
            ControllerState::RewardPrompt { .. } => "RewardPrompt",
            ControllerState::DonateMenu { .. } => "DonateMenu",
            ControllerState::Finalizing { .. } => "Finalizing",
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, ControllerState::Idle)
    }

    pub fn deadline(&self) -> Option<DateTime<Utc>> {
        match self {
            ControllerState::PromptRetry { until } => Some(*until),
            ControllerState::AwaitDisposal { deadline, .. }
            | ControllerState::RewardPrompt { deadline, .. }
            | ControllerState::DonateMenu { deadline, .. } => Some(*deadline),
            _ => None,
        }
    }

    pub fn session(&self) -> Option<&Session> {
        match self {
            ControllerState::Idle | ControllerState::PromptRetry { .. } => None,
            ControllerState::Capturing { session }
            | ControllerState::Classifying { session }
            | ControllerState::AwaitDisposal { session, .. }
            | ControllerState::RewardPrompt { session, .. }
            | ControllerState::DonateMenu { session, .. }
            | ControllerState::Finalizing { session, .. } => Some(session),
        }
    }
}

impl fmt::Display for ControllerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "value", rename_all = "snake_case")]
pub enum ControllerEvent {
    MainProximityTriggered,
    ImageCaptured(#[serde(with = "b64_bytes")] Vec<u8>),
    Classified(ClassificationOutcome),
    /// One of the three rim sensors fired.
    BinSensorTriggered(BinColor),
    QrScanned(String),
    NgoSelected(NgoId),
    Tick(DateTime<Utc>),
}

/// An event together with the instant it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: ControllerEvent,
}

impl TimedEvent {
    pub fn new(at: DateTime<Utc>, event: ControllerEvent) -> Self {
        TimedEvent { at, event }
    }

    pub fn tick(at: DateTime<Utc>) -> Self {
        TimedEvent {
            at,
            event: ControllerEvent::Tick(at),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LedPattern {
    Ready,
    Processing,
    Error,
    Solid(BinColor),
}

impl LedPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            LedPattern::Ready => "ready",
            LedPattern::Processing => "processing",
            LedPattern::Error => "error",
            LedPattern::Solid(BinColor::Blue) => "solid_blue",
            LedPattern::Solid(BinColor::Yellow) => "solid_yellow",
            LedPattern::Solid(BinColor::Brown) => "solid_brown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ready" => LedPattern::Ready,
            "processing" => LedPattern::Processing,
            "error" => LedPattern::Error,
            "solid_blue" => LedPattern::Solid(BinColor::Blue),
            "solid_yellow" => LedPattern::Solid(BinColor::Yellow),
            "solid_brown" => LedPattern::Solid(BinColor::Brown),
            _ => return None,
        })
    }
}

impl fmt::Display for LedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for LedPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LedPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        LedPattern::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("unknown LED pattern {raw}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcdScreen {
    TryAgain,
    ShowQrPrompt,
    NgoMenu,
    RewardSent,
}

impl LcdScreen {
    /// Text shown on the display for this screen.
    pub fn text(self) -> &'static str {
        match self {
            LcdScreen::TryAgain => "Please show the item again",
            LcdScreen::ShowQrPrompt => "Show your wallet QR code to claim your reward",
            LcdScreen::NgoMenu => "Scan an NGO code to donate your reward",
            LcdScreen::RewardSent => "Reward sent!",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardDestination {
    User(Address),
    Ngo(NgoId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", content = "value", rename_all = "snake_case")]
pub enum SideEffect {
    CaptureImage,
    RunClassifier(#[serde(with = "b64_bytes")] Vec<u8>),
    SetLed(LedPattern),
    ShowLcd(LcdScreen),
    PersistRecord(DisposalRecord),
    /// `memo` is the session record id, so a session can be paid at most once.
    IssueReward {
        destination: RewardDestination,
        amount: Tokens,
        memo: String,
    },
}

/// Applies one event. Pure and total.
pub fn step(
    state: ControllerState,
    event: &ControllerEvent,
    config: &ControllerConfig,
    now: DateTime<Utc>,
) -> (ControllerState, Vec<SideEffect>) {
    use ControllerEvent as E;
    use ControllerState as S;

    let try_again = || {
        (
            S::PromptRetry {
                until: now + config.retry_linger,
            },
            vec![SideEffect::SetLed(LedPattern::Error), SideEffect::ShowLcd(LcdScreen::TryAgain)],
        )
    };

    match (state, event) {
        (S::Idle, E::MainProximityTriggered) => (
            S::Capturing {
                session: Session::start(now),
            },
            vec![SideEffect::CaptureImage, SideEffect::SetLed(LedPattern::Processing)],
        ),

        (S::Capturing { mut session }, E::ImageCaptured(image)) => {
            session.image = image.clone();
            (S::Classifying { session }, vec![SideEffect::RunClassifier(image.clone())])
        }

        (S::Classifying { .. }, E::Classified(ClassificationOutcome::Invalid)) => try_again(),

        (S::Classifying { mut session }, E::Classified(ClassificationOutcome::Valid(color))) => {
            session.predicted = Some(*color);
            (
                S::AwaitDisposal {
                    session,
                    predicted: *color,
                    deadline: now + config.disposal_timeout,
                },
                vec![SideEffect::SetLed(LedPattern::Solid(*color))],
            )
        }

        (S::Capturing { session } | S::Classifying { session }, E::Tick(_))
            if now >= session.started_at + config.stall_timeout =>
        {
            try_again()
        }

        (S::PromptRetry { until }, E::Tick(_)) if now >= until => {
            (S::Idle, vec![SideEffect::SetLed(LedPattern::Ready)])
        }

        (S::AwaitDisposal { session, deadline, .. }, E::Tick(_)) if now >= deadline => {
            let outcome = SessionOutcome::Timeout;
            let record = session.record(outcome);
            (S::Finalizing { session, outcome }, vec![SideEffect::PersistRecord(record)])
        }

        (S::AwaitDisposal { mut session, predicted, .. }, E::BinSensorTriggered(bin)) => {
            session.thrown = Some(*bin);
            if *bin == predicted {
                (
                    S::RewardPrompt {
                        session,
                        deadline: now + config.reward_timeout,
                    },
                    vec![SideEffect::ShowLcd(LcdScreen::ShowQrPrompt)],
                )
            } else {
                let outcome = SessionOutcome::IncorrectBin;
                let record = session.record(outcome);
                (
                    S::Finalizing { session, outcome },
                    vec![SideEffect::SetLed(LedPattern::Error), SideEffect::PersistRecord(record)],
                )
            }
        }

        (S::RewardPrompt { session, deadline }, E::QrScanned(payload)) => match parse_qr(payload) {
            Ok(address) => {
                let outcome = SessionOutcome::CorrectRewarded;
                let effects = vec![
                    SideEffect::IssueReward {
                        destination: RewardDestination::User(address),
                        amount: config.reward_amount,
                        memo: session.record_id.clone(),
                    },
                    SideEffect::PersistRecord(session.record(outcome)),
                    SideEffect::ShowLcd(LcdScreen::RewardSent),
                ];
                (S::Finalizing { session, outcome }, effects)
            }
            // unreadable code counts as no scan
            Err(_) => (S::RewardPrompt { session, deadline }, Vec::new()),
        },

        (S::RewardPrompt { session, deadline }, E::Tick(_)) if now >= deadline => (
            S::DonateMenu {
                session,
                deadline: now + config.donate_timeout,
            },
            vec![SideEffect::ShowLcd(LcdScreen::NgoMenu)],
        ),

        (S::DonateMenu { session, .. }, E::NgoSelected(ngo)) => {
            let outcome = SessionOutcome::CorrectDonated(*ngo);
            let effects = vec![
                SideEffect::IssueReward {
                    destination: RewardDestination::Ngo(*ngo),
                    amount: config.reward_amount,
                    memo: session.record_id.clone(),
                },
                SideEffect::PersistRecord(session.record(outcome)),
                SideEffect::ShowLcd(LcdScreen::RewardSent),
            ];
            (S::Finalizing { session, outcome }, effects)
        }

        (S::DonateMenu { session, deadline }, E::Tick(_)) if now >= deadline => {
            let outcome = SessionOutcome::CorrectUnclaimed;
            let record = session.record(outcome);
            (S::Finalizing { session, outcome }, vec![SideEffect::PersistRecord(record)])
        }

        (S::Finalizing { .. }, E::Tick(_)) => (S::Idle, vec![SideEffect::SetLed(LedPattern::Ready)]),

        (state, _) => (state, Vec::new()),
    }
}

/// Result of driving the controller over a bounded event list.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub record: Option<DisposalRecord>,
    pub effects: Vec<SideEffect>,
    pub final_state: ControllerState,
}

/// Runs `events` from `Idle` and returns the first persisted record along
/// with the full effect log.
pub fn run_session(events: &[TimedEvent], config: &ControllerConfig) -> Result<SessionRun, ControllerError> {
    let mut state = ControllerState::Idle;
    let mut effects = Vec::new();
    let mut previous: Option<DateTime<Utc>> = None;
    for ev in events {
        if let Some(prev) = previous {
            if ev.at < prev {
                return Err(ControllerError::TimeRegression { previous: prev, at: ev.at });
            }
        }
        previous = Some(ev.at);
        let (next, out) = step(state, &ev.event, config, ev.at);
        state = next;
        effects.extend(out);
    }
    let record = effects.iter().find_map(|e| match e {
        SideEffect::PersistRecord(r) => Some(r.clone()),
        _ => None,
    });
    Ok(SessionRun {
        record,
        effects,
        final_state: state,
    })
}

/// Serializes an effect log as JSON lines, one `{"at", "effect", "value"}`
/// object per effect.
pub fn effects_to_jsonl<'a>(log: impl IntoIterator<Item = &'a (DateTime<Utc>, SideEffect)>) -> String {
    #[derive(Serialize)]
    struct Line<'b> {
        at: DateTime<Utc>,
        #[serde(flatten)]
        effect: &'b SideEffect,
    }
    log.into_iter()
        .map(|(at, effect)| {
            serde_json::to_string(&Line { at: *at, effect }).expect("effect serialization is infallible") + "\n"
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 4, 9, 0, 0).unwrap()
    }

    fn secs(s: f64) -> DateTime<Utc> {
        t0() + Duration::milliseconds((s * 1000.0) as i64)
    }

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    fn await_disposal(color: BinColor) -> ControllerState {
        let mut session = Session::start(t0());
        session.image = b"img".to_vec();
        session.predicted = Some(color);
        ControllerState::AwaitDisposal {
            session,
            predicted: color,
            deadline: t0() + Duration::seconds(10),
        }
    }

    #[test]
    fn proximity_starts_capture() {
        let (s, fx) = step(ControllerState::Idle, &ControllerEvent::MainProximityTriggered, &cfg(), t0());
        assert_eq!(s.name(), "Capturing");
        assert_eq!(fx, vec![SideEffect::CaptureImage, SideEffect::SetLed(LedPattern::Processing)]);
    }

    #[test]
    fn image_triggers_classifier() {
        let (s, _) = step(ControllerState::Idle, &ControllerEvent::MainProximityTriggered, &cfg(), t0());
        let (s, fx) = step(s, &ControllerEvent::ImageCaptured(b"png".to_vec()), &cfg(), secs(0.2));
        assert_eq!(s.name(), "Classifying");
        assert_eq!(fx, vec![SideEffect::RunClassifier(b"png".to_vec())]);
    }

    #[test]
    fn invalid_classification_prompts_retry_then_idles() {
        let (s, _) = step(ControllerState::Idle, &ControllerEvent::MainProximityTriggered, &cfg(), t0());
        let (s, _) = step(s, &ControllerEvent::ImageCaptured(vec![1]), &cfg(), t0());
        let (s, fx) = step(s, &ControllerEvent::Classified(ClassificationOutcome::Invalid), &cfg(), secs(1.0));
        assert_eq!(s, ControllerState::PromptRetry { until: secs(4.0) });
        assert_eq!(fx, vec![SideEffect::SetLed(LedPattern::Error), SideEffect::ShowLcd(LcdScreen::TryAgain)]);
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(3.9)), &cfg(), secs(3.9));
        assert_eq!(s.name(), "PromptRetry");
        assert!(fx.is_empty());
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(4.0)), &cfg(), secs(4.0));
        assert_eq!(s, ControllerState::Idle);
        assert_eq!(fx, vec![SideEffect::SetLed(LedPattern::Ready)]);
    }

    #[test]
    fn valid_classification_lights_bin() {
        let (s, _) = step(ControllerState::Idle, &ControllerEvent::MainProximityTriggered, &cfg(), t0());
        let (s, _) = step(s, &ControllerEvent::ImageCaptured(vec![1]), &cfg(), t0());
        let (s, fx) = step(
            s,
            &ControllerEvent::Classified(ClassificationOutcome::Valid(BinColor::Brown)),
            &cfg(),
            secs(2.0),
        );
        assert_eq!(s.deadline(), Some(secs(12.0)));
        assert!(matches!(s, ControllerState::AwaitDisposal { predicted: BinColor::Brown, .. }));
        assert_eq!(fx, vec![SideEffect::SetLed(LedPattern::Solid(BinColor::Brown))]);
    }

    #[test]
    fn disposal_timeout_persists() {
        let (s, fx) = step(await_disposal(BinColor::Blue), &ControllerEvent::Tick(secs(10.0)), &cfg(), secs(10.0));
        let ControllerState::Finalizing { outcome, .. } = &s else {
            panic!("expected Finalizing, got {s}");
        };
        assert_eq!(*outcome, SessionOutcome::Timeout);
        assert_eq!(fx.len(), 1);
        let SideEffect::PersistRecord(rec) = &fx[0] else {
            panic!("expected PersistRecord")
        };
        assert_eq!(rec.bin_thrown(), None);
        assert_eq!(rec.bin_predicted(), Some(BinColor::Blue));
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(10.1)), &cfg(), secs(10.1));
        assert_eq!(s, ControllerState::Idle);
        assert_eq!(fx, vec![SideEffect::SetLed(LedPattern::Ready)]);
    }

    #[test]
    fn tick_before_deadline_waits() {
        let (s, fx) = step(await_disposal(BinColor::Blue), &ControllerEvent::Tick(secs(9.9)), &cfg(), secs(9.9));
        assert_eq!(s.name(), "AwaitDisposal");
        assert!(fx.is_empty());
    }

    #[test]
    fn wrong_bin_is_incorrect() {
        let (s, fx) = step(
            await_disposal(BinColor::Blue),
            &ControllerEvent::BinSensorTriggered(BinColor::Brown),
            &cfg(),
            secs(4.0),
        );
        assert!(matches!(s, ControllerState::Finalizing { outcome: SessionOutcome::IncorrectBin, .. }));
        assert_eq!(fx[0], SideEffect::SetLed(LedPattern::Error));
        let SideEffect::PersistRecord(rec) = &fx[1] else { panic!() };
        assert_eq!(rec.bin_thrown(), Some(BinColor::Brown));
        assert_eq!(fx.len(), 2);
    }

    #[test]
    fn matching_bin_prompts_for_qr() {
        let (s, fx) = step(
            await_disposal(BinColor::Blue),
            &ControllerEvent::BinSensorTriggered(BinColor::Blue),
            &cfg(),
            secs(4.0),
        );
        assert_eq!(s.name(), "RewardPrompt");
        assert_eq!(s.deadline(), Some(secs(14.0)));
        assert_eq!(fx, vec![SideEffect::ShowLcd(LcdScreen::ShowQrPrompt)]);

        // second trigger is ignored (first wins)
        let (s2, fx) = step(s.clone(), &ControllerEvent::BinSensorTriggered(BinColor::Brown), &cfg(), secs(4.5));
        assert_eq!(s2, s);
        assert!(fx.is_empty());
    }

    #[test]
    fn qr_scan_rewards_user() {
        let (s, _) = step(
            await_disposal(BinColor::Yellow),
            &ControllerEvent::BinSensorTriggered(BinColor::Yellow),
            &cfg(),
            secs(4.0),
        );
        let (same, fx) = step(s.clone(), &ControllerEvent::QrScanned("http://evil".into()), &cfg(), secs(5.0));
        assert_eq!(same, s);
        assert!(fx.is_empty());

        let (s, fx) = step(s, &ControllerEvent::QrScanned("itrash://wallet/rUser1".into()), &cfg(), secs(5.0));
        assert!(matches!(s, ControllerState::Finalizing { outcome: SessionOutcome::CorrectRewarded, .. }));
        assert_eq!(fx.len(), 3);
        assert!(matches!(
            &fx[0],
            SideEffect::IssueReward { destination: RewardDestination::User(a), amount, .. }
                if a.as_str() == "rUser1" && *amount == Tokens::from_drops(10_000)
        ));
        assert!(matches!(&fx[1], SideEffect::PersistRecord(r) if r.outcome() == SessionOutcome::CorrectRewarded));
        assert_eq!(fx[2], SideEffect::ShowLcd(LcdScreen::RewardSent));
    }

    #[test]
    fn unclaimed_reward_goes_to_menu_then_unclaimed() {
        let (s, _) = step(
            await_disposal(BinColor::Yellow),
            &ControllerEvent::BinSensorTriggered(BinColor::Yellow),
            &cfg(),
            secs(4.0),
        );
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(14.0)), &cfg(), secs(14.0));
        assert_eq!(s.name(), "DonateMenu");
        assert_eq!(s.deadline(), Some(secs(44.0)));
        assert_eq!(fx, vec![SideEffect::ShowLcd(LcdScreen::NgoMenu)]);
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(44.0)), &cfg(), secs(44.0));
        assert!(matches!(s, ControllerState::Finalizing { outcome: SessionOutcome::CorrectUnclaimed, .. }));
        assert!(matches!(&fx[..], [SideEffect::PersistRecord(_)]));
    }

    #[test]
    fn ngo_selection_donates() {
        let (s, _) = step(
            await_disposal(BinColor::Brown),
            &ControllerEvent::BinSensorTriggered(BinColor::Brown),
            &cfg(),
            secs(4.0),
        );
        let (s, _) = step(s, &ControllerEvent::Tick(secs(14.0)), &cfg(), secs(14.0));
        let ngo = NgoId::new(2).unwrap();
        let (s, fx) = step(s, &ControllerEvent::NgoSelected(ngo), &cfg(), secs(20.0));
        assert!(matches!(s, ControllerState::Finalizing { outcome: SessionOutcome::CorrectDonated(n), .. } if n == ngo));
        assert!(matches!(&fx[0], SideEffect::IssueReward { destination: RewardDestination::Ngo(n), .. } if *n == ngo));
        assert!(matches!(&fx[1], SideEffect::PersistRecord(_)));
        assert_eq!(fx[2], SideEffect::ShowLcd(LcdScreen::RewardSent));
    }

    #[test]
    fn sensor_noise_while_idle_is_ignored() {
        let (s, fx) = step(ControllerState::Idle, &ControllerEvent::BinSensorTriggered(BinColor::Yellow), &cfg(), t0());
        assert_eq!(s, ControllerState::Idle);
        assert!(fx.is_empty());
    }

    #[test]
    fn stalled_capture_falls_back_to_retry() {
        let (s, _) = step(ControllerState::Idle, &ControllerEvent::MainProximityTriggered, &cfg(), t0());
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(4.9)), &cfg(), secs(4.9));
        assert_eq!(s.name(), "Capturing");
        assert!(fx.is_empty());
        let (s, fx) = step(s, &ControllerEvent::Tick(secs(5.0)), &cfg(), secs(5.0));
        assert_eq!(s.name(), "PromptRetry");
        assert_eq!(fx[0], SideEffect::SetLed(LedPattern::Error));
    }

    #[test]
    fn happy_path_session() {
        let events = vec![
            TimedEvent::new(t0(), ControllerEvent::MainProximityTriggered),
            TimedEvent::new(secs(0.3), ControllerEvent::ImageCaptured(b"bottle".to_vec())),
            TimedEvent::new(secs(1.0), ControllerEvent::Classified(ClassificationOutcome::Valid(BinColor::Yellow))),
            TimedEvent::new(secs(4.0), ControllerEvent::BinSensorTriggered(BinColor::Yellow)),
            TimedEvent::new(secs(6.0), ControllerEvent::QrScanned("itrash://wallet/rUser".into())),
            TimedEvent::tick(secs(6.1)),
        ];
        let run = run_session(&events, &cfg()).unwrap();
        let rec = run.record.unwrap();
        assert_eq!(rec.outcome(), SessionOutcome::CorrectRewarded);
        assert_eq!(rec.bin_thrown(), Some(BinColor::Yellow));
        assert_eq!(rec.image_bytes(), b"bottle");
        assert_eq!(rec.time(), t0());
        assert_eq!(run.final_state, ControllerState::Idle);
    }

    #[test]
    fn timeout_session() {
        let mut events = vec![
            TimedEvent::new(t0(), ControllerEvent::MainProximityTriggered),
            TimedEvent::new(secs(0.3), ControllerEvent::ImageCaptured(b"phone".to_vec())),
            TimedEvent::new(secs(1.0), ControllerEvent::Classified(ClassificationOutcome::Valid(BinColor::Blue))),
        ];
        events.extend((11..=111).map(|i| TimedEvent::tick(secs(f64::from(i) * 0.1))));
        let run = run_session(&events, &cfg()).unwrap();
        let rec = run.record.unwrap();
        assert_eq!(rec.outcome(), SessionOutcome::Timeout);
        assert_eq!(rec.bin_thrown(), None);
        assert!(!rec.is_disposed());
        assert_eq!(run.final_state, ControllerState::Idle);
    }

    #[test]
    fn run_session_rejects_time_regression() {
        let events = vec![TimedEvent::tick(secs(2.0)), TimedEvent::tick(secs(1.0))];
        assert!(matches!(run_session(&events, &cfg()), Err(ControllerError::TimeRegression { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut bad = cfg();
        bad.disposal_timeout = Duration::zero();
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.reward_amount = Tokens::ZERO;
        assert!(bad.validate().is_err());
        assert_eq!(cfg().liveness_bound(), Duration::seconds(53));
    }

    #[test]
    fn effect_log_jsonl() {
        let log = vec![
            (t0(), SideEffect::SetLed(LedPattern::Solid(BinColor::Blue))),
            (t0(), SideEffect::ShowLcd(LcdScreen::NgoMenu)),
            (t0(), SideEffect::CaptureImage),
        ];
        let text = effects_to_jsonl(&log);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], r#"{"at":"2024-03-04T09:00:00Z","effect":"set_led","value":"solid_blue"}"#);
        assert_eq!(lines[1], r#"{"at":"2024-03-04T09:00:00Z","effect":"show_lcd","value":"ngo_menu"}"#);
        assert_eq!(lines[2], r#"{"at":"2024-03-04T09:00:00Z","effect":"capture_image"}"#);
    }

    #[test]
    fn led_names() {
        for name in ["ready", "processing", "error", "solid_blue", "solid_yellow", "solid_brown"] {
            assert_eq!(LedPattern::parse(name).unwrap().as_str(), name);
        }
        assert_eq!(LcdScreen::RewardSent.text(), "Reward sent!");
    }
}
