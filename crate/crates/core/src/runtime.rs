//! Controller runtime: owns the live state and carries out the effects that
//! [`step`] asks for against the devices, classifier, ledger and store.
//!
//! A [`Kiosk`] is the single consumer of controller events. Callers that
//! also need scripted stimuli and ticks use [`Simulation`], which pairs a
//! kiosk with a [`DeviceSim`].

use std::collections::VecDeque;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Classifier;
use crate::controller::{
    step, ControllerConfig, ControllerError, ControllerEvent, ControllerState, LcdScreen, LedPattern,
    RewardDestination, SideEffect, TimedEvent,
};
use crate::device::{Camera, DeviceError, DeviceSim, Lcd, LedStrip, SimDevices, Stimulus};
use crate::domain::{BinColor, ClassificationOutcome, NgoId};
use crate::ledger::{parse_qr, Address, LedgerError, LedgerPort, SharedLedger, Transfer, SYSTEM_WALLET_LABEL};
use crate::store::SharedStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("event at {at} is earlier than the runtime clock ({now})")]
    TimeRegression { now: DateTime<Utc>, at: DateTime<Utc> },
    #[error("invalid ngo id {0} (expected 1..=4)")]
    InvalidNgo(u32),
    #[error("no active session is waiting for {0}")]
    NoActiveSession(&'static str),
    #[error("malformed QR payload: {0}")]
    InvalidQr(String),
    #[error("reward transfer failed: {0}")]
    RewardFailed(String),
    #[error(transparent)]
    Config(#[from] ControllerError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("controller still in {state} at {at}, past its liveness bound")]
    Stuck { state: String, at: DateTime<Utc> },
}

/// What clients see of the controller at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub state: String,
    pub led: LedPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lcd: Option<LcdScreen>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lcd_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<BinColor>,
    pub time: DateTime<Utc>,
}

/// Problems met while carrying out effects. The transition itself always
/// happens; these are reported and logged.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Classifier(String),
    Reward(String),
    Store(String),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Classifier(m) => write!(f, "classifier: {m}"),
            Fault::Reward(m) => write!(f, "reward: {m}"),
            Fault::Store(m) => write!(f, "store: {m}"),
        }
    }
}

/// Result of one [`Kiosk::dispatch`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dispatch {
    /// One snapshot after each transition that changed the state or the
    /// LED/LCD, in order.
    pub updates: Vec<StateSnapshot>,
    pub effects: Vec<SideEffect>,
    pub transfers: Vec<Transfer>,
    pub faults: Vec<Fault>,
}

pub struct Kiosk {
    config: ControllerConfig,
    state: ControllerState,
    devices: SimDevices,
    classifier: Box<dyn Classifier + Send>,
    ledger: SharedLedger,
    store: SharedStore,
    system_wallet: Address,
    now: DateTime<Utc>,
    effect_log: Vec<(DateTime<Utc>, SideEffect)>,
}

impl fmt::Debug for Kiosk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kiosk")
            .field("state", &self.state.name())
            .field("now", &self.now)
            .finish_non_exhaustive()
    }
}

impl Kiosk {
    pub fn new(
        config: ControllerConfig,
        classifier: Box<dyn Classifier + Send>,
        ledger: SharedLedger,
        store: SharedStore,
        start: DateTime<Utc>,
    ) -> Result<Self, RuntimeError> {
        config.validate()?;
        let system_wallet = ledger.read().expect("ledger lock").address_of(SYSTEM_WALLET_LABEL)?;
        Ok(Kiosk {
            config,
            state: ControllerState::Idle,
            devices: SimDevices::default(),
            classifier,
            ledger,
            store,
            system_wallet,
            now: start,
            effect_log: Vec::new(),
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn devices(&self) -> &SimDevices {
        &self.devices
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.now
    }

    pub fn ledger(&self) -> &SharedLedger {
        &self.ledger
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }

    pub fn effect_log(&self) -> &[(DateTime<Utc>, SideEffect)] {
        &self.effect_log
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let lcd = self.devices.lcd.current().filter(|_| !self.state.is_idle());
        StateSnapshot {
            state: self.state.name().to_string(),
            led: self.devices.led.current(),
            lcd,
            lcd_text: lcd.map(|s| s.text().to_string()),
            deadline: self.state.deadline(),
            predicted: match &self.state {
                ControllerState::AwaitDisposal { predicted, .. } => Some(*predicted),
                _ => None,
            },
            time: self.now,
        }
    }

    /// Feeds one event through the controller and performs the resulting
    /// effects. Classifier results re-enter as `Classified` events at the
    /// same instant.
    pub fn dispatch(&mut self, event: TimedEvent) -> Result<Dispatch, RuntimeError> {
        if event.at < self.now {
            return Err(RuntimeError::TimeRegression {
                now: self.now,
                at: event.at,
            });
        }
        self.now = event.at;
        let mut out = Dispatch::default();
        let mut queue = VecDeque::from([event.event]);
        while let Some(ev) = queue.pop_front() {
            let before = self.state.name();
            let state = std::mem::replace(&mut self.state, ControllerState::Idle);
            let (next, effects) = step(state, &ev, &self.config, self.now);
            self.state = next;
            let mut visible = self.state.name() != before;
            for effect in effects {
                if let Some(follow_up) = self.apply(&effect, &mut out) {
                    queue.push_back(follow_up);
                }
                visible |= matches!(effect, SideEffect::SetLed(_) | SideEffect::ShowLcd(_));
                self.effect_log.push((self.now, effect.clone()));
                out.effects.push(effect);
            }
            if visible {
                out.updates.push(self.snapshot());
            }
        }
        Ok(out)
    }

    fn apply(&mut self, effect: &SideEffect, out: &mut Dispatch) -> Option<ControllerEvent> {
        let now = self.now;
        match effect {
            SideEffect::CaptureImage => self.devices.camera.trigger(now),
            SideEffect::SetLed(p) => self.devices.led.set_pattern(*p, now),
            SideEffect::ShowLcd(s) => self.devices.lcd.show(*s, now),
            SideEffect::RunClassifier(image) => {
                let outcome = self.classifier.classify(image).unwrap_or_else(|e| {
                    log::warn!("classifier failed, treating image as invalid: {e}");
                    out.faults.push(Fault::Classifier(e.to_string()));
                    ClassificationOutcome::Invalid
                });
                return Some(ControllerEvent::Classified(outcome));
            }
            SideEffect::PersistRecord(r) => {
                if let Err(e) = self.store.write().expect("store lock").append(r.clone()) {
                    log::error!("could not persist record {}: {e}", r.record_id());
                    out.faults.push(Fault::Store(e.to_string()));
                }
            }
            SideEffect::IssueReward {
                destination,
                amount,
                memo,
            } => match self.pay(destination, *amount, memo) {
                Ok(tx) => out.transfers.push(tx),
                Err(e) => {
                    log::error!("reward for session {memo} not paid: {e}");
                    out.faults.push(Fault::Reward(e.to_string()));
                }
            },
        }
        None
    }

    fn pay(
        &mut self,
        destination: &RewardDestination,
        amount: crate::ledger::Tokens,
        memo: &str,
    ) -> Result<Transfer, LedgerError> {
        let mut ledger = self.ledger.write().expect("ledger lock");
        let to = match destination {
            RewardDestination::Ngo(n) => ledger.address_of(&n.wallet_label())?,
            RewardDestination::User(addr) => {
                if ledger.wallet(addr).is_none() {
                    ledger.register_external(addr.clone(), "user")?;
                }
                addr.clone()
            }
        };
        ledger.transfer(&self.system_wallet, &to, amount, Some(memo), self.now)
    }

    /// The donation endpoint: selects NGO `ngo` for the session waiting in
    /// the donate menu and returns the confirmation text.
    pub fn donate(&mut self, ngo: u32, now: DateTime<Utc>) -> Result<(&'static str, Dispatch), RuntimeError> {
        let ngo = NgoId::new(ngo).map_err(|_| RuntimeError::InvalidNgo(ngo))?;
        if !matches!(self.state, ControllerState::DonateMenu { .. }) {
            return Err(RuntimeError::NoActiveSession("a donation"));
        }
        let d = self.dispatch(TimedEvent::new(now.max(self.now), ControllerEvent::NgoSelected(ngo)))?;
        reward_confirmation(d)
    }

    /// A wallet QR code shown to the camera while the reward prompt is up.
    pub fn submit_qr(&mut self, payload: &str, now: DateTime<Utc>) -> Result<(&'static str, Dispatch), RuntimeError> {
        parse_qr(payload).map_err(|e| RuntimeError::InvalidQr(e.to_string()))?;
        if !matches!(self.state, ControllerState::RewardPrompt { .. }) {
            return Err(RuntimeError::NoActiveSession("a wallet QR code"));
        }
        let d = self.dispatch(TimedEvent::new(
            now.max(self.now),
            ControllerEvent::QrScanned(payload.to_string()),
        ))?;
        reward_confirmation(d)
    }
}

fn reward_confirmation(d: Dispatch) -> Result<(&'static str, Dispatch), RuntimeError> {
    if let Some(Fault::Reward(m)) = d.faults.iter().find(|f| matches!(f, Fault::Reward(_))) {
        return Err(RuntimeError::RewardFailed(m.clone()));
    }
    Ok((LcdScreen::RewardSent.text(), d))
}

/// A kiosk driven by simulated devices and a virtual clock.
#[derive(Debug)]
pub struct Simulation {
    pub kiosk: Kiosk,
    pub sim: DeviceSim,
}

impl Simulation {
    pub fn new(kiosk: Kiosk) -> Self {
        let sim = DeviceSim::new(kiosk.now());
        Simulation { kiosk, sim }
    }

    pub fn inject(&mut self, s: &Stimulus) -> Result<crate::device::Ack, RuntimeError> {
        Ok(self.sim.inject_stimulus(s)?)
    }

    /// Advances the virtual clock by `d`, dispatching every due stimulus
    /// and tick.
    pub fn advance(&mut self, d: chrono::Duration) -> Result<Dispatch, RuntimeError> {
        let mut all = Dispatch::default();
        for ev in self.sim.advance_clock(d) {
            merge(&mut all, self.kiosk.dispatch(ev)?);
        }
        Ok(all)
    }

    /// Runs until `t`. While the controller is idle and no stimulus is due
    /// the clock jumps instead of ticking, since ticks would change nothing.
    pub fn run_until(&mut self, t: DateTime<Utc>) -> Result<Dispatch, RuntimeError> {
        let mut all = Dispatch::default();
        let mut busy_since: Option<DateTime<Utc>> = None;
        while self.sim.now() < t {
            if self.kiosk.state().is_idle() {
                busy_since = None;
                let target = self.sim.next_due().map_or(t, |due| due.min(t));
                if target > self.sim.now() {
                    for ev in self.sim.jump_to(target)? {
                        merge(&mut all, self.kiosk.dispatch(ev)?);
                    }
                    continue;
                }
            }
            let started = *busy_since.get_or_insert(self.sim.now());
            let step = self.sim.tick_interval().min(t - self.sim.now());
            merge(&mut all, self.advance(step)?);
            // sessions end within the liveness bound; twice that is a bug
            if !self.kiosk.state().is_idle() && self.sim.now() - started > self.kiosk.config().liveness_bound() * 2 {
                return Err(RuntimeError::Stuck {
                    state: self.kiosk.state().name().to_string(),
                    at: self.sim.now(),
                });
            }
        }
        Ok(all)
    }

    /// Ticks until the controller is idle, failing once the liveness bound
    /// is exceeded.
    pub fn settle(&mut self) -> Result<Dispatch, RuntimeError> {
        let mut all = Dispatch::default();
        let limit = self.sim.now() + self.kiosk.config().liveness_bound() + self.sim.tick_interval();
        while !self.kiosk.state().is_idle() {
            if self.sim.now() > limit {
                return Err(RuntimeError::Stuck {
                    state: self.kiosk.state().name().to_string(),
                    at: self.sim.now(),
                });
            }
            let step = self.sim.tick_interval();
            merge(&mut all, self.advance(step)?);
        }
        Ok(all)
    }
}

fn merge(into: &mut Dispatch, d: Dispatch) {
    into.updates.extend(d.updates);
    into.effects.extend(d.effects);
    into.transfers.extend(d.transfers);
    into.faults.extend(d.faults);
}
