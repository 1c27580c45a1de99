//! The controller thread: sole consumer of every mutating request.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use chrono::Duration;
use tokio::sync::{broadcast, oneshot, watch};

use itrash_core::device::{Ack, Stimulus};
use itrash_core::ledger::SharedLedger;
use itrash_core::runtime::{Dispatch, Kiosk, RuntimeError, Simulation, StateSnapshot};
use itrash_core::store::SharedStore;

/// How the virtual clock moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Follows the wall clock, ticking every 100 ms.
    Realtime,
    /// Moves only on explicit advance requests; for tests and scripted demos.
    Manual,
}

/// What a stimulus request carries.
#[derive(Debug, Clone)]
pub enum StimulusInput {
    Raw { channel: String, payload: Option<String> },
    Image(Vec<u8>),
}

type Reply<T> = oneshot::Sender<Result<T, RuntimeError>>;

enum Command {
    Stimulus(StimulusInput, Reply<Ack>),
    Donate(u32, Reply<&'static str>),
    Qr(String, Reply<&'static str>),
    Advance(Duration, Reply<StateSnapshot>),
}

#[derive(Debug, thiserror::Error)]
pub enum ActorError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("controller thread has stopped")]
    Gone,
}

/// Cloneable front of the controller thread plus read-only views.
#[derive(Clone)]
pub struct ControllerHandle {
    commands: mpsc::Sender<Command>,
    snapshot: watch::Receiver<StateSnapshot>,
    updates: broadcast::Sender<StateSnapshot>,
    pub store: SharedStore,
    pub ledger: SharedLedger,
    pub clock: ClockMode,
}

impl ControllerHandle {
    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ActorError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).map_err(|_| ActorError::Gone)?;
        Ok(rx.await.map_err(|_| ActorError::Gone)??)
    }

    pub async fn stimulus(&self, input: StimulusInput) -> Result<Ack, ActorError> {
        self.call(|r| Command::Stimulus(input, r)).await
    }

    pub async fn donate(&self, ngo: u32) -> Result<&'static str, ActorError> {
        self.call(|r| Command::Donate(ngo, r)).await
    }

    pub async fn qr(&self, payload: String) -> Result<&'static str, ActorError> {
        self.call(|r| Command::Qr(payload, r)).await
    }

    pub async fn advance(&self, by: Duration) -> Result<StateSnapshot, ActorError> {
        self.call(|r| Command::Advance(by, r)).await
    }

    pub fn snapshot(&self) -> StateSnapshot {
        self.snapshot.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StateSnapshot> {
        self.updates.subscribe()
    }
}

struct Actor {
    sim: Simulation,
    snapshot: watch::Sender<StateSnapshot>,
    updates: broadcast::Sender<StateSnapshot>,
}

impl Actor {
    fn publish(&mut self, d: Dispatch) {
        for u in d.updates {
            // no subscribers is fine
            let _ = self.updates.send(u);
        }
        for f in d.faults {
            log::warn!("{f}");
        }
        self.snapshot.send_replace(self.sim.kiosk.snapshot());
    }

    fn advance(&mut self, by: Duration) -> Result<(), RuntimeError> {
        let d = self.sim.advance(by)?;
        self.publish(d);
        Ok(())
    }

    fn handle(&mut self, cmd: Command) {
        let now = self.sim.sim.now();
        match cmd {
            Command::Stimulus(input, reply) => {
                let ack = match input {
                    StimulusInput::Raw { channel, payload } => self.sim.sim.inject_raw(now, &channel, payload),
                    StimulusInput::Image(bytes) => self.sim.sim.inject_stimulus(&Stimulus::camera(now, &bytes)),
                };
                let result = ack.map_err(RuntimeError::from).and_then(|ack| {
                    // deliver right away rather than on the next tick
                    self.advance(Duration::zero())?;
                    Ok(ack)
                });
                let _ = reply.send(result);
            }
            Command::Donate(ngo, reply) => {
                let result = self.sim.kiosk.donate(ngo, now).map(|(msg, d)| {
                    self.publish(d);
                    msg
                });
                let _ = reply.send(result);
            }
            Command::Qr(payload, reply) => {
                let result = self.sim.kiosk.submit_qr(&payload, now).map(|(msg, d)| {
                    self.publish(d);
                    msg
                });
                let _ = reply.send(result);
            }
            Command::Advance(by, reply) => {
                let result = self.advance(by).map(|_| self.sim.kiosk.snapshot());
                let _ = reply.send(result);
            }
        }
    }
}

/// Starts the controller thread. It stops once every handle is dropped.
pub fn spawn_controller(kiosk: Kiosk, clock: ClockMode) -> (ControllerHandle, JoinHandle<()>) {
    let (tx, rx) = mpsc::channel::<Command>();
    let (snap_tx, snap_rx) = watch::channel(kiosk.snapshot());
    let (updates, _) = broadcast::channel(1024);
    let handle = ControllerHandle {
        commands: tx,
        snapshot: snap_rx,
        updates: updates.clone(),
        store: kiosk.store().clone(),
        ledger: kiosk.ledger().clone(),
        clock,
    };
    let mut actor = Actor {
        sim: Simulation::new(kiosk),
        snapshot: snap_tx,
        updates,
    };
    let join = thread::Builder::new()
        .name("controller".into())
        .spawn(move || {
            let tick = actor.sim.sim.tick_interval().to_std().expect("positive tick");
            let wall_start = Instant::now();
            let sim_start = actor.sim.sim.now();
            loop {
                let cmd = match clock {
                    ClockMode::Manual => match rx.recv() {
                        Ok(c) => Some(c),
                        Err(_) => break,
                    },
                    ClockMode::Realtime => match rx.recv_timeout(tick) {
                        Ok(c) => Some(c),
                        Err(RecvTimeoutError::Timeout) => None,
                        Err(RecvTimeoutError::Disconnected) => break,
                    },
                };
                if clock == ClockMode::Realtime {
                    let target = sim_start + Duration::from_std(wall_start.elapsed()).unwrap_or_default();
                    let behind = target - actor.sim.sim.now();
                    if behind >= actor.sim.sim.tick_interval() {
                        if let Err(e) = actor.advance(behind) {
                            log::error!("clock advance failed: {e}");
                        }
                    }
                }
                if let Some(cmd) = cmd {
                    actor.handle(cmd);
                }
            }
            log::info!("controller thread stopped");
        })
        .expect("spawn controller thread");
    (handle, join)
}
