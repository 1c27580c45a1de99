//! Deterministic trace generation and replay.
//!
//! A [`ScenarioSpec`] lists how many items fall into each
//! (real, predicted, thrown) cell. [`generate_trace`] turns it into device
//! stimuli spread over the experiment days, and [`replay`] runs those
//! stimuli through the full stack and returns the resulting store, with
//! `bin_real` filled in from the ground truth carried by each item image.

use std::fs;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ScriptedClassifier;
use crate::controller::ControllerConfig;
use crate::device::{Channel, Stimulus};
use crate::domain::{BinColor, ClassificationOutcome, DisposalRecord, NgoId, SessionOutcome};
use crate::item::ItemTag;
use crate::ledger::{encode_qr, Address, Ledger, SharedLedger, Tokens, DEFAULT_SYSTEM_FUNDING};
use crate::runtime::{Kiosk, RuntimeError, Simulation};
use crate::store::{EventStore, SharedStore, StoreError};

/// Sessions are placed one per minute slot inside an hour, so no hour can
/// hold more than this many on one day.
const SESSIONS_PER_HOUR: usize = 60;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("inconsistent scenario: {0}")]
    InconsistentSpec(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Full controller: classify, light the LED, reward.
    Itrash,
    /// Plain trashcan: only which bin the item went into is recorded.
    Control,
}

/// Number of items with this ground truth, prediction and chosen bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub real: BinColor,
    pub predicted: BinColor,
    pub thrown: BinColor,
    pub count: u32,
}

/// Items shown to the camera but never thrown in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndisposedCell {
    pub predicted: BinColor,
    /// `None` for objects that belong in no bin.
    #[serde(default)]
    pub real: Option<BinColor>,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Donation {
    pub ngo: NgoId,
    pub count: u32,
}

/// How many correctly disposed items end with a claimed or donated reward;
/// the rest go unclaimed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardPlan {
    #[serde(default)]
    pub qr_claims: u32,
    #[serde(default)]
    pub donations: Vec<Donation>,
}

impl RewardPlan {
    fn total(&self) -> u32 {
        self.qr_claims + self.donations.iter().map(|d| d.count).sum::<u32>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub undisposed: Vec<UndisposedCell>,
    #[serde(default)]
    pub rewards: RewardPlan,
    /// Must equal the number of items in `cells` plus `undisposed`.
    pub declared_total: u32,
    pub first_day: NaiveDate,
    pub days: u32,
    pub day_start: NaiveTime,
    pub day_length_hours: u32,
    /// One relative weight per operating hour.
    pub hourly_weights: Vec<f64>,
}

/// Uniform weights with the 11:00-14:00 hours doubled, for a day starting
/// at 08:00 and lasting 12 hours.
fn midday_peak_weights() -> Vec<f64> {
    (8..20).map(|h| if (11..14).contains(&h) { 2.0 } else { 1.0 }).collect()
}

fn cell(real: BinColor, predicted: BinColor, thrown: BinColor, count: u32) -> Cell {
    Cell {
        real,
        predicted,
        thrown,
        count,
    }
}

impl ScenarioSpec {
    fn five_day_week(name: &str, kind: ScenarioKind) -> Self {
        ScenarioSpec {
            name: name.to_string(),
            kind,
            cells: Vec::new(),
            undisposed: Vec::new(),
            rewards: RewardPlan::default(),
            declared_total: 0,
            first_day: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            days: 5,
            day_start: NaiveTime::from_hms_opt(8, 0, 0).expect("valid time"),
            day_length_hours: 12,
            hourly_weights: midday_peak_weights(),
        }
    }

    /// The smart trashcan week: 67 disposed items plus 12 that were shown
    /// to the camera and taken away again.
    pub fn canonical_itrash() -> Self {
        use BinColor::*;
        let mut s = Self::five_day_week("canonical_itrash", ScenarioKind::Itrash);
        s.cells = vec![
            cell(Brown, Brown, Brown, 9),
            cell(Brown, Brown, Blue, 3),
            cell(Brown, Brown, Yellow, 2),
            cell(Blue, Blue, Blue, 9),
            cell(Blue, Blue, Brown, 2),
            cell(Yellow, Yellow, Yellow, 20),
            cell(Yellow, Yellow, Brown, 3),
            cell(Yellow, Yellow, Blue, 7),
            cell(Blue, Brown, Brown, 2),
            cell(Blue, Brown, Blue, 2),
            cell(Yellow, Brown, Brown, 2),
            cell(Yellow, Brown, Yellow, 1),
            cell(Blue, Yellow, Yellow, 2),
            cell(Yellow, Blue, Blue, 3),
        ];
        s.undisposed = BinColor::ALL
            .iter()
            .map(|&predicted| UndisposedCell {
                predicted,
                real: None,
                count: 4,
            })
            .collect();
        s.rewards = RewardPlan {
            qr_claims: 0,
            donations: vec![
                Donation {
                    ngo: NgoId::new(1).expect("valid"),
                    count: 1,
                },
                Donation {
                    ngo: NgoId::new(3).expect("valid"),
                    count: 1,
                },
            ],
        };
        s.declared_total = 79;
        s
    }

    /// The ordinary trashcan week: 89 items, prediction mirrors the bin.
    pub fn canonical_control() -> Self {
        use BinColor::*;
        let mut s = Self::five_day_week("canonical_control", ScenarioKind::Control);
        let flows = [
            (Brown, Brown, 9),
            (Brown, Blue, 6),
            (Brown, Yellow, 3),
            (Blue, Blue, 11),
            (Blue, Brown, 15),
            (Blue, Yellow, 10),
            (Yellow, Yellow, 22),
            (Yellow, Blue, 6),
            (Yellow, Brown, 7),
        ];
        s.cells = flows.iter().map(|&(real, thrown, n)| cell(real, thrown, thrown, n)).collect();
        s.declared_total = 89;
        s
    }

    /// An empty week with the canonical calendar.
    pub fn empty(kind: ScenarioKind) -> Self {
        Self::five_day_week("empty", kind)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "canonical_itrash" => Some(Self::canonical_itrash()),
            "canonical_control" => Some(Self::canonical_control()),
            _ => None,
        }
    }

    /// A built-in scenario name or a path to a JSON scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ReplayError> {
        match Self::by_name(name_or_path) {
            Some(s) => Ok(s),
            None => Ok(serde_json::from_str(&fs::read_to_string(name_or_path)?)?),
        }
    }

    pub fn disposed_count(&self) -> u32 {
        self.cells.iter().map(|c| c.count).sum()
    }

    pub fn undisposed_count(&self) -> u32 {
        self.undisposed.iter().map(|c| c.count).sum()
    }

    fn followed_correct(&self) -> u32 {
        self.cells
            .iter()
            .filter(|c| c.real == c.predicted && c.predicted == c.thrown)
            .map(|c| c.count)
            .sum()
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |m: String| Err(ReplayError::InconsistentSpec(m));
        let total = self.disposed_count() + self.undisposed_count();
        if total != self.declared_total {
            return bad(format!("cells hold {total} items but {} are declared", self.declared_total));
        }
        if self.hourly_weights.len() != self.day_length_hours as usize {
            return bad(format!(
                "{} hourly weights for a {} hour day",
                self.hourly_weights.len(),
                self.day_length_hours
            ));
        }
        if self.hourly_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("hourly weights must be finite and non-negative".into());
        }
        let start_h = self.day_start.signed_duration_since(NaiveTime::MIN).num_hours();
        if start_h + i64::from(self.day_length_hours) > 24 {
            return bad("operating day runs past midnight".into());
        }
        if total > 0 && (self.days == 0 || self.hourly_weights.iter().sum::<f64>() <= 0.0) {
            return bad("items but no operating time to place them in".into());
        }
        if self.rewards.total() > self.followed_correct() {
            return bad(format!(
                "{} rewards planned but only {} items were thrown into the indicated correct bin",
                self.rewards.total(),
                self.followed_correct()
            ));
        }
        if self.kind == ScenarioKind::Control {
            if self.cells.iter().any(|c| c.predicted != c.thrown) {
                return bad("control cells must have predicted == thrown".into());
            }
            if self.undisposed_count() > 0 || self.rewards.total() > 0 {
                return bad("a control trashcan has no camera sessions and no rewards".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub first_day: NaiveDate,
    pub days: u32,
    pub day_start: NaiveTime,
    pub day_length_hours: u32,
    pub sessions: usize,
}

/// Time-ordered device stimuli plus where they came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTrace {
    pub meta: TraceMeta,
    pub stimuli: Vec<Stimulus>,
}

impl EventTrace {
    /// First line `{"meta": ...}`, then one stimulus per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({ "meta": self.meta })).expect("meta serializes");
        out.push('\n');
        out.push_str(&crate::device::script_to_jsonl(&self.stimuli));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ReplayError> {
        #[derive(Deserialize)]
        struct Header {
            meta: TraceMeta,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| ReplayError::MalformedTrace("missing meta line".into()))?,
        )?;
        let stimuli = lines.map(serde_json::from_str).collect::<Result<Vec<Stimulus>, _>>()?;
        if stimuli.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(ReplayError::MalformedTrace("stimuli are not time-ordered".into()));
        }
        Ok(EventTrace {
            meta: header.meta,
            stimuli,
        })
    }
}

/// Integer shares of `total` proportional to `weights`, by largest
/// remainder (ties to the earlier slot).
pub fn apportion(total: u32, weights: &[f64]) -> Vec<u32> {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| f64::from(total) * w / sum).collect();
    let mut shares: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - shares.iter().sum::<u32>();
    for &i in order.iter().take(missing as usize) {
        shares[i] += 1;
    }
    shares
}

#[derive(Debug, Clone, Copy)]
enum Ending {
    WrongBin(BinColor),
    Unclaimed,
    Qr,
    Donate(NgoId),
    Undisposed,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    real: Option<BinColor>,
    predicted: BinColor,
    ending: Ending,
}

fn items(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> (Vec<Item>, Vec<Item>) {
    let mut disposed = Vec::new();
    let mut followed = Vec::new();
    for c in &spec.cells {
        for _ in 0..c.count {
            let item = Item {
                real: Some(c.real),
                predicted: c.predicted,
                ending: if c.thrown == c.predicted {
                    Ending::Unclaimed
                } else {
                    Ending::WrongBin(c.thrown)
                },
            };
            if c.real == c.predicted && c.thrown == c.predicted {
                followed.push(disposed.len());
            }
            disposed.push(item);
        }
    }
    // pick which followed-correct items claim a reward
    followed.shuffle(rng);
    let mut picks = followed.into_iter();
    for _ in 0..spec.rewards.qr_claims {
        disposed[picks.next().expect("validated")].ending = Ending::Qr;
    }
    for d in &spec.rewards.donations {
        for _ in 0..d.count {
            disposed[picks.next().expect("validated")].ending = Ending::Donate(d.ngo);
        }
    }
    let undisposed = spec
        .undisposed
        .iter()
        .flat_map(|u| {
            (0..u.count).map(|_| Item {
                real: u.real,
                predicted: u.predicted,
                ending: Ending::Undisposed,
            })
        })
        .collect();
    disposed.shuffle(rng);
    (disposed, undisposed)
}

/// Whole multiple of 100 ms in `[lo_ms, hi_ms]`.
fn grid_ms(rng: &mut ChaCha8Rng, lo_ms: i64, hi_ms: i64) -> Duration {
    Duration::milliseconds(rng.random_range(lo_ms / 100..=hi_ms / 100) * 100)
}

fn session_stimuli(
    kind: ScenarioKind,
    start: DateTime<Utc>,
    item_no: u64,
    item: &Item,
    rng: &mut ChaCha8Rng,
    user_wallet: &Address,
) -> Vec<Stimulus> {
    let scripted = (kind == ScenarioKind::Itrash).then_some(ClassificationOutcome::Valid(item.predicted));
    let image = ItemTag {
        item: item_no,
        real: item.real,
        scripted,
    }
    .encode();
    let mut out = Vec::new();
    let shown = match kind {
        ScenarioKind::Itrash => {
            out.push(Stimulus::new(start, Channel::main_proximity()));
            start + Duration::milliseconds(300)
        }
        ScenarioKind::Control => start,
    };
    out.push(Stimulus::camera(shown, &image));
    let thrown_at = shown + grid_ms(rng, 1_000, 8_000);
    let bin = match item.ending {
        Ending::Undisposed => return out,
        Ending::WrongBin(b) => b,
        _ => item.predicted,
    };
    out.push(Stimulus::new(thrown_at, Channel::bin(bin)));
    match item.ending {
        Ending::Qr => out.push(Stimulus::with_payload(
            thrown_at + grid_ms(rng, 2_000, 8_000),
            Channel::Qr,
            encode_qr(user_wallet),
        )),
        Ending::Donate(n) => out.push(Stimulus::with_payload(
            thrown_at + Duration::seconds(11) + grid_ms(rng, 0, 20_000),
            Channel::Ngo,
            n.get().to_string(),
        )),
        _ => {}
    }
    out
}

/// Wallet address used for scripted QR claims.
pub fn replay_user_wallet() -> Address {
    Address::parse("rReplayUser1").expect("valid address")
}

/// One session per item. Items are shuffled under `seed`, hours get their
/// share of items from the weights, and each hour's items are dealt to the
/// days in turn so every day carries the same load. Within an hour each
/// session owns a distinct minute.
pub fn generate_trace(spec: &ScenarioSpec, seed: u64) -> Result<EventTrace, ReplayError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (disposed, undisposed) = items(spec, &mut rng);
    let hours = spec.day_length_hours as usize;
    let days = spec.days as usize;

    // (day, hour) -> items
    let mut slots: Vec<Vec<Item>> = vec![Vec::new(); days * hours];
    let mut next_day = 0usize;
    for group in [disposed, undisposed] {
        let shares = apportion(group.len() as u32, &spec.hourly_weights);
        let mut it = group.into_iter();
        for (h, share) in shares.iter().enumerate() {
            for _ in 0..*share {
                slots[next_day * hours + h].push(it.next().expect("shares sum to group size"));
                next_day = (next_day + 1) % days;
            }
        }
    }

    let wallet = replay_user_wallet();
    let mut stimuli = Vec::new();
    let mut sessions = 0usize;
    for day in 0..days {
        let date = spec.first_day + Duration::days(day as i64);
        for h in 0..hours {
            let slot = &slots[day * hours + h];
            if slot.len() > SESSIONS_PER_HOUR {
                return Err(ReplayError::InconsistentSpec(format!(
                    "{} sessions in one hour exceed the {SESSIONS_PER_HOUR} minute slots",
                    slot.len()
                )));
            }
            let hour_start = date.and_time(spec.day_start).and_utc() + Duration::hours(h as i64);
            let mut minutes = index::sample(&mut rng, SESSIONS_PER_HOUR, slot.len()).into_vec();
            minutes.sort_unstable();
            for (item, minute) in slot.iter().zip(minutes) {
                let start = hour_start + Duration::minutes(minute as i64) + grid_ms(&mut rng, 0, 5_000);
                sessions += 1;
                stimuli.extend(session_stimuli(spec.kind, start, sessions as u64, item, &mut rng, &wallet));
            }
        }
    }
    Ok(EventTrace {
        meta: TraceMeta {
            scenario: spec.name.clone(),
            kind: spec.kind,
            seed,
            first_day: spec.first_day,
            days: spec.days,
            day_start: spec.day_start,
            day_length_hours: spec.day_length_hours,
            sessions,
        },
        stimuli,
    })
}

/// Store and ledger after a replay.
#[derive(Debug, Clone)]
pub struct ReplayResult {
    pub store: SharedStore,
    pub ledger: SharedLedger,
}

impl ReplayResult {
    pub fn records(&self) -> Vec<DisposalRecord> {
        self.store.read().expect("store lock").records().to_vec()
    }
}

fn trace_start(trace: &EventTrace) -> DateTime<Utc> {
    let day_start = trace.meta.first_day.and_time(trace.meta.day_start).and_utc();
    trace.stimuli.first().map_or(day_start, |s| s.at.min(day_start))
}

/// Runs a trace through the matching stack and fills in `bin_real` from
/// the item tags.
pub fn replay(trace: &EventTrace) -> Result<ReplayResult, ReplayError> {
    replay_with(trace, ControllerConfig::default(), DEFAULT_SYSTEM_FUNDING)
}

pub fn replay_with(trace: &EventTrace, config: ControllerConfig, funding: Tokens) -> Result<ReplayResult, ReplayError> {
    let ledger: SharedLedger = Arc::new(RwLock::new(Ledger::bootstrap(funding)));
    let store = EventStore::in_memory().shared();
    match trace.meta.kind {
        ScenarioKind::Itrash => {
            let kiosk = Kiosk::new(
                config,
                Box::new(ScriptedClassifier),
                ledger.clone(),
                store.clone(),
                trace_start(trace),
            )?;
            let mut sim = Simulation::new(kiosk);
            for s in &trace.stimuli {
                sim.inject(s)?;
            }
            if let Some(last) = trace.stimuli.last() {
                sim.run_until(last.at + sim.kiosk.config().liveness_bound())?;
            }
            sim.settle()?;
        }
        ScenarioKind::Control => replay_control(trace, &store)?,
    }
    annotate_from_tags(&store, trace_end(trace))?;
    Ok(ReplayResult { store, ledger })
}

fn trace_end(trace: &EventTrace) -> DateTime<Utc> {
    trace.stimuli.last().map_or_else(|| trace_start(trace), |s| s.at)
}

/// The plain trashcan: each camera frame stands for the item, the next bin
/// sensor says where it went. Prediction mirrors the bin.
fn replay_control(trace: &EventTrace, store: &SharedStore) -> Result<(), ReplayError> {
    let mut store = store.write().expect("store lock");
    let mut pending: Option<(DateTime<Utc>, Vec<u8>)> = None;
    for s in &trace.stimuli {
        match (&s.channel, s.to_event().map_err(RuntimeError::from)?) {
            (Channel::Camera, crate::controller::ControllerEvent::ImageCaptured(image)) => {
                pending = Some((s.at, image));
            }
            (Channel::Proximity(crate::device::ProximitySensor::Bin(bin)), _) => {
                let (at, image) = pending
                    .take()
                    .ok_or_else(|| ReplayError::MalformedTrace(format!("bin event at {} without an item", s.at)))?;
                let id = ItemTag::decode(&image).map_or_else(|| format!("ctl-{}", at.timestamp_millis()), |t| format!("ctl-{:05}", t.item));
                let record = DisposalRecord::new(id, &image, at, Some(*bin), Some(*bin), None, SessionOutcome::CorrectUnclaimed)
                    .map_err(|e| ReplayError::MalformedTrace(e.to_string()))?;
                store.append(record)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Stands in for manual review of the stored photos.
fn annotate_from_tags(store: &SharedStore, at: DateTime<Utc>) -> Result<(), ReplayError> {
    let mut store = store.write().expect("store lock");
    let labels: Vec<(String, BinColor)> = store
        .records()
        .iter()
        .filter_map(|r| {
            let real = ItemTag::decode(&r.image_bytes())?.real?;
            Some((r.record_id().to_string(), real))
        })
        .collect();
    for (id, real) in labels {
        store.annotate_real_at(&id, real, at)?;
    }
    Ok(())
}
