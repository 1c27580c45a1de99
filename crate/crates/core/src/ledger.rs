//! In-process token ledger used for rewards.
//!
//! Balances are fixed-point with six decimals (one "drop" is 10^-6 tokens),
//! transfers are atomic and every transfer lands in an append-only log that
//! can be replayed against the bootstrap balances.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::NgoId;

pub const DROPS_PER_TOKEN: u64 = 1_000_000;

/// Default funding of the system wallet at bootstrap.
pub const DEFAULT_SYSTEM_FUNDING: Tokens = Tokens(100 * DROPS_PER_TOKEN);

pub const SYSTEM_WALLET_LABEL: &str = "itrash";

const QR_PREFIX: &str = "itrash://wallet/";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("insufficient funds in {address}: balance {balance}, requested {requested}")]
    InsufficientFunds {
        address: Address,
        balance: Tokens,
        requested: Tokens,
    },
    #[error("unknown address {0}")]
    UnknownAddress(Address),
    #[error("transfer amount must be positive")]
    NonPositiveAmount,
    #[error("source and destination are the same wallet {0}")]
    SelfTransfer(Address),
    #[error("memo `{0}` was already used by an earlier transfer")]
    DuplicateMemo(String),
    #[error("address {0} is already registered")]
    DuplicateAddress(Address),
    #[error("wallet label must not be empty")]
    EmptyLabel,
    #[error("no wallet labelled `{0}`")]
    UnknownLabel(String),
    #[error("malformed QR payload `{0}`")]
    MalformedPayload(String),
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
    #[error("invalid token amount `{0}`")]
    InvalidAmount(String),
    #[error("remote ledger not available: {0}")]
    Remote(String),
}

/// Token quantity in drops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tokens(u64);

impl Tokens {
    pub const ZERO: Tokens = Tokens(0);

    pub const fn from_drops(drops: u64) -> Self {
        Tokens(drops)
    }

    pub const fn drops(self) -> u64 {
        self.0
    }

    pub const fn whole(tokens: u64) -> Self {
        Tokens(tokens * DROPS_PER_TOKEN)
    }

    pub fn checked_add(self, other: Tokens) -> Option<Tokens> {
        self.0.checked_add(other.0).map(Tokens)
    }

    pub fn checked_sub(self, other: Tokens) -> Option<Tokens> {
        self.0.checked_sub(other.0).map(Tokens)
    }

    pub fn checked_mul(self, n: u64) -> Option<Tokens> {
        self.0.checked_mul(n).map(Tokens)
    }
}

impl fmt::Display for Tokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / DROPS_PER_TOKEN, self.0 % DROPS_PER_TOKEN)
    }
}

impl FromStr for Tokens {
    type Err = LedgerError;

    /// Parses decimal text with at most six fractional digits, e.g. `0.01`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LedgerError::InvalidAmount(s.to_string());
        let s = s.trim();
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if frac.len() > 6
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_drops: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<6}").parse().map_err(|_| bad())?
        };
        whole
            .checked_mul(DROPS_PER_TOKEN)
            .and_then(|d| d.checked_add(frac_drops))
            .map(Tokens)
            .ok_or_else(bad)
    }
}

impl Serialize for Tokens {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tokens {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Ledger account address: `r` followed by 1..=34 ASCII alphanumerics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Address(String);

impl Address {
    pub fn parse(raw: &str) -> Result<Self, LedgerError> {
        let rest = raw
            .strip_prefix('r')
            .ok_or_else(|| LedgerError::InvalidAddress(raw.to_string()))?;
        if rest.is_empty() || rest.len() > 34 || !rest.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(LedgerError::InvalidAddress(raw.to_string()));
        }
        Ok(Address(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Address {
    type Error = LedgerError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Address::parse(&value)
    }
}

impl From<Address> for String {
    fn from(a: Address) -> String {
        a.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Extracts the wallet address from a scanned `itrash://wallet/<address>` code.
pub fn parse_qr(payload: &str) -> Result<Address, LedgerError> {
    let malformed = || LedgerError::MalformedPayload(payload.to_string());
    let raw = payload.trim().strip_prefix(QR_PREFIX).ok_or_else(malformed)?;
    Address::parse(raw).map_err(|_| malformed())
}

pub fn encode_qr(address: &Address) -> String {
    format!("{QR_PREFIX}{address}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    pub address: Address,
    pub balance: Tokens,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub tx_id: String,
    pub from: Address,
    pub to: Address,
    pub amount: Tokens,
    #[serde(with = "crate::domain::utc_seconds")]
    pub time: DateTime<Utc>,
    /// Session record id for rewards; also the idempotency key.
    pub memo: Option<String>,
}

/// Operations a reward backend must support. The in-process [`Ledger`]
/// implements it; [`RemoteLedger`] is the placeholder for a network client.
pub trait LedgerPort {
    fn create_wallet(&mut self, label: &str, initial_balance: Tokens) -> Result<Wallet, LedgerError>;
    fn transfer(
        &mut self,
        from: &Address,
        to: &Address,
        amount: Tokens,
        memo: Option<&str>,
        time: DateTime<Utc>,
    ) -> Result<Transfer, LedgerError>;
    fn balance(&self, address: &Address) -> Result<Tokens, LedgerError>;
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    wallets: BTreeMap<Address, Wallet>,
    genesis: BTreeMap<Address, Tokens>,
    log: Vec<Transfer>,
    memos: HashSet<String>,
    next_address: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// System wallet funded with `funding` plus four empty NGO wallets.
    pub fn bootstrap(funding: Tokens) -> Self {
        let mut ledger = Ledger::new();
        ledger
            .create_wallet(SYSTEM_WALLET_LABEL, funding)
            .expect("fresh ledger accepts the system wallet");
        for ngo in NgoId::ALL {
            ledger
                .create_wallet(&ngo.wallet_label(), Tokens::ZERO)
                .expect("fresh ledger accepts NGO wallets");
        }
        ledger
    }

    fn fresh_address(&mut self) -> Address {
        loop {
            self.next_address += 1;
            // splitmix64 scramble so addresses do not look sequential
            let mut z = self.next_address.wrapping_add(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            let addr = Address(format!("r{z:016X}{:04}", self.next_address % 10_000));
            if !self.wallets.contains_key(&addr) {
                return addr;
            }
        }
    }

    /// Registers a wallet whose address is known from outside (a scanned QR
    /// code). Unlike [`LedgerPort::create_wallet`] the balance starts at zero
    /// and does not count as bootstrap funding.
    pub fn register_external(&mut self, address: Address, label: &str) -> Result<Wallet, LedgerError> {
        if label.is_empty() {
            return Err(LedgerError::EmptyLabel);
        }
        if self.wallets.contains_key(&address) {
            return Err(LedgerError::DuplicateAddress(address));
        }
        let wallet = Wallet {
            address: address.clone(),
            balance: Tokens::ZERO,
            label: label.to_string(),
        };
        self.genesis.insert(address.clone(), Tokens::ZERO);
        self.wallets.insert(address, wallet.clone());
        Ok(wallet)
    }

    pub fn wallet(&self, address: &Address) -> Option<&Wallet> {
        self.wallets.get(address)
    }

    pub fn wallet_by_label(&self, label: &str) -> Option<&Wallet> {
        self.wallets.values().find(|w| w.label == label)
    }

    pub fn address_of(&self, label: &str) -> Result<Address, LedgerError> {
        self.wallet_by_label(label)
            .map(|w| w.address.clone())
            .ok_or_else(|| LedgerError::UnknownLabel(label.to_string()))
    }

    pub fn wallets(&self) -> impl Iterator<Item = &Wallet> {
        self.wallets.values()
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.log
    }

    pub fn total_supply(&self) -> u128 {
        self.wallets.values().map(|w| u128::from(w.balance.drops())).sum()
    }

    /// Balances obtained by applying the transfer log to the bootstrap
    /// balances from scratch. Equal to the live balances when the log is
    /// consistent.
    pub fn replay_balances(&self) -> Result<BTreeMap<Address, Tokens>, LedgerError> {
        let mut balances = self.genesis.clone();
        for tx in &self.log {
            let from = balances
                .get_mut(&tx.from)
                .ok_or_else(|| LedgerError::UnknownAddress(tx.from.clone()))?;
            *from = from.checked_sub(tx.amount).ok_or_else(|| LedgerError::InsufficientFunds {
                address: tx.from.clone(),
                balance: *from,
                requested: tx.amount,
            })?;
            let to = balances
                .get_mut(&tx.to)
                .ok_or_else(|| LedgerError::UnknownAddress(tx.to.clone()))?;
            *to = to.checked_add(tx.amount).ok_or(LedgerError::NonPositiveAmount)?;
        }
        Ok(balances)
    }

    pub fn balances(&self) -> BTreeMap<Address, Tokens> {
        self.wallets.iter().map(|(a, w)| (a.clone(), w.balance)).collect()
    }

    /// Transfer log as JSON lines.
    pub fn transfers_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|t| serde_json::to_string(t).expect("transfer serialization is infallible") + "\n")
            .collect()
    }
}

impl LedgerPort for Ledger {
    fn create_wallet(&mut self, label: &str, initial_balance: Tokens) -> Result<Wallet, LedgerError> {
        if label.is_empty() {
            return Err(LedgerError::EmptyLabel);
        }
        let address = self.fresh_address();
        let wallet = Wallet {
            address: address.clone(),
            balance: initial_balance,
            label: label.to_string(),
        };
        self.genesis.insert(address.clone(), initial_balance);
        self.wallets.insert(address, wallet.clone());
        Ok(wallet)
    }

    fn transfer(
        &mut self,
        from: &Address,
        to: &Address,
        amount: Tokens,
        memo: Option<&str>,
        time: DateTime<Utc>,
    ) -> Result<Transfer, LedgerError> {
        if amount == Tokens::ZERO {
            return Err(LedgerError::NonPositiveAmount);
        }
        if from == to {
            return Err(LedgerError::SelfTransfer(from.clone()));
        }
        let source = self
            .wallets
            .get(from)
            .ok_or_else(|| LedgerError::UnknownAddress(from.clone()))?;
        if !self.wallets.contains_key(to) {
            return Err(LedgerError::UnknownAddress(to.clone()));
        }
        if let Some(m) = memo {
            if self.memos.contains(m) {
                return Err(LedgerError::DuplicateMemo(m.to_string()));
            }
        }
        let debited = source
            .balance
            .checked_sub(amount)
            .ok_or_else(|| LedgerError::InsufficientFunds {
                address: from.clone(),
                balance: source.balance,
                requested: amount,
            })?;
        let credited = self.wallets[to]
            .balance
            .checked_add(amount)
            .ok_or_else(|| LedgerError::InvalidAmount(amount.to_string()))?;

        // all checks passed; apply both legs
        self.wallets.get_mut(from).expect("checked").balance = debited;
        self.wallets.get_mut(to).expect("checked").balance = credited;
        let tx = Transfer {
            tx_id: format!("tx-{:08}", self.log.len() + 1),
            from: from.clone(),
            to: to.clone(),
            amount,
            time,
            memo: memo.map(str::to_string),
        };
        if let Some(m) = memo {
            self.memos.insert(m.to_string());
        }
        self.log.push(tx.clone());
        Ok(tx)
    }

    fn balance(&self, address: &Address) -> Result<Tokens, LedgerError> {
        self.wallets
            .get(address)
            .map(|w| w.balance)
            .ok_or_else(|| LedgerError::UnknownAddress(address.clone()))
    }
}

/// Ledger shared between the controller runtime (single writer) and readers.
pub type SharedLedger = Arc<RwLock<Ledger>>;

/// Placeholder for a client talking to a real network. Every call fails
/// until a network client is wired in.
#[derive(Debug, Clone)]
pub struct RemoteLedger {
    pub endpoint: String,
}

impl RemoteLedger {
    fn unavailable(&self) -> LedgerError {
        LedgerError::Remote(format!("no network client configured for {}", self.endpoint))
    }
}

impl LedgerPort for RemoteLedger {
    fn create_wallet(&mut self, _label: &str, _initial_balance: Tokens) -> Result<Wallet, LedgerError> {
        Err(self.unavailable())
    }

    fn transfer(
        &mut self,
        _from: &Address,
        _to: &Address,
        _amount: Tokens,
        _memo: Option<&str>,
        _time: DateTime<Utc>,
    ) -> Result<Transfer, LedgerError> {
        Err(self.unavailable())
    }

    fn balance(&self, _address: &Address) -> Result<Tokens, LedgerError> {
        Err(self.unavailable())
    }
}
