//! Domain types: staff levers, delivered services, payer rules, outcome
//! measurements, and their validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::exact::Exact;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(StaffId);
id_type!(ServiceId);
id_type!(ClientId);
id_type!(PayerId);

/// Quality flag recording that the client's treatment plan is complete.
pub const TREATMENT_PLAN_COMPLETE: &str = "treatment_plan_complete";
/// Quality flag recording that a payer authorization is on file.
pub const AUTHORIZATION_PRESENT: &str = "authorization_present";

pub const DEFAULT_CLINICAL_PERCENTAGE: Decimal = Decimal::from_parts(625, 0, 0, false, 3);
pub const DEFAULT_BASE_HOURS_PER_FTE: Decimal = Decimal::from_parts(160, 0, 0, false, 0);
pub const MAX_TOTAL_FTE: Decimal = Decimal::from_parts(15, 0, 0, false, 1);

/// Currency amount held at four fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Deserialize)]
#[serde(from = "Decimal")]
pub struct Money(Decimal);

impl Serialize for Money {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.exact().serialize(s)
    }
}

impl Money {
    pub const ZERO: Money = Money(Decimal::ZERO);

    pub fn new(amount: Decimal) -> Self {
        Money(amount.round_dp_with_strategy(4, RoundingStrategy::MidpointAwayFromZero))
    }

    pub fn amount(&self) -> Decimal {
        self.0
    }

    pub fn exact(&self) -> Exact {
        Exact::from_decimal(self.0)
    }

    /// Presentation rounding: two digits, half away from zero.
    pub fn display(&self) -> String {
        format!(
            "{:.2}",
            self.0.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
        )
    }
}

impl From<Decimal> for Money {
    fn from(d: Decimal) -> Self {
        Money::new(d)
    }
}

impl From<Money> for Decimal {
    fn from(m: Money) -> Self {
        m.0
    }
}

impl FromStr for Money {
    type Err = rust_decimal::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decimal::from_str(s.trim()).map(Money::new)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

/// A calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    year: i32,
    month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, 1).map(|_| Month { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Month {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("validated month")
    }

    pub fn last_day(&self) -> NaiveDate {
        self.next().first_day().pred_opt().expect("date in range")
    }

    pub fn next(&self) -> Month {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        Month::of(date) == *self
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let last = self.last_day();
        self.first_day().iter_days().take_while(move |d| *d <= last)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid month {0:?}: expected YYYY-MM")]
pub struct ParseMonthError(pub String);

impl FromStr for Month {
    type Err = ParseMonthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMonthError(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(err)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(err());
        }
        let year = y.parse().map_err(|_| err())?;
        let month = m.parse().map_err(|_| err())?;
        Month::new(year, month).ok_or_else(err)
    }
}

impl Serialize for Month {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    ChildYouth,
    Adult,
    SchoolBased,
    Other,
}

impl Program {
    pub fn as_str(&self) -> &'static str {
        match self {
            Program::ChildYouth => "child_youth",
            Program::Adult => "adult",
            Program::SchoolBased => "school_based",
            Program::Other => "other",
        }
    }
}

impl FromStr for Program {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "child_youth" => Ok(Program::ChildYouth),
            "adult" => Ok(Program::Adult),
            "school_based" => Ok(Program::SchoolBased),
            "other" => Ok(Program::Other),
            other => Err(format!("unknown program {other:?}")),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A clinician's productivity levers, effective from a given date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaffProfile {
    pub staff_id: StaffId,
    pub name: String,
    pub effective_from: NaiveDate,
    pub total_fte: Decimal,
    pub clinical_fte: Decimal,
    /// Share of clinical time expected to be direct billable service.
    pub clinical_percentage: Decimal,
    /// Monthly revenue expectation for the staff member's actual clinical FTE.
    pub expected_monthly_revenue: Money,
    pub base_hours_per_fte: Decimal,
    pub licensure: BTreeSet<String>,
    pub program: Program,
}

impl StaffProfile {
    /// A full-time profile with the usual defaults; handy in tests and fixtures.
    pub fn new(staff_id: impl Into<String>, clinical_fte: Decimal, expected_monthly_revenue: Decimal) -> Self {
        StaffProfile {
            staff_id: StaffId::new(staff_id),
            name: String::new(),
            effective_from: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            total_fte: clinical_fte.max(Decimal::ONE),
            clinical_fte,
            clinical_percentage: DEFAULT_CLINICAL_PERCENTAGE,
            expected_monthly_revenue: Money::new(expected_monthly_revenue),
            base_hours_per_fte: DEFAULT_BASE_HOURS_PER_FTE,
            licensure: BTreeSet::new(),
            program: Program::Other,
        }
    }
}

/// One delivered billable service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub service_id: ServiceId,
    pub staff_id: StaffId,
    pub client_id: ClientId,
    pub date: NaiveDate,
    pub service_type: String,
    pub duration_hours: Decimal,
    pub payer_id: PayerId,
    pub actual_revenue: Money,
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
}

impl ServiceRecord {
    pub fn flag(&self, name: &str) -> Option<bool> {
        self.flags.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMethod {
    FeeForService,
    CaseRate,
}

impl PaymentMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PaymentMethod::FeeForService => "fee_for_service",
            PaymentMethod::CaseRate => "case_rate",
        }
    }
}

impl FromStr for PaymentMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fee_for_service" => Ok(PaymentMethod::FeeForService),
            "case_rate" => Ok(PaymentMethod::CaseRate),
            other => Err(format!("unknown payment_method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueBasis {
    Actual,
    AveragedEstimate,
}

impl RevenueBasis {
    pub fn as_str(&self) -> &'static str {
        match self {
            RevenueBasis::Actual => "actual",
            RevenueBasis::AveragedEstimate => "averaged_estimate",
        }
    }
}

impl FromStr for RevenueBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "actual" => Ok(RevenueBasis::Actual),
            "averaged_estimate" => Ok(RevenueBasis::AveragedEstimate),
            other => Err(format!("unknown revenue_basis {other:?}")),
        }
    }
}

/// Billing requirements and revenue basis for one payer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayerRule {
    pub payer_id: PayerId,
    pub payment_method: PaymentMethod,
    #[serde(default)]
    pub required_licensure: BTreeSet<String>,
    #[serde(default)]
    pub requires_authorization: bool,
    pub revenue_basis: RevenueBasis,
    /// Averaged rate per service type; with an averaged basis, the billable service types.
    #[serde(default)]
    pub averaged_rate_by_service: BTreeMap<String, Money>,
}

impl PayerRule {
    pub fn fee_for_service(payer_id: impl Into<String>) -> Self {
        PayerRule {
            payer_id: PayerId::new(payer_id),
            payment_method: PaymentMethod::FeeForService,
            required_licensure: BTreeSet::new(),
            requires_authorization: false,
            revenue_basis: RevenueBasis::Actual,
            averaged_rate_by_service: BTreeMap::new(),
        }
    }
}

/// Baseline and endpoint of one outcome measure for a client-month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub client_id: ClientId,
    pub measure_id: String,
    pub period: Month,
    pub baseline: Decimal,
    pub endpoint: Decimal,
    /// Currency value of one unit of outcome change.
    pub cpuc: Money,
}

impl OutcomeRecord {
    pub fn delta(&self) -> Decimal {
        self.endpoint - self.baseline
    }
}

/// Case-rate eligibility of one client for one month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityRecord {
    pub client_id: ClientId,
    pub month: Month,
    pub program: Program,
    pub eligible: bool,
}

/// A broken invariant, named by field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid record: {}", format_violations(.0))]
pub struct InvalidRecord(pub Vec<Violation>);

pub fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Converts a float from an untyped boundary (JSON numbers, generated data)
/// into a decimal, rejecting NaN and infinities.
pub fn decimal_field(field: &str, value: f64) -> Result<Decimal, Violation> {
    if !value.is_finite() {
        return Err(Violation::new(field, "must be a finite number"));
    }
    Decimal::from_f64_retain(value)
        .map(|d| d.normalize())
        .ok_or_else(|| Violation::new(field, "out of range"))
}

/// Every violated staff-profile invariant. Empty means valid.
pub fn validate_staff_profile(profile: &StaffProfile) -> Vec<Violation> {
    let mut out = Vec::new();
    if profile.staff_id.0.trim().is_empty() {
        out.push(Violation::new("staff_id", "must not be empty"));
    }
    if profile.total_fte < Decimal::ZERO {
        out.push(Violation::new("total_fte", "must be >= 0"));
    }
    if profile.total_fte > MAX_TOTAL_FTE {
        out.push(Violation::new("total_fte", "must be <= 1.5"));
    }
    if profile.clinical_fte < Decimal::ZERO {
        out.push(Violation::new("clinical_fte", "must be >= 0"));
    }
    if profile.clinical_fte > profile.total_fte {
        out.push(Violation::new("clinical_fte", "clinical_fte > total_fte"));
    }
    if profile.clinical_percentage <= Decimal::ZERO {
        out.push(Violation::new("clinical_percentage", "clinical_percentage must be > 0"));
    }
    if profile.clinical_percentage > Decimal::ONE {
        out.push(Violation::new("clinical_percentage", "clinical_percentage must be <= 1"));
    }
    if profile.expected_monthly_revenue.amount() < Decimal::ZERO {
        out.push(Violation::new("expected_monthly_revenue", "must be >= 0"));
    }
    if profile.base_hours_per_fte <= Decimal::ZERO {
        out.push(Violation::new("base_hours_per_fte", "must be > 0"));
    }
    out
}

/// Conditions that are legal but worth surfacing on a statement.
pub fn staff_profile_warnings(profile: &StaffProfile) -> Vec<String> {
    let mut out = Vec::new();
    if profile.total_fte > Decimal::ONE {
        out.push(format!("total_fte {} exceeds 1.0", profile.total_fte));
    }
    if profile.base_hours_per_fte * profile.clinical_percentage != Decimal::ONE_HUNDRED {
        out.push(format!(
            "base_hours_per_fte x clinical_percentage = {} (not 100): meeting revenue expectation will not yield 100 VPU per clinical FTE",
            (profile.base_hours_per_fte * profile.clinical_percentage).normalize()
        ));
    }
    out
}

pub fn validate_service(service: &ServiceRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if service.service_id.0.trim().is_empty() {
        out.push(Violation::new("service_id", "must not be empty"));
    }
    if service.duration_hours <= Decimal::ZERO {
        out.push(Violation::new("duration_hours", "must be > 0"));
    }
    if service.actual_revenue.amount() < Decimal::ZERO {
        out.push(Violation::new("actual_revenue", "must be >= 0"));
    }
    out
}

pub fn validate_payer(payer: &PayerRule) -> Vec<Violation> {
    let mut out = Vec::new();
    if payer.payer_id.0.trim().is_empty() {
        out.push(Violation::new("payer_id", "must not be empty"));
    }
    if payer.revenue_basis == RevenueBasis::AveragedEstimate && payer.averaged_rate_by_service.is_empty() {
        out.push(Violation::new(
            "averaged_rate_by_service",
            "averaged_estimate basis requires a rate for every billable service type",
        ));
    }
    for (service_type, rate) in &payer.averaged_rate_by_service {
        if rate.amount() < Decimal::ZERO {
            out.push(Violation::new(
                "averaged_rate_by_service",
                format!("rate for {service_type} must be >= 0"),
            ));
        }
    }
    out
}

pub fn validate_outcome(outcome: &OutcomeRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if outcome.cpuc.amount() <= Decimal::ZERO {
        out.push(Violation::new("cpuc", "must be > 0"));
    }
    out
}

/// Clinical hours per month: base hours per FTE scaled by clinical FTE.
pub fn clinical_hours(profile: &StaffProfile) -> Result<Decimal, InvalidRecord> {
    let violations = validate_staff_profile(profile);
    if !violations.is_empty() {
        return Err(InvalidRecord(violations));
    }
    Ok(profile.base_hours_per_fte * profile.clinical_fte)
}
