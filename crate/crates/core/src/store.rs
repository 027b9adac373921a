//! Embedded file-backed record store with CSV ingestion and immutable
//! snapshots.
//!
//! # File schemas
//!
//! Every file is UTF-8 CSV with a mandatory header row. Leading lines that
//! start with `#` are comments; `# schema_version: 1` pins the schema version.
//! Dates are ISO-8601 (`2009-03-02`), months are `YYYY-MM`, decimals use `.`.
//! Columns marked optional may be omitted from the header or left empty.
//!
//! | kind | key | required columns | optional columns |
//! |---|---|---|---|
//! | `staff` | `staff_id`, `effective_from` | `staff_id`, `clinical_fte`, `expected_monthly_revenue` | `name`, `effective_from` (2000-01-01), `total_fte` (max of clinical_fte and 1), `clinical_percentage` (0.625), `base_hours_per_fte` (160), `licensure` (`;`-separated), `program` (`other`) |
//! | `services` | `service_id` | `service_id`, `staff_id`, `client_id`, `date`, `service_type`, `duration_hours`, `payer_id`, `actual_revenue` | `flags` (`name=true;name=false`) |
//! | `payers` | `payer_id` | `payer_id` | `payment_method` (`fee_for_service`), `required_licensure` (`;`-separated), `requires_authorization` (false), `revenue_basis` (`actual`), `averaged_rates` (`IT=95;GT=40`) |
//! | `outcomes` | `client_id`, `measure_id`, `period` | all of `client_id`, `measure_id`, `period`, `baseline`, `endpoint`, `cpuc` | |
//! | `eligibility` | `client_id`, `month` | all of `client_id`, `month`, `program`, `eligible` | |
//!
//! Ingestion upserts by key; within one file the last row for a key wins.
//! A header naming an unknown column, or missing a required one, rejects the
//! whole file. Rows failing validation are rejected individually with their
//! line number and leave the store untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::Serialize;

use crate::model::{
    validate_outcome, validate_payer, validate_service, validate_staff_profile, ClientId, EligibilityRecord, Money, Month,
    OutcomeRecord, PayerId, PayerRule, PaymentMethod, Program, RevenueBasis, ServiceId, ServiceRecord, StaffId,
    StaffProfile, Violation, DEFAULT_BASE_HOURS_PER_FTE, DEFAULT_CLINICAL_PERCENTAGE,
};
use crate::pipeline::MonthView;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Staff,
    Services,
    Payers,
    Outcomes,
    Eligibility,
}

impl RecordKind {
    pub const ALL: [RecordKind; 5] = [
        RecordKind::Staff,
        RecordKind::Services,
        RecordKind::Payers,
        RecordKind::Outcomes,
        RecordKind::Eligibility,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Staff => "staff",
            RecordKind::Services => "services",
            RecordKind::Payers => "payers",
            RecordKind::Outcomes => "outcomes",
            RecordKind::Eligibility => "eligibility",
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.as_str())
    }

    fn columns(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            RecordKind::Staff => (
                &["staff_id", "clinical_fte", "expected_monthly_revenue"],
                &[
                    "name",
                    "effective_from",
                    "total_fte",
                    "clinical_percentage",
                    "base_hours_per_fte",
                    "licensure",
                    "program",
                ],
            ),
            RecordKind::Services => (
                &[
                    "service_id",
                    "staff_id",
                    "client_id",
                    "date",
                    "service_type",
                    "duration_hours",
                    "payer_id",
                    "actual_revenue",
                ],
                &["flags"],
            ),
            RecordKind::Payers => (
                &["payer_id"],
                &[
                    "payment_method",
                    "required_licensure",
                    "requires_authorization",
                    "revenue_basis",
                    "averaged_rates",
                ],
            ),
            RecordKind::Outcomes => (&["client_id", "measure_id", "period", "baseline", "endpoint", "cpuc"], &[]),
            RecordKind::Eligibility => (&["client_id", "month", "program", "eligible"], &[]),
        }
    }
}

impl FromStr for RecordKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StoreError::UnknownKind(s.to_string()))
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown record kind {0:?}; expected staff, services, payers, outcomes or eligibility")]
    UnknownKind(String),
    #[error("{source_name}: file rejected: {message}")]
    FileRejected { source_name: String, message: String },
    #[error("unknown staff {0}")]
    UnknownStaff(StaffId),
    #[error("staff {0} has no profile effective in {1}")]
    NoProfile(StaffId, Month),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl StoreError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub source: String,
    pub kind: RecordKind,
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RecordCounts {
    pub staff: usize,
    pub services: usize,
    pub payers: usize,
    pub outcomes: usize,
    pub eligibility: usize,
}

/// The full state of the store.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub staff: BTreeMap<(StaffId, NaiveDate), StaffProfile>,
    pub services: BTreeMap<ServiceId, ServiceRecord>,
    pub payers: BTreeMap<PayerId, PayerRule>,
    pub outcomes: BTreeMap<(ClientId, String, Month), OutcomeRecord>,
    pub eligibility: BTreeMap<(ClientId, Month), EligibilityRecord>,
}

enum Row {
    Staff(StaffProfile),
    Service(ServiceRecord),
    Payer(PayerRule),
    Outcome(OutcomeRecord),
    Eligibility(EligibilityRecord),
}

impl Dataset {
    fn apply(&mut self, row: Row) {
        match row {
            Row::Staff(p) => {
                self.staff.insert((p.staff_id.clone(), p.effective_from), p);
            }
            Row::Service(s) => {
                self.services.insert(s.service_id.clone(), s);
            }
            Row::Payer(p) => {
                self.payers.insert(p.payer_id.clone(), p);
            }
            Row::Outcome(o) => {
                self.outcomes.insert((o.client_id.clone(), o.measure_id.clone(), o.period), o);
            }
            Row::Eligibility(e) => {
                self.eligibility.insert((e.client_id.clone(), e.month), e);
            }
        }
    }

    pub fn counts(&self) -> RecordCounts {
        RecordCounts {
            staff: self.staff.len(),
            services: self.services.len(),
            payers: self.payers.len(),
            outcomes: self.outcomes.len(),
            eligibility: self.eligibility.len(),
        }
    }

    /// Parses `text` and applies its accepted rows.
    pub fn ingest(&mut self, kind: RecordKind, source: &str, text: &str) -> Result<IngestReport, StoreError> {
        let parsed = parse_file(kind, source, text)?;
        for row in parsed.rows {
            self.apply(row);
        }
        Ok(parsed.report)
    }

    /// Writes one kind as CSV in the ingest format.
    pub fn write_csv<W: Write>(&self, kind: RecordKind, out: W) -> Result<(), csv::Error> {
        let mut out = out;
        writeln!(out, "# schema_version: {SCHEMA_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        let (required, optional) = kind.columns();
        w.write_record(required.iter().chain(optional))?;
        match kind {
            RecordKind::Staff => {
                for p in self.staff.values() {
                    w.write_record([
                        p.staff_id.as_str(),
                        &dec(p.clinical_fte),
                        &dec(p.expected_monthly_revenue.amount()),
                        &p.name,
                        &p.effective_from.to_string(),
                        &dec(p.total_fte),
                        &dec(p.clinical_percentage),
                        &dec(p.base_hours_per_fte),
                        &join(&p.licensure),
                        p.program.as_str(),
                    ])?;
                }
            }
            RecordKind::Services => {
                for s in self.services.values() {
                    let flags: Vec<String> = s.flags.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    w.write_record([
                        s.service_id.as_str(),
                        s.staff_id.as_str(),
                        s.client_id.as_str(),
                        &s.date.to_string(),
                        &s.service_type,
                        &dec(s.duration_hours),
                        s.payer_id.as_str(),
                        &dec(s.actual_revenue.amount()),
                        &flags.join(";"),
                    ])?;
                }
            }
            RecordKind::Payers => {
                for p in self.payers.values() {
                    let rates: Vec<String> = p
                        .averaged_rate_by_service
                        .iter()
                        .map(|(k, v)| format!("{k}={}", dec(v.amount())))
                        .collect();
                    w.write_record([
                        p.payer_id.as_str(),
                        p.payment_method.as_str(),
                        &join(&p.required_licensure),
                        &p.requires_authorization.to_string(),
                        p.revenue_basis.as_str(),
                        &rates.join(";"),
                    ])?;
                }
            }
            RecordKind::Outcomes => {
                for o in self.outcomes.values() {
                    w.write_record([
                        o.client_id.as_str(),
                        &o.measure_id,
                        &o.period.to_string(),
                        &dec(o.baseline),
                        &dec(o.endpoint),
                        &dec(o.cpuc.amount()),
                    ])?;
                }
            }
            RecordKind::Eligibility => {
                for e in self.eligibility.values() {
                    w.write_record([
                        e.client_id.as_str(),
                        &e.month.to_string(),
                        e.program.as_str(),
                        &e.eligible.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, kind: RecordKind) -> String {
        let mut buf = Vec::new();
        self.write_csv(kind, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn dec(d: Decimal) -> String {
    d.normalize().to_string()
}

fn join(set: &BTreeSet<String>) -> String {
    set.iter().map(String::as_str).collect::<Vec<_>>().join(";")
}

struct Parsed {
    report: IngestReport,
    rows: Vec<Row>,
}

fn reject_file(source: &str, message: impl Into<String>) -> StoreError {
    StoreError::FileRejected {
        source_name: source.to_string(),
        message: message.into(),
    }
}

fn schema_version(source: &str, text: &str) -> Result<(), StoreError> {
    for line in text.lines() {
        let line = line.trim_start_matches('\u{feff}').trim();
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some(v) = comment.trim().strip_prefix("schema_version:") {
            let v = v.trim();
            if v.parse::<u32>().ok() != Some(SCHEMA_VERSION) {
                return Err(reject_file(
                    source,
                    format!("unsupported schema_version {v}; expected {SCHEMA_VERSION}"),
                ));
            }
        }
    }
    Ok(())
}

fn parse_file(kind: RecordKind, source: &str, text: &str) -> Result<Parsed, StoreError> {
    schema_version(source, text)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.trim_start_matches('\u{feff}').as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| reject_file(source, format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(reject_file(source, "missing header row"));
    }
    let (required, optional) = kind.columns();
    let mut seen = BTreeSet::new();
    for h in headers.iter() {
        if !required.contains(&h) && !optional.contains(&h) {
            return Err(reject_file(source, format!("unknown column {h:?} for {kind}")));
        }
        if !seen.insert(h) {
            return Err(reject_file(source, format!("duplicate column {h:?}")));
        }
    }
    if let Some(missing) = required.iter().find(|c| !seen.contains(**c)) {
        return Err(reject_file(source, format!("missing required column {missing:?} for {kind}")));
    }

    let mut report = IngestReport {
        source: source.to_string(),
        kind,
        accepted: 0,
        rejected: 0,
        rejections: Vec::new(),
    };
    let mut rows = Vec::new();
    for result in reader.records() {
        let (line, outcome) = match result {
            Ok(record) => {
                let line = record.position().map_or(0, |p| p.line());
                if record.len() != headers.len() {
                    let reason = format!("expected {} fields, found {}", headers.len(), record.len());
                    (line, Err(reason))
                } else {
                    let fields = Fields { headers: &headers, record: &record };
                    (line, parse_row(kind, &fields).map_err(|v| crate::model::format_violations(&v)))
                }
            }
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match outcome {
            Ok(row) => {
                report.accepted += 1;
                rows.push(row);
            }
            Err(reason) => {
                report.rejected += 1;
                report.rejections.push(Rejection { line, reason });
            }
        }
    }
    Ok(Parsed { report, rows })
}

struct Fields<'a> {
    headers: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn get(&self, name: &str) -> Option<&str> {
        let i = self.headers.iter().position(|h| h == name)?;
        self.record.get(i).filter(|v| !v.is_empty())
    }
}

/// Collects per-field violations so one rejection reason lists them all.
struct RowParser<'a> {
    fields: &'a Fields<'a>,
    violations: Vec<Violation>,
}

impl<'a> RowParser<'a> {
    fn text(&mut self, name: &str) -> String {
        match self.fields.get(name) {
            Some(v) => v.to_string(),
            None => {
                self.violations.push(Violation::new(name, "is required"));
                String::new()
            }
        }
    }

    fn opt_text(&self, name: &str) -> Option<&'a str> {
        self.fields.get(name)
    }

    fn parsed<T: FromStr>(&mut self, name: &str, what: &str) -> Option<T> {
        let raw = self.fields.get(name);
        match raw {
            None => {
                self.violations.push(Violation::new(name, "is required"));
                None
            }
            Some(raw) => self.convert(name, raw, what),
        }
    }

    fn opt_parsed<T: FromStr>(&mut self, name: &str, what: &str) -> Option<Option<T>> {
        match self.fields.get(name) {
            None => Some(None),
            Some(raw) => self.convert(name, raw, what).map(Some),
        }
    }

    fn convert<T: FromStr>(&mut self, name: &str, raw: &str, what: &str) -> Option<T> {
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.violations.push(Violation::new(name, format!("invalid {what} {raw:?}")));
                None
            }
        }
    }

    fn bool(&mut self, name: &str, raw: &str) -> Option<bool> {
        match parse_bool(raw) {
            Some(b) => Some(b),
            None => {
                self.violations.push(Violation::new(name, format!("invalid boolean {raw:?}")));
                None
            }
        }
    }

    fn set(&self, name: &str) -> BTreeSet<String> {
        self.opt_text(name)
            .map(|v| v.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    fn pairs(&mut self, name: &str) -> Vec<(String, String)> {
        let Some(raw) = self.opt_text(name) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for item in raw.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            match item.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
                _ => self.violations.push(Violation::new(name, format!("expected key=value, found {item:?}"))),
            }
        }
        out
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_row(kind: RecordKind, fields: &Fields<'_>) -> Result<Row, Vec<Violation>> {
    let mut p = RowParser { fields, violations: Vec::new() };
    let row = match kind {
        RecordKind::Staff => staff_row(&mut p),
        RecordKind::Services => service_row(&mut p),
        RecordKind::Payers => payer_row(&mut p),
        RecordKind::Outcomes => outcome_row(&mut p),
        RecordKind::Eligibility => eligibility_row(&mut p),
    };
    match row {
        Some(row) if p.violations.is_empty() => Ok(row),
        _ => Err(p.violations),
    }
}

fn staff_row(p: &mut RowParser<'_>) -> Option<Row> {
    let staff_id = p.text("staff_id");
    let clinical_fte: Option<Decimal> = p.parsed("clinical_fte", "number");
    let revenue: Option<Money> = p.parsed("expected_monthly_revenue", "amount");
    let effective_from: Option<Option<NaiveDate>> = p.opt_parsed("effective_from", "date");
    let total_fte: Option<Option<Decimal>> = p.opt_parsed("total_fte", "number");
    let cp: Option<Option<Decimal>> = p.opt_parsed("clinical_percentage", "number");
    let base: Option<Option<Decimal>> = p.opt_parsed("base_hours_per_fte", "number");
    let program: Option<Option<Program>> = p.opt_parsed("program", "program");
    let (clinical_fte, revenue) = (clinical_fte?, revenue?);
    let mut profile = StaffProfile::new(staff_id, clinical_fte, revenue.amount());
    profile.name = p.opt_text("name").unwrap_or_default().to_string();
    if let Some(d) = effective_from? {
        profile.effective_from = d;
    }
    if let Some(t) = total_fte? {
        profile.total_fte = t;
    }
    profile.clinical_percentage = cp?.unwrap_or(DEFAULT_CLINICAL_PERCENTAGE);
    profile.base_hours_per_fte = base?.unwrap_or(DEFAULT_BASE_HOURS_PER_FTE);
    profile.licensure = p.set("licensure");
    profile.program = program?.unwrap_or(Program::Other);
    if profile.staff_id.as_str().is_empty() {
        return None;
    }
    p.violations.extend(validate_staff_profile(&profile));
    Some(Row::Staff(profile))
}

fn service_row(p: &mut RowParser<'_>) -> Option<Row> {
    let service_id = p.text("service_id");
    let staff_id = p.text("staff_id");
    let client_id = p.text("client_id");
    let date: Option<NaiveDate> = p.parsed("date", "date");
    let service_type = p.text("service_type");
    let duration_hours: Option<Decimal> = p.parsed("duration_hours", "number");
    let payer_id = p.text("payer_id");
    let actual_revenue: Option<Money> = p.parsed("actual_revenue", "amount");
    let mut flags = BTreeMap::new();
    for (k, v) in p.pairs("flags") {
        if let Some(b) = p.bool("flags", &v) {
            flags.insert(k, b);
        }
    }
    let service = ServiceRecord {
        service_id: ServiceId::new(service_id),
        staff_id: StaffId::new(staff_id),
        client_id: ClientId::new(client_id),
        date: date?,
        service_type,
        duration_hours: duration_hours?,
        payer_id: PayerId::new(payer_id),
        actual_revenue: actual_revenue?,
        flags,
    };
    p.violations.extend(validate_service(&service));
    Some(Row::Service(service))
}

fn payer_row(p: &mut RowParser<'_>) -> Option<Row> {
    let payer_id = p.text("payer_id");
    let method: Option<Option<PaymentMethod>> = p.opt_parsed("payment_method", "payment method");
    let basis: Option<Option<RevenueBasis>> = p.opt_parsed("revenue_basis", "revenue basis");
    let requires_authorization = match p.opt_text("requires_authorization") {
        Some(raw) => p.bool("requires_authorization", raw)?,
        None => false,
    };
    let mut rates = BTreeMap::new();
    for (k, v) in p.pairs("averaged_rates") {
        if let Some(m) = p.convert::<Money>("averaged_rates", &v, "amount") {
            rates.insert(k, m);
        }
    }
    let mut payer = PayerRule::fee_for_service(payer_id);
    payer.payment_method = method?.unwrap_or(payer.payment_method);
    payer.revenue_basis = basis?.unwrap_or(payer.revenue_basis);
    payer.required_licensure = p.set("required_licensure");
    payer.requires_authorization = requires_authorization;
    payer.averaged_rate_by_service = rates;
    p.violations.extend(validate_payer(&payer));
    Some(Row::Payer(payer))
}

fn outcome_row(p: &mut RowParser<'_>) -> Option<Row> {
    let client_id = p.text("client_id");
    let measure_id = p.text("measure_id");
    let period: Option<Month> = p.parsed("period", "month");
    let baseline: Option<Decimal> = p.parsed("baseline", "number");
    let endpoint: Option<Decimal> = p.parsed("endpoint", "number");
    let cpuc: Option<Money> = p.parsed("cpuc", "amount");
    let outcome = OutcomeRecord {
        client_id: ClientId::new(client_id),
        measure_id,
        period: period?,
        baseline: baseline?,
        endpoint: endpoint?,
        cpuc: cpuc?,
    };
    p.violations.extend(validate_outcome(&outcome));
    Some(Row::Outcome(outcome))
}

fn eligibility_row(p: &mut RowParser<'_>) -> Option<Row> {
    let client_id = p.text("client_id");
    let month: Option<Month> = p.parsed("month", "month");
    let program: Option<Program> = p.parsed("program", "program");
    let eligible = match p.opt_text("eligible") {
        Some(raw) => p.bool("eligible", raw),
        None => {
            p.violations.push(Violation::new("eligible", "is required"));
            None
        }
    };
    Some(Row::Eligibility(EligibilityRecord {
        client_id: ClientId::new(client_id),
        month: month?,
        program: program?,
        eligible: eligible?,
    }))
}

/// An immutable view of the store at one point in time.
#[derive(Debug, Clone)]
pub struct Snapshot(Arc<Dataset>);

impl Snapshot {
    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn counts(&self) -> RecordCounts {
        self.0.counts()
    }

    pub fn payers(&self) -> &BTreeMap<PayerId, PayerRule> {
        &self.0.payers
    }

    pub fn staff_ids(&self) -> BTreeSet<StaffId> {
        self.0.staff.keys().map(|(id, _)| id.clone()).collect()
    }

    /// The profile in force on the first day of the month, or failing that
    /// the first version that takes effect during the month.
    pub fn profile_for(&self, staff_id: &StaffId, month: Month) -> Result<&StaffProfile, StoreError> {
        let versions = self
            .0
            .staff
            .range((staff_id.clone(), NaiveDate::MIN)..=(staff_id.clone(), NaiveDate::MAX));
        let mut in_force = None;
        let mut first_in_month = None;
        let mut any = false;
        for ((_, from), profile) in versions {
            any = true;
            if *from <= month.first_day() {
                in_force = Some(profile);
            } else if *from <= month.last_day() && first_in_month.is_none() {
                first_in_month = Some(profile);
            }
        }
        if !any {
            return Err(StoreError::UnknownStaff(staff_id.clone()));
        }
        in_force
            .or(first_in_month)
            .ok_or_else(|| StoreError::NoProfile(staff_id.clone(), month))
    }

    /// Everything needed to evaluate one staff member's month.
    pub fn query_month(&self, staff_id: &StaffId, month: Month) -> Result<MonthView, StoreError> {
        let profile = self.profile_for(staff_id, month)?.clone();
        let mut services: Vec<ServiceRecord> = self
            .0
            .services
            .values()
            .filter(|s| &s.staff_id == staff_id && month.contains(s.date))
            .cloned()
            .collect();
        services.sort_by(|a, b| (a.date, &a.service_id).cmp(&(b.date, &b.service_id)));
        let clients: BTreeSet<&ClientId> = services.iter().map(|s| &s.client_id).collect();
        let outcomes = self
            .0
            .outcomes
            .values()
            .filter(|o| o.period == month && clients.contains(&o.client_id))
            .cloned()
            .collect();
        let eligibility = self
            .0
            .eligibility
            .values()
            .filter(|e| e.month == month && clients.contains(&e.client_id))
            .cloned()
            .collect();
        Ok(MonthView {
            month,
            profile,
            services,
            outcomes,
            eligibility,
        })
    }

    /// Staff with a profile effective at some point in the month.
    pub fn roster(&self, month: Month) -> Vec<StaffId> {
        self.staff_ids()
            .into_iter()
            .filter(|id| self.profile_for(id, month).is_ok())
            .collect()
    }

    /// Eligibility rows for the month as `(client, program, eligible)`.
    pub fn eligibility_for(&self, month: Month) -> Vec<(ClientId, Program, bool)> {
        self.0
            .eligibility
            .values()
            .filter(|e| e.month == month)
            .map(|e| (e.client_id.clone(), e.program, e.eligible))
            .collect()
    }

    /// Writes every kind to `dir` in the ingest format.
    pub fn export(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        for kind in RecordKind::ALL {
            write_atomic(dir, kind, &self.0)?;
        }
        Ok(())
    }
}

fn write_atomic(dir: &Path, kind: RecordKind, data: &Dataset) -> Result<(), StoreError> {
    let path = dir.join(kind.file_name());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StoreError::io(dir, e))?;
    data.write_csv(kind, tmp.as_file_mut()).map_err(|e| StoreError::io(&path, e))?;
    tmp.as_file().sync_all().map_err(|e| StoreError::io(&path, e))?;
    tmp.persist(&path).map_err(|e| StoreError::io(&path, e.error))?;
    Ok(())
}

/// Single-writer, multi-reader store. Readers take snapshots; each ingest
/// builds a new dataset and swaps it in, so snapshots never change.
#[derive(Debug)]
pub struct Store {
    dir: Option<PathBuf>,
    current: RwLock<Arc<Dataset>>,
    writer: Mutex<()>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            current: RwLock::new(Arc::new(Dataset::default())),
            writer: Mutex::new(()),
        }
    }

    /// Opens (creating if needed) a store persisted as one CSV file per kind in `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        let mut data = Dataset::default();
        for kind in RecordKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
            let report = data.ingest(kind, &path.display().to_string(), &text)?;
            if let Some(r) = report.rejections.first() {
                return Err(StoreError::io(&path, format!("corrupt store file: line {}: {}", r.line, r.reason)));
            }
        }
        Ok(Store {
            dir: Some(dir),
            current: RwLock::new(Arc::new(data)),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.current.read().expect("store lock poisoned").clone())
    }

    pub fn ingest(&self, kind: RecordKind, source: &str, text: &str) -> Result<IngestReport, StoreError> {
        let _writer = self.writer.lock().expect("store writer poisoned");
        let parsed = parse_file(kind, source, text)?;
        let base = self.snapshot();
        let mut next = (*base.0).clone();
        for row in parsed.rows {
            next.apply(row);
        }
        if next != *base.0 {
            if let Some(dir) = &self.dir {
                write_atomic(dir, kind, &next)?;
            }
            *self.current.write().expect("store lock poisoned") = Arc::new(next);
        }
        Ok(parsed.report)
    }

    pub fn ingest_path(&self, kind: RecordKind, path: &Path) -> Result<IngestReport, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        self.ingest(kind, &path.display().to_string(), &text)
    }
}

/// Reads intake pairs from CSV with columns `scheduled_at,occurred_at`.
pub fn read_intakes(source: &str, text: &str) -> Result<Vec<(NaiveDate, NaiveDate)>, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| reject_file(source, format!("unreadable header: {e}")))?
        .clone();
    let (Some(s), Some(o)) = (
        headers.iter().position(|h| h == "scheduled_at"),
        headers.iter().position(|h| h == "occurred_at"),
    ) else {
        return Err(reject_file(source, "expected columns scheduled_at,occurred_at"));
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| reject_file(source, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let date = |i: usize| -> Result<NaiveDate, StoreError> {
            record
                .get(i)
                .unwrap_or_default()
                .parse()
                .map_err(|_| reject_file(source, format!("line {line}: invalid date {:?}", record.get(i).unwrap_or_default())))
        };
        out.push((date(s)?, date(o)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal_macros::dec;

    const SERVICES: &str = "\
# schema_version: 1
service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue,flags
a,S1,C1,2009-03-01,IT,1,P1,90,treatment_plan_complete=true
b,S1,C2,2009-03-31,IT,1.5,P1,135,
c,S1,C1,2009-04-01,IT,1,P1,90,
";

    const STAFF: &str = "\
staff_id,name,clinical_fte,expected_monthly_revenue,licensure,program
S1,Pat,1,9000,LCSW;LPC,adult
";

    fn store() -> Store {
        let s = Store::in_memory();
        s.ingest(RecordKind::Staff, "staff.csv", STAFF).unwrap();
        s.ingest(RecordKind::Services, "services.csv", SERVICES).unwrap();
        s
    }

    #[test]
    fn ingest_is_idempotent() {
        let s = store();
        let before = s.snapshot();
        let report = s.ingest(RecordKind::Services, "services.csv", SERVICES).unwrap();
        assert_eq!((report.accepted, report.rejected), (3, 0));
        assert_eq!(s.snapshot().dataset(), before.dataset());
    }

    #[test]
    fn negative_duration_is_rejected_with_line_and_field() {
        let s = Store::in_memory();
        let text = "service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue\n\
                    a,S1,C1,2009-03-01,IT,-1,P1,90\n\
                    b,S1,C1,2009-03-02,IT,1,P1,90\n";
        let r = s.ingest(RecordKind::Services, "x", text).unwrap();
        assert_eq!((r.accepted, r.rejected), (1, 1));
        assert_eq!(r.rejections[0].line, 2);
        assert!(r.rejections[0].reason.contains("duration_hours"), "{}", r.rejections[0].reason);
        assert_eq!(s.snapshot().counts().services, 1);
    }

    #[test]
    fn unknown_column_rejects_file() {
        let s = Store::in_memory();
        let err = s
            .ingest(RecordKind::Staff, "x", "staff_id,clinical_fte,expected_monthly_revenue,shoe_size\nS1,1,9000,9\n")
            .unwrap_err();
        assert!(err.to_string().contains("shoe_size"), "{err}");
        assert_eq!(s.snapshot().counts(), RecordCounts::default());
        let err = s.ingest(RecordKind::Staff, "x", "staff_id,clinical_fte\nS1,1\n").unwrap_err();
        assert!(err.to_string().contains("expected_monthly_revenue"));
        assert!(s.ingest(RecordKind::Staff, "x", "").is_err());
        let err = s
            .ingest(RecordKind::Staff, "x", "# schema_version: 2\nstaff_id,clinical_fte,expected_monthly_revenue\n")
            .unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn last_row_wins_within_file() {
        let s = Store::in_memory();
        let text = "payer_id,requires_authorization\nP1,true\nP1,false\n";
        let r = s.ingest(RecordKind::Payers, "x", text).unwrap();
        assert_eq!(r.accepted, 2);
        assert!(!s.snapshot().payers()[&PayerId::new("P1")].requires_authorization);
    }

    #[test]
    fn query_month_is_closed_and_ordered() {
        let s = store();
        let v = s.snapshot().query_month(&StaffId::new("S1"), "2009-03".parse().unwrap()).unwrap();
        let ids: Vec<_> = v.services.iter().map(|s| s.service_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(v.profile.licensure.len(), 2);
        let empty = s.snapshot().query_month(&StaffId::new("S1"), "2010-01".parse().unwrap()).unwrap();
        assert!(empty.services.is_empty());
        assert!(matches!(
            s.snapshot().query_month(&StaffId::new("nobody"), "2009-03".parse().unwrap()),
            Err(StoreError::UnknownStaff(_))
        ));
    }

    #[test]
    fn snapshot_is_isolated_from_later_ingest() {
        let s = store();
        let snap = s.snapshot();
        let month = "2009-03".parse().unwrap();
        let before = snap.query_month(&StaffId::new("S1"), month).unwrap();
        s.ingest(
            RecordKind::Services,
            "x",
            "service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue\nz,S1,C1,2009-03-05,IT,1,P1,90\n",
        )
        .unwrap();
        assert_eq!(snap.query_month(&StaffId::new("S1"), month).unwrap(), before);
        assert_eq!(s.snapshot().query_month(&StaffId::new("S1"), month).unwrap().services.len(), 3);
    }

    #[test]
    fn effective_dated_profiles() {
        let s = Store::in_memory();
        let text = "staff_id,effective_from,clinical_fte,expected_monthly_revenue\n\
                    S1,2009-01-01,1,9000\n\
                    S1,2009-03-15,0.5,4500\n\
                    S2,2009-03-10,1,9000\n";
        s.ingest(RecordKind::Staff, "x", text).unwrap();
        let snap = s.snapshot();
        let p = |id: &str, m: &str| snap.profile_for(&StaffId::new(id), m.parse().unwrap()).map(|p| p.clinical_fte);
        assert_eq!(p("S1", "2009-03").unwrap(), dec!(1));
        assert_eq!(p("S1", "2009-04").unwrap(), dec!(0.5));
        assert_eq!(p("S2", "2009-03").unwrap(), dec!(1));
        assert!(matches!(p("S2", "2009-02"), Err(StoreError::NoProfile(..))));
        assert_eq!(snap.roster("2009-02".parse().unwrap()), vec![StaffId::new("S1")]);
    }

    #[test]
    fn export_round_trips_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        s.ingest(RecordKind::Staff, "staff.csv", STAFF).unwrap();
        s.ingest(RecordKind::Services, "services.csv", SERVICES).unwrap();
        s.ingest(
            RecordKind::Payers,
            "p",
            "payer_id,revenue_basis,averaged_rates,required_licensure\nP1,averaged_estimate,IT=95.5;GT=40,LCSW\n",
        )
        .unwrap();
        s.ingest(
            RecordKind::Outcomes,
            "o",
            "client_id,measure_id,period,baseline,endpoint,cpuc\nC1,m,2009-03,2.5,3.5,500\n",
        )
        .unwrap();
        s.ingest(RecordKind::Eligibility, "e", "client_id,month,program,eligible\nC1,2009-03,adult,true\n")
            .unwrap();
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.snapshot().dataset(), s.snapshot().dataset());

        let out = tempfile::tempdir().unwrap();
        s.snapshot().export(out.path()).unwrap();
        let copy = Store::in_memory();
        for kind in RecordKind::ALL {
            copy.ingest_path(kind, &out.path().join(kind.file_name())).unwrap();
        }
        assert_eq!(copy.snapshot().dataset(), s.snapshot().dataset());
    }

    #[test]
    fn bad_values_collect_every_field() {
        let s = Store::in_memory();
        let r = s
            .ingest(
                RecordKind::Services,
                "x",
                "service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue,flags\n\
                 a,S1,C1,2009-02-30,IT,abc,P1,90,treatment_plan_complete=maybe\n",
            )
            .unwrap();
        let reason = &r.rejections[0].reason;
        assert!(reason.contains("date") && reason.contains("duration_hours") && reason.contains("flags"), "{reason}");
    }

    #[test]
    fn intakes_parse() {
        let v = read_intakes("x", "scheduled_at,occurred_at\n2009-01-01,2009-01-08\n").unwrap();
        assert_eq!(v.len(), 1);
        assert!(read_intakes("x", "a,b\n").is_err());
    }
}
