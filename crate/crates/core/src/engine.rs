//! VPU credit formulas and monthly aggregation.
//!
//! A service earns base credit equal to its revenue divided by the staff
//! member's expected hourly earnings during billable clinical time. Modifier
//! factors and the optional outcome slicer multiply that base into the final
//! credit, and a month of final credit is measured against a target of 100 per
//! 1.0 clinical FTE.

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::exact::Exact;
use crate::model::{clinical_hours, ClientId, InvalidRecord, Money, Month, ServiceId, ServiceRecord, StaffId, StaffProfile};
use crate::rules::ModifierOutcome;

/// Credit target per 1.0 clinical FTE per month.
pub const TARGET_PER_CLINICAL_FTE: i64 = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("no clinical expectation: staff {0} has zero billable clinical hours")]
    NoClinicalExpectation(StaffId),
    #[error("zero service denominator: expected hourly earnings x client hours is zero")]
    ZeroServiceDenominator,
    #[error("invalid slicer input: {0}")]
    InvalidSlicerInput(&'static str),
    #[error(transparent)]
    InvalidProfile(#[from] InvalidRecord),
    #[error("line {service_id} belongs to staff {found}, expected {expected}")]
    MixedStaff {
        service_id: ServiceId,
        expected: StaffId,
        found: StaffId,
    },
    #[error("line {service_id} dated {date} is outside {month}")]
    MixedMonth {
        service_id: ServiceId,
        date: NaiveDate,
        month: Month,
    },
}

/// Revenue expectation per billable hour: `R_e / (H_t * CP)`.
pub fn expected_hourly_earnings(profile: &StaffProfile) -> Result<Exact, EngineError> {
    let hours = Exact::from_decimal(clinical_hours(profile)?);
    let billable = hours * Exact::from_decimal(profile.clinical_percentage);
    profile
        .expected_monthly_revenue
        .exact()
        .checked_div(&billable)
        .ok_or_else(|| EngineError::NoClinicalExpectation(profile.staff_id.clone()))
}

/// Base credit for a revenue amount. Zero revenue earns zero credit even when
/// the expectation itself is zero.
pub fn vpu_base_for_revenue(revenue: &Exact, profile: &StaffProfile) -> Result<Exact, EngineError> {
    let hourly = expected_hourly_earnings(profile)?;
    if revenue.is_zero() {
        return Ok(Exact::zero());
    }
    revenue
        .checked_div(&hourly)
        .ok_or_else(|| EngineError::NoClinicalExpectation(profile.staff_id.clone()))
}

/// Base credit for a service, from its recorded actual revenue.
pub fn compute_vpu_base(service: &ServiceRecord, profile: &StaffProfile) -> Result<Exact, EngineError> {
    vpu_base_for_revenue(&service.actual_revenue.exact(), profile)
}

/// Outcome slicer: value of the client's outcome change divided by the
/// expected earnings for the hours of service the client received.
pub fn compute_outcome_slicer(
    cpuc: &Exact,
    baseline: &Exact,
    endpoint: &Exact,
    hourly_earnings: &Exact,
    client_hours: &Exact,
) -> Result<Exact, EngineError> {
    if !cpuc.is_positive() {
        return Err(EngineError::InvalidSlicerInput("cpuc must be > 0"));
    }
    if hourly_earnings.is_negative() || client_hours.is_negative() {
        return Err(EngineError::InvalidSlicerInput("hourly earnings and client hours must be >= 0"));
    }
    let denominator = hourly_earnings * client_hours;
    let delta = endpoint - baseline;
    (cpuc * &delta)
        .checked_div(&denominator)
        .ok_or(EngineError::ZeroServiceDenominator)
}

/// Optional bounds applied to the slicer before it scales credit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicerClamp {
    pub min: Decimal,
    pub max: Decimal,
}

impl SlicerClamp {
    pub fn apply(&self, slicer: &Exact) -> Exact {
        slicer
            .clone()
            .clamp(&Exact::from_decimal(self.min), &Exact::from_decimal(self.max))
    }
}

/// The slicer value that actually scales credit.
pub fn effective_slicer(slicer: Option<&Exact>, clamp: Option<&SlicerClamp>) -> Option<Exact> {
    slicer.map(|s| match clamp {
        Some(c) => c.apply(s),
        None => s.clone(),
    })
}

/// `base x modifiers x slicer`, floored at zero.
pub fn compute_vpu_final(
    base: &Exact,
    modifier_factor: &Exact,
    slicer: Option<&Exact>,
    clamp: Option<&SlicerClamp>,
) -> Exact {
    let product = base * modifier_factor;
    let product = match effective_slicer(slicer, clamp) {
        Some(s) => product * s,
        None => product,
    };
    product.max(Exact::zero())
}

/// An issue surfaced on a statement or feedback view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Flag {
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub service_id: Option<ServiceId>,
    pub message: String,
}

impl Flag {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Flag {
            code: code.into(),
            service_id: None,
            message: message.into(),
        }
    }

    pub fn for_service(code: impl Into<String>, service_id: &ServiceId, message: impl Into<String>) -> Self {
        Flag {
            code: code.into(),
            service_id: Some(service_id.clone()),
            message: message.into(),
        }
    }
}

pub mod flag_codes {
    pub const CLAIM_INVALID: &str = "claim_invalid";
    pub const CLAIM_WARNING: &str = "claim_warning";
    pub const GATED: &str = "gated";
    pub const MISSING_FIELD: &str = "missing_field";
    pub const NO_CLINICAL_TARGET: &str = "no_clinical_target";
    pub const NO_CLINICAL_EXPECTATION: &str = "no_clinical_expectation";
    pub const CONFIGURATION: &str = "configuration";
    pub const WHATIF_REJECTED: &str = "whatif_rejected";
    pub const SLICER: &str = "slicer";
    pub const TREATMENT_PLAN_INCOMPLETE: &str = "treatment_plan_incomplete";
    pub const AUTHORIZATION_PENDING: &str = "authorization_pending";
    pub const PACE_UNDEFINED: &str = "pace_undefined";
}

/// Credit for one evaluated service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VpuLine {
    pub service_id: ServiceId,
    pub staff_id: StaffId,
    pub client_id: ClientId,
    pub date: NaiveDate,
    pub service_type: String,
    #[serde(serialize_with = "crate::wire::decimal_fixed4")]
    pub duration_hours: Decimal,
    /// Revenue the credit was computed from, after payer basis resolution.
    pub revenue: Money,
    pub vpu_base: Exact,
    pub modifier_factor: Exact,
    /// Slicer after clamping; absent when no outcome scaling applied.
    pub slicer: Option<Exact>,
    pub vpu_final: Exact,
    pub trace: Vec<ModifierOutcome>,
    #[serde(skip)]
    pub flags: Vec<Flag>,
}

impl VpuLine {
    /// A line with no modifiers or slicer: final credit equals base credit.
    pub fn unmodified(service: &ServiceRecord, vpu_base: Exact) -> Self {
        VpuLine {
            service_id: service.service_id.clone(),
            staff_id: service.staff_id.clone(),
            client_id: service.client_id.clone(),
            date: service.date,
            service_type: service.service_type.clone(),
            duration_hours: service.duration_hours,
            revenue: service.actual_revenue,
            vpu_final: vpu_base.clone(),
            vpu_base,
            modifier_factor: Exact::one(),
            slicer: None,
            trace: Vec::new(),
            flags: Vec::new(),
        }
    }
}

/// One staff member's credit for one month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonthlyStatement {
    pub staff_id: StaffId,
    pub month: Month,
    #[serde(serialize_with = "crate::wire::decimal_fixed4")]
    pub clinical_fte: Decimal,
    pub vpu_base_total: Exact,
    pub vpu_final_total: Exact,
    pub target: Exact,
    /// Final credit over target, as a ratio. Zero when there is no target.
    pub productivity_percentage: Exact,
    pub per_service_lines: Vec<VpuLine>,
    pub flags: Vec<Flag>,
}

impl MonthlyStatement {
    pub fn has_target(&self) -> bool {
        self.target.is_positive()
    }
}

pub fn monthly_target(profile: &StaffProfile) -> Exact {
    Exact::from_integer(TARGET_PER_CLINICAL_FTE) * Exact::from_decimal(profile.clinical_fte)
}

/// Sum a month of lines into a statement. Line order is preserved; callers
/// order lines by `(date, service_id)`.
pub fn aggregate_month(profile: &StaffProfile, lines: Vec<VpuLine>, month: Month) -> Result<MonthlyStatement, EngineError> {
    for line in &lines {
        if line.staff_id != profile.staff_id {
            return Err(EngineError::MixedStaff {
                service_id: line.service_id.clone(),
                expected: profile.staff_id.clone(),
                found: line.staff_id.clone(),
            });
        }
        if !month.contains(line.date) {
            return Err(EngineError::MixedMonth {
                service_id: line.service_id.clone(),
                date: line.date,
                month,
            });
        }
    }
    let vpu_base_total: Exact = lines.iter().map(|l| &l.vpu_base).sum();
    let vpu_final_total: Exact = lines.iter().map(|l| &l.vpu_final).sum();
    let target = monthly_target(profile);
    let mut flags = Vec::new();
    let productivity_percentage = match vpu_final_total.checked_div(&target) {
        Some(p) => p,
        None => {
            flags.push(Flag::new(flag_codes::NO_CLINICAL_TARGET, "no clinical target"));
            Exact::zero()
        }
    };
    for warning in crate::model::staff_profile_warnings(profile) {
        flags.push(Flag::new(flag_codes::CONFIGURATION, warning));
    }
    for line in &lines {
        flags.extend(line.flags.iter().cloned());
    }
    Ok(MonthlyStatement {
        staff_id: profile.staff_id.clone(),
        month,
        clinical_fte: profile.clinical_fte,
        vpu_base_total,
        vpu_final_total,
        target,
        productivity_percentage,
        per_service_lines: lines,
        flags,
    })
}
