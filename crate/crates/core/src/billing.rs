//! Claim validity per payer, revenue-basis resolution and case-rate
//! eligibility counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exact::Exact;
use crate::model::{
    ClientId, Money, Month, PayerRule, Program, RevenueBasis, ServiceId, ServiceRecord, StaffProfile,
    AUTHORIZATION_PRESENT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    Licensure,
    Authorization,
    UnknownPayer,
    UnbillableServiceType,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 4] = [
        ViolationCode::Licensure,
        ViolationCode::Authorization,
        ViolationCode::UnknownPayer,
        ViolationCode::UnbillableServiceType,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::Licensure => "licensure",
            ViolationCode::Authorization => "authorization",
            ViolationCode::UnknownPayer => "unknown_payer",
            ViolationCode::UnbillableServiceType => "unbillable_service_type",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViolationCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViolationCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown claim violation code {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimViolation {
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimStatus {
    pub service_id: ServiceId,
    pub valid: bool,
    pub violations: Vec<ClaimViolation>,
}

impl ClaimStatus {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BillingError {
    #[error("no averaged rate for service type {service_type:?} under payer {payer_id}")]
    NoAveragedRate { payer_id: String, service_type: String },
}

/// Checks a service against its payer's billing requirements. All failed
/// requirements are reported; `payer` is `None` when the service names a
/// payer that is not on file.
pub fn validate_claim(service: &ServiceRecord, payer: Option<&PayerRule>, profile: &StaffProfile) -> ClaimStatus {
    let mut violations = Vec::new();
    match payer {
        None => violations.push(ClaimViolation {
            code: ViolationCode::UnknownPayer,
            message: format!("payer {} is not on file", service.payer_id),
        }),
        Some(payer) => {
            let missing: Vec<&str> = payer
                .required_licensure
                .difference(&profile.licensure)
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                violations.push(ClaimViolation {
                    code: ViolationCode::Licensure,
                    message: format!("payer {} requires licensure {}", payer.payer_id, missing.join(", ")),
                });
            }
            if payer.requires_authorization && service.flag(AUTHORIZATION_PRESENT) != Some(true) {
                violations.push(ClaimViolation {
                    code: ViolationCode::Authorization,
                    message: format!("payer {} requires an authorization on file", payer.payer_id),
                });
            }
            if payer.revenue_basis == RevenueBasis::AveragedEstimate
                && !payer.averaged_rate_by_service.contains_key(&service.service_type)
            {
                violations.push(ClaimViolation {
                    code: ViolationCode::UnbillableServiceType,
                    message: format!(
                        "service type {} is not billable to payer {}",
                        service.service_type, payer.payer_id
                    ),
                });
            }
        }
    }
    ClaimStatus {
        service_id: service.service_id.clone(),
        valid: violations.is_empty(),
        violations,
    }
}

/// Revenue the credit is computed from: the recorded amount, or the payer's
/// averaged rate for the service type.
pub fn resolve_revenue(service: &ServiceRecord, payer: &PayerRule) -> Result<Money, BillingError> {
    match payer.revenue_basis {
        RevenueBasis::Actual => Ok(service.actual_revenue),
        RevenueBasis::AveragedEstimate => payer
            .averaged_rate_by_service
            .get(&service.service_type)
            .copied()
            .ok_or_else(|| BillingError::NoAveragedRate {
                payer_id: payer.payer_id.to_string(),
                service_type: service.service_type.clone(),
            }),
    }
}

/// Case-management eligibility counts for one month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EligibilitySnapshot {
    pub month: Month,
    /// `None` when the snapshot spans every program.
    pub program: Option<Program>,
    pub caseload_count: u64,
    pub eligible_count: u64,
    /// Eligible over caseload; `None` when the caseload is empty.
    pub rate: Option<Exact>,
    pub baseline_caseload: u64,
    /// Eligible over the baseline caseload; `None` when the baseline is zero.
    pub eligible_vs_baseline: Option<Exact>,
}

/// Counts distinct clients and eligible clients. A client listed more than
/// once counts once, and counts as eligible if any listing is eligible.
pub fn eligibility_snapshot(
    clients: &[(ClientId, Program, bool)],
    month: Month,
    baseline_caseload: u64,
) -> EligibilitySnapshot {
    let mut by_client: BTreeMap<&ClientId, bool> = BTreeMap::new();
    for (client, _, eligible) in clients {
        *by_client.entry(client).or_insert(false) |= *eligible;
    }
    let caseload_count = by_client.len() as u64;
    let eligible_count = by_client.values().filter(|e| **e).count() as u64;
    let ratio = |num: u64, den: u64| {
        Exact::from_integer(num as i64).checked_div(&Exact::from_integer(den as i64))
    };
    let programs: std::collections::BTreeSet<Program> = clients.iter().map(|(_, p, _)| *p).collect();
    EligibilitySnapshot {
        month,
        program: if programs.len() == 1 { programs.into_iter().next() } else { None },
        caseload_count,
        eligible_count,
        rate: ratio(eligible_count, caseload_count),
        baseline_caseload,
        eligible_vs_baseline: ratio(eligible_count, baseline_caseload),
    }
}

/// One snapshot per program present in `clients`.
pub fn eligibility_by_program(
    clients: &[(ClientId, Program, bool)],
    month: Month,
    baseline_by_program: &BTreeMap<Program, u64>,
) -> Vec<EligibilitySnapshot> {
    let mut grouped: BTreeMap<Program, Vec<(ClientId, Program, bool)>> = BTreeMap::new();
    for c in clients {
        grouped.entry(c.1).or_default().push(c.clone());
    }
    grouped
        .into_iter()
        .map(|(program, rows)| {
            let mut snap = eligibility_snapshot(&rows, month, baseline_by_program.get(&program).copied().unwrap_or(0));
            snap.program = Some(program);
            snap
        })
        .collect()
}
