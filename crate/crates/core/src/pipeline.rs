//! From recorded services to statements: claim checks, revenue resolution,
//! modifier evaluation, outcome scaling, aggregation, what-if projection and
//! daily feedback.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, Weekday};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::billing::{resolve_revenue, validate_claim};
use crate::engine::{
    aggregate_month, compute_outcome_slicer, compute_vpu_final, effective_slicer, expected_hourly_earnings, flag_codes,
    vpu_base_for_revenue, EngineError, Flag, MonthlyStatement, SlicerClamp, VpuLine,
};
use crate::exact::Exact;
use crate::model::{
    validate_service, ClientId, EligibilityRecord, Month, OutcomeRecord, PayerId, PayerRule, ServiceRecord, StaffProfile,
    Violation, AUTHORIZATION_PRESENT, TREATMENT_PLAN_COMPLETE,
};
use crate::rules::{claim_outcomes, compose, evaluate, ClientContext, EvalContext, Mode, RuleSet};

/// How the pro-rata target for daily feedback is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaceBasis {
    #[default]
    BusinessDays,
    CalendarDays,
}

impl std::str::FromStr for PaceBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "business_days" => Ok(PaceBasis::BusinessDays),
            "calendar_days" => Ok(PaceBasis::CalendarDays),
            other => Err(format!("unknown pace basis {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Scale credit by client outcome change when outcome records exist.
    pub slicer_enabled: bool,
    pub slicer_clamp: Option<SlicerClamp>,
    pub pace: PaceBasis,
}

/// Deployment policy shared by every evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Policy<'a> {
    pub rules: &'a RuleSet,
    pub payers: &'a BTreeMap<PayerId, PayerRule>,
    pub config: &'a EngineConfig,
}

/// One staff member's records for one month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonthView {
    pub month: Month,
    pub profile: StaffProfile,
    /// Ordered by `(date, service_id)`.
    pub services: Vec<ServiceRecord>,
    /// Outcomes of the month for the clients in `services`.
    pub outcomes: Vec<OutcomeRecord>,
    /// Eligibility of the month for the clients in `services`.
    pub eligibility: Vec<EligibilityRecord>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn client_hours(services: &[ServiceRecord]) -> BTreeMap<ClientId, Decimal> {
    let mut hours = BTreeMap::new();
    for s in services {
        *hours.entry(s.client_id.clone()).or_insert(Decimal::ZERO) += s.duration_hours;
    }
    hours
}

struct MonthIndex<'a> {
    outcomes: BTreeMap<&'a ClientId, Vec<&'a OutcomeRecord>>,
    eligibility: BTreeMap<&'a ClientId, &'a EligibilityRecord>,
}

impl<'a> MonthIndex<'a> {
    fn new(view: &'a MonthView) -> Self {
        let mut outcomes: BTreeMap<&ClientId, Vec<&OutcomeRecord>> = BTreeMap::new();
        for o in view.outcomes.iter().filter(|o| o.period == view.month) {
            outcomes.entry(&o.client_id).or_default().push(o);
        }
        let eligibility = view
            .eligibility
            .iter()
            .filter(|e| e.month == view.month)
            .map(|e| (&e.client_id, e))
            .collect();
        MonthIndex { outcomes, eligibility }
    }
}

/// Evaluates one service into a credit line.
fn evaluate_service(
    policy: &Policy<'_>,
    profile: &StaffProfile,
    service: &ServiceRecord,
    index: &MonthIndex<'_>,
    hours_by_client: &BTreeMap<ClientId, Decimal>,
) -> VpuLine {
    let payer = policy.payers.get(&service.payer_id);
    let claim = validate_claim(service, payer, profile);
    let revenue = payer
        .and_then(|p| resolve_revenue(service, p).ok())
        .unwrap_or(service.actual_revenue);
    let vpu_base = vpu_base_for_revenue(&revenue.exact(), profile).unwrap_or_else(|_| Exact::zero());

    let client = ClientContext {
        eligible: index.eligibility.get(&service.client_id).map(|e| e.eligible),
        program: index.eligibility.get(&service.client_id).map(|e| e.program),
    };
    let ctx = EvalContext {
        service,
        profile,
        payer,
        client: &client,
        claim: Some(&claim),
    };
    let mut trace = claim_outcomes(&claim, policy.rules);
    trace.extend(evaluate(&ctx, policy.rules));
    let modifier_factor = compose(&trace);

    let mut flags = Vec::new();
    for v in &claim.violations {
        if policy.rules.claim_gates().contains(&v.code) {
            flags.push(Flag::for_service(
                flag_codes::CLAIM_INVALID,
                &service.service_id,
                format!("claim invalid: {}", v.code),
            ));
        } else {
            flags.push(Flag::for_service(
                flag_codes::CLAIM_WARNING,
                &service.service_id,
                format!("claim warning: {}: {}", v.code, v.message),
            ));
        }
    }
    for o in trace.iter().filter(|o| o.fired && o.mode == Mode::Gate && !o.rule_id.starts_with("claim.")) {
        flags.push(Flag::for_service(
            flag_codes::GATED,
            &service.service_id,
            format!("credit zeroed by rule {}: {}", o.rule_id, o.reason),
        ));
    }
    for o in trace.iter().filter(|o| o.missing_field.is_some()) {
        flags.push(Flag::for_service(
            flag_codes::MISSING_FIELD,
            &service.service_id,
            format!("rule {} not evaluated: {}", o.rule_id, o.reason),
        ));
    }

    let raw_slicer = if policy.config.slicer_enabled {
        outcome_slicer(profile, service, index, hours_by_client, &mut flags)
    } else {
        None
    };
    let vpu_final = compute_vpu_final(&vpu_base, &modifier_factor, raw_slicer.as_ref(), policy.config.slicer_clamp.as_ref());
    VpuLine {
        service_id: service.service_id.clone(),
        staff_id: service.staff_id.clone(),
        client_id: service.client_id.clone(),
        date: service.date,
        service_type: service.service_type.clone(),
        duration_hours: service.duration_hours,
        revenue,
        vpu_base,
        modifier_factor,
        slicer: effective_slicer(raw_slicer.as_ref(), policy.config.slicer_clamp.as_ref()),
        vpu_final,
        trace,
        flags,
    }
}

/// Slicer for a service from its client's outcome records that month. With
/// several measures the outcome values add.
fn outcome_slicer(
    profile: &StaffProfile,
    service: &ServiceRecord,
    index: &MonthIndex<'_>,
    hours_by_client: &BTreeMap<ClientId, Decimal>,
    flags: &mut Vec<Flag>,
) -> Option<Exact> {
    let records = index.outcomes.get(&service.client_id)?;
    let hourly = expected_hourly_earnings(profile).ok()?;
    let hours = Exact::from_decimal(hours_by_client.get(&service.client_id).copied().unwrap_or(Decimal::ZERO));
    let mut total = Exact::zero();
    for o in records {
        match compute_outcome_slicer(
            &o.cpuc.exact(),
            &Exact::from_decimal(o.baseline),
            &Exact::from_decimal(o.endpoint),
            &hourly,
            &hours,
        ) {
            Ok(s) => total = total + s,
            Err(e) => {
                flags.push(Flag::for_service(
                    flag_codes::SLICER,
                    &service.service_id,
                    format!("outcome scaling skipped for measure {}: {e}", o.measure_id),
                ));
                return None;
            }
        }
    }
    Some(total)
}

fn statement_flags(profile: &StaffProfile) -> Vec<Flag> {
    let mut flags = Vec::new();
    if profile.clinical_fte > Decimal::ZERO {
        if let Err(e) = expected_hourly_earnings(profile) {
            flags.push(Flag::new(flag_codes::NO_CLINICAL_EXPECTATION, e.to_string()));
        } else if profile.expected_monthly_revenue.amount().is_zero() {
            flags.push(Flag::new(
                flag_codes::NO_CLINICAL_EXPECTATION,
                "no clinical expectation: expected monthly revenue is zero",
            ));
        }
    }
    flags
}

/// Evaluates services against the month's context. `extra_hours` adds client
/// hours from services that are not part of `view` (what-if proposals).
fn evaluate_lines(policy: &Policy<'_>, view: &MonthView, services: &[ServiceRecord], extra: &[ServiceRecord]) -> Vec<VpuLine> {
    let index = MonthIndex::new(view);
    let mut all = view.services.clone();
    all.extend(extra.iter().cloned());
    let hours = client_hours(&all);
    services
        .iter()
        .map(|s| evaluate_service(policy, &view.profile, s, &index, &hours))
        .collect()
}

fn with_statement_flags(mut statement: MonthlyStatement, profile: &StaffProfile) -> MonthlyStatement {
    let mut flags = statement_flags(profile);
    flags.append(&mut statement.flags);
    statement.flags = flags;
    statement
}

/// Credit lines for every service in the view.
pub fn evaluate_month(policy: &Policy<'_>, view: &MonthView) -> Vec<VpuLine> {
    evaluate_lines(policy, view, &view.services, &[])
}

/// The monthly statement for a view.
pub fn statement(policy: &Policy<'_>, view: &MonthView) -> Result<MonthlyStatement, PipelineError> {
    let lines = evaluate_month(policy, view);
    let st = aggregate_month(&view.profile, lines, view.month)?;
    Ok(with_statement_flags(st, &view.profile))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedProposal {
    pub index: usize,
    pub service_id: String,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhatIf {
    pub statement: MonthlyStatement,
    pub rejected: Vec<RejectedProposal>,
}

fn check_proposal(
    proposal: &ServiceRecord,
    profile: &StaffProfile,
    month: Month,
    taken: &BTreeSet<&str>,
) -> Vec<Violation> {
    let mut v = validate_service(proposal);
    if proposal.staff_id != profile.staff_id {
        v.push(Violation::new("staff_id", format!("must be {}", profile.staff_id)));
    }
    if !month.contains(proposal.date) {
        v.push(Violation::new("date", format!("must fall within {month}")));
    }
    if taken.contains(proposal.service_id.as_str()) {
        v.push(Violation::new("service_id", "already used this month"));
    }
    v
}

/// Projects the month as if `proposed` services were also delivered. The
/// result equals `aggregate_month` over `month_to_date` followed by the
/// evaluated valid proposals; invalid proposals are left out and flagged.
pub fn project_whatif(
    policy: &Policy<'_>,
    view: &MonthView,
    month_to_date: Vec<VpuLine>,
    proposed: &[ServiceRecord],
) -> Result<WhatIf, PipelineError> {
    let mut taken: BTreeSet<&str> = month_to_date.iter().map(|l| l.service_id.as_str()).collect();
    let mut valid = Vec::new();
    let mut rejected = Vec::new();
    for (index, p) in proposed.iter().enumerate() {
        let violations = check_proposal(p, &view.profile, view.month, &taken);
        if violations.is_empty() {
            taken.insert(p.service_id.as_str());
            valid.push(p.clone());
        } else {
            rejected.push(RejectedProposal {
                index,
                service_id: p.service_id.to_string(),
                violations,
            });
        }
    }
    let mut lines = month_to_date;
    lines.extend(evaluate_lines(policy, view, &valid, &valid));
    let mut st = with_statement_flags(aggregate_month(&view.profile, lines, view.month)?, &view.profile);
    for r in &rejected {
        st.flags.push(Flag {
            code: flag_codes::WHATIF_REJECTED.into(),
            service_id: Some(r.service_id.as_str().into()),
            message: format!(
                "proposed service {} not projected: {}",
                r.index,
                crate::model::format_violations(&r.violations)
            ),
        });
    }
    Ok(WhatIf { statement: st, rejected })
}

/// Month-to-date standing for one day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeedbackView {
    pub staff_id: crate::model::StaffId,
    pub as_of: NaiveDate,
    pub month: Month,
    pub month_to_date_vpu: Exact,
    pub target: Exact,
    pub pace_basis: PaceBasis,
    pub elapsed_days: u32,
    pub total_days: u32,
    /// Target scaled by the elapsed share of the month.
    pub prorata_target: Exact,
    /// Month-to-date credit over the pro-rata target; absent when no days have elapsed or there is no target.
    pub pace: Option<Exact>,
    pub productivity_percentage: Exact,
    pub flags: Vec<Flag>,
}

fn counts_toward_pace(day: NaiveDate, basis: PaceBasis) -> bool {
    match basis {
        PaceBasis::CalendarDays => true,
        PaceBasis::BusinessDays => !matches!(day.weekday(), Weekday::Sat | Weekday::Sun),
    }
}

/// Elapsed and total pace days of the month as of a date (inclusive).
pub fn pace_days(month: Month, as_of: NaiveDate, basis: PaceBasis) -> (u32, u32) {
    let mut elapsed = 0;
    let mut total = 0;
    for d in month.days() {
        if counts_toward_pace(d, basis) {
            total += 1;
            if d <= as_of {
                elapsed += 1;
            }
        }
    }
    (elapsed, total)
}

/// Feedback over the view's services dated on or before `as_of`.
pub fn feedback(policy: &Policy<'_>, view: &MonthView, as_of: NaiveDate) -> Result<(FeedbackView, MonthlyStatement), PipelineError> {
    let mut to_date = view.clone();
    to_date.services.retain(|s| s.date <= as_of);
    let st = statement(policy, &to_date)?;
    let (elapsed_days, total_days) = pace_days(view.month, as_of, policy.config.pace);
    let prorata_target = if total_days == 0 {
        Exact::zero()
    } else {
        &(&st.target * &Exact::from_integer(elapsed_days as i64)) / &Exact::from_integer(total_days as i64)
    };
    let pace = st.vpu_final_total.checked_div(&prorata_target);
    let mut flags = st.flags.clone();
    if pace.is_none() {
        flags.push(Flag::new(
            flag_codes::PACE_UNDEFINED,
            "pace undefined: no elapsed target for this date",
        ));
    }
    for s in &to_date.services {
        if s.flag(TREATMENT_PLAN_COMPLETE) == Some(false) {
            flags.push(Flag::for_service(
                flag_codes::TREATMENT_PLAN_INCOMPLETE,
                &s.service_id,
                "treatment plan incomplete",
            ));
        }
        let needs_auth = policy.payers.get(&s.payer_id).is_some_and(|p| p.requires_authorization);
        if needs_auth && s.flag(AUTHORIZATION_PRESENT) != Some(true) {
            flags.push(Flag::for_service(
                flag_codes::AUTHORIZATION_PENDING,
                &s.service_id,
                "authorization pending",
            ));
        }
    }
    let view_out = FeedbackView {
        staff_id: view.profile.staff_id.clone(),
        as_of,
        month: view.month,
        month_to_date_vpu: st.vpu_final_total.clone(),
        target: st.target.clone(),
        pace_basis: policy.config.pace,
        elapsed_days,
        total_days,
        prorata_target,
        pace,
        productivity_percentage: st.productivity_percentage.clone(),
        flags,
    };
    Ok((view_out, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Money, Program, ServiceId, StaffId};
    use crate::rules::parse_rules;
    use rust_decimal_macros::dec;

    const RULES: &str = r#"
[[rule]]
rule_id = "treatment-plan"
metric = "treatment_plan"
when = "not flag.treatment_plan_complete"
mode = "gate"
"#;

    fn svc(id: &str, date: &str, revenue: Decimal, plan: bool) -> ServiceRecord {
        ServiceRecord {
            service_id: ServiceId::new(id),
            staff_id: StaffId::new("S1"),
            client_id: ClientId::new("C1"),
            date: date.parse().unwrap(),
            service_type: "IT".into(),
            duration_hours: dec!(1),
            payer_id: PayerId::new("P1"),
            actual_revenue: Money::new(revenue),
            flags: [(TREATMENT_PLAN_COMPLETE.to_string(), plan)].into(),
        }
    }

    fn view(services: Vec<ServiceRecord>) -> MonthView {
        let mut profile = StaffProfile::new("S1", dec!(1), dec!(9000));
        profile.licensure.insert("LCSW".into());
        MonthView {
            month: "2009-03".parse().unwrap(),
            profile,
            services,
            outcomes: vec![],
            eligibility: vec![],
        }
    }

    fn payers() -> BTreeMap<PayerId, PayerRule> {
        let mut p = PayerRule::fee_for_service("P1");
        p.required_licensure.insert("LCSW".into());
        [(p.payer_id.clone(), p)].into()
    }

    #[test]
    fn gated_line_keeps_base_and_is_flagged() {
        let rules = parse_rules(RULES).unwrap();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let st = statement(&policy, &view(vec![svc("a", "2009-03-02", dec!(90), false), svc("b", "2009-03-03", dec!(90), true)])).unwrap();
        assert_eq!(st.per_service_lines[0].vpu_base, Exact::one());
        assert!(st.per_service_lines[0].vpu_final.is_zero());
        assert_eq!(st.per_service_lines[1].vpu_final, Exact::one());
        assert_eq!(st.vpu_final_total, Exact::one());
        let gated: Vec<_> = st.flags.iter().filter(|f| f.code == flag_codes::GATED).collect();
        assert_eq!(gated.len(), 1);
        assert_eq!(gated[0].service_id.as_ref().unwrap().as_str(), "a");
    }

    #[test]
    fn licensure_failure_zeroes_credit() {
        let rules = RuleSet::default();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let mut v = view(vec![svc("a", "2009-03-02", dec!(90), true)]);
        v.profile.licensure.clear();
        let st = statement(&policy, &v).unwrap();
        assert!(st.vpu_final_total.is_zero());
        assert_eq!(st.vpu_base_total, Exact::one());
        assert!(st.flags.iter().any(|f| f.message == "claim invalid: licensure"));
    }

    #[test]
    fn unknown_payer_uses_recorded_revenue_and_gates() {
        let rules = RuleSet::default();
        let payers = BTreeMap::new();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let st = statement(&policy, &view(vec![svc("a", "2009-03-02", dec!(90), true)])).unwrap();
        assert_eq!(st.vpu_base_total, Exact::one());
        assert!(st.vpu_final_total.is_zero());
        assert!(st.flags.iter().any(|f| f.message == "claim invalid: unknown_payer"));
    }

    #[test]
    fn non_gating_violation_only_warns() {
        let rules = RuleSet::new(vec![], BTreeSet::new()).unwrap();
        let payers = BTreeMap::new();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let st = statement(&policy, &view(vec![svc("a", "2009-03-02", dec!(90), true)])).unwrap();
        assert_eq!(st.vpu_final_total, Exact::one());
        assert!(st.flags.iter().any(|f| f.code == flag_codes::CLAIM_WARNING));
    }

    #[test]
    fn averaged_payer_rate_replaces_recorded_revenue() {
        let rules = RuleSet::default();
        let mut payer = PayerRule::fee_for_service("P1");
        payer.revenue_basis = crate::model::RevenueBasis::AveragedEstimate;
        payer.averaged_rate_by_service.insert("IT".into(), Money::new(dec!(45)));
        let payers = [(payer.payer_id.clone(), payer)].into();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let st = statement(&policy, &view(vec![svc("a", "2009-03-02", dec!(90), true)])).unwrap();
        assert_eq!(st.vpu_final_total, Exact::from_decimal(dec!(0.5)));
        assert_eq!(st.per_service_lines[0].revenue, Money::new(dec!(45)));
    }

    #[test]
    fn slicer_scales_credit_when_enabled() {
        let rules = RuleSet::default();
        let payers = payers();
        // 10000 / (160 * 0.625) = 100 per hour
        let mut v = view(vec![ServiceRecord {
            duration_hours: dec!(4.5),
            ..svc("a", "2009-03-02", dec!(90), true)
        }]);
        v.profile.expected_monthly_revenue = Money::new(dec!(10000));
        v.outcomes.push(OutcomeRecord {
            client_id: ClientId::new("C1"),
            measure_id: "m".into(),
            period: v.month,
            baseline: dec!(2.5),
            endpoint: dec!(3.5),
            cpuc: Money::new(dec!(500)),
        });
        let off = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &off };
        let st = statement(&policy, &v).unwrap();
        assert_eq!(st.vpu_final_total, Exact::from_decimal(dec!(0.9)));
        assert!(st.per_service_lines[0].slicer.is_none());

        let on = EngineConfig { slicer_enabled: true, ..Default::default() };
        let policy = Policy { rules: &rules, payers: &payers, config: &on };
        let st = statement(&policy, &v).unwrap();
        assert_eq!(st.vpu_final_total, Exact::one());
        assert_eq!(st.per_service_lines[0].slicer.as_ref().unwrap().to_fixed(2), "1.11");

        let clamped = EngineConfig {
            slicer_enabled: true,
            slicer_clamp: Some(SlicerClamp { min: dec!(0.5), max: dec!(1) }),
            ..Default::default()
        };
        let policy = Policy { rules: &rules, payers: &payers, config: &clamped };
        let st = statement(&policy, &v).unwrap();
        assert_eq!(st.vpu_final_total, Exact::from_decimal(dec!(0.9)));
    }

    #[test]
    fn eligibility_feeds_client_fields() {
        let rules = parse_rules(
            "[[rule]]\nrule_id = \"elig\"\nmetric = \"eligibility\"\nwhen = \"not client.eligible\"\nmode = \"scale\"\nfactor = 0.5\n",
        )
        .unwrap();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let mut v = view(vec![svc("a", "2009-03-02", dec!(90), true)]);
        let st = statement(&policy, &v).unwrap();
        assert!(st.flags.iter().any(|f| f.code == flag_codes::MISSING_FIELD));
        assert_eq!(st.vpu_final_total, Exact::one());
        v.eligibility.push(EligibilityRecord {
            client_id: ClientId::new("C1"),
            month: v.month,
            program: Program::Adult,
            eligible: false,
        });
        let st = statement(&policy, &v).unwrap();
        assert_eq!(st.vpu_final_total, Exact::from_decimal(dec!(0.5)));
    }

    #[test]
    fn zero_expectation_is_flagged() {
        let rules = RuleSet::default();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let mut v = view(vec![svc("a", "2009-03-02", dec!(90), true)]);
        v.profile.expected_monthly_revenue = Money::ZERO;
        let st = statement(&policy, &v).unwrap();
        assert!(st.vpu_final_total.is_zero());
        assert!(st.flags.iter().any(|f| f.code == flag_codes::NO_CLINICAL_EXPECTATION));
    }

    #[test]
    fn whatif_adds_valid_and_flags_invalid() {
        let rules = parse_rules(RULES).unwrap();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let v = view((0..40).map(|i| svc(&format!("s{i:02}"), "2009-03-02", dec!(90), true)).collect());
        let mtd = statement(&policy, &v).unwrap();
        assert_eq!(mtd.productivity_percentage, Exact::from_decimal(dec!(0.4)));

        let empty = project_whatif(&policy, &v, mtd.per_service_lines.clone(), &[]).unwrap();
        assert_eq!(empty.statement, mtd);

        let mut bad = svc("p2", "2009-04-01", dec!(90), true);
        bad.duration_hours = dec!(0);
        let proposals = vec![svc("p1", "2009-03-20", dec!(90), true), bad];
        let w = project_whatif(&policy, &v, mtd.per_service_lines.clone(), &proposals).unwrap();
        assert_eq!(w.statement.vpu_final_total, Exact::from_integer(41));
        assert_eq!(w.statement.productivity_percentage, Exact::from_decimal(dec!(0.41)));
        assert_eq!(w.rejected.len(), 1);
        assert_eq!(w.rejected[0].index, 1);
        assert_eq!(w.rejected[0].violations.len(), 2);
        assert!(w.statement.flags.iter().any(|f| f.code == flag_codes::WHATIF_REJECTED));
    }

    #[test]
    fn whatif_gated_proposal_contributes_zero() {
        let rules = RuleSet::default();
        let mut payer = PayerRule::fee_for_service("P9");
        payer.required_licensure.insert("MD".into());
        let mut payers = payers();
        payers.insert(payer.payer_id.clone(), payer);
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let v = view(vec![]);
        let mut p = svc("p1", "2009-03-20", dec!(90), true);
        p.payer_id = PayerId::new("P9");
        let w = project_whatif(&policy, &v, vec![], &[p]).unwrap();
        assert!(w.statement.vpu_final_total.is_zero());
        assert!(w.statement.flags.iter().any(|f| f.message == "claim invalid: licensure"));
    }

    #[test]
    fn business_day_pace() {
        let month: Month = "2009-03".parse().unwrap();
        // March 2009 has 22 weekdays; the 16th is a Monday, 11 weekdays elapsed
        assert_eq!(pace_days(month, "2009-03-16".parse().unwrap(), PaceBasis::BusinessDays), (11, 22));
        assert_eq!(pace_days(month, "2009-03-16".parse().unwrap(), PaceBasis::CalendarDays), (16, 31));
        assert_eq!(pace_days(month, "2009-03-01".parse().unwrap(), PaceBasis::BusinessDays), (0, 22));
    }

    #[test]
    fn feedback_mid_month() {
        let rules = parse_rules(RULES).unwrap();
        let payers = payers();
        let config = EngineConfig::default();
        let policy = Policy { rules: &rules, payers: &payers, config: &config };
        let mut services: Vec<_> = (0..40).map(|i| svc(&format!("s{i:02}"), "2009-03-02", dec!(90), true)).collect();
        services.push(svc("late", "2009-03-30", dec!(90), true));
        services.push(svc("noplan", "2009-03-03", dec!(90), false));
        let v = view(services);
        let (fb, st) = feedback(&policy, &v, "2009-03-16".parse().unwrap()).unwrap();
        assert_eq!(fb.month_to_date_vpu, Exact::from_integer(40));
        assert_eq!(fb.target, Exact::from_integer(100));
        assert_eq!(fb.productivity_percentage, Exact::from_decimal(dec!(0.4)));
        // recomputable from the statement
        assert_eq!(fb.month_to_date_vpu, st.vpu_final_total);
        let expected_pace = &st.vpu_final_total / &(&(&st.target * &Exact::from_integer(11)) / &Exact::from_integer(22));
        assert_eq!(fb.pace.unwrap(), expected_pace);
        assert!(fb.flags.iter().any(|f| f.code == flag_codes::TREATMENT_PLAN_INCOMPLETE));
        assert!(fb.flags.iter().any(|f| f.code == flag_codes::GATED));

        let (early, _) = feedback(&policy, &v, "2009-03-01".parse().unwrap()).unwrap();
        assert!(early.pace.is_none());
        assert!(early.flags.iter().any(|f| f.code == flag_codes::PACE_UNDEFINED));
    }
}
