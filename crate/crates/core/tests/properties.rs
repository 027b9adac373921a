use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;
use rust_decimal::Decimal;
use vpu_core::analytics::paired_t_test;
use vpu_core::billing::ViolationCode;
use vpu_core::engine::{aggregate_month, compute_outcome_slicer, compute_vpu_base, VpuLine};
use vpu_core::model::{
    clinical_hours, validate_staff_profile, ClientId, Money, Month, PayerId, ServiceId, ServiceRecord, StaffProfile,
};
use vpu_core::rules::{compose, parse_rules, Expr, Mode, ModifierOutcome, ModifierRule, RuleSet};
use vpu_core::store::{RecordKind, Store};
use vpu_core::Exact;

fn dec(units: i64, scale: u32) -> Decimal {
    Decimal::new(units, scale)
}

fn service(id: usize, revenue: Decimal) -> ServiceRecord {
    ServiceRecord {
        service_id: ServiceId::new(format!("s{id}")),
        staff_id: "S1".into(),
        client_id: ClientId::new(format!("c{}", id % 7)),
        date: NaiveDate::from_ymd_opt(2009, 3, 1 + (id % 28) as u32).unwrap(),
        service_type: "IT".into(),
        duration_hours: Decimal::ONE,
        payer_id: PayerId::new("P1"),
        actual_revenue: Money::new(revenue),
        flags: Default::default(),
    }
}

fn profile_strategy() -> impl Strategy<Value = StaffProfile> {
    (1i64..=150, 1i64..=100_000_000, 1i64..=1000, 1i64..=400).prop_map(|(fte, re, cp, base)| {
        let mut p = StaffProfile::new("S1", dec(fte, 2), dec(re, 2));
        p.clinical_percentage = dec(cp, 3);
        p.base_hours_per_fte = Decimal::from(base);
        p.total_fte = p.clinical_fte.max(Decimal::ONE);
        p
    })
}

proptest! {
    #[test]
    fn vpu_base_is_linear_in_revenue(profile in profile_strategy(), ra in 0i64..10_000_000, k in 0i64..1000) {
        let s = service(0, dec(ra, 2));
        let scaled = service(0, dec(ra, 2) * Decimal::from(k));
        let base = compute_vpu_base(&s, &profile).unwrap();
        let base_k = compute_vpu_base(&scaled, &profile).unwrap();
        prop_assert_eq!(base_k, base * Exact::from_integer(k));
    }

    #[test]
    fn aggregation_matches_closed_form(
        profile in profile_strategy(),
        revenues in prop::collection::vec(0i64..500_000, 0..60),
    ) {
        let month: Month = "2009-03".parse().unwrap();
        let services: Vec<_> = revenues.iter().enumerate().map(|(i, r)| service(i, dec(*r, 2))).collect();
        let lines: Vec<_> = services
            .iter()
            .map(|s| VpuLine::unmodified(s, compute_vpu_base(s, &profile).unwrap()))
            .collect();
        let st = aggregate_month(&profile, lines, month).unwrap();
        let sum_ra: Exact = services.iter().map(|s| s.actual_revenue.exact()).sum();
        let closed = Exact::from_decimal(clinical_hours(&profile).unwrap())
            * Exact::from_decimal(profile.clinical_percentage)
            * sum_ra
            / &profile.expected_monthly_revenue.exact();
        prop_assert_eq!(&st.vpu_base_total, &closed);
        prop_assert_eq!(&st.vpu_final_total, &closed);
    }

    #[test]
    fn full_expectation_is_exactly_one_hundred_percent(fte in 1i64..=150, re in 1i64..=10_000_000, cuts in 1usize..20) {
        let profile = StaffProfile::new("S1", dec(fte, 2), dec(re, 2));
        // split R_e into `cuts` services that sum to it exactly
        let total = dec(re, 2);
        let part = (total / Decimal::from(cuts as u64)).round_dp(4);
        let mut revenues = vec![part; cuts - 1];
        revenues.push(total - part * Decimal::from((cuts - 1) as u64));
        prop_assume!(revenues.iter().all(|r| *r >= Decimal::ZERO));
        let lines: Vec<_> = revenues
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = service(i, *r);
                VpuLine::unmodified(&s, compute_vpu_base(&s, &profile).unwrap())
            })
            .collect();
        let st = aggregate_month(&profile, lines, "2009-03".parse().unwrap()).unwrap();
        prop_assert_eq!(st.productivity_percentage, Exact::one());
    }

    #[test]
    fn slicer_sign_follows_outcome_change(
        cpuc in 1i64..100_000,
        o0 in -10_000i64..10_000,
        o1 in -10_000i64..10_000,
        hourly in 1i64..100_000,
        hours in 1i64..10_000,
    ) {
        let s = compute_outcome_slicer(
            &Exact::from_decimal(dec(cpuc, 2)),
            &Exact::from_decimal(dec(o0, 2)),
            &Exact::from_decimal(dec(o1, 2)),
            &Exact::from_decimal(dec(hourly, 2)),
            &Exact::from_decimal(dec(hours, 2)),
        )
        .unwrap();
        prop_assert_eq!(s.is_positive(), o1 > o0);
        prop_assert_eq!(s.is_negative(), o1 < o0);
        prop_assert_eq!(s.is_zero(), o1 == o0);
    }

    #[test]
    fn compose_is_order_independent(
        factors in prop::collection::vec((0i64..=200, any::<bool>()), 0..8),
        seed in any::<u64>(),
    ) {
        let outcomes: Vec<_> = factors
            .iter()
            .enumerate()
            .map(|(i, (f, fired))| ModifierOutcome {
                rule_id: format!("r{i}"),
                metric: "m".into(),
                mode: Mode::Scale,
                fired: *fired,
                factor_applied: if *fired { dec(*f, 2) } else { Decimal::ONE },
                reason: String::new(),
                missing_field: None,
            })
            .collect();
        let mut shuffled = outcomes.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                shuffled.swap(i, (seed as usize).wrapping_add(i * 31) % n);
            }
        }
        prop_assert_eq!(compose(&outcomes), compose(&shuffled));
    }

    #[test]
    fn staff_validation_is_total(
        total in -50i64..300,
        clinical in -50i64..300,
        cp in -500i64..1500,
        re in -1000i64..1000,
        base in -10i64..400,
    ) {
        let mut p = StaffProfile::new("S1", dec(clinical, 2), dec(re, 0));
        p.total_fte = dec(total, 2);
        p.clinical_percentage = dec(cp, 3);
        p.base_hours_per_fte = Decimal::from(base);
        let ok = p.clinical_fte >= Decimal::ZERO
            && p.clinical_fte <= p.total_fte
            && p.total_fte <= dec(15, 1)
            && p.clinical_percentage > Decimal::ZERO
            && p.clinical_percentage <= Decimal::ONE
            && p.expected_monthly_revenue.amount() >= Decimal::ZERO
            && p.base_hours_per_fte > Decimal::ZERO;
        prop_assert_eq!(validate_staff_profile(&p).is_empty(), ok);
    }

    #[test]
    fn paired_t_is_antisymmetric(pairs in prop::collection::vec((-1000.0f64..1000.0, -1000.0f64..1000.0), 2..60)) {
        let forward = paired_t_test(&pairs).unwrap();
        let swapped: Vec<_> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
        let backward = paired_t_test(&swapped).unwrap();
        prop_assert!((forward.t + backward.t).abs() <= 1e-9 * forward.t.abs().max(1.0));
        prop_assert!((forward.p_two_sided - backward.p_two_sided).abs() <= 1e-12);
    }

    #[test]
    fn paired_t_on_identical_series(xs in prop::collection::vec(-1e6f64..1e6, 2..60)) {
        let pairs: Vec<_> = xs.iter().map(|x| (*x, *x)).collect();
        let r = paired_t_test(&pairs).unwrap();
        prop_assert_eq!(r.t, 0.0);
        prop_assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn rule_sets_round_trip(rules in prop::collection::vec(rule_strategy(), 0..6), gates in prop::sample::subsequence(ViolationCode::ALL.to_vec(), 0..=4)) {
        let mut seen = BTreeSet::new();
        let rules: Vec<_> = rules.into_iter().filter(|r| seen.insert(r.rule_id.clone())).collect();
        let set = RuleSet::new(rules, gates.into_iter().collect()).unwrap();
        let text = set.to_config_string();
        prop_assert_eq!(parse_rules(&text).unwrap(), set, "{}", text);
    }

    #[test]
    fn predicates_round_trip(expr in predicate_strategy()) {
        let parsed: Expr = expr.parse().unwrap();
        let printed = parsed.to_string();
        prop_assert_eq!(printed.parse::<Expr>().unwrap(), parsed);
    }

    #[test]
    fn ingest_is_idempotent(rows in prop::collection::vec(service_row_strategy(), 0..40)) {
        let mut text = String::from("service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue,flags\n");
        for r in &rows {
            text.push_str(r);
            text.push('\n');
        }
        let store = Store::in_memory();
        let first = store.ingest(RecordKind::Services, "f", &text).unwrap();
        let once = store.snapshot();
        let second = store.ingest(RecordKind::Services, "f", &text).unwrap();
        let twice = store.snapshot();
        prop_assert_eq!(twice.dataset(), once.dataset());
        prop_assert_eq!(first.accepted + first.rejected, rows.len());
        prop_assert_eq!(first, second);
    }
}

fn atom_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("flag.treatment_plan_complete".to_string()),
        Just("not flag.authorization_present".to_string()),
        Just("client.eligible".to_string()),
        Just("true".to_string()),
        (0i64..1000).prop_map(|n| format!("service.duration_hours >= {}", dec(n, 2))),
        (0i64..100000).prop_map(|n| format!("service.actual_revenue < {}", dec(n, 2))),
        Just("service.service_type in {\"IT\", \"GT\"}".to_string()),
        Just("staff.licensure != {}".to_string()),
        Just("payer.required_licensure in staff.licensure".to_string()),
        Just("client.program = \"adult\"".to_string()),
        Just("\"claim\" in {\"x\"}".to_string()),
        Just("claim.valid".to_string()),
    ]
}

fn predicate_strategy() -> impl Strategy<Value = String> {
    atom_strategy().prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) and ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) or ({b})")),
            inner.prop_map(|a| format!("not ({a})")),
        ]
    })
}

fn rule_strategy() -> impl Strategy<Value = ModifierRule> {
    (
        "[a-z][a-z0-9_-]{0,8}",
        "[a-z_]{1,10}",
        predicate_strategy(),
        any::<bool>(),
        1i64..=200,
        -5i64..5,
    )
        .prop_map(|(rule_id, metric, when, gate, factor, precedence)| ModifierRule {
            rule_id,
            metric,
            when: when.parse().unwrap(),
            mode: if gate { Mode::Gate } else { Mode::Scale },
            factor: if gate { Decimal::ZERO } else { dec(factor, 2) },
            precedence,
        })
}

fn service_row_strategy() -> impl Strategy<Value = String> {
    (0u32..30, 0u32..5, 1u32..29, -2i64..400, 0i64..50000, any::<bool>(), any::<bool>()).prop_map(
        |(id, staff, day, hours, revenue, plan, garbled)| {
            let date = if garbled { format!("2009-02-{}", day + 2) } else { format!("2009-03-{day:02}") };
            format!(
                "s{id},S{staff},C{},{date},IT,{},P1,{},treatment_plan_complete={plan}",
                id % 4,
                dec(hours, 2),
                dec(revenue, 2)
            )
        },
    )
}
