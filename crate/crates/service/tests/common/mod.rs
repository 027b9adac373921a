#![allow(dead_code)]

use std::fmt::Write;
use std::sync::Arc;

use axum::body::Body;
use chrono::Datelike;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;
use vpu_core::model::Month;
use vpu_core::store::{RecordKind, Store};
use vpu_service::App;

pub const RULES: &str = r#"
[[rule]]
rule_id = "treatment-plan"
metric = "treatment_plan"
when = "not flag.treatment_plan_complete"
mode = "gate"

[[rule]]
rule_id = "ineligible"
metric = "eligibility"
when = "client.eligible = false"
mode = "scale"
factor = 0.5
"#;

pub const PAYERS: &str = "\
# schema_version: 1
payer_id,payment_method,required_licensure,requires_authorization,revenue_basis,averaged_rates
P1,fee_for_service,LCSW,false,actual,
P2,case_rate,,true,averaged_estimate,IT=90;GT=40
P3,fee_for_service,,false,actual,
";

#[derive(Debug, Clone, Default)]
pub struct Fixture {
    pub staff: String,
    pub payers: String,
    pub services: String,
    pub outcomes: String,
    pub eligibility: String,
    pub service_count: usize,
}

impl Fixture {
    pub fn files(&self) -> [(RecordKind, &str); 5] {
        [
            (RecordKind::Staff, self.staff.as_str()),
            (RecordKind::Payers, self.payers.as_str()),
            (RecordKind::Services, self.services.as_str()),
            (RecordKind::Outcomes, self.outcomes.as_str()),
            (RecordKind::Eligibility, self.eligibility.as_str()),
        ]
    }

    pub fn load(&self, store: &Store) {
        for (kind, text) in self.files() {
            let r = store.ingest(kind, kind.as_str(), text).unwrap();
            assert_eq!(r.rejected, 0, "{kind}: {:?}", r.rejections);
        }
    }
}

pub fn staff_id(i: usize) -> String {
    format!("S{i:03}")
}

/// `staff` clinicians over `months`, `total_services` spread evenly.
pub fn synthetic(seed: u64, staff: usize, months: &[Month], total_services: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Fixture {
        payers: PAYERS.to_string(),
        ..Default::default()
    };
    f.staff.push_str("staff_id,name,clinical_fte,total_fte,expected_monthly_revenue,licensure,program\n");
    let ftes = ["0.5", "0.75", "1", "1"];
    for i in 0..staff {
        let fte = ftes[rng.gen_range(0..ftes.len())];
        let revenue: f64 = fte.parse::<f64>().unwrap() * 9000.0;
        let licensure = if rng.gen_bool(0.85) { "LCSW" } else { "" };
        writeln!(f.staff, "{},Clinician {i},{fte},1,{revenue},{licensure},adult", staff_id(i)).unwrap();
    }
    f.services
        .push_str("service_id,staff_id,client_id,date,service_type,duration_hours,payer_id,actual_revenue,flags\n");
    f.eligibility.push_str("client_id,month,program,eligible\n");
    f.outcomes.push_str("client_id,measure_id,period,baseline,endpoint,cpuc\n");
    let slots = staff * months.len();
    for n in 0..total_services {
        let slot = n % slots;
        let month = months[slot / staff];
        let s = slot % staff;
        let day = rng.gen_range(1..=month.last_day().day());
        let client = format!("C{s:03}-{}", rng.gen_range(0..6));
        let (service_type, hours, revenue) = if rng.gen_bool(0.7) {
            ("IT", Decimal2(rng.gen_range(50..=200)), Decimal2(rng.gen_range(4000..=18000)))
        } else {
            ("GT", Decimal2(rng.gen_range(100..=200)), Decimal2(rng.gen_range(2000..=6000)))
        };
        let payer = ["P1", "P2", "P3"][rng.gen_range(0..3)];
        let plan = rng.gen_bool(0.9);
        let auth = rng.gen_bool(0.8);
        writeln!(
            f.services,
            "V{n:06},{},{client},{}-{day:02},{service_type},{hours},{payer},{revenue},treatment_plan_complete={plan};authorization_present={auth}",
            staff_id(s),
            month,
        )
        .unwrap();
    }
    f.service_count = total_services;
    for &month in months {
        for s in 0..staff {
            for c in 0..6 {
                if rng.gen_bool(0.5) {
                    writeln!(f.eligibility, "C{s:03}-{c},{month},adult,{}", rng.gen_bool(0.85)).unwrap();
                }
                if rng.gen_bool(0.2) {
                    writeln!(
                        f.outcomes,
                        "C{s:03}-{c},phq9,{month},{},{},{}",
                        Decimal2(rng.gen_range(100..=2000)),
                        Decimal2(rng.gen_range(100..=2000)),
                        rng.gen_range(100..=1000)
                    )
                    .unwrap();
                }
            }
        }
    }
    f
}

/// Two-place decimal from hundredths.
pub struct Decimal2(pub i64);

impl std::fmt::Display for Decimal2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

pub fn month(s: &str) -> Month {
    s.parse().unwrap()
}

pub fn app_with(fixture: &Fixture) -> App {
    let store = Store::in_memory();
    fixture.load(&store);
    let mut app = App::new(store);
    app.rules = RULES.parse().unwrap();
    app.token = Some("secret".into());
    app
}

pub struct Reply {
    pub status: StatusCode,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap()
    }
}

pub async fn call(router: &axum::Router, request: Request<Body>) -> Reply {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub async fn get(router: &axum::Router, uri: &str) -> Reply {
    call(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post(router: &axum::Router, uri: &str, body: impl Into<String>, token: Option<&str>) -> Reply {
    let mut req = Request::post(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    call(router, req.body(Body::from(body.into())).unwrap()).await
}

pub fn router(app: App) -> (axum::Router, Arc<App>) {
    let app = Arc::new(app);
    (vpu_service::api::router(app.clone(), None), app)
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["vpu"];
    argv.extend_from_slice(args);
    let code = vpu_service::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
