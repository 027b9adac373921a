//! Declarative modifier rules.
//!
//! A rule set is a TOML document holding one `[[rule]]` table per rule and an
//! optional `[claims]` table choosing which claim violations zero credit:
//!
//! ```toml
//! schema_version = 1
//!
//! [claims]
//! gates = ["licensure", "authorization", "unknown_payer", "unbillable_service_type"]
//!
//! [[rule]]
//! rule_id = "treatment-plan"
//! metric = "treatment_plan"
//! when = "not flag.treatment_plan_complete"
//! mode = "gate"
//! factor = 0
//! precedence = 10
//! ```
//!
//! Fired rules multiply into one modifier factor. A gate forces the factor to
//! zero; a scale rule contributes its factor in `(0, 2]`.

pub mod predicate;

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::billing::{ClaimStatus, ViolationCode};
use crate::exact::Exact;

pub use predicate::{ClientContext, EvalContext, Expr, MissingField, PredicateError};

pub const RULES_SCHEMA_VERSION: i64 = 1;
const MAX_FACTOR: Decimal = Decimal::TWO;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Scale,
    Gate,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Scale => "scale",
            Mode::Gate => "gate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModifierRule {
    pub rule_id: String,
    pub metric: String,
    pub when: Expr,
    pub mode: Mode,
    pub factor: Decimal,
    pub precedence: i64,
}

/// Immutable, validated rules in evaluation order `(precedence, rule_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<ModifierRule>,
    claim_gates: BTreeSet<ViolationCode>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            rules: Vec::new(),
            claim_gates: ViolationCode::ALL.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("rule {rule_id:?} (line {line}): {message}")]
    Semantic { rule_id: String, line: usize, message: String },
}

/// What one rule did to one service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModifierOutcome {
    pub rule_id: String,
    pub metric: String,
    pub mode: Mode,
    pub fired: bool,
    #[serde(serialize_with = "crate::wire::decimal_fixed4")]
    pub factor_applied: Decimal,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing_field: Option<String>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<ModifierRule>, claim_gates: BTreeSet<ViolationCode>) -> Result<Self, RuleError> {
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if !seen.insert(rule.rule_id.clone()) {
                return Err(semantic(&rule.rule_id, 0, format!("duplicate rule_id {:?}", rule.rule_id)));
            }
            check_rule(rule, 0)?;
        }
        rules.sort_by(|a, b| (a.precedence, &a.rule_id).cmp(&(b.precedence, &b.rule_id)));
        Ok(RuleSet { rules, claim_gates })
    }

    pub fn rules(&self) -> &[ModifierRule] {
        &self.rules
    }

    pub fn claim_gates(&self) -> &BTreeSet<ViolationCode> {
        &self.claim_gates
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Canonical TOML text; parses back to an equal rule set.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let q = |s: &str| toml::Value::String(s.to_string()).to_string();
        writeln!(out, "schema_version = {RULES_SCHEMA_VERSION}").unwrap();
        writeln!(out).unwrap();
        writeln!(out, "[claims]").unwrap();
        let gates: Vec<String> = self.claim_gates.iter().map(|c| q(c.as_str())).collect();
        writeln!(out, "gates = [{}]", gates.join(", ")).unwrap();
        for rule in &self.rules {
            writeln!(out).unwrap();
            writeln!(out, "[[rule]]").unwrap();
            writeln!(out, "rule_id = {}", q(&rule.rule_id)).unwrap();
            writeln!(out, "metric = {}", q(&rule.metric)).unwrap();
            writeln!(out, "when = {}", q(&rule.when.to_string())).unwrap();
            writeln!(out, "mode = {}", q(rule.mode.as_str())).unwrap();
            writeln!(out, "factor = {}", q(&rule.factor.normalize().to_string())).unwrap();
            writeln!(out, "precedence = {}", rule.precedence).unwrap();
        }
        out
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config_string())
    }
}

fn semantic(rule_id: &str, line: usize, message: impl Into<String>) -> RuleError {
    RuleError::Semantic {
        rule_id: rule_id.to_string(),
        line,
        message: message.into(),
    }
}

fn check_rule(rule: &ModifierRule, line: usize) -> Result<(), RuleError> {
    if rule.rule_id.trim().is_empty() {
        return Err(semantic(&rule.rule_id, line, "rule_id must not be empty"));
    }
    match rule.mode {
        Mode::Gate if !rule.factor.is_zero() => Err(semantic(&rule.rule_id, line, "gate requires factor 0")),
        Mode::Scale if rule.factor <= Decimal::ZERO || rule.factor > MAX_FACTOR => {
            Err(semantic(&rule.rule_id, line, "scale requires a factor in (0, 2]"))
        }
        _ => Ok(()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    schema_version: Option<toml::Spanned<i64>>,
    claims: Option<RawClaims>,
    #[serde(default)]
    rule: Vec<toml::Spanned<RawRule>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClaims {
    gates: Vec<toml::Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    rule_id: String,
    metric: String,
    when: toml::Spanned<String>,
    mode: toml::Spanned<String>,
    factor: Option<toml::Spanned<toml::Value>>,
    #[serde(default)]
    precedence: i64,
}

/// 1-based line and character column of a byte offset.
pub(crate) fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

fn parse_error_at(src: &str, offset: usize, message: impl Into<String>) -> RuleError {
    let (line, column) = line_col(src, offset);
    RuleError::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Reads a numeric config value written as a TOML integer, float or string.
pub(crate) fn decimal_value(value: &toml::Value) -> Option<Decimal> {
    match value {
        toml::Value::Integer(i) => Some(Decimal::from(*i)),
        // shortest round-trip text of the float
        toml::Value::Float(f) if f.is_finite() => Decimal::from_str(&f.to_string()).ok(),
        toml::Value::String(s) => Decimal::from_str(s.trim()).ok(),
        _ => None,
    }
}

pub(crate) fn toml_error(src: &str, err: toml::de::Error) -> RuleError {
    let offset = err.span().map(|s| s.start).unwrap_or(0);
    parse_error_at(src, offset, err.message().to_string())
}

/// Parses and validates a rule set.
pub fn parse_rules(config: &str) -> Result<RuleSet, RuleError> {
    if config.trim().is_empty() {
        return Ok(RuleSet::default());
    }
    let raw: RawFile = toml::from_str(config).map_err(|e| toml_error(config, e))?;
    if let Some(v) = &raw.schema_version {
        if *v.get_ref() != RULES_SCHEMA_VERSION {
            return Err(parse_error_at(
                config,
                v.span().start,
                format!("unsupported schema_version {} (expected {RULES_SCHEMA_VERSION})", v.get_ref()),
            ));
        }
    }
    let claim_gates = match raw.claims {
        None => ViolationCode::ALL.into_iter().collect(),
        Some(claims) => {
            let mut gates = BTreeSet::new();
            for g in claims.gates {
                let code = ViolationCode::from_str(g.get_ref()).map_err(|m| parse_error_at(config, g.span().start, m))?;
                gates.insert(code);
            }
            gates
        }
    };
    let mut rules = Vec::with_capacity(raw.rule.len());
    let mut seen = BTreeSet::new();
    for spanned in raw.rule {
        let (line, _) = line_col(config, spanned.span().start);
        let r = spanned.into_inner();
        if !seen.insert(r.rule_id.clone()) {
            return Err(semantic(&r.rule_id, line, format!("duplicate rule_id {:?}", r.rule_id)));
        }
        let mode = match r.mode.get_ref().as_str() {
            "scale" => Mode::Scale,
            "gate" => Mode::Gate,
            other => {
                return Err(parse_error_at(
                    config,
                    r.mode.span().start,
                    format!("rule {:?}: mode must be \"scale\" or \"gate\", found {other:?}", r.rule_id),
                ))
            }
        };
        let factor = match (&r.factor, mode) {
            (None, Mode::Gate) => Decimal::ZERO,
            (None, Mode::Scale) => return Err(semantic(&r.rule_id, line, "scale requires a factor")),
            (Some(v), _) => decimal_value(v.get_ref())
                .ok_or_else(|| parse_error_at(config, v.span().start, format!("rule {:?}: factor must be a number", r.rule_id)))?,
        };
        let when_start = r.when.span().start;
        let when = Expr::from_str(r.when.get_ref()).map_err(|e| {
            // skip the opening quote, then walk to the offending character
            let inner: usize = r
                .when
                .get_ref()
                .chars()
                .take(e.column.saturating_sub(1))
                .map(char::len_utf8)
                .sum();
            parse_error_at(config, when_start + 1 + inner, format!("rule {:?}: {}", r.rule_id, e.message))
        })?;
        let rule = ModifierRule {
            rule_id: r.rule_id,
            metric: r.metric,
            when,
            mode,
            factor,
            precedence: r.precedence,
        };
        check_rule(&rule, line)?;
        rules.push(rule);
    }
    RuleSet::new(rules, claim_gates)
}

impl FromStr for RuleSet {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rules(s)
    }
}

/// One outcome per rule, in `(precedence, rule_id)` order.
pub fn evaluate(ctx: &EvalContext<'_>, rules: &RuleSet) -> Vec<ModifierOutcome> {
    rules
        .rules
        .iter()
        .map(|rule| {
            let (fired, reason, missing_field) = match rule.when.eval(ctx) {
                Ok(true) => (true, rule.metric.clone(), None),
                Ok(false) => (false, "condition not met".to_string(), None),
                Err(MissingField(path)) => (false, format!("missing field: {path}"), Some(path)),
            };
            ModifierOutcome {
                rule_id: rule.rule_id.clone(),
                metric: rule.metric.clone(),
                mode: rule.mode,
                fired,
                factor_applied: if fired { rule.factor } else { Decimal::ONE },
                reason,
                missing_field,
            }
        })
        .collect()
}

/// Gate outcomes for the claim violations the rule set treats as gates.
pub fn claim_outcomes(claim: &ClaimStatus, rules: &RuleSet) -> Vec<ModifierOutcome> {
    claim
        .violations
        .iter()
        .filter(|v| rules.claim_gates.contains(&v.code))
        .map(|v| ModifierOutcome {
            rule_id: format!("claim.{}", v.code),
            metric: v.code.as_str().to_string(),
            mode: Mode::Gate,
            fired: true,
            factor_applied: Decimal::ZERO,
            reason: format!("claim invalid: {}", v.code),
            missing_field: None,
        })
        .collect()
}

/// Product of the factors of fired outcomes; 1 when nothing fired.
pub fn compose(outcomes: &[ModifierOutcome]) -> Exact {
    outcomes
        .iter()
        .filter(|o| o.fired)
        .fold(Exact::one(), |acc, o| acc * Exact::from_decimal(o.factor_applied))
}
