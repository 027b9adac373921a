//! The `when` condition language of modifier rules.
//!
//! ```text
//! expr     := or
//! or       := and ( "or" and )*
//! and      := unary ( "and" unary )*
//! unary    := "not" unary | primary
//! primary  := "(" expr ")" | operand [ cmp_op operand | "in" operand ]
//! cmp_op   := "=" | "!=" | "<" | "<=" | ">" | ">="
//! operand  := field | string | number | "true" | "false" | "{" [ string ("," string)* ] "}"
//! ```
//!
//! A bare operand must be boolean. `x in S` tests membership when `x` is a
//! string and containment (every element of `x` is in `S`) when `x` is a set.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;

use crate::billing::ClaimStatus;
use crate::model::{PayerRule, Program, ServiceRecord, StaffProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Str,
    Num,
    Bool,
    Set,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Str => "string",
            ValueType::Num => "number",
            ValueType::Bool => "boolean",
            ValueType::Set => "set",
        })
    }
}

/// A field a predicate can read.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Field {
    ServiceType,
    ServicePayerId,
    ServiceClientId,
    ServiceStaffId,
    ServiceDurationHours,
    ServiceActualRevenue,
    Flag(String),
    StaffClinicalFte,
    StaffTotalFte,
    StaffClinicalPercentage,
    StaffLicensure,
    StaffProgram,
    PayerId,
    PayerPaymentMethod,
    PayerRequiresAuthorization,
    PayerRequiredLicensure,
    PayerRevenueBasis,
    ClientEligible,
    ClientProgram,
    ClaimValid,
    ClaimViolations,
}

const FIXED_FIELDS: &[(&str, Field, ValueType)] = &[
    ("service.service_type", Field::ServiceType, ValueType::Str),
    ("service.payer_id", Field::ServicePayerId, ValueType::Str),
    ("service.client_id", Field::ServiceClientId, ValueType::Str),
    ("service.staff_id", Field::ServiceStaffId, ValueType::Str),
    ("service.duration_hours", Field::ServiceDurationHours, ValueType::Num),
    ("service.actual_revenue", Field::ServiceActualRevenue, ValueType::Num),
    ("staff.clinical_fte", Field::StaffClinicalFte, ValueType::Num),
    ("staff.total_fte", Field::StaffTotalFte, ValueType::Num),
    ("staff.clinical_percentage", Field::StaffClinicalPercentage, ValueType::Num),
    ("staff.licensure", Field::StaffLicensure, ValueType::Set),
    ("staff.program", Field::StaffProgram, ValueType::Str),
    ("payer.payer_id", Field::PayerId, ValueType::Str),
    ("payer.payment_method", Field::PayerPaymentMethod, ValueType::Str),
    ("payer.requires_authorization", Field::PayerRequiresAuthorization, ValueType::Bool),
    ("payer.required_licensure", Field::PayerRequiredLicensure, ValueType::Set),
    ("payer.revenue_basis", Field::PayerRevenueBasis, ValueType::Str),
    ("client.eligible", Field::ClientEligible, ValueType::Bool),
    ("client.program", Field::ClientProgram, ValueType::Str),
    ("claim.valid", Field::ClaimValid, ValueType::Bool),
    ("claim.violations", Field::ClaimViolations, ValueType::Set),
];

impl Field {
    pub fn lookup(path: &str) -> Option<Field> {
        if let Some(name) = path.strip_prefix("flag.") {
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Some(Field::Flag(name.to_string()));
            }
            return None;
        }
        FIXED_FIELDS.iter().find(|(p, _, _)| *p == path).map(|(_, f, _)| f.clone())
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            Field::Flag(_) => ValueType::Bool,
            other => FIXED_FIELDS
                .iter()
                .find(|(_, f, _)| f == other)
                .map(|(_, _, t)| *t)
                .expect("every fixed field is tabled"),
        }
    }

    pub fn path(&self) -> String {
        match self {
            Field::Flag(name) => format!("flag.{name}"),
            other => FIXED_FIELDS
                .iter()
                .find(|(_, f, _)| f == other)
                .map(|(p, _, _)| p.to_string())
                .expect("every fixed field is tabled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Field(Field),
    Str(String),
    Num(Decimal),
    Bool(bool),
    Set(BTreeSet<String>),
}

impl Operand {
    fn value_type(&self) -> ValueType {
        match self {
            Operand::Field(f) => f.value_type(),
            Operand::Str(_) => ValueType::Str,
            Operand::Num(_) => ValueType::Num,
            Operand::Bool(_) => ValueType::Bool,
            Operand::Set(_) => ValueType::Set,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Or(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Cmp(Operand, CmpOp, Operand),
    In(Operand, Operand),
    Truthy(Operand),
}

/// A parse or type error at a 1-based character column of the expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateError {
    pub column: usize,
    pub message: String,
}

impl fmt::Display for PredicateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(Decimal),
    Op(CmpOp),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, PredicateError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: String| PredicateError { column, message };
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Op(CmpOp::Eq)),
            '≠' => Some(Tok::Op(CmpOp::Ne)),
            '≤' => Some(Tok::Op(CmpOp::Le)),
            '≥' => Some(Tok::Op(CmpOp::Ge)),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, column });
            i += 1;
            continue;
        }
        match c {
            '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, width) = match (c, next) {
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', Some('>')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => return Err(err(column, "expected '=' after '!'".into())),
                };
                out.push(Token { tok: Tok::Op(op), column });
                i += width;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(column, "unterminated string".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                _ => return Err(err(i + 1, "unsupported escape".into())),
                            }
                            i += 2;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), column });
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = Decimal::from_str(&text).map_err(|_| err(column, format!("invalid number {text:?}")))?;
                out.push(Token { tok: Tok::Num(n), column });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    column,
                });
            }
            other => return Err(err(column, format!("unexpected character {other:?}"))),
        }
    }
    out.push(Token {
        tok: Tok::End,
        column: chars.len() + 1,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn error<T>(&self, column: usize, message: impl Into<String>) -> Result<T, PredicateError> {
        Err(PredicateError {
            column,
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, PredicateError> {
        let mut lhs = self.and()?;
        while self.is_keyword("or") {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, PredicateError> {
        let mut lhs = self.unary()?;
        while self.is_keyword("and") {
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, PredicateError> {
        if self.is_keyword("not") {
            self.bump();
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, PredicateError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let inner = self.expr()?;
            let close = self.bump();
            if close.tok != Tok::RParen {
                return self.error(close.column, "expected ')'");
            }
            return Ok(inner);
        }
        let (lhs, lhs_col) = self.operand()?;
        match self.peek().tok.clone() {
            Tok::Op(op) => {
                let op_col = self.bump().column;
                let (rhs, _) = self.operand()?;
                check_comparison(&lhs, op, &rhs, op_col)?;
                Ok(Expr::Cmp(lhs, op, rhs))
            }
            Tok::Ident(kw) if kw == "in" => {
                let in_col = self.bump().column;
                let (rhs, _) = self.operand()?;
                if rhs.value_type() != ValueType::Set {
                    return self.error(in_col, format!("right side of 'in' must be a set, found {}", rhs.value_type()));
                }
                if !matches!(lhs.value_type(), ValueType::Str | ValueType::Set) {
                    return self.error(
                        in_col,
                        format!("left side of 'in' must be a string or set, found {}", lhs.value_type()),
                    );
                }
                Ok(Expr::In(lhs, rhs))
            }
            _ => {
                if lhs.value_type() != ValueType::Bool {
                    return self.error(lhs_col, format!("expected a boolean condition, found {}", lhs.value_type()));
                }
                Ok(Expr::Truthy(lhs))
            }
        }
    }

    fn operand(&mut self) -> Result<(Operand, usize), PredicateError> {
        let t = self.bump();
        let operand = match t.tok {
            Tok::Str(s) => Operand::Str(s),
            Tok::Num(n) => Operand::Num(n),
            Tok::Ident(ref id) if id == "true" => Operand::Bool(true),
            Tok::Ident(ref id) if id == "false" => Operand::Bool(false),
            Tok::Ident(ref id) if matches!(id.as_str(), "and" | "or" | "not" | "in") => {
                return self.error(t.column, format!("unexpected keyword '{id}'"));
            }
            Tok::Ident(id) => match Field::lookup(&id) {
                Some(f) => Operand::Field(f),
                None => return self.error(t.column, format!("unknown field '{id}'")),
            },
            Tok::LBrace => {
                let mut items = BTreeSet::new();
                if self.peek().tok == Tok::RBrace {
                    self.bump();
                } else {
                    loop {
                        let item = self.bump();
                        match item.tok {
                            Tok::Str(s) => {
                                items.insert(s);
                            }
                            _ => return self.error(item.column, "set elements must be strings"),
                        }
                        let sep = self.bump();
                        match sep.tok {
                            Tok::Comma => continue,
                            Tok::RBrace => break,
                            _ => return self.error(sep.column, "expected ',' or '}'"),
                        }
                    }
                }
                Operand::Set(items)
            }
            Tok::End => return self.error(t.column, "unexpected end of expression"),
            _ => return self.error(t.column, "expected a field or literal"),
        };
        Ok((operand, t.column))
    }
}

fn check_comparison(lhs: &Operand, op: CmpOp, rhs: &Operand, column: usize) -> Result<(), PredicateError> {
    let (lt, rt) = (lhs.value_type(), rhs.value_type());
    if lt != rt {
        return Err(PredicateError {
            column,
            message: format!("cannot compare {lt} with {rt}"),
        });
    }
    if !matches!(op, CmpOp::Eq | CmpOp::Ne) && lt != ValueType::Num {
        return Err(PredicateError {
            column,
            message: format!("'{}' needs numbers, found {lt}", op.symbol()),
        });
    }
    Ok(())
}

impl FromStr for Expr {
    type Err = PredicateError;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        let tokens = lex(src)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        let t = parser.peek();
        if t.tok != Tok::End {
            return Err(PredicateError {
                column: t.column,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(expr)
    }
}

fn write_str_lit(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Field(field) => f.write_str(&field.path()),
            Operand::Str(s) => write_str_lit(f, s),
            Operand::Num(n) => write!(f, "{n}"),
            Operand::Bool(b) => write!(f, "{b}"),
            Operand::Set(items) => {
                f.write_str("{")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_str_lit(f, item)?;
                }
                f.write_str("}")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // and binds tighter than or; both associate left
        fn prec(e: &Expr) -> u8 {
            match e {
                Expr::Or(..) => 1,
                Expr::And(..) => 2,
                _ => 3,
            }
        }
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
            if wrap {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Or(l, r) | Expr::And(l, r) => {
                let p = prec(self);
                child(f, l, prec(l) < p)?;
                f.write_str(if p == 1 { " or " } else { " and " })?;
                child(f, r, prec(r) <= p)
            }
            Expr::Not(inner) => {
                f.write_str("not ")?;
                child(f, inner, !matches!(**inner, Expr::Not(_) | Expr::Truthy(_)))
            }
            Expr::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            Expr::In(l, r) => write!(f, "{l} in {r}"),
            Expr::Truthy(o) => write!(f, "{o}"),
        }
    }
}

/// Client facts known for the service month.
#[derive(Debug, Clone, Default)]
pub struct ClientContext {
    pub eligible: Option<bool>,
    pub program: Option<Program>,
}

/// Everything a predicate may read about one service.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub service: &'a ServiceRecord,
    pub profile: &'a StaffProfile,
    pub payer: Option<&'a PayerRule>,
    pub client: &'a ClientContext,
    pub claim: Option<&'a ClaimStatus>,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Num(Decimal),
    Bool(bool),
    Set(BTreeSet<String>),
}

/// A field the predicate needs has no value for this service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingField(pub String);

impl EvalContext<'_> {
    fn field(&self, field: &Field) -> Result<Value, MissingField> {
        let missing = || MissingField(field.path());
        let payer = || self.payer.ok_or_else(missing);
        let claim = || self.claim.ok_or_else(missing);
        let s = self.service;
        let p = self.profile;
        Ok(match field {
            Field::ServiceType => Value::Str(s.service_type.clone()),
            Field::ServicePayerId => Value::Str(s.payer_id.to_string()),
            Field::ServiceClientId => Value::Str(s.client_id.to_string()),
            Field::ServiceStaffId => Value::Str(s.staff_id.to_string()),
            Field::ServiceDurationHours => Value::Num(s.duration_hours),
            Field::ServiceActualRevenue => Value::Num(s.actual_revenue.amount()),
            Field::Flag(name) => Value::Bool(s.flag(name).ok_or_else(missing)?),
            Field::StaffClinicalFte => Value::Num(p.clinical_fte),
            Field::StaffTotalFte => Value::Num(p.total_fte),
            Field::StaffClinicalPercentage => Value::Num(p.clinical_percentage),
            Field::StaffLicensure => Value::Set(p.licensure.clone()),
            Field::StaffProgram => Value::Str(p.program.to_string()),
            Field::PayerId => Value::Str(payer()?.payer_id.to_string()),
            Field::PayerPaymentMethod => Value::Str(payer()?.payment_method.as_str().into()),
            Field::PayerRequiresAuthorization => Value::Bool(payer()?.requires_authorization),
            Field::PayerRequiredLicensure => Value::Set(payer()?.required_licensure.clone()),
            Field::PayerRevenueBasis => Value::Str(payer()?.revenue_basis.as_str().into()),
            Field::ClientEligible => Value::Bool(self.client.eligible.ok_or_else(missing)?),
            Field::ClientProgram => Value::Str(self.client.program.ok_or_else(missing)?.to_string()),
            Field::ClaimValid => Value::Bool(claim()?.valid),
            Field::ClaimViolations => Value::Set(
                claim()?
                    .violations
                    .iter()
                    .map(|v| v.code.as_str().to_string())
                    .collect(),
            ),
        })
    }

    fn operand(&self, o: &Operand) -> Result<Value, MissingField> {
        match o {
            Operand::Field(f) => self.field(f),
            Operand::Str(s) => Ok(Value::Str(s.clone())),
            Operand::Num(n) => Ok(Value::Num(*n)),
            Operand::Bool(b) => Ok(Value::Bool(*b)),
            Operand::Set(s) => Ok(Value::Set(s.clone())),
        }
    }
}

impl Expr {
    /// Evaluates every referenced field, so a missing field is reported
    /// whichever branch would have decided the result.
    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<bool, MissingField> {
        match self {
            Expr::Or(l, r) => {
                let (a, b) = (l.eval(ctx), r.eval(ctx));
                Ok(a? | b?)
            }
            Expr::And(l, r) => {
                let (a, b) = (l.eval(ctx), r.eval(ctx));
                Ok(a? & b?)
            }
            Expr::Not(e) => Ok(!e.eval(ctx)?),
            Expr::Truthy(o) => match ctx.operand(o)? {
                Value::Bool(b) => Ok(b),
                _ => unreachable!("type checked at parse"),
            },
            Expr::In(item, set) => {
                let (item, set) = (ctx.operand(item)?, ctx.operand(set)?);
                match (item, set) {
                    (Value::Str(s), Value::Set(set)) => Ok(set.contains(&s)),
                    (Value::Set(sub), Value::Set(set)) => Ok(sub.is_subset(&set)),
                    _ => unreachable!("type checked at parse"),
                }
            }
            Expr::Cmp(l, op, r) => {
                let (l, r) = (ctx.operand(l)?, ctx.operand(r)?);
                Ok(match op {
                    CmpOp::Eq => l == r,
                    CmpOp::Ne => l != r,
                    _ => match (l, r) {
                        (Value::Num(a), Value::Num(b)) => match op {
                            CmpOp::Lt => a < b,
                            CmpOp::Le => a <= b,
                            CmpOp::Gt => a > b,
                            CmpOp::Ge => a >= b,
                            CmpOp::Eq | CmpOp::Ne => unreachable!(),
                        },
                        _ => unreachable!("type checked at parse"),
                    },
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientId, Money, PayerId, ServiceId, StaffId};
    use rust_decimal_macros::dec;

    fn parse(s: &str) -> Expr {
        s.parse().unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("flag.a or flag.b and not flag.c");
        let a = Expr::Truthy(Operand::Field(Field::Flag("a".into())));
        let b = Expr::Truthy(Operand::Field(Field::Flag("b".into())));
        let c = Expr::Truthy(Operand::Field(Field::Flag("c".into())));
        assert_eq!(
            e,
            Expr::Or(Box::new(a), Box::new(Expr::And(Box::new(b), Box::new(Expr::Not(Box::new(c))))))
        );
    }

    #[test]
    fn printing_reparses_to_same_tree() {
        for src in [
            "not flag.treatment_plan_complete",
            "(flag.a or flag.b) and flag.c",
            "flag.a and (flag.b and flag.c)",
            "flag.a or (flag.b or flag.c)",
            "not (service.duration_hours >= 1.5 and staff.program = \"adult\")",
            "payer.required_licensure in staff.licensure",
            "\"LCSW\" in staff.licensure or service.service_type in {\"IT\", \"GT\"}",
            "not not claim.valid",
            "service.actual_revenue != -3.25",
            "\"say \\\"hi\\\"\" = service.service_type",
        ] {
            let e = parse(src);
            assert_eq!(parse(&e.to_string()), e, "{src} -> {e}");
        }
    }

    #[test]
    fn errors_carry_columns() {
        let err = "flag.a and bogus.field".parse::<Expr>().unwrap_err();
        assert_eq!(err.column, 12);
        assert!(err.message.contains("unknown field"));

        let err = "service.duration_hours = \"x\"".parse::<Expr>().unwrap_err();
        assert_eq!(err.column, 24);
        assert!(err.message.contains("cannot compare"));

        let err = "staff.program < \"b\"".parse::<Expr>().unwrap_err();
        assert!(err.message.contains("needs numbers"));

        let err = "service.duration_hours".parse::<Expr>().unwrap_err();
        assert_eq!(err.column, 1);

        let err = "(flag.a".parse::<Expr>().unwrap_err();
        assert_eq!(err.column, 8);

        assert!("flag.a flag.b".parse::<Expr>().is_err());
        assert!("\"open".parse::<Expr>().is_err());
        assert!("flag.a and".parse::<Expr>().is_err());
        assert!("1 in staff.licensure".parse::<Expr>().is_err());
        assert!("staff.program in \"x\"".parse::<Expr>().is_err());
    }

    fn fixture() -> (ServiceRecord, StaffProfile, PayerRule) {
        let service = ServiceRecord {
            service_id: ServiceId::new("V1"),
            staff_id: StaffId::new("S1"),
            client_id: ClientId::new("C1"),
            date: "2009-03-02".parse().unwrap(),
            service_type: "IT".into(),
            duration_hours: dec!(1.5),
            payer_id: PayerId::new("P1"),
            actual_revenue: Money::new(dec!(100)),
            flags: [("treatment_plan_complete".to_string(), false)].into(),
        };
        let mut profile = StaffProfile::new("S1", dec!(1), dec!(9000));
        profile.licensure.insert("LPC".into());
        let mut payer = PayerRule::fee_for_service("P1");
        payer.required_licensure.insert("LCSW".into());
        (service, profile, payer)
    }

    #[test]
    fn evaluation() {
        let (service, profile, payer) = fixture();
        let client = ClientContext::default();
        let ctx = EvalContext {
            service: &service,
            profile: &profile,
            payer: Some(&payer),
            client: &client,
            claim: None,
        };
        let t = |s: &str| parse(s).eval(&ctx);
        assert_eq!(t("not flag.treatment_plan_complete"), Ok(true));
        assert_eq!(t("not (payer.required_licensure in staff.licensure)"), Ok(true));
        assert_eq!(t("\"LPC\" in staff.licensure"), Ok(true));
        assert_eq!(t("service.duration_hours > 1 and service.duration_hours <= 1.5"), Ok(true));
        assert_eq!(t("service.service_type in {\"GT\"}"), Ok(false));
        assert_eq!(t("payer.payment_method = \"fee_for_service\""), Ok(true));
        assert_eq!(t("{} in staff.licensure"), Ok(true));
        assert_eq!(t("flag.authorization_present"), Err(MissingField("flag.authorization_present".into())));
        // strict: the missing field surfaces even though the left side decides
        assert_eq!(
            t("true or client.eligible"),
            Err(MissingField("client.eligible".into()))
        );
        assert_eq!(t("claim.valid"), Err(MissingField("claim.valid".into())));
    }

    #[test]
    fn missing_payer_fields() {
        let (service, profile, _) = fixture();
        let client = ClientContext::default();
        let ctx = EvalContext {
            service: &service,
            profile: &profile,
            payer: None,
            client: &client,
            claim: None,
        };
        assert_eq!(
            parse("payer.requires_authorization").eval(&ctx),
            Err(MissingField("payer.requires_authorization".into()))
        );
    }
}
