//! Money accounting for curation runs.
//!
//! All money is integer micro-dollars end to end; no floating point ever
//! touches an amount. Floats appear only in derived ratios such as the
//! search share of total cost.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::Usage;

/// Fraction of total cost above which search is reported as the dominant
/// cost driver.
pub const SEARCH_DOMINANT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("cannot derive a per-record baseline from zero records per hour")]
    DivisionByZeroRecords,
    #[error("invalid money amount {input:?}: {reason}")]
    InvalidMoney { input: String, reason: String },
}

/// An exact dollar amount stored as integer micro-dollars (1e-6 USD).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash,
)]
pub struct Money {
    micro: i64,
}

impl Money {
    pub const ZERO: Money = Money { micro: 0 };

    pub const fn from_micro(micro: i64) -> Self {
        Money { micro }
    }

    pub const fn micro(self) -> i64 {
        self.micro
    }

    /// Parse a non-negative decimal dollar amount ("0.25", "$1.50", "2")
    /// with at most six fractional digits.
    pub fn parse_dollars(input: &str) -> Result<Self, LedgerError> {
        let err = |reason: &str| LedgerError::InvalidMoney {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let s = input.trim();
        let s = s.strip_prefix('$').unwrap_or(s);
        if s.is_empty() {
            return Err(err("empty amount"));
        }
        if s.starts_with('-') {
            return Err(err("negative amounts are not supported"));
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(err("no digits"));
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) {
            return Err(err("non-digit in whole part"));
        }
        if !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(err("non-digit in fractional part"));
        }
        if frac.len() > 6 {
            return Err(err("more than six fractional digits"));
        }
        let whole_value: i64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| err("whole part out of range"))?
        };
        let mut frac_micro: i64 = 0;
        for (i, c) in frac.chars().enumerate() {
            frac_micro += (c as i64 - '0' as i64) * 10i64.pow(5 - i as u32);
        }
        whole_value
            .checked_mul(1_000_000)
            .and_then(|w| w.checked_add(frac_micro))
            .map(Money::from_micro)
            .ok_or_else(|| err("amount out of range"))
    }

    /// Canonical decimal rendering without a currency sign: trailing zeros
    /// trimmed, e.g. `0.25`, `2`, `0.666666`. Round-trips exactly through
    /// [`Money::parse_dollars`].
    pub fn to_decimal_string(self) -> String {
        let sign = if self.micro < 0 { "-" } else { "" };
        let abs = self.micro.unsigned_abs();
        let whole = abs / 1_000_000;
        let frac = abs % 1_000_000;
        if frac == 0 {
            format!("{sign}{whole}")
        } else {
            let frac = format!("{frac:06}");
            format!("{sign}{whole}.{}", frac.trim_end_matches('0'))
        }
    }

    /// `$X.YY` with the fractional cent rounded half-up.
    pub fn format_cents(self) -> String {
        let sign = if self.micro < 0 { "-" } else { "" };
        let abs = self.micro.unsigned_abs();
        let cents = (abs + 5_000) / 10_000;
        format!("{sign}${}.{:02}", cents / 100, cents % 100)
    }

    /// `$X.YY` truncated toward zero at cent precision.
    pub fn format_cents_floor(self) -> String {
        let sign = if self.micro < 0 { "-" } else { "" };
        let abs = self.micro.unsigned_abs();
        let cents = abs / 10_000;
        format!("{sign}${}.{:02}", cents / 100, cents % 100)
    }

    /// `$X.YYYYYY` with the full micro-dollar precision.
    pub fn format_micro(self) -> String {
        let sign = if self.micro < 0 { "-" } else { "" };
        let abs = self.micro.unsigned_abs();
        format!("{sign}${}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.to_decimal_string())
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money::from_micro(self.micro + rhs.micro)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.micro += rhs.micro;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_decimal_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MoneyVisitor;

        impl Visitor<'_> for MoneyVisitor {
            type Value = Money;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a dollar amount as a string or number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Money, E> {
                Money::parse_dollars(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Money, E> {
                Money::parse_dollars(&v.to_string()).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Money, E> {
                Money::parse_dollars(&v.to_string()).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Money, E> {
                // Shortest round-trip formatting recovers the decimal the
                // config author wrote, so YAML `0.25` parses exactly.
                Money::parse_dollars(&v.to_string()).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(MoneyVisitor)
    }
}

/// Per-run unit prices, carried in the task file so each run pins the
/// rates it was billed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingTable {
    pub input_per_million_tokens: Money,
    pub output_per_million_tokens: Money,
    pub per_search_call: Money,
}

/// Cost components of a single usage total, each rounded half-up to a
/// micro-dollar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub input_cost: Money,
    pub output_cost: Money,
    pub search_cost: Money,
    pub total: Money,
}

/// One entity's money accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRecord {
    pub entity_id: String,
    pub input_cost: Money,
    pub output_cost: Money,
    pub search_cost: Money,
    pub total: Money,
}

impl CostRecord {
    pub fn new(entity_id: impl Into<String>, usage: &Usage, pricing: &PricingTable) -> Self {
        let c = cost_of(usage, pricing);
        CostRecord {
            entity_id: entity_id.into(),
            input_cost: c.input_cost,
            output_cost: c.output_cost,
            search_cost: c.search_cost,
            total: c.total,
        }
    }
}

fn per_million(count: u64, price: Money) -> Money {
    let numerator = count as i128 * price.micro() as i128;
    Money::from_micro(((numerator + 500_000) / 1_000_000) as i64)
}

/// Convert provider-reported usage into money under `pricing`.
pub fn cost_of(usage: &Usage, pricing: &PricingTable) -> CostBreakdown {
    let input_cost = per_million(usage.input_tokens, pricing.input_per_million_tokens);
    let output_cost = per_million(usage.output_tokens, pricing.output_per_million_tokens);
    let search_cost = Money::from_micro(
        (usage.search_calls as i128 * pricing.per_search_call.micro() as i128) as i64,
    );
    CostBreakdown {
        input_cost,
        output_cost,
        search_cost,
        total: input_cost + output_cost + search_cost,
    }
}

/// Run-level cost summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n: usize,
    pub mean: Money,
    pub median: Money,
    pub p90: Money,
    pub total: Money,
    /// Fraction of total cost attributable to search calls, in `[0, 1]`.
    pub search_share: f64,
    pub human_baseline_per_record: Money,
}

impl CostReport {
    pub fn with_human_baseline(mut self, per_record: Money) -> Self {
        self.human_baseline_per_record = per_record;
        self
    }

    pub fn search_dominant(&self) -> bool {
        self.search_share > SEARCH_DOMINANT_THRESHOLD
    }

    /// Aligned text rendering for terminal output.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |label: &str, value: String| {
            out.push_str(&format!("{label:<18}{value}\n"));
        };
        line("records:", self.n.to_string());
        line("mean/record:", self.mean.format_cents());
        line("median/record:", self.median.format_cents());
        line("p90/record:", self.p90.format_cents());
        line("total:", self.total.format_cents());
        let share = format!("{:.1}%", self.search_share * 100.0);
        if self.search_dominant() {
            line("search share:", format!("{share} (dominant cost driver)"));
        } else {
            line("search share:", share);
        }
        line(
            "human baseline:",
            format!(
                "{}/record (floor; {} rounded)",
                self.human_baseline_per_record.format_cents_floor(),
                self.human_baseline_per_record.format_cents()
            ),
        );
        out
    }
}

/// Nearest-rank percentile (1-based rank `ceil(q * n)`) over sorted totals.
fn nearest_rank(sorted: &[Money], q_numer: usize, q_denom: usize) -> Money {
    if sorted.is_empty() {
        return Money::ZERO;
    }
    let rank = (sorted.len() * q_numer).div_ceil(q_denom);
    sorted[rank.max(1) - 1]
}

/// Aggregate per-entity records into a run-level report.
///
/// The mean rounds half-up to a micro-dollar; median and p90 use the
/// nearest-rank method; the total is an exact integer sum. The human
/// baseline starts at zero; attach one with
/// [`CostReport::with_human_baseline`].
pub fn aggregate(records: &[CostRecord]) -> CostReport {
    let human_baseline_per_record = Money::ZERO;
    let n = records.len();
    let grand_total: i128 = records.iter().map(|r| r.total.micro() as i128).sum();
    let search_total: i128 = records.iter().map(|r| r.search_cost.micro() as i128).sum();
    let mut sorted: Vec<Money> = records.iter().map(|r| r.total).collect();
    sorted.sort();
    let mean = if n == 0 {
        Money::ZERO
    } else {
        Money::from_micro(((grand_total + n as i128 / 2) / n as i128) as i64)
    };
    let search_share = if grand_total > 0 {
        search_total as f64 / grand_total as f64
    } else {
        0.0
    };
    CostReport {
        n,
        mean,
        median: nearest_rank(&sorted, 50, 100),
        p90: nearest_rank(&sorted, 90, 100),
        total: Money::from_micro(grand_total as i64),
        search_share,
        human_baseline_per_record,
    }
}

/// Group `(entity_id, usage)` pairs (e.g. telemetry lines) into one
/// [`CostRecord`] per entity, preserving first-seen entity order.
pub fn per_entity_costs<I>(entries: I, pricing: &PricingTable) -> Vec<CostRecord>
where
    I: IntoIterator<Item = (String, Usage)>,
{
    let mut order: Vec<String> = Vec::new();
    let mut sums: std::collections::HashMap<String, Usage> = std::collections::HashMap::new();
    for (id, usage) in entries {
        if !sums.contains_key(&id) {
            order.push(id.clone());
        }
        *sums.entry(id).or_default() += usage;
    }
    order
        .into_iter()
        .map(|id| {
            let usage = sums[&id];
            CostRecord::new(id, &usage, pricing)
        })
        .collect()
}

/// Per-record cost of manual curation: hourly wage divided by records per
/// hour, truncated to a micro-dollar.
pub fn human_baseline(wage_per_hour: Money, records_per_hour: u32) -> Result<Money, LedgerError> {
    if records_per_hour == 0 {
        return Err(LedgerError::DivisionByZeroRecords);
    }
    Ok(Money::from_micro(
        wage_per_hour.micro() / records_per_hour as i64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pricing(input: &str, output: &str, search: &str) -> PricingTable {
        PricingTable {
            input_per_million_tokens: Money::parse_dollars(input).unwrap(),
            output_per_million_tokens: Money::parse_dollars(output).unwrap(),
            per_search_call: Money::parse_dollars(search).unwrap(),
        }
    }

    fn usage(input: u64, output: u64, search: u64) -> Usage {
        Usage {
            input_tokens: input,
            output_tokens: output,
            search_calls: search,
        }
    }

    #[test]
    fn zero_usage_costs_nothing() {
        let c = cost_of(&usage(0, 0, 0), &pricing("1", "10", "0.01"));
        assert_eq!(c.total, Money::ZERO);
    }

    #[test]
    fn worked_cost_example() {
        // 10k input @ $1/M + 2k output @ $10/M + 3 searches @ $0.01
        let c = cost_of(&usage(10_000, 2_000, 3), &pricing("1", "10", "0.01"));
        assert_eq!(c.input_cost, Money::from_micro(10_000));
        assert_eq!(c.output_cost, Money::from_micro(20_000));
        assert_eq!(c.search_cost, Money::from_micro(30_000));
        assert_eq!(c.total, Money::from_micro(60_000));
        assert_eq!(c.total.format_cents(), "$0.06");
    }

    #[test]
    fn mean_of_uniform_records() {
        let p = pricing("1", "1", "0.03");
        let records: Vec<CostRecord> = (0..3)
            .map(|i| CostRecord::new(format!("e{i}"), &usage(0, 0, 3), &p))
            .collect();
        let report = aggregate(&records);
        assert_eq!(report.mean, Money::from_micro(90_000));
        assert_eq!(report.mean.format_cents(), "$0.09");
        assert_eq!(report.total, Money::from_micro(270_000));
    }

    #[test]
    fn singleton_percentiles() {
        let p = pricing("1", "1", "0.01");
        let records = vec![CostRecord::new("only", &usage(0, 0, 1), &p)];
        let report = aggregate(&records);
        assert_eq!(report.mean, Money::from_micro(10_000));
        assert_eq!(report.median, Money::from_micro(10_000));
        assert_eq!(report.p90, Money::from_micro(10_000));
    }

    #[test]
    fn nearest_rank_percentiles_on_cent_ladder() {
        // Totals $0.01..$0.10, one each. Nearest-rank: median is the 5th
        // smallest ($0.05), p90 the 9th ($0.09).
        let p = pricing("0", "0", "0.01");
        let records: Vec<CostRecord> = (1..=10)
            .map(|i| CostRecord::new(format!("e{i}"), &usage(0, 0, i), &p))
            .collect();
        let report = aggregate(&records);
        assert_eq!(report.median, Money::from_micro(50_000));
        assert_eq!(report.p90, Money::from_micro(90_000));
    }

    #[test]
    fn empty_aggregate_is_all_zero() {
        let report = aggregate(&[]);
        assert_eq!(report.n, 0);
        assert_eq!(report.total, Money::ZERO);
        assert_eq!(report.search_share, 0.0);
    }

    #[test]
    fn human_baseline_matches_floor_and_halfup_renderings() {
        let b = human_baseline(Money::parse_dollars("20").unwrap(), 30).unwrap();
        assert_eq!(b, Money::from_micro(666_666));
        assert_eq!(b.format_cents_floor(), "$0.66");
        assert_eq!(b.format_cents(), "$0.67");
    }

    #[test]
    fn human_baseline_exact_division() {
        let b = human_baseline(Money::parse_dollars("20").unwrap(), 20).unwrap();
        assert_eq!(b, Money::from_micro(1_000_000));
        assert_eq!(b.format_cents(), "$1.00");
    }

    #[test]
    fn human_baseline_zero_wage() {
        let b = human_baseline(Money::ZERO, 30).unwrap();
        assert_eq!(b, Money::ZERO);
    }

    #[test]
    fn human_baseline_rejects_zero_rate() {
        assert_eq!(
            human_baseline(Money::parse_dollars("20").unwrap(), 0),
            Err(LedgerError::DivisionByZeroRecords)
        );
    }

    #[test]
    fn search_share_dominance() {
        let p = pricing("0.25", "1.25", "0.0425");
        let records: Vec<CostRecord> = (0..4)
            .map(|i| CostRecord::new(format!("e{i}"), &usage(10_000, 2_000, 2), &p))
            .collect();
        let report = aggregate(&records);
        assert_eq!(report.mean, Money::from_micro(90_000));
        assert!(report.search_share > 0.9);
        assert!(report.search_dominant());
        assert!(report.render_text().contains("dominant cost driver"));
    }

    #[test]
    fn parse_and_render_round_trip() {
        for s in ["0", "0.25", "2", "0.666666", "1.5", "20", "0.000001"] {
            let m = Money::parse_dollars(s).unwrap();
            assert_eq!(m.to_decimal_string(), s);
            assert_eq!(Money::parse_dollars(&m.to_decimal_string()).unwrap(), m);
        }
        assert_eq!(Money::parse_dollars("$1.50").unwrap(), Money::from_micro(1_500_000));
    }

    #[test]
    fn parse_rejects_bad_amounts() {
        for s in ["", "-1", "1.2345678", "1e3", "one", "."] {
            assert!(Money::parse_dollars(s).is_err(), "{s:?} should be rejected");
        }
    }

    #[test]
    fn money_yaml_forms() {
        #[derive(Deserialize)]
        struct Wrap {
            amount: Money,
        }
        for (doc, micro) in [
            ("amount: 0.25", 250_000),
            ("amount: \"0.25\"", 250_000),
            ("amount: 2", 2_000_000),
            ("amount: 0.07", 70_000),
        ] {
            let w: Wrap = serde_yaml::from_str(doc).unwrap();
            assert_eq!(w.amount, Money::from_micro(micro), "{doc}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_usage() -> impl Strategy<Value = Usage> {
            (0u64..1_000_000, 0u64..1_000_000, 0u64..1_000).prop_map(|(i, o, s)| Usage {
                input_tokens: i,
                output_tokens: o,
                search_calls: s,
            })
        }

        fn arb_pricing() -> impl Strategy<Value = PricingTable> {
            (0i64..100_000_000, 0i64..100_000_000, 0i64..1_000_000).prop_map(|(i, o, s)| {
                PricingTable {
                    input_per_million_tokens: Money::from_micro(i),
                    output_per_million_tokens: Money::from_micro(o),
                    per_search_call: Money::from_micro(s),
                }
            })
        }

        proptest! {
            #[test]
            fn linearity_within_one_micro_per_component(
                a in arb_usage(), b in arb_usage(), p in arb_pricing()
            ) {
                let sum = a + b;
                let ca = cost_of(&a, &p);
                let cb = cost_of(&b, &p);
                let cs = cost_of(&sum, &p);
                for (joint, split) in [
                    (cs.input_cost, ca.input_cost + cb.input_cost),
                    (cs.output_cost, ca.output_cost + cb.output_cost),
                    (cs.search_cost, ca.search_cost + cb.search_cost),
                ] {
                    prop_assert!((joint.micro() - split.micro()).abs() <= 1);
                }
            }

            #[test]
            fn monotone_in_every_count(u in arb_usage(), p in arb_pricing(), bump in 1u64..1000) {
                let base = cost_of(&u, &p);
                let more_input = cost_of(&Usage { input_tokens: u.input_tokens + bump, ..u }, &p);
                let more_output = cost_of(&Usage { output_tokens: u.output_tokens + bump, ..u }, &p);
                let more_search = cost_of(&Usage { search_calls: u.search_calls + bump, ..u }, &p);
                prop_assert!(more_input.total >= base.total);
                prop_assert!(more_output.total >= base.total);
                prop_assert!(more_search.total >= base.total);
            }

            #[test]
            fn report_total_is_exact_sum(
                usages in proptest::collection::vec(arb_usage(), 0..50), p in arb_pricing()
            ) {
                let records: Vec<CostRecord> = usages
                    .iter()
                    .enumerate()
                    .map(|(i, u)| CostRecord::new(format!("e{i}"), u, &p))
                    .collect();
                let report = aggregate(&records);
                let expected: Money = records.iter().map(|r| r.total).sum();
                prop_assert_eq!(report.total, expected);
            }

            #[test]
            fn decimal_string_round_trips(micro in 0i64..10_000_000_000_000) {
                let m = Money::from_micro(micro);
                prop_assert_eq!(Money::parse_dollars(&m.to_decimal_string()).unwrap(), m);
            }
        }
    }
}
