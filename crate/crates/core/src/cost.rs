//! Token usage, price sheets and the cost ledger.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{Dollars, MoneyError};

/// Prices carry at most this many fractional digits per 1K tokens, which keeps
/// every per-token cost exact at nano-dollar resolution.
pub const PRICE_DIGITS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("model `{0}` has no entry in the price sheet")]
    UnknownModel(String),
    #[error("invalid price for `{model}`: {source}")]
    InvalidPrice {
        model: String,
        #[source]
        source: MoneyError,
    },
    #[error("negative price for `{0}`")]
    NegativePrice(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        input_tokens: 0,
        output_tokens: 0,
    };

    pub const fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::ZERO, |a, b| a + b)
    }
}

/// Dollars per 1K input and output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1k: Dollars,
    pub output_per_1k: Dollars,
}

impl ModelPrice {
    pub fn new(input_per_1k: &str, output_per_1k: &str) -> Result<Self, MoneyError> {
        Ok(ModelPrice {
            input_per_1k: Dollars::parse_with_precision(input_per_1k, PRICE_DIGITS)?,
            output_per_1k: Dollars::parse_with_precision(output_per_1k, PRICE_DIGITS)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceSheet {
    models: BTreeMap<String, ModelPrice>,
}

impl PriceSheet {
    pub fn new() -> Self {
        Self::default()
    }

    /// The Bedrock prices for the three models used in the reference setup.
    pub fn reference() -> Self {
        let mut sheet = PriceSheet::new();
        for (model, input, output) in [
            ("claude-3-5-haiku-latest", "0.0008", "0.004"),
            ("claude-3-7-sonnet-latest", "0.003", "0.015"),
            ("qwen3-32b", "0.0007", "0.0028"),
        ] {
            sheet
                .insert(model, ModelPrice::new(input, output).expect("static price"))
                .expect("static price");
        }
        sheet
    }

    pub fn insert(&mut self, model: impl Into<String>, price: ModelPrice) -> Result<(), CostError> {
        let model = model.into();
        validate_price(&model, price)?;
        self.models.insert(model, price);
        Ok(())
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.models.get(model)
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, &ModelPrice)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Checks every entry; deserialized sheets bypass `insert`.
    pub fn validate(&self) -> Result<(), CostError> {
        for (model, price) in &self.models {
            validate_price(model, *price)?;
        }
        Ok(())
    }

    /// Multiply every price by an integer factor.
    pub fn scaled(&self, factor: i64) -> PriceSheet {
        let models = self
            .models
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    ModelPrice {
                        input_per_1k: p.input_per_1k.checked_mul_int(factor).expect("overflow"),
                        output_per_1k: p.output_per_1k.checked_mul_int(factor).expect("overflow"),
                    },
                )
            })
            .collect();
        PriceSheet { models }
    }
}

fn validate_price(model: &str, price: ModelPrice) -> Result<(), CostError> {
    for p in [price.input_per_1k, price.output_per_1k] {
        if p < Dollars::ZERO {
            return Err(CostError::NegativePrice(model.to_string()));
        }
        // per-token cost must be a whole number of nano-dollars
        if p.nanos() % 1000 != 0 {
            return Err(CostError::InvalidPrice {
                model: model.to_string(),
                source: MoneyError::Precision(p.to_string(), PRICE_DIGITS),
            });
        }
    }
    Ok(())
}

/// One priced model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRecord {
    pub usage: TokenUsage,
    pub model: String,
    pub dollars: Dollars,
}

impl CostRecord {
    pub fn zero(model: impl Into<String>) -> Self {
        CostRecord {
            usage: TokenUsage::ZERO,
            model: model.into(),
            dollars: Dollars::ZERO,
        }
    }
}

/// `usage.input/1000 × input price + usage.output/1000 × output price`, exact.
pub fn price_cost(
    usage: TokenUsage,
    model: &str,
    sheet: &PriceSheet,
) -> Result<CostRecord, CostError> {
    let price = sheet
        .get(model)
        .ok_or_else(|| CostError::UnknownModel(model.to_string()))?;
    let per_token = |p: Dollars| p.nanos() / 1000;
    let input =
        i64::try_from(usage.input_tokens).expect("token count") * per_token(price.input_per_1k);
    let output =
        i64::try_from(usage.output_tokens).expect("token count") * per_token(price.output_per_1k);
    Ok(CostRecord {
        usage,
        model: model.to_string(),
        dollars: Dollars::from_nanos(input + output),
    })
}

/// Aggregate cost of one orchestration step or module invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCost {
    pub usage: TokenUsage,
    pub dollars: Dollars,
}

impl StepCost {
    pub fn of(records: &[CostRecord]) -> StepCost {
        records.iter().fold(StepCost::default(), |acc, r| StepCost {
            usage: acc.usage + r.usage,
            dollars: acc.dollars + r.dollars,
        })
    }
}

impl Add for StepCost {
    type Output = StepCost;
    fn add(self, rhs: StepCost) -> StepCost {
        StepCost {
            usage: self.usage + rhs.usage,
            dollars: self.dollars + rhs.dollars,
        }
    }
}

/// Append-only record of charges against a budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    budget: Dollars,
    entries: Vec<CostRecord>,
    total: Dollars,
}

impl CostLedger {
    pub fn new(budget: Dollars) -> Self {
        CostLedger {
            budget,
            entries: Vec::new(),
            total: Dollars::ZERO,
        }
    }

    /// Charging past zero is allowed; callers decide whether to stop.
    pub fn charge(&mut self, record: CostRecord) {
        self.total += record.dollars;
        self.entries.push(record);
    }

    pub fn budget(&self) -> Dollars {
        self.budget
    }

    pub fn total(&self) -> Dollars {
        self.total
    }

    pub fn remaining(&self) -> Dollars {
        self.budget - self.total
    }

    pub fn overshoot(&self) -> bool {
        self.total > self.budget
    }

    pub fn entries(&self) -> &[CostRecord] {
        &self.entries
    }
}

/// A ledger shared by concurrent ensemble branches. All charges go through one
/// mutex, so totals are linearizable.
#[derive(Debug)]
pub struct SharedLedger {
    inner: Mutex<CostLedger>,
}

impl SharedLedger {
    pub fn new(budget: Dollars) -> Self {
        SharedLedger {
            inner: Mutex::new(CostLedger::new(budget)),
        }
    }

    pub fn charge(&self, record: CostRecord) {
        self.inner.lock().expect("ledger poisoned").charge(record);
    }

    pub fn remaining(&self) -> Dollars {
        self.inner.lock().expect("ledger poisoned").remaining()
    }

    pub fn total(&self) -> Dollars {
        self.inner.lock().expect("ledger poisoned").total()
    }

    pub fn budget(&self) -> Dollars {
        self.inner.lock().expect("ledger poisoned").budget()
    }

    pub fn snapshot(&self) -> CostLedger {
        self.inner.lock().expect("ledger poisoned").clone()
    }

    pub fn into_inner(self) -> CostLedger {
        self.inner.into_inner().expect("ledger poisoned")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SONNET: &str = "claude-3-7-sonnet-latest";
    const HAIKU: &str = "claude-3-5-haiku-latest";

    #[test]
    fn reference_prices_cost_exactly() {
        let sheet = PriceSheet::reference();
        let r = price_cost(TokenUsage::new(1000, 1000), SONNET, &sheet).unwrap();
        assert_eq!(r.dollars, "0.018".parse().unwrap());
        let r = price_cost(TokenUsage::new(2000, 500), HAIKU, &sheet).unwrap();
        assert_eq!(r.dollars, "0.0036".parse().unwrap());
        let r = price_cost(TokenUsage::ZERO, "qwen3-32b", &sheet).unwrap();
        assert_eq!(r.dollars, Dollars::ZERO);
        assert_eq!(r.dollars.format_fixed(4), "0.0000");
    }

    #[test]
    fn single_token_costs_are_exact() {
        let sheet = PriceSheet::reference();
        let r = price_cost(TokenUsage::new(1, 1), HAIKU, &sheet).unwrap();
        assert_eq!(r.dollars, "0.0000048".parse().unwrap());
    }

    #[test]
    fn unknown_model_is_rejected() {
        let err = price_cost(TokenUsage::new(1, 1), "gpt-x", &PriceSheet::reference()).unwrap_err();
        assert_eq!(err, CostError::UnknownModel("gpt-x".into()));
    }

    #[test]
    fn over_precise_price_is_rejected() {
        let mut sheet = PriceSheet::new();
        let price = ModelPrice {
            input_per_1k: "0.0000001".parse().unwrap(),
            output_per_1k: Dollars::ZERO,
        };
        assert!(matches!(
            sheet.insert("m", price),
            Err(CostError::InvalidPrice { .. })
        ));
        let neg = ModelPrice {
            input_per_1k: "-0.001".parse().unwrap(),
            output_per_1k: Dollars::ZERO,
        };
        assert!(matches!(
            sheet.insert("m", neg),
            Err(CostError::NegativePrice(_))
        ));
    }

    #[test]
    fn ledger_charges() {
        let mut ledger = CostLedger::new(Dollars::from_cents(20));
        ledger.charge(CostRecord {
            usage: TokenUsage::new(1, 1),
            model: HAIKU.into(),
            dollars: Dollars::from_cents(5),
        });
        assert_eq!(ledger.remaining(), Dollars::from_cents(15));
        ledger.charge(CostRecord::zero(HAIKU));
        assert_eq!(ledger.remaining(), Dollars::from_cents(15));
        assert_eq!(ledger.entries().len(), 2);
        assert!(!ledger.overshoot());
    }

    #[test]
    fn ledger_records_overshoot() {
        let mut ledger = CostLedger::new(Dollars::from_cents(20));
        ledger.charge(CostRecord {
            usage: TokenUsage::ZERO,
            model: HAIKU.into(),
            dollars: Dollars::from_cents(19),
        });
        ledger.charge(CostRecord {
            usage: TokenUsage::ZERO,
            model: HAIKU.into(),
            dollars: Dollars::from_cents(5),
        });
        assert_eq!(ledger.remaining(), -Dollars::from_cents(4));
        assert!(ledger.overshoot());
    }

    #[test]
    fn shared_ledger_is_linearizable_under_threads() {
        let ledger = SharedLedger::new(Dollars::from_cents(100));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..100 {
                        ledger.charge(CostRecord {
                            usage: TokenUsage::new(1, 0),
                            model: HAIKU.into(),
                            dollars: Dollars::from_nanos(1_000),
                        });
                    }
                });
            }
        });
        let snap = ledger.snapshot();
        assert_eq!(snap.entries().len(), 800);
        assert_eq!(snap.total(), Dollars::from_nanos(800_000));
    }

    proptest! {
        #[test]
        fn ledger_total_is_exact_decimal_sum(amounts in prop::collection::vec(0i64..100_000, 0..60)) {
            // amounts are 4-decimal-digit dollar values in units of $0.0001
            let mut ledger = CostLedger::new(Dollars::from_cents(100));
            for a in &amounts {
                let text = format!("{}.{:04}", a / 10_000, a % 10_000);
                ledger.charge(CostRecord { usage: TokenUsage::ZERO, model: HAIKU.into(), dollars: text.parse().unwrap() });
            }
            let expect: i64 = amounts.iter().sum();
            prop_assert_eq!(ledger.total(), Dollars::from_nanos(expect * 100_000));
            prop_assert_eq!(ledger.remaining(), Dollars::from_cents(100) - ledger.total());
        }

        #[test]
        fn pricing_scales_linearly(
            usages in prop::collection::vec((0u64..50_000, 0u64..10_000), 1..20),
            factor in 1i64..1000,
        ) {
            let sheet = PriceSheet::reference();
            let scaled = sheet.scaled(factor);
            let budget = Dollars::from_cents(30);
            let mut a = CostLedger::new(budget);
            let mut b = CostLedger::new(budget.checked_mul_int(factor).unwrap());
            for (i, (inp, out)) in usages.iter().enumerate() {
                let model = if i % 2 == 0 { SONNET } else { HAIKU };
                let ra = price_cost(TokenUsage::new(*inp, *out), model, &sheet).unwrap();
                let rb = price_cost(TokenUsage::new(*inp, *out), model, &scaled).unwrap();
                prop_assert_eq!(rb.dollars, ra.dollars.checked_mul_int(factor).unwrap());
                a.charge(ra);
                b.charge(rb);
            }
            prop_assert_eq!(b.total(), a.total().checked_mul_int(factor).unwrap());
            prop_assert_eq!(b.remaining(), a.remaining().checked_mul_int(factor).unwrap());
        }
    }
}
