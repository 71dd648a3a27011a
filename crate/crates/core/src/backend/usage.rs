use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Completion;
use crate::error::{Error, Result};

/// USD per token.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub input_per_token: f64,
    pub output_per_token: f64,
}

impl Pricing {
    pub fn flat(per_token: f64) -> Self {
        Pricing {
            input_per_token: per_token,
            output_per_token: per_token,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.input_per_token >= 0.0 && self.output_per_token >= 0.0) {
            return Err(Error::usage(format!("pricing must be non-negative, got {self:?}")));
        }
        Ok(())
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 * self.input_per_token + output_tokens as f64 * self.output_per_token
    }
}

/// Model name to pricing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable(pub BTreeMap<String, Pricing>);

impl PricingTable {
    /// Blended per-token rates for the reference models: total cost over
    /// total tokens of one experiment. Locally served models cost nothing.
    pub fn reference() -> Self {
        let mut t = BTreeMap::new();
        t.insert("gpt-3.5-turbo".to_string(), Pricing::flat(0.18 / 322_000.0));
        t.insert("gpt-4o".to_string(), Pricing::flat(0.40 / 278_000.0));
        t.insert("llama3-70b".to_string(), Pricing::flat(0.0));
        t.insert("oracle".to_string(), Pricing::flat(0.0));
        PricingTable(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: PricingTable = serde_json::from_str(&text)?;
        for p in table.0.values() {
            p.validate()?;
        }
        Ok(table)
    }

    pub fn get(&self, model: &str) -> Option<&Pricing> {
        self.0.get(model)
    }

    pub fn insert(&mut self, model: impl Into<String>, pricing: Pricing) {
        self.0.insert(model.into(), pricing);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub model: String,
    pub completions: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    /// `None` when the model has no pricing entry.
    pub cost_usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_tokens: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Sum over priced models only.
    pub total_cost_usd: f64,
    pub per_model: Vec<ModelCost>,
    pub unpriced: Vec<String>,
}

impl CostSummary {
    pub fn merge(&mut self, other: &CostSummary) {
        self.total_tokens += other.total_tokens;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.total_cost_usd += other.total_cost_usd;
        for m in &other.per_model {
            match self.per_model.iter_mut().find(|x| x.model == m.model) {
                Some(x) => {
                    x.completions += m.completions;
                    x.input_tokens += m.input_tokens;
                    x.output_tokens += m.output_tokens;
                    x.total_tokens += m.total_tokens;
                    x.cost_usd = match (x.cost_usd, m.cost_usd) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                }
                None => self.per_model.push(m.clone()),
            }
        }
        self.per_model.sort_by(|a, b| a.model.cmp(&b.model));
        for u in &other.unpriced {
            if !self.unpriced.contains(u) {
                self.unpriced.push(u.clone());
            }
        }
        self.unpriced.sort();
    }
}

fn human_tokens(n: u64) -> String {
    match n {
        0..=999 => n.to_string(),
        1_000..=999_999 => format!("{}K", (n as f64 / 1e3).round()),
        _ => format!("{:.1}M", n as f64 / 1e6),
    }
}

impl fmt::Display for CostSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tokens: {} (input {}, output {})", human_tokens(self.total_tokens), self.input_tokens, self.output_tokens)?;
        writeln!(f, "cost: ${:.2}", self.total_cost_usd)?;
        for m in &self.per_model {
            let cost = m.cost_usd.map_or_else(|| "unpriced".to_string(), |c| format!("${c:.2}"));
            writeln!(f, "  {}: {} tokens, {}", m.model, human_tokens(m.total_tokens), cost)?;
        }
        Ok(())
    }
}

pub fn usage_report<'a>(completions: impl IntoIterator<Item = &'a Completion>, pricing: &PricingTable) -> CostSummary {
    let mut per: BTreeMap<&str, (usize, u64, u64)> = BTreeMap::new();
    for c in completions {
        let e = per.entry(c.model_name.as_str()).or_default();
        e.0 += 1;
        e.1 += c.usage.input_tokens;
        e.2 += c.usage.output_tokens;
    }
    let mut summary = CostSummary::default();
    for (model, (n, input, output)) in per {
        let cost = pricing.get(model).map(|p| p.cost(input, output));
        if cost.is_none() {
            log::warn!("no pricing for model `{model}`; its cost is reported as unpriced");
            summary.unpriced.push(model.to_string());
        }
        summary.input_tokens += input;
        summary.output_tokens += output;
        summary.total_tokens += input + output;
        summary.total_cost_usd += cost.unwrap_or(0.0);
        summary.per_model.push(ModelCost {
            model: model.to_string(),
            completions: n,
            input_tokens: input,
            output_tokens: output,
            total_tokens: input + output,
            cost_usd: cost,
        });
    }
    summary
}
