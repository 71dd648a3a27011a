use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{enumerate_space, CallSignature, DimValue, Dimension, RunConfig, SpaceSpec};
use super::runner::{RunResult, Runner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfatPolicy {
    /// Each model gets its own per-dimension winners.
    #[default]
    PerModel,
    /// One configuration for all models, chosen on F1 averaged across models.
    GlobalAverage,
}

impl fmt::Display for OfatPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OfatPolicy::PerModel => "per_model",
            OfatPolicy::GlobalAverage => "global_average",
        })
    }
}

impl FromStr for OfatPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "per_model" => Ok(OfatPolicy::PerModel),
            "global_average" | "global" => Ok(OfatPolicy::GlobalAverage),
            other => Err(Error::usage(format!("unknown OFAT policy `{other}`"))),
        }
    }
}

/// F1 per swept value of one dimension, for one model or the average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSweep {
    pub dimension: Dimension,
    /// `None` for the cross-model average.
    pub model: Option<String>,
    pub values: Vec<DimValue>,
    pub f1: Vec<f64>,
    pub chosen: DimValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfatOutcome {
    pub policy: OfatPolicy,
    pub sweeps: Vec<DimensionSweep>,
    /// One composed configuration per model.
    pub chosen: Vec<RunResult>,
    /// Every distinct configuration scored while sweeping, all models.
    pub explored: Vec<RunResult>,
    pub explored_per_model: usize,
    /// Distinct call signatures among the explored configurations, per model.
    pub call_bearing_per_model: usize,
    pub space_size_per_model: usize,
}

impl OfatOutcome {
    pub fn fraction_of_space(&self) -> f64 {
        self.explored_per_model as f64 / self.space_size_per_model as f64
    }
}

/// Argmax over `values` by `f1`; ties keep the baseline value, then the earlier value.
fn pick(values: &[DimValue], f1: &[f64], baseline: DimValue) -> DimValue {
    let mut best = values.iter().position(|v| *v == baseline).expect("baseline value is in the space");
    for (i, &score) in f1.iter().enumerate() {
        if score > f1[best] {
            best = i;
        }
    }
    values[best]
}

fn at_model(cfg: &RunConfig, model: &str) -> RunConfig {
    RunConfig {
        model: model.to_string(),
        ..cfg.clone()
    }
}

/// Sweep each dimension with the others at the baseline, then compose the
/// per-dimension winners. `baseline.model` is ignored; every model in the
/// space is swept.
pub fn ofat_search(runner: &Runner, space: &SpaceSpec, baseline: &RunConfig, policy: OfatPolicy) -> Result<OfatOutcome> {
    space.validate()?;
    let probe = at_model(baseline, &space.models[0]);
    if !space.contains(&probe) {
        return Err(Error::usage(format!("baseline {probe} is not in the search space")));
    }
    let mut memo: HashMap<String, RunResult> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut run = |cfg: &RunConfig| -> Result<f64> {
        let key = cfg.label();
        if let Some(r) = memo.get(&key) {
            return Ok(r.prf.f1);
        }
        let r = runner.execute_config(cfg)?;
        let f1 = r.prf.f1;
        order.push(key.clone());
        memo.insert(key, r);
        Ok(f1)
    };

    let mut sweeps = Vec::new();
    let mut chosen_cfgs: Vec<RunConfig> = space.models.iter().map(|m| at_model(baseline, m)).collect();
    for dim in Dimension::ALL {
        let values = space.values(dim);
        let base_value = baseline.get(dim);
        let mut per_model: Vec<Vec<f64>> = Vec::new();
        for model in &space.models {
            let base = at_model(baseline, model);
            let f1 = values.iter().map(|v| run(&base.with(*v))).collect::<Result<Vec<_>>>()?;
            per_model.push(f1);
        }
        match policy {
            OfatPolicy::PerModel => {
                for ((model, f1), cfg) in space.models.iter().zip(&per_model).zip(&mut chosen_cfgs) {
                    let chosen = pick(&values, f1, base_value);
                    cfg.set(chosen);
                    sweeps.push(DimensionSweep {
                        dimension: dim,
                        model: Some(model.clone()),
                        values: values.clone(),
                        f1: f1.clone(),
                        chosen,
                    });
                }
            }
            OfatPolicy::GlobalAverage => {
                let n = per_model.len() as f64;
                let mean: Vec<f64> = (0..values.len()).map(|i| per_model.iter().map(|f| f[i]).sum::<f64>() / n).collect();
                let chosen = pick(&values, &mean, base_value);
                chosen_cfgs.iter_mut().for_each(|c| c.set(chosen));
                sweeps.push(DimensionSweep {
                    dimension: dim,
                    model: None,
                    values: values.clone(),
                    f1: mean,
                    chosen,
                });
            }
        }
    }

    let explored_per_model = order.len() / space.models.len();
    let explored: Vec<RunResult> = order.iter().map(|k| memo[k].clone()).collect();
    let first_model = &space.models[0];
    let call_bearing_per_model = explored
        .iter()
        .filter(|r| &r.config.model == first_model)
        .map(|r| r.config.signature())
        .collect::<HashSet<CallSignature>>()
        .len();
    let chosen = chosen_cfgs
        .iter()
        .map(|cfg| match memo.get(&cfg.label()) {
            Some(r) => Ok(r.clone()),
            None => runner.execute_config(cfg),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OfatOutcome {
        policy,
        sweeps,
        chosen,
        explored,
        explored_per_model,
        call_bearing_per_model,
        space_size_per_model: space.size_per_model(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorialOutcome {
    /// In enumeration order.
    pub results: Vec<RunResult>,
    pub best: Vec<RunResult>,
    pub worst: Vec<RunResult>,
    pub signatures: usize,
    /// Completion sets computed by this search (stored sets are not counted).
    pub computations: usize,
}

/// Highest F1, then fewest deviations from the baseline, then enumeration order.
fn best_index(results: &[&RunResult], baseline: &RunConfig) -> usize {
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        let b = results[best];
        let better = r.prf.f1 > b.prf.f1
            || (r.prf.f1 == b.prf.f1 && r.config.deviations(baseline) < b.config.deviations(baseline));
        if better {
            best = i;
        }
    }
    best
}

fn worst_index(results: &[&RunResult]) -> usize {
    let mut worst = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        if r.prf.f1 < results[worst].prf.f1 {
            worst = i;
        }
    }
    worst
}

/// Score every configuration; each distinct call signature is computed once.
/// Best and worst are reported per model, best ties broken toward `baseline`.
pub fn factorial_search(runner: &Runner, space: &SpaceSpec, baseline: &RunConfig) -> Result<FactorialOutcome> {
    let configs = enumerate_space(space)?;
    let mut signatures: Vec<CallSignature> = Vec::new();
    let mut seen = HashSet::new();
    for c in &configs {
        let s = c.signature();
        if seen.insert(s.clone()) {
            signatures.push(s);
        }
    }
    let before = runner.store().computations();
    let sets = runner.pool().install(|| {
        signatures
            .par_iter()
            .map(|s| runner.completion_set(s).map(|set| (s.clone(), set)))
            .collect::<Result<HashMap<_, _>>>()
    })?;
    let computations = runner.store().computations() - before;

    // a computed set's calls are charged to the first configuration using it
    let mut charged: HashSet<CallSignature> = HashSet::new();
    let flags: Vec<bool> = configs
        .iter()
        .map(|c| {
            let s = c.signature();
            sets[&s].1 && charged.insert(s)
        })
        .collect();
    let results: Vec<RunResult> = runner.pool().install(|| {
        configs
            .par_iter()
            .zip(flags.par_iter())
            .map(|(c, &charge)| {
                let (set, _) = &sets[&c.signature()];
                runner.score(c, set, charge)
            })
            .collect()
    });

    let mut best = Vec::new();
    let mut worst = Vec::new();
    for model in &space.models {
        let of_model: Vec<&RunResult> = results.iter().filter(|r| &r.config.model == model).collect();
        if of_model.is_empty() {
            continue;
        }
        best.push(of_model[best_index(&of_model, &at_model(baseline, model))].clone());
        worst.push(of_model[worst_index(&of_model)].clone());
    }
    Ok(FactorialOutcome {
        results,
        best,
        worst,
        signatures: signatures.len(),
        computations,
    })
}
