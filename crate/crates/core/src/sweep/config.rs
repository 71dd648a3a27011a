use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chunker::ChunkSize;
use crate::error::{Error, Result};
use crate::metrics::MatchTechnique;
use crate::prompting::PromptKind;
use crate::refine::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputType {
    Ocr,
    Markdown,
}

impl InputType {
    pub const ALL: [InputType; 2] = [InputType::Ocr, InputType::Markdown];

    pub fn label(self) -> &'static str {
        match self {
            InputType::Ocr => "ocr",
            InputType::Markdown => "markdown",
        }
    }
}

impl fmt::Display for InputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InputType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ocr" => Ok(InputType::Ocr),
            "markdown" | "md" => Ok(InputType::Markdown),
            other => Err(Error::usage(format!("unknown input type `{other}`"))),
        }
    }
}

/// The swept dimensions, in enumeration order. The model is not a swept
/// dimension; every model gets its own copy of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    InputType,
    ChunkSize,
    PromptType,
    ExampleCount,
    RefinementStage,
    Technique,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::InputType,
        Dimension::ChunkSize,
        Dimension::PromptType,
        Dimension::ExampleCount,
        Dimension::RefinementStage,
        Dimension::Technique,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::InputType => "input",
            Dimension::ChunkSize => "chunk",
            Dimension::PromptType => "prompt",
            Dimension::ExampleCount => "examples",
            Dimension::RefinementStage => "stage",
            Dimension::Technique => "technique",
        }
    }

    /// Whether changing this dimension changes the model calls.
    pub fn is_call_bearing(self) -> bool {
        !matches!(self, Dimension::RefinementStage | Dimension::Technique)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "input" | "input_type" => Ok(Dimension::InputType),
            "chunk" | "chunk_size" => Ok(Dimension::ChunkSize),
            "prompt" | "prompt_type" => Ok(Dimension::PromptType),
            "examples" | "example_count" | "shots" => Ok(Dimension::ExampleCount),
            "stage" | "refinement_stage" => Ok(Dimension::RefinementStage),
            "technique" | "match" => Ok(Dimension::Technique),
            other => Err(Error::usage(format!("unknown dimension `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimValue {
    Input(InputType),
    Chunk(ChunkSize),
    Prompt(PromptKind),
    Examples(usize),
    Stage(Stage),
    Technique(MatchTechnique),
}

impl DimValue {
    pub fn label(&self) -> String {
        match self {
            DimValue::Input(v) => v.label().into(),
            DimValue::Chunk(v) => v.label().into(),
            DimValue::Prompt(v) => v.label().into(),
            DimValue::Examples(v) => v.to_string(),
            DimValue::Stage(v) => v.label().into(),
            DimValue::Technique(v) => v.label(),
        }
    }

    pub fn parse(dim: Dimension, s: &str) -> Result<DimValue> {
        Ok(match dim {
            Dimension::InputType => DimValue::Input(s.parse()?),
            Dimension::ChunkSize => DimValue::Chunk(s.parse()?),
            Dimension::PromptType => DimValue::Prompt(s.parse()?),
            Dimension::ExampleCount => DimValue::Examples(
                s.parse().map_err(|_| Error::usage(format!("example count `{s}` is not a number")))?,
            ),
            Dimension::RefinementStage => DimValue::Stage(s.parse()?),
            Dimension::Technique => DimValue::Technique(s.parse()?),
        })
    }
}

impl fmt::Display for DimValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The projection of a configuration that determines model calls.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallSignature {
    pub input_type: InputType,
    pub chunk_size: ChunkSize,
    pub prompt_type: PromptKind,
    pub example_count: usize,
    pub model: String,
}

impl fmt::Display for CallSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.model, self.input_type, self.chunk_size, self.prompt_type, self.example_count
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input_type: InputType,
    pub chunk_size: ChunkSize,
    pub prompt_type: PromptKind,
    pub example_count: usize,
    pub refinement_stage: Stage,
    pub technique: MatchTechnique,
    pub model: String,
}

impl RunConfig {
    /// OCR input, medium chunks, few-shot with no examples, initial
    /// predictions, exact match.
    pub fn baseline(model: impl Into<String>) -> RunConfig {
        RunConfig {
            input_type: InputType::Ocr,
            chunk_size: ChunkSize::Medium,
            prompt_type: PromptKind::FewShot,
            example_count: 0,
            refinement_stage: Stage::Initial,
            technique: MatchTechnique::Exact,
            model: model.into(),
        }
    }

    pub fn signature(&self) -> CallSignature {
        CallSignature {
            input_type: self.input_type,
            chunk_size: self.chunk_size,
            prompt_type: self.prompt_type,
            example_count: self.example_count,
            model: self.model.clone(),
        }
    }

    pub fn get(&self, dim: Dimension) -> DimValue {
        match dim {
            Dimension::InputType => DimValue::Input(self.input_type),
            Dimension::ChunkSize => DimValue::Chunk(self.chunk_size),
            Dimension::PromptType => DimValue::Prompt(self.prompt_type),
            Dimension::ExampleCount => DimValue::Examples(self.example_count),
            Dimension::RefinementStage => DimValue::Stage(self.refinement_stage),
            Dimension::Technique => DimValue::Technique(self.technique),
        }
    }

    pub fn set(&mut self, value: DimValue) {
        match value {
            DimValue::Input(v) => self.input_type = v,
            DimValue::Chunk(v) => self.chunk_size = v,
            DimValue::Prompt(v) => self.prompt_type = v,
            DimValue::Examples(v) => self.example_count = v,
            DimValue::Stage(v) => self.refinement_stage = v,
            DimValue::Technique(v) => self.technique = v,
        }
    }

    pub fn with(&self, value: DimValue) -> RunConfig {
        let mut c = self.clone();
        c.set(value);
        c
    }

    /// Dimensions on which `self` differs from `other`.
    pub fn deviations(&self, other: &RunConfig) -> usize {
        Dimension::ALL.iter().filter(|d| self.get(**d) != other.get(**d)).count()
    }

    /// Apply `dim=value` pairs separated by commas, e.g. `input=markdown,chunk=max`.
    pub fn apply_overrides(&mut self, overrides: &str) -> Result<()> {
        for pair in overrides.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("override `{pair}` is not dim=value")))?;
            if k.trim() == "model" {
                self.model = v.trim().to_string();
                continue;
            }
            let dim: Dimension = k.trim().parse()?;
            self.set(DimValue::parse(dim, v.trim())?);
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = Dimension::ALL.iter().map(|d| self.get(*d).label()).collect();
        format!("{}:{}", self.model, parts.join("/"))
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Value lists per dimension plus the models to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub input_types: Vec<InputType>,
    pub chunk_sizes: Vec<ChunkSize>,
    pub prompt_types: Vec<PromptKind>,
    pub example_counts: Vec<usize>,
    pub stages: Vec<Stage>,
    pub techniques: Vec<MatchTechnique>,
    pub models: Vec<String>,
}

impl SpaceSpec {
    /// Every value of every dimension: 2·3·2·4·3·3 = 432 configurations per model.
    pub fn full(models: Vec<String>) -> SpaceSpec {
        SpaceSpec {
            input_types: InputType::ALL.to_vec(),
            chunk_sizes: ChunkSize::ALL.to_vec(),
            prompt_types: PromptKind::ALL.to_vec(),
            example_counts: crate::corpus::EXAMPLE_COUNTS.to_vec(),
            stages: Stage::ALL.to_vec(),
            techniques: MatchTechnique::ALL.to_vec(),
            models,
        }
    }

    /// A one-point space at `cfg`.
    pub fn single(cfg: &RunConfig) -> SpaceSpec {
        SpaceSpec {
            input_types: vec![cfg.input_type],
            chunk_sizes: vec![cfg.chunk_size],
            prompt_types: vec![cfg.prompt_type],
            example_counts: vec![cfg.example_count],
            stages: vec![cfg.refinement_stage],
            techniques: vec![cfg.technique],
            models: vec![cfg.model.clone()],
        }
    }

    pub fn values(&self, dim: Dimension) -> Vec<DimValue> {
        match dim {
            Dimension::InputType => self.input_types.iter().copied().map(DimValue::Input).collect(),
            Dimension::ChunkSize => self.chunk_sizes.iter().copied().map(DimValue::Chunk).collect(),
            Dimension::PromptType => self.prompt_types.iter().copied().map(DimValue::Prompt).collect(),
            Dimension::ExampleCount => self.example_counts.iter().copied().map(DimValue::Examples).collect(),
            Dimension::RefinementStage => self.stages.iter().copied().map(DimValue::Stage).collect(),
            Dimension::Technique => self.techniques.iter().copied().map(DimValue::Technique).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for dim in Dimension::ALL {
            if self.values(dim).is_empty() {
                return Err(Error::usage(format!("dimension `{dim}` has no values")));
            }
        }
        if self.models.is_empty() {
            return Err(Error::usage("no models given"));
        }
        for &n in &self.example_counts {
            if !crate::corpus::EXAMPLE_COUNTS.contains(&n) {
                return Err(Error::usage(format!("example count {n} not in {:?}", crate::corpus::EXAMPLE_COUNTS)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, cfg: &RunConfig) -> bool {
        self.models.contains(&cfg.model) && Dimension::ALL.iter().all(|d| self.values(*d).contains(&cfg.get(*d)))
    }

    /// Configurations per model.
    pub fn size_per_model(&self) -> usize {
        Dimension::ALL.iter().map(|d| self.values(*d).len()).product()
    }

    /// Distinct scored configurations per model in a one-factor-at-a-time
    /// sweep around a baseline: Σ|dim| − (dims − 1).
    pub fn ofat_budget(&self) -> usize {
        let dims = Dimension::ALL.len();
        Dimension::ALL.iter().map(|d| self.values(*d).len()).sum::<usize>() - (dims - 1)
    }
}

/// Cartesian product, models outermost, then dimensions in [`Dimension::ALL`]
/// order with the last dimension varying fastest.
pub fn enumerate_space(spec: &SpaceSpec) -> Result<Vec<RunConfig>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.models.len() * spec.size_per_model());
    for model in &spec.models {
        let mut partial = vec![RunConfig::baseline(model.clone())];
        for dim in Dimension::ALL {
            let values = spec.values(dim);
            partial = partial.iter().flat_map(|c| values.iter().map(move |v| c.with(*v))).collect();
        }
        out.extend(partial);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn full_space_sizes() {
        let space = SpaceSpec::full(vec!["m".into()]);
        let configs = enumerate_space(&space).unwrap();
        assert_eq!(configs.len(), 432);
        let sigs: HashSet<CallSignature> = configs.iter().map(RunConfig::signature).collect();
        assert_eq!(sigs.len(), 48);
        assert_eq!(space.ofat_budget(), 12);
    }

    #[test]
    fn enumeration_order_is_last_fastest() {
        let configs = enumerate_space(&SpaceSpec::full(vec!["m".into()])).unwrap();
        let first = RunConfig::baseline("m").with(DimValue::Chunk(ChunkSize::Small));
        assert_eq!(configs[0], first);
        assert_eq!(configs[1].technique, MatchTechnique::Substring);
        assert_eq!(configs[431].input_type, InputType::Markdown);
    }

    #[test]
    fn singleton_space() {
        let cfg = RunConfig::baseline("m");
        assert_eq!(enumerate_space(&SpaceSpec::single(&cfg)).unwrap(), vec![cfg]);
    }

    #[test]
    fn empty_dimension_is_usage_error() {
        let mut space = SpaceSpec::full(vec!["m".into()]);
        space.stages.clear();
        assert!(enumerate_space(&space).unwrap_err().is_usage());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::baseline("m");
        cfg.apply_overrides("input=markdown, chunk=max,examples=3,technique=fuzzy,stage=cleaned,prompt=cot").unwrap();
        assert_eq!(cfg.label(), "m:markdown/max/cot/3/cleaned/fuzzy");
        assert_eq!(cfg.deviations(&RunConfig::baseline("m")), 6);
        assert!(cfg.apply_overrides("color=red").unwrap_err().is_usage());
    }

    #[test]
    fn free_dimensions_share_signature() {
        let a = RunConfig::baseline("m");
        let b = a.with(DimValue::Stage(Stage::Cleaned)).with(DimValue::Technique(MatchTechnique::Substring));
        assert_eq!(a.signature(), b.signature());
    }
}
