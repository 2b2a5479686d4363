//! The eight prompt templates, their rendering, and few-shot sampling.
//!
//! Rendering is byte-stable: the same (template, instance, shots) input
//! always produces identical text. Templates T1-T6 and T8 are single-stage;
//! T7 is a two-stage plan whose second stage carries a placeholder that is
//! filled with the first stage's output at run time.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::corpus::QEInstance;
use crate::error::PromptError;

/// Placeholder inside the T7 stage-2 text that receives stage-1 output.
pub const STAGE1_OUTPUT_PLACEHOLDER: &str = "{output_from_Prompt1}";

/// Template identifiers.
///
/// T1 source+MT; T2 MT+reference; T3 source+MT+reference; T4 source+MT+error
/// words; T5 source+MT+reference+error words; T6 is T3 with evaluation
/// guidelines prepended; T7 is the two-stage analyze-then-score plan; T8 is
/// T3 with five scored examples prefixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::T1,
        TemplateId::T2,
        TemplateId::T3,
        TemplateId::T4,
        TemplateId::T5,
        TemplateId::T6,
        TemplateId::T7,
        TemplateId::T8,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TemplateId::T1 => "T1",
            TemplateId::T2 => "T2",
            TemplateId::T3 => "T3",
            TemplateId::T4 => "T4",
            TemplateId::T5 => "T5",
            TemplateId::T6 => "T6",
            TemplateId::T7 => "T7",
            TemplateId::T8 => "T8",
        }
    }

    /// T8 carries a long few-shot prefix and gets the larger input budget.
    pub fn is_few_shot(&self) -> bool {
        matches!(self, TemplateId::T8)
    }

    pub fn stage_count(&self) -> usize {
        if *self == TemplateId::T7 {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase();
        TemplateId::ALL
            .iter()
            .copied()
            .find(|t| t.name() == norm)
            .ok_or_else(|| format!("unknown template {s:?} (expected T1..T8)"))
    }
}

impl Serialize for TemplateId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TemplateId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message. All templates render as user-role messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// One stage of a plan: the messages sent in a single backend call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub messages: Vec<Message>,
}

/// Rendered message sequence(s) for one instance under one template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPlan {
    pub template: TemplateId,
    pub stages: Vec<Stage>,
}

impl PromptPlan {
    /// Concatenated text of a stage, used for echo detection and length
    /// accounting.
    pub fn stage_text(&self, stage: usize) -> String {
        self.stages[stage]
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Replace the stage-1 output placeholder in a later stage.
    pub fn fill_stage(&self, stage: usize, stage1_output: &str) -> Vec<Message> {
        self.stages[stage]
            .messages
            .iter()
            .map(|m| Message {
                role: m.role,
                content: m.content.replace(STAGE1_OUTPUT_PLACEHOLDER, stage1_output),
            })
            .collect()
    }
}

/// Information blocks a template may include under the instruction line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Source,
    Reference,
    Translation,
    ErrorWords,
}

fn render_error_words(words: &[String]) -> String {
    if words.is_empty() {
        "(none)".to_string()
    } else {
        words.join(", ")
    }
}

/// Render the base instruction over an instance: the single-paragraph
/// scoring request, the chosen information blocks, and the final `Score:`
/// line.
pub fn render_base(
    instance: &QEInstance,
    info_clause: &str,
    blocks: &[Block],
) -> Result<Message, PromptError> {
    if !blocks.contains(&Block::Translation) {
        return Err(PromptError::MissingBlock {
            template: "base".to_string(),
            block: "translation".to_string(),
        });
    }
    let src_lang = instance.pair.source_lang();
    let tgt_lang = instance.pair.target_lang();
    let mut text = format!(
        "Score the following translation from {src_lang} to {tgt_lang} with respect to the \
         {info_clause} on a continuous scale from 0 to 100, where score of zero means \
         \"no meaning preserved\" and score of one hundred means \"perfect meaning and grammar\"."
    );
    for block in blocks {
        text.push('\n');
        match block {
            Block::Source => {
                text.push_str(&format!("{src_lang} source: {}", instance.source));
            }
            Block::Reference => {
                text.push_str(&format!(
                    "{tgt_lang} human reference: {}",
                    instance.reference
                ));
            }
            Block::Translation => {
                text.push_str(&format!("{tgt_lang} translation: {}", instance.mt_output));
            }
            Block::ErrorWords => {
                text.push_str(&format!(
                    "Annotated error words: {}",
                    render_error_words(&instance.error_words)
                ));
            }
        }
    }
    text.push_str("\nScore:");
    Ok(Message::user(text))
}

/// The fixed evaluation-guidelines paragraph prepended by T6.
pub fn guidelines_text() -> &'static str {
    "Follow the guidelines used for human evaluation of translation quality. When assigning \
     the score, consider the accuracy of the translation, contextual understanding, grammar, \
     syntax and overall readability."
}

fn info_clause(id: TemplateId) -> &'static str {
    match id {
        TemplateId::T1 => "source",
        TemplateId::T2 | TemplateId::T3 | TemplateId::T6 | TemplateId::T8 => "human reference",
        TemplateId::T4 => "source and annotated error words",
        TemplateId::T5 => "human reference and annotated error words",
        TemplateId::T7 => unreachable!("T7 does not use the base skeleton"),
    }
}

fn blocks_for(id: TemplateId) -> &'static [Block] {
    match id {
        TemplateId::T1 => &[Block::Source, Block::Translation],
        TemplateId::T2 => &[Block::Reference, Block::Translation],
        TemplateId::T3 | TemplateId::T6 | TemplateId::T8 => {
            &[Block::Source, Block::Reference, Block::Translation]
        }
        TemplateId::T4 => &[Block::Source, Block::Translation, Block::ErrorWords],
        TemplateId::T5 => &[
            Block::Source,
            Block::Reference,
            Block::Translation,
            Block::ErrorWords,
        ],
        TemplateId::T7 => unreachable!("T7 does not use the base skeleton"),
    }
}

fn cot_stage1(instance: &QEInstance) -> String {
    let lp = format!(
        "{}-{}",
        instance.pair.source_lang(),
        instance.pair.target_lang()
    );
    format!(
        "You are going to evaluate the quality for {lp} translation. You need to think step \
         by step. First read the following source, machine translation and reference \
         translation. Analyze where the machine translation is different from the reference \
         translation.\n\
         Source: {}\n\
         Machine translation: {}\n\
         Reference translation: {}",
        instance.source, instance.mt_output, instance.reference
    )
}

fn cot_stage2(instance: &QEInstance) -> String {
    format!(
        "A large language model did an evaluation of machine translation quality for the {} \
         sentence, which is given as below: {STAGE1_OUTPUT_PLACEHOLDER}\n\
         Based on your analysis, score the machine translation quality on a continuous scale \
         from 0 to 100, where score of zero means \"no meaning preserved\" and score of one \
         hundred means \"perfect meaning and grammar\". Provide the score strictly in JSON \
         format.",
        instance.pair.source_lang()
    )
}

/// Round half-up to an integer for prompt display of gold scores.
fn display_score(score: f64) -> i64 {
    (score + 0.5).floor() as i64
}

/// A scored exemplar: the base T3 block with its `Score:` line filled in.
fn shot_text(shot: &ShotExample) -> Result<String, PromptError> {
    let base = render_base(&shot.instance, info_clause(TemplateId::T3), blocks_for(TemplateId::T3))?;
    let body = base
        .content
        .strip_suffix("Score:")
        .expect("base render ends with the Score: line")
        .to_string();
    Ok(format!("{body}Score: {}", display_score(shot.instance.da_score)))
}

const FEW_SHOT_PREFIX: &str = "You are going to evaluate the quality of machine translation \
given the source, machine translation and reference translation. The followings are examples \
of scoring translation quality.";

/// Render a template over an instance. `shots` is required for T8 and
/// rejected everywhere else.
pub fn render_template(
    id: TemplateId,
    instance: &QEInstance,
    shots: Option<&[ShotExample]>,
) -> Result<PromptPlan, PromptError> {
    if id != TemplateId::T8 {
        if let Some(s) = shots {
            if !s.is_empty() {
                return Err(PromptError::UnexpectedShots(s.len(), id.name().to_string()));
            }
        }
    }
    let stages = match id {
        TemplateId::T1
        | TemplateId::T2
        | TemplateId::T3
        | TemplateId::T4
        | TemplateId::T5 => {
            let msg = render_base(instance, info_clause(id), blocks_for(id))?;
            vec![Stage {
                messages: vec![msg],
            }]
        }
        TemplateId::T6 => {
            let base = render_base(instance, info_clause(id), blocks_for(id))?;
            let text = format!("{}\n{}", guidelines_text(), base.content);
            vec![Stage {
                messages: vec![Message::user(text)],
            }]
        }
        TemplateId::T7 => vec![
            Stage {
                messages: vec![Message::user(cot_stage1(instance))],
            },
            Stage {
                messages: vec![Message::user(cot_stage2(instance))],
            },
        ],
        TemplateId::T8 => {
            let shots = shots.ok_or(PromptError::MissingShots)?;
            if shots.len() != 5 {
                return Err(PromptError::WrongShotCount(shots.len()));
            }
            let mut text = String::from(FEW_SHOT_PREFIX);
            for shot in shots {
                text.push_str("\n\n");
                text.push_str(&shot_text(shot)?);
            }
            text.push_str("\n\n");
            let base = render_base(instance, info_clause(id), blocks_for(id))?;
            text.push_str(&base.content);
            vec![Stage {
                messages: vec![Message::user(text)],
            }]
        }
    };
    Ok(PromptPlan {
        template: id,
        stages,
    })
}

/// Bucket index 0..=4 for a DA score. The ranges are [0,20], (20,40],
/// (40,60], (60,80], (80,100].
pub fn score_bucket(score: f64) -> usize {
    if score <= 20.0 {
        0
    } else if score <= 40.0 {
        1
    } else if score <= 60.0 {
        2
    } else if score <= 80.0 {
        3
    } else {
        4
    }
}

/// An exemplar chosen for the few-shot prefix, tagged with its bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotExample {
    pub instance: QEInstance,
    pub bucket: usize,
}

/// Sampler settings: one shot per score bucket, drawn with the given seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
}

impl SamplerConfig {
    pub const BUCKET_BOUNDS: [(f64, f64); 5] = [
        (0.0, 20.0),
        (20.0, 40.0),
        (40.0, 60.0),
        (60.0, 80.0),
        (80.0, 100.0),
    ];
    pub const SHOTS_PER_BUCKET: usize = 1;
}

/// A bucket that had to borrow its shot from a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSubstitution {
    pub requested_bucket: usize,
    pub used_bucket: usize,
}

/// Sampling result: the five shots in bucket order, plus any fallback
/// substitutions that should be recorded in the run log.
#[derive(Debug, Clone)]
pub struct ShotSample {
    pub shots: Vec<ShotExample>,
    pub substitutions: Vec<ShotSubstitution>,
}

/// Draw one exemplar per bucket, uniformly and deterministically under
/// (pool order, seed). An empty bucket falls back to the nearest non-empty
/// bucket (lower index on ties); draws never repeat an instance.
pub fn sample_shots(pool: &[QEInstance], cfg: &SamplerConfig) -> Result<ShotSample, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let mut by_bucket: [Vec<usize>; 5] = Default::default();
    for (i, inst) in pool.iter().enumerate() {
        by_bucket[score_bucket(inst.da_score)].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken: Vec<usize> = Vec::with_capacity(5);
    let mut shots = Vec::with_capacity(5);
    let mut substitutions = Vec::new();

    for bucket in 0..5 {
        let available = |b: usize, taken: &[usize]| -> Vec<usize> {
            by_bucket[b]
                .iter()
                .copied()
                .filter(|i| !taken.contains(i))
                .collect()
        };
        let mut used = bucket;
        let mut candidates = available(bucket, &taken);
        if candidates.is_empty() {
            // Nearest non-empty bucket by bound distance, lower index first.
            for dist in 1..5 {
                let mut found = false;
                for b in [bucket.checked_sub(dist), Some(bucket + dist)]
                    .into_iter()
                    .flatten()
                    .filter(|b| *b < 5)
                {
                    let c = available(b, &taken);
                    if !c.is_empty() {
                        used = b;
                        candidates = c;
                        found = true;
                        break;
                    }
                }
                if found {
                    break;
                }
            }
            if candidates.is_empty() {
                return Err(PromptError::EmptyPool);
            }
            substitutions.push(ShotSubstitution {
                requested_bucket: bucket,
                used_bucket: used,
            });
        }
        let pick = candidates[(rng.next_u64() % candidates.len() as u64) as usize];
        taken.push(pick);
        shots.push(ShotExample {
            instance: pool[pick].clone(),
            bucket: score_bucket(pool[pick].da_score),
        });
    }

    Ok(ShotSample {
        shots,
        substitutions,
    })
}
