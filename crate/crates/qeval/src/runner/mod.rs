//! End-to-end orchestration: render, generate, parse, and persist one
//! evaluation record per (pair, template, instance), with resumable
//! append-only logs and drop-aware reporting.

mod log;
mod report;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{read_log, EvalRecord, LogHeader, LogWriter, RunLog, ShotsLine, LOG_VERSION};
pub use report::{
    import_baseline_scores, report, write_report_files, BaselineReport, CellHistograms, ReportOutput,
    ReportRow,
};

use crate::backends::{build_backend, Backend, BackendConfig, GenerationCall, GenerationParams};
use crate::corpus::{read_corpus, PairCode, QEInstance};
use crate::error::RunError;
use crate::parsing::{detect_echo, extract_score, DropReason, ParseMode, ParseOutcome};
use crate::prompts::{render_template, sample_shots, SamplerConfig, ShotExample, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn file_name(&self) -> &'static str {
        match self {
            SplitName::Train => "train.jsonl",
            SplitName::Valid => "valid.jsonl",
            SplitName::Test => "test.jsonl",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitName::Train),
            "valid" | "validation" | "dev" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Optional overrides on top of the per-template parameter defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_input_tokens: Option<u32>,
    pub max_output_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl ParamOverrides {
    pub fn materialize(&self, template: TemplateId) -> GenerationParams {
        let mut params = GenerationParams::for_template(template);
        if let Some(t) = self.temperature {
            params.temperature = t;
        }
        if let Some(p) = self.top_p {
            params.top_p = p;
        }
        if let Some(m) = self.max_input_tokens {
            params.max_input_tokens = m;
        }
        if let Some(m) = self.max_output_tokens {
            params.max_output_tokens = m;
        }
        if let Some(s) = self.seed {
            params.seed = Some(s);
        }
        params
    }
}

/// Everything one run needs. `corpus_dir` holds the canonical split files
/// (`train.jsonl`, `valid.jsonl`, `test.jsonl`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub pairs: Vec<PairCode>,
    pub templates: Vec<TemplateId>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub params: ParamOverrides,
    pub split: SplitName,
    pub shots_seed: Option<u64>,
    pub parallelism: usize,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.pairs.is_empty() {
            return Err(RunError::InvalidConfig("no language pairs selected".into()));
        }
        if self.templates.is_empty() {
            return Err(RunError::InvalidConfig("no templates selected".into()));
        }
        if self.parallelism == 0 {
            return Err(RunError::InvalidConfig("parallelism must be >= 1".into()));
        }
        if self.templates.contains(&TemplateId::T8) && self.shots_seed.is_none() {
            return Err(RunError::InvalidConfig(
                "T8 requires --seed for shot sampling".into(),
            ));
        }
        Ok(())
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join("run.jsonl")
    }

    /// Hash over everything that defines the identity of a run; resuming
    /// under a different identity is refused.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Fingerprint<'a> {
            pairs: &'a [PairCode],
            templates: &'a [TemplateId],
            backend_id: String,
            split: SplitName,
            shots_seed: Option<u64>,
            params: &'a ParamOverrides,
        }
        let fp = Fingerprint {
            pairs: &self.pairs,
            templates: &self.templates,
            backend_id: self.backend.id(),
            split: self.split,
            shots_seed: self.shots_seed,
            params: &self.params,
        };
        let json = serde_json::to_string(&fp).expect("fingerprint serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Load one split file and group its instances by pair, keeping only the
/// configured pairs.
fn load_split(config: &RunConfig, split: SplitName) -> Result<HashMap<PairCode, Vec<QEInstance>>, RunError> {
    let path = config.corpus_dir.join(split.file_name());
    let instances = read_corpus(&path)?;
    let mut by_pair: HashMap<PairCode, Vec<QEInstance>> = HashMap::new();
    for inst in instances {
        if config.pairs.contains(&inst.pair) {
            by_pair.entry(inst.pair).or_default().push(inst);
        }
    }
    Ok(by_pair)
}

struct Job {
    pair: PairCode,
    template: TemplateId,
    instance: QEInstance,
    shots: Option<std::sync::Arc<Vec<ShotExample>>>,
}

fn execute_job(backend: &dyn Backend, config: &RunConfig, job: &Job) -> Result<EvalRecord, RunError> {
    let started = now_ms();
    let params = config.params.materialize(job.template);
    let plan = render_template(job.template, &job.instance, job.shots.as_ref().map(|s| s.as_slice()))?;

    let mut stage_outputs: Vec<String> = Vec::with_capacity(plan.stages.len());
    let mut truncated = false;
    let mut outcome: Option<ParseOutcome> = None;
    let mut final_prompt = plan.stage_text(0);

    for stage_idx in 0..plan.stages.len() {
        let messages = if stage_idx == 0 {
            plan.stages[0].messages.clone()
        } else {
            let filled = plan.fill_stage(stage_idx, &stage_outputs[stage_idx - 1]);
            final_prompt = filled
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            filled
        };
        let call = GenerationCall {
            instance_id: &job.instance.id,
            messages: &messages,
            params: &params,
        };
        match backend.generate(&call) {
            Ok(result) => {
                truncated |= result.truncated_input;
                stage_outputs.push(result.text);
            }
            Err(_) => {
                outcome = Some(ParseOutcome::Dropped(DropReason::BackendError));
                break;
            }
        }
    }

    let outcome = outcome.unwrap_or_else(|| {
        let final_output = stage_outputs.last().map(String::as_str).unwrap_or("");
        // Echo detection runs before score extraction.
        if detect_echo(&final_prompt, final_output) {
            ParseOutcome::Dropped(DropReason::Echo)
        } else {
            let mode = if job.template == TemplateId::T7 {
                ParseMode::JsonFirst
            } else {
                ParseMode::FreeText
            };
            extract_score(final_output, mode)
        }
    });

    Ok(EvalRecord {
        instance_id: job.instance.id.clone(),
        pair: job.pair,
        template: job.template,
        backend_id: backend.id().to_string(),
        stage_outputs,
        outcome,
        truncated_input: truncated,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    })
}

fn execute(config: &RunConfig, resume_from: Option<RunLog>) -> Result<PathBuf, RunError> {
    config.validate()?;
    let log_path = config.log_path();

    let eval_instances = load_split(config, config.split)?;
    for pair in &config.pairs {
        if eval_instances.get(pair).map_or(true, Vec::is_empty) {
            return Err(RunError::InvalidConfig(format!(
                "no instances for {pair} in the {} split",
                config.split
            )));
        }
    }

    // Gold scores feed the oracle backends; remote backends ignore them.
    let mut gold: HashMap<String, f64> = HashMap::new();
    for insts in eval_instances.values() {
        for inst in insts {
            gold.insert(inst.id.clone(), inst.da_score);
        }
    }

    // Few-shot exemplars come from train + valid, never the evaluated split.
    let mut shots_by_pair: HashMap<PairCode, (std::sync::Arc<Vec<ShotExample>>, ShotsLine)> =
        HashMap::new();
    if config.templates.contains(&TemplateId::T8) {
        let seed = config.shots_seed.expect("validated above");
        let mut pool_by_pair = load_split(config, SplitName::Train)?;
        for (pair, mut valid) in load_split(config, SplitName::Valid)? {
            pool_by_pair.entry(pair).or_default().append(&mut valid);
        }
        for pair in &config.pairs {
            let pool = pool_by_pair.get(pair).cloned().unwrap_or_default();
            if pool.is_empty() {
                return Err(RunError::InvalidConfig(format!(
                    "T8 needs a train/valid pool for {pair}"
                )));
            }
            let sample = sample_shots(&pool, &SamplerConfig { seed })?;
            for shot in &sample.shots {
                gold.insert(shot.instance.id.clone(), shot.instance.da_score);
            }
            let line = ShotsLine {
                pair: *pair,
                shot_ids: sample.shots.iter().map(|s| s.instance.id.clone()).collect(),
                substitutions: sample.substitutions.clone(),
            };
            shots_by_pair.insert(*pair, (std::sync::Arc::new(sample.shots), line));
        }
    }

    let backend = build_backend(&config.backend, &gold)
        .map_err(|e| RunError::InvalidConfig(e.to_string()))?;

    let (mut writer, done, shots_already_logged) = match resume_from {
        Some(existing) => {
            let done: HashSet<(PairCode, TemplateId, String)> = existing
                .records
                .iter()
                .map(|r| (r.pair, r.template, r.instance_id.clone()))
                .collect();
            let logged: HashSet<PairCode> = existing.shots.iter().map(|s| s.pair).collect();
            (LogWriter::append_existing(&log_path)?, done, logged)
        }
        None => {
            std::fs::create_dir_all(&config.out_dir).map_err(|e| RunError::Io {
                path: config.out_dir.display().to_string(),
                source: e,
            })?;
            let mut writer = LogWriter::create(&log_path)?;
            writer.write_line(&log::LogLine::Header(LogHeader {
                version: LOG_VERSION,
                config_hash: config.fingerprint(),
                pairs: config.pairs.clone(),
                templates: config.templates.clone(),
                backend_id: config.backend.id(),
                split: config.split.to_string(),
                shots_seed: config.shots_seed,
                created_unix_ms: now_ms(),
            }))?;
            (writer, HashSet::new(), HashSet::new())
        }
    };

    for (pair, (_, line)) in &shots_by_pair {
        if !shots_already_logged.contains(pair) {
            writer.write_line(&log::LogLine::Shots(line.clone()))?;
        }
    }

    let mut jobs: Vec<Job> = Vec::new();
    for pair in &config.pairs {
        for template in &config.templates {
            let shots = if *template == TemplateId::T8 {
                Some(std::sync::Arc::clone(&shots_by_pair[pair].0))
            } else {
                None
            };
            for instance in &eval_instances[pair] {
                if done.contains(&(*pair, *template, instance.id.clone())) {
                    continue;
                }
                jobs.push(Job {
                    pair: *pair,
                    template: *template,
                    instance: instance.clone(),
                    shots: shots.clone(),
                });
            }
        }
    }

    let next_job = AtomicUsize::new(0);
    let backend_ref: &dyn Backend = backend.as_ref();
    let mut worker_error: Option<RunError> = None;
    std::thread::scope(|scope| -> Result<(), RunError> {
        let (tx, rx) = mpsc::channel::<Result<EvalRecord, RunError>>();
        for _ in 0..config.parallelism.min(jobs.len().max(1)) {
            let tx = tx.clone();
            let jobs = &jobs;
            let next_job = &next_job;
            scope.spawn(move || loop {
                let i = next_job.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let outcome = execute_job(backend_ref, config, &jobs[i]);
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for received in rx {
            match received {
                Ok(record) => writer.write_line(&log::LogLine::Record(record))?,
                Err(e) => {
                    if worker_error.is_none() {
                        worker_error = Some(e);
                    }
                }
            }
        }
        Ok(())
    })?;
    if let Some(e) = worker_error {
        return Err(e);
    }

    Ok(log_path)
}

/// Run every (pair, template, instance) cell of the config, appending to a
/// fresh log under `out_dir`. Refuses to overwrite an existing log.
pub fn run(config: &RunConfig) -> Result<PathBuf, RunError> {
    let log_path = config.log_path();
    if log_path.exists() {
        return Err(RunError::InvalidConfig(format!(
            "{} already exists; use resume or a fresh --out directory",
            log_path.display()
        )));
    }
    execute(config, None)
}

/// Complete a partial log. Instances already present are skipped; a log
/// written under a different config is refused.
pub fn resume(log_path: &Path, config: &RunConfig) -> Result<PathBuf, RunError> {
    let existing = read_log(log_path)?;
    if existing.header.config_hash != config.fingerprint() {
        let reason = if existing.header.backend_id != config.backend.id() {
            format!(
                "backend changed ({} vs {})",
                existing.header.backend_id,
                config.backend.id()
            )
        } else if existing.header.templates != config.templates {
            "template set changed".to_string()
        } else {
            "config hash differs".to_string()
        };
        return Err(RunError::ConfigMismatch {
            path: log_path.display().to_string(),
            reason,
        });
    }
    execute(config, Some(existing))
}
