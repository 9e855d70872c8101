//! The executor: baseline, skip rule, budgeted cycles, final evaluation and
//! resume. Every file write goes through [`Storage`] so crashes can be
//! injected at any write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ControllerConfig, RunConfig};
use super::lock::{LockError, RunLock};
use super::report;
use crate::arch::{embedding_width, parse_pair, ArchDescriptor};
use crate::controller::{Controller, Endpoint, FailingTransport, HeuristicController, RemoteController};
use crate::data::DatasetBundle;
use crate::experts::{
    expert_grid, train_expert, ExpertKey, ExpertModel, ExpertOutcome, FaultInjection, Prepared, RedactedFailure,
    TrialStatus,
};
use crate::fusion::{train_end_to_end, train_fusion, EndToEndModel, ExpertSet, ExpertSlot, FusionModel};
use crate::metrics::multiclass_metrics;
use crate::nn::Checkpoint;
use crate::protocol::{
    parse_directive, read_ledger, render_manifest, replay, summarize_for_controller, Configuration, ControllerSummary,
    DatasetMeta, Directive, DirectiveContext, FusedBlock, Ledger, LedgerError, LedgerEvent, ReportRow, ResultsFile,
    RunStatus, SearchState, Storage, SummaryInputs, TargetRecord, SCHEMA_VERSION,
};
use crate::seed::{derive_seed, stage_seed};
use crate::validation::Rejections;

pub const CONFIG_FILE: &str = "config.json";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const DIRECTIVE_FILE: &str = "directive.json";
pub const RESULTS_FILE: &str = "results.json";
pub const MANIFEST_FILE: &str = "manifest.md";
pub const MODELS_DIR: &str = "models";
pub const BASELINE_ID: &str = "baseline";
pub const FINAL_ID: &str = "final";

/// Collects every byte handed to the controller.
pub type ControllerTap = Arc<Mutex<Vec<u8>>>;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(Rejections),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("run directory {0} already exists and is not empty")]
    NotEmpty(PathBuf),
    #[error("run directory {0} is not initialized")]
    NotInitialized(PathBuf),
    #[error("config hash {found} does not match the hash pinned in the ledger ({pinned})")]
    ConfigMismatch { found: String, pinned: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("directive rejected: {0}")]
    Directive(Rejections),
    #[error("artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("replayed ledger diverges from live state after record {0}")]
    ReplayMismatch(u64),
}

impl RunError {
    /// True for errors caused by bad input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::NotEmpty(_)
                | RunError::NotInitialized(_)
                | RunError::ConfigMismatch { .. }
                | RunError::Lock(_)
        )
    }
}

fn artifact(path: impl AsRef<Path>, message: impl std::fmt::Display) -> RunError {
    RunError::Artifact {
        path: path.as_ref().display().to_string(),
        message: message.to_string(),
    }
}

/// Test and tooling hooks; the defaults are what the CLI uses.
#[derive(Default)]
pub struct RunOptions {
    pub storage: Storage,
    pub tap: Option<ControllerTap>,
    /// After every append, re-read the ledger and compare its replay with
    /// the live state.
    pub verify_replay: bool,
    pub workers: Option<usize>,
    /// Replaces the controller named in the config.
    pub controller: Option<Box<dyn Controller>>,
}

fn candidate_dir(id: &str) -> PathBuf {
    Path::new(MODELS_DIR).join(id)
}

fn expert_ckpt(id: &str, key: ExpertKey) -> PathBuf {
    candidate_dir(id)
        .join("experts")
        .join(format!("{}.ckpt", key.file_stem()))
}

fn rel(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Creates a run directory: `config.json` plus ledger record 0.
pub fn init_run(dir: &Path, config: &RunConfig, storage: &Storage) -> Result<(), RunError> {
    config.validate().map_err(RunError::Config)?;
    if dir.exists() {
        // Leftovers of an init that died before its ledger record are fine.
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if name != CONFIG_FILE && !name.ends_with(".tmp") {
                return Err(RunError::NotEmpty(dir.to_path_buf()));
            }
        }
    }
    std::fs::create_dir_all(dir)?;
    let bundle = config.load_dataset(dir).map_err(RunError::Dataset)?;
    let initial = config.initial_descriptor.resolve().map_err(RunError::Config)?;
    storage.write(&dir.join(CONFIG_FILE), config.to_text().as_bytes())?;
    let mut ledger = Ledger::open(&dir.join(LEDGER_FILE), storage.clone(), config.clock)?;
    ledger.append(
        0,
        LedgerEvent::RunStarted {
            config_hash: config.hash(),
            master_seed: config.master_seed,
            budget: config.budget,
            modalities: bundle.n_modalities(),
            classes: bundle.n_classes(),
            initial_descriptor_hash: initial.canonical_hash().as_str().to_string(),
        },
    )?;
    Ok(())
}

pub fn is_initialized(dir: &Path) -> bool {
    dir.join(CONFIG_FILE).exists() && dir.join(LEDGER_FILE).exists()
}

/// Builds the controller named in the config.
pub fn make_controller(config: &RunConfig) -> Box<dyn Controller> {
    match &config.controller {
        ControllerConfig::Heuristic => Box::new(HeuristicController::default()),
        ControllerConfig::Remote(rc) => {
            let transport = rc
                .endpoint
                .parse::<Endpoint>()
                .and_then(|e| e.transport())
                .unwrap_or_else(|e| {
                    log::warn!("{e}; proposals will come from the fallback controller");
                    Box::new(FailingTransport)
                });
            Box::new(RemoteController::new(transport, rc.clone()))
        }
    }
}

/// Per-expert choice of descriptor and checkpoint for building a fusion.
type Selection = BTreeMap<ExpertKey, (String, PathBuf)>;

pub struct Executor {
    dir: PathBuf,
    config: RunConfig,
    bundle: DatasetBundle,
    storage: Storage,
    ledger: Ledger,
    state: SearchState,
    controller: Box<dyn Controller>,
    tap: Option<ControllerTap>,
    verify_replay: bool,
    initial: ArchDescriptor,
    descriptors: BTreeMap<String, ArchDescriptor>,
    pool: rayon::ThreadPool,
    _lock: RunLock,
}

impl Executor {
    pub fn open(dir: &Path, opts: RunOptions) -> Result<Self, RunError> {
        if !is_initialized(dir) {
            return Err(RunError::NotInitialized(dir.to_path_buf()));
        }
        let lock = RunLock::acquire(dir)?;
        let mut config = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(RunError::Config)?;
        if let Some(w) = opts.workers {
            config.workers = w.max(1);
        }
        let ledger = Ledger::open(&dir.join(LEDGER_FILE), opts.storage.clone(), config.clock)?;
        let pinned = match ledger.records().first().map(|r| &r.event) {
            Some(LedgerEvent::RunStarted { config_hash, .. }) => config_hash.clone(),
            _ => return Err(RunError::NotInitialized(dir.to_path_buf())),
        };
        if pinned != config.hash() {
            return Err(RunError::ConfigMismatch {
                found: config.hash(),
                pinned,
            });
        }
        let bundle = config.load_dataset(dir).map_err(RunError::Dataset)?;
        let initial = config.initial_descriptor.resolve().map_err(RunError::Config)?;
        let state = replay(ledger.records());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let controller = opts.controller.unwrap_or_else(|| make_controller(&config));
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            bundle,
            storage: opts.storage,
            ledger,
            state,
            controller,
            tap: opts.tap,
            verify_replay: opts.verify_replay,
            initial,
            descriptors: BTreeMap::new(),
            pool,
            _lock: lock,
        })
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn bundle(&self) -> &DatasetBundle {
        &self.bundle
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Runs to completion from wherever the ledger left off.
    pub fn run(&mut self) -> Result<RunStatus, RunError> {
        // A crash may have landed between a commit and the manifest write.
        self.write_manifest()?;
        if self.state.final_rows.is_none() {
            if !self.state.baseline_done {
                self.run_baseline()?;
            }
            if self.state.status == RunStatus::Running && self.state.cycles_completed == 0 {
                self.maybe_skip()?;
            }
            if self.state.status == RunStatus::Running && !self.state.fused.is_empty() {
                while self.state.cycles_completed < self.state.budget {
                    let k = self.state.next_cycle();
                    self.run_cycle(k)?;
                }
            }
            self.final_evaluation()?;
        }
        self.write_reports()?;
        Ok(self.state.status)
    }

    // -- plumbing ---------------------------------------------------------

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), RunError> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.storage.write(&p, bytes)?;
        Ok(())
    }

    fn append(&mut self, cycle: u64, event: LedgerEvent) -> Result<(), RunError> {
        let rec = self.ledger.append(cycle, event)?.clone();
        self.state.apply(&rec);
        if self.verify_replay {
            let on_disk = read_ledger(&self.path(LEDGER_FILE))?;
            let n = self.ledger.next_seq() as usize;
            if on_disk.len() < n || replay(&on_disk[..n]) != self.state {
                return Err(RunError::ReplayMismatch(rec.seq));
            }
        }
        Ok(())
    }

    fn tap(&self, bytes: &[u8]) {
        if let Some(t) = &self.tap {
            let mut g = t.lock().unwrap();
            g.extend_from_slice(bytes);
            g.push(b'\n');
        }
    }

    fn elapsed(&self, t0: Instant) -> f64 {
        match self.config.clock {
            crate::protocol::Clock::Logical => 0.0,
            crate::protocol::Clock::Wall => t0.elapsed().as_secs_f64(),
        }
    }

    fn write_descriptor(&mut self, id: &str, d: &ArchDescriptor) -> Result<(), RunError> {
        let dir = candidate_dir(id);
        self.write(dir.join("model.json"), d.model_file().as_bytes())?;
        self.write(dir.join("preprocessing.json"), d.preprocessing_file().as_bytes())?;
        self.descriptors.insert(id.to_string(), d.clone());
        Ok(())
    }

    fn load_descriptor(&mut self, id: &str) -> Result<ArchDescriptor, RunError> {
        if let Some(d) = self.descriptors.get(id) {
            return Ok(d.clone());
        }
        let dir = self.path(candidate_dir(id));
        let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| artifact(dir.join(name), e));
        let d = parse_pair(&read("model.json")?, &read("preprocessing.json")?).map_err(|e| artifact(&dir, e))?;
        self.descriptors.insert(id.to_string(), d.clone());
        Ok(d)
    }

    fn train_targets(&self, cycle: u64, targets: &[ExpertKey], desc: &ArchDescriptor) -> Vec<(ExpertOutcome, f64)> {
        let fault = FaultInjection {
            poison_input: self.config.fault_injection.cycles.contains(&cycle),
        };
        let (bundle, protocol, master) = (&self.bundle, &self.config.protocol, self.config.master_seed);
        let timed: Vec<(ExpertOutcome, Instant, Instant)> = self.pool.install(|| {
            targets
                .par_iter()
                .map(|&k| {
                    let t0 = Instant::now();
                    let seed = derive_seed(master, cycle, k.modality as u64, k.class as u64);
                    let out = train_expert(k, desc, bundle, protocol, seed, fault);
                    (out, t0, Instant::now())
                })
                .collect()
        });
        timed
            .into_iter()
            .map(|(o, t0, t1)| {
                let secs = match self.config.clock {
                    crate::protocol::Clock::Logical => 0.0,
                    crate::protocol::Clock::Wall => (t1 - t0).as_secs_f64(),
                };
                (o, secs)
            })
            .collect()
    }

    fn record_of(o: &ExpertOutcome, runtime: f64) -> TargetRecord {
        TargetRecord {
            target: o.key,
            status: o.status,
            metrics: o.metrics.clone(),
            curve: o.curve.clone(),
            runtime_seconds: runtime,
            failure: o.failure.clone(),
        }
    }

    /// Loads the selected experts from their checkpoints; the rest become
    /// zero slots.
    fn expert_set(&mut self, selection: &Selection) -> Result<ExpertSet, RunError> {
        let (m, c) = (self.bundle.n_modalities(), self.bundle.n_classes());
        let mut set = ExpertSet::new(m, c);
        for key in expert_grid(m, c) {
            let shape = self.bundle.modality_shape(key.modality);
            let slot = match selection.get(&key) {
                Some((id, ck)) => {
                    let desc = self.load_descriptor(id)?;
                    let p = self.path(ck);
                    let ckpt = Checkpoint::read(&p).map_err(|e| artifact(&p, e))?;
                    let model = ExpertModel::from_checkpoint(key, &desc, shape, &ckpt).map_err(|e| artifact(&p, e))?;
                    ExpertSlot::Trained {
                        data: Arc::new(Prepared::new(&self.bundle, key.modality, &desc)),
                        model,
                    }
                }
                None => ExpertSlot::Zero {
                    width: embedding_width(&self.initial, shape).unwrap_or(1),
                },
            };
            set.insert(key, slot);
        }
        Ok(set)
    }

    fn best_selection(&self) -> Selection {
        self.state
            .best
            .iter()
            .filter_map(|(k, b)| {
                b.checkpoint
                    .as_ref()
                    .map(|c| (*k, (b.candidate_id.clone(), PathBuf::from(c))))
            })
            .collect()
    }

    /// Trains a fusion on `selection` and writes its checkpoint.
    fn fuse(
        &mut self,
        cycle: u64,
        id: &str,
        selection: &Selection,
        stage: &str,
    ) -> Result<(LedgerEvent, Option<FusionModel>, ExpertSet), RunError> {
        let t0 = Instant::now();
        let mut set = self.expert_set(selection)?;
        let seed = stage_seed(self.config.master_seed, cycle, stage);
        let ck_rel = candidate_dir(id).join("fusion.ckpt");
        let protocol = self.config.fusion_protocol().clone();
        let trained = if selection.is_empty() {
            Err(RedactedFailure::new("state_error", "fusion"))
        } else {
            train_fusion(&mut set, &self.bundle, &protocol, seed).map_err(|e| RedactedFailure::new(e.kind(), "fusion"))
        };
        match trained {
            Ok(mut out) => {
                self.write(&ck_rel, &out.model.checkpoint().encode())?;
                let ev = LedgerEvent::Fusion {
                    candidate_id: id.to_string(),
                    status: TrialStatus::Ok,
                    runtime_seconds: self.elapsed(t0),
                    val_accuracy: Some(out.validation.accuracy),
                    val_macro_f1: Some(out.validation.macro_f1),
                    checkpoint: Some(rel(&ck_rel)),
                    failure: None,
                };
                Ok((ev, Some(out.model), set))
            }
            Err(failure) => {
                let ev = LedgerEvent::Fusion {
                    candidate_id: id.to_string(),
                    status: TrialStatus::Failed,
                    runtime_seconds: self.elapsed(t0),
                    val_accuracy: None,
                    val_macro_f1: None,
                    checkpoint: None,
                    failure: Some(failure),
                };
                Ok((ev, None, set))
            }
        }
    }

    fn write_manifest(&self) -> Result<(), RunError> {
        self.write(MANIFEST_FILE, render_manifest(self.ledger.records()).as_bytes())
    }

    // -- stages -----------------------------------------------------------

    /// Cycle 0: every expert with the initial descriptor, the fusion and
    /// the end-to-end baseline.
    pub fn run_baseline(&mut self) -> Result<(), RunError> {
        log::info!(
            "baseline: training {} experts",
            self.state.modalities * self.state.classes
        );
        let initial = self.initial.clone();
        let hash = initial.canonical_hash().as_str().to_string();
        self.write_descriptor(BASELINE_ID, &initial)?;
        let grid = expert_grid(self.bundle.n_modalities(), self.bundle.n_classes());
        let outcomes = self.train_targets(0, &grid, &initial);
        let mut records = Vec::new();
        let mut selection = Selection::new();
        for (o, secs) in &outcomes {
            let mut ck = None;
            if let Some(model) = &o.model {
                let p = expert_ckpt(BASELINE_ID, o.key);
                self.write(&p, &model.clone().checkpoint().encode())?;
                selection.insert(o.key, (BASELINE_ID.to_string(), p.clone()));
                ck = Some(rel(&p));
            }
            records.push((Self::record_of(o, *secs), ck));
        }
        let results = ResultsFile {
            schema_version: SCHEMA_VERSION,
            cycle: 0,
            candidate_id: BASELINE_ID.into(),
            records: records.iter().map(|(r, _)| r.clone()).collect(),
            fused: None,
        };
        let text = results.to_text();
        self.write(RESULTS_FILE, text.as_bytes())?;
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        for (record, checkpoint) in records {
            let improved = self.state.improves(record.target, &record);
            self.append(
                0,
                LedgerEvent::Trial {
                    candidate_id: BASELINE_ID.into(),
                    controller: "baseline".into(),
                    descriptor_hash: hash.clone(),
                    record,
                    results_digest: Some(digest.clone()),
                    checkpoint,
                    improved,
                },
            )?;
        }

        let (ev, _, _) = self.fuse(0, BASELINE_ID, &selection, "fusion")?;
        self.append(0, ev)?;

        let t0 = Instant::now();
        let seed = stage_seed(self.config.master_seed, 0, "end_to_end");
        let protocol = self.config.fusion_protocol().clone();
        let ev = match train_end_to_end(&initial, &self.bundle, &protocol, seed) {
            Ok(mut out) => {
                let p = candidate_dir(BASELINE_ID).join("end_to_end.ckpt");
                self.write(&p, &out.model.checkpoint(&hash, seed).encode())?;
                LedgerEvent::EndToEnd {
                    status: TrialStatus::Ok,
                    runtime_seconds: self.elapsed(t0),
                    val_accuracy: Some(out.validation.accuracy),
                    val_macro_f1: Some(out.validation.macro_f1),
                    checkpoint: Some(rel(&p)),
                    failure: None,
                }
            }
            Err(e) => LedgerEvent::EndToEnd {
                status: TrialStatus::Failed,
                runtime_seconds: self.elapsed(t0),
                val_accuracy: None,
                val_macro_f1: None,
                checkpoint: None,
                failure: Some(RedactedFailure::new(e.kind(), "end_to_end")),
            },
        };
        self.append(0, ev)?;
        self.append(0, LedgerEvent::CycleEnd {})?;
        self.write_manifest()
    }

    /// Skips the search when the baseline fusion is already perfect on
    /// validation.
    pub fn maybe_skip(&mut self) -> Result<bool, RunError> {
        match self.state.latest_fused() {
            Some(f) if f.val_accuracy == 1.0 => {
                log::info!("baseline fused validation accuracy is 1.0; skipping the search");
                self.append(0, LedgerEvent::Skipped { val_accuracy: 1.0 })?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    pub fn summary(&mut self) -> Result<ControllerSummary, RunError> {
        let mut descriptors = BTreeMap::new();
        let bests: Vec<String> = self.state.best.values().map(|b| b.candidate_id.clone()).collect();
        for id in bests {
            let d = self.load_descriptor(&id)?;
            descriptors.insert(d.canonical_hash().as_str().to_string(), d);
        }
        let meta = DatasetMeta::from_bundle(&self.bundle);
        Ok(summarize_for_controller(SummaryInputs {
            state: &self.state,
            records: self.ledger.records(),
            dataset: &meta,
            protocol: &self.config.protocol,
            initial: &self.initial,
            descriptors: &descriptors,
            share_learning_curves: self.config.share_learning_curves,
        }))
    }

    /// Proposal for cycle `k`: reused from an interrupted attempt when its
    /// ledger record survived, otherwise asked from the controller.
    fn obtain_proposal(&mut self, k: u64) -> Result<LedgerEvent, RunError> {
        let pending = self.ledger.all_records().get(self.ledger.next_seq() as usize).cloned();
        if let Some(rec) = pending {
            if rec.cycle == k && matches!(rec.event, LedgerEvent::Proposal { .. }) && self.path(DIRECTIVE_FILE).exists()
            {
                return Ok(rec.event);
            }
        }
        let summary = self.summary()?;
        let manifest = render_manifest(self.ledger.records());
        let summary_text = summary.to_text();
        self.tap(summary_text.as_bytes());
        self.tap(manifest.as_bytes());
        let seed = stage_seed(self.config.master_seed, k, "controller");
        let out = self.controller.propose(&summary, &manifest, seed);
        for t in &out.repaired_texts {
            self.tap(t.as_bytes());
        }
        let p = out.proposal;
        let hash = p.descriptor.canonical_hash().as_str().to_string();
        let id = format!("c{k:04}-{}", &hash[..8]);
        self.write_descriptor(&id, &p.descriptor)?;
        let dir = candidate_dir(&id);
        let directive = Directive {
            schema_version: SCHEMA_VERSION,
            cycle: k,
            targets: p.targets.clone(),
            candidate_id: id.clone(),
            descriptor_path: rel(&dir.join("model.json")),
            preprocessing_path: rel(&dir.join("preprocessing.json")),
            rationale: p.rationale.clone(),
        };
        self.write(DIRECTIVE_FILE, directive.to_text().as_bytes())?;
        Ok(LedgerEvent::Proposal {
            candidate_id: id,
            targets: p.targets,
            descriptor_hash: hash,
            controller: out.controller,
            rationale: p.rationale,
            operator: p.operator,
            repairs: out.repairs,
        })
    }

    /// One propose → train → evaluate → record cycle.
    pub fn run_cycle(&mut self, k: u64) -> Result<(), RunError> {
        let proposal = self.obtain_proposal(k)?;
        let LedgerEvent::Proposal { controller, .. } = &proposal else {
            unreachable!()
        };
        let controller = controller.clone();

        let bytes = std::fs::read(self.path(DIRECTIVE_FILE))?;
        self.tap(&bytes);
        let ctx = DirectiveContext {
            modalities: self.bundle.n_modalities(),
            classes: self.bundle.n_classes(),
            run_dir: Some(&self.dir),
        };
        let directive = parse_directive(&bytes, &ctx).map_err(RunError::Directive)?;
        let desc = directive.load_descriptor(&self.dir).map_err(RunError::Directive)?;
        let id = directive.candidate_id.clone();
        self.descriptors.insert(id.clone(), desc.clone());
        let hash = desc.canonical_hash().as_str().to_string();
        log::info!(
            "cycle {k}: {} on {:?}",
            id,
            directive.targets.iter().map(ToString::to_string).collect::<Vec<_>>()
        );
        self.append(k, proposal)?;

        let outcomes = self.train_targets(k, &directive.targets, &desc);
        let mut selection = self.best_selection();
        let mut trials = Vec::new();
        let mut any_improved = false;
        for (o, secs) in &outcomes {
            let record = Self::record_of(o, *secs);
            let mut ck = None;
            if let Some(model) = &o.model {
                let p = expert_ckpt(&id, o.key);
                self.write(&p, &model.clone().checkpoint().encode())?;
                ck = Some(p);
            }
            let improved = self.state.improves(o.key, &record);
            if improved {
                any_improved = true;
                if let Some(p) = &ck {
                    selection.insert(o.key, (id.clone(), p.clone()));
                }
            }
            trials.push((record, ck.map(|p| rel(&p)), improved));
        }

        let mut fusion_event = None;
        let mut fused = None;
        if any_improved {
            let (ev, _, _) = self.fuse(k, &id, &selection, "fusion")?;
            if let LedgerEvent::Fusion {
                val_accuracy: Some(a),
                val_macro_f1: Some(f),
                ..
            } = &ev
            {
                fused = Some(FusedBlock {
                    val_accuracy: *a,
                    val_macro_f1: *f,
                });
            }
            fusion_event = Some(ev);
        }

        let results = ResultsFile {
            schema_version: SCHEMA_VERSION,
            cycle: k,
            candidate_id: id.clone(),
            records: trials.iter().map(|(r, _, _)| r.clone()).collect(),
            fused,
        };
        let text = results.to_text();
        self.write(RESULTS_FILE, text.as_bytes())?;
        let digest = hex::encode(Sha256::digest(text.as_bytes()));
        for (record, checkpoint, improved) in trials {
            self.append(
                k,
                LedgerEvent::Trial {
                    candidate_id: id.clone(),
                    controller: controller.clone(),
                    descriptor_hash: hash.clone(),
                    record,
                    results_digest: Some(digest.clone()),
                    checkpoint,
                    improved,
                },
            )?;
        }
        if let Some(ev) = fusion_event {
            self.append(k, ev)?;
        }
        self.append(k, LedgerEvent::CycleEnd {})?;
        self.write_manifest()
    }

    /// Test-set evaluation of the three configurations. The test split is
    /// read here and nowhere else.
    pub fn final_evaluation(&mut self) -> Result<(), RunError> {
        let test = self
            .bundle
            .splits()
            .map_err(|e| RunError::Dataset(e.to_string()))?
            .test()
            .to_vec();
        let searched = self.state.cycles_completed > 0;
        let rows = self.evaluate_on(&test, true)?;
        let has = |c: Configuration| rows.iter().any(|r| r.configuration == c);
        let status = if self.state.status == RunStatus::Skipped {
            RunStatus::Skipped
        } else if has(Configuration::Staged) && (!searched || has(Configuration::Nas)) {
            RunStatus::Completed
        } else {
            RunStatus::Failed
        };
        let cycle = self.state.cycles_completed;
        self.append(
            cycle,
            LedgerEvent::FinalEvaluation {
                status,
                test_size: test.len(),
                rows,
            },
        )
    }

    /// Validation-split metrics of every configuration evaluated so far,
    /// from checkpoints only. Does not touch the test split or the ledger.
    pub fn evaluate_validation(&mut self) -> Result<Vec<ReportRow>, RunError> {
        let val = self
            .bundle
            .splits()
            .map_err(|e| RunError::Dataset(e.to_string()))?
            .validation
            .clone();
        self.evaluate_on(&val, false)
    }

    /// With `fresh_final` the searched configuration gets a newly trained
    /// fusion; otherwise its latest fusion checkpoint is used.
    fn evaluate_on(&mut self, test: &[usize], fresh_final: bool) -> Result<Vec<ReportRow>, RunError> {
        let y: Vec<usize> = test.iter().map(|&i| self.bundle.labels[i]).collect();
        let c = self.bundle.n_classes();
        let records = self.ledger.records().to_vec();
        let mut rows = Vec::new();

        let runtime = |pred: &dyn Fn(&LedgerEvent, u64) -> bool| -> f64 {
            records
                .iter()
                .filter(|r| pred(&r.event, r.cycle))
                .map(|r| match &r.event {
                    LedgerEvent::Trial { record, .. } => record.runtime_seconds,
                    LedgerEvent::Fusion { runtime_seconds, .. } | LedgerEvent::EndToEnd { runtime_seconds, .. } => {
                        *runtime_seconds
                    }
                    _ => 0.0,
                })
                .sum()
        };

        let e2e_ck = records.iter().find_map(|r| match &r.event {
            LedgerEvent::EndToEnd {
                checkpoint: Some(c), ..
            } => Some(c.clone()),
            _ => None,
        });
        if let Some(ck) = e2e_ck {
            let p = self.path(&ck);
            let ckpt = Checkpoint::read(&p).map_err(|e| artifact(&p, e))?;
            let mut model =
                EndToEndModel::from_checkpoint(&self.initial, &self.bundle, &ckpt).map_err(|e| artifact(&p, e))?;
            let pred = model.predict_rows(test).map_err(|e| artifact(&p, e))?;
            let m = multiclass_metrics(&pred, &y, c);
            rows.push(ReportRow {
                configuration: Configuration::EndToEnd,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                runtime_seconds: runtime(&|e, _| matches!(e, LedgerEvent::EndToEnd { .. })),
            });
        }

        let baseline_fusion = records.iter().find_map(|r| match &r.event {
            LedgerEvent::Fusion {
                checkpoint: Some(c), ..
            } if r.cycle == 0 => Some(c.clone()),
            _ => None,
        });
        let staged_runtime =
            runtime(&|e, cy| cy == 0 && matches!(e, LedgerEvent::Trial { .. } | LedgerEvent::Fusion { .. }));
        if let Some(ck) = baseline_fusion {
            let selection: Selection = records
                .iter()
                .filter(|r| r.cycle == 0)
                .filter_map(|r| match &r.event {
                    LedgerEvent::Trial {
                        record,
                        checkpoint: Some(c),
                        ..
                    } => Some((record.target, (BASELINE_ID.to_string(), PathBuf::from(c)))),
                    _ => None,
                })
                .collect();
            let mut set = self.expert_set(&selection)?;
            let p = self.path(&ck);
            let layout = set.layout().map_err(|e| artifact(&p, e))?;
            let ckpt = Checkpoint::read(&p).map_err(|e| artifact(&p, e))?;
            let mut fusion = FusionModel::from_checkpoint(layout, c, &ckpt).map_err(|e| artifact(&p, e))?;
            let pred = fusion.predict_rows(&mut set, test).map_err(|e| artifact(&p, e))?;
            let m = multiclass_metrics(&pred, &y, c);
            rows.push(ReportRow {
                configuration: Configuration::Staged,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                runtime_seconds: staged_runtime,
            });
        }

        if self.state.cycles_completed > 0 {
            let selection = self.best_selection();
            let search_runtime =
                runtime(&|e, cy| cy > 0 && matches!(e, LedgerEvent::Trial { .. } | LedgerEvent::Fusion { .. }));
            let t0 = Instant::now();
            let fused = if fresh_final {
                let (_, model, set) = self.fuse(self.state.budget + 1, FINAL_ID, &selection, "final_fusion")?;
                model.map(|m| (m, set))
            } else {
                match self.state.latest_fused().and_then(|f| f.checkpoint.clone()) {
                    Some(ck) => {
                        let set = self.expert_set(&selection)?;
                        let p = self.path(&ck);
                        let layout = set.layout().map_err(|e| artifact(&p, e))?;
                        let ckpt = Checkpoint::read(&p).map_err(|e| artifact(&p, e))?;
                        Some((
                            FusionModel::from_checkpoint(layout, c, &ckpt).map_err(|e| artifact(&p, e))?,
                            set,
                        ))
                    }
                    None => None,
                }
            };
            if let Some((mut fusion, mut set)) = fused {
                let fused_time = self.elapsed(t0);
                let pred = fusion.predict_rows(&mut set, test).map_err(|e| artifact(FINAL_ID, e))?;
                let m = multiclass_metrics(&pred, &y, c);
                rows.push(ReportRow {
                    configuration: Configuration::Nas,
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                    runtime_seconds: staged_runtime + search_runtime + fused_time,
                });
            }
        }
        Ok(rows)
    }

    /// `report.json`, the configuration table and the trajectories, all
    /// derived from the ledger.
    pub fn write_reports(&self) -> Result<(), RunError> {
        self.write_manifest()?;
        let records = self.ledger.records();
        if let Ok(json) = report::report_json(records) {
            self.write(report::REPORT_JSON, json.as_bytes())?;
        }
        if let Ok(table) = report::table_csv(records) {
            self.write(report::TABLE_CSV, table.as_bytes())?;
        }
        self.write(report::TRAJECTORIES_CSV, report::trajectories_csv(records).as_bytes())
    }
}

/// Initializes (if needed) and runs. A run directory that already holds a
/// ledger is resumed, provided `config` matches the pinned one.
pub fn run_search(dir: &Path, config: &RunConfig, opts: RunOptions) -> Result<RunStatus, RunError> {
    if !is_initialized(dir) {
        init_run(dir, config, &opts.storage)?;
    } else {
        let pinned = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(RunError::Config)?;
        if pinned.hash() != config.hash() {
            return Err(RunError::ConfigMismatch {
                found: config.hash(),
                pinned: pinned.hash(),
            });
        }
    }
    Executor::open(dir, opts)?.run()
}

pub fn resume(dir: &Path, opts: RunOptions) -> Result<RunStatus, RunError> {
    Executor::open(dir, opts)?.run()
}
