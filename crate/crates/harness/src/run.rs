//! Batch runner for the generation, judgment and learning-curve protocols.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flipscope_core::predtree::{build_tree, concept_mass, Concept, TreeError};
use flipscope_core::seqcore::{alternation_rate, longest_run, mean, parse_flips};
use flipscope_core::{BinarySequence, TokenFormat};
use flipscope_llm::prompts::{generation_prompt, judgment_prompt, NON_TOKEN, RANDOM_TOKEN};
use flipscope_llm::{
    fan_out, write_atomic, Client, ClientProvider, LlmError, Prompt, Request, MIN_VALID_FLIPS,
    READOUT_TOKENS,
};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::store::{Cell, RecordStore, RunRecord, Status};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CACHE_DIR: &str = "cache";
pub const TREES_DIR: &str = "trees";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop after this many cells (used to simulate an interrupted run).
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total_cells: usize,
    /// Already complete before this run.
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
    /// Left for a later `--resume`.
    pub pending: usize,
    pub network_calls: u64,
    pub cache_hits: u64,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failed == 0 && self.pending == 0
    }
}

/// Every cell of the configured experiment, in output order.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    match config.kind {
        ExperimentKind::Generation => config
            .p_grid
            .iter()
            .map(|&p| Cell::Generation { p })
            .collect(),
        ExperimentKind::Judgment => config
            .concepts
            .iter()
            .flat_map(|c| {
                config.n_range.iter().map(|&n| Cell::Judgment {
                    concept: c.clone(),
                    n,
                })
            })
            .collect(),
        ExperimentKind::LearningCurve => config
            .concepts
            .iter()
            .flat_map(|c| {
                config.n_range.iter().flat_map(move |&n| {
                    config.depth_list.iter().map(move |&depth| Cell::Curve {
                        concept: c.clone(),
                        n,
                        depth,
                    })
                })
            })
            .collect(),
    }
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    digest: String,
    client: Client,
    out: PathBuf,
}

/// Run `config` into `out`, skipping cells already complete when resuming.
pub fn run(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out.join(TREES_DIR))
        .with_context(|| format!("creating {}", out.display()))?;
    let digest = config.digest();
    let config_path = out.join(CONFIG_FILE);
    let records_path = out.join(RECORDS_FILE);
    let (store, done) = if opts.resume && config_path.exists() {
        let previous = ExperimentConfig::load(&config_path)?;
        if previous.digest() != digest {
            bail!(
                "{} holds a run of a different config; use another --out or drop --resume",
                out.display()
            );
        }
        let (store, batches) = RecordStore::resume(&records_path)?;
        let done: BTreeSet<String> = crate::store::latest_by_cell(batches)
            .into_iter()
            .filter(|(_, b)| !b.failed())
            .map(|(k, _)| k)
            .collect();
        (store, done)
    } else {
        write_atomic(&config_path, config.to_json().as_bytes())?;
        (RecordStore::create(&records_path)?, BTreeSet::new())
    };

    let client = Client::new(config.effective_provider())?.with_cache(out.join(CACHE_DIR))?;
    let ctx = Runner {
        config,
        digest,
        client,
        out: out.to_path_buf(),
    };

    let all = cells(config);
    let mut summary = RunSummary {
        total_cells: all.len(),
        ..RunSummary::default()
    };
    let todo: Vec<Cell> = all
        .into_iter()
        .filter(|c| {
            let seen = done.contains(&c.key());
            summary.skipped += seen as usize;
            !seen
        })
        .collect();
    let limit = opts.max_cells.unwrap_or(usize::MAX).min(todo.len());
    summary.pending = todo.len() - limit;

    // Threads rather than the CPU pool: requests should overlap up to the
    // in-flight bound even on a single core.
    let workers = ctx.workers();
    for chunk in todo[..limit].chunks(workers) {
        let batches = fan_out(chunk, workers, |cell| ctx.run_cell(cell));
        for records in batches {
            if records.iter().any(|r| r.status == Status::Failed) {
                summary.failed += 1;
                for r in records.iter().filter(|r| r.status == Status::Failed) {
                    log::error!(
                        "cell {} failed: {}",
                        r.cell.key(),
                        r.note.as_deref().unwrap_or("")
                    );
                }
            } else {
                summary.completed += 1;
            }
            store.append(&records)?;
        }
    }
    summary.network_calls = ctx.client.network_calls();
    summary.cache_hits = ctx.client.cache_hits();
    Ok(summary)
}

impl Runner<'_> {
    fn workers(&self) -> usize {
        self.config.provider.rate_limit.max_in_flight.max(1)
    }

    fn run_cell(&self, cell: &Cell) -> Vec<RunRecord> {
        match cell {
            Cell::Generation { p } => self.generation(cell, *p),
            Cell::Judgment { concept, n } => vec![self.judgment(cell, concept, *n)],
            Cell::Curve { concept, n, depth } => vec![self.curve(cell, concept, *n, *depth)],
        }
    }

    fn generation(&self, cell: &Cell, p: f64) -> Vec<RunRecord> {
        let kind = self.config.provider.kind;
        let seed_flip = BinarySequence::from_bits([0]);
        let prompt = generation_prompt(kind, p, &seed_flip);
        let size = self.config.samples_per_cell;
        let format = TokenFormat::default();
        let items: Vec<usize> = (0..size).collect();
        fan_out(&items, self.workers(), |&i| {
            let req = Request {
                prompt: prompt.clone(),
                max_tokens: self.config.provider.max_tokens,
                logprobs: false,
                sample_index: i as u64,
            };
            let completion = match self.client.request(&req) {
                Ok(c) => c,
                Err(e) => {
                    let mut r = RunRecord::new(&self.digest, cell, i, size, Status::Failed);
                    r.request_hashes = vec![req.hash(self.client.config())];
                    r.note = Some(e.to_string());
                    return r;
                }
            };
            let parsed = parse_flips(&completion.response_text, &format).sequence;
            let y = parsed.prefix(parsed.len().min(self.config.crop_len));
            let status = if parsed.len() < MIN_VALID_FLIPS {
                Status::Flagged
            } else {
                Status::Ok
            };
            let mut r = RunRecord::new(&self.digest, cell, i, size, status);
            r.request_hashes = vec![completion.request_hash];
            r.values.insert("parsed_len".into(), parsed.len() as f64);
            r.values.insert("len".into(), y.len() as f64);
            if let Ok(m) = mean(&y) {
                r.values.insert("mean".into(), m);
            }
            if let Ok(a) = alternation_rate(&y) {
                r.values.insert("alternation".into(), a);
            }
            r.values
                .insert("longest_run".into(), longest_run(&y) as f64);
            if status == Status::Flagged {
                r.note = Some(format!("only {} flips parsed", parsed.len()));
            }
            r.sequence = Some(y);
            r
        })
    }

    fn judgment(&self, cell: &Cell, concept: &BinarySequence, n: usize) -> RunRecord {
        let x = BinarySequence::repeat(concept, n);
        let prompt = judgment_prompt(&x);
        let mut r = RunRecord::new(&self.digest, cell, 0, 1, Status::Ok);
        r.sequence = Some(x.clone());
        r.values.insert("x_len".into(), x.len() as f64);
        match self
            .client
            .binary_next_prob_traced(&prompt, NON_TOKEN, RANDOM_TOKEN)
        {
            Ok((p, record)) => {
                r.method = Some("logprob".into());
                r.request_hashes = vec![record.request_hash];
                r.values.insert("p_random".into(), p);
            }
            Err(LlmError::MissingToken { alternatives, .. }) => {
                log::warn!(
                    "cell {}: no Random/Non logprobs ({alternatives:?}); sampling",
                    cell.key()
                );
                match self.client.sampled_next_prob(
                    &prompt,
                    NON_TOKEN,
                    RANDOM_TOKEN,
                    self.config.samples_per_cell,
                ) {
                    Ok(est) => {
                        r.status = Status::Flagged;
                        r.method = Some("sampling".into());
                        r.request_hashes = est.request_hashes;
                        r.values.insert("p_random".into(), est.p);
                        r.values.insert("count_random".into(), est.count_b as f64);
                        r.values.insert("count_non".into(), est.count_a as f64);
                        r.values.insert("count_other".into(), est.other as f64);
                    }
                    Err(e) => return fail(r, e.to_string()),
                }
            }
            Err(e) => return fail(r, e.to_string()),
        }
        r
    }

    fn curve(&self, cell: &Cell, concept: &BinarySequence, n: usize, depth: usize) -> RunRecord {
        let kind = self.config.provider.kind;
        let curve_p = self.config.curve_p;
        let x = BinarySequence::repeat(concept, n);
        let prompt_for = move |ctx: &BinarySequence| generation_prompt(kind, curve_p, ctx);
        let provider = ClientProvider::new(&self.client, prompt_for)
            .with_fallback(self.config.samples_per_cell);
        let mut r = RunRecord::new(&self.digest, cell, 0, 1, Status::Ok);
        r.sequence = Some(x.clone());
        r.values.insert("x_len".into(), x.len() as f64);
        r.values.insert("depth".into(), depth as f64);
        r.request_hashes = tree_request_hashes(&self.client, &x, depth, &prompt_for);
        let tree = match build_tree(&provider, &x, depth) {
            Ok(t) => t,
            Err(TreeError::Partial {
                completed,
                total,
                source,
            }) => {
                return fail(
                    r,
                    format!(
                        "incomplete tree ({} of {total} nodes): {source}",
                        completed.len()
                    ),
                )
            }
            Err(e) => return fail(r, e.to_string()),
        };
        let concept = Concept::new(concept.clone()).expect("validated concept");
        r.method = Some("logprob".into());
        r.values
            .insert("mass".into(), concept_mass(&tree, &concept));
        let rel = format!("{TREES_DIR}/{}.json", cell.key());
        let doc = serde_json::to_vec_pretty(&tree.to_document()).expect("tree serializes");
        if let Err(e) = write_atomic(&self.out.join(&rel), &doc) {
            return fail(r, format!("writing {rel}: {e}"));
        }
        r.tree_file = Some(rel);
        r
    }
}

fn fail(mut r: RunRecord, note: String) -> RunRecord {
    r.status = Status::Failed;
    r.values.clear();
    r.method = None;
    r.note = Some(note);
    r
}

/// Cache keys of the readouts behind a tree, in breadth-first node order.
fn tree_request_hashes(
    client: &Client,
    root: &BinarySequence,
    depth: usize,
    prompt_for: &impl Fn(&BinarySequence) -> Prompt,
) -> Vec<String> {
    let mut level = vec![BinarySequence::empty()];
    let mut out = Vec::new();
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * 2);
        for path in &level {
            let req = Request {
                prompt: prompt_for(&root.concat(path)),
                max_tokens: READOUT_TOKENS,
                logprobs: true,
                sample_index: 0,
            };
            out.push(req.hash(client.config()));
            next.push(path.pushed(flipscope_core::Flip::Heads));
            next.push(path.pushed(flipscope_core::Flip::Tails));
        }
        level = next;
    }
    out
}
