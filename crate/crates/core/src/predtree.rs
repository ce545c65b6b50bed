//! Depth-d next-token prediction trees and formal-language concept mass.
//!
//! A tree stores, for every internal node, the probability of taking the
//! Tails edge. Nodes are addressed by their path from the root; storage is
//! heap-ordered, with the path read as a big-endian integer within its level.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{is_primitive, predictive_next, HypothesisSpace, PredictiveMode};
use crate::genmodels::ModelSpec;
use crate::seqcore::{BinarySequence, Flip};

/// Default cap on tree depth; a remote provider costs `2^d - 1` requests.
pub const DEFAULT_MAX_DEPTH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("provider failed: {message}")]
pub struct ProviderError {
    pub message: String,
}

impl ProviderError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("depth {depth} outside 1..={max}")]
    Depth { depth: usize, max: usize },
    #[error("provider returned probability {value} for context {context}")]
    BadProbability { context: BinarySequence, value: f64 },
    #[error("tree build stopped after {} of {} nodes: {source}", .completed.len(), .total)]
    Partial {
        completed: BTreeMap<BinarySequence, f64>,
        total: usize,
        #[source]
        source: ProviderError,
    },
    #[error("concept pattern must be non-empty and primitive")]
    BadConcept,
    #[error("repetition counts must be ascending")]
    BadRange,
}

/// Anything that can say how likely Tails is after a context.
pub trait NextTokenProvider: Send + Sync {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError>;

    /// Whether `prob_tails` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

impl<P: NextTokenProvider + ?Sized> NextTokenProvider for &P {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        (**self).prob_tails(context)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

impl NextTokenProvider for ModelSpec {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        Ok(self.next_prob(context))
    }
}

/// Posterior predictive of a hypothesis space as a provider.
#[derive(Debug, Clone)]
pub struct BayesProvider {
    pub space: HypothesisSpace,
    pub mode: PredictiveMode,
}

impl NextTokenProvider for BayesProvider {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        predictive_next(&self.space, context, self.mode).map_err(|e| ProviderError::new(e.to_string()))
    }
}

/// Counts calls to the wrapped provider.
#[derive(Debug, Default)]
pub struct CountingProvider<P> {
    pub inner: P,
    calls: AtomicUsize,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: NextTokenProvider> NextTokenProvider for CountingProvider<P> {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.prob_tails(context)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}

/// Caches provider answers per context; each entry is written once.
#[derive(Debug, Default)]
pub struct MemoProvider<P> {
    pub inner: P,
    memo: Memo,
}

impl<P> MemoProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            memo: Memo::default(),
        }
    }
}

impl<P: NextTokenProvider> NextTokenProvider for MemoProvider<P> {
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        if let Some(p) = self.memo.get(context) {
            return Ok(p);
        }
        let p = self.inner.prob_tails(context)?;
        self.memo.insert(context.clone(), p);
        Ok(p)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}

#[derive(Debug, Default)]
struct Memo(RwLock<HashMap<BinarySequence, f64>>);

impl Memo {
    fn get(&self, key: &BinarySequence) -> Option<f64> {
        self.0.read().expect("memo lock").get(key).copied()
    }

    fn insert(&self, key: BinarySequence, value: f64) {
        self.0.write().expect("memo lock").entry(key).or_insert(value);
    }
}

fn node_index(path: &[Flip]) -> usize {
    let level_start = (1usize << path.len()) - 1;
    level_start + crate::genmodels::context_index(path)
}

fn path_at(level: usize, offset: usize) -> BinarySequence {
    BinarySequence::from_bits((0..level).rev().map(|i| ((offset >> i) & 1) as u8))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTree {
    depth: usize,
    root_context: BinarySequence,
    edge_probs: Vec<f64>,
}

impl PredictionTree {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root_context(&self) -> &BinarySequence {
        &self.root_context
    }

    pub fn node_count(&self) -> usize {
        self.edge_probs.len()
    }

    /// P(Tails) at the node reached by `path` (`|path| < depth`).
    pub fn edge_prob(&self, path: &BinarySequence) -> f64 {
        assert!(path.len() < self.depth, "path {path} too long for depth {}", self.depth);
        self.edge_probs[node_index(path.flips())]
    }

    /// Probability of following `path` from the root.
    pub fn path_prob(&self, path: &BinarySequence) -> f64 {
        assert!(path.len() <= self.depth, "path {path} deeper than tree");
        let flips = path.flips();
        (0..flips.len())
            .map(|t| {
                let p = self.edge_probs[node_index(&flips[..t])];
                if flips[t].is_tails() {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }

    /// Every leaf path with its probability, in lexicographic order.
    pub fn leaves(&self) -> Vec<(BinarySequence, f64)> {
        let mut probs = vec![1.0f64];
        for level in 0..self.depth {
            let start = (1usize << level) - 1;
            probs = probs
                .iter()
                .enumerate()
                .flat_map(|(offset, &mass)| {
                    let p = self.edge_probs[start + offset];
                    [mass * (1.0 - p), mass * p]
                })
                .collect();
        }
        probs
            .into_iter()
            .enumerate()
            .map(|(offset, p)| (path_at(self.depth, offset), p))
            .collect()
    }

    pub fn to_document(&self) -> TreeDocument {
        let nodes = (0..self.depth)
            .flat_map(|level| (0..1usize << level).map(move |o| (level, o)))
            .map(|(level, offset)| {
                let path = path_at(level, offset);
                let p = self.edge_probs[node_index(path.flips())];
                (path.to_bit_string(), p)
            })
            .collect();
        TreeDocument {
            depth: self.depth,
            root_context: self.root_context.clone(),
            nodes,
        }
    }

    pub fn from_document(doc: &TreeDocument) -> Result<Self, TreeError> {
        let mut edge_probs = vec![f64::NAN; (1usize << doc.depth) - 1];
        for (path, &p) in &doc.nodes {
            let path = BinarySequence::from_bit_str(path).map_err(|_| TreeError::BadConcept)?;
            if path.len() >= doc.depth || !(0.0..=1.0).contains(&p) {
                return Err(TreeError::BadProbability { context: path, value: p });
            }
            edge_probs[node_index(path.flips())] = p;
        }
        if let Some(i) = edge_probs.iter().position(|p| p.is_nan()) {
            let level = (usize::BITS - (i + 1).leading_zeros() - 1) as usize;
            return Err(TreeError::BadProbability {
                context: path_at(level, i + 1 - (1 << level)),
                value: f64::NAN,
            });
        }
        Ok(Self {
            depth: doc.depth,
            root_context: doc.root_context.clone(),
            edge_probs,
        })
    }

    /// Leaf table `path,probability,in_concept` for plotting.
    pub fn write_leaf_csv<W: Write>(&self, concept: Option<&Concept>, out: W) -> csv::Result<()> {
        let members = concept.map(|c| concept_paths(c, self.depth));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "probability", "in_concept"])?;
        for (path, p) in self.leaves() {
            let hit = members.as_ref().is_some_and(|m| m.contains(&path));
            w.write_record([path.to_bit_string(), p.to_string(), hit.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Serializable form: node path (`""` is the root) to P(Tails).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub depth: usize,
    pub root_context: BinarySequence,
    pub nodes: BTreeMap<String, f64>,
}

pub fn build_tree<P: NextTokenProvider + ?Sized>(
    provider: &P,
    context: &BinarySequence,
    depth: usize,
) -> Result<PredictionTree, TreeError> {
    build_tree_capped(provider, context, depth, DEFAULT_MAX_DEPTH)
}

/// Evaluate the provider once per internal node, level by level. Siblings
/// within a level run in parallel when the provider allows it.
pub fn build_tree_capped<P: NextTokenProvider + ?Sized>(
    provider: &P,
    context: &BinarySequence,
    depth: usize,
    max_depth: usize,
) -> Result<PredictionTree, TreeError> {
    if depth == 0 || depth > max_depth {
        return Err(TreeError::Depth {
            depth,
            max: max_depth,
        });
    }
    let total = (1usize << depth) - 1;
    let mut edge_probs = Vec::with_capacity(total);
    for level in 0..depth {
        let eval = |offset: usize| {
            let path = path_at(level, offset);
            let p = provider.prob_tails(&context.concat(&path));
            (path, p)
        };
        let results: Vec<_> = if provider.concurrent() {
            (0..1usize << level).into_par_iter().map(eval).collect()
        } else {
            (0..1usize << level).map(eval).collect()
        };
        let mut failure = None;
        let mut level_done = Vec::with_capacity(results.len());
        for (path, result) in results {
            match result {
                Ok(p) if (0.0..=1.0).contains(&p) => level_done.push((path, p)),
                Ok(p) => {
                    return Err(TreeError::BadProbability {
                        context: context.concat(&path),
                        value: p,
                    })
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    level_done.push((path, f64::NAN));
                }
            }
        }
        if let Some(source) = failure {
            let mut completed: BTreeMap<BinarySequence, f64> = (0..edge_probs.len())
                .map(|i: usize| {
                    let lvl = (usize::BITS - (i + 1).leading_zeros() - 1) as usize;
                    (path_at(lvl, i + 1 - (1 << lvl)), edge_probs[i])
                })
                .collect();
            completed.extend(level_done.into_iter().filter(|(_, p)| !p.is_nan()));
            return Err(TreeError::Partial {
                completed,
                total,
                source,
            });
        }
        edge_probs.extend(level_done.into_iter().map(|(_, p)| p));
    }
    Ok(PredictionTree {
        depth,
        root_context: context.clone(),
        edge_probs,
    })
}

/// A cyclic formal-language concept `(pattern)^n`, matched in any phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pattern: BinarySequence,
}

impl Concept {
    pub fn new(pattern: BinarySequence) -> Result<Self, TreeError> {
        if !is_primitive(&pattern) {
            return Err(TreeError::BadConcept);
        }
        Ok(Self { pattern })
    }

    pub fn pattern(&self) -> &BinarySequence {
        &self.pattern
    }

    /// Primitive patterns up to `max_len`, canonical rotation only.
    pub fn all_up_to(max_len: usize) -> Vec<Concept> {
        (1..=max_len)
            .flat_map(crate::bayes::primitive_necklaces)
            .map(|pattern| Concept { pattern })
            .collect()
    }
}

/// Length-`d` prefixes of the infinite repetition of the pattern, one per
/// starting phase.
pub fn concept_paths(concept: &Concept, d: usize) -> BTreeSet<BinarySequence> {
    let pattern = concept.pattern.flips();
    (0..pattern.len())
        .map(|r| (0..d).map(|t| pattern[(r + t) % pattern.len()]).collect())
        .collect()
}

pub fn concept_mass(tree: &PredictionTree, concept: &Concept) -> f64 {
    concept_paths(concept, tree.depth)
        .iter()
        .map(|path| tree.path_prob(path))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub x_len: usize,
    pub depth: usize,
    pub mass: f64,
}

#[derive(Debug, Error)]
#[error("learning curve stopped at n={n}, depth={depth}: {source}")]
pub struct CurveError {
    pub completed: Vec<CurvePoint>,
    pub n: usize,
    pub depth: usize,
    #[source]
    pub source: TreeError,
}

/// Concept mass on `pattern^n` contexts for each `n` and each depth.
/// Points are ordered by depth, then `n`.
pub fn learning_curve<P: NextTokenProvider + ?Sized>(
    provider: &P,
    concept: &Concept,
    n_range: &[usize],
    depths: &[usize],
) -> Result<Vec<CurvePoint>, CurveError> {
    let mut completed = Vec::new();
    if n_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CurveError {
            completed,
            n: n_range.first().copied().unwrap_or(0),
            depth: depths.first().copied().unwrap_or(0),
            source: TreeError::BadRange,
        });
    }
    for &depth in depths {
        for &n in n_range {
            let x = BinarySequence::repeat(concept.pattern(), n);
            match build_tree(provider, &x, depth) {
                Ok(tree) => completed.push(CurvePoint {
                    n,
                    x_len: x.len(),
                    depth,
                    mass: concept_mass(&tree, concept),
                }),
                Err(source) => {
                    return Err(CurveError {
                        completed,
                        n,
                        depth,
                        source,
                    })
                }
            }
        }
    }
    Ok(completed)
}
