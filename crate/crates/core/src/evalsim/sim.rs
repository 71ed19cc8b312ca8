//! Multi-step critiquing simulation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::metrics::rank_subset;
use crate::critique::{encode_critique, uac_blend, BlendParams, CritiqueMode, CritiqueSession, Polarity};
use crate::dataio::InteractionData;
use crate::error::{Error, Result};
use crate::model::{Modality, ModelParams, ModelVariant};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Most frequent keyphrase in the training corpus.
    Pop,
    /// Largest gap between the top-N items' keyphrase frequency and the
    /// target's keyphrases.
    Diff,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Pop => "pop",
            Strategy::Diff => "diff",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pop" => Ok(Strategy::Pop),
            "diff" => Ok(Strategy::Diff),
            other => Err(Error::Config(format!("unknown strategy `{other}` (pop or diff)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub polarity: Polarity,
    pub strategy: Strategy,
    pub top_n: usize,
    pub max_turns: usize,
    pub n_candidate_negatives: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            polarity: Polarity::Negative,
            strategy: Strategy::Pop,
            top_n: 10,
            max_turns: 10,
            n_candidate_negatives: 299,
            seed: 0,
            confidence: 0.95,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be >= 1".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Keyphrases a simulated user may critique for `target`: the target's
/// keyphrases they have not mentioned (positive), or keyphrases the target
/// lacks (negative).
pub fn valid_critiques(data: &InteractionData, polarity: Polarity, user: usize, target: usize) -> Vec<usize> {
    let target_kps = data.kitem.row(target);
    match polarity {
        Polarity::Positive => target_kps
            .iter()
            .copied()
            .filter(|&k| !data.kplus.contains(user, k))
            .collect(),
        Polarity::Negative => (0..data.n_keyphrases())
            .filter(|k| target_kps.binary_search(k).is_err())
            .collect(),
    }
}

/// Inputs to a critique choice at one turn.
#[derive(Clone, Copy, Debug)]
pub struct SelectionState<'a> {
    pub data: &'a InteractionData,
    pub user: usize,
    pub target: usize,
    pub critiqued: &'a [usize],
    /// Current top-N recommendation.
    pub top_items: &'a [usize],
}

/// Diff score of keyphrase `k`: `|share of top items carrying k − [k ∈ target]|`.
pub fn diff_score(data: &InteractionData, k: usize, top_items: &[usize], target: usize) -> f64 {
    if top_items.is_empty() {
        return 0.0;
    }
    let count = top_items.iter().filter(|&&i| data.item_has_keyphrase(i, k)).count();
    let present = if data.item_has_keyphrase(target, k) { 1.0 } else { 0.0 };
    (count as f64 / top_items.len() as f64 - present).abs()
}

/// Next keyphrase to critique, or `None` when no valid keyphrase is left.
/// Ties go to the lowest index.
pub fn select_critique(strategy: Strategy, polarity: Polarity, state: &SelectionState<'_>) -> Option<usize> {
    let valid = valid_critiques(state.data, polarity, state.user, state.target);
    let score = |k: usize| -> f64 {
        match strategy {
            Strategy::Pop => state.data.keyphrase_freq[k] as f64,
            Strategy::Diff => diff_score(state.data, k, state.top_items, state.target),
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for k in valid.into_iter().filter(|k| !state.critiqued.contains(k)) {
        let s = score(k);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Source of item scores that reacts to critiques.
pub trait Critiquer: Sync {
    fn name(&self) -> String;

    fn variant(&self) -> Option<ModelVariant> {
        None
    }

    fn start(&self, user: usize) -> Result<Box<dyn CritiqueState + '_>>;
}

/// One user's evolving scores.
pub trait CritiqueState {
    fn scores(&self) -> &[f64];

    fn critique(&mut self, keyphrase: usize, polarity: Polarity) -> Result<()>;
}

/// The trained (or randomly initialised) GRU blender.
pub struct BlendCritiquer<'a> {
    pub label: String,
    pub model: &'a ModelParams,
    pub data: &'a InteractionData,
    pub blender: &'a BlendParams,
}

struct BlendState<'a> {
    model: &'a ModelParams,
    blender: &'a BlendParams,
    session: CritiqueSession,
}

impl CritiqueState for BlendState<'_> {
    fn scores(&self) -> &[f64] {
        &self.session.scores
    }

    fn critique(&mut self, keyphrase: usize, polarity: Polarity) -> Result<()> {
        self.session.blend(self.model, self.blender, keyphrase, polarity)?;
        Ok(())
    }
}

impl Critiquer for BlendCritiquer<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn variant(&self) -> Option<ModelVariant> {
        Some(self.model.variant)
    }

    fn start(&self, user: usize) -> Result<Box<dyn CritiqueState + '_>> {
        let z_u = self.model.user_posterior(self.data, user)?.mu;
        let session = CritiqueSession::new(self.model, z_u, self.data.train.row(user).to_vec(), None, usize::MAX)?;
        Ok(Box::new(BlendState {
            model: self.model,
            blender: self.blender,
            session,
        }))
    }
}

/// Uniform average of the user latent and all critique latents.
pub struct UacCritiquer<'a> {
    pub model: &'a ModelParams,
    pub data: &'a InteractionData,
    pub mode: CritiqueMode,
}

struct UacState<'a> {
    model: &'a ModelParams,
    mode: CritiqueMode,
    z_u: Vec<f64>,
    z_cs: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl CritiqueState for UacState<'_> {
    fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn critique(&mut self, keyphrase: usize, polarity: Polarity) -> Result<()> {
        self.z_cs.push(encode_critique(self.model, keyphrase, polarity, self.mode)?);
        let z = uac_blend(&self.z_u, &self.z_cs)?;
        self.scores = self.model.decode(Modality::R, &z)?;
        Ok(())
    }
}

impl Critiquer for UacCritiquer<'_> {
    fn name(&self) -> String {
        "uac".into()
    }

    fn variant(&self) -> Option<ModelVariant> {
        Some(self.model.variant)
    }

    fn start(&self, user: usize) -> Result<Box<dyn CritiqueState + '_>> {
        let z_u = self.model.user_posterior(self.data, user)?.mu;
        let scores = self.model.decode(Modality::R, &z_u)?;
        Ok(Box::new(UacState {
            model: self.model,
            mode: self.mode,
            z_u,
            z_cs: Vec::new(),
            scores,
        }))
    }
}

/// Ignores critiques entirely.
pub struct IdentityCritiquer<'a> {
    pub model: &'a ModelParams,
    pub data: &'a InteractionData,
}

struct FixedScores(Vec<f64>);

impl CritiqueState for FixedScores {
    fn scores(&self) -> &[f64] {
        &self.0
    }

    fn critique(&mut self, _: usize, _: Polarity) -> Result<()> {
        Ok(())
    }
}

impl Critiquer for IdentityCritiquer<'_> {
    fn name(&self) -> String {
        "identity".into()
    }

    fn variant(&self) -> Option<ModelVariant> {
        Some(self.model.variant)
    }

    fn start(&self, user: usize) -> Result<Box<dyn CritiqueState + '_>> {
        let z_u = self.model.user_posterior(self.data, user)?.mu;
        Ok(Box::new(FixedScores(self.model.decode(Modality::R, &z_u)?)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user: usize,
    pub item: usize,
    /// Critiques used; `max_turns` for sessions that ran out of budget.
    pub turns: usize,
    pub success: bool,
    pub critiques: Vec<usize>,
    /// Target rank within the candidate pool after each turn, from turn 0.
    pub target_ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNSummary {
    pub top_n: usize,
    pub n_sessions: usize,
    pub success_rate: f64,
    pub success_ci: f64,
    pub avg_length: f64,
    pub length_ci: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub model: String,
    pub variant: Option<ModelVariant>,
    pub config: SimConfig,
    pub n_sessions: usize,
    pub success_rate: f64,
    /// Half-width of the normal-approximation interval.
    pub success_ci: f64,
    pub avg_length: f64,
    pub length_ci: f64,
    pub per_top_n: Vec<TopNSummary>,
    pub sessions: Vec<SessionRecord>,
}

/// Mean and normal-approximation half-width `z·s/√n` (sample deviation).
pub fn mean_ci(samples: &[f64], confidence: f64) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    (mean, z * var.sqrt() / (n as f64).sqrt())
}

fn summarize(top_n: usize, sessions: &[SessionRecord], confidence: f64) -> TopNSummary {
    let succ: Vec<f64> = sessions.iter().map(|s| if s.success { 1.0 } else { 0.0 }).collect();
    let lens: Vec<f64> = sessions.iter().map(|s| s.turns as f64).collect();
    let (success_rate, success_ci) = mean_ci(&succ, confidence);
    let (avg_length, length_ci) = mean_ci(&lens, confidence);
    TopNSummary {
        top_n,
        n_sessions: sessions.len(),
        success_rate,
        success_ci,
        avg_length,
        length_ci,
    }
}

/// Target item plus up to `n` items the user never interacted with, drawn
/// from the pair's own stream. Ascending; smaller than `n + 1` when the user
/// has seen too much of the catalogue.
pub fn candidate_pool(data: &InteractionData, user: usize, target: usize, n: usize, seed: u64) -> Vec<usize> {
    let unseen: Vec<usize> = (0..data.n_items())
        .filter(|&i| !data.has_interaction(user, i))
        .collect();
    let mut rng = Rng::derive(seed, &[user as u64, target as u64]);
    let mut pool: Vec<usize> = rng
        .sample_indices(unseen.len(), n)
        .into_iter()
        .map(|i| unseen[i])
        .collect();
    pool.push(target);
    pool.sort_unstable();
    pool
}

fn rank_of(ranking: &[usize], item: usize) -> usize {
    ranking.iter().position(|&i| i == item).expect("target is in the pool")
}

/// Runs one session against `critiquer`.
pub fn run_session(
    critiquer: &dyn Critiquer,
    data: &InteractionData,
    config: &SimConfig,
    user: usize,
    target: usize,
) -> Result<SessionRecord> {
    let pool = candidate_pool(data, user, target, config.n_candidate_negatives, config.seed);
    let mut state = critiquer.start(user)?;
    let mut critiqued = Vec::new();
    let mut ranking = rank_subset(state.scores(), &pool);
    let mut ranks = vec![rank_of(&ranking, target)];
    let record = |turns, success, critiqued: Vec<usize>, ranks| SessionRecord {
        user,
        item: target,
        turns,
        success,
        critiques: critiqued,
        target_ranks: ranks,
    };
    if ranks[0] < config.top_n {
        return Ok(record(0, true, critiqued, ranks));
    }
    for turn in 1..=config.max_turns {
        let top: Vec<usize> = ranking.iter().take(config.top_n).copied().collect();
        let sel = SelectionState {
            data,
            user,
            target,
            critiqued: &critiqued,
            top_items: &top,
        };
        let Some(k) = select_critique(config.strategy, config.polarity, &sel) else {
            return Ok(record(turn - 1, false, critiqued, ranks));
        };
        critiqued.push(k);
        state.critique(k, config.polarity)?;
        ranking = rank_subset(state.scores(), &pool);
        let r = rank_of(&ranking, target);
        ranks.push(r);
        if r < config.top_n {
            return Ok(record(turn, true, critiqued, ranks));
        }
    }
    Ok(record(config.max_turns, false, critiqued, ranks))
}

/// Every `(user, item)` test pair, one session each, in parallel. The result
/// does not depend on the number of worker threads.
pub fn simulate(critiquer: &dyn Critiquer, data: &InteractionData, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let pairs: Vec<(usize, usize)> = (0..data.n_users())
        .flat_map(|u| data.test.row(u).iter().map(move |&i| (u, i)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no test interactions to simulate".into()));
    }
    let short = pairs
        .iter()
        .filter(|&&(u, _)| {
            let seen = (0..data.n_items()).filter(|&i| data.has_interaction(u, i)).count();
            data.n_items() - seen < config.n_candidate_negatives
        })
        .count();
    if short > 0 {
        log::warn!(
            "{short} of {} sessions get fewer than {} negatives: their users have too few unseen items",
            pairs.len(),
            config.n_candidate_negatives
        );
    }
    let sessions = pairs
        .par_iter()
        .map(|&(u, i)| run_session(critiquer, data, config, u, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(config.top_n, &sessions, config.confidence);
    Ok(SimResult {
        model: critiquer.name(),
        variant: critiquer.variant(),
        config: config.clone(),
        n_sessions: summary.n_sessions,
        success_rate: summary.success_rate,
        success_ci: summary.success_ci,
        avg_length: summary.avg_length,
        length_ci: summary.length_ci,
        per_top_n: vec![summary],
        sessions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub variant: Option<ModelVariant>,
    pub polarity: Polarity,
    pub strategy: Strategy,
    pub top_n: usize,
    pub runs: usize,
    pub n_sessions: usize,
    pub success_rate: f64,
    pub success_ci: f64,
    pub avg_length: f64,
    pub length_ci: f64,
}

/// Aligns runs into one row per (model, polarity, strategy, top-N). Runs
/// that differ only in seed are pooled into a single row.
pub fn compare_runs(results: &[SimResult]) -> Result<Vec<ComparisonRow>> {
    let first = results
        .first()
        .ok_or_else(|| Error::Config("compare_runs needs at least one result".into()))?;
    let reference = (
        first.config.max_turns,
        first.config.n_candidate_negatives,
        first.config.confidence,
    );
    type Key = (String, Polarity, Strategy, usize);
    let mut groups: BTreeMap<Key, Vec<&SimResult>> = BTreeMap::new();
    for r in results {
        let c = &r.config;
        if (c.max_turns, c.n_candidate_negatives, c.confidence) != reference {
            return Err(Error::Config(format!(
                "run `{}` uses max_turns {} / negatives {} / confidence {}, expected {:?}",
                r.model, c.max_turns, c.n_candidate_negatives, c.confidence, reference
            )));
        }
        groups
            .entry((r.model.clone(), c.polarity, c.strategy, c.top_n))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((model, polarity, strategy, top_n), runs) in groups {
        let variants: Vec<_> = runs.iter().map(|r| r.variant).collect();
        if variants.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config(format!("runs of `{model}` disagree on the variant")));
        }
        let sessions: Vec<SessionRecord> = runs.iter().flat_map(|r| r.sessions.iter().cloned()).collect();
        let s = summarize(top_n, &sessions, reference.2);
        rows.push(ComparisonRow {
            model,
            variant: variants[0],
            polarity,
            strategy,
            top_n,
            runs: runs.len(),
            n_sessions: s.n_sessions,
            success_rate: s.success_rate,
            success_ci: s.success_ci,
            avg_length: s.avg_length,
            length_ci: s.length_ci,
        });
    }
    Ok(rows)
}

/// CSV with columns model, variant, polarity, strategy, top_n,
/// success_rate, success_ci, avg_length, length_ci.
pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record([
        "model",
        "variant",
        "polarity",
        "strategy",
        "top_n",
        "success_rate",
        "success_ci",
        "avg_length",
        "length_ci",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.variant.map(|v| v.name().to_string()).unwrap_or_default(),
            r.polarity.to_string(),
            r.strategy.to_string(),
            r.top_n.to_string(),
            format!("{:.6}", r.success_rate),
            format!("{:.6}", r.success_ci),
            format!("{:.6}", r.avg_length),
            format!("{:.6}", r.length_ci),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
