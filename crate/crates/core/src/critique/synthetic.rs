//! Synthetic critiquing datasets built from validation interactions.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::Polarity;
use crate::dataio::{InteractionData, Split};
use crate::error::{Error, Result};
use crate::evalsim::rank_desc;
use crate::model::ModelParams;
use crate::numerics::Rng;

/// One (user, target, critique) example with the items the critique should
/// move (`affected`) and those it should not (`unaffected`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueExample {
    pub user: usize,
    pub item: usize,
    pub keyphrase: usize,
    pub polarity: Polarity,
    pub affected: Vec<usize>,
    pub unaffected: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Max items kept in each of the affected / unaffected sets.
    pub cap_affected: usize,
    pub cap_unaffected: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            cap_affected: 100,
            cap_unaffected: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub pairs: usize,
    /// Targets whose keyphrases cover the whole vocabulary.
    pub skipped_negative: usize,
    /// Targets with no keyphrase outside the user's predicted explanation.
    pub skipped_positive: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasets {
    pub plus: Vec<CritiqueExample>,
    pub minus: Vec<CritiqueExample>,
    pub report: SkipReport,
}

/// Top-`e` explanation keyphrases of every user, ascending by index.
pub fn predicted_keyphrases(model: &ModelParams, data: &InteractionData, e: usize) -> Result<Vec<Vec<usize>>> {
    (0..data.n_users())
        .map(|u| {
            let post = model.user_posterior(data, u)?;
            let (_, kp) = model.scores_at(&post.mu)?;
            let mut top = rank_desc(&kp);
            top.truncate(e);
            top.sort_unstable();
            Ok(top)
        })
        .collect()
}

fn capped(items: Vec<usize>, cap: usize, rng: &mut Rng) -> Vec<usize> {
    if items.len() <= cap {
        return items;
    }
    rng.sample_indices(items.len(), cap)
        .into_iter()
        .map(|i| items[i])
        .collect()
}

/// Items carrying `keyphrase` and the rest, before capping.
pub fn partition_items(data: &InteractionData, keyphrase: usize) -> (Vec<usize>, Vec<usize>) {
    (0..data.n_items()).partition(|&i| data.item_has_keyphrase(i, keyphrase))
}

/// For every validation pair `(u, i)`: a negative critique drawn from the
/// keyphrases the target lacks, then a positive one drawn from the target's
/// keyphrases outside `k_hat[u]`. Each pair draws from its own stream
/// `Rng::derive(seed, [u, i])`, in the order: c⁻, its affected cap, its
/// unaffected cap, c⁺, its affected cap, its unaffected cap.
pub fn build_synthetic_datasets(
    data: &InteractionData,
    k_hat: &[Vec<usize>],
    config: &SyntheticConfig,
) -> Result<SyntheticDatasets> {
    build_synthetic_datasets_for(data, Split::Val, k_hat, config)
}

/// As [`build_synthetic_datasets`] over the pairs of another split, e.g.
/// test pairs for held-out checks.
pub fn build_synthetic_datasets_for(
    data: &InteractionData,
    split: Split,
    k_hat: &[Vec<usize>],
    config: &SyntheticConfig,
) -> Result<SyntheticDatasets> {
    let pairs = data.split(split);
    if pairs.nnz() == 0 {
        return Err(Error::EmptyDataset(format!("no {split:?} interactions")));
    }
    if k_hat.len() != data.n_users() {
        return Err(Error::dim(format!(
            "{} predicted keyphrase sets for {} users",
            k_hat.len(),
            data.n_users()
        )));
    }
    let n_kp = data.n_keyphrases();
    let mut out = SyntheticDatasets::default();
    for u in 0..data.n_users() {
        for &i in pairs.row(u) {
            out.report.pairs += 1;
            let mut rng = Rng::derive(config.seed, &[u as u64, i as u64]);
            let target_kps = data.kitem.row(i);

            let neg_pool: Vec<usize> = (0..n_kp).filter(|k| target_kps.binary_search(k).is_err()).collect();
            if neg_pool.is_empty() {
                out.report.skipped_negative += 1;
            } else {
                let c = neg_pool[rng.below(neg_pool.len())];
                let (aff, unaff) = partition_items(data, c);
                out.minus.push(CritiqueExample {
                    user: u,
                    item: i,
                    keyphrase: c,
                    polarity: Polarity::Negative,
                    affected: capped(aff, config.cap_affected, &mut rng),
                    unaffected: capped(unaff, config.cap_unaffected, &mut rng),
                });
            }

            let pos_pool: Vec<usize> = target_kps
                .iter()
                .copied()
                .filter(|k| !k_hat[u].contains(k))
                .collect();
            if pos_pool.is_empty() {
                out.report.skipped_positive += 1;
            } else {
                let c = pos_pool[rng.below(pos_pool.len())];
                let (aff, unaff) = partition_items(data, c);
                out.plus.push(CritiqueExample {
                    user: u,
                    item: i,
                    keyphrase: c,
                    polarity: Polarity::Positive,
                    affected: capped(aff, config.cap_affected, &mut rng),
                    unaffected: capped(unaff, config.cap_unaffected, &mut rng),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    user: usize,
    item: usize,
    keyphrase: usize,
    polarity: String,
    affected: Vec<usize>,
    unaffected: Vec<usize>,
}

pub fn write_examples_jsonl(path: impl AsRef<Path>, examples: &[CritiqueExample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = ExampleLine {
            user: ex.user,
            item: ex.item,
            keyphrase: ex.keyphrase,
            polarity: ex.polarity.symbol().to_string(),
            affected: ex.affected.clone(),
            unaffected: ex.unaffected.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_examples_jsonl(path: impl AsRef<Path>) -> Result<Vec<CritiqueExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        let polarity = parsed.polarity.parse().map_err(|e: Error| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(CritiqueExample {
            user: parsed.user,
            item: parsed.item,
            keyphrase: parsed.keyphrase,
            polarity,
            affected: parsed.affected,
            unaffected: parsed.unaffected,
        });
    }
    Ok(out)
}
