use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{explanation_metrics, rank_metrics_excluding, MetricReport};
use crate::dataio::{InteractionData, Split};
use crate::error::{Error, Result};
use crate::model::{predict, ModelParams};

/// Averaged recommendation and explanation metrics over the users that have
/// at least one positive in the evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub k: usize,
    pub users: usize,
    pub recommendation: MetricReport,
    pub explanation: Option<MetricReport>,
}

/// Items hidden from the ranking when scoring `split`: train items for
/// validation, train and validation items for test.
pub fn excluded_items(data: &InteractionData, user: usize, split: Split) -> Vec<usize> {
    let mut out = data.train.row(user).to_vec();
    if split == Split::Test {
        out.extend_from_slice(data.val.row(user));
    }
    out
}

fn users_with(data: &InteractionData, split: Split) -> Vec<usize> {
    let m = data.split(split);
    (0..data.n_users()).filter(|&u| !m.row(u).is_empty()).collect()
}

pub fn evaluate_model(params: &ModelParams, data: &InteractionData, split: Split, k: usize) -> Result<EvalReport> {
    if split == Split::Train {
        return Err(Error::Config("evaluate on val or test".into()));
    }
    let users = users_with(data, split);
    if users.is_empty() {
        return Err(Error::EmptyDataset(format!("no {split:?} interactions")));
    }
    let per_user: Vec<(MetricReport, Option<MetricReport>)> = users
        .par_iter()
        .map(|&u| {
            let pred = predict(params, data, u)?;
            let rec = rank_metrics_excluding(
                &pred.scores,
                data.split(split).row(u),
                k,
                &excluded_items(data, u, split),
            )?;
            let kp = data.kplus.row(u);
            let exp = if kp.is_empty() {
                None
            } else {
                Some(explanation_metrics(&pred.explanation, kp, k)?)
            };
            Ok((rec, exp))
        })
        .collect::<Result<_>>()?;
    let rec: Vec<MetricReport> = per_user.iter().map(|(r, _)| r.clone()).collect();
    let exp: Vec<MetricReport> = per_user.iter().filter_map(|(_, e)| e.clone()).collect();
    Ok(EvalReport {
        split,
        k,
        users: users.len(),
        recommendation: MetricReport::mean(&rec).expect("non-empty"),
        explanation: MetricReport::mean(&exp),
    })
}

/// Train-split interaction counts per item.
pub fn popularity_scores(data: &InteractionData) -> Vec<f64> {
    let mut counts = vec![0.0; data.n_items()];
    for u in 0..data.n_users() {
        for &i in data.train.row(u) {
            counts[i] += 1.0;
        }
    }
    counts
}

/// Recommendation metrics of the most-popular baseline.
pub fn evaluate_popularity(data: &InteractionData, split: Split, k: usize) -> Result<MetricReport> {
    let users = users_with(data, split);
    if users.is_empty() {
        return Err(Error::EmptyDataset(format!("no {split:?} interactions")));
    }
    let scores = popularity_scores(data);
    let reports = users
        .iter()
        .map(|&u| rank_metrics_excluding(&scores, data.split(split).row(u), k, &excluded_items(data, u, split)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::mean(&reports).expect("non-empty"))
}
