use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::load::{dedup_last_wins, RawInteraction};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// `1` iff `rating > threshold`.
pub fn binarize(rating: f64, threshold: f64) -> u8 {
    u8::from(rating > threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val or test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        if self.train <= 0.0 {
            return Err(Error::Config("train ratio must be positive".into()));
        }
        Ok(())
    }

    /// Parses `"0.6,0.2,0.2"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad ratio `{p}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::Config(format!("expected three ratios, got {}", parts.len())));
        }
        Self::new(parts[0], parts[1], parts[2])
    }

    /// Per-user split sizes for `n` positives. Train always gets at least one.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        if n == 0 {
            return (0, 0, 0);
        }
        let train = ((n as f64 * self.train).round() as usize).clamp(1, n);
        let val = ((n as f64 * self.val).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Row-sparse binary matrix: each row lists the ascending column indices set to 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseBinary {
    pub cols: usize,
    pub rows: Vec<Vec<usize>>,
}

impl SparseBinary {
    pub fn new(cols: usize, rows: Vec<Vec<usize>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        SparseBinary { cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rows[r].binary_search(&c).is_ok()
    }

    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.cols];
        for &c in &self.rows[r] {
            v[c] = 1.0;
        }
        v
    }

    /// Bitwise complement of row `r`.
    pub fn complement_row(&self, r: usize) -> Vec<f64> {
        let mut v = vec![1.0; self.cols];
        for &c in &self.rows[r] {
            v[c] = 0.0;
        }
        v
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub split: Split,
}

/// Settings echoed into the bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub threshold: f64,
    pub ratios: SplitRatios,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    pub positives: usize,
    pub dropped_users: usize,
    pub dropped_items: usize,
}

/// Binary interactions, keyphrase profiles and splits with dense indices.
///
/// The dislike matrix is never stored: it is the complement of the like
/// matrix, see [`InteractionData::kminus_row`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionData {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub keyphrases: Vec<String>,
    /// Positive interactions sorted by `(user, item)`.
    pub interactions: Vec<Interaction>,
    /// User-by-keyphrase likes drawn from train reviews.
    pub kplus: SparseBinary,
    /// Item-by-keyphrase profile drawn from train reviews.
    pub kitem: SparseBinary,
    /// Number of train reviews mentioning each keyphrase.
    pub keyphrase_freq: Vec<u64>,
    pub train: SparseBinary,
    pub val: SparseBinary,
    pub test: SparseBinary,
    pub config: BuildConfig,
    pub report: BuildReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
    pub keyphrases: usize,
}

struct UserReviews {
    id: String,
    // (item id, keyphrases)
    positives: Vec<(String, Vec<String>)>,
}

/// Binarizes, splits per user and indexes a review corpus.
pub fn build_dataset(
    records: &[RawInteraction],
    threshold: f64,
    ratios: SplitRatios,
    seed: u64,
) -> Result<InteractionData> {
    ratios.validate()?;
    if !threshold.is_finite() {
        return Err(Error::Config(format!("threshold {threshold} is not finite")));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset("no records".into()));
    }
    let records = dedup_last_wins(records.to_vec());

    let vocab: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.keyphrases.iter().cloned())
        .collect();
    let keyphrases: Vec<String> = vocab.into_iter().collect();
    let kp_index: HashMap<&str, usize> = keyphrases
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();

    let mut by_user: BTreeMap<&str, Vec<&RawInteraction>> = BTreeMap::new();
    let mut all_users: BTreeSet<&str> = BTreeSet::new();
    for r in &records {
        all_users.insert(&r.user);
        if binarize(r.rating, threshold) == 1 {
            by_user.entry(&r.user).or_default().push(r);
        }
    }
    let positives: usize = by_user.values().map(Vec::len).sum();

    // seeded per-user shuffle; the stream is keyed by the user's rank among
    // users with positives so later drops do not move anyone's split
    let mut assigned: Vec<(UserReviews, Vec<Split>)> = Vec::with_capacity(by_user.len());
    for (rank, (user, mut rows)) in by_user.into_iter().enumerate() {
        rows.sort_by(|a, b| a.item.cmp(&b.item));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        Rng::derive(seed, &[rank as u64]).shuffle(&mut order);
        let (n_train, n_val, _) = ratios.counts(rows.len());
        let mut splits = vec![Split::Test; rows.len()];
        for (pos, &idx) in order.iter().enumerate() {
            splits[idx] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        assigned.push((
            UserReviews {
                id: user.to_string(),
                positives: rows
                    .iter()
                    .map(|r| (r.item.clone(), r.keyphrases.clone()))
                    .collect(),
            },
            splits,
        ));
    }

    // users need a train positive; items are kept whenever a retained user
    // liked them in any split, so val/test-only items stay rankable
    let live_users: Vec<bool> = assigned
        .iter()
        .map(|(_, splits)| splits.contains(&Split::Train))
        .collect();
    let live_items: BTreeSet<String> = assigned
        .iter()
        .zip(&live_users)
        .filter(|(_, &live)| live)
        .flat_map(|((reviews, _), _)| reviews.positives.iter().map(|(item, _)| item.clone()))
        .collect();
    let retained_users = live_users.iter().filter(|&&l| l).count();
    if retained_users == 0 {
        return Err(Error::EmptyDataset(format!(
            "no user has a positive interaction above threshold {threshold}"
        )));
    }
    let dropped_users = all_users.len() - retained_users;
    if dropped_users > 0 {
        log::warn!("dropped {dropped_users} users without a train positive");
    }

    let item_ids: Vec<String> = live_items.iter().cloned().collect();
    let item_index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let all_items: BTreeSet<&str> = records.iter().map(|r| r.item.as_str()).collect();
    let dropped_items = all_items.len() - item_ids.len();

    let mut user_ids = Vec::with_capacity(retained_users);
    let mut interactions = Vec::new();
    let mut kplus_rows = Vec::with_capacity(retained_users);
    let mut kitem_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); item_ids.len()];
    let mut keyphrase_freq = vec![0u64; keyphrases.len()];
    for (u, (reviews, splits)) in assigned.iter().enumerate() {
        if !live_users[u] {
            continue;
        }
        let user = user_ids.len();
        user_ids.push(reviews.id.clone());
        let mut liked = BTreeSet::new();
        let mut rows: Vec<Interaction> = Vec::new();
        for ((item, kps), &split) in reviews.positives.iter().zip(splits) {
            let Some(&item) = item_index.get(item.as_str()) else {
                continue;
            };
            rows.push(Interaction { user, item, split });
            if split == Split::Train {
                for k in kps {
                    let k = kp_index[k.as_str()];
                    liked.insert(k);
                    kitem_rows[item].insert(k);
                    keyphrase_freq[k] += 1;
                }
            }
        }
        rows.sort_by_key(|r| r.item);
        interactions.extend(rows);
        kplus_rows.push(liked.into_iter().collect());
    }

    let split_matrix = |which: Split| {
        let mut rows = vec![Vec::new(); user_ids.len()];
        for it in interactions.iter().filter(|it| it.split == which) {
            rows[it.user].push(it.item);
        }
        SparseBinary::new(item_ids.len(), rows)
    };
    let train = split_matrix(Split::Train);
    let val = split_matrix(Split::Val);
    let test = split_matrix(Split::Test);

    Ok(InteractionData {
        kplus: SparseBinary::new(keyphrases.len(), kplus_rows),
        kitem: SparseBinary::new(
            keyphrases.len(),
            kitem_rows.into_iter().map(|s| s.into_iter().collect()).collect(),
        ),
        user_ids,
        item_ids,
        keyphrases,
        interactions,
        keyphrase_freq,
        train,
        val,
        test,
        config: BuildConfig {
            threshold,
            ratios,
            seed,
        },
        report: BuildReport {
            records: records.len(),
            positives,
            dropped_users,
            dropped_items,
        },
    })
}

impl InteractionData {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_keyphrases(&self) -> usize {
        self.keyphrases.len()
    }

    pub fn split(&self, which: Split) -> &SparseBinary {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Train interaction row `r_u`.
    pub fn r_row(&self, user: usize) -> Vec<f64> {
        self.train.dense_row(user)
    }

    pub fn kplus_row(&self, user: usize) -> Vec<f64> {
        self.kplus.dense_row(user)
    }

    /// Dislikes: every keyphrase the user never mentioned.
    pub fn kminus_row(&self, user: usize) -> Vec<f64> {
        self.kplus.complement_row(user)
    }

    /// True if the user interacted with the item in any split.
    pub fn has_interaction(&self, user: usize, item: usize) -> bool {
        self.train.contains(user, item) || self.val.contains(user, item) || self.test.contains(user, item)
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn keyphrase_index(&self, name: &str) -> Option<usize> {
        let name = super::load::normalize_keyphrase(name);
        self.keyphrases.binary_search(&name).ok()
    }

    pub fn item_has_keyphrase(&self, item: usize, keyphrase: usize) -> bool {
        self.kitem.contains(item, keyphrase)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let data: InteractionData = serde_json::from_str(&text)?;
        data.check()?;
        Ok(data)
    }

    fn check(&self) -> Result<()> {
        let (u, i, k) = (self.n_users(), self.n_items(), self.n_keyphrases());
        let ok = self.kplus.n_rows() == u
            && self.kplus.cols == k
            && self.kitem.n_rows() == i
            && self.kitem.cols == k
            && self.keyphrase_freq.len() == k
            && [&self.train, &self.val, &self.test]
                .iter()
                .all(|m| m.n_rows() == u && m.cols == i);
        if ok {
            Ok(())
        } else {
            Err(Error::dim("dataset bundle has inconsistent shapes"))
        }
    }
}

pub fn dataset_stats(data: &InteractionData) -> DatasetStats {
    let users = data.n_users();
    let items = data.n_items();
    let interactions = data.interactions.len();
    let cells = (users * items) as f64;
    DatasetStats {
        users,
        items,
        interactions,
        sparsity: if cells > 0.0 {
            1.0 - interactions as f64 / cells
        } else {
            1.0
        },
        keyphrases: data.n_keyphrases(),
    }
}
