use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use mmsvae_core::checkpoint::file_hash;
use mmsvae_core::critique::{BlendParams, CritiqueSession, Polarity};
use mmsvae_core::dataio::InteractionData;
use mmsvae_core::evalsim::rank_desc;
use mmsvae_core::model::{Modality, ModelParams};
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::{ApiError, ServiceError};

/// Frozen model, its dataset and optional blender, shared by all sessions.
pub struct Loaded {
    pub model: ModelParams,
    pub data: InteractionData,
    pub blender: Option<BlendParams>,
    pub model_hash: String,
    pub blender_hash: Option<String>,
}

impl Loaded {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Option<Self>, ServiceError> {
        let (Some(model_path), Some(data_path)) = (&cfg.model_path, &cfg.data_path) else {
            return Ok(None);
        };
        let data = InteractionData::load(data_path)?;
        let model = ModelParams::load(model_path, None)?;
        if model.dims.n_items != data.n_items() || model.dims.n_keyphrases != data.n_keyphrases() {
            return Err(ServiceError::Config(format!(
                "model expects {} items / {} keyphrases, dataset has {} / {}",
                model.dims.n_items,
                model.dims.n_keyphrases,
                data.n_items(),
                data.n_keyphrases()
            )));
        }
        let (blender, blender_hash) = match &cfg.blender_path {
            Some(p) => (Some(BlendParams::load(p, &model)?), Some(file_hash(p)?)),
            None => (None, None),
        };
        Ok(Some(Loaded {
            model_hash: file_hash(model_path)?,
            model,
            data,
            blender,
            blender_hash,
        }))
    }
}

/// Who a session recommends for.
#[derive(Clone, Debug)]
pub enum Profile {
    User(usize),
    Cold(Vec<usize>),
}

pub struct SessionEntry {
    pub profile: Profile,
    pub session: CritiqueSession,
    pub created_unix: u64,
    pub last_active: Instant,
}

type SessionMap = HashMap<String, Arc<Mutex<SessionEntry>>>;

pub struct Inner {
    pub config: ServiceConfig,
    pub loaded: Option<Loaded>,
    sessions: Mutex<SessionMap>,
}

/// Cheaply cloneable handle given to every request.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicking handler must not take the whole service down
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemScore {
    pub rank: usize,
    pub index: usize,
    pub id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyphraseScore {
    pub index: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyphraseRef {
    pub index: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserRef {
    pub index: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub turn: usize,
    pub keyphrase: KeyphraseRef,
    pub polarity: Polarity,
    /// Top-N item indices right after this critique.
    pub top_items: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub user: Option<UserRef>,
    pub cold_keyphrases: Option<Vec<KeyphraseRef>>,
    pub turn: usize,
    pub max_turns: usize,
    pub created_at: u64,
    pub recommendations: Vec<ItemScore>,
    pub explanation: Vec<KeyphraseScore>,
    pub history: Vec<HistoryEntry>,
}

impl AppState {
    pub fn new(config: ServiceConfig, loaded: Option<Loaded>) -> Self {
        AppState(Arc::new(Inner {
            config,
            loaded,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let loaded = Loaded::from_config(&config)?;
        Ok(Self::new(config, loaded))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn loaded(&self) -> Result<&Loaded, ApiError> {
        self.0
            .loaded
            .as_ref()
            .ok_or_else(|| ApiError::unavailable("no model loaded"))
    }

    pub fn keyphrase(&self, name: &str) -> Result<usize, ApiError> {
        let l = self.loaded()?;
        l.data
            .keyphrase_index(name)
            .ok_or_else(|| ApiError::unprocessable(format!("unknown keyphrase `{name}`")))
    }

    pub fn create(&self, profile: Profile) -> Result<SessionView, ApiError> {
        let l = self.loaded()?;
        let (z_u, seen) = match &profile {
            Profile::User(u) => (l.model.user_posterior(&l.data, *u)?.mu, l.data.train.row(*u).to_vec()),
            Profile::Cold(kps) => {
                let mut row = vec![0.0; l.data.n_keyphrases()];
                for &k in kps {
                    row[k] = 1.0;
                }
                (l.model.cold_posterior(&row)?.mu, Vec::new())
            }
        };
        let session = CritiqueSession::new(&l.model, z_u, seen, None, self.config().max_turns)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let entry = SessionEntry {
            profile,
            session,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            last_active: Instant::now(),
        };
        let view = self.view(&id, &entry)?;
        lock(&self.0.sessions).insert(id, Arc::new(Mutex::new(entry)));
        Ok(view)
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        lock(&self.0.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    /// Runs `f` with exclusive access to one session; requests to the same
    /// session serialize here while other sessions proceed.
    pub fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Loaded, &mut SessionEntry) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let l = self.loaded()?;
        let entry = self.entry(id)?;
        let mut guard = lock(&entry);
        guard.last_active = Instant::now();
        f(l, &mut guard)
    }

    pub fn critique(&self, id: &str, keyphrase: usize, polarity: Polarity) -> Result<SessionView, ApiError> {
        self.with_session(id, |l, e| {
            let blender = l
                .blender
                .as_ref()
                .ok_or_else(|| ApiError::unavailable("no blender loaded"))?;
            e.session.blend(&l.model, blender, keyphrase, polarity)?;
            self.view(id, e)
        })
    }

    pub fn get(&self, id: &str) -> Result<SessionView, ApiError> {
        self.with_session(id, |_, e| self.view(id, e))
    }

    pub fn reset(&self, id: &str) -> Result<SessionView, ApiError> {
        self.with_session(id, |_, e| {
            e.session.reset();
            self.view(id, e)
        })
    }

    pub fn session_count(&self) -> usize {
        lock(&self.0.sessions).len()
    }

    /// Drops sessions idle for longer than the configured timeout as of
    /// `now`; returns how many went.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let timeout = self.config().idle_timeout;
        let mut map = lock(&self.0.sessions);
        let before = map.len();
        map.retain(|_, e| now.saturating_duration_since(lock(e).last_active) <= timeout);
        before - map.len()
    }

    pub fn eviction_period(&self) -> Duration {
        (self.config().idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60))
    }

    fn view(&self, id: &str, e: &SessionEntry) -> Result<SessionView, ApiError> {
        let l = self.loaded()?;
        let cfg = self.config();
        let s = &e.session;
        let kp_ref = |k: usize| KeyphraseRef {
            index: k,
            name: l.data.keyphrases[k].clone(),
        };
        let recommendations = s
            .top_n(cfg.top_n)
            .into_iter()
            .enumerate()
            .map(|(rank, i)| ItemScore {
                rank: rank + 1,
                index: i,
                id: l.data.item_ids[i].clone(),
                score: round6(s.scores[i]),
            })
            .collect();
        // explanation follows the latent the current scores came from
        let latent = if s.history.is_empty() { &s.z_u } else { &s.hidden };
        let kp_scores = l.model.decode(Modality::KPlus, latent)?;
        let explanation = rank_desc(&kp_scores)
            .into_iter()
            .take(cfg.explain_k)
            .map(|k| KeyphraseScore {
                index: k,
                name: l.data.keyphrases[k].clone(),
                score: round6(kp_scores[k]),
            })
            .collect();
        let history = s
            .history
            .iter()
            .map(|t| HistoryEntry {
                turn: t.critique.step,
                keyphrase: kp_ref(t.critique.keyphrase),
                polarity: t.critique.polarity,
                top_items: {
                    let pool: Vec<usize> = (0..t.scores.len())
                        .filter(|i| s.seen.binary_search(i).is_err())
                        .collect();
                    let mut r = mmsvae_core::evalsim::rank_subset(&t.scores, &pool);
                    r.truncate(cfg.top_n);
                    r
                },
            })
            .collect();
        let (user, cold_keyphrases) = match &e.profile {
            Profile::User(u) => (
                Some(UserRef {
                    index: *u,
                    id: l.data.user_ids[*u].clone(),
                }),
                None,
            ),
            Profile::Cold(kps) => (None, Some(kps.iter().map(|&k| kp_ref(k)).collect())),
        };
        Ok(SessionView {
            session_id: id.to_string(),
            user,
            cold_keyphrases,
            turn: s.turn(),
            max_turns: s.max_turns,
            created_at: e.created_unix,
            recommendations,
            explanation,
            history,
        })
    }
}
