//! HTTP API for live critiquing sessions.
//!
//! | method | path                          | body             |
//! |--------|-------------------------------|------------------|
//! | POST   | `/api/sessions`               | [`CreateSession`] |
//! | POST   | `/api/sessions/{id}/critique` | [`PostCritique`]  |
//! | GET    | `/api/sessions/{id}`          |                  |
//! | POST   | `/api/sessions/{id}/close`    | [`CloseSession`]  |
//! | GET    | `/health`                     |                  |
//!
//! Creation and critiques answer with a [`StepPayload`]. The trace endpoints
//! answer with the same rows the simulator writes to its JSON-lines files.
//!
//! A critique must name a fact from the latest payload: a fact of one of the
//! listed items, or of the declared target.

pub mod api;
mod error;
mod store;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use bcie_core::critique::{
    item_facts, write_jsonl, Conversation, CritiqueFact, Engine, FactKey, Mode, Outcome, SessionConfig, SessionTrace, Strategy,
    TraceLine, UserRef,
};
use bcie_core::dataset::Dataset;
use bcie_core::embed::EmbeddingTable;
use bcie_core::kg::{IdMap, Namespace};
use bcie_core::EntityId;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use api::*;
pub use error::ApiError;
use store::{Live, Sessions};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Defaults for new sessions; requests may override some fields.
    pub session: SessionConfig,
    pub default_strategy: Strategy,
    pub ttl: Duration,
    /// Where closed sessions are written as `<id>.jsonl`.
    pub traces_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            default_strategy: Strategy::Bcie,
            ttl: Duration::from_secs(30 * 60),
            traces_dir: None,
        }
    }
}

/// Shared, read-only model plus the session table.
pub struct AppState {
    engine: Engine,
    ids: IdMap,
    config: ServiceConfig,
    sessions: Sessions,
    next_ordinal: AtomicUsize,
}

impl AppState {
    pub fn new(dataset: Dataset, emb: EmbeddingTable, config: ServiceConfig) -> bcie_core::Result<Self> {
        config.session.validate()?;
        let Dataset { ids, kg, split } = dataset;
        let engine = Engine::new(kg, emb, &split)?;
        Ok(Self {
            engine,
            ids,
            sessions: Sessions::new(config.ttl),
            config,
            next_ordinal: AtomicUsize::new(0),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Retires idle sessions; returns how many.
    pub fn expire_idle(&self) -> usize {
        self.sessions.sweep()
    }

    fn resolve(&self, r: &EntityRef, kind: Namespace) -> Option<EntityId> {
        let id = match r {
            EntityRef::Id(id) => *id,
            EntityRef::Name(name) => self.ids.get(kind, name)?,
        };
        let kg = self.engine.kg();
        let ok = match kind {
            Namespace::User => kg.is_user(id),
            Namespace::Item => kg.is_item(id),
            Namespace::Entity => false,
        };
        ok.then_some(id)
    }

    fn chips(&self, facts: &[CritiqueFact]) -> Vec<FactChip> {
        facts
            .iter()
            .map(|f| FactChip {
                fact_id: f.key().to_string(),
                relation: self.ids.relation_name(f.relation).to_string(),
                anchor: f.anchor,
                anchor_name: self.ids.name(f.anchor).to_string(),
                side: f.item_side,
            })
            .collect()
    }

    /// Builds the payload for the session's current state and records which
    /// facts it presents.
    fn payload(&self, id: &str, live: &mut Live) -> StepPayload {
        let kg = self.engine.kg();
        let state = live.conv.state();
        let mut presented = BTreeMap::new();
        let items = state
            .last_ranking
            .iter()
            .take(state.config.k)
            .map(|s| {
                let facts = item_facts(kg, s.item);
                for f in &facts {
                    presented.entry(f.key()).or_insert(*f);
                }
                ItemCard {
                    id: s.item,
                    name: self.ids.name(s.item).to_string(),
                    score: s.score,
                    facts: self.chips(&facts),
                }
            })
            .collect();
        let target = live.conv.target().map(|t| {
            let facts = item_facts(kg, t);
            for f in &facts {
                presented.entry(f.key()).or_insert(*f);
            }
            TargetCard {
                id: t,
                name: self.ids.name(t).to_string(),
                rank: live.conv.target_rank().unwrap_or(0),
                facts: self.chips(&facts),
            }
        });
        let payload = StepPayload {
            session_id: id.to_string(),
            step: state.step,
            max_steps: state.config.max_steps,
            strategy: state.strategy,
            items,
            target,
            gt_rank: live.conv.target_rank(),
            gt_ranks: live.conv.records().iter().filter_map(|r| r.gt_rank).collect(),
        };
        live.presented = presented;
        payload
    }

    fn trace(&self, live: &Live, outcome: Outcome) -> SessionTrace {
        let state = live.conv.state();
        SessionTrace {
            session: live.ordinal,
            run: 0,
            user: state.user,
            gt_item: live.conv.target(),
            strategy: state.strategy,
            mode: Mode::Human,
            records: live.conv.records().to_vec(),
            outcome,
        }
    }

    pub fn create(&self, req: CreateSession) -> Result<StepPayload, ApiError> {
        let user = match (&req.user_id, req.cold_start) {
            (Some(_), true) => return Err(ApiError::bad_request("give either user_id or cold_start, not both")),
            (None, false) => return Err(ApiError::bad_request("user_id is required unless cold_start is set")),
            (None, true) => UserRef::ColdStart,
            (Some(r), false) => UserRef::Known(
                self.resolve(r, Namespace::User)
                    .ok_or_else(|| ApiError::not_found(format!("unknown user {r:?}")))?,
            ),
        };
        let target = match &req.target_item {
            None => None,
            Some(r) => Some(
                self.resolve(r, Namespace::Item)
                    .ok_or_else(|| ApiError::unprocessable("unknown_item", format!("unknown item {r:?}")))?,
            ),
        };
        let mut cfg = self.config.session.clone();
        if let Some(o) = &req.config {
            cfg.k = o.k.unwrap_or(cfg.k);
            cfg.max_steps = o.max_steps.unwrap_or(cfg.max_steps);
            cfg.alpha = o.alpha.unwrap_or(cfg.alpha);
            cfg.j0 = o.j0.unwrap_or(cfg.j0);
            cfg.j_m = o.j_m.unwrap_or(cfg.j_m);
        }
        let strategy = req.strategy.unwrap_or(self.config.default_strategy);
        let conv = Conversation::start(&self.engine, user, target, strategy, cfg)?;
        let now = Instant::now();
        let mut live = Live {
            conv,
            presented: BTreeMap::new(),
            ordinal: self.next_ordinal.fetch_add(1, Ordering::Relaxed),
            created_at: now,
            last_used: now,
            closed: false,
        };
        let mut payload = self.payload("", &mut live);
        let id = self.sessions.insert(live);
        payload.session_id = id.clone();
        tracing::info!(session = %id, ?user, ?target, %strategy, "session created");
        Ok(payload)
    }

    pub fn critique(&self, id: &str, req: PostCritique) -> Result<StepPayload, ApiError> {
        let key: FactKey = req
            .fact_id
            .parse()
            .map_err(|e: bcie_core::Error| ApiError::bad_request(e.to_string()))?;
        self.sessions.with(id, |live| {
            let state = live.conv.state();
            if state.critiqued.contains(&key) {
                return Err(ApiError::conflict("repeated_critique", format!("fact {key} was already critiqued")));
            }
            if !live.conv.can_critique() {
                return Err(ApiError::conflict(
                    "max_steps",
                    format!("session already used its {} critiquing steps", state.config.max_steps),
                ));
            }
            let fact = *live
                .presented
                .get(&key)
                .ok_or_else(|| ApiError::unprocessable("not_presented", format!("fact {key} was not presented")))?;
            live.conv.critique(&self.engine, &fact)?;
            tracing::debug!(session = id, fact = %key, step = live.conv.state().step, "critique applied");
            Ok(self.payload(id, live))
        })
    }

    pub fn get_trace(&self, id: &str) -> Result<Vec<TraceLine>, ApiError> {
        self.sessions.with(id, |live| Ok(self.trace(live, Outcome::Completed).lines(false)))
    }

    pub fn close(&self, id: &str, req: CloseSession) -> Result<Vec<TraceLine>, ApiError> {
        if !matches!(req.outcome, Outcome::Accepted | Outcome::Abandoned) {
            return Err(ApiError::unprocessable(
                "invalid_outcome",
                "outcome must be `accepted` or `abandoned`",
            ));
        }
        self.sessions.with(id, |live| {
            let trace = self.trace(live, req.outcome);
            if let Some(dir) = &self.config.traces_dir {
                persist(dir, id, &trace).map_err(|e| ApiError::internal(format!("could not persist trace: {e}")))?;
            }
            live.closed = true;
            tracing::info!(
                session = id,
                outcome = ?req.outcome,
                steps = live.conv.state().step,
                secs = live.created_at.elapsed().as_secs_f64(),
                "session closed"
            );
            Ok(trace.lines(true))
        })
    }

    pub fn health(&self) -> Health {
        let emb = self.engine.embeddings();
        Health {
            status: "ok".to_string(),
            model: ModelInfo {
                dim: emb.dim(),
                entities: emb.entity_count(),
                relations: emb.relation_count(),
            },
        }
    }
}

fn persist(dir: &Path, id: &str, trace: &SessionTrace) -> bcie_core::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_jsonl(std::slice::from_ref(trace), &mut buf)?;
    std::fs::write(dir.join(format!("{id}.jsonl")), buf)?;
    Ok(())
}

type Shared = State<Arc<AppState>>;

async fn health(State(app): Shared) -> Json<Health> {
    Json(app.health())
}

async fn create(State(app): Shared, body: Result<Json<CreateSession>, JsonRejection>) -> Result<Json<StepPayload>, ApiError> {
    let Json(req) = body?;
    app.create(req).map(Json)
}

async fn critique(
    State(app): Shared,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<PostCritique>, JsonRejection>,
) -> Result<Json<StepPayload>, ApiError> {
    let Json(req) = body?;
    app.critique(&id, req).map(Json)
}

async fn trace(State(app): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Vec<TraceLine>>, ApiError> {
    app.get_trace(&id).map(Json)
}

async fn close(
    State(app): Shared,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<CloseSession>, JsonRejection>,
) -> Result<Json<Vec<TraceLine>>, ApiError> {
    let Json(req) = body?;
    app.close(&id, req).map(Json)
}

/// The API routes, plus static files from `static_dir` for any other path
/// when given.
pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(trace))
        .route("/api/sessions/{id}/critique", post(critique))
        .route("/api/sessions/{id}/close", post(close))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
/// Idle sessions are swept once a minute.
pub async fn serve(
    listener: TcpListener,
    app: Arc<AppState>,
    static_dir: Option<&Path>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let app = app.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let n = app.expire_idle();
                if n > 0 {
                    tracing::info!(expired = n, "swept idle sessions");
                }
            }
        })
    };
    let out = axum::serve(listener, router(app, static_dir))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    out
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}
