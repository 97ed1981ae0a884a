//! REST API over precomputed explanation runs.
//!
//! The service loads datasets, model artifacts and explanation runs listed in
//! a [`ServiceConfig`] and never scores anything itself. Each session pins one
//! (dataset, model, run) triple and owns a filter stack; its id doubles as
//! the access token.

mod config;
mod error;
mod registry;
mod routes;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use flipdiag::aggregate::SessionState;

pub use config::{DatasetEntry, ModelEntry, RunEntry, ServiceConfig};
pub use error::ApiError;
pub use registry::{Prepared, Registry};
pub use routes::router;

pub struct Session {
    pub dataset: String,
    pub model: String,
    pub run: String,
    pub prepared: Arc<Prepared>,
    pub state: Mutex<SessionState>,
}

type TripleKey = (String, String, String);

pub struct Inner {
    pub registry: Registry,
    prepared: Mutex<HashMap<TripleKey, Arc<Prepared>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

/// Shared handle passed to every handler.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(registry: Registry) -> Self {
        AppState(Arc::new(Inner {
            registry,
            prepared: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ApiError> {
        Ok(Self::new(Registry::load(config)?))
    }

    pub fn registry(&self) -> &Registry {
        &self.0.registry
    }

    /// Joins the triple once and shares the result between sessions.
    fn prepare(&self, dataset: &str, model: &str, run: &str) -> Result<Arc<Prepared>, ApiError> {
        let key = (dataset.to_string(), model.to_string(), run.to_string());
        if let Some(p) = self.0.prepared.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(Arc::clone(p));
        }
        let prepared = Arc::new(self.0.registry.prepare(dataset, model, run)?);
        self.0
            .prepared
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(key)
            .or_insert_with(|| Arc::clone(&prepared));
        Ok(prepared)
    }

    pub fn create_session(&self, dataset: &str, model: &str, run: &str) -> Result<(String, Arc<Session>), ApiError> {
        let prepared = self.prepare(dataset, model, run)?;
        let session = Arc::new(Session {
            dataset: dataset.to_string(),
            model: model.to_string(),
            run: run.to_string(),
            state: Mutex::new(SessionState::new(&prepared.analysis)),
            prepared,
        });
        let token = format!("{:032x}", rand::random::<u128>());
        self.0
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(token.clone(), Arc::clone(&session));
        Ok((token, session))
    }

    pub fn session(&self, token: &str) -> Result<Arc<Session>, ApiError> {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(token)
            .cloned()
            .ok_or_else(ApiError::invalid_session)
    }

    pub fn close_session(&self, token: &str) -> Result<(), ApiError> {
        self.0
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .remove(token)
            .map(|_| ())
            .ok_or_else(ApiError::invalid_session)
    }
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
