//! HTTP service for the planner console.
//!
//! State is the set of ingested catalogues plus events persisted as one JSON
//! file each under `<data_dir>/events`. What-if requests never touch state.
//! Every JSON body carries `engine_version` and `seed`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use markdown_core::config::EngineConfig;
use markdown_core::demand::DemandModel;
use markdown_core::domain::{Assignment, Catalogue};
use markdown_core::io::read_catalogue_csv;
use markdown_core::validation::FeasibleRegion;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::whatif::{run_whatif, CatalogueSummary, WhatIfError, WhatIfRequest};
use crate::ENGINE_VERSION;

pub struct AppState {
    pub config: EngineConfig,
    pub model: Option<Arc<dyn DemandModel>>,
    pub region: Option<FeasibleRegion>,
    data_dir: PathBuf,
    catalogues: RwLock<BTreeMap<String, Arc<Catalogue>>>,
    next_event: Mutex<u64>,
}

impl AppState {
    /// Opens (creating if needed) the event store under `data_dir`.
    pub fn new(
        config: EngineConfig,
        data_dir: &Path,
        model: Option<Arc<dyn DemandModel>>,
        region: Option<FeasibleRegion>,
    ) -> std::io::Result<Self> {
        let events = data_dir.join("events");
        std::fs::create_dir_all(&events)?;
        let mut last = 0;
        for entry in std::fs::read_dir(&events)? {
            let name = entry?.file_name();
            if let Some(n) = name.to_str().and_then(parse_event_number) {
                last = last.max(n);
            }
        }
        Ok(AppState {
            config,
            model,
            region,
            data_dir: data_dir.to_path_buf(),
            catalogues: RwLock::new(BTreeMap::new()),
            next_event: Mutex::new(last + 1),
        })
    }

    /// Registers a catalogue and returns its id.
    pub fn add_catalogue(&self, catalogue: Catalogue) -> String {
        let mut map = self.catalogues.write().expect("catalogue lock");
        let id = format!("cat-{:06}", map.len() + 1);
        map.insert(id.clone(), Arc::new(catalogue));
        id
    }

    fn catalogue(&self, id: &str) -> Option<Arc<Catalogue>> {
        self.catalogues.read().expect("catalogue lock").get(id).cloned()
    }

    fn event_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("events").join(format!("{id}.json"))
    }
}

fn parse_event_number(file_name: &str) -> Option<u64> {
    file_name.strip_prefix("evt-")?.strip_suffix(".json")?.parse().ok()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/catalogues", post(post_catalogue))
        .route("/catalogues/{id}/summary", get(catalogue_summary))
        .route("/whatif", post(whatif))
        .route("/feasible-region", get(feasible_region))
        .route("/events", post(post_event))
        .route("/events/{id}", get(get_event))
        .with_state(state)
}

/// JSON response with the version and seed stamped in.
fn reply(status: StatusCode, seed: u64, body: Value) -> Response {
    let mut body = body;
    if let Value::Object(map) = &mut body {
        map.insert("engine_version".into(), json!(ENGINE_VERSION));
        map.insert("seed".into(), json!(seed));
    }
    let bytes = serde_json::to_vec_pretty(&body).expect("JSON value serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, seed: u64, message: impl Into<String>) -> Response {
    reply(status, seed, json!({ "error": { "status": status.as_u16(), "message": message.into() } }))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes, seed: u64) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, seed, format!("malformed request body: {e}")))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CatalogueUpload {
    Csv {
        csv: String,
        #[serde(default)]
        period: i64,
    },
    Document(Catalogue),
}

async fn post_catalogue(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let seed = state.config.seed;
    let upload: CatalogueUpload = match parse_body(&body, seed) {
        Ok(u) => u,
        Err(r) => return r,
    };
    let catalogue = match upload {
        CatalogueUpload::Csv { csv, period } => match read_catalogue_csv(csv.as_bytes(), period) {
            Ok(c) => c,
            Err(e) => return error(StatusCode::BAD_REQUEST, seed, e.to_string()),
        },
        CatalogueUpload::Document(c) => c,
    };
    let summary = CatalogueSummary::of(&catalogue);
    let id = state.add_catalogue(catalogue);
    reply(StatusCode::CREATED, seed, json!({ "id": id, "summary": summary }))
}

async fn catalogue_summary(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let seed = state.config.seed;
    match state.catalogue(&id) {
        Some(c) => reply(StatusCode::OK, seed, json!({ "id": id, "summary": CatalogueSummary::of(&c) })),
        None => error(StatusCode::NOT_FOUND, seed, format!("unknown catalogue `{id}`")),
    }
}

async fn whatif(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let base_seed = state.config.seed;
    let request: WhatIfRequest = match parse_body(&body, base_seed) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let seed = request.seed.unwrap_or(base_seed);
    let Some(catalogue) = state.catalogue(&request.catalogue_id) else {
        return error(StatusCode::NOT_FOUND, seed, format!("unknown catalogue `{}`", request.catalogue_id));
    };
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        run_whatif(&catalogue, &request, &worker.config, worker.model.as_deref(), worker.region.as_ref())
    })
    .await;
    match outcome {
        Ok(Ok(response)) => reply(StatusCode::OK, seed, serde_json::to_value(response).expect("response serializes")),
        Ok(Err(WhatIfError::Invalid(m))) => error(StatusCode::BAD_REQUEST, seed, m),
        Ok(Err(WhatIfError::NotConverged { message, detail })) => {
            let mut body = json!({ "error": { "status": 409, "message": message } });
            if let (Value::Object(b), Value::Object(d)) = (&mut body, detail) {
                b.extend(d);
            }
            reply(StatusCode::CONFLICT, seed, body)
        }
        Ok(Err(WhatIfError::Internal(m))) => error(StatusCode::INTERNAL_SERVER_ERROR, seed, m),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, seed, format!("what-if task failed: {e}")),
    }
}

async fn feasible_region(State(state): State<Arc<AppState>>) -> Response {
    let seed = state.config.seed;
    match &state.region {
        Some(r) => reply(StatusCode::OK, seed, json!({ "region": r, "table": r.to_table_csv() })),
        None => error(StatusCode::NOT_FOUND, seed, "no feasible region loaded"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRequest {
    pub catalogue_id: String,
    pub solution: Assignment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDocument {
    pub id: String,
    pub catalogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub stock_value: f64,
    pub stock_depth: f64,
    pub products: usize,
    pub solution: Assignment,
}

async fn post_event(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let base_seed = state.config.seed;
    let request: EventRequest = match parse_body(&body, base_seed) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let seed = request.seed.unwrap_or(base_seed);
    let Some(catalogue) = state.catalogue(&request.catalogue_id) else {
        return error(StatusCode::NOT_FOUND, seed, format!("unknown catalogue `{}`", request.catalogue_id));
    };
    if request.solution.is_empty() {
        return error(StatusCode::BAD_REQUEST, seed, "solution is empty");
    }
    let (stock_value, stock_depth) =
        match (request.solution.stock_value(&catalogue), request.solution.stock_depth(&catalogue)) {
            (Ok(v), Ok(d)) => (v, d),
            (Err(e), _) | (_, Err(e)) => return error(StatusCode::BAD_REQUEST, seed, e.to_string()),
        };

    // ids are handed out under the lock so each file is written exactly once
    let mut next = state.next_event.lock().expect("event lock");
    let id = format!("evt-{:06}", *next);
    let doc = EventDocument {
        id: id.clone(),
        catalogue_id: request.catalogue_id,
        label: request.label,
        stock_value,
        stock_depth,
        products: request.solution.len(),
        solution: request.solution,
    };
    let written = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(state.event_path(&id))
        .and_then(|mut f| f.write_all(&serde_json::to_vec_pretty(&doc).expect("event serializes")));
    if let Err(e) = written {
        return error(StatusCode::INTERNAL_SERVER_ERROR, seed, format!("could not persist event: {e}"));
    }
    *next += 1;
    drop(next);
    reply(StatusCode::CREATED, seed, json!({ "event": doc }))
}

async fn get_event(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let seed = state.config.seed;
    if parse_event_number(&format!("{id}.json")).is_none() {
        return error(StatusCode::NOT_FOUND, seed, format!("unknown event `{id}`"));
    }
    let text = match std::fs::read(state.event_path(&id)) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return error(StatusCode::NOT_FOUND, seed, format!("unknown event `{id}`"))
        }
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, seed, e.to_string()),
    };
    match serde_json::from_slice::<EventDocument>(&text) {
        Ok(doc) => reply(StatusCode::OK, seed, json!({ "event": doc })),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, seed, format!("corrupt event file: {e}")),
    }
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
