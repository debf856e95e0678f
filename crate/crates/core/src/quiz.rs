//! HTTP quiz service: instruction and question items, a durable judgment
//! log, and study reports over the collected judgments.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::analytics::{build_report, effective_judgments, Judgment, StudyReport};
use crate::error::{Error, Result};
use crate::pairs::{select_exemplars, Dataset, Direction, VariablePair};
use crate::raster::export_points;
use crate::repr::MethodResult;

pub const QUESTIONS_PER_CLASS: usize = 4;
pub const INSTRUCTIONS_PER_CLASS: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct InstructionItem {
    pub item_id: u64,
    pub label: Direction,
    pub caption: &'static str,
    pub points: Vec<(f64, f64)>,
}

/// A question as sent to annotators: no label field by construction.
#[derive(Debug, Clone, Serialize)]
pub struct QuestionItem {
    pub item_id: u64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuizSession {
    pub session_id: String,
    pub set_index: usize,
    pub instructions: Vec<InstructionItem>,
    pub questions: Vec<QuestionItem>,
}

/// Labeled items behind the quiz: nine instruction exemplars and the
/// question pool partitioned into disjoint task sets of 4/4/4 items.
#[derive(Debug, Clone)]
pub struct QuizData {
    pairs: BTreeMap<u64, VariablePair>,
    instructions: Vec<u64>,
    sets: Vec<Vec<u64>>,
    machine: Vec<MethodResult>,
}

fn set_id(index: usize) -> String {
    format!("set-{index}")
}

impl QuizData {
    /// `exemplars` become the instruction items; without them three pairs
    /// per class are drawn from `questions` (seeded by `partition_seed`).
    pub fn new(
        questions: &Dataset,
        exemplars: Option<&Dataset>,
        machine: Vec<MethodResult>,
        partition_seed: u64,
    ) -> Result<Self> {
        let instruction_set = match exemplars {
            Some(e) => e.clone(),
            None => select_exemplars(questions, INSTRUCTIONS_PER_CLASS, partition_seed)?,
        };
        if instruction_set.label_histogram() != [INSTRUCTIONS_PER_CLASS; 3] {
            return Err(Error::invalid(format!(
                "instruction items must be 3 per class, got {:?}",
                instruction_set.label_histogram()
            )));
        }
        let mut instructions: Vec<u64> = Vec::new();
        for d in Direction::ALL {
            instructions.extend(
                instruction_set
                    .pairs()
                    .iter()
                    .filter(|p| p.label() == Some(d))
                    .map(|p| p.id()),
            );
        }
        let taken: HashSet<u64> = instructions.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(partition_seed);
        let mut by_class: Vec<Vec<u64>> = Direction::ALL
            .iter()
            .map(|&d| {
                let mut ids: Vec<u64> = questions
                    .pairs()
                    .iter()
                    .filter(|p| p.label() == Some(d) && !taken.contains(&p.id()))
                    .map(|p| p.id())
                    .collect();
                ids.shuffle(&mut rng);
                ids
            })
            .collect();
        let n_sets = by_class
            .iter()
            .map(|c| c.len() / QUESTIONS_PER_CLASS)
            .min()
            .unwrap_or(0);
        if n_sets == 0 {
            return Err(Error::invalid(format!(
                "need at least {QUESTIONS_PER_CLASS} labeled question pairs per class outside the instruction items"
            )));
        }
        let sets = (0..n_sets)
            .map(|k| {
                let mut set: Vec<u64> = by_class
                    .iter_mut()
                    .flat_map(|c| c[k * QUESTIONS_PER_CLASS..(k + 1) * QUESTIONS_PER_CLASS].to_vec())
                    .collect();
                set.shuffle(&mut rng);
                set
            })
            .collect();

        let mut pairs: BTreeMap<u64, VariablePair> = BTreeMap::new();
        for p in questions.pairs().iter().chain(instruction_set.pairs()) {
            if let Some(prev) = pairs.insert(p.id(), p.clone()) {
                if &prev != p {
                    return Err(Error::invalid(format!("pair id {} names two different pairs", p.id())));
                }
            }
        }
        let data = QuizData {
            pairs,
            instructions,
            sets,
            machine: Vec::new(),
        };
        Ok(data.with_machine_results(machine))
    }

    /// Keeps the machine results that cover every question item.
    fn with_machine_results(mut self, machine: Vec<MethodResult>) -> Self {
        let needed: Vec<u64> = self.sets.iter().flatten().copied().collect();
        for m in machine {
            if needed.iter().all(|id| m.item_ids.contains(id)) {
                self.machine.push(m);
            } else {
                log::warn!(
                    "method {} does not cover the question items; left out of reports",
                    m.method
                );
            }
        }
        self
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    pub fn set_items(&self) -> BTreeMap<String, Vec<u64>> {
        self.sets
            .iter()
            .enumerate()
            .map(|(k, s)| (set_id(k), s.clone()))
            .collect()
    }

    pub fn machine(&self) -> &[MethodResult] {
        &self.machine
    }

    /// The session for task set `seed mod set_count`; equal seeds give
    /// identical sessions.
    pub fn session(&self, seed: u64) -> QuizSession {
        let index = (seed % self.sets.len() as u64) as usize;
        let instructions = self
            .instructions
            .iter()
            .map(|id| {
                let p = &self.pairs[id];
                let label = p.label().expect("instruction items are labeled");
                InstructionItem {
                    item_id: *id,
                    label,
                    caption: label.caption(),
                    points: export_points(p),
                }
            })
            .collect();
        let questions = self.sets[index]
            .iter()
            .map(|id| QuestionItem {
                item_id: *id,
                points: export_points(&self.pairs[id]),
            })
            .collect();
        QuizSession {
            session_id: set_id(index),
            set_index: index,
            instructions,
            questions,
        }
    }

    fn set_index(&self, session_id: &str) -> Option<usize> {
        session_id
            .strip_prefix("set-")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k < self.sets.len() && set_id(k) == session_id)
    }

    pub fn points(&self, item_id: u64) -> Option<Vec<(f64, f64)>> {
        self.pairs.get(&item_id).map(export_points)
    }

    pub fn truth(&self) -> BTreeMap<u64, Direction> {
        self.pairs
            .iter()
            .filter_map(|(id, p)| p.label().map(|l| (*id, l)))
            .collect()
    }
}

/// Append-only JSONL judgment log, replayed on open.
/// Parses a JSONL judgment log without opening it for writing.
pub fn read_log(path: &Path) -> Result<Vec<Judgment>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let j: Judgment = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        entries.push(j);
    }
    Ok(entries)
}

#[derive(Debug)]
pub struct JudgmentLog {
    file: File,
    entries: Vec<Judgment>,
}

impl JudgmentLog {
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() { read_log(path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::file(path, e))?;
        let (_, superseded) = effective_judgments(&entries);
        log::info!(
            "replayed {} judgments from {} ({} superseded)",
            entries.len(),
            path.display(),
            superseded.len()
        );
        Ok(JudgmentLog { file, entries })
    }

    /// Writes and syncs one record, then makes it visible to readers.
    /// Returns whether it supersedes an earlier judgment.
    pub fn append(&mut self, j: Judgment) -> Result<bool> {
        let mut line = serde_json::to_string(&j)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        let superseded = self
            .entries
            .iter()
            .any(|e| e.annotator_id == j.annotator_id && e.item_id == j.item_id);
        if superseded {
            log::info!(
                "annotator {} resubmitted item {}; the latest judgment wins",
                j.annotator_id,
                j.item_id
            );
        }
        self.entries.push(j);
        Ok(superseded)
    }

    pub fn entries(&self) -> &[Judgment] {
        &self.entries
    }
}

pub struct AppState {
    data: QuizData,
    log: Mutex<JudgmentLog>,
}

impl AppState {
    pub fn new(data: QuizData, log: JudgmentLog) -> Self {
        AppState {
            data,
            log: Mutex::new(log),
        }
    }

    fn judgments(&self) -> Vec<Judgment> {
        self.log.lock().expect("judgment log lock").entries().to_vec()
    }

    /// Report over every judgment logged so far, optionally limited to sets.
    pub fn report(&self, sets: Option<&[String]>) -> Result<StudyReport> {
        let mut set_items = self.data.set_items();
        if let Some(keep) = sets {
            set_items.retain(|k, _| keep.contains(k));
        }
        let judgments: Vec<Judgment> = self
            .judgments()
            .into_iter()
            .filter(|j| set_items.contains_key(&j.session_id))
            .collect();
        build_report(&self.data.truth(), &set_items, &judgments, self.data.machine())
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn internal(e: Error) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn parse_body(body: &str) -> Result<Value, ApiError> {
    if body.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    let v: Value = serde_json::from_str(body).map_err(|e| bad_request(format!("malformed JSON: {e}")))?;
    if !v.is_object() {
        return Err(bad_request("request body must be a JSON object"));
    }
    Ok(v)
}

async fn create_session(State(state): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let v = parse_body(&body)?;
    let seed = match v.get("seed") {
        None | Some(Value::Null) => 0,
        Some(s) => s
            .as_u64()
            .ok_or_else(|| bad_request("seed must be a non-negative integer"))?,
    };
    Ok((StatusCode::CREATED, Json(state.data.session(seed))).into_response())
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let index = state
        .data
        .set_index(&id)
        .ok_or_else(|| not_found(format!("unknown session {id}")))?;
    let session = state.data.session(index as u64);
    let mut body = serde_json::to_value(&session).map_err(|e| internal(e.into()))?;
    if let Some(annotator) = q.get("annotator_id") {
        let items: HashSet<u64> = session.questions.iter().map(|q| q.item_id).collect();
        let answered: std::collections::BTreeSet<u64> = state
            .judgments()
            .iter()
            .filter(|j| &j.annotator_id == annotator && j.session_id == id && items.contains(&j.item_id))
            .map(|j| j.item_id)
            .collect();
        let phase = match answered.len() {
            0 => "created",
            n if n == items.len() => "complete",
            _ => "in_progress",
        };
        body["state"] = json!(phase);
        body["answered"] = json!(answered);
    }
    Ok(Json(body).into_response())
}

async fn post_judgment(State(state): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let v = parse_body(&body)?;
    let field = |name: &str| v.get(name).ok_or_else(|| bad_request(format!("missing field {name}")));
    let session_id = field("session_id")?
        .as_str()
        .ok_or_else(|| bad_request("session_id must be a string"))?
        .to_string();
    let annotator_id = field("annotator_id")?
        .as_str()
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| bad_request("annotator_id must be a non-empty string"))?
        .to_string();
    let item_id = field("item_id")?
        .as_u64()
        .ok_or_else(|| bad_request("item_id must be a non-negative integer"))?;
    let choice = field("choice")?
        .as_i64()
        .and_then(Direction::from_value)
        .ok_or_else(|| bad_request("choice must be one of the integers 1, -1, 0"))?;
    let index = state
        .data
        .set_index(&session_id)
        .ok_or_else(|| not_found(format!("unknown session {session_id}")))?;
    if !state.data.sets[index].contains(&item_id) {
        return Err(not_found(format!("item {item_id} is not a question of {session_id}")));
    }
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let j = Judgment {
        timestamp,
        session_id,
        annotator_id,
        item_id,
        choice,
    };
    let superseded = state
        .log
        .lock()
        .expect("judgment log lock")
        .append(j.clone())
        .map_err(internal)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "judgment": j, "superseded": superseded })),
    )
        .into_response())
}

async fn results(
    State(state): State<Arc<AppState>>,
    Query(q): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let sets: Option<Vec<String>> = q.get("sets").map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    });
    let report = state.report(sets.as_deref()).map_err(internal)?;
    let text = report.to_text();
    Ok(Json(json!({ "report": report, "text": text })).into_response())
}

async fn item_points(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let item_id: u64 = id.parse().map_err(|_| bad_request(format!("bad item id {id:?}")))?;
    let points = state
        .data
        .points(item_id)
        .ok_or_else(|| not_found(format!("unknown item {item_id}")))?;
    Ok(Json(json!({ "item_id": item_id, "points": points })).into_response())
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/judgments", post(post_judgment))
        .route("/api/results", get(results))
        .route("/api/items/{id}/points", get(item_points))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub log_path: PathBuf,
    pub static_dir: Option<PathBuf>,
}

/// Binds and serves until Ctrl-C.
pub async fn serve(data: QuizData, config: ServeConfig) -> Result<()> {
    let log = JudgmentLog::open(&config.log_path)?;
    let state = Arc::new(AppState::new(data, log));
    let app = router(state, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("quiz service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::generate_synthetic;

    #[test]
    fn sets_are_balanced_and_disjoint() {
        let d = generate_synthetic(90, 4).unwrap();
        let data = QuizData::new(&d, None, Vec::new(), 1).unwrap();
        assert_eq!(data.set_count(), (30 - 3) / 4);
        let mut seen = HashSet::new();
        for s in data.set_items().values() {
            assert_eq!(s.len(), 12);
            let labels: Vec<Direction> = s.iter().map(|id| data.pairs[id].label().unwrap()).collect();
            for c in Direction::ALL {
                assert_eq!(labels.iter().filter(|&&l| l == c).count(), 4);
            }
            for id in s {
                assert!(seen.insert(*id));
                assert!(!data.instructions.contains(id));
            }
        }
        assert_eq!(
            data.session(3).session_id,
            data.session(3 + data.set_count() as u64).session_id
        );
    }

    #[test]
    fn too_few_pairs_per_class() {
        let d = generate_synthetic(15, 4).unwrap();
        assert!(QuizData::new(&d, None, Vec::new(), 0).is_err());
    }
}
