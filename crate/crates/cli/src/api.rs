//! HTTP API over an interactive world.
//!
//! One thread owns the [`World`]. Handlers never touch it directly: they send
//! closures through a queue and await the reply, so reads see a consistent
//! snapshot and mutations interleave with clock ticks one at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use railchain::consensus::node::TxStatus;
use railchain::sim::{ApiError, JourneyRequest, RunMetrics, World};
use railchain::{canonical, ElementId, NodeId, Tick, TrainId, Transaction, WalletAddress};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{oneshot, watch};

/// Longest an `/events` request may wait for new records.
const MAX_WAIT: Duration = Duration::from_secs(30);

/// How the interactive clock advances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    /// Ticks only on `POST /control/step`.
    Manual,
    /// Ticks at this many per second, in addition to manual steps.
    Rate(f64),
}

type Job = Box<dyn FnOnce(&mut World) + Send>;

/// Handle to the simulation thread. Cheap to clone.
#[derive(Clone)]
pub struct Sim {
    jobs: mpsc::Sender<Job>,
    log_len: watch::Receiver<usize>,
}

impl Sim {
    pub fn spawn(world: World, clock: Clock) -> Sim {
        let (jobs, rx) = mpsc::channel::<Job>();
        let (len_tx, log_len) = watch::channel(world.log().len());
        thread::Builder::new()
            .name("railchain-sim".into())
            .spawn(move || sim_loop(world, rx, clock, len_tx))
            .expect("spawn simulation thread");
        Sim { jobs, log_len }
    }

    async fn call<T: Send + 'static>(&self, f: impl FnOnce(&mut World) -> T + Send + 'static) -> Result<T, Failure> {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |w| {
            let _ = tx.send(f(w));
        });
        self.jobs.send(job).map_err(|_| Failure::stopped())?;
        rx.await.map_err(|_| Failure::stopped())
    }

    /// Runs `f` against a shared borrow; read endpoints go through here only.
    async fn read<T: Send + 'static>(&self, f: impl FnOnce(&World) -> T + Send + 'static) -> Result<T, Failure> {
        self.call(move |w| f(w)).await
    }
}

fn sim_loop(mut world: World, jobs: mpsc::Receiver<Job>, clock: Clock, log_len: watch::Sender<usize>) {
    let period = match clock {
        Clock::Rate(hz) if hz > 0.0 => Some(Duration::from_secs_f64(1.0 / hz)),
        _ => None,
    };
    let mut next_tick = period.map(|p| Instant::now() + p);
    loop {
        let job = match next_tick {
            None => match jobs.recv() {
                Ok(j) => Some(j),
                Err(_) => return,
            },
            Some(at) => match jobs.recv_timeout(at.saturating_duration_since(Instant::now())) {
                Ok(j) => Some(j),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            },
        };
        match job {
            Some(j) => j(&mut world),
            None => {
                world.advance();
                next_tick = next_tick.zip(period).map(|(t, p)| t + p);
            }
        }
        let len = world.log().len();
        log_len.send_if_modified(|old| std::mem::replace(old, len) != len);
    }
}

/// An error response: `{"error": kind, "message": text}` plus an optional
/// reject `reason` for refused transactions.
#[derive(Debug)]
pub struct Failure {
    status: StatusCode,
    body: Value,
}

impl Failure {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Failure {
            status,
            body: json!({"error": error, "message": message.into()}),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Failure::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn stopped() -> Self {
        Failure::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "Stopped",
            "simulation thread has stopped",
        )
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        let (status, kind) = match &e {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "BadRequest"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "Conflict"),
        };
        Failure::new(status, kind, e.to_string())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        canonical_json(self.status, &self.body)
    }
}

/// Every body goes out in canonical form: sorted keys, no whitespace.
fn canonical_json(status: StatusCode, v: &Value) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        canonical::value_to_string(v),
    )
        .into_response()
}

struct Canonical(Value);

impl IntoResponse for Canonical {
    fn into_response(self) -> Response {
        canonical_json(StatusCode::OK, &self.0)
    }
}

type ApiResult = Result<Canonical, Failure>;

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("API types serialize")
}

fn parse_node(node: Option<String>) -> Result<Option<NodeId>, Failure> {
    node.map(|n| NodeId::new(n).map_err(|e| Failure::bad_request(e.to_string())))
        .transpose()
}

pub fn router(sim: Sim) -> Router {
    Router::new()
        .route("/topology", get(topology))
        .route("/state", get(state))
        .route("/chain", get(chain))
        .route("/wallets/:addr", get(wallet))
        .route("/tx", post(submit_tx))
        .route("/journeys", post(request_journey))
        .route("/journeys/:id/book", post(book_journey))
        .route("/journeys/:id/cancel", post(cancel_journey))
        .route("/events", get(events))
        .route("/metrics", get(metrics))
        .route("/control/step", post(step))
        .route("/control/partition", post(partition))
        .route("/control/heal", post(heal))
        .with_state(sim)
}

async fn topology(State(sim): State<Sim>) -> ApiResult {
    Ok(Canonical(sim.read(|w| w.topology().to_file_value()).await?))
}

#[derive(Debug, Deserialize)]
struct NodeQuery {
    node: Option<String>,
}

async fn state(State(sim): State<Sim>, Query(q): Query<NodeQuery>) -> ApiResult {
    let node = parse_node(q.node)?;
    let v = sim
        .read(move |w| {
            let (id, head, height, state) = w.head_state(node.as_ref())?;
            let heads: BTreeMap<String, Value> = w
                .nodes()
                .iter()
                .map(|n| {
                    (
                        n.id().to_string(),
                        json!({"head": n.head_hash().to_hex(), "height": n.head_height()}),
                    )
                })
                .collect();
            Ok::<_, ApiError>(json!({
                "node": id,
                "tick": w.now(),
                "head": head.to_hex(),
                "height": height,
                "state": to_value(&*state),
                "heads": heads,
                "partitioned": w.partition_active(),
            }))
        })
        .await??;
    Ok(Canonical(v))
}

#[derive(Debug, Deserialize)]
struct ChainQuery {
    node: Option<String>,
    #[serde(default)]
    from: u64,
}

async fn chain(State(sim): State<Sim>, Query(q): Query<ChainQuery>) -> ApiResult {
    let node = parse_node(q.node)?;
    let from = q.from;
    let v = sim
        .read(move |w| {
            let blocks = w.chain_from(node.as_ref(), from)?;
            let id = w.head_state(node.as_ref())?.0;
            Ok::<_, ApiError>(json!({"node": id, "from": from, "blocks": to_value(&blocks)}))
        })
        .await??;
    Ok(Canonical(v))
}

async fn wallet(State(sim): State<Sim>, Path(addr): Path<String>, Query(q): Query<NodeQuery>) -> ApiResult {
    let node = parse_node(q.node)?;
    let addr = WalletAddress::new(addr).map_err(|e| Failure::bad_request(e.to_string()))?;
    let v = sim
        .read(move |w| {
            let (balance, nonce) = w.wallet_balance(node.as_ref(), &addr)?;
            Ok::<_, ApiError>(json!({"wallet": addr, "balance": balance, "nonce": nonce}))
        })
        .await??;
    Ok(Canonical(v))
}

async fn submit_tx(State(sim): State<Sim>, Query(q): Query<NodeQuery>, body: String) -> Result<Response, Failure> {
    let node = parse_node(q.node)?;
    let tx: Transaction = serde_json::from_str(&body).map_err(|e| Failure::bad_request(e.to_string()))?;
    let txid = tx.txid.to_hex();
    let status = sim.call(move |w| w.submit_tx(node.as_ref(), tx)).await??;
    Ok(match status {
        TxStatus::Pending => canonical_json(StatusCode::ACCEPTED, &json!({"txid": txid, "status": "pending"})),
        TxStatus::Committed { block } => canonical_json(
            StatusCode::OK,
            &json!({"txid": txid, "status": "committed", "block": block}),
        ),
        TxStatus::Rejected(fault) => {
            let mut f = Failure::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "Rejected",
                format!("transaction rejected: {fault}"),
            );
            f.body["reason"] = json!(fault.as_str());
            f.body["txid"] = json!(txid);
            f.into_response()
        }
    })
}

fn default_k() -> usize {
    3
}

fn default_speed() -> Tick {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JourneyBody {
    origin: String,
    destination: String,
    depart: Tick,
    #[serde(default = "default_k")]
    k: usize,
    train: Option<String>,
    #[serde(default = "default_speed")]
    ticks_per_element: Tick,
}

async fn request_journey(State(sim): State<Sim>, Json(b): Json<JourneyBody>) -> ApiResult {
    let bad = |e: railchain::types::IdError| Failure::bad_request(e.to_string());
    let req = JourneyRequest {
        origin: ElementId::new(b.origin).map_err(bad)?,
        destination: ElementId::new(b.destination).map_err(bad)?,
        depart: b.depart,
        k: b.k,
        train: b.train.map(TrainId::new).transpose().map_err(bad)?,
        ticks_per_element: b.ticks_per_element,
    };
    let j = sim.call(move |w| w.request_journey(req)).await??;
    Ok(Canonical(to_value(&j)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BookBody {
    candidate: usize,
    node: Option<String>,
}

async fn book_journey(State(sim): State<Sim>, Path(id): Path<u64>, Json(b): Json<BookBody>) -> ApiResult {
    let node = parse_node(b.node)?;
    let j = sim
        .call(move |w| w.book_journey(id, b.candidate, node.as_ref()))
        .await??;
    Ok(Canonical(json!({"booking_id": j.id, "journey": to_value(&j)})))
}

async fn cancel_journey(State(sim): State<Sim>, Path(id): Path<u64>) -> ApiResult {
    let cancelled = sim.call(move |w| w.cancel_journey(id)).await??;
    Ok(Canonical(json!({"journey": id, "cancelled": cancelled})))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: usize,
    /// Long-poll: wait up to this long when nothing newer exists yet.
    #[serde(default)]
    wait_ms: u64,
}

async fn events(State(sim): State<Sim>, Query(q): Query<EventsQuery>) -> ApiResult {
    let mut seen = sim.log_len.clone();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms).min(MAX_WAIT);
    loop {
        seen.borrow_and_update();
        let since = q.since;
        let (now, len, records) = sim
            .read(move |w| {
                let log = w.log();
                let from = since.min(log.len());
                (w.now(), log.len(), to_value(&log.since(from)))
            })
            .await?;
        let empty = records.as_array().is_some_and(|r| r.is_empty());
        if !empty || tokio::time::Instant::now() >= deadline {
            return Ok(Canonical(
                json!({"since": since, "next": len, "tick": now, "events": records}),
            ));
        }
        if tokio::time::timeout_at(deadline, seen.changed()).await.is_err() {
            continue;
        }
    }
}

async fn metrics(State(sim): State<Sim>) -> ApiResult {
    Ok(Canonical(sim.read(|w| to_value(&RunMetrics::from_log(w.log()))).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    ticks: Option<u64>,
}

/// Upper bound on ticks per step request, so one call cannot stall the queue.
const MAX_STEP: u64 = 10_000;

async fn step(State(sim): State<Sim>, body: Option<Json<StepBody>>) -> ApiResult {
    let ticks = body.and_then(|Json(b)| b.ticks).unwrap_or(1);
    if ticks == 0 || ticks > MAX_STEP {
        return Err(Failure::bad_request(format!("ticks must be in 1..={MAX_STEP}")));
    }
    let now = sim
        .call(move |w| {
            w.step(ticks);
            w.now()
        })
        .await?;
    Ok(Canonical(json!({"tick": now})))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionBody {
    groups: Vec<Vec<String>>,
}

async fn partition(State(sim): State<Sim>, Json(b): Json<PartitionBody>) -> ApiResult {
    let groups = b
        .groups
        .into_iter()
        .map(|g| g.into_iter().map(NodeId::new).collect::<Result<BTreeSet<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::bad_request(e.to_string()))?;
    let shown = to_value(&groups);
    let now = sim
        .call(move |w| {
            w.partition(groups)?;
            Ok::<_, ApiError>(w.now())
        })
        .await??;
    Ok(Canonical(json!({"tick": now, "groups": shown})))
}

async fn heal(State(sim): State<Sim>) -> ApiResult {
    let (healed, now) = sim.call(|w| (w.heal(), w.now())).await?;
    Ok(Canonical(json!({"tick": now, "healed": healed})))
}
