//! Operator HTTP API over a shared [`Station`].

use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use super::Station;
use crate::frames::{geo_to_enu, GeoPoint};
use crate::link::telemetry::{GoalDoc, ModeDoc};
use crate::worldsim::{Parameter, ScalarField};

pub type SharedStation = Arc<RwLock<Station>>;

fn error(status: StatusCode, name: &str) -> Response {
    (status, Json(json!({ "error": name }))).into_response()
}

fn bad_request(detail: impl ToString) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": "BadRequest", "detail": detail.to_string() })),
    )
        .into_response()
}

/// Runs CPU-heavy station queries off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|_| error(StatusCode::INTERNAL_SERVER_ERROR, "Internal"))
}

pub fn router(station: SharedStation) -> Router {
    Router::new()
        .route("/api/state", get(state))
        .route("/api/grid/{param}", get(grid))
        .route("/api/track/{id}", get(track))
        .route("/api/goal", post(goal))
        .route("/api/mode", post(mode))
        .route("/api/suggest", get(suggest))
        .route("/api/compliance", get(compliance))
        .route("/api/stream", get(stream))
        .with_state(station)
}

async fn state(State(s): State<SharedStation>) -> Response {
    Json(s.read().expect("station lock").snapshot()).into_response()
}

fn cells(f: &ScalarField) -> Vec<Option<f64>> {
    f.values.iter().map(|v| v.is_finite().then_some(*v)).collect()
}

async fn grid(State(s): State<SharedStation>, Path(param): Path<String>) -> Response {
    let Ok(p) = param.parse::<Parameter>() else {
        return bad_request(format!("unknown parameter '{param}'"));
    };
    let rasters = match blocking(move || s.read().expect("station lock").rasters(p)).await {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Some(r) = rasters else {
        return error(StatusCode::NOT_FOUND, "NoModel");
    };
    let (mean, sd) = (&r.0, &r.1);
    let g = mean.geometry;
    Json(json!({
        "param": p,
        "units": p.units(),
        "geometry": {
            "ncols": g.width,
            "nrows": g.height,
            "xllcorner": g.origin.east,
            "yllcorner": g.origin.north,
            "cellsize": g.cell_size,
            "row_order": "south_to_north",
        },
        "mean": cells(mean),
        "sd": cells(sd),
    }))
    .into_response()
}

async fn track(State(s): State<SharedStation>, Path(id): Path<String>) -> Response {
    let s = s.read().expect("station lock");
    if id != s.snapshot().vehicle_id {
        return error(StatusCode::NOT_FOUND, "UnknownVehicle");
    }
    Json(json!({ "id": id, "points": s.track_decimated() })).into_response()
}

async fn goal(State(s): State<SharedStation>, body: Result<Json<GoalDoc>, JsonRejection>) -> Response {
    let Json(doc) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    if GeoPoint::new(doc.lat, doc.lon).is_err() {
        return bad_request("lat/lon out of range");
    }
    let mut st = s.write().expect("station lock");
    match st.submit_goal(doc) {
        Ok(p) => Json(json!({ "accepted": true, "lat": doc.lat, "lon": doc.lon, "east": p.east, "north": p.north }))
            .into_response(),
        Err(e) => error(StatusCode::CONFLICT, e.name()),
    }
}

async fn mode(State(s): State<SharedStation>, body: Result<Json<ModeDoc>, JsonRejection>) -> Response {
    let Json(doc) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    match s.write().expect("station lock").request_mode(doc.mode) {
        Ok(m) => Json(json!({ "accepted": true, "mode": m })).into_response(),
        Err(name) => error(StatusCode::CONFLICT, &name),
    }
}

async fn suggest(State(s): State<SharedStation>) -> Response {
    let result = match blocking(move || {
        let st = s.read().expect("station lock");
        st.suggest_goal().map(|g| (g, st.origin()))
    })
    .await
    {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match result {
        Ok((g, origin)) => {
            let p = geo_to_enu(origin, g).expect("suggestion lies on the grid");
            Json(json!({ "lat": g.lat, "lon": g.lon, "east": p.east, "north": p.north })).into_response()
        }
        Err(e) => error(StatusCode::CONFLICT, &format!("{e:?}")),
    }
}

async fn compliance(State(s): State<SharedStation>) -> Response {
    match blocking(move || s.read().expect("station lock").compliance()).await {
        Ok(r) => Json(r).into_response(),
        Err(resp) => resp,
    }
}

async fn stream(State(s): State<SharedStation>) -> Response {
    let (rx, every) = {
        let st = s.read().expect("station lock");
        (st.subscribe_live(), Duration::from_secs_f64(st.config().heartbeat_s))
    };
    let ticker = tokio::time::interval(every);
    let body = futures::stream::unfold((rx, ticker), |(mut rx, mut ticker)| async move {
        let chunk = tokio::select! {
            msg = rx.recv() => match msg {
                Ok(line) => format!("{line}\n"),
                Err(broadcast::error::RecvError::Lagged(n)) => format!(": lagged {n}\n"),
                Err(broadcast::error::RecvError::Closed) => return None,
            },
            _ = ticker.tick() => ": heartbeat\n".to_string(),
        };
        Some((Ok::<_, Infallible>(chunk), (rx, ticker)))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(body))
        .expect("static headers are valid")
}

/// Gateway running on its own runtime thread. Dropping the handle stops it.
pub struct GatewayHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl GatewayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.halt();
    }

    /// Blocks until the gateway exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn halt(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Binds `addr` and serves the API until the handle is stopped.
pub fn spawn(addr: &str, station: SharedStation) -> io::Result<GatewayHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .thread_name("gateway")
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(station);
    let thread = std::thread::Builder::new().name("gateway-main".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("gateway listener: {e}");
                    return;
                }
            };
            tokio::select! {
                r = axum::serve(listener, app) => {
                    if let Err(e) = r {
                        log::error!("gateway stopped: {e}");
                    }
                }
                _ = rx => {}
            }
        });
        // open push streams never finish on their own
        runtime.shutdown_timeout(Duration::from_millis(200));
    })?;
    log::info!("gateway listening on http://{local}");
    Ok(GatewayHandle {
        addr: local,
        stop: Some(tx),
        thread: Some(thread),
    })
}
