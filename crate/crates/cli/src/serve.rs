//! Interactive drive service. Each session runs on its own thread that owns
//! the ego state and recording; the async side only routes messages.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use tokio::sync::oneshot;
use voxworld_core::buffers::{render_frame, Camera, Intrinsics, RenderSettings, SceneRaycaster, Trajectory};
use voxworld_core::Vec3;

use crate::bundle::Bundle;
use crate::config::{Config, DriveConfig};
use crate::drive::{BicycleParams, Control, DriveError, DriveSession, EgoState};
use crate::error::{CliError, Result};
use crate::pipeline::dynamic_objects;
use crate::protocol::{
    decode, encode, trajectory_bytes, ClientMessage, ErrorCode, FramePayload, Preview, ServerMessage,
};

pub const MAX_SESSIONS: usize = 256;

type Reply<T> = oneshot::Sender<std::result::Result<T, (ErrorCode, String)>>;

enum Job {
    Snapshot(bool, Reply<FramePayload>),
    Control(Control, bool, Reply<FramePayload>),
    Export(Reply<Trajectory>),
}

struct Renderer {
    scene: Arc<SceneRaycaster>,
    preview: Intrinsics,
    camera_height: f64,
    settings: RenderSettings,
}

impl Renderer {
    fn frame(&self, s: &DriveSession, with_preview: bool) -> std::result::Result<FramePayload, (ErrorCode, String)> {
        let internal = |e: voxworld_core::buffers::BufferError| (ErrorCode::Internal, e.to_string());
        let camera = s.camera().map_err(internal)?;
        let preview = if with_preview {
            let st = s.state();
            let cam = Camera::from_ego(self.preview, Vec3::from(st.position), st.yaw, self.camera_height)
                .map_err(internal)?;
            let set = render_frame(&self.scene, &cam, s.time(), s.tick() as usize, 0, &cam.position(), &self.settings);
            Some(Preview::from_buffers(&set))
        } else {
            None
        };
        Ok(FramePayload {
            session: s.id,
            tick: s.tick(),
            t: s.time(),
            pose: *s.state(),
            camera,
            preview,
        })
    }
}

fn run_session(mut s: DriveSession, r: Renderer, jobs: mpsc::Receiver<Job>) {
    while let Ok(job) = jobs.recv() {
        match job {
            Job::Snapshot(p, reply) => {
                let _ = reply.send(r.frame(&s, p));
            }
            Job::Control(c, p, reply) => {
                let out = match s.apply(&c) {
                    Ok(_) => r.frame(&s, p),
                    Err(DriveError::InvalidControl(m)) => Err((ErrorCode::InvalidControl, m)),
                    Err(e) => Err((ErrorCode::Internal, e.to_string())),
                };
                let _ = reply.send(out);
            }
            Job::Export(reply) => {
                let _ = reply.send(s.trajectory().map_err(|e| (ErrorCode::Internal, e.to_string())));
            }
        }
    }
}

/// Shared across connections: the indexed scene and the live sessions.
pub struct ServeState {
    scene: Arc<SceneRaycaster>,
    config: Config,
    sessions: Mutex<HashMap<u64, mpsc::Sender<Job>>>,
    next_id: AtomicU64,
}

impl ServeState {
    pub fn new(scene: SceneRaycaster, config: Config) -> Self {
        Self {
            scene: Arc::new(scene),
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let dynamic = dynamic_objects(&b.tracks, b.world.voxel_size())?;
        Ok(Self::new(SceneRaycaster::new(&b.world, &dynamic), b.config.clone()))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    fn drive(&self) -> &DriveConfig {
        &self.config.drive
    }

    fn create(&self) -> std::result::Result<u64, (ErrorCode, String)> {
        let d = self.drive();
        let preview = Intrinsics::from_fov(d.preview_width, d.preview_height, self.config.render.hfov_deg.to_radians());
        let start = EgoState::at(d.start, d.start_yaw);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let session = DriveSession::new(id, BicycleParams::from(d), self.config.render.intrinsics(), d.camera_height, start)
            .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
        let renderer = Renderer {
            scene: Arc::clone(&self.scene),
            preview,
            camera_height: d.camera_height,
            settings: self.config.render.settings(self.config.execution()),
        };
        let mut table = self.sessions.lock().expect("session table");
        if table.len() >= MAX_SESSIONS {
            return Err((ErrorCode::Internal, format!("session limit {MAX_SESSIONS} reached")));
        }
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name(format!("drive-{id}"))
            .spawn(move || run_session(session, renderer, rx))
            .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
        table.insert(id, tx);
        Ok(id)
    }

    async fn ask<T>(&self, id: u64, job: impl FnOnce(Reply<T>) -> Job) -> std::result::Result<T, (ErrorCode, String)> {
        let (tx, rx) = oneshot::channel();
        let sent = {
            let table = self.sessions.lock().expect("session table");
            let Some(s) = table.get(&id) else {
                return Err((ErrorCode::UnknownSession, format!("no session {id}")));
            };
            s.send(job(tx)).is_ok()
        };
        if !sent {
            return Err((ErrorCode::Internal, format!("session {id} stopped")));
        }
        rx.await.unwrap_or_else(|_| Err((ErrorCode::Internal, format!("session {id} stopped"))))
    }

    pub async fn trajectory(&self, id: u64) -> Option<Trajectory> {
        self.ask(id, Job::Export).await.ok()
    }

    /// Answers one client message. Never panics on client input.
    pub async fn handle(&self, msg: ClientMessage) -> ServerMessage {
        let session = match &msg {
            ClientMessage::Create {} => None,
            ClientMessage::Control { session, .. }
            | ClientMessage::Export { session }
            | ClientMessage::Close { session } => Some(*session),
        };
        let out = match msg {
            ClientMessage::Create {} => match self.create() {
                Ok(id) => self.ask(id, |r| Job::Snapshot(true, r)).await.map(ServerMessage::Session),
                Err(e) => Err(e),
            },
            ClientMessage::Control { session, throttle, steer, dt, preview } => self
                .ask(session, |r| Job::Control(Control { throttle, steer, dt }, preview, r))
                .await
                .map(ServerMessage::Frame),
            ClientMessage::Export { session } => self
                .ask(session, Job::Export)
                .await
                .map(|trajectory| ServerMessage::Trajectory { session, trajectory }),
            ClientMessage::Close { session } => match self.sessions.lock().expect("session table").remove(&session) {
                Some(_) => Ok(ServerMessage::Closed { session }),
                None => Err((ErrorCode::UnknownSession, format!("no session {session}"))),
            },
        };
        out.unwrap_or_else(|(code, message)| ServerMessage::Error { code, message, session })
    }
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/v1/ws", get(ws_upgrade))
        .route("/v1/sessions/{id}/trajectory", get(trajectory_file))
        .route("/v1/health", get(health))
        .with_state(state)
}

async fn health(State(s): State<Arc<ServeState>>) -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "sessions": s.session_count() }))
}

async fn trajectory_file(State(s): State<Arc<ServeState>>, UrlPath(id): UrlPath<u64>) -> Response {
    match s.trajectory(id).await {
        Some(t) => ([(header::CONTENT_TYPE, "application/json")], trajectory_bytes(&t)).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no session {id}\n")).into_response(),
    }
}

async fn ws_upgrade(State(s): State<Arc<ServeState>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(s, socket))
}

async fn connection(state: Arc<ServeState>, mut socket: WebSocket) {
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Binary(bytes) => match decode::<ClientMessage>(&bytes) {
                Ok(m) => state.handle(m).await,
                Err(e) => ServerMessage::Error { code: e.code(), message: e.to_string(), session: None },
            },
            Message::Text(_) => ServerMessage::Error {
                code: ErrorCode::Malformed,
                message: "messages must be binary frames".into(),
                session: None,
            },
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        if socket.send(Message::Binary(encode(&reply).into())).await.is_err() {
            break;
        }
    }
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn run(
    listener: tokio::net::TcpListener,
    state: Arc<ServeState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| CliError::Service(e.to_string()))
}
