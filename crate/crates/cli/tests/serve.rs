mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use common::{write_config, SMALL_WORLD};
use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;
use voxworld_cli::bundle::Bundle;
use voxworld_cli::config::Config;
use voxworld_cli::pipeline;
use voxworld_cli::protocol::{decode, encode, trajectory_bytes, ClientMessage, ErrorCode, ServerMessage};
use voxworld_cli::serve::{self, ServeState};
use voxworld_core::buffers::{read_buffer_set, Trajectory};
use voxworld_core::Execution;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Server {
    addr: SocketAddr,
    bundle: std::path::PathBuf,
    _dir: tempfile::TempDir,
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 21, &format!("{SMALL_WORLD}chunks = [[0, 0], [1, 0]]"), "");
    let bundle = dir.path().join("bundle");
    pipeline::generate(&Config::load(&cfg).unwrap(), dir.path(), &bundle).unwrap();
    let state = Arc::new(ServeState::from_bundle(&Bundle::open(&bundle).unwrap()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve::run(listener, state, std::future::pending()));
    Server { addr, bundle, _dir: dir }
}

async fn connect(s: &Server) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{}/v1/ws", s.addr)).await.unwrap().0
}

async fn send_raw(ws: &mut Ws, msg: Message) -> ServerMessage {
    ws.send(msg).await.unwrap();
    loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Binary(b) => return decode(&b).unwrap(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected {other:?}"),
        }
    }
}

async fn send(ws: &mut Ws, msg: &ClientMessage) -> ServerMessage {
    send_raw(ws, Message::Binary(encode(msg).into())).await
}

async fn create(ws: &mut Ws) -> u64 {
    match send(ws, &ClientMessage::Create {}).await {
        ServerMessage::Session(f) => {
            assert_eq!(f.tick, 0);
            f.session
        }
        other => panic!("expected a session, got {other:?}"),
    }
}

fn control(session: u64, throttle: f64, steer: f64) -> ClientMessage {
    ClientMessage::Control { session, throttle, steer, dt: 0.1, preview: false }
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, raw[split + 4..].to_vec())
}

/// Bicycle model integrated independently: 10 Hz ticks, default limits.
fn replay(controls: &[(f64, f64)], mut x: f64, mut y: f64, mut yaw: f64) -> (f64, f64, f64) {
    for &(throttle, steer) in controls {
        let v = throttle.clamp(-1.0, 1.0) * 20.0;
        let d = steer.clamp(-0.5, 0.5);
        x += v * yaw.cos() * 0.1;
        y += v * yaw.sin() * 0.1;
        yaw += v / 2.8 * d.tan() * 0.1;
    }
    (x, y, yaw.sin().atan2(yaw.cos()))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ten_second_drive_exports_a_renderable_trajectory() {
    let server = start().await;
    let mut ws = connect(&server).await;
    let ServerMessage::Session(start) = send(&mut ws, &ClientMessage::Create {}).await else { panic!() };
    let preview = start.preview.as_ref().unwrap();
    let (rgb, depth) = preview.decode().unwrap();
    assert_eq!((preview.width, preview.height, rgb.len(), depth.len()), (24, 14, 24 * 14 * 3, 24 * 14));
    let id = start.session;

    let controls: Vec<(f64, f64)> = (0..100).map(|i| (0.5, 0.2 * ((i as f64) * 0.1).sin())).collect();
    for (i, &(th, st)) in controls.iter().enumerate() {
        let ServerMessage::Frame(f) = send(&mut ws, &control(id, th, st)).await else { panic!() };
        assert_eq!(f.tick, i as u64 + 1);
        assert!(f.preview.is_none());
    }
    let (x, y, yaw) = replay(&controls, -5.0, 2.5, 0.0);
    let ServerMessage::Frame(last) = send(&mut ws, &ClientMessage::Control { session: id, throttle: 0.0, steer: 0.0, dt: 0.1, preview: true }).await else { panic!() };
    assert!((last.pose.position[0] - x).abs() < 1e-9 && (last.pose.position[1] - y).abs() < 1e-9);
    assert!((last.pose.yaw - yaw).abs() < 1e-9);
    assert!(last.preview.is_some());
    assert!((last.t - 10.1).abs() < 1e-9);

    let ServerMessage::Trajectory { session, trajectory } = send(&mut ws, &ClientMessage::Export { session: id }).await else { panic!() };
    assert_eq!(session, id);
    assert_eq!(trajectory.len(), 102);

    let (status, body) = http_get(server.addr, &format!("/v1/sessions/{id}/trajectory")).await;
    assert_eq!(status, 200);
    assert!(body == trajectory_bytes(&trajectory));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("drive.json");
    std::fs::write(&file, &body).unwrap();
    let saved = dir.path().join("saved.json");
    trajectory.save(&saved).unwrap();
    assert_eq!(std::fs::read(&saved).unwrap(), body);

    let loaded = Trajectory::load(&file).unwrap();
    let out = dir.path().join("buffers");
    let sets = pipeline::render_buffers_cmd(&server.bundle, &file, None, &out, Execution::Parallel).unwrap();
    assert_eq!(sets.len(), loaded.len());
    for (i, f) in loaded.frames().iter().enumerate().step_by(17) {
        let set = read_buffer_set(&out, i).unwrap();
        assert_eq!(set.t, f.t);
        assert!((set.camera.position() - f.camera.position()).norm() < 1e-12);
        assert!(set.camera.pose.rotation.angle_to(&f.camera.pose.rotation) < 1e-12);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_do_not_share_state() {
    let server = start().await;
    let (mut a, mut b) = (connect(&server).await, connect(&server).await);
    let (ia, ib) = (create(&mut a).await, create(&mut b).await);
    assert_ne!(ia, ib);
    let ca: Vec<(f64, f64)> = (0..30).map(|_| (1.0, 0.3)).collect();
    let cb: Vec<(f64, f64)> = (0..30).map(|_| (-0.4, -0.1)).collect();
    let (mut fa, mut fb) = (None, None);
    for i in 0..30 {
        fa = Some(send(&mut a, &control(ia, ca[i].0, ca[i].1)).await);
        if i % 2 == 0 {
            fb = Some(send(&mut b, &control(ib, cb[i].0, cb[i].1)).await);
        }
    }
    let (Some(ServerMessage::Frame(fa)), Some(ServerMessage::Frame(fb))) = (fa, fb) else { panic!() };
    let want_a = replay(&ca, -5.0, 2.5, 0.0);
    let want_b = replay(&cb.iter().step_by(2).copied().collect::<Vec<_>>(), -5.0, 2.5, 0.0);
    assert!((fa.pose.position[0] - want_a.0).abs() < 1e-9 && (fa.pose.yaw - want_a.2).abs() < 1e-9);
    assert!((fb.pose.position[0] - want_b.0).abs() < 1e-9 && (fb.pose.yaw - want_b.2).abs() < 1e-9);

    // Either connection may address any session by id.
    let ServerMessage::Trajectory { trajectory, .. } = send(&mut a, &ClientMessage::Export { session: ib }).await else { panic!() };
    assert_eq!(trajectory.len(), 16);
    assert_eq!(send(&mut b, &ClientMessage::Close { session: ib }).await, ServerMessage::Closed { session: ib });
    let ServerMessage::Trajectory { trajectory, .. } = send(&mut a, &ClientMessage::Export { session: ia }).await else { panic!() };
    assert_eq!(trajectory.len(), 31);
}

fn framed(body: &str) -> Message {
    let mut f = (body.len() as u32).to_le_bytes().to_vec();
    f.extend_from_slice(body.as_bytes());
    Message::Binary(f.into())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_input_gets_error_frames_and_the_connection_survives() {
    let server = start().await;
    let mut ws = connect(&server).await;
    let code = |m: ServerMessage| match m {
        ServerMessage::Error { code, session, .. } => (code, session),
        other => panic!("expected an error, got {other:?}"),
    };
    assert_eq!(code(send_raw(&mut ws, Message::text("hello")).await), (ErrorCode::Malformed, None));
    assert_eq!(code(send_raw(&mut ws, Message::Binary(vec![1u8, 0].into())).await).0, ErrorCode::Malformed);
    assert_eq!(code(send_raw(&mut ws, framed("{not json")).await).0, ErrorCode::Malformed);
    assert_eq!(
        code(send_raw(&mut ws, framed(r#"{"v":2,"type":"create","payload":{}}"#)).await).0,
        ErrorCode::UnsupportedVersion
    );
    assert_eq!(
        code(send_raw(&mut ws, framed(r#"{"v":1,"type":"control","payload":{"session":1}}"#)).await).0,
        ErrorCode::Malformed
    );
    assert_eq!(code(send(&mut ws, &control(999, 1.0, 0.0)).await), (ErrorCode::UnknownSession, Some(999)));

    let id = create(&mut ws).await;
    let bad = ClientMessage::Control { session: id, throttle: 1.0, steer: 0.0, dt: -1.0, preview: true };
    assert_eq!(code(send(&mut ws, &bad).await), (ErrorCode::InvalidControl, Some(id)));
    let ServerMessage::Frame(f) = send(&mut ws, &control(id, 1.0, 0.0)).await else { panic!() };
    assert_eq!(f.tick, 1);

    assert_eq!(send(&mut ws, &ClientMessage::Close { session: id }).await, ServerMessage::Closed { session: id });
    assert_eq!(code(send(&mut ws, &control(id, 1.0, 0.0)).await).0, ErrorCode::UnknownSession);
    assert_eq!(http_get(server.addr, &format!("/v1/sessions/{id}/trajectory")).await.0, 404);
    assert_eq!(http_get(server.addr, "/v1/sessions/abc/trajectory").await.0, 400);
    let (status, body) = http_get(server.addr, "/v1/health").await;
    assert_eq!(status, 200);
    assert!(String::from_utf8(body).unwrap().contains("\"ok\""));
    create(&mut ws).await;
}
