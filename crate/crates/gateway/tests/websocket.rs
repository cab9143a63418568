mod common;

use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

use gateway::protocol::{MessageType, WireMessage};
use gateway::service::{Created, ScenarioView, Service};
use gateway::store::{read_log, replay, SessionLog};

use common::{scenario_map, service};

/// Minimal HTTP/1.1 exchange; returns status and body.
async fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let body = body.unwrap_or("");
    let request = format!(
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\nconnection: close\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).await.unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).await.unwrap();
    let status = raw[9..12].parse().unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(rest)
    } else {
        rest.to_string()
    };
    (status, body)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = s.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
    out
}

async fn start(svc: Service) -> (std::net::SocketAddr, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(gateway::server::serve(Arc::new(svc), listener, async {
        let _ = rx.await;
    }));
    (addr, tx)
}

async fn next_message<S>(ws: &mut S) -> Option<WireMessage>
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => {
                assert!(t.ends_with('\n'), "one JSON line per frame");
                return Some(serde_json::from_str(t.trim_end()).unwrap());
            }
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_endpoints_and_a_chat_over_the_socket() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let (svc, world) = service(SessionLog::open(&path).unwrap(), Duration::from_secs(3600));
    let (addr, stop) = start(svc).await;

    let (status, body) = http(addr, "GET", "/scenarios/s000", None).await;
    assert_eq!(status, 200);
    let view: ScenarioView = serde_json::from_str(&body).unwrap();
    assert_eq!(view.title, world.scenarios[0].title);
    assert_eq!(view.listing_price, world.scenarios[0].listing_price);
    let (status, body) = http(addr, "GET", "/scenarios/nope", None).await;
    assert_eq!(status, 404);
    assert_eq!(serde_json::from_str::<WireMessage>(&body).unwrap().kind, MessageType::Error);

    let (status, body) = http(addr, "POST", "/sessions", Some(r#"{"scenario_id":"nope","human_role":"buyer"}"#)).await;
    assert_eq!(status, 404);
    assert_eq!(serde_json::from_str::<WireMessage>(&body).unwrap().kind, MessageType::Error);

    let (status, body) = http(addr, "POST", "/sessions", Some(r#"{"scenario_id":"s000","human_role":"buyer","first_mover":"seller"}"#)).await;
    assert_eq!(status, 201);
    let created: Created = serde_json::from_str(&body).unwrap();
    let id = created.session_id.clone();
    assert!(!created.messages.is_empty(), "agent moves first");

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/ws")).await.unwrap();
    let mut received = Vec::new();
    for _ in 0..created.messages.len() {
        received.push(next_message(&mut ws).await.unwrap());
    }
    assert_eq!(received, created.messages, "backlog replayed on connect");

    let (status, _) = http(addr, "POST", &format!("/sessions/{id}/rating"), Some(r#"{"human_likeness":5,"language":5,"pricing":5}"#)).await;
    assert_eq!(status, 409, "rating a live session");

    if !received.iter().any(|m| m.kind == MessageType::Outcome) {
        let seq = received.last().unwrap().seq + 1;
        ws.send(Message::Text(WireMessage::utterance(&id, seq, "hi , can you do $10 ?").to_line().into())).await.unwrap();
        let reply = next_message(&mut ws).await.unwrap();
        assert!(reply.seq > seq);
        let offered = created.messages.iter().any(|m| m.kind == MessageType::Offer);
        if offered {
            assert_eq!(reply.kind, MessageType::Error, "utterances are illegal while an offer is pending");
        } else {
            assert_eq!(reply.role, Some(created.agent_role));
        }
        if matches!(reply.kind, MessageType::Accept | MessageType::Reject | MessageType::Quit) {
            assert_eq!(next_message(&mut ws).await.unwrap().kind, MessageType::Outcome);
        } else {
            ws.send(Message::Text("not json\n".into())).await.unwrap();
            let err = next_message(&mut ws).await.unwrap();
            assert_eq!(err.kind, MessageType::Error);
            let quit = WireMessage::new(MessageType::Quit, &id, err.seq + 1);
            ws.send(Message::Text(format!("{}\n", quit.to_line()).into())).await.unwrap();
            let outcome = next_message(&mut ws).await.unwrap();
            assert_eq!(outcome.kind, MessageType::Outcome);
            assert_eq!(outcome.agreed, Some(false));
        }
    }
    assert!(next_message(&mut ws).await.is_none(), "server closes after the outcome");

    let (status, _) = http(addr, "POST", &format!("/sessions/{id}/rating"), Some(r#"{"human_likeness":6,"language":5,"pricing":5}"#)).await;
    assert_eq!(status, 422);
    let (status, _) = http(addr, "POST", &format!("/sessions/{id}/rating"), Some(r#"{"human_likeness":4,"language":5,"pricing":3}"#)).await;
    assert_eq!(status, 200);

    let _ = stop.send(());
    let replays = replay(&read_log(&path).unwrap(), &scenario_map(&world.scenarios)).unwrap();
    assert_eq!(replays.len(), 1);
    assert!(replays[0].consistent(), "{:?}", replays[0]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn idle_sessions_are_closed_by_the_server() {
    let (svc, _) = service(SessionLog::disabled(), Duration::from_millis(200));
    let (addr, stop) = start(svc).await;
    let (_, body) = http(addr, "POST", "/sessions", Some(r#"{"scenario_id":"s001","human_role":"seller"}"#)).await;
    let created: Created = serde_json::from_str(&body).unwrap();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{}/ws", created.session_id))
        .await
        .unwrap();
    let mut kinds = Vec::new();
    while let Some(m) = next_message(&mut ws).await {
        kinds.push(m.kind);
    }
    assert_eq!(&kinds[kinds.len() - 2..], [MessageType::Quit, MessageType::Outcome]);
    let _ = stop.send(());
}
