use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use ppat::caption::{
    generate_caption, CaptionCache, CaptionClient, CaptionError, CaptionRequest, MentalPrompt, Provider,
    ProviderError, RemoteClient, RetryPolicy,
};
use ppat::sketch::{parse_sketch_json, rasterize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Default)]
struct Seen {
    calls: AtomicUsize,
    last_body: Mutex<Option<Value>>,
    last_auth: Mutex<Option<String>>,
}

/// Fails with 503 for the first `failures` calls, then answers by mode.
async fn handler(
    State((seen, failures, mode)): State<(Arc<Seen>, usize, &'static str)>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, String) {
    let n = seen.calls.fetch_add(1, Ordering::SeqCst);
    *seen.last_body.lock().unwrap() = Some(body);
    *seen.last_auth.lock().unwrap() = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(String::from);
    if n < failures {
        return (StatusCode::SERVICE_UNAVAILABLE, "busy".into());
    }
    match mode {
        "ok" => (StatusCode::OK, json!({"caption": "color usage is limited."}).to_string()),
        "bad_request" => (StatusCode::BAD_REQUEST, "no".into()),
        "rate_limited" => (StatusCode::TOO_MANY_REQUESTS, "slow down".into()),
        _ => (StatusCode::OK, "not json".into()),
    }
}

fn spawn_server(failures: usize, mode: &'static str) -> (SocketAddr, Arc<Seen>) {
    let seen = Arc::new(Seen::default());
    let app = Router::new()
        .route("/caption", post(handler))
        .with_state((seen.clone(), failures, mode));
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), seen)
}

const SKETCH: &str = r#"{"sketch_id":"apple-1","canvas_size":512,"strokes":[{"points":[[10,10],[200,300]],"color":[200,0,0],"width":8,"t_start":0,"t_end":40}]}"#;

fn call(client: &RemoteClient) -> Result<String, ProviderError> {
    let sketch = parse_sketch_json(SKETCH.as_bytes()).unwrap();
    let image = rasterize(&sketch, 96, 96).unwrap();
    client.caption(&CaptionRequest {
        prompt: "describe <image>",
        image: &image,
        sketch: &sketch,
    })
}

fn client(addr: SocketAddr, token: Option<&str>) -> RemoteClient {
    RemoteClient::new(
        format!("http://{addr}/caption"),
        token.map(String::from),
        Duration::from_secs(5),
    )
}

#[test]
fn success_sends_prompt_image_and_token() {
    let (addr, seen) = spawn_server(0, "ok");
    let c = client(addr, Some("tok"));
    assert_eq!(c.provider(), Provider::Remote);
    assert_eq!(call(&c).unwrap(), "color usage is limited.");
    let body = seen.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["prompt"], "describe <image>");
    assert_eq!(body["sketch_id"], "apple-1");
    let png = base64::engine::general_purpose::STANDARD
        .decode(body["image"].as_str().unwrap())
        .unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(seen.last_auth.lock().unwrap().as_deref(), Some("Bearer tok"));
}

#[test]
fn status_classification() {
    let (addr, _) = spawn_server(1, "ok");
    assert!(matches!(call(&client(addr, None)), Err(ProviderError::Timeout(_))));
    let (addr, _) = spawn_server(0, "rate_limited");
    assert!(matches!(call(&client(addr, None)), Err(ProviderError::Timeout(_))));
    let (addr, _) = spawn_server(0, "bad_request");
    assert!(matches!(call(&client(addr, None)), Err(ProviderError::Rejection(_))));
    let (addr, _) = spawn_server(0, "garbage");
    assert!(matches!(call(&client(addr, None)), Err(ProviderError::Rejection(_))));
}

#[test]
fn refused_connection_is_transient() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(matches!(call(&client(addr, None)), Err(ProviderError::Timeout(_))));
}

#[test]
fn retries_then_caches() {
    let (addr, seen) = spawn_server(2, "ok");
    let c = client(addr, None);
    let cache = CaptionCache::in_memory();
    let policy = RetryPolicy {
        retries: 3,
        base_delay: Duration::from_millis(5),
    };
    let sketch = parse_sketch_json(SKETCH.as_bytes()).unwrap();
    let rec = generate_caption(&sketch, &MentalPrompt::default(), &c, &cache, &policy).unwrap();
    assert_eq!(rec.provider, Provider::Remote);
    assert_eq!(seen.calls.load(Ordering::SeqCst), 3);
    generate_caption(&sketch, &MentalPrompt::default(), &c, &cache, &policy).unwrap();
    assert_eq!(seen.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn exhausted_retries_report_attempts() {
    let (addr, seen) = spawn_server(usize::MAX, "ok");
    let policy = RetryPolicy {
        retries: 3,
        base_delay: Duration::from_millis(1),
    };
    let sketch = parse_sketch_json(SKETCH.as_bytes()).unwrap();
    let err = generate_caption(
        &sketch,
        &MentalPrompt::default(),
        &client(addr, None),
        &CaptionCache::in_memory(),
        &policy,
    )
    .unwrap_err();
    assert!(matches!(err, CaptionError::ProviderTimeout { attempts: 4, .. }), "{err}");
    assert_eq!(seen.calls.load(Ordering::SeqCst), 4);
}
