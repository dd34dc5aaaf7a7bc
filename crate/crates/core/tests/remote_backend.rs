//! Remote backend against an in-process HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use dynrag_core::gateway::{
    templates, CallContext, Gateway, GatewayError, RemoteBackend, RemoteRequest,
};
use dynrag_core::{Deadline, ImageRef};

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

/// Serve one request with `reply` and hand back the decoded request body.
fn serve_once(reply: Reply) -> (String, mpsc::Receiver<RemoteRequest>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut content_length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; content_length];
        reader.read_exact(&mut body).unwrap();
        if let Ok(req) = serde_json::from_slice(&body) {
            let _ = tx.send(req);
        }
        thread::sleep(reply.delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            reply.status,
            reply.body.len(),
            reply.body
        );
    });
    (format!("http://{addr}/generate"), rx)
}

fn gateway(endpoint: &str) -> Gateway {
    Gateway::with_default_templates(Arc::new(RemoteBackend::new(endpoint)))
}

fn domain_request(ctx: &CallContext) -> dynrag_core::gateway::ModelRequest {
    ctx.request(templates::DOMAIN_ROUTER)
        .slot("query", "Who founded this cafe?")
        .slot("taxonomy", "food, other")
        .image(Some(ImageRef::new("cafe")))
}

#[test]
fn round_trip_sends_rendered_prompt_and_parses_reply() {
    let (url, rx) = serve_once(Reply {
        status: 200,
        body: r#"{"text":"food","token_probs":[0.9,0.8],"latency_ms":12}"#.into(),
        delay: Duration::ZERO,
    });
    let gw = gateway(&url);
    let ctx = CallContext::new("cafe/0");
    let request = domain_request(&ctx);
    let response = gw
        .generate_within(&request, Deadline::after(Duration::from_secs(5)))
        .unwrap();
    assert_eq!(response.text, "food");
    assert_eq!(response.token_probs, vec![0.9, 0.8]);
    assert_eq!(response.latency, Duration::from_millis(12));

    let sent = rx.recv_timeout(Duration::from_secs(5)).unwrap();
    assert_eq!(sent.template_id, templates::DOMAIN_ROUTER);
    assert_eq!(sent.slots["query"], "Who founded this cafe?");
    assert_eq!(sent.image_ref.as_deref(), Some("cafe"));
    assert_eq!(sent.prompt, gw.render(&request).unwrap());
    assert!(sent.prompt.contains("Who founded this cafe?"));
}

#[test]
fn slow_server_times_out_at_the_deadline() {
    let (url, _rx) = serve_once(Reply {
        status: 200,
        body: r#"{"text":"food","token_probs":[0.9]}"#.into(),
        delay: Duration::from_secs(3),
    });
    let gw = gateway(&url);
    let ctx = CallContext::new("slow/0");
    let t0 = Instant::now();
    let err = gw
        .generate_within(
            &domain_request(&ctx),
            Deadline::after(Duration::from_millis(200)),
        )
        .unwrap_err();
    assert!(err.is_timeout(), "{err:?}");
    assert!(t0.elapsed() < Duration::from_secs(2), "{:?}", t0.elapsed());
}

#[test]
fn server_error_is_a_transport_error() {
    let (url, _rx) = serve_once(Reply {
        status: 500,
        body: "{}".into(),
        delay: Duration::ZERO,
    });
    let ctx = CallContext::new("err/0");
    let err = gateway(&url)
        .generate_within(
            &domain_request(&ctx),
            Deadline::after(Duration::from_secs(5)),
        )
        .unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err:?}");
}

#[test]
fn malformed_body_is_an_invalid_response() {
    for body in ["not json", r#"{"text":"food","token_probs":[]}"#] {
        let (url, _rx) = serve_once(Reply {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        });
        let ctx = CallContext::new("bad/0");
        let err = gateway(&url)
            .generate_within(
                &domain_request(&ctx),
                Deadline::after(Duration::from_secs(5)),
            )
            .unwrap_err();
        assert!(
            matches!(err, GatewayError::InvalidResponse(_)),
            "{body}: {err:?}"
        );
    }
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let ctx = CallContext::new("down/0");
    let err = gateway(&format!("http://127.0.0.1:{port}/generate"))
        .generate_within(
            &domain_request(&ctx),
            Deadline::after(Duration::from_secs(5)),
        )
        .unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err:?}");
}
