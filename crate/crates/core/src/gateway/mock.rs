//! A scripted chat-completions server for tests and offline demos.
//!
//! Each incoming request consumes the next [`MockBehavior`]; the last one
//! repeats. Every request is recorded so tests can inspect what was sent.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::json;

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// 200 with a chat completion whose message content is this text.
    Reply(String),
    /// Arbitrary status and raw body.
    Raw(u16, String),
    /// Wait, then behave as the inner behavior.
    Delay(Duration, Box<MockBehavior>),
    /// Accept the request and hang up without answering.
    Hangup,
}

impl MockBehavior {
    pub fn reply_words(words: &[&str], narrative: &str) -> Self {
        MockBehavior::Reply(json!({"prompt_words": words, "narrative": narrative}).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

pub struct MockGateway {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockGateway {
    pub fn start(script: Vec<MockBehavior>) -> io::Result<Self> {
        assert!(!script.is_empty(), "mock needs at least one behavior");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (rq, st) = (requests.clone(), stop.clone());
        let thread = thread::spawn(move || serve(listener, script, &rq, &st));
        Ok(MockGateway { addr, requests, stop, thread: Some(thread) })
    }

    /// Base URL to put in a gateway config.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl Drop for MockGateway {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(listener: TcpListener, script: Vec<MockBehavior>, requests: &Mutex<Vec<RecordedRequest>>, stop: &AtomicBool) {
    let mut next = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let behavior = &script[next.min(script.len() - 1)];
                next += 1;
                if let Err(e) = handle(stream, behavior, requests, stop) {
                    log::debug!("mock gateway connection: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => return,
        }
    }
}

fn handle(stream: TcpStream, behavior: &MockBehavior, requests: &Mutex<Vec<RecordedRequest>>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line.trim_end().is_empty() {
            break;
        }
        if let Some((k, v)) = line.trim_end().split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    requests.lock().unwrap_or_else(|p| p.into_inner()).push(RecordedRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    });
    respond(stream, behavior, stop)
}

fn respond(mut stream: TcpStream, behavior: &MockBehavior, stop: &AtomicBool) -> io::Result<()> {
    let (status, body) = match behavior {
        MockBehavior::Reply(content) => (
            200,
            json!({
                "id": "chatcmpl-mock",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
            })
            .to_string(),
        ),
        MockBehavior::Raw(status, body) => (*status, body.clone()),
        MockBehavior::Delay(d, inner) => {
            let until = Instant::now() + *d;
            while Instant::now() < until && !stop.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(10));
            }
            return respond(stream, inner, stop);
        }
        MockBehavior::Hangup => return Ok(()),
    };
    write!(
        stream,
        "HTTP/1.1 {status} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}
