//! A scriptable chat-completions server on a loopback socket.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone)]
pub enum Reply {
    /// A 200 completion whose message content is this text, tokenized into
    /// four-byte pieces with the given log probability each.
    Content { text: String, logprob: f64 },
    Status(u16),
    /// Close the connection without answering.
    Hangup,
}

type Script = dyn Fn(&SeenRequest, usize) -> Reply + Send + Sync;

pub struct MockServer {
    pub url: String,
    seen: Arc<Mutex<Vec<SeenRequest>>>,
    _thread: JoinHandle<()>,
}

impl MockServer {
    /// `script` receives each request and how many identical bodies came
    /// before it.
    pub fn start(script: impl Fn(&SeenRequest, usize) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let script: Arc<Script> = Arc::new(script);
        let counts = Arc::new(Mutex::new(HashMap::<String, usize>::new()));
        let seen_c = Arc::clone(&seen);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (seen, script, counts) = (Arc::clone(&seen_c), Arc::clone(&script), Arc::clone(&counts));
                std::thread::spawn(move || handle(stream, &seen, script.as_ref(), &counts));
            }
        });
        Self {
            url,
            seen,
            _thread: thread,
        }
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}

fn handle(
    stream: TcpStream,
    seen: &Mutex<Vec<SeenRequest>>,
    script: &Script,
    counts: &Mutex<HashMap<String, usize>>,
) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut content_length = 0usize;
    let mut authorization = None;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = v.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let raw = String::from_utf8_lossy(&body).to_string();
    let request = SeenRequest {
        authorization,
        body: serde_json::from_str(&raw).unwrap_or(serde_json::Value::Null),
    };
    let prior = {
        let mut c = counts.lock().unwrap();
        let n = c.entry(raw).or_insert(0);
        *n += 1;
        *n - 1
    };
    seen.lock().unwrap().push(request.clone());
    let reply = script(&request, prior);
    let mut stream = stream;
    let (status, payload) = match reply {
        Reply::Hangup => return,
        Reply::Status(code) => (code, r#"{"error":"injected"}"#.to_string()),
        Reply::Content { text, logprob } => (200, completion(&text, logprob)),
    };
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}

fn completion(text: &str, logprob: f64) -> String {
    let mut tokens = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let mut cut = rest.len().min(4);
        while !rest.is_char_boundary(cut) {
            cut += 1;
        }
        tokens.push(serde_json::json!({"token": &rest[..cut], "logprob": logprob}));
        rest = &rest[cut..];
    }
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "logprobs": {"content": tokens},
            "finish_reason": "stop"
        }]
    })
    .to_string()
}

/// The prompt text of a seen request.
pub fn prompt_of(req: &SeenRequest) -> String {
    req.body["messages"][0]["content"].as_str().unwrap_or_default().to_string()
}
