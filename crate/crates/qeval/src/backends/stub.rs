//! In-process HTTP stub speaking the chat-completions wire format, used to
//! test the remote client without a network.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

/// One scripted stub reply. Status 200 answers with a well-formed
/// completions body around `text`; any other status sends `text` raw.
#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub text: String,
}

impl StubResponse {
    pub fn ok(text: impl Into<String>) -> Self {
        StubResponse {
            status: 200,
            text: text.into(),
        }
    }

    pub fn error(status: u16) -> Self {
        StubResponse {
            status,
            text: "stub error".to_string(),
        }
    }
}

/// A request the stub saw: headers (lower-cased names) plus the JSON body.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub headers: HashMap<String, String>,
    pub body: serde_json::Value,
}

/// Minimal single-purpose HTTP server. Replies are consumed in order; the
/// final one repeats once the script is exhausted.
pub struct StubServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<StubResponse>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "stub needs at least one response");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests: Arc<Mutex<Vec<RecordedRequest>>> = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let counter = Arc::new(AtomicUsize::new(0));

        let thread_requests = Arc::clone(&requests);
        let thread_shutdown = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let index = counter.fetch_add(1, Ordering::SeqCst);
                let response = script[index.min(script.len() - 1)].clone();
                let _ = handle_connection(stream, &thread_requests, &response);
            }
        });

        Ok(StubServer {
            addr,
            requests,
            shutdown,
            handle: Some(handle),
        })
    }

    /// Base URL for a backend config, e.g. `http://127.0.0.1:49152`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    requests: &Mutex<Vec<RecordedRequest>>,
    response: &StubResponse,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;

    let mut headers = HashMap::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            }
            headers.insert(name, value);
        }
    }

    let mut body_bytes = vec![0u8; content_length];
    reader.read_exact(&mut body_bytes)?;
    let body: serde_json::Value =
        serde_json::from_slice(&body_bytes).unwrap_or(serde_json::Value::Null);

    requests.lock().unwrap().push(RecordedRequest {
        headers,
        body: body.clone(),
    });

    let payload = if response.status == 200 {
        if body.get("prompt").is_some() {
            serde_json::json!({"choices": [{"text": response.text}]}).to_string()
        } else {
            serde_json::json!({"choices": [{"message": {"content": response.text}}]}).to_string()
        }
    } else {
        response.text.clone()
    };
    let reason = match response.status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Error",
    };
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        payload.len(),
        payload
    )?;
    stream.flush()
}
