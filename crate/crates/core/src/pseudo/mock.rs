//! A minimal local chat-completion server for tests and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

/// A request as seen by the mock.
#[derive(Debug, Clone)]
pub struct MockRequest {
    pub authorization: Option<String>,
    pub body: serde_json::Value,
    /// 0-based arrival index.
    pub index: usize,
}

/// Handler result: HTTP status and raw JSON body.
pub type MockReply = (u16, String);

type Handler = dyn Fn(&MockRequest) -> MockReply + Send + Sync;

/// Deterministic reply derived from the user message: the text after the
/// last `Input: ` marker, lower-cased and tagged.
pub fn echo_completion(user: &str) -> String {
    let input = user
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Input: "))
        .unwrap_or(user);
    format!("pseudo: {}", input.trim().to_lowercase())
}

/// A chat-completion response body carrying `content`.
pub fn chat_response(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

/// Replies with `echo_completion` of the user message.
pub fn echo_handler(req: &MockRequest) -> MockReply {
    let user = req
        .body
        .pointer("/messages/1/content")
        .and_then(|v| v.as_str())
        .unwrap_or_default();
    (200, chat_response(&echo_completion(user)))
}

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> std::io::Result<MockServer>
    where
        F: Fn(&MockRequest) -> MockReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let (req_count, stop_flag) = (requests.clone(), stop.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (handler, req_count) = (handler.clone(), req_count.clone());
                std::thread::spawn(move || {
                    if let Err(e) = serve(stream, handler.as_ref(), &req_count) {
                        log::debug!("mock server connection: {e}");
                    }
                });
            }
        });
        Ok(MockServer {
            addr,
            requests,
            stop,
            thread: Some(thread),
        })
    }

    pub fn echo() -> std::io::Result<MockServer> {
        Self::start(echo_handler)
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Requests received so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve(stream: TcpStream, handler: &Handler, count: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let mut content_length = 0usize;
        let mut authorization = None;
        let mut close = false;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                let value = value.trim();
                match name.trim().to_ascii_lowercase().as_str() {
                    "content-length" => content_length = value.parse().unwrap_or(0),
                    "authorization" => authorization = Some(value.to_string()),
                    "connection" => close = value.eq_ignore_ascii_case("close"),
                    _ => {}
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let index = count.fetch_add(1, Ordering::SeqCst);
        let req = MockRequest {
            authorization,
            body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
            index,
        };
        let (status, reply) = handler(&req);
        write!(
            writer,
            "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{reply}",
            reason(status),
            reply.len()
        )?;
        writer.flush()?;
        if close {
            return Ok(());
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo::{ChatRequest, ChatTransport, ClientConfig, HttpTransport, TransportError};

    fn request() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            system: "s".into(),
            user: "Segment.\nInput: Red Shoes".into(),
        }
    }

    #[test]
    fn http_round_trip_with_auth() {
        let server = MockServer::start(|r| {
            assert_eq!(r.authorization.as_deref(), Some("Bearer k"));
            echo_handler(r)
        })
        .unwrap();
        let t = HttpTransport::new(&ClientConfig::new(server.url(), "m"), Some("k".into()));
        assert_eq!(t.complete(&request()).unwrap(), "pseudo: red shoes");
        assert_eq!(t.complete(&request()).unwrap(), "pseudo: red shoes");
        assert_eq!(server.request_count(), 2);
    }

    #[test]
    fn status_classification() {
        let server = MockServer::start(|r| match r.index {
            0 => (503, "{}".into()),
            1 => (429, "{}".into()),
            2 => (400, "{}".into()),
            _ => (200, "{\"choices\":[]}".into()),
        })
        .unwrap();
        let t = HttpTransport::new(&ClientConfig::new(server.url(), "m"), None);
        assert!(matches!(t.complete(&request()), Err(TransportError::Transient(_))));
        assert!(matches!(t.complete(&request()), Err(TransportError::Transient(_))));
        assert!(matches!(t.complete(&request()), Err(TransportError::Fatal(_))));
        assert!(matches!(t.complete(&request()), Err(TransportError::Fatal(_))));
    }
}
