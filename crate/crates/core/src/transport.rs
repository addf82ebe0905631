//! Minimal HTTP/1.1 transport for the toolkit's request/response services.
//!
//! Endpoints are plain `host:port` strings; authentication lives in the
//! message bodies (signed requests, signed assertions), never in the
//! channel, so the transport stays deliberately small: one request per
//! connection, `Content-Length` framing, no TLS.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::canonical::Value;

const IO_TIMEOUT: Duration = Duration::from_secs(10);
const MAX_HEADER_BYTES: usize = 16 * 1024;
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cannot reach `{endpoint}`: {detail}")]
    Unreachable { endpoint: String, detail: String },
    #[error("i/o error talking to `{endpoint}`: {detail}")]
    Io { endpoint: String, detail: String },
    #[error("malformed HTTP message from `{endpoint}`: {detail}")]
    Protocol { endpoint: String, detail: String },
}

/// A parsed inbound request.
#[derive(Debug)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub query: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Value of a query parameter, percent-decoded.
    pub fn query_param(&self, name: &str) -> Option<String> {
        self.query.split('&').find_map(|pair| {
            let (k, v) = pair.split_once('=')?;
            (k == name).then(|| decode_query_component(v))
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: Vec<u8>) -> HttpResponse {
        HttpResponse { status: 200, body }
    }

    pub fn ok_doc(doc: &Value) -> HttpResponse {
        HttpResponse::ok(doc.to_bytes())
    }

    /// A `{code, detail}` error document with the given status.
    pub fn error(status: u16, code: &str, detail: impl Into<String>) -> HttpResponse {
        let doc = Value::map()
            .field_str("code", code)
            .field_str("detail", detail.into())
            .build();
        HttpResponse {
            status,
            body: doc.to_bytes(),
        }
    }

    pub fn not_found() -> HttpResponse {
        HttpResponse::error(404, "not_found", "no such endpoint")
    }
}

pub type Handler = dyn Fn(&HttpRequest) -> HttpResponse + Send + Sync;

/// A threaded accept loop delivering requests to one handler.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Bind `bind_addr` (e.g. `127.0.0.1:0`) and serve until shutdown.
    pub fn spawn(bind_addr: &str, handler: Arc<Handler>) -> std::io::Result<HttpServer> {
        let listener = TcpListener::bind(bind_addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let join = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &handler);
                });
            }
        });
        Ok(HttpServer {
            addr,
            stop,
            join: Some(join),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` form used in server lists and CLI flags.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(join) = self.join.take() {
            self.stop.store(true, Ordering::SeqCst);
            // poke the listener so the accept loop observes the flag
            let _ = TcpStream::connect(self.addr);
            let _ = join.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn serve_connection(mut stream: TcpStream, handler: &Arc<Handler>) -> std::io::Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let request = match read_request(&mut stream) {
        Ok(r) => r,
        Err(_) => {
            write_response(
                &mut stream,
                &HttpResponse::error(400, "bad_request", "unparseable request"),
            )?;
            return Ok(());
        }
    };
    let response = handler(&request);
    write_response(&mut stream, &response)
}

fn read_request(stream: &mut TcpStream) -> std::io::Result<HttpRequest> {
    let bad = |detail: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, detail);
    let (head, mut rest) = read_until_blank_line(stream)?;

    let mut headers = [httparse::EMPTY_HEADER; 32];
    let mut parsed = httparse::Request::new(&mut headers);
    let status = parsed.parse(&head).map_err(|e| bad(&e.to_string()))?;
    if !status.is_complete() {
        return Err(bad("truncated request head"));
    }
    let method = parsed
        .method
        .ok_or_else(|| bad("missing method"))?
        .to_string();
    let target = parsed.path.ok_or_else(|| bad("missing path"))?;
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (target.to_string(), String::new()),
    };
    let header_pairs: Vec<(String, String)> = parsed
        .headers
        .iter()
        .map(|h| {
            (
                h.name.to_string(),
                String::from_utf8_lossy(h.value).into_owned(),
            )
        })
        .collect();

    let content_length = header_pairs
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .map(|(_, v)| v.trim().parse::<usize>())
        .transpose()
        .map_err(|_| bad("bad content-length"))?
        .unwrap_or(0);
    if content_length > MAX_BODY_BYTES {
        return Err(bad("body too large"));
    }
    while rest.len() < content_length {
        let mut buf = [0u8; 4096];
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Err(bad("connection closed mid-body"));
        }
        rest.extend_from_slice(&buf[..n]);
    }
    rest.truncate(content_length);
    Ok(HttpRequest {
        method,
        path,
        query,
        headers: header_pairs,
        body: rest,
    })
}

/// Read bytes until the end of the header block; returns (head including the
/// blank line, any body bytes already read).
fn read_until_blank_line(stream: &mut TcpStream) -> std::io::Result<(Vec<u8>, Vec<u8>)> {
    let mut buf = Vec::with_capacity(1024);
    loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            let body = buf.split_off(pos + 4);
            return Ok((buf, body));
        }
        if buf.len() > MAX_HEADER_BYTES {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "headers too large",
            ));
        }
        let mut chunk = [0u8; 4096];
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed before headers ended",
            ));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn write_response(stream: &mut TcpStream, response: &HttpResponse) -> std::io::Result<()> {
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        _ => "Error",
    };
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/x-canonical\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        reason,
        response.body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(&response.body)?;
    stream.flush()
}

/// Something that can deliver a request to an endpoint. The TCP
/// implementation is [`TcpTransport`]; tests route to in-process services.
pub trait Transport {
    fn request(
        &self,
        endpoint: &str,
        method: &str,
        path_and_query: &str,
        body: &[u8],
        headers: &[(String, String)],
    ) -> Result<HttpResponse, TransportError>;
}

#[derive(Debug, Clone, Default)]
pub struct TcpTransport;

impl Transport for TcpTransport {
    fn request(
        &self,
        endpoint: &str,
        method: &str,
        path_and_query: &str,
        body: &[u8],
        headers: &[(String, String)],
    ) -> Result<HttpResponse, TransportError> {
        http_request(endpoint, method, path_and_query, body, headers)
    }
}

/// One-shot HTTP request over TCP.
pub fn http_request(
    endpoint: &str,
    method: &str,
    path_and_query: &str,
    body: &[u8],
    headers: &[(String, String)],
) -> Result<HttpResponse, TransportError> {
    let unreachable = |detail: String| TransportError::Unreachable {
        endpoint: endpoint.to_string(),
        detail,
    };
    let io_err = |detail: String| TransportError::Io {
        endpoint: endpoint.to_string(),
        detail,
    };

    let addr = endpoint
        .to_socket_addrs()
        .map_err(|e| unreachable(e.to_string()))?
        .next()
        .ok_or_else(|| unreachable("no address".into()))?;
    let mut stream =
        TcpStream::connect_timeout(&addr, IO_TIMEOUT).map_err(|e| unreachable(e.to_string()))?;
    stream
        .set_read_timeout(Some(IO_TIMEOUT))
        .map_err(|e| io_err(e.to_string()))?;
    stream
        .set_write_timeout(Some(IO_TIMEOUT))
        .map_err(|e| io_err(e.to_string()))?;

    let mut head = format!("{method} {path_and_query} HTTP/1.1\r\nHost: {endpoint}\r\n");
    for (name, value) in headers {
        head.push_str(&format!("{name}: {value}\r\n"));
    }
    head.push_str(&format!(
        "Content-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    ));
    stream
        .write_all(head.as_bytes())
        .map_err(|e| io_err(e.to_string()))?;
    stream.write_all(body).map_err(|e| io_err(e.to_string()))?;

    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| io_err(e.to_string()))?;

    let protocol = |detail: &str| TransportError::Protocol {
        endpoint: endpoint.to_string(),
        detail: detail.to_string(),
    };
    let mut header_buf = [httparse::EMPTY_HEADER; 32];
    let mut parsed = httparse::Response::new(&mut header_buf);
    let status = parsed.parse(&raw).map_err(|e| protocol(&e.to_string()))?;
    let httparse::Status::Complete(header_len) = status else {
        return Err(protocol("truncated response"));
    };
    let code = parsed.code.ok_or_else(|| protocol("missing status"))?;
    let content_length = parsed
        .headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case("content-length"))
        .and_then(|h| std::str::from_utf8(h.value).ok())
        .and_then(|v| v.trim().parse::<usize>().ok());
    let mut body = raw[header_len..].to_vec();
    if let Some(len) = content_length {
        if body.len() < len {
            return Err(protocol("short body"));
        }
        body.truncate(len);
    }
    Ok(HttpResponse { status: code, body })
}

/// Percent-encode a query component (everything but unreserved characters).
pub fn encode_query_component(value: &str) -> String {
    let mut out = String::new();
    for b in value.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~' | b'/') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02x}"));
        }
    }
    out
}

fn decode_query_component(value: &str) -> String {
    let bytes = value.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if let (Some(h), Some(l)) = (
                bytes.get(i + 1).and_then(|b| (*b as char).to_digit(16)),
                bytes.get(i + 2).and_then(|b| (*b as char).to_digit(16)),
            ) {
                out.push((h * 16 + l) as u8);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}
