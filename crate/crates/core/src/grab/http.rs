//! HTTP/1.1 GET and response parsing.

use std::net::{IpAddr, SocketAddr};

pub const USER_AGENT: &str = "resiscan/0.1 (research scanner; see contact page on scanning host)";

pub fn get_request(addr: SocketAddr) -> Vec<u8> {
    let host = match addr.ip() {
        IpAddr::V6(v6) => format!("[{v6}]"),
        IpAddr::V4(v4) => v4.to_string(),
    };
    format!(
        "GET / HTTP/1.1\r\nHost: {host}:{}\r\nUser-Agent: {USER_AGENT}\r\nAccept: */*\r\nConnection: close\r\n\r\n",
        addr.port()
    )
    .into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub server: Option<String>,
    pub header_len: usize,
    pub content_length: Option<usize>,
}

impl Response {
    pub fn body<'a>(&self, raw: &'a [u8]) -> &'a [u8] {
        &raw[self.header_len.min(raw.len())..]
    }
}

/// Parse a response head. `Ok(None)` means the head is incomplete.
pub fn parse_response(raw: &[u8]) -> Result<Option<Response>, String> {
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut r = httparse::Response::new(&mut headers);
    match r.parse(raw) {
        Ok(httparse::Status::Complete(header_len)) => {
            let find = |name: &str| {
                r.headers
                    .iter()
                    .find(|h| h.name.eq_ignore_ascii_case(name))
                    .map(|h| String::from_utf8_lossy(h.value).trim().to_string())
            };
            Ok(Some(Response {
                status: r.code.unwrap_or(0),
                server: find("server"),
                content_length: find("content-length").and_then(|v| v.parse().ok()),
                header_len,
            }))
        }
        Ok(httparse::Status::Partial) => Ok(None),
        Err(e) => Err(e.to_string()),
    }
}

/// Whether a response read is complete: full head plus `Content-Length` body.
pub fn response_complete(raw: &[u8]) -> bool {
    match parse_response(raw) {
        Ok(Some(r)) => r.content_length.is_some_and(|n| raw.len() >= r.header_len + n),
        Ok(None) => false,
        Err(_) => true,
    }
}

/// A TLS record header: handshake or alert, major version 3.
pub fn looks_like_tls(raw: &[u8]) -> bool {
    matches!(raw, [0x15 | 0x16, 0x03, 0x00..=0x04, ..])
}

/// Server-side: whether `raw` holds a complete request head.
pub fn request_complete(raw: &[u8]) -> bool {
    raw.windows(4).any(|w| w == b"\r\n\r\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_server_header() {
        let raw = b"HTTP/1.1 200 OK\r\nServer: HP HTTP Server; HP Smart Tank 580; Serial Number: X\r\nContent-Length: 2\r\n\r\nhi";
        let r = parse_response(raw).unwrap().unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(r.server.as_deref(), Some("HP HTTP Server; HP Smart Tank 580; Serial Number: X"));
        assert_eq!(r.body(raw), b"hi");
        assert!(response_complete(raw));
        assert!(!response_complete(&raw[..raw.len() - 1]));
    }

    #[test]
    fn request_has_bracketed_host() {
        let req = get_request("[2001:db8::1]:8080".parse().unwrap());
        let text = String::from_utf8(req).unwrap();
        assert!(text.starts_with("GET / HTTP/1.1\r\nHost: [2001:db8::1]:8080\r\n"));
        assert!(request_complete(text.as_bytes()));
    }

    #[test]
    fn tls_detection() {
        assert!(looks_like_tls(&[0x15, 0x03, 0x03, 0x00, 0x02, 0x02, 0x32]));
        assert!(!looks_like_tls(b"HTTP/1.1 200 OK"));
    }
}
