use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use url::Url;

use super::{GatewayError, GenerationBackend, GenerationRequest};

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Deserialize)]
struct Reply {
    #[serde(alias = "response")]
    text: String,
}

/// HTTP provider backend (see the module docs for the wire contract).
pub struct HttpBackend {
    client: Client,
    url: Url,
    timeout: Duration,
}

impl HttpBackend {
    pub fn new(url: Url, timeout: Duration) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport {
                model: String::new(),
                message: e.to_string(),
            })?;
        Ok(Self { client, url, timeout })
    }
}

impl GenerationBackend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let model = request.model_id.clone();
        let body = Body {
            model: &request.model_id,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stream: false,
        };
        let resp = self.client.post(self.url.clone()).json(&body).send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout {
                    model: model.clone(),
                    after: self.timeout,
                }
            } else {
                GatewayError::Transport {
                    model: model.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        match resp.status() {
            StatusCode::NOT_FOUND => return Err(GatewayError::ModelNotFound(model)),
            s if !s.is_success() => {
                let message = format!("HTTP {s}: {}", resp.text().unwrap_or_default());
                return Err(GatewayError::Model { model, message });
            }
            _ => {}
        }
        let reply: Reply = resp.json().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout {
                    model: model.clone(),
                    after: self.timeout,
                }
            } else {
                GatewayError::Model {
                    model: model.clone(),
                    message: format!("malformed response: {e}"),
                }
            }
        })?;
        Ok(reply.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// One-shot HTTP server returning `body` with `status`; yields the request body.
    fn serve_once(status: &'static str, body: &'static str) -> (Url, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url: Url = format!("http://{}/generate", listener.local_addr().unwrap()).parse().unwrap();
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(buf).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn wire_contract() {
        let (url, server) = serve_once("200 OK", r#"{"text": "refined question?"}"#);
        let backend = HttpBackend::new(url, Duration::from_secs(5)).unwrap();
        let req = GenerationRequest::new("Refine: x", 0.1, 32, "small-1b").unwrap();
        assert_eq!(backend.complete(&req).unwrap(), "refined question?");
        let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()).unwrap();
        assert_eq!(sent["model"], "small-1b");
        assert_eq!(sent["temperature"], 0.1);
        assert_eq!(sent["max_tokens"], 32);
        assert_eq!(sent["stream"], false);
    }

    #[test]
    fn response_alias_and_404() {
        let (url, server) = serve_once("200 OK", r#"{"response": "ok"}"#);
        let req = GenerationRequest::new("p", 0.1, 8, "m").unwrap();
        assert_eq!(HttpBackend::new(url, Duration::from_secs(5)).unwrap().complete(&req).unwrap(), "ok");
        server.join().unwrap();

        let (url, server) = serve_once("404 Not Found", r#"{}"#);
        let err = HttpBackend::new(url, Duration::from_secs(5)).unwrap().complete(&req).unwrap_err();
        assert_eq!(err, GatewayError::ModelNotFound("m".into()));
        server.join().unwrap();
    }
}
