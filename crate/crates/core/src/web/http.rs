use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::header::{CONTENT_TYPE, RETRY_AFTER};
use reqwest::StatusCode;
use serde::Deserialize;
use url::Url;

use super::{FetchedResource, Fetcher, RawResult, RobotsRules, SearchProvider, WebError};
use crate::config::WebConfig;

const RETRY_BASE: Duration = Duration::from_millis(250);

fn build_client(config: &WebConfig) -> Result<Client, WebError> {
    Client::builder()
        .timeout(Duration::from_secs(config.fetch_timeout_secs))
        .user_agent(config.user_agent.clone())
        .build()
        .map_err(|e| WebError::Transport(e.to_string()))
}

/// Sends with retries on connection-level failures only. Timeouts and HTTP
/// errors are returned at once.
fn send_with_retries(
    max_retries: u32,
    mut send: impl FnMut() -> reqwest::Result<Response>,
) -> Result<Response, WebError> {
    let mut attempt = 0;
    loop {
        match send() {
            Ok(resp) => return Ok(resp),
            Err(e) if e.is_connect() && attempt < max_retries => {
                thread::sleep(RETRY_BASE * 2u32.pow(attempt));
                attempt += 1;
            }
            Err(e) => return Err(WebError::Transport(e.to_string())),
        }
    }
}

fn check_status(resp: Response, url: &str) -> Result<Response, WebError> {
    let status = resp.status();
    if status == StatusCode::TOO_MANY_REQUESTS {
        let retry_after = resp
            .headers()
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        return Err(WebError::RateLimited { retry_after });
    }
    if !status.is_success() {
        return Err(WebError::Status {
            url: url.to_string(),
            status: status.as_u16(),
        });
    }
    Ok(resp)
}

/// Live meta-search client: `GET <endpoint>?<param>=<query>` returning either
/// a JSON array of `{title, url, snippet}` or an object with a `results` array.
pub struct HttpSearchProvider {
    client: Client,
    endpoint: Url,
    query_param: String,
    max_retries: u32,
}

impl HttpSearchProvider {
    pub fn new(endpoint: Url, config: &WebConfig) -> Result<Self, WebError> {
        Ok(Self {
            client: build_client(config)?,
            endpoint,
            query_param: config.search_query_param.clone(),
            max_retries: config.max_retries,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SearchResponse {
    List(Vec<RawResult>),
    Wrapped { results: Vec<RawResult> },
}

impl SearchProvider for HttpSearchProvider {
    fn search(&self, query: &str) -> Result<Vec<RawResult>, WebError> {
        let mut url = self.endpoint.clone();
        url.query_pairs_mut().append_pair(&self.query_param, query);
        let resp = send_with_retries(self.max_retries, || self.client.get(url.clone()).send())?;
        let resp = check_status(resp, url.as_str())?;
        let body: SearchResponse = resp.json().map_err(|e| WebError::Provider(e.to_string()))?;
        Ok(match body {
            SearchResponse::List(r) | SearchResponse::Wrapped { results: r } => r,
        })
    }
}

/// Polite HTTP fetcher: one request at a time per host across all callers,
/// explicit user agent, request timeout, optional robots.txt compliance.
pub struct HttpFetcher {
    client: Client,
    user_agent: String,
    respect_robots: bool,
    max_retries: u32,
    host_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    robots: Mutex<HashMap<String, Arc<RobotsRules>>>,
}

impl HttpFetcher {
    pub fn new(config: &WebConfig) -> Result<Self, WebError> {
        Ok(Self {
            client: build_client(config)?,
            user_agent: config.user_agent.clone(),
            respect_robots: config.respect_robots,
            max_retries: config.max_retries,
            host_locks: Mutex::new(HashMap::new()),
            robots: Mutex::new(HashMap::new()),
        })
    }

    fn host_lock(&self, origin: &str) -> Arc<Mutex<()>> {
        let mut locks = self.host_locks.lock().unwrap_or_else(|p| p.into_inner());
        Arc::clone(locks.entry(origin.to_string()).or_default())
    }

    /// Must be called with the host lock held.
    fn robots_for(&self, origin: &str) -> Arc<RobotsRules> {
        if let Some(r) = self.robots.lock().unwrap_or_else(|p| p.into_inner()).get(origin) {
            return Arc::clone(r);
        }
        let token = self.user_agent.split('/').next().unwrap_or("").to_string();
        let rules = match self.client.get(format!("{origin}/robots.txt")).send() {
            Ok(resp) if resp.status().is_success() => {
                RobotsRules::parse(&resp.text().unwrap_or_default(), &token)
            }
            // Missing or unreachable robots.txt imposes no restrictions.
            _ => RobotsRules::default(),
        };
        let rules = Arc::new(rules);
        self.robots
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(origin.to_string(), Arc::clone(&rules));
        rules
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedResource, WebError> {
        let parsed = Url::parse(url).map_err(|e| WebError::InvalidUrl(format!("{url}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(WebError::InvalidUrl(url.to_string()));
        }
        let origin = parsed.origin().ascii_serialization();
        let lock = self.host_lock(&origin);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());

        if self.respect_robots && !self.robots_for(&origin).allows(parsed.path()) {
            return Err(WebError::RobotsDisallowed(url.to_string()));
        }
        let resp = send_with_retries(self.max_retries, || self.client.get(parsed.clone()).send())?;
        let resp = check_status(resp, url)?;
        let final_url = resp.url().to_string();
        let content_type = resp
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp.bytes().map_err(|e| WebError::Transport(e.to_string()))?.to_vec();
        Ok(FetchedResource {
            url: final_url,
            content_type,
            body,
        })
    }
}
