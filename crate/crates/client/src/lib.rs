//! Thin async client for the cosentinel HTTP API.

use cosentinel_core::domain::{Assessment, HazardBand, Reading};
use cosentinel_core::geo::Site;
use cosentinel_core::ingest::IngestStats;
use cosentinel_core::protocol::DecodeErrorKind;
use cosentinel_core::report::RenderedReport;
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api {
        status: u16,
        message: String,
        kind: Option<DecodeErrorKind>,
    },
}

impl ClientError {
    /// True for 4xx answers, i.e. the server rejected what we sent.
    pub fn is_client_error(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if (400..500).contains(status))
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    kind: Option<DecodeErrorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextFormat {
    Table,
    Csv,
}

impl TextFormat {
    fn as_str(self) -> &'static str {
        match self {
            TextFormat::Table => "table",
            TextFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        let mut base = base_url.into();
        while base.ends_with('/') {
            base.pop();
        }
        Self {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let (message, kind) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.error, body.kind),
            Err(_) => (text, None),
        };
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
            kind,
        })
    }

    async fn json<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T, ClientError> {
        Ok(Self::check(req.send().await?).await?.json().await?)
    }

    async fn text(&self, req: reqwest::RequestBuilder) -> Result<String, ClientError> {
        Ok(Self::check(req.send().await?).await?.text().await?)
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.text(self.http.get(self.url("/health"))).await.map(drop)
    }

    pub async fn classify(&self, ppm: f64) -> Result<Assessment, ClientError> {
        let req = self.http.get(self.url("/v1/classify")).query(&[("ppm", ppm.to_string())]);
        self.json(req).await
    }

    pub async fn decode(&self, frame: impl Into<String>) -> Result<Reading, ClientError> {
        let req = self.http.post(self.url("/v1/decode")).body(frame.into());
        self.json(req).await
    }

    /// Posts a batch of frame lines; the server appends the valid ones.
    pub async fn ingest_frames(&self, lines: impl Into<Vec<u8>>) -> Result<IngestStats, ClientError> {
        let req = self.http.post(self.url("/v1/frames")).body(lines.into());
        self.json(req).await
    }

    pub async fn report(&self, min_band: HazardBand) -> Result<RenderedReport, ClientError> {
        let req = self
            .http
            .get(self.url("/v1/report"))
            .query(&[("min_band", min_band.name()), ("format", "json")]);
        self.json(req).await
    }

    pub async fn report_text(&self, min_band: HazardBand, format: TextFormat) -> Result<String, ClientError> {
        let req = self
            .http
            .get(self.url("/v1/report"))
            .query(&[("min_band", min_band.name()), ("format", format.as_str())]);
        self.text(req).await
    }

    pub async fn geojson(&self) -> Result<String, ClientError> {
        self.text(self.http.get(self.url("/v1/geojson"))).await
    }

    pub async fn sites(&self) -> Result<Vec<Site>, ClientError> {
        self.json(self.http.get(self.url("/v1/sites"))).await
    }
}
