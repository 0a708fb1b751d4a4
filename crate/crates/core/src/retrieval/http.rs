//! HTTP clients for the academic-graph and preprint-archive APIs.

use std::sync::Arc;
use std::time::Duration;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::Deserialize;

use super::source::PaperSource;
use crate::error::{Error, Result};
use crate::gateway::{BackendProfile, Sleeper, ThreadSleeper};
use crate::model::{unify_paper_id, IdSource, PaperId, PaperRecord};

/// GET with the gateway's retry policy applied to transient statuses.
struct Fetcher {
    client: reqwest::blocking::Client,
    profile: BackendProfile,
    sleeper: Arc<dyn Sleeper>,
    headers: Vec<(String, String)>,
}

impl Fetcher {
    fn new(timeout: Duration, headers: Vec<(String, String)>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("surveyor/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(Self {
            client,
            profile: BackendProfile {
                max_attempts: 5,
                ..BackendProfile::default()
            },
            sleeper: Arc::new(ThreadSleeper),
            headers,
        })
    }

    /// `Ok(None)` on 404.
    fn get(&self, url: &str, query: &[(&str, String)]) -> Result<Option<String>> {
        let mut last = String::new();
        for attempt in 1..=self.profile.max_attempts {
            let mut req = self.client.get(url).query(query);
            for (k, v) in &self.headers {
                req = req.header(k.as_str(), v.as_str());
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if status == 404 {
                        return Ok(None);
                    }
                    if resp.status().is_success() {
                        return resp
                            .text()
                            .map(Some)
                            .map_err(|e| Error::Retrieval(format!("{url}: {e}")));
                    }
                    last = format!("status {status}");
                    if !self.profile.is_retryable(status) {
                        break;
                    }
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < self.profile.max_attempts {
                self.sleeper.sleep(self.profile.backoff_delay(attempt));
            }
        }
        Err(Error::Retrieval(format!("{url}: {last}")))
    }
}

/// Academic-graph API client (Semantic Scholar graph v1).
pub struct SemanticScholarSource {
    base: String,
    fetch: Fetcher,
}

const S2_FIELDS: &str = "paperId,externalIds,title,abstract,tldr,citationCount,openAccessPdf";

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct S2Paper {
    paper_id: Option<String>,
    #[serde(default)]
    external_ids: Option<std::collections::HashMap<String, serde_json::Value>>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    tldr: Option<S2Tldr>,
    citation_count: Option<u64>,
    open_access_pdf: Option<S2Pdf>,
}

#[derive(Deserialize)]
struct S2Tldr {
    text: Option<String>,
}

#[derive(Deserialize)]
struct S2Pdf {
    url: Option<String>,
}

#[derive(Deserialize)]
struct S2Search {
    #[serde(default)]
    data: Vec<S2Paper>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct S2Edge {
    citing_paper: Option<S2Paper>,
    cited_paper: Option<S2Paper>,
}

#[derive(Deserialize)]
struct S2Edges {
    #[serde(default)]
    data: Vec<S2Edge>,
}

impl S2Paper {
    fn into_record(self) -> Option<PaperRecord> {
        let arxiv = self
            .external_ids
            .as_ref()
            .and_then(|m| m.get("ArXiv"))
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let id = unify_paper_id(arxiv.as_deref(), self.paper_id.as_deref()).ok()?;
        let title = self.title.filter(|t| !t.trim().is_empty())?;
        let mut rec = PaperRecord::new(id, title);
        rec.abstract_text = self.abstract_text.unwrap_or_default();
        rec.tldr = self.tldr.and_then(|t| t.text).unwrap_or_default();
        rec.citation_count = self.citation_count.unwrap_or(0);
        if let Some(url) = self.open_access_pdf.and_then(|p| p.url) {
            rec.metadata.insert("pdf_url".into(), url);
        }
        if let Some(g) = self.paper_id {
            rec.metadata.insert("graph_id".into(), g);
        }
        Some(rec)
    }
}

impl SemanticScholarSource {
    /// An API key, when `key_env` is set in the environment, raises rate limits.
    pub fn new(base: &str, key_env: Option<&str>, timeout: Duration) -> Result<Self> {
        let headers = key_env
            .and_then(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty())
            .map(|k| vec![("x-api-key".to_string(), k)])
            .unwrap_or_default();
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            fetch: Fetcher::new(timeout, headers)?,
        })
    }

    fn api_id(id: &PaperId) -> String {
        match id.source() {
            IdSource::PreprintArchive => format!("arXiv:{}", id.as_str()),
            IdSource::AcademicGraph => id.as_str().to_string(),
        }
    }

    fn edges(&self, id: &PaperId, kind: &str, limit: usize) -> Result<Vec<PaperRecord>> {
        let url = format!("{}/paper/{}/{kind}", self.base, Self::api_id(id));
        let Some(body) = self.fetch.get(
            &url,
            &[("fields", S2_FIELDS.into()), ("limit", limit.min(1000).to_string())],
        )?
        else {
            return Ok(Vec::new());
        };
        let edges: S2Edges = serde_json::from_str(&body)
            .map_err(|e| Error::Retrieval(format!("bad {kind} response: {e}")))?;
        Ok(edges
            .data
            .into_iter()
            .filter_map(|e| e.citing_paper.or(e.cited_paper))
            .filter_map(S2Paper::into_record)
            .collect())
    }
}

impl PaperSource for SemanticScholarSource {
    fn name(&self) -> String {
        "semantic-scholar".into()
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>> {
        let url = format!("{}/paper/search", self.base);
        let body = self
            .fetch
            .get(
                &url,
                &[
                    ("query", query.to_string()),
                    ("limit", limit.clamp(1, 100).to_string()),
                    ("fields", S2_FIELDS.into()),
                ],
            )?
            .unwrap_or_else(|| "{}".into());
        let parsed: S2Search = serde_json::from_str(&body)
            .map_err(|e| Error::Retrieval(format!("bad search response: {e}")))?;
        Ok(parsed.data.into_iter().filter_map(S2Paper::into_record).collect())
    }

    fn citations(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>> {
        self.edges(id, "citations", limit)
    }

    fn references(&self, id: &PaperId, limit: usize) -> Result<Vec<PaperRecord>> {
        self.edges(id, "references", limit)
    }

    fn lookup(&self, id: &PaperId) -> Result<Option<PaperRecord>> {
        let url = format!("{}/paper/{}", self.base, Self::api_id(id));
        let Some(body) = self.fetch.get(&url, &[("fields", S2_FIELDS.into())])? else {
            return Ok(None);
        };
        let p: S2Paper = serde_json::from_str(&body)
            .map_err(|e| Error::Retrieval(format!("bad lookup response: {e}")))?;
        Ok(p.into_record())
    }
}

/// Preprint-archive client (arXiv Atom API). It has no citation graph, so
/// neighbor queries return nothing.
pub struct ArxivSource {
    base: String,
    fetch: Fetcher,
}

impl ArxivSource {
    pub fn new(base: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            fetch: Fetcher::new(timeout, Vec::new())?,
        })
    }

    fn query(&self, params: &[(&str, String)]) -> Result<Vec<PaperRecord>> {
        let body = self
            .fetch
            .get(&format!("{}/query", self.base), params)?
            .unwrap_or_default();
        parse_atom(&body)
    }
}

fn strip_version(id: &str) -> String {
    match id.rsplit_once('v') {
        Some((base, ver)) if !ver.is_empty() && ver.chars().all(|c| c.is_ascii_digit()) => {
            base.to_string()
        }
        _ => id.to_string(),
    }
}

/// Extracts `(id, title, summary)` entries from an Atom feed.
pub fn parse_atom(xml: &str) -> Result<Vec<PaperRecord>> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut out = Vec::new();
    let mut in_entry = false;
    let mut field: Option<String> = None;
    let (mut id, mut title, mut summary) = (String::new(), String::new(), String::new());
    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                if name == "entry" {
                    in_entry = true;
                    id.clear();
                    title.clear();
                    summary.clear();
                } else if in_entry {
                    field = Some(name);
                }
            }
            Ok(Event::Text(t)) if in_entry => {
                let text = t
                    .unescape()
                    .map_err(|e| Error::Retrieval(format!("bad atom text: {e}")))?;
                match field.as_deref() {
                    Some("id") => id.push_str(&text),
                    Some("title") => title.push_str(&text),
                    Some("summary") => summary.push_str(&text),
                    _ => {}
                }
            }
            Ok(Event::End(e)) => {
                let name = e.local_name();
                if name.as_ref() == b"entry" {
                    in_entry = false;
                    let short = strip_version(id.rsplit("/abs/").next().unwrap_or(&id));
                    if let (Ok(pid), false) = (
                        PaperId::new(short, IdSource::PreprintArchive),
                        title.trim().is_empty(),
                    ) {
                        let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
                        out.push(
                            PaperRecord::new(pid, squash(&title)).with_abstract(squash(&summary)),
                        );
                    }
                } else {
                    field = None;
                }
            }
            Ok(Event::Eof) => break,
            Err(e) => return Err(Error::Retrieval(format!("bad atom feed: {e}"))),
            _ => {}
        }
    }
    Ok(out)
}

impl PaperSource for ArxivSource {
    fn name(&self) -> String {
        "arxiv".into()
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>> {
        self.query(&[
            ("search_query", format!("all:{query}")),
            ("start", "0".into()),
            ("max_results", limit.to_string()),
        ])
    }

    fn citations(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
        Ok(Vec::new())
    }

    fn references(&self, _: &PaperId, _: usize) -> Result<Vec<PaperRecord>> {
        Ok(Vec::new())
    }

    fn lookup(&self, id: &PaperId) -> Result<Option<PaperRecord>> {
        Ok(self
            .query(&[("id_list", id.as_str().to_string())])?
            .into_iter()
            .next())
    }
}
