//! Psychological captions for sketches: prompt templates, a pluggable
//! captioning client, retries, and a persistent cache.

mod cache;
mod mock;
mod prompt;
mod remote;

pub use cache::CaptionCache;
pub use mock::{
    caption_from_stats, color_usage_phrase, mock_caption, space_utilization_phrase, MockClient,
    SketchStats,
};
pub use prompt::{MentalPrompt, TemplateError, IMAGE_MARKER, REQUIRED_TAGS};
pub use remote::{RemoteClient, TOKEN_ENV};

use crate::sketch::{rasterize, RasterImage, Sketch, SketchError, DEFAULT_RASTER_SIZE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub sketch_hash: String,
    pub template_version: String,
    pub caption_text: String,
    pub provider: Provider,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// What a client receives for one caption.
#[derive(Debug, Clone, Copy)]
pub struct CaptionRequest<'a> {
    pub prompt: &'a str,
    pub image: &'a RasterImage,
    pub sketch: &'a Sketch,
}

/// Failure reported by a [`CaptionClient`].
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Transient; the request may be retried.
    #[error("provider timed out: {0}")]
    Timeout(String),
    /// Permanent; retrying will not help.
    #[error("provider rejected request: {0}")]
    Rejection(String),
}

pub trait CaptionClient: Send + Sync {
    fn provider(&self) -> Provider;
    fn caption(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("provider timed out after {attempts} attempts: {last}")]
    ProviderTimeout { attempts: u32, last: String },
    #[error("provider rejected request: {0}")]
    ProviderRejection(String),
    #[error("caption cache I/O error: {0}")]
    CacheIo(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

/// Exponential backoff: `base`, `2·base`, `4·base`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.pow(retry)
    }
}

/// Hex SHA-256 of the raw 96×96 raster container.
pub fn sketch_hash(sketch: &Sketch) -> Result<String, SketchError> {
    let raster = rasterize(sketch, DEFAULT_RASTER_SIZE, DEFAULT_RASTER_SIZE)?;
    Ok(raster_hash(&raster))
}

pub fn raster_hash(raster: &RasterImage) -> String {
    hex::encode(Sha256::digest(raster.to_raw_bytes()))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Call `client` with retries on [`ProviderError::Timeout`].
pub fn call_with_retry(
    client: &dyn CaptionClient,
    request: &CaptionRequest<'_>,
    policy: &RetryPolicy,
) -> Result<String, CaptionError> {
    let mut attempt = 0;
    loop {
        match client.caption(request) {
            Ok(text) => return Ok(text),
            Err(ProviderError::Rejection(msg)) => return Err(CaptionError::ProviderRejection(msg)),
            Err(ProviderError::Timeout(msg)) => {
                if attempt == policy.retries {
                    return Err(CaptionError::ProviderTimeout {
                        attempts: attempt + 1,
                        last: msg,
                    });
                }
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
        }
    }
}

/// Cache-first caption lookup; on a miss the client is called and the record
/// persisted before returning.
pub fn generate_caption(
    sketch: &Sketch,
    prompt: &MentalPrompt,
    client: &dyn CaptionClient,
    cache: &CaptionCache,
    policy: &RetryPolicy,
) -> Result<CaptionRecord, CaptionError> {
    let rendered = prompt.render()?;
    let image = rasterize(sketch, DEFAULT_RASTER_SIZE, DEFAULT_RASTER_SIZE)?;
    let hash = raster_hash(&image);
    if let Some(hit) = cache.get(&hash, &prompt.template_version) {
        return Ok(hit);
    }
    let request = CaptionRequest {
        prompt: &rendered,
        image: &image,
        sketch,
    };
    let text = call_with_retry(client, &request, policy)?;
    let record = CaptionRecord {
        sketch_hash: hash,
        template_version: prompt.template_version.clone(),
        caption_text: text,
        provider: client.provider(),
        created_at: now_unix(),
    };
    cache.insert(record)
}

/// Caption many sketches with at most `concurrency` provider calls in flight.
/// Results come back in input order.
pub fn caption_batch(
    sketches: &[Sketch],
    prompt: &MentalPrompt,
    client: &dyn CaptionClient,
    cache: &CaptionCache,
    policy: &RetryPolicy,
    concurrency: usize,
) -> Vec<Result<CaptionRecord, CaptionError>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<CaptionRecord, CaptionError>>>> =
        sketches.iter().map(|_| Mutex::new(None)).collect();
    let workers = concurrency.clamp(1, sketches.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= sketches.len() {
                    break;
                }
                let result = generate_caption(&sketches[i], prompt, client, cache, policy);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
