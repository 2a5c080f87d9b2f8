use super::{CaptionClient, CaptionRequest, Provider, ProviderError};
use crate::sketch::{rasterize, Sketch, DEFAULT_RASTER_SIZE};

/// Summary numbers the mock caption is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchStats {
    pub strokes: usize,
    pub colors: usize,
    /// Fraction of inked pixels at 96×96.
    pub ink_coverage: f64,
    pub bbox_fraction: f64,
}

impl SketchStats {
    pub fn of(sketch: &Sketch) -> Self {
        let raster = rasterize(sketch, DEFAULT_RASTER_SIZE, DEFAULT_RASTER_SIZE)
            .expect("default raster size is valid");
        SketchStats {
            strokes: sketch.stroke_count(),
            colors: sketch.distinct_colors(),
            ink_coverage: raster.ink_coverage(),
            bbox_fraction: sketch.bounding_box_fraction(),
        }
    }
}

pub fn color_usage_phrase(colors: usize) -> &'static str {
    match colors {
        0..=1 => "monochrome",
        2..=3 => "limited",
        4..=5 => "varied",
        _ => "rich",
    }
}

pub fn space_utilization_phrase(bbox_fraction: f64) -> &'static str {
    if bbox_fraction < 0.15 {
        "low"
    } else if bbox_fraction < 0.45 {
        "moderate"
    } else {
        "high"
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

/// Fixed-pattern caption computed from [`SketchStats`].
pub fn mock_caption(sketch: &Sketch) -> String {
    caption_from_stats(&SketchStats::of(sketch))
}

pub fn caption_from_stats(s: &SketchStats) -> String {
    format!(
        "sketch uses {} covering {}% of the canvas with {}. color usage is {}. \
         the drawing spans {}% of the page, so space utilization is {}.",
        plural(s.colors, "color"),
        (s.ink_coverage * 100.0).round() as u32,
        plural(s.strokes, "stroke"),
        color_usage_phrase(s.colors),
        (s.bbox_fraction * 100.0).round() as u32,
        space_utilization_phrase(s.bbox_fraction),
    )
}

/// Offline client answering every request with [`mock_caption`].
#[derive(Debug, Default, Clone, Copy)]
pub struct MockClient;

impl CaptionClient for MockClient {
    fn provider(&self) -> Provider {
        Provider::Mock
    }

    fn caption(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        Ok(mock_caption(request.sketch))
    }
}
