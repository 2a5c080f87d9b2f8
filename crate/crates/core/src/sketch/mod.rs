//! Vector sketch model: ordered, timestamped strokes on a 512×512 canvas.
//!
//! A [`Sketch`] can only be built through [`Sketch::new`] or
//! [`parse_sketch_json`], both of which enforce the stroke invariants, so
//! every value of the type is valid by construction.

mod decompose;
mod raster;

pub use decompose::{cumulative_counts, decompose, SubSketchSequence};
pub use raster::{rasterize, RasterImage, RAW_HEADER_LEN};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Logical canvas edge length in canvas units.
pub const CANVAS_SIZE: u32 = 512;

/// Number of cumulative sub-sketches produced by [`decompose`].
pub const SUB_SKETCH_COUNT: usize = 12;

/// Default encoder input resolution.
pub const DEFAULT_RASTER_SIZE: u32 = 96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("sketch has no strokes")]
    EmptySketch,
    #[error("raster size {width}x{height} is below the 16x16 minimum")]
    RasterTooSmall { width: u32, height: u32 },
    #[error("malformed raw image: {0}")]
    RawImage(String),
}

impl SketchError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SketchError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<[f64; 2]>,
    pub color: [u8; 3],
    pub width: f64,
    pub t_start: u64,
    pub t_end: u64,
}

impl Stroke {
    fn validate(&self, path: &str) -> Result<(), SketchError> {
        if self.points.is_empty() {
            return Err(SketchError::schema(
                format!("{path}.points"),
                "stroke must contain at least one point",
            ));
        }
        let limit = f64::from(CANVAS_SIZE);
        for (k, [x, y]) in self.points.iter().enumerate() {
            let inside = |v: f64| v.is_finite() && (0.0..=limit).contains(&v);
            if !inside(*x) || !inside(*y) {
                return Err(SketchError::schema(
                    format!("{path}.points[{k}]"),
                    format!("coordinate ({x}, {y}) outside [0, {limit}]"),
                ));
            }
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(SketchError::schema(
                format!("{path}.width"),
                "width must be a positive number",
            ));
        }
        if self.t_start > self.t_end {
            return Err(SketchError::schema(
                format!("{path}.t_end"),
                format!("t_end {} precedes t_start {}", self.t_end, self.t_start),
            ));
        }
        Ok(())
    }
}

/// An ordered list of strokes; order is drawing order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sketch {
    sketch_id: String,
    canvas_size: u32,
    strokes: Vec<Stroke>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchDoc {
    sketch_id: String,
    canvas_size: u32,
    strokes: Vec<Stroke>,
}

impl Sketch {
    pub fn new(sketch_id: impl Into<String>, strokes: Vec<Stroke>) -> Result<Self, SketchError> {
        if strokes.is_empty() {
            return Err(SketchError::EmptySketch);
        }
        let mut previous_start = 0;
        for (i, stroke) in strokes.iter().enumerate() {
            let path = format!("strokes[{i}]");
            stroke.validate(&path)?;
            if stroke.t_start < previous_start {
                return Err(SketchError::schema(
                    format!("{path}.t_start"),
                    "t_start ordering: strokes must be in non-decreasing start time",
                ));
            }
            previous_start = stroke.t_start;
        }
        Ok(Sketch {
            sketch_id: sketch_id.into(),
            canvas_size: CANVAS_SIZE,
            strokes,
        })
    }

    pub fn id(&self) -> &str {
        &self.sketch_id
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    /// Total number of strokes (always ≥ 1).
    pub fn stroke_count(&self) -> usize {
        self.strokes.len()
    }

    /// Sketch made of the first `count` strokes. `count` must be in `1..=stroke_count`.
    pub(crate) fn prefix(&self, count: usize, sketch_id: String) -> Sketch {
        debug_assert!(count >= 1 && count <= self.strokes.len());
        Sketch {
            sketch_id,
            canvas_size: CANVAS_SIZE,
            strokes: self.strokes[..count].to_vec(),
        }
    }

    pub fn distinct_colors(&self) -> usize {
        self.strokes
            .iter()
            .map(|s| s.color)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Area of the axis-aligned bounding box of all points, as a fraction of the canvas.
    pub fn bounding_box_fraction(&self) -> f64 {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in self.strokes.iter().flat_map(|s| s.points.iter()) {
            for axis in 0..2 {
                min[axis] = min[axis].min(p[axis]);
                max[axis] = max[axis].max(p[axis]);
            }
        }
        let canvas = f64::from(CANVAS_SIZE);
        ((max[0] - min[0]) * (max[1] - min[1])) / (canvas * canvas)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sketch serialization cannot fail")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("sketch serialization cannot fail")
    }
}

impl<'de> Deserialize<'de> for Sketch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = SketchDoc::deserialize(deserializer)?;
        Sketch::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

impl Sketch {
    fn from_doc(doc: SketchDoc) -> Result<Self, SketchError> {
        if doc.canvas_size != CANVAS_SIZE {
            return Err(SketchError::schema(
                "canvas_size",
                format!("expected {CANVAS_SIZE}, found {}", doc.canvas_size),
            ));
        }
        Sketch::new(doc.sketch_id, doc.strokes)
    }
}

/// Parse one sketch document, reporting the JSON path of the first problem.
pub fn parse_sketch_json(text: &[u8]) -> Result<Sketch, SketchError> {
    let de = &mut serde_json::Deserializer::from_slice(text);
    let doc: SketchDoc = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        SketchError::schema(path, err.into_inner().to_string())
    })?;
    Sketch::from_doc(doc)
}

/// Parse a newline-delimited corpus of sketch documents. Blank lines are skipped.
pub fn parse_sketch_corpus(text: &str) -> Result<Vec<Sketch>, SketchError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            parse_sketch_json(line.as_bytes()).map_err(|err| match err {
                SketchError::Schema { path, message } => {
                    SketchError::schema(format!("line {}: {path}", n + 1), message)
                }
                other => other,
            })
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    const MINIMAL: &str = r#"{"sketch_id":"a","canvas_size":512,"strokes":[{"points":[[1,2],[3,4]],"color":[0,0,0],"width":2,"t_start":0,"t_end":5}]}"#;

    #[test]
    fn minimal_document_parses() {
        let sketch = parse_sketch_json(MINIMAL.as_bytes()).unwrap();
        assert_eq!(sketch.stroke_count(), 1);
        assert_eq!(sketch.id(), "a");
    }

    #[test]
    fn out_of_order_strokes_are_rejected() {
        let doc = r#"{"sketch_id":"a","canvas_size":512,"strokes":[
            {"points":[[1,2]],"color":[0,0,0],"width":2,"t_start":50,"t_end":60},
            {"points":[[1,2]],"color":[0,0,0],"width":2,"t_start":10,"t_end":20}]}"#;
        match parse_sketch_json(doc.as_bytes()) {
            Err(SketchError::Schema { path, message }) => {
                assert_eq!(path, "strokes[1].t_start");
                assert!(message.contains("t_start ordering"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stroke_list_is_empty_sketch() {
        let doc = r#"{"sketch_id":"a","canvas_size":512,"strokes":[]}"#;
        assert_eq!(
            parse_sketch_json(doc.as_bytes()),
            Err(SketchError::EmptySketch)
        );
    }

    #[test]
    fn schema_errors_carry_field_path() {
        let doc = r#"{"sketch_id":"a","canvas_size":512,"strokes":[{"points":[[1,2]],"color":[0,0,300],"width":2,"t_start":0,"t_end":5}]}"#;
        match parse_sketch_json(doc.as_bytes()) {
            Err(SketchError::Schema { path, .. }) => assert_eq!(path, "strokes[0].color[2]"),
            other => panic!("unexpected {other:?}"),
        }
        let doc = r#"{"sketch_id":"a","canvas_size":512,"strokes":[{"points":[[1,600]],"color":[0,0,0],"width":2,"t_start":0,"t_end":5}]}"#;
        match parse_sketch_json(doc.as_bytes()) {
            Err(SketchError::Schema { path, .. }) => assert_eq!(path, "strokes[0].points[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_stroke_fields() {
        let bad_width = Stroke {
            width: 0.0,
            ..stroke(&[(1.0, 1.0)], 0)
        };
        assert!(matches!(
            Sketch::new("x", vec![bad_width]),
            Err(SketchError::Schema { .. })
        ));
        let reversed_time = Stroke {
            t_start: 10,
            t_end: 5,
            ..stroke(&[(1.0, 1.0)], 0)
        };
        assert!(matches!(
            Sketch::new("x", vec![reversed_time]),
            Err(SketchError::Schema { .. })
        ));
        let no_points = Stroke {
            points: vec![],
            ..stroke(&[(1.0, 1.0)], 0)
        };
        assert!(matches!(
            Sketch::new("x", vec![no_points]),
            Err(SketchError::Schema { .. })
        ));
    }

    #[test]
    fn wrong_canvas_size_rejected() {
        let doc = MINIMAL.replace("512", "256");
        assert!(matches!(
            parse_sketch_json(doc.as_bytes()),
            Err(SketchError::Schema { path, .. }) if path == "canvas_size"
        ));
    }

    #[test]
    fn serialize_round_trip() {
        let sketch = sketch_with_strokes(5);
        let again = parse_sketch_json(sketch.to_json().as_bytes()).unwrap();
        assert_eq!(sketch, again);
    }

    #[test]
    fn corpus_lines() {
        let text = format!("{MINIMAL}\n\n{MINIMAL}\n");
        assert_eq!(parse_sketch_corpus(&text).unwrap().len(), 2);
        let broken = format!("{MINIMAL}\n{{\"sketch_id\":1}}\n");
        match parse_sketch_corpus(&broken) {
            Err(SketchError::Schema { path, .. }) => assert!(path.starts_with("line 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bounding_box_and_colors() {
        let mut s = stroke(&[(0.0, 0.0), (256.0, 256.0)], 0);
        let mut t = stroke(&[(10.0, 10.0)], 5);
        t.color = [255, 0, 0];
        s.color = [0, 0, 0];
        let sketch = Sketch::new("b", vec![s, t]).unwrap();
        assert_eq!(sketch.distinct_colors(), 2);
        assert!((sketch.bounding_box_fraction() - 0.25).abs() < 1e-12);
    }
}
