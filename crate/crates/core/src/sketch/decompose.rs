use super::{Sketch, SketchError, SUB_SKETCH_COUNT};
use serde::Serialize;

/// The 12 cumulative prefixes of a sketch's stroke list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubSketchSequence {
    pub parent_id: String,
    pub cumulative_counts: [usize; SUB_SKETCH_COUNT],
    pub sub_sketches: Vec<Sketch>,
}

/// Stroke counts of the 12 sub-sketches for a sketch of `stroke_count` strokes.
///
/// With `step = ⌊n / 12⌋`: when `step < 1` frame `j` holds `min(j, n)` strokes;
/// otherwise frame `j < 12` holds `j · step` and frame 12 holds all `n`. The
/// trailing strokes of a non-divisible `n` therefore only appear in the last frame.
pub fn cumulative_counts(stroke_count: usize) -> Result<[usize; SUB_SKETCH_COUNT], SketchError> {
    if stroke_count == 0 {
        return Err(SketchError::EmptySketch);
    }
    let step = stroke_count / SUB_SKETCH_COUNT;
    let mut counts = [0; SUB_SKETCH_COUNT];
    for (idx, slot) in counts.iter_mut().enumerate() {
        let j = idx + 1;
        *slot = if step < 1 {
            j.min(stroke_count)
        } else if j < SUB_SKETCH_COUNT {
            j * step
        } else {
            stroke_count
        };
    }
    Ok(counts)
}

pub fn decompose(sketch: &Sketch) -> Result<SubSketchSequence, SketchError> {
    let counts = cumulative_counts(sketch.stroke_count())?;
    let sub_sketches = counts
        .iter()
        .enumerate()
        .map(|(idx, &count)| sketch.prefix(count, format!("{}#{:02}", sketch.id(), idx + 1)))
        .collect();
    Ok(SubSketchSequence {
        parent_id: sketch.id().to_string(),
        cumulative_counts: counts,
        sub_sketches,
    })
}
