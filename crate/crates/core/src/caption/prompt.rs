use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder replaced by the image marker.
pub const IMAGE_PLACEHOLDER: &str = "image";
/// Placeholder replaced by the comma-separated element tags.
pub const ELEMENTS_PLACEHOLDER: &str = "elements";
/// Marker standing in for the attached image inside the rendered text.
pub const IMAGE_MARKER: &str = "<image>";

pub const REQUIRED_TAGS: [&str; 2] = ["color usage", "space utilization"];

const DEFAULT_TEMPLATE: &str = include_str!("../../assets/prompts/v1.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown placeholder `{{{0}}}`")]
    UnknownPlaceholder(String),
    #[error("unbalanced brace at byte {0}")]
    UnbalancedBrace(usize),
    #[error("duplicate element tag `{0}`")]
    DuplicateTag(String),
    #[error("required element tag `{0}` missing")]
    MissingRequiredTag(String),
    #[error("rendered prompt does not contain tag `{0}`")]
    TagNotRendered(String),
    #[error("empty template version")]
    EmptyVersion,
}

/// A versioned prompt template steering the captioner toward psychological
/// elements of the drawing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentalPrompt {
    pub template_version: String,
    pub template_text: String,
    pub element_tags: Vec<String>,
}

impl Default for MentalPrompt {
    fn default() -> Self {
        MentalPrompt {
            template_version: "v1".into(),
            template_text: DEFAULT_TEMPLATE.trim_end().to_string(),
            element_tags: [
                "color usage",
                "space utilization",
                "line quality",
                "figure presence",
                "scene completeness",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn parse(template: &str) -> Result<Vec<Piece<'_>>, TemplateError> {
    let bytes = template.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = template[i + 1..]
                    .find(['{', '}'])
                    .map(|off| i + 1 + off)
                    .filter(|&j| bytes[j] == b'}')
                    .ok_or(TemplateError::UnbalancedBrace(i))?;
                pieces.push(Piece::Text(&template[start..i]));
                pieces.push(Piece::Placeholder(&template[i + 1..close]));
                i = close + 1;
                start = i;
            }
            b'}' => return Err(TemplateError::UnbalancedBrace(i)),
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&template[start..]));
    Ok(pieces)
}

impl MentalPrompt {
    /// Check tags and template syntax without rendering.
    pub fn validate(&self) -> Result<(), TemplateError> {
        self.render().map(|_| ())
    }

    pub fn render(&self) -> Result<String, TemplateError> {
        if self.template_version.trim().is_empty() {
            return Err(TemplateError::EmptyVersion);
        }
        for (i, tag) in self.element_tags.iter().enumerate() {
            if self.element_tags[..i].contains(tag) {
                return Err(TemplateError::DuplicateTag(tag.clone()));
            }
        }
        for req in REQUIRED_TAGS {
            if !self.element_tags.iter().any(|t| t == req) {
                return Err(TemplateError::MissingRequiredTag(req.into()));
            }
        }
        let mut out = String::with_capacity(self.template_text.len() + 64);
        for piece in parse(&self.template_text)? {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Placeholder(IMAGE_PLACEHOLDER) => out.push_str(IMAGE_MARKER),
                Piece::Placeholder(ELEMENTS_PLACEHOLDER) => out.push_str(&self.element_tags.join(", ")),
                Piece::Placeholder(other) => return Err(TemplateError::UnknownPlaceholder(other.into())),
            }
        }
        if let Some(tag) = self.element_tags.iter().find(|t| !out.contains(t.as_str())) {
            return Err(TemplateError::TagNotRendered(tag.clone()));
        }
        Ok(out)
    }
}
