//! The interrogation prompt bank.
//!
//! Nine built-in prompts each probe one class of visual artifact. Sets can be
//! loaded from JSON files and narrowed to a subset of categories for the
//! per-category ablation.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

/// Version string of [`builtin_prompt_set`].
pub const BUILTIN_VERSION: &str = "builtin-v1";

/// Default text of the single-question baseline prompt.
pub const DEFAULT_YES_NO_TEXT: &str = "Is this image a real photograph or an AI-generated/manipulated image? Answer with exactly one word: REAL or FAKE.";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptCategory {
    LightingAndShadows,
    TextureAndSkinDetails,
    SymmetryAndProportions,
    ReflectionsAndHighlights,
    FacialFeaturesAndExpression,
    FacialHair,
    EyesAndPupils,
    BackgroundAndDepthPerception,
    OverallRealism,
    Custom(String),
}

impl PromptCategory {
    /// The nine built-in categories in bank order.
    pub const BUILTIN: [PromptCategory; 9] = [
        PromptCategory::LightingAndShadows,
        PromptCategory::TextureAndSkinDetails,
        PromptCategory::SymmetryAndProportions,
        PromptCategory::ReflectionsAndHighlights,
        PromptCategory::FacialFeaturesAndExpression,
        PromptCategory::FacialHair,
        PromptCategory::EyesAndPupils,
        PromptCategory::BackgroundAndDepthPerception,
        PromptCategory::OverallRealism,
    ];

    /// snake_case slug; also the id of the built-in prompt of this category.
    pub fn slug(&self) -> &str {
        match self {
            PromptCategory::LightingAndShadows => "lighting_and_shadows",
            PromptCategory::TextureAndSkinDetails => "texture_and_skin_details",
            PromptCategory::SymmetryAndProportions => "symmetry_and_proportions",
            PromptCategory::ReflectionsAndHighlights => "reflections_and_highlights",
            PromptCategory::FacialFeaturesAndExpression => "facial_features_and_expression",
            PromptCategory::FacialHair => "facial_hair",
            PromptCategory::EyesAndPupils => "eyes_and_pupils",
            PromptCategory::BackgroundAndDepthPerception => "background_and_depth_perception",
            PromptCategory::OverallRealism => "overall_realism",
            PromptCategory::Custom(tag) => tag,
        }
    }

    /// Inverse of [`slug`](Self::slug); unrecognised slugs become `Custom`.
    pub fn from_slug(slug: &str) -> PromptCategory {
        Self::BUILTIN
            .iter()
            .find(|c| c.slug() == slug)
            .cloned()
            .unwrap_or_else(|| PromptCategory::Custom(slug.to_string()))
    }

    /// Human-readable heading used in summaries and ablation tables.
    pub fn display_name(&self) -> &str {
        match self {
            PromptCategory::LightingAndShadows => "Lighting and Shadows",
            PromptCategory::TextureAndSkinDetails => "Texture and Skin Details",
            PromptCategory::SymmetryAndProportions => "Symmetry and Proportions",
            PromptCategory::ReflectionsAndHighlights => "Reflections and Highlights",
            PromptCategory::FacialFeaturesAndExpression => "Facial Features and Expression",
            PromptCategory::FacialHair => "Facial Hair",
            PromptCategory::EyesAndPupils => "Eyes and Pupils",
            PromptCategory::BackgroundAndDepthPerception => "Background and Depth Perception",
            PromptCategory::OverallRealism => "Overall Realism of the Face",
            PromptCategory::Custom(tag) => tag,
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self, PromptCategory::Custom(_))
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl Serialize for PromptCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.slug())
    }
}

impl<'de> Deserialize<'de> for PromptCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let slug = String::deserialize(deserializer)?;
        Ok(PromptCategory::from_slug(&slug))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub category: PromptCategory,
    pub text: String,
    /// 1-based position within the owning set.
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub prompts: Vec<Prompt>,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("reading prompt file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed prompt file at line {line}: {reason}")]
    MalformedPromptFile { line: usize, reason: String },
    #[error("invalid prompt `{id}`: {reason}")]
    InvalidPrompt { id: String, reason: String },
    #[error("no prompt has category `{0}`")]
    UnknownCategory(String),
    #[error("category selection is empty")]
    EmptySelection,
}

fn check_text(text: &str) -> Result<(), &'static str> {
    if text.trim().is_empty() {
        return Err("text is empty");
    }
    if text.chars().any(|c| c.is_control() && !c.is_whitespace()) {
        return Err("text contains control characters");
    }
    Ok(())
}

impl PromptSet {
    /// Builds a set from `(id, category, text)` triples, assigning ordinals in order.
    pub fn new<I>(version: impl Into<String>, entries: I) -> Result<PromptSet, PromptError>
    where
        I: IntoIterator<Item = (String, PromptCategory, String)>,
    {
        let mut seen = HashSet::new();
        let mut prompts = Vec::new();
        for (idx, (id, category, text)) in entries.into_iter().enumerate() {
            if id.is_empty() {
                return Err(PromptError::InvalidPrompt { id, reason: "id is empty".into() });
            }
            if let Err(reason) = check_text(&text) {
                return Err(PromptError::InvalidPrompt { id, reason: reason.into() });
            }
            if !seen.insert(id.clone()) {
                return Err(PromptError::InvalidPrompt { id, reason: "duplicate id".into() });
            }
            prompts.push(Prompt { id, category, text, ordinal: idx as u32 + 1 });
        }
        Ok(PromptSet { version: version.into(), prompts })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn by_ordinal(&self, ordinal: u32) -> Option<&Prompt> {
        self.prompts.get(ordinal.checked_sub(1)? as usize)
    }

    /// Renders the set in the prompt-file format.
    pub fn to_file_json(&self) -> String {
        let file = PromptFile {
            version: self.version.clone(),
            prompts: self
                .prompts
                .iter()
                .map(|p| PromptEntry {
                    id: p.id.clone(),
                    category: p.category.slug().to_string(),
                    text: p.text.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("prompt file serializes")
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_file_json() + "\n")
    }
}

const BUILTIN_TEXTS: [&str; 9] = [
    "Describe the lighting in the image. Does it appear natural or does it show any inconsistencies, such as unrealistic shadows or lighting direction?",
    "Analyze the texture of the skin in this image. Does the skin appear to have natural imperfections like pores, wrinkles, or blemishes, or is it unnaturally smooth?",
    "Describe the facial symmetry in the image. Are there any noticeable asymmetries in the eyes, nose, mouth, or face shape?",
    "Examine the reflections in the eyes or any shiny areas on the skin. Do they appear to be consistent with the environment, or do they seem artificial or inconsistent?",
    "Describe the facial expression in the image. Does it appear natural, or are there any signs of a forced or unnatural expression?",
    "If there is facial hair in the image, describe its appearance. Does it seem realistic in terms of texture, growth pattern, and interaction with the lighting?",
    "Describe the appearance of the eyes in the image. Do the pupils appear natural in size, shape, and positioning, or are there any abnormalities?",
    "Describe the background of the image. Does it seem well-integrated with the face in terms of depth, focus, and lighting, or does it appear artificially blurred or detached?",
    "Taking into account the lighting, texture, symmetry, and other features, describe the overall realism of the face. Does it show any signs of being digitally manipulated or generated?",
];

/// The nine artifact-probing prompts, one per built-in category.
pub fn builtin_prompt_set() -> PromptSet {
    let prompts = PromptCategory::BUILTIN
        .iter()
        .zip(BUILTIN_TEXTS)
        .enumerate()
        .map(|(idx, (category, text))| Prompt {
            id: category.slug().to_string(),
            category: category.clone(),
            text: text.to_string(),
            ordinal: idx as u32 + 1,
        })
        .collect();
    PromptSet { version: BUILTIN_VERSION.to_string(), prompts }
}

/// The single-question baseline prompt with its default wording.
pub fn yes_no_prompt() -> Prompt {
    yes_no_prompt_with(DEFAULT_YES_NO_TEXT)
}

/// The baseline prompt with overridden wording.
pub fn yes_no_prompt_with(text: &str) -> Prompt {
    Prompt {
        id: "yes_no".to_string(),
        category: PromptCategory::Custom("yes_no".to_string()),
        text: text.to_string(),
        ordinal: 1,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFile<P> {
    version: String,
    prompts: Vec<P>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptEntry {
    id: String,
    category: String,
    text: String,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses a prompt file. Ordinals follow file order.
pub fn parse_prompt_set(source: &str) -> Result<PromptSet, PromptError> {
    let file: PromptFile<&RawValue> = serde_json::from_str(source).map_err(|e| {
        PromptError::MalformedPromptFile { line: e.line(), reason: e.to_string() }
    })?;

    let mut seen = HashSet::new();
    let mut prompts = Vec::with_capacity(file.prompts.len());
    for raw in file.prompts {
        // RawValue borrows from `source`, so its address gives the entry's offset.
        let offset = raw.get().as_ptr() as usize - source.as_ptr() as usize;
        let line = line_of(source, offset);
        let entry: PromptEntry = serde_json::from_str(raw.get()).map_err(|e| {
            PromptError::MalformedPromptFile { line: line + e.line() - 1, reason: e.to_string() }
        })?;
        let malformed = |reason: String| PromptError::MalformedPromptFile { line, reason };
        if entry.id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if let Err(reason) = check_text(&entry.text) {
            return Err(malformed(format!("prompt `{}`: {reason}", entry.id)));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(malformed(format!("duplicate id `{}`", entry.id)));
        }
        prompts.push(Prompt {
            ordinal: prompts.len() as u32 + 1,
            category: PromptCategory::from_slug(&entry.category),
            id: entry.id,
            text: entry.text,
        });
    }
    Ok(PromptSet { version: file.version, prompts })
}

pub fn load_prompt_set(path: &Path) -> Result<PromptSet, PromptError> {
    let source = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            PromptError::FileNotFound(path.to_path_buf())
        } else {
            PromptError::Io { path: path.to_path_buf(), source }
        }
    })?;
    parse_prompt_set(&source)
}

/// Keeps the prompts whose category is listed, in original order, renumbered from 1.
pub fn select_categories(
    set: &PromptSet,
    categories: &[PromptCategory],
) -> Result<PromptSet, PromptError> {
    if categories.is_empty() {
        return Err(PromptError::EmptySelection);
    }
    if let Some(missing) = categories.iter().find(|c| !set.prompts.iter().any(|p| &p.category == *c)) {
        return Err(PromptError::UnknownCategory(missing.slug().to_string()));
    }
    let prompts = set
        .prompts
        .iter()
        .filter(|p| categories.contains(&p.category))
        .enumerate()
        .map(|(idx, p)| Prompt { ordinal: idx as u32 + 1, ..p.clone() })
        .collect();
    Ok(PromptSet { version: set.version.clone(), prompts })
}
