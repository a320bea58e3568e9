//! Image inputs to query text: captioner and OCR contracts, confidence
//! filtering, and query fusion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::scalar::Scalar;

pub const DEFAULT_OCR_THRESHOLD: f64 = 0.5;
pub const IMAGE_LABEL: &str = "[image]";
pub const OCR_LABEL: &str = "[ocr]";

#[derive(Debug, Error)]
pub enum MmioError {
    #[error("invalid image {image_id}: {message}")]
    InvalidImage { image_id: String, message: String },
    #[error("unsupported image format {0:?}")]
    Format(String),
    #[error("adapter {adapter} failed on {image_id}: {source}")]
    Adapter {
        adapter: String,
        image_id: String,
        #[source]
        source: ClientError,
    },
    #[error("confidence threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("query has no text, caption or OCR tokens")]
    EmptyQuery,
    #[error("fixture table: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
    Gif,
    Webp,
    Bmp,
    Tiff,
}

impl ImageFormat {
    pub const ALLOWED: [ImageFormat; 6] = [Self::Png, Self::Jpeg, Self::Gif, Self::Webp, Self::Bmp, Self::Tiff];

    pub fn parse(s: &str) -> Result<Self, MmioError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "png" => Ok(Self::Png),
            "jpg" | "jpeg" => Ok(Self::Jpeg),
            "gif" => Ok(Self::Gif),
            "webp" => Ok(Self::Webp),
            "bmp" => Ok(Self::Bmp),
            "tif" | "tiff" => Ok(Self::Tiff),
            _ => Err(MmioError::Format(s.to_owned())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Jpeg => "jpeg",
            Self::Gif => "gif",
            Self::Webp => "webp",
            Self::Bmp => "bmp",
            Self::Tiff => "tiff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePayload {
    Bytes(Vec<u8>),
    Locator(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInput {
    pub image_id: String,
    pub payload: ImagePayload,
    pub format: ImageFormat,
    /// `(width, height)` in pixels, when known.
    pub bounds: Option<(u32, u32)>,
}

impl ImageInput {
    pub fn new(image_id: impl Into<String>, payload: ImagePayload, format: ImageFormat) -> Result<Self, MmioError> {
        let image_id = image_id.into();
        let empty = match &payload {
            ImagePayload::Bytes(b) => b.is_empty(),
            ImagePayload::Locator(l) => l.trim().is_empty(),
        };
        if image_id.trim().is_empty() || empty {
            return Err(MmioError::InvalidImage {
                image_id,
                message: "empty id or payload".into(),
            });
        }
        Ok(Self {
            image_id,
            payload,
            format,
            bounds: None,
        })
    }

    /// Image referenced by id only, resolved by the adapter.
    pub fn fixture(image_id: &str) -> Result<Self, MmioError> {
        Self::new(image_id, ImagePayload::Locator(format!("fixture:{image_id}")), ImageFormat::Png)
    }

    pub fn with_bounds(mut self, width: u32, height: u32) -> Self {
        self.bounds = Some((width, height));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    fn fits(&self, (width, height): (u32, u32)) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken<T> {
    pub text: String,
    pub confidence: T,
    pub bbox: BBox,
}

pub trait CaptionerClient: Send + Sync {
    fn name(&self) -> &str;
    fn caption(&self, image: &ImageInput) -> Result<String, ClientError>;
    fn allows_concurrent_calls(&self) -> bool {
        false
    }
}

pub trait OcrClient<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn read_text(&self, image: &ImageInput) -> Result<Vec<OcrToken<T>>, ClientError>;
    fn allows_concurrent_calls(&self) -> bool {
        false
    }
}

pub fn caption_image(image: &ImageInput, captioner: &dyn CaptionerClient) -> Result<Caption, MmioError> {
    let adapter_err = |source| MmioError::Adapter {
        adapter: captioner.name().to_owned(),
        image_id: image.image_id.clone(),
        source,
    };
    let text = captioner.caption(image).map_err(adapter_err)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(adapter_err(ClientError::protocol(captioner.name(), "empty caption")));
    }
    Ok(Caption {
        text: text.to_owned(),
        source: captioner.name().to_owned(),
    })
}

/// Tokens sorted top-to-bottom, then left-to-right. Tokens with empty text,
/// out-of-range confidence, or a box outside known bounds are a protocol
/// error from the adapter.
pub fn ocr_image<T: Scalar>(image: &ImageInput, ocr: &dyn OcrClient<T>) -> Result<Vec<OcrToken<T>>, MmioError> {
    let adapter_err = |source| MmioError::Adapter {
        adapter: ocr.name().to_owned(),
        image_id: image.image_id.clone(),
        source,
    };
    let mut tokens = ocr.read_text(image).map_err(adapter_err)?;
    for t in &tokens {
        let c = t.confidence;
        let problem = if t.text.trim().is_empty() {
            Some("empty token text".to_owned())
        } else if !(c >= T::zero() && c <= T::one()) {
            Some(format!("confidence {c} outside [0, 1]"))
        } else if image.bounds.is_some_and(|b| !t.bbox.fits(b)) {
            Some(format!("bbox {:?} outside image bounds", t.bbox))
        } else {
            None
        };
        if let Some(p) = problem {
            return Err(adapter_err(ClientError::protocol(ocr.name(), p)));
        }
    }
    tokens.sort_by_key(|t| (t.bbox.y, t.bbox.x));
    Ok(tokens)
}

/// Tokens with `confidence >= threshold`, order preserved.
pub fn filter_by_confidence<T: Scalar>(tokens: &[OcrToken<T>], threshold: T) -> Result<Vec<OcrToken<T>>, MmioError> {
    if !(threshold >= T::zero() && threshold <= T::one()) {
        return Err(MmioError::Threshold(threshold.as_f64()));
    }
    Ok(tokens.iter().filter(|t| t.confidence >= threshold).cloned().collect())
}

/// User text, then one `[image]` block per caption, then one `[ocr]` block
/// with the tokens joined by spaces. Empty parts are omitted; blocks are
/// separated by newlines.
pub fn fuse_query<T>(user_text: &str, captions: &[Caption], tokens: &[OcrToken<T>]) -> Result<String, MmioError> {
    let mut blocks = Vec::new();
    if !user_text.trim().is_empty() {
        blocks.push(user_text.to_owned());
    }
    for c in captions.iter().filter(|c| !c.text.trim().is_empty()) {
        blocks.push(format!("{IMAGE_LABEL} {}", c.text));
    }
    let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).filter(|t| !t.trim().is_empty()).collect();
    if !words.is_empty() {
        blocks.push(format!("{OCR_LABEL} {}", words.join(" ")));
    }
    if blocks.is_empty() {
        return Err(MmioError::EmptyQuery);
    }
    Ok(blocks.join("\n"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageText<T> {
    pub captions: Vec<Caption>,
    pub tokens: Vec<OcrToken<T>>,
    pub notices: Vec<String>,
}

/// Caption and OCR every image. Adapter failures become notices so the query
/// can proceed without that part.
pub fn interpret_images<T: Scalar>(
    images: &[ImageInput],
    captioner: &dyn CaptionerClient,
    ocr: &dyn OcrClient<T>,
    threshold: T,
) -> Result<ImageText<T>, MmioError> {
    let mut out = ImageText {
        captions: Vec::new(),
        tokens: Vec::new(),
        notices: Vec::new(),
    };
    for img in images {
        match caption_image(img, captioner) {
            Ok(c) => out.captions.push(c),
            Err(e) => out.notices.push(format!("caption skipped: {e}")),
        }
        match ocr_image(img, ocr) {
            Ok(tokens) => out.tokens.extend(filter_by_confidence(&tokens, threshold)?),
            Err(e) => out.notices.push(format!("ocr skipped: {e}")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FixtureToken {
    text: String,
    confidence: f64,
    bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FixtureImage {
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    tokens: Vec<FixtureToken>,
}

/// Offline captioner and OCR reader backed by a JSON table
/// `{image_id: {caption, tokens: [{text, confidence, bbox: [x, y, w, h]}]}}`.
#[derive(Debug, Clone, Default)]
pub struct FixtureStub {
    images: BTreeMap<String, FixtureImage>,
}

impl FixtureStub {
    pub fn from_json(text: &str) -> Result<Self, MmioError> {
        let images = serde_json::from_str(text).map_err(|e| MmioError::Fixture(e.to_string()))?;
        Ok(Self { images })
    }

    pub fn load(path: &Path) -> Result<Self, MmioError> {
        let text = std::fs::read_to_string(path).map_err(|e| MmioError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    fn lookup(&self, image: &ImageInput) -> Result<&FixtureImage, ClientError> {
        self.images
            .get(&image.image_id)
            .ok_or_else(|| ClientError::unavailable("fixture-stub", format!("image {} is not registered", image.image_id)))
    }
}

impl CaptionerClient for FixtureStub {
    fn name(&self) -> &str {
        "fixture-stub"
    }

    fn caption(&self, image: &ImageInput) -> Result<String, ClientError> {
        self.lookup(image)?
            .caption
            .clone()
            .ok_or_else(|| ClientError::unavailable("fixture-stub", format!("no caption for {}", image.image_id)))
    }

    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}

impl<T: Scalar> OcrClient<T> for FixtureStub {
    fn name(&self) -> &str {
        "fixture-stub"
    }

    fn read_text(&self, image: &ImageInput) -> Result<Vec<OcrToken<T>>, ClientError> {
        Ok(self
            .lookup(image)?
            .tokens
            .iter()
            .map(|t| OcrToken {
                text: t.text.clone(),
                confidence: T::from_f64_lossy(t.confidence),
                bbox: BBox::new(t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]),
            })
            .collect())
    }

    fn allows_concurrent_calls(&self) -> bool {
        true
    }
}
