//! Dataset manifests: one sample per line.
//!
//! ```text
//! #petl-manifest version=1 classes=Angry,Disgust,Fear,Happy,Neutral,Sad,Surprise
//! images/s01_000.pgm,s01,Happy,x0,y0,x1,y1,...,x67,y67
//! ```
//!
//! Image paths are relative to the manifest's directory. Landmarks are in
//! crop pixel coordinates. An optional `created=` header field is carried
//! through load/save unchanged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::expression::{format_class_list, parse_class_list, Expression};
use crate::landmarks::{Point, NUM_LANDMARKS};

use super::netpbm::read_pgm;
use crate::preprocess::GrayImage;

pub const MANIFEST_MAGIC: &str = "#petl-manifest";
pub const MANIFEST_VERSION: u32 = 1;
const FIELDS: usize = 3 + 2 * NUM_LANDMARKS;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_path: PathBuf,
    pub subject_id: String,
    pub expression: Expression,
    pub landmarks: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub classes: Vec<Expression>,
    pub created: Option<String>,
    pub samples: Vec<Sample>,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(classes: Vec<Expression>, root: impl Into<PathBuf>) -> Self {
        Self {
            classes,
            created: None,
            samples: Vec::new(),
            root: root.into(),
        }
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.image_path)
    }

    pub fn load_image(&self, sample: &Sample) -> Result<GrayImage> {
        read_pgm(self.image_path(sample))
    }

    pub fn label_of(&self, sample: &Sample) -> usize {
        self.classes
            .iter()
            .position(|&c| c == sample.expression)
            .expect("validated on load")
    }

    /// Sorted, de-duplicated subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MANIFEST_MAGIC} version={MANIFEST_VERSION} classes={}",
            format_class_list(&self.classes)
        );
        if let Some(c) = &self.created {
            write!(out, " created={c}").unwrap();
        }
        out.push('\n');
        for s in &self.samples {
            write!(out, "{},{},{}", s.image_path.display(), s.subject_id, s.expression).unwrap();
            for [x, y] in &s.landmarks {
                write!(out, ",{x},{y}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, source: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MANIFEST_MAGIC) {
            return Err(err(1, format!("header must start with `{MANIFEST_MAGIC}`")));
        }
        let mut version = None;
        let mut classes = None;
        let mut created = None;
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(1, format!("bad header field `{kv}`")))?;
            match k {
                "version" => version = v.parse::<u32>().ok(),
                "classes" => classes = Some(parse_class_list(v).map_err(|e| err(1, e.to_string()))?),
                "created" => created = Some(v.to_string()),
                _ => return Err(err(1, format!("unknown header field `{k}`"))),
            }
        }
        if version != Some(MANIFEST_VERSION) {
            return Err(err(1, format!("unsupported version, expected {MANIFEST_VERSION}")));
        }
        let classes = classes.ok_or_else(|| err(1, "missing class vocabulary".into()))?;

        let mut samples = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != FIELDS {
                return Err(err(lineno, format!("expected {FIELDS} fields, found {}", fields.len())));
            }
            let expression: Expression = fields[2].parse().map_err(|_| Error::ManifestClass {
                line: lineno,
                name: fields[2].to_string(),
            })?;
            if !classes.contains(&expression) {
                return Err(Error::ClassMismatch(format!(
                    "line {lineno}: `{expression}` is not in the manifest vocabulary"
                )));
            }
            let coords = fields[3..]
                .iter()
                .map(|f| f.trim().parse::<f32>().map_err(|_| err(lineno, format!("bad coordinate `{f}`"))))
                .collect::<Result<Vec<f32>>>()?;
            samples.push(Sample {
                image_path: PathBuf::from(fields[0]),
                subject_id: fields[1].to_string(),
                expression,
                landmarks: coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            });
        }
        Ok(Self {
            classes,
            created,
            samples,
            root: root.into(),
        })
    }
}

/// Loads a manifest and checks that every referenced image exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = Manifest::parse(&text, &path.display().to_string(), root)?;
    for s in &m.samples {
        let p = m.image_path(s);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
    }
    Ok(m)
}

/// Axis-aligned face box in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Converts a full image with a detector box and full-image landmarks into
/// a `size × size` crop with crop-coordinate landmarks.
pub fn crop_sample(
    image: &GrayImage,
    bbox: BoundingBox,
    landmarks: &[Point],
    size: usize,
) -> Result<(GrayImage, Vec<Point>)> {
    let x1 = (bbox.x + bbox.width).min(image.width);
    let y1 = (bbox.y + bbox.height).min(image.height);
    if bbox.x >= x1 || bbox.y >= y1 {
        return Err(Error::InvalidArgument(format!("box {bbox:?} outside image")));
    }
    let (w, h) = (x1 - bbox.x, y1 - bbox.y);
    let mut pixels = Vec::with_capacity(w * h);
    for y in bbox.y..y1 {
        pixels.extend_from_slice(&image.pixels[y * image.width + bbox.x..y * image.width + x1]);
    }
    let crop = GrayImage::new(w, h, pixels)?;
    let resized = crate::preprocess::bilinear_resize(&crop, size, size)?;
    let (sx, sy) = (size as f32 / w as f32, size as f32 / h as f32);
    let pts = landmarks
        .iter()
        .map(|&[x, y]| [(x - bbox.x as f32) * sx, (y - bbox.y as f32) * sy])
        .collect();
    Ok((resized, pts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(expr: &str, n_coords: usize) -> String {
        let coords: Vec<String> = (0..n_coords).map(|i| format!("{}", i as f32 * 0.5)).collect();
        format!("img/a.pgm,s1,{expr},{}", coords.join(","))
    }

    fn header() -> String {
        format!("{MANIFEST_MAGIC} version=1 classes=Angry,Disgust,Fear,Happy,Neutral,Sad,Surprise")
    }

    #[test]
    fn parse_and_round_trip() {
        let text = format!("{}\n{}\n{}\n", header(), line("Happy", 136), line("Sad", 136));
        let m = Manifest::parse(&text, "m", ".").unwrap();
        assert_eq!(m.samples.len(), 2);
        assert_eq!(m.samples[0].landmarks.len(), 68);
        assert_eq!(m.label_of(&m.samples[1]), 5);
        assert_eq!(m.to_text(), text);
    }

    #[test]
    fn created_field_preserved() {
        let text = format!("{} created=2026-01-01T00:00:00Z\n{}\n", header(), line("Fear", 136));
        let m = Manifest::parse(&text, "m", ".").unwrap();
        assert_eq!(m.created.as_deref(), Some("2026-01-01T00:00:00Z"));
        assert_eq!(m.to_text(), text);
    }

    #[test]
    fn short_line_reports_line_number() {
        let text = format!("{}\n{}\n{}\n", header(), line("Happy", 136), line("Happy", 135));
        match Manifest::parse(&text, "m", ".").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_expression() {
        let text = format!("{}\n{}\n", header(), line("Bored", 136));
        assert!(matches!(
            Manifest::parse(&text, "m", ".").unwrap_err(),
            Error::ManifestClass { line: 2, .. }
        ));
    }

    #[test]
    fn label_outside_vocabulary() {
        let text = format!("{}\n{}\n", header(), line("Contempt", 136));
        assert!(matches!(Manifest::parse(&text, "m", ".").unwrap_err(), Error::ClassMismatch(_)));
    }

    #[test]
    fn missing_image_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        fs::write(&p, format!("{}\n{}\n", header(), line("Happy", 136))).unwrap();
        assert!(matches!(load_manifest(&p).unwrap_err(), Error::MissingFile(_)));
    }

    #[test]
    fn crop_maps_landmarks() {
        let img = GrayImage::filled(100, 80, 9);
        let bbox = BoundingBox { x: 20, y: 10, width: 50, height: 50 };
        let (crop, pts) = crop_sample(&img, bbox, &[[20.0, 10.0], [45.0, 35.0]], 100).unwrap();
        assert_eq!((crop.width, crop.height), (100, 100));
        assert_eq!(pts, vec![[0.0, 0.0], [50.0, 50.0]]);
    }
}
