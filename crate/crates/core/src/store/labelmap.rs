//! Segmentation label maps: binary PGM (`P5`, 8 or 16 bit) and single-channel
//! PAM (`P7`). Pixel value 0 is unlabeled; any other value is a segment index.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DetectionKind;

#[derive(Debug, Error)]
pub enum LabelMapError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad label map header: {0}")]
    Header(String),
    #[error("label map raster truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("bad legend: {0}")]
    Legend(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    /// Row-major segment indices.
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.data[(y * self.width + x) as usize]
    }

    /// Pixel lists per nonzero segment index, each sorted by (y, x).
    pub fn segments(&self) -> BTreeMap<u32, Vec<(u32, u32)>> {
        let mut out: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if v != 0 {
                    out.entry(v).or_default().push((x, y));
                }
            }
        }
        out
    }

    pub fn max_index(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

struct HeaderReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str, LabelMapError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(LabelMapError::Header("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.buf[start..self.pos]).map_err(|_| LabelMapError::Header("non-ascii header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32, LabelMapError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| LabelMapError::Header(format!("{what}: expected a number, got `{t}`")))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end_of_header(&mut self) -> Result<(), LabelMapError> {
        match self.buf.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(LabelMapError::Header("missing whitespace before raster".into())),
        }
    }
}

fn raster(buf: &[u8], width: u32, height: u32, maxval: u32) -> Result<Vec<u32>, LabelMapError> {
    if maxval == 0 || maxval > 65535 {
        return Err(LabelMapError::Header(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width as usize * height as usize;
    let bytes = if maxval < 256 { 1 } else { 2 };
    if buf.len() < n * bytes {
        return Err(LabelMapError::Truncated {
            expected: n * bytes,
            found: buf.len(),
        });
    }
    let data: Vec<u32> = if bytes == 1 {
        buf[..n].iter().map(|&b| u32::from(b)).collect()
    } else {
        buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    if let Some(v) = data.iter().find(|&&v| v > maxval) {
        return Err(LabelMapError::Header(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(data)
}

pub fn parse_label_map(buf: &[u8]) -> Result<LabelMap, LabelMapError> {
    let mut h = HeaderReader { buf, pos: 0 };
    let magic = h.token()?.to_owned();
    let (width, height, maxval) = match magic.as_str() {
        "P5" => {
            let w = h.number("width")?;
            let hh = h.number("height")?;
            let m = h.number("maxval")?;
            h.end_of_header()?;
            (w, hh, m)
        }
        "P7" => {
            let (mut w, mut hh, mut depth, mut m) = (None, None, None, None);
            loop {
                let key = h.token()?.to_owned();
                match key.as_str() {
                    "WIDTH" => w = Some(h.number("WIDTH")?),
                    "HEIGHT" => hh = Some(h.number("HEIGHT")?),
                    "DEPTH" => depth = Some(h.number("DEPTH")?),
                    "MAXVAL" => m = Some(h.number("MAXVAL")?),
                    "TUPLTYPE" => {
                        h.token()?;
                    }
                    "ENDHDR" => break,
                    other => return Err(LabelMapError::Header(format!("unknown PAM header field `{other}`"))),
                }
            }
            h.end_of_header()?;
            if depth != Some(1) {
                return Err(LabelMapError::Header(format!("PAM DEPTH must be 1, got {depth:?}")));
            }
            match (w, hh, m) {
                (Some(w), Some(hh), Some(m)) => (w, hh, m),
                _ => return Err(LabelMapError::Header("PAM header lacks WIDTH, HEIGHT or MAXVAL".into())),
            }
        }
        other => {
            return Err(LabelMapError::Header(format!(
                "unsupported magic `{other}` (expected P5 or P7)"
            )))
        }
    };
    if width == 0 || height == 0 {
        return Err(LabelMapError::Header(format!("zero-sized map {width}x{height}")));
    }
    let data = raster(&buf[h.pos..], width, height, maxval)?;
    Ok(LabelMap { width, height, data })
}

pub fn read_label_map(path: &Path) -> Result<LabelMap, LabelMapError> {
    let buf = std::fs::read(path).map_err(|source| LabelMapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_label_map(&buf)
}

fn samples(map: &LabelMap) -> (u32, Vec<u8>) {
    let max = map.max_index().max(1);
    if max < 256 {
        (255, map.data.iter().map(|&v| v as u8).collect())
    } else {
        (65535, map.data.iter().flat_map(|&v| (v as u16).to_be_bytes()).collect())
    }
}

/// Encodes as `P5`, 16-bit when any index exceeds 255.
pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let (maxval, raster) = samples(map);
    let mut out = format!("P5\n{} {}\n{maxval}\n", map.width, map.height).into_bytes();
    out.extend(raster);
    out
}

pub fn encode_pam(map: &LabelMap) -> Vec<u8> {
    let (maxval, raster) = samples(map);
    let mut out = format!(
        "P7\nWIDTH {}\nHEIGHT {}\nDEPTH 1\nMAXVAL {maxval}\nTUPLTYPE GRAYSCALE\nENDHDR\n",
        map.width, map.height
    )
    .into_bytes();
    out.extend(raster);
    out
}

pub fn write_label_map(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    #[serde(rename = "class")]
    pub class_name: String,
    pub kind: DetectionKind,
    pub score: f64,
}

/// Sidecar legend, e.g.
/// `{"width": 640, "height": 360, "segments": {"1": {"class": "person", "kind": "thing", "score": 0.97}}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub segments: BTreeMap<u32, LegendEntry>,
}

impl Legend {
    /// Indices dense from 1, scores in [0, 1], classes in the vocabulary if
    /// one is given.
    pub fn check(&self, vocabulary: Option<&std::collections::BTreeSet<String>>) -> Result<(), LabelMapError> {
        for (expected, (&idx, entry)) in (1u32..).zip(&self.segments) {
            if idx != expected {
                return Err(LabelMapError::Legend(format!(
                    "segment indices must be dense from 1; {expected} is missing"
                )));
            }
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(LabelMapError::Legend(format!(
                    "segment {idx} score {} outside [0, 1]",
                    entry.score
                )));
            }
            if entry.class_name.trim().is_empty() {
                return Err(LabelMapError::Legend(format!("segment {idx} has an empty class")));
            }
            if let Some(vocab) = vocabulary {
                if !vocab.contains(&entry.class_name) {
                    return Err(LabelMapError::Legend(format!(
                        "segment {idx} class `{}` is not in the vocabulary",
                        entry.class_name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, LabelMapError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabelMapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| LabelMapError::Legend(format!("{}: {e}", path.display())))
    }
}
