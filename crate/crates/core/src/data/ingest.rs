//! Decoding clips from the raw-planar format, numbered frame directories,
//! or an external decoder.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use super::DataError;

pub const RAWV_MAGIC: &[u8; 4] = b"RAWV";
/// Config key naming the external decoder command template.
pub const DECODER_KEY: &str = "decoder_command";

/// One decoded frame, 8-bit RGB, row-major `H×W×3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawClip {
    pub fps: f32,
    pub frames: Vec<Frame>,
}

impl RawClip {
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.height, f.width))
    }
}

/// How a clip was decoded; `command` is the exact external invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub clip: RawClip,
    pub command: Option<String>,
}

pub fn write_rawv(path: &Path, clip: &RawClip) -> Result<(), DataError> {
    let (h, w) = clip.dims().unwrap_or((0, 0));
    if clip.frames.iter().any(|f| (f.height, f.width) != (h, w) || f.data.len() != h * w * 3) {
        return Err(DataError::Format("frames of a clip must share one size".into()));
    }
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(RAWV_MAGIC);
    for v in [clip.frames.len(), h, w] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.extend_from_slice(&clip.fps.to_le_bytes());
    out.write_all(&header).map_err(|e| DataError::io(path, e))?;
    for f in &clip.frames {
        out.write_all(&f.data).map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_rawv(path: &Path) -> Result<RawClip, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|e| DataError::io(path, e))?;
    if &header[..4] != RAWV_MAGIC {
        return Err(DataError::Format(format!("{} is not a RAWV clip", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (word(0), word(1), word(2));
    let fps = f32::from_le_bytes(header[16..20].try_into().unwrap());
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let mut data = vec![0u8; h * w * 3];
        r.read_exact(&mut data)
            .map_err(|_| DataError::Format(format!("{} is truncated at frame {i} of {n}", path.display())))?;
        frames.push(Frame { height: h, width: w, data });
    }
    Ok(RawClip { fps, frames })
}

/// Reads `<digits>.<png|jpg|jpeg>` files in numeric order. Numbering must
/// be contiguous from the smallest index.
pub fn read_frame_dir(dir: &Path, fps: f32) -> Result<RawClip, DataError> {
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = item.map_err(|e| DataError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            numbered.push((n, path));
        }
    }
    if numbered.is_empty() {
        return Err(DataError::Frames(format!("{} contains no numbered frames", dir.display())));
    }
    numbered.sort();
    if let Some(w) = numbered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::Frames(format!("frame index {} appears twice", w[0].0)));
    }
    let missing: Vec<u64> = numbered
        .windows(2)
        .flat_map(|w| w[0].0 + 1..w[1].0)
        .collect();
    if !missing.is_empty() {
        return Err(DataError::Frames(format!(
            "{} has gaps in frame numbering; missing indices {missing:?}",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(numbered.len());
    for (_, path) in &numbered {
        let img = image::open(path)
            .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        frames.push(Frame {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.into_raw(),
        });
    }
    if frames.iter().any(|f| (f.height, f.width) != (frames[0].height, frames[0].width)) {
        return Err(DataError::Frames(format!("frames in {} differ in size", dir.display())));
    }
    Ok(RawClip { fps, frames })
}

/// Fills `{input}` and `{output}` in a decoder command template.
pub fn decoder_command(template: &str, input: &Path, output: &Path) -> String {
    template
        .replace("{input}", &input.display().to_string())
        .replace("{output}", &output.display().to_string())
}

/// Decodes a clip from a frame directory, a RAWV file, or any other file
/// through the external decoder, which must write RAWV to `{output}`.
pub fn ingest_external(path: &Path, decoder: Option<&str>, frame_dir_fps: f32) -> Result<Ingested, DataError> {
    if path.is_dir() {
        return Ok(Ingested {
            clip: read_frame_dir(path, frame_dir_fps)?,
            command: None,
        });
    }
    if is_rawv(path)? {
        return Ok(Ingested {
            clip: read_rawv(path)?,
            command: None,
        });
    }
    let template = decoder.ok_or_else(|| {
        DataError::Config(format!(
            "{} is not a RAWV clip or frame directory; set `{DECODER_KEY}` to a command template using {{input}} and {{output}}",
            path.display()
        ))
    })?;
    let tmp = tempfile::Builder::new()
        .suffix(".rawv")
        .tempfile()
        .map_err(|e| DataError::io(Path::new("<tempfile>"), e))?;
    let command = decoder_command(template, path, tmp.path());
    let status = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .status()
        .map_err(|e| DataError::Decoder(format!("failed to start `{command}`: {e}")))?;
    if !status.success() {
        return Err(DataError::Decoder(format!("`{command}` exited with {status}")));
    }
    Ok(Ingested {
        clip: read_rawv(tmp.path())?,
        command: Some(command),
    })
}

fn is_rawv(path: &Path) -> Result<bool, DataError> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(f.read_exact(&mut magic).is_ok() && &magic == RAWV_MAGIC)
}
