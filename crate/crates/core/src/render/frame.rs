use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::RenderError;

/// Binary image, row-major, `true` = embodiment pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskFrame {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &MaskFrame) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn symmetric_difference(&self, other: &MaskFrame) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// P4 binary PBM. Rows are padded to whole bytes, most significant bit first.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<(), RenderError> {
        write!(w, "P4\n{} {}\n", self.width, self.height)?;
        let stride = self.width.div_ceil(8);
        let mut row = vec![0u8; stride];
        for y in 0..self.height {
            row.fill(0);
            for x in 0..self.width {
                if self.get(x, y) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn read_pbm<R: Read>(r: R) -> Result<Self, RenderError> {
        let mut r = BufReader::new(r);
        let (magic, dims) = read_header(&mut r, 2)?;
        if magic != "P4" {
            return Err(RenderError::Format(format!("expected P4, found {magic}")));
        }
        let (width, height) = (dims[0], dims[1]);
        let stride = width.div_ceil(8);
        let mut data = vec![0u8; stride * height];
        r.read_exact(&mut data)?;
        let mut m = MaskFrame::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, data[y * stride + x / 8] & (0x80 >> (x % 8)) != 0);
            }
        }
        Ok(m)
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: color.repeat(width * height),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<(), RenderError> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self, RenderError> {
        let mut r = BufReader::new(r);
        let (magic, dims) = read_header(&mut r, 3)?;
        if magic != "P6" {
            return Err(RenderError::Format(format!("expected P6, found {magic}")));
        }
        if dims[2] != 255 {
            return Err(RenderError::Format(format!("unsupported maxval {}", dims[2])));
        }
        let mut pixels = vec![0u8; 3 * dims[0] * dims[1]];
        r.read_exact(&mut pixels)?;
        Ok(Self {
            width: dims[0],
            height: dims[1],
            pixels,
        })
    }
}

/// Netpbm header: magic, then `n` whitespace-separated integers, then one
/// whitespace byte. `#` comments run to end of line.
fn read_header<R: BufRead>(r: &mut R, n: usize) -> Result<(String, Vec<usize>), RenderError> {
    let mut tokens = Vec::with_capacity(n + 1);
    let mut cur = Vec::new();
    let mut byte = [0u8; 1];
    while tokens.len() < n + 1 {
        if r.read(&mut byte)? == 0 {
            return Err(RenderError::Format("truncated header".into()));
        }
        match byte[0] {
            b'#' if cur.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(String::from_utf8_lossy(&cur).into_owned());
                    cur.clear();
                }
            }
            b => cur.push(b),
        }
    }
    let magic = tokens.remove(0);
    let dims = tokens
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| RenderError::Format(format!("bad header field '{t}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((magic, dims))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskVideo {
    pub frames: Vec<MaskFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RgbVideo {
    pub frames: Vec<RgbFrame>,
}

fn check_video<F>(frames: &[F], dims: impl Fn(&F) -> (usize, usize)) -> Result<(), RenderError> {
    if let Some(first) = frames.first() {
        let d = dims(first);
        if let Some(bad) = frames.iter().position(|f| dims(f) != d) {
            return Err(RenderError::ResolutionMismatch(format!(
                "frame {bad} is {:?}, expected {d:?}",
                dims(&frames[bad])
            )));
        }
    }
    Ok(())
}

impl MaskVideo {
    pub fn new(frames: Vec<MaskFrame>) -> Result<Self, RenderError> {
        check_video(&frames, |f| (f.width, f.height))?;
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `mask_0000.pbm`, `mask_0001.pbm`, ... into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), RenderError> {
        fs::create_dir_all(dir)?;
        for (t, f) in self.frames.iter().enumerate() {
            let file = fs::File::create(dir.join(format!("mask_{t:04}.pbm")))?;
            f.write_pbm(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, RenderError> {
        let frames = numbered_files(dir, "mask_", ".pbm")?
            .iter()
            .map(|p| MaskFrame::read_pbm(fs::File::open(p)?))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(frames)
    }
}

impl RgbVideo {
    pub fn new(frames: Vec<RgbFrame>) -> Result<Self, RenderError> {
        check_video(&frames, |f| (f.width, f.height))?;
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes `frame_0000.ppm`, `frame_0001.ppm`, ... into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), RenderError> {
        fs::create_dir_all(dir)?;
        for (t, f) in self.frames.iter().enumerate() {
            let file = fs::File::create(dir.join(format!("frame_{t:04}.ppm")))?;
            f.write_ppm(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, RenderError> {
        let frames = numbered_files(dir, "frame_", ".ppm")?
            .iter()
            .map(|p| RgbFrame::read_ppm(fs::File::open(p)?))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(frames)
    }
}

fn numbered_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<std::path::PathBuf>, RenderError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(suffix))
        })
        .collect();
    files.sort();
    Ok(files)
}
