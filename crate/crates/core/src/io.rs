//! On-disk formats for images, displacement fields, landmarks and task directories.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{
    hist_equalize, resize_bilinear, rescale_unit, GrayImage, Landmark, LandmarkSet, PairSample,
};
use crate::error::{Error, Result};
use crate::grid::{DisplacementField, ImageGrid};
use crate::scalar::Real;

pub const FIELD_MAGIC: &[u8; 4] = b"MRF1";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary `P5` PGM with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(start as u64, "unexpected end of PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::format(0, format!("expected P5 magic, found {magic:?}")));
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let at = *pos as u64;
        let t = token(pos)?;
        t.parse().map_err(|_| Error::format(at, format!("bad PGM {what} {t:?}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("only 8-bit PGM supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("PGM raster truncated: need {need} bytes after offset {pos}"),
        ));
    }
    GrayImage::new(height, width, bytes[pos..pos + need].to_vec())
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm(img))
}

/// Quantizes `[0, 1]` intensities to 8 bits, clamping out-of-range values.
pub fn to_gray<T: Real>(img: &ImageGrid<T>) -> GrayImage {
    GrayImage {
        height: img.height(),
        width: img.width(),
        data: img
            .data()
            .iter()
            .map(|v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

pub fn encode_field<T: Real>(phi: &DisplacementField<T>) -> Vec<u8> {
    let (h, w) = phi.dims();
    let mut out = Vec::with_capacity(16 + h * w * 8);
    out.extend_from_slice(FIELD_MAGIC);
    for d in [h as u32, w as u32, 2] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (u, v) in phi.u.data().iter().zip(phi.v.data()) {
        out.extend_from_slice(&u.to_f32_lossy().to_le_bytes());
        out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    out
}

pub fn decode_field<T: Real>(bytes: &[u8]) -> Result<DisplacementField<T>> {
    if bytes.len() < 16 {
        return Err(Error::format(bytes.len() as u64, "field header truncated"));
    }
    if &bytes[..4] != FIELD_MAGIC {
        return Err(Error::format(0, "bad field magic, expected MRF1"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(4), word(8), word(12));
    if c != 2 {
        return Err(Error::format(12, format!("field must have 2 channels, found {c}")));
    }
    let need = 16 + h * w * 8;
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need) as u64,
            format!("field body holds {} bytes, expected {}", bytes.len(), need),
        ));
    }
    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    for px in bytes[16..].chunks_exact(8) {
        u.push(T::lit(f32::from_le_bytes(px[..4].try_into().unwrap()) as f64));
        v.push(T::lit(f32::from_le_bytes(px[4..].try_into().unwrap()) as f64));
    }
    DisplacementField::new(ImageGrid::from_vec(h, w, u)?, ImageGrid::from_vec(h, w, v)?)
}

pub fn read_field<T: Real>(path: &Path) -> Result<DisplacementField<T>> {
    decode_field(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_field<T: Real>(path: &Path, phi: &DisplacementField<T>) -> Result<()> {
    write_bytes(path, &encode_field(phi))
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSet> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["mx", "my", "fx", "fy"] {
        return Err(Error::format(0, format!("landmark header must be mx,my,fx,fy, found {headers:?}")).in_file(path));
    }
    let mut pairs = Vec::new();
    for row in rdr.deserialize::<(f64, f64, f64, f64)>() {
        let (mx, my, fx, fy) = row.map_err(|e| Error::from(e).in_file(path))?;
        pairs.push(Landmark { moving: (mx, my), fixed: (fx, fy) });
    }
    Ok(LandmarkSet { pairs })
}

pub fn write_landmarks(path: &Path, set: &LandmarkSet) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["mx", "my", "fx", "fy"])?;
        for l in &set.pairs {
            w.serialize((l.moving.0, l.moving.1, l.fixed.0, l.fixed.1))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, &buf)
}

/// Steps applied to 8-bit images on ingestion: equalize, then resize, then rescale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Preprocess {
    pub hist_eq: bool,
    pub resize: Option<(usize, usize)>,
    /// When false, intensities are divided by 255.
    pub rescale: bool,
}

impl Preprocess {
    pub fn apply<T: Real>(&self, img: &GrayImage) -> Result<ImageGrid<T>> {
        let img = if self.hist_eq { hist_equalize(img) } else { img.clone() };
        let mut grid = img.to_grid::<T>();
        if let Some((h, w)) = self.resize {
            grid = resize_bilinear(&grid, h, w)?;
        }
        Ok(if self.rescale {
            rescale_unit(&grid)
        } else {
            grid.map(|v| v / T::lit(255.0))
        })
    }
}

/// File names for pair `stem` inside a task directory.
pub struct PairFiles {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    pub field: PathBuf,
    pub landmarks: PathBuf,
}

impl PairFiles {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            moving: dir.join(format!("{stem}_moving.pgm")),
            fixed: dir.join(format!("{stem}_fixed.pgm")),
            field: dir.join(format!("{stem}_field.mrf1")),
            landmarks: dir.join(format!("{stem}_landmarks.csv")),
        }
    }
}

/// Writes a pair as PGM images plus its optional field and landmarks.
pub fn write_pair<T: Real>(dir: &Path, pair: &PairSample<T>) -> Result<()> {
    let files = PairFiles::new(dir, &pair.id);
    write_pgm(&files.moving, &to_gray(&pair.moving))?;
    write_pgm(&files.fixed, &to_gray(&pair.fixed))?;
    if let Some(gt) = &pair.gt_field {
        write_field(&files.field, gt)?;
    }
    if let Some(lm) = &pair.landmarks {
        write_landmarks(&files.landmarks, lm)?;
    }
    Ok(())
}

/// Loads every `<stem>_moving.pgm` / `<stem>_fixed.pgm` pair in `dir`, sorted by stem.
/// Fields and landmarks are picked up when present. Landmarks are rescaled
/// along with the images when a resize is requested.
pub fn read_pair_dir<T: Real>(dir: &Path, prep: &Preprocess) -> Result<Vec<PairSample<T>>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix("_moving.pgm") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    stems
        .into_iter()
        .map(|stem| {
            let files = PairFiles::new(dir, &stem);
            let m_raw = read_pgm(&files.moving)?;
            let f_raw = read_pgm(&files.fixed)?;
            if (m_raw.height, m_raw.width) != (f_raw.height, f_raw.width) {
                return Err(Error::shape(format!(
                    "pair {stem}: moving {}x{} vs fixed {}x{}",
                    m_raw.height, m_raw.width, f_raw.height, f_raw.width
                )));
            }
            let moving: ImageGrid<T> = prep.apply(&m_raw)?;
            let fixed: ImageGrid<T> = prep.apply(&f_raw)?;
            let sx = (moving.width() - 1) as f64 / (m_raw.width.max(2) - 1) as f64;
            let sy = (moving.height() - 1) as f64 / (m_raw.height.max(2) - 1) as f64;
            let resized = prep.resize.is_some() && moving.dims() != (m_raw.height, m_raw.width);
            let gt_field = if files.field.exists() && !resized {
                Some(read_field(&files.field)?)
            } else {
                None
            };
            let landmarks = if files.landmarks.exists() {
                let mut set = read_landmarks(&files.landmarks)?;
                if resized {
                    for l in &mut set.pairs {
                        l.moving = (l.moving.0 * sx, l.moving.1 * sy);
                        l.fixed = (l.fixed.0 * sx, l.fixed.1 * sy);
                    }
                }
                Some(set)
            } else {
                None
            };
            Ok(PairSample { id: stem, moving, fixed, gt_field, landmarks })
        })
        .collect()
}

pub fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

pub fn flush(path: &Path, w: &mut impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}
