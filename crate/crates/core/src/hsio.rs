//! Hyperspectral cube, mask and saliency-map I/O.
//!
//! Cubes are stored as an ENVI-style text header next to a band-sequential
//! raw file of little-endian `f32`. Masks and saliency maps are 8-bit
//! single-channel PNGs; saliency maps can also be written as raw `f32`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::FeatureView;

/// `H x W x K` reflectance volume stored `(band, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f64>,
    pub wavelengths: Option<Vec<f64>>,
}

impl HyperspectralCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::shape("cube dimensions must be non-zero"));
        }
        if data.len() != height * width * bands {
            return Err(Error::shape(format!(
                "cube data has {} values, expected {height}x{width}x{bands}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn view(&self) -> FeatureView<'_> {
        FeatureView {
            channels: self.bands,
            height: self.height,
            width: self.width,
            data: &self.data,
        }
    }
}

/// Per-pixel boolean ground truth (`true` = salient object).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "mask has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn count_true(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Row-major `H x W` saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "saliency has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// 8-bit level of each pixel, `round(v * 255)` with halves rounded up.
    pub fn quantized(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize(v)).collect()
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    LittleEndian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub data_type: DataType,
    pub interleave: Interleave,
    pub byte_order: ByteOrder,
    pub wavelengths: Option<Vec<f64>>,
}

impl CubeHeader {
    pub fn for_cube(cube: &HyperspectralCube) -> Self {
        Self {
            samples: cube.width,
            lines: cube.height,
            bands: cube.bands,
            data_type: DataType::Float32,
            interleave: Interleave::Bsq,
            byte_order: ByteOrder::LittleEndian,
            wavelengths: cube.wavelengths.clone(),
        }
    }

    pub fn raw_len(&self) -> u64 {
        (self.samples * self.lines * self.bands * 4) as u64
    }

    /// Parses header text. `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Header {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(first) if first.trim() == "ENVI" => {}
            _ => return Err(bad("first line must be `ENVI`".into())),
        }

        let mut entries: Vec<(String, String)> = Vec::new();
        let mut pending: Option<(String, String)> = None;
        for line in lines {
            if let Some((key, mut value)) = pending.take() {
                value.push(' ');
                value.push_str(line.trim());
                if value.contains('}') {
                    entries.push((key, value));
                } else {
                    pending = Some((key, value));
                }
                continue;
            }
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with(';') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{trimmed}`")))?;
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if value.starts_with('{') && !value.contains('}') {
                pending = Some((key, value));
            } else {
                entries.push((key, value));
            }
        }
        if let Some((key, _)) = pending {
            return Err(bad(format!("unterminated `{{` in `{key}`")));
        }

        let lookup = |key: &str| {
            entries
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let count = |key: &str| -> Result<usize> {
            let v = lookup(key).ok_or_else(|| bad(format!("missing `{key}`")))?;
            let n: usize = v
                .parse()
                .map_err(|_| bad(format!("`{key}` is not a count: `{v}`")))?;
            if n == 0 {
                return Err(bad(format!("`{key}` must be >= 1")));
            }
            Ok(n)
        };
        let samples = count("samples")?;
        let lines = count("lines")?;
        let bands = count("bands")?;

        let data_type = match lookup("data type") {
            Some("4") => DataType::Float32,
            Some(v) => {
                return Err(Error::Unsupported {
                    key: "data type",
                    value: v.into(),
                })
            }
            None => return Err(bad("missing `data type`".into())),
        };
        let interleave = match lookup("interleave").map(str::to_ascii_lowercase) {
            Some(v) if v == "bsq" => Interleave::Bsq,
            Some(v) => {
                return Err(Error::Unsupported {
                    key: "interleave",
                    value: v,
                })
            }
            None => return Err(bad("missing `interleave`".into())),
        };
        let byte_order = match lookup("byte order") {
            Some("0") => ByteOrder::LittleEndian,
            Some(v) => {
                return Err(Error::Unsupported {
                    key: "byte order",
                    value: v.into(),
                })
            }
            None => return Err(bad("missing `byte order`".into())),
        };

        let wavelengths = match lookup("wavelength") {
            None => None,
            Some(v) => {
                let inner = v.trim().trim_start_matches('{').trim_end_matches('}');
                let values = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| bad(format!("bad wavelength `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != bands {
                    return Err(bad(format!(
                        "{} wavelengths for {bands} bands",
                        values.len()
                    )));
                }
                if values.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(bad("wavelengths must be strictly increasing".into()));
                }
                Some(values)
            }
        };

        Ok(Self {
            samples,
            lines,
            bands,
            data_type,
            interleave,
            byte_order,
            wavelengths,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("ENVI\n");
        s.push_str(&format!("samples = {}\n", self.samples));
        s.push_str(&format!("lines = {}\n", self.lines));
        s.push_str(&format!("bands = {}\n", self.bands));
        s.push_str("header offset = 0\n");
        s.push_str("data type = 4\n");
        s.push_str("interleave = bsq\n");
        s.push_str("byte order = 0\n");
        if let Some(w) = &self.wavelengths {
            let list: Vec<String> = w.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("wavelength = {{ {} }}\n", list.join(", ")));
        }
        s
    }
}

/// Conventional raw-file path for a header: same stem, `.raw` extension.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn load_cube(header_path: &Path, raw_path: &Path) -> Result<HyperspectralCube> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = CubeHeader::parse(&text, header_path)?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    if bytes.len() as u64 != header.raw_len() {
        return Err(Error::SizeMismatch {
            path: raw_path.to_path_buf(),
            expected: header.raw_len(),
            actual: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut cube = HyperspectralCube::new(header.lines, header.samples, header.bands, data)?;
    cube.wavelengths = header.wavelengths;
    Ok(cube)
}

/// Writes header and raw file. Values are narrowed to `f32`.
pub fn save_cube(cube: &HyperspectralCube, header_path: &Path, raw_path: &Path) -> Result<()> {
    let header = CubeHeader::for_cube(cube);
    fs::write(header_path, header.to_text()).map_err(|e| Error::io(header_path, e))?;
    write_f32_le(raw_path, &cube.data)
}

fn write_f32_le(path: &Path, values: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: (bytes.len() / 4 * 4) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Global min-max scaling to `[0, 1]` across all bands. A constant cube maps
/// to all zeros.
pub fn normalize_cube(cube: &HyperspectralCube) -> HyperspectralCube {
    let (lo, hi) = cube
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        cube.data.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; cube.data.len()]
    };
    HyperspectralCube {
        data,
        ..cube.clone()
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads an 8-bit grayscale PNG as `(width, height, pixels)`.
pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(
            path,
            format!(
                "expected 8-bit grayscale, got {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(frame.buffer_size());
    Ok((w, h, buf))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: &[u8],
    comment: Option<&str>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    if let Some(text) = comment {
        encoder
            .add_text_chunk("Comment".to_string(), text.to_string())
            .map_err(|e| png_err(path, e))?;
    }
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Grayscale pixels above 127 are salient.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let (w, h, px) = read_gray_png(path)?;
    BinaryMask::new(h, w, px.iter().map(|&p| p > 127).collect())
}

pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let px: Vec<u8> = mask.values.iter().map(|&v| if v { 255 } else { 0 }).collect();
    write_png(path, mask.width, mask.height, png::ColorType::Grayscale, &px, None)
}

pub fn save_saliency(map: &SaliencyMap, png_path: &Path, raw_path: Option<&Path>) -> Result<()> {
    save_saliency_annotated(map, png_path, raw_path, None)
}

/// Like [`save_saliency`], embedding `comment` as a PNG text chunk.
pub fn save_saliency_annotated(
    map: &SaliencyMap,
    png_path: &Path,
    raw_path: Option<&Path>,
    comment: Option<&str>,
) -> Result<()> {
    if map.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "saliency values must lie in [0, 1]".into(),
        ));
    }
    write_png(
        png_path,
        map.width,
        map.height,
        png::ColorType::Grayscale,
        &map.quantized(),
        comment,
    )?;
    if let Some(raw) = raw_path {
        write_f32_le(raw, &map.values)?;
    }
    Ok(())
}

/// Reads a saliency PNG back as `level / 255`.
pub fn load_saliency_png(path: &Path) -> Result<SaliencyMap> {
    let (w, h, px) = read_gray_png(path)?;
    SaliencyMap::new(h, w, px.iter().map(|&p| p as f64 / 255.0).collect())
}

pub fn load_saliency_raw(path: &Path, height: usize, width: usize) -> Result<SaliencyMap> {
    let values = read_f32_le(path)?;
    if values.len() != height * width {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: (height * width * 4) as u64,
            actual: (values.len() * 4) as u64,
        });
    }
    SaliencyMap::new(height, width, values)
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.data, None)
    }
}

/// Band-binning preview: the bands are split into three contiguous thirds
/// (boundaries at `floor(i * K / 3)`), each averaged into one channel. The
/// three channels share one min-max rescale to `[0, 255]`; a constant result
/// renders as mid gray.
pub fn render_pseudo_rgb(cube: &HyperspectralCube) -> Result<RgbImage> {
    if cube.bands < 3 {
        return Err(Error::InvalidArgument(format!(
            "pseudo-RGB needs at least 3 bands, cube has {}",
            cube.bands
        )));
    }
    let n = cube.height * cube.width;
    let mut means = vec![0.0; 3 * n];
    for ch in 0..3 {
        let (lo, hi) = (ch * cube.bands / 3, (ch + 1) * cube.bands / 3);
        let dst = &mut means[ch * n..(ch + 1) * n];
        for b in lo..hi {
            for (d, v) in dst.iter_mut().zip(cube.band(b)) {
                *d += v;
            }
        }
        let count = (hi - lo) as f64;
        dst.iter_mut().for_each(|d| *d /= count);
    }
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut data = vec![0u8; 3 * n];
    for p in 0..n {
        for ch in 0..3 {
            let v = means[ch * n + p];
            data[p * 3 + ch] = if hi > lo {
                quantize((v - lo) / (hi - lo))
            } else {
                128
            };
        }
    }
    Ok(RgbImage {
        height: cube.height,
        width: cube.width,
        data,
    })
}
