//! Cube, label-map and segmentation-map I/O.
//!
//! The HSC container is a minimal little-endian binary format: the magic
//! bytes `HSC1`, then width, height and band count as `u32`, then
//! `W*H*B` IEEE-754 `f32` samples, pixel-interleaved in raster order
//! (all bands of pixel (0,0), then (1,0), ...). Label and segmentation
//! maps are plain CSV grids of non-negative integers, one image row per
//! line. Classification maps render as binary PPM (P6).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const HSC_MAGIC: [u8; 4] = *b"HSC1";
pub const HSC_HEADER_LEN: usize = 16;

/// A dense hyperspectral cube. Samples are stored pixel-interleaved:
/// index (x, y, b) maps to `(y * width + x) * bands + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Dimension(format!(
                "cube dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::Dimension("cube dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "cube data length {} does not match {width}x{height}x{bands} = {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite sample at flat index {pos}"
            )));
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The spectrum of pixel (x, y) as a contiguous slice of length `bands`.
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Spectrum by flat pixel index (raster order).
    pub fn pixel_at(&self, index: usize) -> &[f32] {
        let start = index * self.bands;
        &self.data[start..start + self.bands]
    }
}

/// Per-pixel class identifiers; 0 means unlabeled, classes run 1..=c.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "label map dimensions must be positive, got {width}x{height}"
            )));
        }
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "label data length {} does not match {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// All-unlabeled map of the given size.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Highest class identifier present (0 for an all-unlabeled map).
    pub fn class_count(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Checks that the nonzero labels cover the contiguous range 1..=c
    /// and returns c. Ground-truth maps are expected to satisfy this.
    pub fn validate_contiguous(&self) -> Result<u32> {
        let c = self.class_count();
        let mut present = vec![false; c as usize + 1];
        for &l in &self.labels {
            present[l as usize] = true;
        }
        for class in 1..=c {
            if !present[class as usize] {
                return Err(Error::Format(format!(
                    "class identifiers are not contiguous: class {class} missing below max {c}"
                )));
            }
        }
        Ok(c)
    }
}

/// A disjoint partition of the pixel grid into superpixels 0..K'-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    width: usize,
    height: usize,
    assignment: Vec<u32>,
    superpixel_count: usize,
}

impl SegMap {
    /// Builds a segmentation map, checking that every index in
    /// 0..K'-1 occurs at least once. Connectivity is checked separately
    /// by [`SegMap::validate_connectivity`].
    pub fn new(width: usize, height: usize, assignment: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "segmentation dimensions must be positive, got {width}x{height}"
            )));
        }
        if assignment.len() != width * height {
            return Err(Error::Dimension(format!(
                "assignment length {} does not match {width}x{height}",
                assignment.len()
            )));
        }
        let max = *assignment.iter().max().expect("non-empty assignment");
        let count = max as usize + 1;
        let mut seen = vec![false; count];
        for &a in &assignment {
            seen[a as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "superpixel {missing} is empty (indices must cover 0..{max})"
            )));
        }
        Ok(Self {
            width,
            height,
            assignment,
            superpixel_count: count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn superpixel_count(&self) -> usize {
        self.superpixel_count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.assignment[y * self.width + x]
    }

    /// Verifies that each superpixel's pixel set is 4-connected.
    pub fn validate_connectivity(&self) -> Result<()> {
        let (w, h) = (self.width, self.height);
        let mut visited = vec![false; w * h];
        let mut component_seen = vec![false; self.superpixel_count];
        let mut stack = Vec::new();
        for start in 0..w * h {
            if visited[start] {
                continue;
            }
            let label = self.assignment[start] as usize;
            if component_seen[label] {
                return Err(Error::Format(format!(
                    "superpixel {label} is not 4-connected"
                )));
            }
            component_seen[label] = true;
            visited[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (x, y) = (p % w, p / w);
                let mut push = |q: usize| {
                    if !visited[q] && self.assignment[q] as usize == label {
                        visited[q] = true;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    push(p - 1);
                }
                if x + 1 < w {
                    push(p + 1);
                }
                if y > 0 {
                    push(p - w);
                }
                if y + 1 < h {
                    push(p + w);
                }
            }
        }
        Ok(())
    }

    /// Pixels that touch a different superpixel through a 4-neighbor.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let a = self.assignment[p];
                let boundary = (x + 1 < w && self.assignment[p + 1] != a)
                    || (x > 0 && self.assignment[p - 1] != a)
                    || (y + 1 < h && self.assignment[p + w] != a)
                    || (y > 0 && self.assignment[p - w] != a);
                mask[p] = boundary;
            }
        }
        mask
    }
}

/// Reads an HSC cube, validating magic, dimensions, payload size and
/// sample finiteness.
pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let bytes = fs::read(path)?;
    parse_cube(&bytes)
}

fn parse_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < HSC_HEADER_LEN {
        return Err(Error::Format(format!(
            "file too short for HSC header: {} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != HSC_MAGIC {
        return Err(Error::Format(format!(
            "bad magic: expected \"HSC1\", found {:?}",
            &bytes[..4]
        )));
    }
    let rd = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (w, h, b) = (rd(4) as usize, rd(8) as usize, rd(12) as usize);
    if w == 0 || h == 0 || b == 0 {
        return Err(Error::Format(format!(
            "header declares empty cube {w}x{h}x{b}"
        )));
    }
    let samples = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(b))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = HSC_HEADER_LEN as u64 + samples as u64 * 4;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Format(format!(
            "trailing data: expected {expected} bytes, found {found}"
        )));
    }
    let mut data = Vec::with_capacity(samples);
    for chunk in bytes[HSC_HEADER_LEN..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    HsiCube::new(w, h, b, data)
}

/// Writes a cube in the HSC format. `read_cube` of the result is
/// bit-exact.
pub fn write_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(&HSC_MAGIC)?;
    out.write_all(&(cube.width() as u32).to_le_bytes())?;
    out.write_all(&(cube.height() as u32).to_le_bytes())?;
    out.write_all(&(cube.bands() as u32).to_le_bytes())?;
    for v in cube.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn parse_csv_grid(text: &str, what: &str) -> Result<(usize, usize, Vec<u32>)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cols = 0usize;
        for tok in line.split(',') {
            let tok = tok.trim();
            let v: u32 = tok.parse().map_err(|_| {
                Error::Format(format!(
                    "{what} line {}: cannot parse {tok:?} as a non-negative integer",
                    lineno + 1
                ))
            })?;
            values.push(v);
            cols += 1;
        }
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(Error::Format(format!(
                    "{what} line {}: {cols} columns, expected {w}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format(format!("{what}: empty file")))?;
    Ok((width, height, values))
}

/// Reads a CSV label map and checks it against the expected dimensions.
pub fn read_label_map(path: &Path, width: usize, height: usize) -> Result<LabelMap> {
    let text = fs::read_to_string(path)?;
    let (w, h, values) = parse_csv_grid(&text, "label map")?;
    if w != width || h != height {
        return Err(Error::Format(format!(
            "label map is {w}x{h}, expected {width}x{height}"
        )));
    }
    LabelMap::new(width, height, values)
}

/// Reads a CSV label map, inferring dimensions from the grid itself.
pub fn read_label_map_auto(path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(path)?;
    let (w, h, values) = parse_csv_grid(&text, "label map")?;
    LabelMap::new(w, h, values)
}

pub fn write_label_map(map: &LabelMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write_csv_grid(&mut out, map.width(), map.height(), map.labels())?;
    out.flush()?;
    Ok(())
}

fn write_csv_grid<W: Write>(out: &mut W, width: usize, height: usize, values: &[u32]) -> Result<()> {
    let mut line = String::new();
    for y in 0..height {
        line.clear();
        for x in 0..width {
            if x > 0 {
                line.push(',');
            }
            line.push_str(&values[y * width + x].to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Reads a CSV segmentation map and validates partition and
/// 4-connectivity invariants.
pub fn read_seg_map(path: &Path, width: usize, height: usize) -> Result<SegMap> {
    let text = fs::read_to_string(path)?;
    let (w, h, values) = parse_csv_grid(&text, "segmentation map")?;
    if w != width || h != height {
        return Err(Error::Format(format!(
            "segmentation map is {w}x{h}, expected {width}x{height}"
        )));
    }
    let seg = SegMap::new(width, height, values)?;
    seg.validate_connectivity()?;
    Ok(seg)
}

/// Reads a CSV segmentation map, inferring dimensions.
pub fn read_seg_map_auto(path: &Path) -> Result<SegMap> {
    let text = fs::read_to_string(path)?;
    let (w, h, values) = parse_csv_grid(&text, "segmentation map")?;
    let seg = SegMap::new(w, h, values)?;
    seg.validate_connectivity()?;
    Ok(seg)
}

pub fn write_seg_map(seg: &SegMap, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write_csv_grid(&mut out, seg.width(), seg.height(), seg.assignment())?;
    out.flush()?;
    Ok(())
}

/// The fixed render palette: class 0 is black, classes 1..=24 get
/// distinct colors. Documented in the README.
pub fn default_palette() -> Vec<[u8; 3]> {
    vec![
        [0, 0, 0],       // 0: unlabeled
        [230, 25, 75],   // 1
        [60, 180, 75],   // 2
        [255, 225, 25],  // 3
        [0, 130, 200],   // 4
        [245, 130, 48],  // 5
        [145, 30, 180],  // 6
        [70, 240, 240],  // 7
        [240, 50, 230],  // 8
        [210, 245, 60],  // 9
        [250, 190, 212], // 10
        [0, 128, 128],   // 11
        [220, 190, 255], // 12
        [170, 110, 40],  // 13
        [255, 250, 200], // 14
        [128, 0, 0],     // 15
        [170, 255, 195], // 16
        [128, 128, 0],   // 17
        [255, 215, 180], // 18
        [0, 0, 128],     // 19
        [128, 128, 128], // 20
        [255, 255, 255], // 21
        [155, 100, 15],  // 22
        [65, 90, 160],   // 23
        [90, 160, 65],   // 24
    ]
}

/// Renders a class map as a binary PPM (P6, maxval 255), one palette
/// entry per pixel in raster order.
pub fn render_class_map(labels: &LabelMap, palette: &[[u8; 3]], path: &Path) -> Result<()> {
    let max = labels.class_count();
    if (max as usize) >= palette.len() {
        return Err(Error::Parameter(format!(
            "class {max} outside palette of {} entries",
            palette.len()
        )));
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{} {}\n255\n", labels.width(), labels.height())?;
    for &l in labels.labels() {
        out.write_all(&palette[l as usize])?;
    }
    out.flush()?;
    Ok(())
}

/// Renders superpixel boundaries white on black, for quick visual checks.
pub fn render_boundary_overlay(seg: &SegMap, path: &Path) -> Result<()> {
    let mask = seg.boundary_mask();
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{} {}\n255\n", seg.width(), seg.height())?;
    for on in mask {
        let v = if on { 255u8 } else { 0u8 };
        out.write_all(&[v, v, v])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads raw little-endian samples (f32 or f64) in one of the three
/// common band layouts and repacks them as an HSC cube. This is the
/// adapter path for external datasets dumped from other tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawLayout {
    /// Band-interleaved by pixel: all bands of a pixel contiguous.
    Bip,
    /// Band-interleaved by line: a full image row per band, row by row.
    Bil,
    /// Band-sequential: a full image plane per band.
    Bsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    F32,
    F64,
}

pub fn convert_raw(
    path: &Path,
    width: usize,
    height: usize,
    bands: usize,
    layout: RawLayout,
    dtype: RawDtype,
) -> Result<HsiCube> {
    let samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::Dimension("raw dimensions overflow".into()))?;
    let elem = match dtype {
        RawDtype::F32 => 4,
        RawDtype::F64 => 8,
    };
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let expected = samples as u64 * elem as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Format(format!(
            "trailing data: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let flat: Vec<f32> = match dtype {
        RawDtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        RawDtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
    };
    let mut data = vec![0f32; samples];
    match layout {
        RawLayout::Bip => data.copy_from_slice(&flat),
        RawLayout::Bil => {
            for y in 0..height {
                for b in 0..bands {
                    for x in 0..width {
                        data[(y * width + x) * bands + b] = flat[(y * bands + b) * width + x];
                    }
                }
            }
        }
        RawLayout::Bsq => {
            for b in 0..bands {
                for y in 0..height {
                    for x in 0..width {
                        data[(y * width + x) * bands + b] = flat[(b * height + y) * width + x];
                    }
                }
            }
        }
    }
    HsiCube::new(width, height, bands, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn cube_layout_readback() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let data = vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let cube = HsiCube::new(2, 1, 3, data).unwrap();
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!(back.pixel(0, 0), &[1.0, 2.0, 3.0]);
        assert_eq!(back.pixel(1, 0), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn cube_roundtrip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let data: Vec<f32> = (0..24).map(|i| (i as f32).sin() * 1e-3).collect();
        let cube = HsiCube::new(2, 3, 4, data).unwrap();
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!(cube, back);
    }

    #[test]
    fn single_sample_cube_is_20_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let cube = HsiCube::new(1, 1, 1, vec![0.0]).unwrap();
        write_cube(&cube, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 20);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        fs::write(&path, b"HSCX\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00AAAA").unwrap();
        match read_cube(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn short_payload_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"HSC1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        // 6 samples expected, supply 6*4 - 1 bytes
        bytes.extend_from_slice(&vec![0u8; 23]);
        fs::write(&path, &bytes).unwrap();
        match read_cube(&path) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 40);
                assert_eq!(found, 39);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_sample_rejected() {
        let err = HsiCube::new(1, 1, 2, vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn zero_width_rejected() {
        let err = HsiCube::new(0, 1, 1, vec![]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn label_map_direct_parse() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "0,1\n2,0\n").unwrap();
        let map = read_label_map(&path, 2, 2).unwrap();
        assert_eq!(map.labels(), &[0, 1, 2, 0]);
        assert_eq!(map.class_count(), 2);
    }

    #[test]
    fn ragged_label_map_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "0,1\n2,0,3\n").unwrap();
        assert!(matches!(
            read_label_map(&path, 2, 2),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn negative_label_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "0,-1\n2,0\n").unwrap();
        assert!(matches!(
            read_label_map(&path, 2, 2),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn all_zero_label_map_valid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "0,0\n0,0\n").unwrap();
        let map = read_label_map(&path, 2, 2).unwrap();
        assert_eq!(map.class_count(), 0);
        assert_eq!(map.validate_contiguous().unwrap(), 0);
    }

    #[test]
    fn non_contiguous_classes_detected() {
        let map = LabelMap::new(2, 1, vec![1, 3]).unwrap();
        assert!(map.validate_contiguous().is_err());
    }

    #[test]
    fn seg_map_roundtrip_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let seg = SegMap::new(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        write_seg_map(&seg, &path).unwrap();
        let back = read_seg_map(&path, 4, 2).unwrap();
        assert_eq!(seg, back);
    }

    #[test]
    fn seg_map_empty_superpixel_rejected() {
        let err = SegMap::new(2, 1, vec![0, 2]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn seg_map_disconnected_rejected() {
        // label 0 occupies the two opposite corners of a 2x2 grid
        let seg = SegMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert!(seg.validate_connectivity().is_err());
    }

    #[test]
    fn ppm_single_red_pixel() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ppm");
        let map = LabelMap::new(1, 1, vec![1]).unwrap();
        let palette = vec![[0, 0, 0], [255, 0, 0]];
        render_class_map(&map, &palette, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes, b"P6\n1 1\n255\n\xff\x00\x00");
    }

    #[test]
    fn ppm_class_zero_black_and_raster_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ppm");
        let map = LabelMap::new(2, 1, vec![1, 0]).unwrap();
        let palette = vec![[0, 0, 0], [10, 20, 30]];
        render_class_map(&map, &palette, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[10, 20, 30, 0, 0, 0]);
        assert_eq!(bytes.len(), header.len() + 3 * 2);
    }

    #[test]
    fn ppm_class_outside_palette_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ppm");
        let map = LabelMap::new(1, 1, vec![5]).unwrap();
        let palette = vec![[0, 0, 0], [255, 0, 0]];
        assert!(matches!(
            render_class_map(&map, &palette, &path),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn convert_raw_layouts_agree() {
        let dir = tempdir().unwrap();
        let (w, h, b) = (3usize, 2usize, 2usize);
        // reference cube with distinct values
        let data: Vec<f32> = (0..w * h * b).map(|i| i as f32).collect();
        let cube = HsiCube::new(w, h, b, data).unwrap();

        let mut bip = Vec::new();
        let mut bil = Vec::new();
        let mut bsq = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for band in 0..b {
                    bip.extend_from_slice(&cube.pixel(x, y)[band].to_le_bytes());
                }
            }
        }
        for y in 0..h {
            for band in 0..b {
                for x in 0..w {
                    bil.extend_from_slice(&cube.pixel(x, y)[band].to_le_bytes());
                }
            }
        }
        for band in 0..b {
            for y in 0..h {
                for x in 0..w {
                    bsq.extend_from_slice(&cube.pixel(x, y)[band].to_le_bytes());
                }
            }
        }
        for (bytes, layout) in [
            (bip, RawLayout::Bip),
            (bil, RawLayout::Bil),
            (bsq, RawLayout::Bsq),
        ] {
            let path = dir.path().join("raw.bin");
            fs::write(&path, &bytes).unwrap();
            let got = convert_raw(&path, w, h, b, layout, RawDtype::F32).unwrap();
            assert_eq!(got, cube, "layout {layout:?}");
        }
    }
}
