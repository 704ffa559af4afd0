//! File formats: images and saliency maps as CSV or PGM, datasets as JSON.
//!
//! CSV files hold one value per line under the header `c,w,h,value`, in
//! row-major `(c, w, h)` order; the shape is read from the largest indices.
//! PGM files are single-channel, with the PGM column as `w` and the row as `h`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, SaliencyMap, Shape};

pub const CSV_HEADER: &str = "c,w,h,value";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn values_to_csv(shape: Shape, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (i, v) in values.iter().enumerate() {
        let (c, w, h) = shape.coords(i);
        writeln!(out, "{c},{w},{h},{v}").expect("string write");
    }
    out
}

pub fn parse_csv(text: &str, source: &str) -> Result<(Shape, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::format(
                format!("{source}: header"),
                format!("expected `{CSV_HEADER}`, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let field = |name: &str| format!("{source}: line {} {name}", n + 2);
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::format(field("columns"), format!("expected 4 columns, found {}", parts.len())));
        }
        let idx = |k: usize, name: &str| {
            parts[k]
                .parse::<usize>()
                .map_err(|e| Error::format(field(name), e))
        };
        let value: f64 = parts[3].parse().map_err(|e| Error::format(field("value"), e))?;
        if !value.is_finite() {
            return Err(Error::format(field("value"), "not finite"));
        }
        rows.push((idx(0, "c")?, idx(1, "w")?, idx(2, "h")?, value));
    }
    if rows.is_empty() {
        return Err(Error::format(format!("{source}: rows"), "no values"));
    }
    let dims = rows.iter().fold((0, 0, 0), |(c, w, h), r| (c.max(r.0), w.max(r.1), h.max(r.2)));
    let shape = Shape::new(dims.0 + 1, dims.1 + 1, dims.2 + 1)?;
    if rows.len() != shape.len() {
        return Err(Error::format(
            format!("{source}: rows"),
            format!("{} rows for shape {shape}, expected {}", rows.len(), shape.len()),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        if shape.coords(i) != (r.0, r.1, r.2) {
            return Err(Error::format(
                format!("{source}: line {}", i + 2),
                format!("indices ({},{},{}) out of row-major order", r.0, r.1, r.2),
            ));
        }
    }
    Ok((shape, rows.into_iter().map(|r| r.3).collect()))
}

/// Binary (`P5`) or plain (`P2`) PGM, values scaled to `[0, 1]` by maxval.
pub fn parse_pgm(bytes: &[u8], source: &str) -> Result<Image> {
    let field = |name: &str| format!("{source}: {name}");
    let mut pos = 0;
    let token = |pos: &mut usize| -> Option<String> {
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
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).ok_or_else(|| Error::format(field("magic"), "empty file"))?;
    if magic != "P5" && magic != "P2" {
        return Err(Error::format(field("magic"), format!("expected P5 or P2, found {magic}")));
    }
    let number = |name: &str, pos: &mut usize| -> Result<usize> {
        token(pos)
            .ok_or_else(|| Error::format(field(name), "missing"))?
            .parse::<usize>()
            .map_err(|e| Error::format(field(name), e))
    };
    let width = number("width", &mut pos)?;
    let height = number("height", &mut pos)?;
    let maxval = number("maxval", &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(field("maxval"), format!("{maxval} outside 1..=65535")));
    }
    let shape = Shape::new(1, width, height)?;
    let mut raster = Vec::with_capacity(width * height);
    if magic == "P5" {
        pos += 1; // single whitespace after maxval
        let wide = maxval > 255;
        let need = width * height * if wide { 2 } else { 1 };
        let data = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::format(field("raster"), format!("expected {need} bytes")))?;
        if wide {
            raster.extend(data.chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as usize));
        } else {
            raster.extend(data.iter().map(|&b| b as usize));
        }
    } else {
        for _ in 0..width * height {
            raster.push(number("raster", &mut pos)?);
        }
    }
    if let Some(v) = raster.iter().find(|&&v| v > maxval) {
        return Err(Error::format(field("raster"), format!("sample {v} exceeds maxval {maxval}")));
    }
    let mut values = vec![0.0; shape.len()];
    for y in 0..height {
        for x in 0..width {
            values[shape.index(0, x, y)] = raster[y * width + x] as f64 / maxval as f64;
        }
    }
    Image::new(shape, values)
}

/// Reads `.pgm` by magic number, anything else as CSV.
pub fn load_image(path: &Path) -> Result<Image> {
    let source = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        return parse_pgm(&bytes, &source);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::format(source.clone(), e))?;
    let (shape, values) = parse_csv(&text, &source)?;
    Image::new(shape, values)
}

pub fn image_to_csv(image: &Image) -> String {
    values_to_csv(image.shape(), image.as_slice())
}

/// 8-bit binary PGM of `intensity` (values already in `[0, 1]`), channels
/// averaged.
pub fn pgm_bytes(shape: Shape, intensity: &[f64], comment: &str) -> Vec<u8> {
    let mut out = format!("P5\n# {comment}\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    for y in 0..shape.height {
        for x in 0..shape.width {
            let v = (0..shape.channels).map(|c| intensity[shape.index(c, x, y)]).sum::<f64>() / shape.channels as f64;
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Min-max scaled heatmap; a constant map renders mid-gray.
pub fn heatmap_pgm(map: &SaliencyMap, comment: &str) -> Vec<u8> {
    let n = crate::fusion::normalize_map(map);
    pgm_bytes(map.shape(), n.values(), comment)
}

/// Positive and negative parts on a shared `max |v|` scale.
pub fn signed_heatmaps(map: &SaliencyMap, comment: &str) -> (Vec<u8>, Vec<u8>) {
    let scale = map.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let part = |sign: f64| -> Vec<f64> {
        map.values()
            .iter()
            .map(|v| if scale > 0.0 { (sign * v).max(0.0) / scale } else { 0.0 })
            .collect()
    };
    (
        pgm_bytes(map.shape(), &part(1.0), comment),
        pgm_bytes(map.shape(), &part(-1.0), comment),
    )
}

/// `{"shape": [C, W, H], "images": [[...], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub shape: Shape,
    pub images: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let shape = images
            .first()
            .ok_or_else(|| Error::Dimension("dataset is empty".into()))?
            .shape();
        Ok(DatasetFile {
            shape,
            images: images.iter().map(|im| im.as_slice().to_vec()).collect(),
        })
    }

    pub fn into_images(self) -> Result<Vec<Image>> {
        let shape = self.shape;
        self.images
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                if v.len() != shape.len() {
                    return Err(Error::format(
                        format!("images[{k}]"),
                        format!("{} values for shape {shape}, expected {}", v.len(), shape.len()),
                    ));
                }
                Image::new(shape, v)
            })
            .collect()
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<Image>> {
    let text = read_text(path)?;
    let file: DatasetFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: dataset", path.display()), e))?;
    file.into_images()
}

pub fn dataset_json(images: &[Image]) -> Result<String> {
    Ok(serde_json::to_string(&DatasetFile::from_images(images)?).expect("plain data"))
}
