//! 8-bit grayscale PNG reading and writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::volume::Mask;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray_png(img: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.iter().map(|&v| quantize(v)).collect();
    write_bytes(&bytes, img.ncols(), img.nrows(), path.as_ref())
}

pub fn write_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_bytes(&bytes, mask.ncols(), mask.nrows(), path.as_ref())
}

fn write_bytes(bytes: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Read an 8-bit grayscale PNG into `[0, 1]` values.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit grayscale",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = buf[..w * h].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("sized buffer"))
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(read_gray_png(path)?.mapv(|v| v >= 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_shape_fn((3, 5), |(y, x)| (y * 5 + x) as f64 / 255.0);
        write_gray_png(&img, dir.path().join("a.png")).unwrap();
        let back = read_gray_png(dir.path().join("a.png")).unwrap();
        assert!(img.iter().zip(back.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let mask = img.mapv(|v| v > 0.02);
        write_mask_png(&mask, dir.path().join("m.png")).unwrap();
        assert_eq!(read_mask_png(dir.path().join("m.png")).unwrap(), mask);
    }
}
