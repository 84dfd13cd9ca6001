//! MSR raster files.
//!
//! ```text
//! offset  size            field
//! 0       4               magic "MSRF"
//! 4       2   u16 LE      version (1)
//! 6       2   u16 LE      band_count
//! 8       4   u32 LE      height
//! 12      4   u32 LE      width
//! 16      4   f32 LE      pixel_size_m
//! 20      4   f32 LE      scale_applied
//! 24      16 * bands      ASCII band labels, zero padded
//! ...     4 * b * h * w   f32 LE payload, band-sequential, row-major
//! ```
//!
//! Values are stored as `f32`; saving an `f64` image rounds each value to the
//! nearest `f32`. Images loaded from disk therefore round-trip bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{BandName, BandPlane, MultispectralImage};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSRF";
pub const VERSION: u16 = 1;
pub const LABEL_LEN: usize = 16;
const FIXED_HEADER_LEN: usize = 24;

pub fn encode(img: &MultispectralImage) -> Result<Vec<u8>> {
    if !img.is_finite() {
        return Err(Error::validation("refusing to encode an image with non-finite values"));
    }
    let (h, w) = img.dims();
    let band_count = u16::try_from(img.band_count())
        .map_err(|_| Error::validation("too many bands for the MSR header"))?;
    let height = u32::try_from(h).map_err(|_| Error::validation("height exceeds u32"))?;
    let width = u32::try_from(w).map_err(|_| Error::validation("width exceeds u32"))?;

    let mut buf = Vec::with_capacity(header_len(img.band_count()) + 4 * img.band_count() * h * w);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&band_count.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&(img.pixel_size() as f32).to_le_bytes());
    buf.extend_from_slice(&(img.scale_applied() as f32).to_le_bytes());
    for name in img.band_names() {
        let mut label = [0u8; LABEL_LEN];
        let bytes = name.label().as_bytes();
        label[..bytes.len()].copy_from_slice(bytes);
        buf.extend_from_slice(&label);
    }
    for band in img.bands() {
        // iter() on a standard-layout array walks row-major
        for v in band.values().iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

fn header_len(bands: usize) -> usize {
    FIXED_HEADER_LEN + LABEL_LEN * bands
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn read_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode(bytes: &[u8]) -> Result<MultispectralImage> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(Error::format(format!("file of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad magic, expected MSRF"));
    }
    let version = read_u16(bytes, 4);
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let band_count = read_u16(bytes, 6) as usize;
    let height = read_u32(bytes, 8) as usize;
    let width = read_u32(bytes, 12) as usize;
    let pixel_size = read_f32(bytes, 16) as f64;
    let scale_applied = read_f32(bytes, 20) as f64;
    if band_count == 0 || height == 0 || width == 0 {
        return Err(Error::format(format!(
            "degenerate header: {band_count} bands, {height}x{width}"
        )));
    }

    let hdr = header_len(band_count);
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(band_count))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(hdr))
        .ok_or_else(|| Error::format("header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "expected {expected} bytes for {band_count}x{height}x{width}, found {}",
            bytes.len()
        )));
    }

    let mut names = Vec::with_capacity(band_count);
    for i in 0..band_count {
        let raw = &bytes[FIXED_HEADER_LEN + i * LABEL_LEN..FIXED_HEADER_LEN + (i + 1) * LABEL_LEN];
        let end = raw.iter().position(|&c| c == 0).unwrap_or(LABEL_LEN);
        if raw[end..].iter().any(|&c| c != 0) {
            return Err(Error::format(format!("band label {i} is not zero padded")));
        }
        let label = std::str::from_utf8(&raw[..end])
            .map_err(|_| Error::format(format!("band label {i} is not ASCII")))?;
        names.push(label.parse::<BandName>().map_err(|_| {
            Error::validation(format!("unsupported band label `{label}`"))
        })?);
    }

    let plane_len = height * width;
    let mut bands = Vec::with_capacity(band_count);
    for b in 0..band_count {
        let start = hdr + 4 * b * plane_len;
        let values: Vec<f64> = (0..plane_len).map(|k| read_f32(bytes, start + 4 * k) as f64).collect();
        let arr = Array2::from_shape_vec((height, width), values).expect("length checked above");
        bands.push(BandPlane::new(arr).map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("band {b}: {m}")),
            other => other,
        })?);
    }
    Ok(MultispectralImage::new(bands, names, pixel_size)?.with_scale_applied(scale_applied))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<MultispectralImage> {
    let bytes = fs::read(path.as_ref())?;
    decode(&bytes)
}

/// Writes `img` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partial file. Nothing is written when validation
/// fails.
pub fn save_image(img: &MultispectralImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(img)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("`{}` has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::HR_PIXEL_SIZE_M;
    use proptest::prelude::*;

    fn image(b: usize, h: usize, w: usize, seed: u32) -> MultispectralImage {
        let bands = (0..b)
            .map(|k| {
                BandPlane::new(Array2::from_shape_fn((h, w), |(i, j)| {
                    let x = (i * 31 + j * 17 + k * 7) as u32 ^ seed;
                    ((x % 1000) as f64 / 1000.0) as f32 as f64
                }))
                .unwrap()
            })
            .collect();
        MultispectralImage::new(bands, BandName::ALL[..b].to_vec(), HR_PIXEL_SIZE_M).unwrap()
    }

    #[test]
    fn single_pixel_payload_length() {
        let img = image(1, 1, 1, 0);
        let bytes = encode(&img).unwrap();
        assert_eq!(bytes.len(), FIXED_HEADER_LEN + LABEL_LEN + 4);
        assert_eq!(&bytes[..4], b"MSRF");
    }

    #[test]
    fn full_window_header_fields() {
        let img = image(4, 300, 300, 9);
        let bytes = encode(&img).unwrap();
        assert_eq!(read_u16(&bytes, 6), 4);
        assert_eq!(read_u32(&bytes, 8), 300);
        assert_eq!(read_u32(&bytes, 12), 300);
        assert_eq!(&bytes[24..29], b"blue\0");
        let back = decode(&bytes).unwrap();
        assert_eq!(back.dims(), (300, 300));
        assert_eq!(back.band_count(), 4);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let img = image(4, 5, 5, 1);
        let bytes = encode(&img).unwrap();
        let short = &bytes[..bytes.len() - 4 * 25];
        assert!(matches!(decode(short), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&image(1, 2, 2, 0)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&image(1, 2, 2, 0)).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_label_is_validation_error() {
        let mut bytes = encode(&image(1, 2, 2, 0)).unwrap();
        bytes[24..28].copy_from_slice(b"swir");
        assert!(matches!(decode(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_payload_is_validation_error() {
        let mut bytes = encode(&image(2, 2, 2, 0)).unwrap();
        let at = header_len(2) + 4 * 5;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn save_rejects_nan_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.msr");
        let mut plane = Array2::zeros((2, 2));
        plane[[1, 1]] = f64::NAN;
        let img = MultispectralImage::new_unchecked(
            vec![BandPlane::new_unchecked(plane)],
            vec![BandName::Green],
            10.0,
        )
        .unwrap();
        assert!(matches!(save_image(&img, &path), Err(Error::Validation(_))));
        assert!(!path.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn save_load_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.msr");
        let img = image(4, 7, 9, 3).with_scale_applied(0.125);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(fs::read(&path).unwrap(), encode(&back).unwrap());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = image(1, 2, 2, 0);
        let err = save_image(&img, "/nonexistent-dir/x/y.msr").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            bands in 1usize..=4,
            h in 1usize..12,
            w in 1usize..12,
            vals in proptest::collection::vec(-1.0f32..2.0, 4 * 11 * 11),
        ) {
            let planes: Vec<BandPlane> = (0..bands)
                .map(|b| BandPlane::new(Array2::from_shape_fn((h, w), |(i, j)| vals[b * h * w + i * w + j] as f64)).unwrap())
                .collect();
            let img = MultispectralImage::new(planes, BandName::ALL[..bands].to_vec(), 30.0).unwrap();
            let bytes = encode(&img).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(&encode(&back).unwrap(), &bytes);
            // band order in file follows band_names
            for (k, name) in img.band_names().iter().enumerate() {
                let at = FIXED_HEADER_LEN + k * LABEL_LEN;
                prop_assert_eq!(&bytes[at..at + name.label().len()], name.label().as_bytes());
            }
        }
    }
}
