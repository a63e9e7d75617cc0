//! IDX containers: big-endian header, then unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{PsbcError, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image after image, each row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, offset: usize, message: impl Into<String>) -> PsbcError {
        PsbcError::Parse {
            path: self.path.to_path_buf(),
            offset,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let word = self.bytes.get(self.pos..end).ok_or_else(|| {
            self.err(
                self.bytes.len(),
                format!("truncated header, missing {what}"),
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(word.try_into().expect("four bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32("magic number")?;
        if magic != expected {
            return Err(self.err(0, format!("magic number {magic}, expected {expected}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: {len} bytes declared, {have} present"),
            ));
        }
        if have > len {
            return Err(self.err(
                self.pos + len,
                format!("{} trailing bytes after payload", have - len),
            ));
        }
        Ok(&self.bytes[self.pos..])
    }
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| r.err(4, "image dimensions overflow"))?;
    let pixels = r.payload(len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.payload(count)?;
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(r.err(8 + i, format!("label {} outside 0..=9", labels[i])));
    }
    Ok(labels.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read(path)?, path)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        PsbcError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn header_word(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_be_bytes)
        .map_err(|_| PsbcError::Domain(format!("{what} {v} does not fit an IDX header")))
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.pixels_per_image() {
        return Err(PsbcError::dim(
            "image payload",
            images.count * images.pixels_per_image(),
            images.pixels.len(),
        ));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend(IMAGE_MAGIC.to_be_bytes());
    out.extend(header_word(images.count, "image count")?);
    out.extend(header_word(images.rows, "row count")?);
    out.extend(header_word(images.cols, "column count")?);
    out.extend(&images.pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend(header_word(labels.len(), "label count")?);
    out.extend(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture")
    }

    fn offset(e: PsbcError) -> usize {
        match e {
            PsbcError::Parse { offset, .. } => offset,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn mnist_header() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0xEA, 0x60, 0, 0, 0, 0x1C, 0, 0, 0, 0x1C];
        bytes.resize(16 + 60000 * 784, 0);
        let img = parse_idx_images(&bytes, p()).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (60000, 28, 28));
    }

    #[test]
    fn image_errors() {
        let header = [0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4];
        assert_eq!(offset(parse_idx_images(&header, p()).unwrap_err()), 0);
        let mut ok = header;
        ok[3] = 3;
        let img = parse_idx_images(&ok, p()).unwrap();
        assert_eq!(img.pixels, vec![1, 2, 3, 4]);
        assert_eq!(offset(parse_idx_images(&ok[..19], p()).unwrap_err()), 19);
        assert_eq!(offset(parse_idx_images(&ok[..6], p()).unwrap_err()), 6);
        let mut long = ok.to_vec();
        long.push(9);
        assert_eq!(offset(parse_idx_images(&long, p()).unwrap_err()), 20);
        let huge = [
            0, 0, 8, 3, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,
        ];
        assert!(parse_idx_images(&huge, p()).is_err());
    }

    #[test]
    fn labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 1];
        assert_eq!(parse_idx_labels(&bytes, p()).unwrap(), vec![7, 0, 1]);
        assert_eq!(offset(parse_idx_labels(&bytes[..10], p()).unwrap_err()), 10);
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 0], p())
            .unwrap()
            .is_empty());
        let bad = [0, 0, 8, 1, 0, 0, 0, 2, 3, 10];
        assert_eq!(offset(parse_idx_labels(&bad, p()).unwrap_err()), 9);
        assert!(parse_idx_labels(&[0, 0, 8, 3, 0, 0, 0, 0], p()).is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = IdxImages {
            count: 1,
            rows: 2,
            cols: 2,
            pixels: vec![0, 51, 200, 255],
        };
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, &img).unwrap();
        write_idx_labels(&lp, &[7, 0, 1]).unwrap();
        assert_eq!(load_idx_images(&ip).unwrap(), img);
        assert_eq!(load_idx_labels(&lp).unwrap(), vec![7, 0, 1]);
        assert!(load_idx_labels(&dir.path().join("missing")).is_err());
    }
}
