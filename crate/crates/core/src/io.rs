//! Dataset directories: `manifest.csv` plus one 8-bit binary PGM per
//! impression.
//!
//! The manifest header is `finger_id,impression_id,class,quality,path`, with
//! classes written as `A,L,R,T,W` and `path` relative to the manifest. The
//! manifest is the only source of labels.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::synthgen::{FingerprintDataset, FingerprintRecord, HenryClass, Quality};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.csv";
const HEADER: [&str; 5] = ["finger_id", "impression_id", "class", "quality", "path"];

/// Writes a `[1, H, W]` image as binary PGM (values rounded and clamped).
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = match *image.shape() {
        [1, h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "PGM needs a [1,H,W] image, got {:?}",
                image.shape()
            )))
        }
    };
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::from_vec(&[1, h as usize, w as usize], data)
}

pub fn image_file_name(finger_id: u32, impression_id: u32) -> String {
    format!("images/f{finger_id:06}_{impression_id}.pgm")
}

/// Incremental writer so large datasets never need to sit in memory.
pub struct DatasetWriter {
    dir: PathBuf,
    manifest: csv::Writer<fs::File>,
}

impl DatasetWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        let mpath = dir.join(MANIFEST);
        let file = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut manifest = csv::Writer::from_writer(file);
        manifest.write_record(HEADER).map_err(|e| csv_io(&mpath, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn write(&mut self, record: &FingerprintRecord) -> Result<()> {
        let rel = image_file_name(record.finger_id, record.impression_id);
        write_pgm(&self.dir.join(&rel), &record.image)?;
        self.manifest
            .write_record([
                record.finger_id.to_string(),
                record.impression_id.to_string(),
                record.class.code().to_string(),
                record.quality.name().to_string(),
                rel,
            ])
            .map_err(|e| csv_io(&self.dir.join(MANIFEST), e))
    }

    pub fn finish(mut self) -> Result<()> {
        let p = self.dir.join(MANIFEST);
        self.manifest.flush().map_err(|e| Error::io(&p, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn write_dataset(dir: &Path, dataset: &FingerprintDataset) -> Result<()> {
    let mut w = DatasetWriter::create(dir)?;
    for r in &dataset.records {
        w.write(r)?;
    }
    w.finish()
}

/// One manifest row, before the image is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub finger_id: u32,
    pub impression_id: u32,
    pub class: HenryClass,
    pub quality: Quality,
    pub path: PathBuf,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mpath = dir.join(MANIFEST);
    let file = fs::File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: mpath.clone(),
        line,
        message,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, found {}", row.len())));
        }
        let finger_id = row[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad finger_id {:?}", &row[0])))?;
        let impression_id = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad impression_id {:?}", &row[1])))?;
        let class = HenryClass::from_code(&row[2])
            .ok_or_else(|| parse_err(line, format!("bad class {:?}", &row[2])))?;
        let quality: Quality = row[3]
            .parse()
            .map_err(|_| parse_err(line, format!("bad quality {:?}", &row[3])))?;
        if !seen.insert((finger_id, impression_id)) {
            return Err(parse_err(
                line,
                format!("duplicate ({finger_id}, {impression_id})"),
            ));
        }
        entries.push(ManifestEntry {
            finger_id,
            impression_id,
            class,
            quality,
            path: dir.join(&row[4]),
        });
    }
    Ok(entries)
}

pub fn read_dataset(dir: &Path) -> Result<FingerprintDataset> {
    let entries = read_manifest(dir)?;
    let records = crate::par_map(&entries, |e| -> Result<FingerprintRecord> {
        Ok(FingerprintRecord {
            finger_id: e.finger_id,
            impression_id: e.impression_id,
            class: e.class,
            quality: e.quality,
            image: read_pgm(&e.path)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(FingerprintDataset {
        records,
        truth: Vec::new(),
    })
}
