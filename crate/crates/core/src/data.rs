//! Synthetic 2-D datasets with known structure, the latent prior, and a flat
//! binary format for tiny image grids.

use std::f64::consts::TAU;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndnum::{Rng, Tensor};

/// Radius of the circle carrying mixture centers and the ring.
pub const CIRCLE_RADIUS: f64 = 0.7;

const IMAGE_MAGIC: &[u8; 4] = b"OIMG";
const IMAGE_VERSION: u32 = 1;
const IMAGE_HEADER_LEN: usize = 4 + 4 + 4 + 2 + 2 + 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic, expected \"OIMG\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported image file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// `modes` equally weighted Gaussians centered on a circle of radius 0.7.
    GaussianMixture { modes: usize, std: f64 },
    /// Uniform angle, radius `0.7 + 𝒩(0, std)`.
    Ring { std: f64 },
    /// Uniform over the dark cells of a `cells × cells` board on `[−1, 1]²`.
    Checkerboard { cells: usize },
    BinaryImageFile { path: PathBuf },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        match self {
            DatasetSpec::GaussianMixture { modes, std } => {
                if *modes == 0 {
                    return bad("mixture needs at least one mode".into());
                }
                if !(*std > 0.0 && std.is_finite()) {
                    return bad(format!("mode std must be positive, got {std}"));
                }
            }
            DatasetSpec::Ring { std } => {
                if !(*std >= 0.0 && std.is_finite()) {
                    return bad(format!("ring std must be non-negative, got {std}"));
                }
            }
            DatasetSpec::Checkerboard { cells } => {
                if *cells < 2 {
                    return bad(format!("checkerboard needs at least 2 cells per side, got {cells}"));
                }
            }
            DatasetSpec::BinaryImageFile { .. } => {}
        }
        Ok(())
    }

    /// Mode centers of a labeled mixture, `None` for other kinds.
    pub fn mode_centers(&self) -> Option<Vec<[f64; 2]>> {
        match self {
            DatasetSpec::GaussianMixture { modes, .. } => Some(mixture_centers(*modes)),
            _ => None,
        }
    }
}

pub fn mixture_centers(modes: usize) -> Vec<[f64; 2]> {
    (0..modes)
        .map(|k| {
            let angle = TAU * k as f64 / modes as f64;
            [CIRCLE_RADIUS * angle.cos(), CIRCLE_RADIUS * angle.sin()]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B × n_x]`, entries in `[−1, 1]`.
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
}

/// `[B × n_z]` of i.i.d. standard normals.
pub fn sample_prior(rng: &mut Rng, batch: usize, n_z: usize) -> Tensor {
    Tensor::new(vec![batch, n_z], rng.normal_vec(batch * n_z)).expect("shape matches data")
}

fn clip(v: f64) -> f32 {
    v.clamp(-1.0, 1.0) as f32
}

pub fn sample_mixture(modes: usize, std: f64, rng: &mut Rng, batch: usize) -> Batch {
    let centers = mixture_centers(modes);
    let mut data = Vec::with_capacity(2 * batch);
    let labels = (0..batch)
        .map(|_| {
            let k = rng.below(modes);
            let [cx, cy] = centers[k];
            data.push(clip(cx + std * rng.normal()));
            data.push(clip(cy + std * rng.normal()));
            k
        })
        .collect();
    Batch {
        x: Tensor::new(vec![batch, 2], data).expect("shape matches data"),
        labels: Some(labels),
    }
}

pub fn sample_ring(std: f64, rng: &mut Rng, batch: usize) -> Batch {
    let mut data = Vec::with_capacity(2 * batch);
    for _ in 0..batch {
        let angle = TAU * rng.next_f64();
        let r = CIRCLE_RADIUS + std * rng.normal();
        data.push(clip(r * angle.cos()));
        data.push(clip(r * angle.sin()));
    }
    Batch {
        x: Tensor::new(vec![batch, 2], data).expect("shape matches data"),
        labels: None,
    }
}

/// Labels index the dark cells in row-major order.
pub fn sample_checkerboard(cells: usize, rng: &mut Rng, batch: usize) -> Batch {
    let dark: Vec<(usize, usize)> = (0..cells)
        .flat_map(|i| (0..cells).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .collect();
    let width = 2.0 / cells as f64;
    let mut data = Vec::with_capacity(2 * batch);
    let labels = (0..batch)
        .map(|_| {
            let k = rng.below(dark.len());
            let (i, j) = dark[k];
            data.push(clip(-1.0 + width * (j as f64 + rng.next_f64())));
            data.push(clip(-1.0 + width * (i as f64 + rng.next_f64())));
            k
        })
        .collect();
    Batch {
        x: Tensor::new(vec![batch, 2], data).expect("shape matches data"),
        labels: Some(labels),
    }
}

/// Uniform row draws (with replacement) from a loaded dataset.
pub fn sample_rows(dataset: &Tensor, rng: &mut Rng, batch: usize) -> Batch {
    let cols = dataset.cols();
    let mut data = Vec::with_capacity(batch * cols);
    for _ in 0..batch {
        data.extend_from_slice(dataset.row(rng.below(dataset.rows())));
    }
    Batch {
        x: Tensor::new(vec![batch, cols], data).expect("shape matches data"),
        labels: None,
    }
}

/// A validated dataset ready for batch sampling; image files are loaded once.
#[derive(Debug, Clone)]
pub struct Dataset {
    spec: DatasetSpec,
    rows: Option<Tensor>,
}

impl Dataset {
    pub fn open(spec: DatasetSpec) -> Result<Self, DataError> {
        spec.validate()?;
        let rows = match &spec {
            DatasetSpec::BinaryImageFile { path } => Some(load_image_file(path)?.to_tensor()),
            _ => None,
        };
        Ok(Self { spec, rows })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.rows.as_ref().map_or(2, Tensor::cols)
    }

    /// The loaded rows of a file-backed dataset.
    pub fn rows(&self) -> Option<&Tensor> {
        self.rows.as_ref()
    }

    pub fn sample(&self, rng: &mut Rng, batch: usize) -> Batch {
        match (&self.spec, &self.rows) {
            (DatasetSpec::GaussianMixture { modes, std }, _) => {
                sample_mixture(*modes, *std, rng, batch)
            }
            (DatasetSpec::Ring { std }, _) => sample_ring(*std, rng, batch),
            (DatasetSpec::Checkerboard { cells }, _) => sample_checkerboard(*cells, rng, batch),
            (DatasetSpec::BinaryImageFile { .. }, Some(rows)) => sample_rows(rows, rng, batch),
            (DatasetSpec::BinaryImageFile { .. }, None) => unreachable!("opened with rows"),
        }
    }
}

/// `N` images of `H × W × C` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub count: u32,
    pub height: u16,
    pub width: u16,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn image_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }

    /// `[N × H·W·C]` with `x / 127.5 − 1`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| pixel_to_unit(p)).collect();
        Tensor::new(vec![self.count as usize, self.image_len()], data).expect("shape matches data")
    }

    /// Inverse of [`ImageSet::to_tensor`], rounding to the nearest byte.
    pub fn from_tensor(x: &Tensor, height: u16, width: u16, channels: u8) -> Result<Self, DataError> {
        let image_len = height as usize * width as usize * channels as usize;
        if x.shape().len() != 2 || x.cols() != image_len {
            return Err(DataError::Shape(format!(
                "tensor {:?} does not hold {height}×{width}×{channels} images",
                x.shape()
            )));
        }
        Ok(Self {
            count: x.rows() as u32,
            height,
            width,
            channels,
            pixels: x.data().iter().map(|&v| unit_to_pixel(v)).collect(),
        })
    }
}

pub fn pixel_to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

pub fn unit_to_pixel(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn encode_image_file(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + set.pixels.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&set.count.to_le_bytes());
    out.extend_from_slice(&set.height.to_le_bytes());
    out.extend_from_slice(&set.width.to_le_bytes());
    out.push(set.channels);
    out.extend_from_slice(&set.pixels);
    out
}

pub fn decode_image_file(bytes: &[u8], path: &Path) -> Result<ImageSet, DataError> {
    let path = path.to_path_buf();
    if bytes.len() < IMAGE_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != IMAGE_MAGIC {
            return Err(DataError::BadMagic { path });
        }
        return Err(DataError::SizeMismatch {
            path,
            expected: IMAGE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != IMAGE_MAGIC {
        return Err(DataError::BadMagic { path });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
    let version = u32_at(4);
    if version != IMAGE_VERSION {
        return Err(DataError::UnsupportedVersion { path, version });
    }
    let set = ImageSet {
        count: u32_at(8),
        height: u16_at(12),
        width: u16_at(14),
        channels: bytes[16],
        pixels: Vec::new(),
    };
    let expected = IMAGE_HEADER_LEN + set.count as usize * set.image_len();
    if bytes.len() != expected {
        return Err(DataError::SizeMismatch {
            path,
            expected,
            found: bytes.len(),
        });
    }
    Ok(ImageSet {
        pixels: bytes[IMAGE_HEADER_LEN..].to_vec(),
        ..set
    })
}

pub fn load_image_file(path: &Path) -> Result<ImageSet, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image_file(&bytes, path)
}

pub fn write_image_file(set: &ImageSet, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_image_file(set)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
