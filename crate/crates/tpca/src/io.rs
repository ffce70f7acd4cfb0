//! Dataset and model serialization.
//!
//! Binary dataset container (all little-endian):
//!   bytes 0..5   magic "TPCA1"
//!   u32          order r
//!   r × u32      mode sizes n_1..n_r
//!   u64          sample count N
//!   N·n × f64    samples, each in colexicographic entry order
//!
//! A JSON sidecar `<path>.json` carries metadata (seed, generating model);
//! it is written when available and silently skipped on read if absent.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TpcaError};
use crate::model::{Dataset, TpcaModel};
use crate::tensor::{DenseTensor, Shape, TuckerFactors};

const MAGIC: &[u8; 5] = b"TPCA1";

/// JSON form of a factor matrix (column-major data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixJson {
            nrows: m.nrows(),
            ncols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.nrows * self.ncols {
            return Err(TpcaError::validation("matrix JSON length mismatch"));
        }
        Ok(DMatrix::from_column_slice(self.nrows, self.ncols, &self.data))
    }
}

/// JSON form of a full model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub factors: Vec<MatrixJson>,
    pub nu: Vec<f64>,
    pub sigma2: f64,
}

impl ModelJson {
    pub fn from_model(m: &TpcaModel) -> Self {
        ModelJson {
            factors: m
                .factors()
                .factors()
                .iter()
                .map(MatrixJson::from_matrix)
                .collect(),
            nu: m.nu().data().to_vec(),
            sigma2: m.sigma2(),
        }
    }

    pub fn to_model(&self) -> Result<TpcaModel> {
        let factors = TuckerFactors::new(
            self.factors
                .iter()
                .map(|f| f.to_matrix())
                .collect::<Result<Vec<_>>>()?,
        )?;
        let nu = DenseTensor::new(factors.input_shape(), self.nu.clone())?;
        TpcaModel::new(factors, nu, self.sigma2)
    }
}

/// Sidecar metadata for a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub truth: Option<ModelJson>,
}

fn io_err(path: &Path, e: std::io::Error) -> TpcaError {
    TpcaError::io(path.display().to_string(), e)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Write the binary container and (when metadata exists) the JSON sidecar.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let dims = data.shape().dims();
    let mut wr = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    wr(MAGIC)?;
    wr(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        wr(&(d as u32).to_le_bytes())?;
    }
    wr(&(data.len() as u64).to_le_bytes())?;
    for s in data.samples() {
        for &x in s.data() {
            wr(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;

    if data.seed().is_some() || data.truth().is_some() {
        let meta = DatasetMeta {
            seed: data.seed(),
            truth: data.truth().map(ModelJson::from_model),
        };
        let side = sidecar_path(path);
        let file = File::create(&side).map_err(|e| io_err(&side, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &meta)
            .map_err(|e| TpcaError::validation(format!("sidecar encode: {}", e)))?;
    }
    Ok(())
}

/// Read a dataset; picks up `<path>.json` metadata when present.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(TpcaError::validation(format!(
            "{}: not a dataset file (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
    let order = u32::from_le_bytes(u32buf) as usize;
    if order == 0 || order > 64 {
        return Err(TpcaError::validation("implausible tensor order in header"));
    }
    let mut dims = Vec::with_capacity(order);
    for _ in 0..order {
        r.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let shape = Shape::new(dims)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| io_err(path, e))?;
    let n_samples = u64::from_le_bytes(u64buf) as usize;
    if n_samples == 0 {
        return Err(TpcaError::validation("dataset file holds zero samples"));
    }
    let entries = shape.len();
    let mut samples = Vec::with_capacity(n_samples);
    let mut f64buf = [0u8; 8];
    for _ in 0..n_samples {
        let mut data = Vec::with_capacity(entries);
        for _ in 0..entries {
            r.read_exact(&mut f64buf).map_err(|e| io_err(path, e))?;
            data.push(f64::from_le_bytes(f64buf));
        }
        samples.push(DenseTensor::new(shape.clone(), data)?);
    }

    let side = sidecar_path(path);
    let (seed, truth) = if side.exists() {
        let file = File::open(&side).map_err(|e| io_err(&side, e))?;
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| TpcaError::validation(format!("sidecar decode: {}", e)))?;
        (meta.seed, meta.truth.map(|m| m.to_model()).transpose()?)
    } else {
        (None, None)
    };
    Dataset::new(samples, seed, truth)
}
