//! Binary model checkpoints: magic string, architecture descriptor, then
//! parameters in flatten order and batch-norm running statistics. Values are
//! stored as little-endian `f64` bit patterns so round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::model::MlpModel;

pub const MAGIC: &[u8; 8] = b"VFLPRIV1";

const TAG_LINEAR: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_TANH: u8 = 3;
const TAG_SIGMOID: u8 = 4;
const TAG_BATCHNORM: u8 = 5;

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u64(&mut w, model.input_width() as u64)?;
    let specs = model.specs();
    write_u64(&mut w, specs.len() as u64)?;
    for spec in &specs {
        match *spec {
            LayerSpec::Linear(i, o) => {
                w.write_all(&[TAG_LINEAR])?;
                write_u64(&mut w, i as u64)?;
                write_u64(&mut w, o as u64)?;
            }
            LayerSpec::Relu => w.write_all(&[TAG_RELU])?,
            LayerSpec::Tanh => w.write_all(&[TAG_TANH])?,
            LayerSpec::Sigmoid => w.write_all(&[TAG_SIGMOID])?,
            LayerSpec::BatchNorm(width) => {
                w.write_all(&[TAG_BATCHNORM])?;
                write_u64(&mut w, width as u64)?;
            }
        }
    }
    let params = model.flatten();
    write_u64(&mut w, params.len() as u64)?;
    for p in &params {
        w.write_all(&p.to_le_bytes())?;
    }
    for layer in model.layers() {
        if let Layer::BatchNorm {
            running_mean,
            running_var,
            ..
        } = layer
        {
            for v in running_mean.iter().chain(running_var) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MlpModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Ingest(format!(
            "{}: not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let input_width = read_u64(&mut r)? as usize;
    let layer_count = read_u64(&mut r)? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        specs.push(match tag[0] {
            TAG_LINEAR => LayerSpec::Linear(read_u64(&mut r)? as usize, read_u64(&mut r)? as usize),
            TAG_RELU => LayerSpec::Relu,
            TAG_TANH => LayerSpec::Tanh,
            TAG_SIGMOID => LayerSpec::Sigmoid,
            TAG_BATCHNORM => LayerSpec::BatchNorm(read_u64(&mut r)? as usize),
            other => {
                return Err(Error::Ingest(format!(
                    "{}: unknown layer tag {other}",
                    path.display()
                )))
            }
        });
    }
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let mut model = MlpModel::init(input_width, &specs, &mut rng)?;
    let param_count = read_u64(&mut r)? as usize;
    if param_count != model.param_count() {
        return Err(Error::Ingest(format!(
            "{}: {} parameters for an architecture with {}",
            path.display(),
            param_count,
            model.param_count()
        )));
    }
    let mut params = vec![0.0; param_count];
    for p in &mut params {
        *p = read_f64(&mut r)?;
    }
    model.unflatten(&params)?;
    for layer in model.layers_mut() {
        if let Layer::BatchNorm {
            running_mean,
            running_var,
            ..
        } = layer
        {
            for v in running_mean.iter_mut() {
                *v = read_f64(&mut r)?;
            }
            for v in running_var.iter_mut() {
                *v = read_f64(&mut r)?;
            }
        }
    }
    Ok(model)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut model = MlpModel::init(
            5,
            &[
                LayerSpec::Linear(5, 7),
                LayerSpec::BatchNorm(7),
                LayerSpec::Relu,
                LayerSpec::Linear(7, 3),
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        )
        .unwrap();
        // Touch the running stats so they are not the defaults.
        let x = crate::nn::matrix::Matrix::from_fn(4, 5, |r, c| (r * 5 + c) as f64 * 0.3);
        model.forward_train(&x).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.specs(), model.specs());
        let a = model.flatten();
        let b = loaded.flatten();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(loaded, model);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTMODEL____").unwrap();
        assert!(load(&path).is_err());
    }
}
