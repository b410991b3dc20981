//! Versioned checkpoint files: a short text header, the run configuration, then named
//! little-endian parameter arrays.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;

use crate::config::RunConfig;
use crate::data::Alphabet;
use crate::error::{Error, Result};
use crate::kv;
use crate::model::Model;
use crate::numerics::{Params, Precision, Real, SeedRng, Tensor};

pub const MAGIC: &str = "gatedlex-checkpoint";
pub const VERSION: u32 = 1;

/// A model in whichever precision it was trained.
#[derive(Clone, Debug)]
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    pub fn new(config: &RunConfig, labels: usize, seed: u64) -> Result<Self> {
        let mut rng = SeedRng::seed_from_u64(seed);
        let mc = config.model_config(labels);
        Ok(match config.precision {
            Precision::F32 => AnyModel::F32(Model::new(mc, &mut rng)?),
            Precision::F64 => AnyModel::F64(Model::new(mc, &mut rng)?),
        })
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyModel::F32(_) => Precision::F32,
            AnyModel::F64(_) => Precision::F64,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            AnyModel::F32(m) => m.param_count(),
            AnyModel::F64(m) => m.param_count(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub alphabet: Alphabet,
    pub iteration: usize,
    pub model: AnyModel,
}

fn write_tensors<T: Real, W: Write>(model: &Model<T>, out: &mut W) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    model.visit("", &mut |name, t| {
        let mut bytes = Vec::with_capacity(t.len() * T::PRECISION.bytes());
        for &x in t.data() {
            x.write_le(&mut bytes);
        }
        tensors.push((name.to_string(), t.shape().to_vec(), bytes));
    });
    writeln!(out, "tensors {}", tensors.len())?;
    for (name, shape, bytes) in tensors {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        writeln!(out, "tensor {name} {} {}", bytes.len(), dims.join(" "))?;
        out.write_all(&bytes)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(bad("unexpected end of file"));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn read_section<R: BufRead>(r: &mut R, name: &str) -> Result<String> {
    let header = read_line(r)?;
    let len: usize = header
        .strip_prefix(name)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| bad(format!("expected `{name} <bytes>`, found {header:?}")))?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad(format!("{name} section is not UTF-8")))
}

fn read_tensors<T: Real, R: BufRead>(model: &mut Model<T>, r: &mut R) -> Result<()> {
    let header = read_line(r)?;
    let count: usize = header
        .strip_prefix("tensors ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad(format!("expected `tensors <count>`, found {header:?}")))?;
    let mut blobs: HashMap<String, (Vec<usize>, Vec<u8>)> = HashMap::new();
    for _ in 0..count {
        let line = read_line(r)?;
        let mut parts = line.split(' ');
        let (Some("tensor"), Some(name), Some(nbytes)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("malformed tensor header {line:?}")));
        };
        let nbytes: usize = nbytes.parse().map_err(|_| bad(format!("bad byte count in {line:?}")))?;
        let shape = parts
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape in {line:?}")))?;
        let mut bytes = vec![0u8; nbytes + 1];
        r.read_exact(&mut bytes)?;
        if bytes.pop() != Some(b'\n') {
            return Err(bad(format!("tensor {name} is not newline-terminated")));
        }
        blobs.insert(name.to_string(), (shape, bytes));
    }
    let mut problem = None;
    model.visit_mut("", &mut |name, t| {
        if problem.is_some() {
            return;
        }
        match blobs.remove(name) {
            None => problem = Some(format!("missing tensor {name}")),
            Some((shape, _)) if shape != t.shape() => {
                problem = Some(format!("tensor {name} has shape {shape:?}, model expects {:?}", t.shape()))
            }
            Some((_, bytes)) if bytes.len() != t.len() * T::PRECISION.bytes() => {
                problem = Some(format!("tensor {name} has {} bytes, expected {}", bytes.len(), t.len() * T::PRECISION.bytes()))
            }
            Some((_, bytes)) => {
                for (x, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(T::PRECISION.bytes())) {
                    *x = T::read_le(chunk);
                }
            }
        }
    });
    if let Some(p) = problem {
        return Err(bad(p));
    }
    if let Some(extra) = blobs.keys().min() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut manifest = String::new();
        writeln!(manifest, "alphabet={}", kv::quote(&self.alphabet.as_string())).unwrap();
        writeln!(manifest, "iteration={}", self.iteration).unwrap();
        writeln!(manifest, "precision={}", self.model.precision().name()).unwrap();
        let config = self.config.to_text();
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "manifest {}", manifest.len())?;
        out.write_all(manifest.as_bytes())?;
        writeln!(out, "config {}", config.len())?;
        out.write_all(config.as_bytes())?;
        match &self.model {
            AnyModel::F32(m) => write_tensors(m, out),
            AnyModel::F64(m) => write_tensors(m, out),
        }
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let magic = read_line(&mut r)?;
        let version = magic
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("not a checkpoint file"))?;
        if version != VERSION {
            return Err(bad(format!("checkpoint format version {version} is not supported (expected {VERSION})")));
        }
        let manifest = read_section(&mut r, "manifest")?;
        let mut m = kv::Reader::new(&manifest, "checkpoint manifest")?;
        let alphabet_text: String = m.require("alphabet")?;
        let alphabet = Alphabet::new(alphabet_text.chars())?;
        let iteration = m.require("iteration")?;
        let precision_name: String = m.require("precision")?;
        m.finish()?;
        let config = RunConfig::parse(&read_section(&mut r, "config")?, "checkpoint config")?;
        if config.precision.name() != precision_name {
            return Err(bad("manifest and config disagree on precision"));
        }
        let mut model = AnyModel::new(&config, alphabet.len(), 0)?;
        match &mut model {
            AnyModel::F32(m) => read_tensors(m, &mut r)?,
            AnyModel::F64(m) => read_tensors(m, &mut r)?,
        }
        Ok(Checkpoint {
            config,
            alphabet,
            iteration,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

fn bits<T: Real>(x: T) -> Vec<u8> {
    let mut v = Vec::with_capacity(8);
    x.write_le(&mut v);
    v
}

/// Element-wise equality of all parameters, bit for bit.
pub fn same_parameters<T: Real>(a: &Model<T>, b: &Model<T>) -> bool {
    let mut xs: Vec<(String, Tensor<T>)> = Vec::new();
    a.visit("", &mut |n, t| xs.push((n.to_string(), t.clone())));
    let mut i = 0;
    let mut same = true;
    b.visit("", &mut |n, t| {
        same &= xs.get(i).is_some_and(|(m, u)| {
            m == n && u.shape() == t.shape() && u.data().iter().zip(t.data()).all(|(x, y)| bits(*x) == bits(*y))
        });
        i += 1;
    });
    same && i == xs.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint(precision: Precision) -> Checkpoint {
        let mut config = RunConfig::default();
        config.precision = precision;
        config.encoder.cb_channels = vec![2, 3];
        config.encoder.cb_strides = vec![(2, 2), (1, 1)];
        config.encoder.dscb_channels = vec![3];
        config.hidden = 4;
        let alphabet = Alphabet::new("ab c".chars()).unwrap();
        let model = AnyModel::new(&config, alphabet.len(), 11).unwrap();
        Checkpoint {
            config,
            alphabet,
            iteration: 42,
            model,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for precision in [Precision::F32, Precision::F64] {
            let ck = checkpoint(precision);
            let mut bytes = Vec::new();
            ck.write(&mut bytes).unwrap();
            let back = Checkpoint::read(&bytes[..]).unwrap();
            assert_eq!(back.config, ck.config);
            assert_eq!(back.alphabet, ck.alphabet);
            assert_eq!(back.iteration, 42);
            match (&ck.model, &back.model) {
                (AnyModel::F32(a), AnyModel::F32(b)) => assert!(same_parameters(a, b)),
                (AnyModel::F64(a), AnyModel::F64(b)) => assert!(same_parameters(a, b)),
                _ => panic!("precision changed"),
            }
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let mut bytes = Vec::new();
        checkpoint(Precision::F32).write(&mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen(&format!("{MAGIC} {VERSION}"), &format!("{MAGIC} 99"), 1);
        let err = Checkpoint::read(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn truncation_and_garbage_are_errors() {
        let mut bytes = Vec::new();
        checkpoint(Precision::F64).write(&mut bytes).unwrap();
        assert!(Checkpoint::read(&bytes[..bytes.len() - 9]).is_err());
        assert!(Checkpoint::read(&b"hello\n"[..]).is_err());
    }
}
