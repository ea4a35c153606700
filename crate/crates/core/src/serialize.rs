//! Binary containers for process MPOs and datasets.
//!
//! Layout: an 8-byte magic, a `u32` format version and a reserved `u32`
//! (16 bytes total), then little-endian fields. Integers are `u64`, reals
//! `f64`, and complex numbers `(re, im)` pairs of `f64`. Tensors are their
//! rank, shape and row-major data.
//!
//! Process MPO body: `N`, `δt`, provenance (`0` exact, `1` trained), then
//! each site tensor. Dataset body: model parameters (`L`, `J`, `J_E`, `h`,
//! `Δ`, `γ`, `r`, `δt`), `N`, `M`, seed, then per sample the `N` input
//! matrices (2×2, row-major) and the output MPS (site count, site tensors).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::datagen::Dataset;
use crate::model::ModelParams;
use crate::process::{ProcessMpo, Provenance};
use crate::tensor::DenseTensor;
use crate::tn::{Mpo, Mps};
use crate::{Error, Result, C64};

pub const MPO_MAGIC: [u8; 8] = *b"PTMPO\0\0\0";
pub const DATASET_MAGIC: [u8; 8] = *b"PTDATA\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Guard against absurd lengths in corrupted files.
const MAX_ELEMENTS: u64 = 1 << 32;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        self.inner.write_all(magic)?;
        self.inner.write_all(&FORMAT_VERSION.to_le_bytes())?;
        self.inner.write_all(&0u32.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, x: u64) -> Result<()> {
        self.inner.write_all(&x.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, x: f64) -> Result<()> {
        self.inner.write_all(&x.to_le_bytes())?;
        Ok(())
    }

    fn complex(&mut self, z: C64) -> Result<()> {
        self.f64(z.re)?;
        self.f64(z.im)
    }

    fn tensor(&mut self, t: &DenseTensor) -> Result<()> {
        self.u64(t.rank() as u64)?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        for &z in t.data() {
            self.complex(z)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        let mut buf = [0u8; 16];
        self.inner.read_exact(&mut buf)?;
        if &buf[..8] != magic {
            return Err(Error::Format(format!("bad magic {:?}", &buf[..8])));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        if x > MAX_ELEMENTS {
            return Err(Error::Format(format!("length {x} out of range")));
        }
        Ok(x as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn complex(&mut self) -> Result<C64> {
        let re = self.f64()?;
        let im = self.f64()?;
        Ok(C64::new(re, im))
    }

    fn tensor(&mut self) -> Result<DenseTensor> {
        let rank = self.usize()?;
        if rank > 16 {
            return Err(Error::Format(format!("tensor rank {rank} out of range")));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let len = match len {
            Some(l) if l <= MAX_ELEMENTS => l as usize,
            _ => return Err(Error::Format(format!("tensor shape {shape:?} too large"))),
        };
        let data = (0..len).map(|_| self.complex()).collect::<Result<Vec<_>>>()?;
        DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn write_process_mpo<W: Write>(u: &ProcessMpo, out: W) -> Result<()> {
    let mut w = Writer { inner: out };
    w.header(&MPO_MAGIC)?;
    w.u64(u.steps() as u64)?;
    w.f64(u.dt)?;
    w.u64(match u.provenance {
        Provenance::Exact => 0,
        Provenance::Trained => 1,
    })?;
    for site in u.mpo.sites() {
        w.tensor(site)?;
    }
    w.inner.flush()?;
    Ok(())
}

pub fn read_process_mpo<R: Read>(input: R) -> Result<ProcessMpo> {
    let mut r = Reader { inner: input };
    r.header(&MPO_MAGIC)?;
    let n = r.usize()?;
    let dt = r.f64()?;
    let provenance = match r.u64()? {
        0 => Provenance::Exact,
        1 => Provenance::Trained,
        x => return Err(Error::Format(format!("unknown provenance tag {x}"))),
    };
    let sites = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    let mpo = Mpo::new(sites).map_err(|e| Error::Format(e.to_string()))?;
    ProcessMpo::new(mpo, dt, provenance)
}

pub fn write_dataset<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = Writer { inner: out };
    w.header(&DATASET_MAGIC)?;
    let p = &d.params;
    w.u64(p.l as u64)?;
    for x in [p.j, p.j_e, p.h, p.delta, p.gamma, p.r, p.dt] {
        w.f64(x)?;
    }
    w.u64(d.steps as u64)?;
    w.u64(d.len() as u64)?;
    w.u64(d.seed)?;
    for (xs, y) in d.inputs.iter().zip(&d.outputs) {
        for x in xs {
            for i in 0..2 {
                for j in 0..2 {
                    w.complex(x[(i, j)])?;
                }
            }
        }
        w.u64(y.len() as u64)?;
        for site in y.sites() {
            w.tensor(site)?;
        }
    }
    w.inner.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader { inner: input };
    r.header(&DATASET_MAGIC)?;
    let l = r.usize()?;
    let mut f = [0.0; 7];
    for x in f.iter_mut() {
        *x = r.f64()?;
    }
    let params = ModelParams {
        l,
        j: f[0],
        j_e: f[1],
        h: f[2],
        delta: f[3],
        gamma: f[4],
        r: f[5],
        dt: f[6],
    };
    let steps = r.usize()?;
    let count = r.usize()?;
    let seed = r.u64()?;
    let mut inputs = Vec::with_capacity(count.min(1 << 20));
    let mut outputs = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let mut xs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut x = DMatrix::<C64>::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    x[(i, j)] = r.complex()?;
                }
            }
            xs.push(x);
        }
        inputs.push(xs);
        let n = r.usize()?;
        let sites = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        outputs.push(Mps::new(sites).map_err(|e| Error::Format(e.to_string()))?);
    }
    Dataset::new(params, steps, seed, inputs, outputs)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
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

pub fn save_process_mpo(u: &ProcessMpo, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_process_mpo(u, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_process_mpo(path: &Path) -> Result<ProcessMpo> {
    read_process_mpo(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(d, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(fs::File::open(path)?))
}
