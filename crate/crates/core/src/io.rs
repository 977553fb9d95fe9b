//! Field and decomposition serialization.
//!
//! Binary fields: four little-endian `u64` (`d`, `L`, `M`, kind with 0 = real,
//! 1 = complex) followed by little-endian `f64` samples in row-major order,
//! complex samples interleaved `(re, im)`. Sparse pieces: a little-endian `u64`
//! count followed by `(u64 cell, f64 re, f64 im)` records. CSV fields use the
//! columns `i,x,value` / `i,x,re,im` in one dimension and `i,j,x,y,…` in two.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::amalgam::ExponentConfig;
use crate::czdecomp::{AtomicDecomposition, DecompositionEntry, DecompositionStats, Piece};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, LatticeCube, SampledField, ValueKind};

fn u64_at(bytes: &[u8], k: usize) -> Result<u64> {
    bytes
        .get(8 * k..8 * k + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("truncated header".into()))
}

/// Encodes a field in the binary format.
pub fn field_to_bytes(f: &SampledField) -> Vec<u8> {
    let s = &f.spec;
    let kind = match f.kind {
        ValueKind::Real => 0u64,
        ValueKind::Complex => 1u64,
    };
    let mut out = Vec::with_capacity(32 + f.values.len() * 16);
    for v in [s.dim as u64, s.half_width as u64, s.per_unit as u64, kind] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &f.values {
        out.extend_from_slice(&v.re.to_le_bytes());
        if kind == 1 {
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    out
}

/// Decodes a binary field; the margin reads back as zero.
pub fn field_from_bytes(bytes: &[u8]) -> Result<SampledField> {
    let (d, l, m, kind) = (u64_at(bytes, 0)?, u64_at(bytes, 1)?, u64_at(bytes, 2)?, u64_at(bytes, 3)?);
    let spec = GridSpec::new(d as usize, l as usize, m as usize, 0).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let width = match kind {
        0 => 1,
        1 => 2,
        k => return Err(Error::Format(format!("unknown value kind {k}"))),
    };
    let body = &bytes[32..];
    if body.len() != spec.len() * width * 8 {
        return Err(Error::Format(format!("expected {} samples, found {} bytes", spec.len(), body.len())));
    }
    let nums: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let values = if width == 1 {
        nums.into_iter().map(|v| Complex64::new(v, 0.0)).collect()
    } else {
        nums.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
    };
    let mut f = SampledField::from_complex(spec, values)?;
    if kind == 0 {
        f.kind = ValueKind::Real;
    }
    Ok(f)
}

pub fn write_field(path: &Path, f: &SampledField) -> Result<()> {
    fs::write(path, field_to_bytes(f))?;
    Ok(())
}

/// Reads a field from `.bin` (binary) or `.csv`.
pub fn read_field(path: &Path) -> Result<SampledField> {
    if path.extension().is_some_and(|e| e == "csv") {
        return read_field_csv(path);
    }
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    field_from_bytes(&bytes)
}

pub fn write_field_csv(path: &Path, f: &SampledField) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let s = &f.spec;
    let complex = f.kind == ValueKind::Complex;
    let mut header: Vec<&str> = if s.dim == 1 { vec!["i", "x"] } else { vec!["i", "j", "x", "y"] };
    header.extend(if complex { vec!["re", "im"] } else { vec!["value"] });
    w.write_record(&header).map_err(csv_err)?;
    for (idx, v) in f.values.iter().enumerate() {
        let ij = s.unravel(idx);
        let c = s.center(idx);
        let mut rec: Vec<String> = if s.dim == 1 {
            vec![ij[0].to_string(), c[0].to_string()]
        } else {
            vec![ij[0].to_string(), ij[1].to_string(), c[0].to_string(), c[1].to_string()]
        };
        rec.push(v.re.to_string());
        if complex {
            rec.push(v.im.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Reads a CSV field, inferring `d`, `h` and `L` from the index and coordinate columns.
pub fn read_field_csv(path: &Path) -> Result<SampledField> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let dim = if header.iter().any(|h| h == "y") { 2 } else { 1 };
    let complex = header.iter().any(|h| h == "im");
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| Error::Format(format!("missing column {name}")));
    let (cx, cre) = (col("x")?, if complex { col("re")? } else { col("value")? });
    let cim = if complex { Some(col("im")?) } else { None };
    let mut xs = Vec::new();
    let mut vals = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |k: usize| -> Result<f64> { rec[k].trim().parse().map_err(|_| Error::Format(format!("bad number {:?}", &rec[k]))) };
        xs.push(num(cx)?);
        vals.push(Complex64::new(num(cre)?, if let Some(k) = cim { num(k)? } else { 0.0 }));
    }
    let n = (vals.len() as f64).powf(1.0 / dim as f64).round() as usize;
    if n < 2 || n.pow(dim as u32) != vals.len() {
        return Err(Error::Format("sample count is not a full grid".into()));
    }
    let stride = if dim == 1 { 1 } else { n };
    let h = xs[stride] - xs[0];
    let m = (1.0 / h).round() as usize;
    let l = n / (2 * m);
    let spec = GridSpec::new(dim, l, m, 0).map_err(|e| Error::Format(format!("inconsistent grid: {e}")))?;
    if spec.len() != vals.len() {
        return Err(Error::Format("grid size does not match the coordinates".into()));
    }
    let mut f = SampledField::from_complex(spec, vals)?;
    if !complex {
        f.kind = ValueKind::Real;
    }
    Ok(f)
}

/// Encodes a sparse piece.
pub fn piece_to_bytes(p: &Piece<Complex64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + p.cells.len() * 24);
    out.extend_from_slice(&(p.cells.len() as u64).to_le_bytes());
    for (&c, v) in p.cells.iter().zip(&p.vals) {
        out.extend_from_slice(&(c as u64).to_le_bytes());
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn piece_from_bytes(bytes: &[u8]) -> Result<Piece<Complex64>> {
    let n = u64_at(bytes, 0)? as usize;
    if bytes.len() != 8 + 24 * n {
        return Err(Error::Format(format!("piece of {n} records has {} bytes", bytes.len())));
    }
    let mut p = Piece { cells: Vec::with_capacity(n), vals: Vec::with_capacity(n) };
    for rec in bytes[8..].chunks_exact(24) {
        p.cells.push(u64::from_le_bytes(rec[0..8].try_into().unwrap()) as usize);
        let re = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        let im = f64::from_le_bytes(rec[16..24].try_into().unwrap());
        p.vals.push(Complex64::new(re, im));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    lambda: f64,
    cube: LatticeCube,
    j: i32,
    k: usize,
    moments_required: bool,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    spec: GridSpec,
    cfg: ExponentConfig,
    stats: DecompositionStats,
    entries: Vec<ManifestEntry>,
    residual: String,
}

/// Writes `manifest.json`, `atom_NNNNN.bin` and `residual.bin` into `dir`.
pub fn write_decomposition(dir: &Path, dec: &AtomicDecomposition) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dec.entries.len());
    for (n, e) in dec.entries.iter().enumerate() {
        let file = format!("atom_{n:05}.bin");
        fs::write(dir.join(&file), piece_to_bytes(&e.atom))?;
        entries.push(ManifestEntry { lambda: e.lambda, cube: e.cube.clone(), j: e.j, k: e.k, moments_required: e.moments_required, file });
    }
    write_field(&dir.join("residual.bin"), &dec.residual)?;
    let manifest = Manifest { spec: dec.spec, cfg: dec.cfg, stats: dec.stats.clone(), entries, residual: "residual.bin".into() };
    let mut w = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush()?;
    Ok(())
}

/// Reads a directory written by [`write_decomposition`].
pub fn read_decomposition(dir: &Path) -> Result<AtomicDecomposition> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("manifest.json"))?))?;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let atom = piece_from_bytes(&fs::read(dir.join(&e.file))?)?;
        if atom.cells.iter().any(|&c| c >= manifest.spec.len()) {
            return Err(Error::Format(format!("{} indexes outside the grid", e.file)));
        }
        entries.push(DecompositionEntry { lambda: e.lambda, cube: e.cube, j: e.j, k: e.k, moments_required: e.moments_required, atom });
    }
    let mut residual = read_field(&dir.join(&manifest.residual))?;
    if residual.spec.len() != manifest.spec.len() {
        return Err(Error::Format("residual grid does not match the manifest".into()));
    }
    residual.spec = manifest.spec;
    Ok(AtomicDecomposition { spec: manifest.spec, cfg: manifest.cfg, entries, residual, stats: manifest.stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_complex;

    #[test]
    fn binary_round_trip_is_bitwise() {
        let s = GridSpec::new(2, 1, 8, 0).unwrap();
        let f = sample_complex(s, |x| Complex64::new(x[0].sin(), x[1] / 3.0)).unwrap();
        assert_eq!(field_from_bytes(&field_to_bytes(&f)).unwrap(), f);
        assert!(field_from_bytes(&field_to_bytes(&f)[..40]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = GridSpec::new(1, 2, 8, 0).unwrap();
        let f = crate::grid::sample(s, |x| 0.1 + x[0] / 7.0).unwrap();
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &f).unwrap();
        assert_eq!(read_field(&p).unwrap(), f);
    }
}
