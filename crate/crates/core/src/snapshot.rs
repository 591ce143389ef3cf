//! Binary field snapshots: one ASCII header line `dim N rank repr component_count`,
//! then little-endian `f64` values, component-major, row-major within a component.
//! Spectral snapshots interleave real and imaginary parts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{CnsError, Result};
use crate::spectral::{GridField, Rank, Representation, TorusGrid};

pub fn write_field<W: Write>(w: &mut W, f: &GridField) -> Result<()> {
    let g = f.grid();
    writeln!(
        w,
        "{} {} {} {} {}",
        g.dim(),
        g.points_per_axis(),
        f.rank().name(),
        f.representation().name(),
        f.component_count()
    )?;
    match f.representation() {
        Representation::Physical => {
            for c in f.physical()? {
                for v in c {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Representation::Spectral => {
            for c in f.spectral()? {
                for v in c {
                    w.write_all(&v.re.to_le_bytes())?;
                    w.write_all(&v.im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_field<R: BufRead>(r: &mut R) -> Result<GridField> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(CnsError::Format(format!("bad snapshot header {:?}", header.trim_end())));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| CnsError::Format(format!("bad integer {s:?} in header")));
    let dim = num(parts[0])?;
    let n = num(parts[1])?;
    let rank = match parts[2] {
        "scalar" => Rank::Scalar,
        "vector" => Rank::Vector,
        "matrix" => Rank::Matrix,
        other => return Err(CnsError::Format(format!("unknown rank {other:?}"))),
    };
    let count = num(parts[4])?;
    let grid = TorusGrid::new(dim, n)?;
    if count != rank.components(dim) {
        return Err(CnsError::Format(format!("{count} components for a {} field in {dim}D", rank.name())));
    }
    let mut next = || -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    match parts[3] {
        "physical" => {
            let mut comps = Vec::with_capacity(count);
            for _ in 0..count {
                comps.push((0..grid.len()).map(|_| next()).collect::<Result<Vec<_>>>()?);
            }
            GridField::from_components(&grid, rank, comps)
        }
        "spectral" => {
            let mut comps = Vec::with_capacity(count);
            for _ in 0..count {
                comps.push(
                    (0..grid.len()).map(|_| Ok(Complex64::new(next()?, next()?))).collect::<Result<Vec<_>>>()?,
                );
            }
            GridField::from_spectral(&grid, rank, comps)
        }
        other => Err(CnsError::Format(format!("unknown representation {other:?}"))),
    }
}

pub fn save(path: &Path, f: &GridField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GridField> {
    read_field(&mut BufReader::new(File::open(path)?))
}

/// Checkpoint: `checkpoint <count>` then, per entry, a `label <text>` line and a snapshot.
pub fn write_checkpoint(path: &Path, fields: &[(String, GridField)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "checkpoint {}", fields.len())?;
    for (label, f) in fields {
        writeln!(w, "label {label}")?;
        write_field(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, GridField)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let count: usize = line
        .strip_prefix("checkpoint ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CnsError::Format(format!("bad checkpoint header {:?}", line.trim_end())))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        line.clear();
        r.read_line(&mut line)?;
        let label = line
            .strip_prefix("label ")
            .ok_or_else(|| CnsError::Format(format!("expected label line, got {:?}", line.trim_end())))?
            .trim_end()
            .to_string();
        out.push((label, read_field(&mut r)?));
    }
    Ok(out)
}
