//! File formats: table CSV, raw float64 dumps with JSON sidecars, curve CSV.
//! All writers go through a temp file in the target directory and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densities::DensityTable;
use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a sibling temp file and an atomic rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f64_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Io(format!("{} bytes is not a whole number of float64s", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Raw little-endian float64 dump, written atomically.
pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    atomic_write(path, &f64_bytes(values))
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    f64_from_bytes(&fs::read(path)?)
}

/// CSV with one index column per dimension followed by the mass.
pub fn table_to_csv(table: &DensityTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..table.shape().len()).map(|d| format!("i{d}")).collect();
    header.push("mass".into());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (flat, m) in table.mass().iter().enumerate() {
        let mut row: Vec<String> = table.unravel(flat).iter().map(|i| i.to_string()).collect();
        row.push(format!("{m:e}"));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_table_csv(path: &Path, table: &DensityTable) -> Result<()> {
    atomic_write(path, &table_to_csv(table)?)
}

/// Reads a table CSV. The shape is the per-column maximum index plus one.
pub fn read_table_csv(path: &Path) -> Result<DensityTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let dims = r.headers().map_err(|e| Error::Io(e.to_string()))?.len().saturating_sub(1);
    if dims == 0 {
        return Err(Error::Io("table CSV needs index columns and a mass column".into()));
    }
    let mut rows = Vec::new();
    let mut shape = vec![0usize; dims];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let parse_err = |s: &str| Error::Io(format!("bad CSV field `{s}`"));
        let idx = (0..dims)
            .map(|d| rec[d].trim().parse::<usize>().map_err(|_| parse_err(&rec[d])))
            .collect::<Result<Vec<_>>>()?;
        let mass: f64 = rec[dims].trim().parse().map_err(|_| parse_err(&rec[dims]))?;
        for (s, i) in shape.iter_mut().zip(&idx) {
            *s = (*s).max(i + 1);
        }
        rows.push((idx, mass));
    }
    let n: usize = shape.iter().product();
    if rows.len() != n {
        return Err(Error::Io(format!("expected {n} rows for shape {shape:?}, got {}", rows.len())));
    }
    let mut mass = vec![f64::NAN; n];
    for (idx, m) in rows {
        let flat = idx.iter().zip(&shape).fold(0, |acc, (i, s)| acc * s + i);
        mass[flat] = m;
    }
    DensityTable::from_unnormalized(shape, mass)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TableSidecar {
    domain_shape: Vec<usize>,
    dtype: String,
}

/// Row-major little-endian float64 dump plus a `.json` sidecar with the shape.
pub fn write_table_binary(path: &Path, table: &DensityTable) -> Result<()> {
    let side = TableSidecar { domain_shape: table.shape().to_vec(), dtype: "f64-le".into() };
    atomic_write(path, &f64_bytes(table.mass()))?;
    atomic_write(&sidecar_path(path), &serde_json::to_vec_pretty(&side)?)
}

pub fn read_table_binary(path: &Path) -> Result<DensityTable> {
    let side: TableSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let mass = f64_from_bytes(&fs::read(path)?)?;
    DensityTable::new(side.domain_shape, mass)
}

/// Metadata stored next to a sample dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleSidecar {
    pub n_samples: usize,
    pub dim: usize,
    pub seed: u64,
    pub steps: usize,
}

/// Writes `n_samples * dim` row-major values and the sidecar.
pub fn write_samples(path: &Path, samples: &[f64], meta: &SampleSidecar) -> Result<()> {
    if samples.len() != meta.n_samples * meta.dim {
        return Err(Error::InvalidArgument(format!(
            "{} values for {} samples of dimension {}",
            samples.len(),
            meta.n_samples,
            meta.dim
        )));
    }
    atomic_write(path, &f64_bytes(samples))?;
    atomic_write(&sidecar_path(path), &serde_json::to_vec_pretty(meta)?)
}

pub fn read_samples(path: &Path) -> Result<(Vec<f64>, SampleSidecar)> {
    let meta: SampleSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let values = f64_from_bytes(&fs::read(path)?)?;
    if values.len() != meta.n_samples * meta.dim {
        return Err(Error::Io("sample dump does not match its sidecar".into()));
    }
    Ok((values, meta))
}

/// Two-column CSV `x,pdf`.
pub fn write_curve_csv(path: &Path, x: &[f64], pdf: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "pdf"]).map_err(|e| Error::Io(e.to_string()))?;
    for (a, b) in x.iter().zip(pdf) {
        w.write_record([format!("{a:e}"), format!("{b:e}")]).map_err(|e| Error::Io(e.to_string()))?;
    }
    atomic_write(path, &w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = DensityTable::from_unnormalized(vec![2, 3], vec![1.0, 2.0, 0.0, 4.0, 5.0, 6.0]).unwrap();
        let csv = dir.path().join("t.csv");
        write_table_csv(&csv, &t).unwrap();
        let back = read_table_csv(&csv).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.l1_distance(&t).unwrap() < 1e-14);

        let bin = dir.path().join("t.bin");
        write_table_binary(&bin, &t).unwrap();
        assert_eq!(read_table_binary(&bin).unwrap(), t);
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let meta = SampleSidecar { n_samples: 2, dim: 2, seed: 7, steps: 10 };
        write_samples(&p, &[1.0, 2.0, 3.0, 4.0], &meta).unwrap();
        assert_eq!(read_samples(&p).unwrap(), (vec![1.0, 2.0, 3.0, 4.0], meta.clone()));
        assert!(write_samples(&p, &[1.0], &meta).is_err());
    }
}
