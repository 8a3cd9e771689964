//! Complex fields on the staggered grid and the `.sfld` container format.
//!
//! An `.sfld` file is a single line of UTF-8 JSON (the header) terminated by
//! `\n`, followed by `count` little-endian `f64` pairs `(re, im)` in the
//! index order documented in [`crate::grid`].

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, GridDomain, Mask};

/// A complex field on one staggering of a grid.
///
/// Entries on entities outside the closure of the included cells are zero.
#[derive(Clone, Debug)]
pub struct StaggeredField {
    grid: Arc<GridDomain>,
    kind: FieldKind,
    values: Vec<Complex64>,
}

impl StaggeredField {
    pub fn zeros(grid: &Arc<GridDomain>, kind: FieldKind) -> Self {
        StaggeredField { grid: grid.clone(), kind, values: vec![Complex64::new(0.0, 0.0); grid.len(kind)] }
    }

    /// Samples `f(position, direction)`; absent entities are left at zero.
    pub fn from_fn(grid: &Arc<GridDomain>, kind: FieldKind, f: impl Fn([f64; 3], usize) -> Complex64) -> Self {
        let values = (0..grid.len(kind))
            .map(|i| {
                if grid.is_present(kind, i) {
                    f(grid.position(kind, i), grid.direction(kind, i))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        StaggeredField { grid: grid.clone(), kind, values }
    }

    pub fn from_values(grid: &Arc<GridDomain>, kind: FieldKind, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len(kind) {
            return Err(Error::Shape(format!(
                "{} field needs {} values, got {}",
                kind.name(),
                grid.len(kind),
                values.len()
            )));
        }
        let mut f = StaggeredField { grid: grid.clone(), kind, values };
        f.zero_absent();
        Ok(f)
    }

    fn zero_absent(&mut self) {
        for (i, v) in self.values.iter_mut().enumerate() {
            if !self.grid.is_present(self.kind, i) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Same field with the entries masked by `mask` set to zero.
    pub fn masked(&self, mask: Mask) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if !self.grid.is_free(self.kind, i, mask) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// Errors unless `other` lives on the same grid and staggering.
    pub fn check_compatible(&self, other: &StaggeredField) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::Shape(format!("{} field vs {} field", self.kind.name(), other.kind.name())));
        }
        if !Arc::ptr_eq(&self.grid, &other.grid) && *self.grid != *other.grid {
            return Err(Error::Shape("fields live on different grids".into()));
        }
        Ok(())
    }

    pub fn check_kind(&self, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Shape(format!("expected a {} field, got {}", kind.name(), self.kind.name())));
        }
        Ok(())
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: Complex64, other: &StaggeredField) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &StaggeredField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn add(&self, other: &StaggeredField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Zero outside the entities where `keep` holds.
    pub fn support_restricted(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if !keep(i) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// Moves the values to another grid with the same box (same layout),
    /// dropping entries absent there.
    pub fn transplant(&self, grid: &Arc<GridDomain>) -> Result<Self> {
        if grid.dims() != self.grid.dims() || grid.spacing() != self.grid.spacing() {
            return Err(Error::Shape("target grid has a different box".into()));
        }
        StaggeredField::from_values(grid, self.kind, self.values.clone())
    }

    pub fn write_sfld(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = SfldHeader::for_field(self);
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an `.sfld` file onto `grid`; the header must match the grid.
    pub fn read_sfld(grid: &Arc<GridDomain>, path: impl AsRef<Path>) -> Result<Self> {
        let (header, values) = read_sfld_raw(path)?;
        if header.dims != grid.dims() || (header.spacing - grid.spacing()).abs() > 1e-15 * grid.spacing() {
            return Err(Error::Shape(format!(
                "file grid {:?} h={} does not match {:?} h={}",
                header.dims,
                header.spacing,
                grid.dims(),
                grid.spacing()
            )));
        }
        StaggeredField::from_values(grid, header.kind, values)
    }
}

/// Header of an `.sfld` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfldHeader {
    pub format: String,
    pub version: u32,
    pub kind: FieldKind,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    pub endianness: String,
    pub count: usize,
    pub layout: String,
}

impl SfldHeader {
    fn for_field(f: &StaggeredField) -> Self {
        SfldHeader {
            format: "sfld".into(),
            version: 1,
            kind: f.kind,
            dims: f.grid.dims(),
            spacing: f.grid.spacing(),
            origin: f.grid.origin(),
            endianness: "little".into(),
            count: f.values.len(),
            layout: "blocks x,y,z; i fastest; (re, im) f64 pairs".into(),
        }
    }
}

/// Reads header and payload without a grid.
pub fn read_sfld_raw(path: impl AsRef<Path>) -> Result<(SfldHeader, Vec<Complex64>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header terminator".into()));
    }
    let header: SfldHeader = serde_json::from_slice(&line[..line.len() - 1])?;
    if header.format != "sfld" || header.endianness != "little" {
        return Err(Error::Format(format!("unsupported header {} / {}", header.format, header.endianness)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 16 * header.count {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", 16 * header.count, payload.len())));
    }
    let values = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((header, values))
}
