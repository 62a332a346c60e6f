//! CMIF map files.
//!
//! Binary layout, little-endian: magic `CMIF`, `u32` version, `u32` height,
//! `u32` width, `i32` origin row, `i32` origin col, then `h·w` `f64` MI
//! values, `h·w` `u32` overlap counts and `h·w` `u8` validity flags, all in
//! row-major displacement order.

use std::io::{Read, Write};

use crate::cmif::CmifMap;
use crate::domain::{Displacement, DisplacementDomain};
use crate::error::{Error, Result};
use crate::grid::GridShape;

pub const MAGIC: &[u8; 4] = b"CMIF";
pub const VERSION: u32 = 1;

pub fn write_binary(map: &CmifMap<u32>, mut w: impl Write) -> Result<()> {
    let d = map.domain();
    let to_u32 =
        |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("extent {v} exceeds u32")));
    let to_i32 =
        |v: isize| i32::try_from(v).map_err(|_| Error::Format(format!("origin {v} exceeds i32")));
    let mut buf = Vec::with_capacity(24 + d.len() * 13);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(d.extent().height())?.to_le_bytes());
    buf.extend_from_slice(&to_u32(d.extent().width())?.to_le_bytes());
    buf.extend_from_slice(&to_i32(d.origin().row)?.to_le_bytes());
    buf.extend_from_slice(&to_i32(d.origin().col)?.to_le_bytes());
    map.mi()
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    map.n()
        .iter()
        .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    buf.extend(map.valid().iter().map(|&v| v as u8));
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(mut r: impl Read) -> Result<CmifMap<u32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| Error::Format("truncated map file".into()))?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::Format("missing CMIF magic".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported map version {version}")));
    }
    let h = u32_at(take(4)?) as usize;
    let w = u32_at(take(4)?) as usize;
    let or = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as isize;
    let oc = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as isize;
    let domain = DisplacementDomain::new(Displacement::new(or, oc), GridShape::new(h, w)?);
    let len = domain.len();
    let mi = take(8 * len)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let n = take(4 * len)?.chunks_exact(4).map(u32_at).collect();
    let valid = take(len)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("validity byte {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after map".into()));
    }
    CmifMap::new(domain, mi, n, valid)
}

/// One row per displacement: `chi_row,chi_col,mi,n,valid`.
pub fn write_csv<N: Copy + Into<f64> + std::fmt::Display>(
    map: &CmifMap<N>,
    mut w: impl Write,
) -> Result<()> {
    let mut s = String::from("chi_row,chi_col,mi,n,valid\n");
    for (i, chi) in map.domain().iter().enumerate() {
        s.push_str(&format!(
            "{},{},{:e},{},{}\n",
            chi.row,
            chi.col,
            map.mi()[i],
            map.n()[i],
            map.valid()[i] as u8
        ));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Result of comparing two maps cell by cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapDiff {
    pub same_domain: bool,
    pub n_mismatches: usize,
    pub valid_mismatches: usize,
    /// Largest MI difference over cells valid in both maps.
    pub max_mi_diff: f64,
}

impl MapDiff {
    pub fn within(&self, tol: f64) -> bool {
        self.same_domain
            && self.n_mismatches == 0
            && self.valid_mismatches == 0
            && self.max_mi_diff <= tol
    }
}

pub fn diff(a: &CmifMap<u32>, b: &CmifMap<u32>) -> MapDiff {
    if a.domain() != b.domain() {
        return MapDiff {
            same_domain: false,
            n_mismatches: 0,
            valid_mismatches: 0,
            max_mi_diff: f64::INFINITY,
        };
    }
    let mut d = MapDiff {
        same_domain: true,
        n_mismatches: 0,
        valid_mismatches: 0,
        max_mi_diff: 0.0,
    };
    for i in 0..a.domain().len() {
        d.n_mismatches += (a.n()[i] != b.n()[i]) as usize;
        d.valid_mismatches += (a.valid()[i] != b.valid()[i]) as usize;
        if a.valid()[i] && b.valid()[i] {
            d.max_mi_diff = d.max_mi_diff.max((a.mi()[i] - b.mi()[i]).abs());
        }
    }
    d
}
