//! Binary dump of retained posterior draws.
//!
//! All fields are little-endian.
//!
//! ```text
//! header:  magic  [u8; 8] = "MVOPTRCE"
//!          version u32    = 1
//!          n, j, p u32
//!          mode    u32    (0 threshold, 1 correlation, 2 unconstrained)
//!          records u64
//!          levels  [u32; j]
//! record:  iteration u64, chain u32, reserved u32 (zero),
//!          beta  [f64; j * p]        row-major
//!          sigma [f64; j * j]        row-major
//!          gamma [f64; sum(c_j - 1)] item by item
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::PosteriorDraws;
use crate::error::{MvopError, Result};
use crate::model::{IdentificationMode, MvopParams};

const MAGIC: &[u8; 8] = b"MVOPTRCE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: u64,
    pub chain: u32,
    pub params: MvopParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub n_units: u32,
    pub records: Vec<TraceRecord>,
}

fn mode_code(m: IdentificationMode) -> u32 {
    match m {
        IdentificationMode::Threshold => 0,
        IdentificationMode::Correlation => 1,
        IdentificationMode::Unconstrained => 2,
    }
}

/// Write every retained draw of every chain, chain by chain.
pub fn write_trace(out: &mut impl Write, n_units: usize, chains: &[PosteriorDraws]) -> Result<()> {
    let first = chains
        .iter()
        .flat_map(|c| c.params.first())
        .next()
        .ok_or_else(|| MvopError::domain("no retained draws to write"))?;
    let j = first.n_items();
    let p = first.n_covariates();
    let total: u64 = chains.iter().map(|c| c.params.len() as u64).sum();
    out.write_all(MAGIC)?;
    for v in [VERSION, n_units as u32, j as u32, p as u32, mode_code(first.mode())] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&total.to_le_bytes())?;
    for a in 0..j {
        out.write_all(&(first.levels(a) as u32).to_le_bytes())?;
    }
    for c in chains {
        for (it, params) in c.iterations.iter().zip(&c.params) {
            out.write_all(&(*it as u64).to_le_bytes())?;
            out.write_all(&(c.chain as u32).to_le_bytes())?;
            out.write_all(&0u32.to_le_bytes())?;
            for a in 0..j {
                for k in 0..p {
                    out.write_all(&params.beta()[(a, k)].to_le_bytes())?;
                }
            }
            for a in 0..j {
                for b in 0..j {
                    out.write_all(&params.sigma()[(a, b)].to_le_bytes())?;
                }
            }
            for g in params.gamma() {
                for v in g {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_trace(input: &mut impl Read) -> Result<TraceFile> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MvopError::validation("not an MVOP trace file"));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(MvopError::validation(format!("unsupported trace version {version}")));
    }
    let n = read_u32(input)?;
    let j = read_u32(input)? as usize;
    let p = read_u32(input)? as usize;
    let mode = match read_u32(input)? {
        0 => IdentificationMode::Threshold,
        1 => IdentificationMode::Correlation,
        2 => IdentificationMode::Unconstrained,
        m => return Err(MvopError::validation(format!("unknown mode code {m}"))),
    };
    let total = read_u64(input)?;
    let levels: Vec<u32> = (0..j).map(|_| read_u32(input)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    for _ in 0..total {
        let iteration = read_u64(input)?;
        let chain = read_u32(input)?;
        read_u32(input)?;
        let mut beta = DMatrix::<f64>::zeros(j, p);
        for a in 0..j {
            for k in 0..p {
                beta[(a, k)] = read_f64(input)?;
            }
        }
        let mut sigma = DMatrix::<f64>::zeros(j, j);
        for a in 0..j {
            for b in 0..j {
                sigma[(a, b)] = read_f64(input)?;
            }
        }
        let gamma = levels
            .iter()
            .map(|&c| (1..c).map(|_| read_f64(input)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        records.push(TraceRecord {
            iteration,
            chain,
            params: MvopParams::new(mode, gamma, beta, sigma)?,
        });
    }
    Ok(TraceFile { n_units: n, records })
}
