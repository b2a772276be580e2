//! Binary trajectory dumps: little-endian `u64 d`, `u64 n_steps`, `f64 h`,
//! then the `(n_steps + 1) × d` states as row-major `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_trajectory<W: Write>(mut w: W, traj: &super::Trajectory) -> Result<()> {
    w.write_all(&(traj.dim as u64).to_le_bytes())?;
    w.write_all(&(traj.grid.n_steps as u64).to_le_bytes())?;
    w.write_all(&traj.grid.h().to_le_bytes())?;
    for v in &traj.states {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Returns `(d, n_steps, h, states)`.
pub fn read_trajectory<R: Read>(mut r: R) -> Result<(usize, usize, f64, Vec<f64>)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let d = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let h = f64::from_le_bytes(buf);
    let len = d
        .checked_mul(n + 1)
        .ok_or_else(|| Error::Validation("corrupt trajectory header".into()))?;
    let mut states = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        states.push(f64::from_le_bytes(buf));
    }
    Ok((d, n, h, states))
}
