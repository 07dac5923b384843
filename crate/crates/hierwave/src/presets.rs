//! Named data presets shared by the CLI and the test suites.

use crate::error::{Error, Result};
use crate::spaces::GridSpec;
use crate::wavesolver::Field;
use std::f64::consts::PI;

/// Spatial profile on the full node set: `zero`, `one`, `sine:m`, `bump`.
pub fn space_preset(name: &str, grid: &GridSpec) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let profile = match name {
        "zero" => vec![0.0; n],
        "one" => vec![1.0; n],
        "bump" => (0..n)
            .map(|j| {
                let s = (grid.y(j) - 0.5) / 0.25;
                if s.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            })
            .collect(),
        _ => {
            if let Some(ms) = name.strip_prefix("sine:") {
                let m: u32 = ms.parse().map_err(|_| {
                    Error::config(format!("bad sine mode in preset '{name}' (want sine:<m>)"))
                })?;
                if m == 0 {
                    return Err(Error::config("sine mode must be at least 1".to_string()));
                }
                (0..n).map(|j| (m as f64 * PI * grid.y(j)).sin()).collect()
            } else {
                return Err(Error::config(format!(
                    "unknown preset '{name}' (expected zero | one | sine:m | bump)"
                )));
            }
        }
    };
    Ok(profile)
}

/// Time-constant space-time field built from a spatial preset.
pub fn field_preset(name: &str, grid: &GridSpec) -> Result<Field> {
    let profile = space_preset(name, grid)?;
    Field::from_profile(*grid, &profile)
}

/// Boundary trace preset over time: `zero`, `sine:m` (sin(mπt/T)), `pulse`.
pub fn trace_preset(name: &str, grid: &GridSpec) -> Result<Vec<f64>> {
    let rows = grid.n_rows();
    let vals = match name {
        "zero" => vec![0.0; rows],
        "pulse" => (0..rows)
            .map(|n| {
                let s = grid.t(n) / grid.t_final;
                if s < 0.25 {
                    (PI * s / 0.25).sin().powi(2)
                } else {
                    0.0
                }
            })
            .collect(),
        _ => {
            if let Some(ms) = name.strip_prefix("sine:") {
                let m: u32 = ms.parse().map_err(|_| {
                    Error::config(format!("bad sine mode in preset '{name}' (want sine:<m>)"))
                })?;
                (0..rows)
                    .map(|n| (m as f64 * PI * grid.t(n) / grid.t_final).sin())
                    .collect()
            } else {
                return Err(Error::config(format!(
                    "unknown trace preset '{name}' (expected zero | sine:m | pulse)"
                )));
            }
        }
    };
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        let grid = GridSpec::with_cfl(10, 1.0, 0.8).unwrap();
        assert!(space_preset("zero", &grid).unwrap().iter().all(|&v| v == 0.0));
        assert!(space_preset("one", &grid).unwrap().iter().all(|&v| v == 1.0));
        let s = space_preset("sine:2", &grid).unwrap();
        assert!(s[0].abs() < 1e-14);
        let b = space_preset("bump", &grid).unwrap();
        assert_eq!(b[0], 0.0);
        assert!(b[5] > 0.9);
        assert!(space_preset("sine:x", &grid).is_err());
        assert!(space_preset("wavelet", &grid).is_err());
        assert!(trace_preset("sine:1", &grid).is_ok());
        assert!(trace_preset("pulse", &grid).is_ok());
    }
}
