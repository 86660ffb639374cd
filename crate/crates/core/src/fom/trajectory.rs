use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use super::FullOrderModel;
use crate::error::{Error, Result};
use crate::parameter_space::ParamPoint;

/// Snapshot matrix `U` (N_u x (N_t+1)) and the matching velocity targets
/// `U_dot[:, n] = f(U[:, n])`. Both are stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Array2<f64>,
    pub derivatives: Array2<f64>,
    pub param: ParamPoint,
    pub dt: f64,
}

/// JSON sidecar written next to the two binary matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub param: ParamPoint,
    pub dt: f64,
    pub n_points: usize,
    pub n_steps: usize,
    pub layout: String,
    pub dtype: String,
    pub snapshots_file: String,
    pub derivatives_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Trajectory {
    pub fn n_points(&self) -> usize {
        self.snapshots.nrows()
    }

    /// Number of time steps `N_t` (one less than the number of columns).
    pub fn n_steps(&self) -> usize {
        self.snapshots.ncols() - 1
    }

    /// Checks `U_dot == rhs(U)` bit-for-bit.
    pub fn verify_derivatives(&self, fom: &dyn FullOrderModel) -> Result<()> {
        if self.n_points() != fom.state_len() {
            return Err(Error::shape(
                format!("{} state entries", fom.state_len()),
                self.n_points(),
            ));
        }
        for (n, (u, ud)) in self
            .snapshots
            .columns()
            .into_iter()
            .zip(self.derivatives.columns())
            .enumerate()
        {
            if fom.rhs(u) != ud {
                return Err(Error::InvalidArgument(format!(
                    "derivative column {n} does not match the model right-hand side"
                )));
            }
        }
        Ok(())
    }

    /// Writes `<stem>.u.f64`, `<stem>.udot.f64` and the `<stem>.json` sidecar
    /// into `dir`; returns the sidecar path.
    pub fn save(&self, dir: &Path, stem: &str, config_hash: Option<&str>) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let u_name = format!("{stem}.u.f64");
        let ud_name = format!("{stem}.udot.f64");
        write_matrix(&dir.join(&u_name), &self.snapshots)?;
        write_matrix(&dir.join(&ud_name), &self.derivatives)?;
        let meta = TrajectoryMeta {
            param: self.param.clone(),
            dt: self.dt,
            n_points: self.n_points(),
            n_steps: self.n_steps(),
            layout: "col-major".into(),
            dtype: "f64le".into(),
            snapshots_file: u_name,
            derivatives_file: ud_name,
            config_hash: config_hash.map(str::to_owned),
        };
        let path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a trajectory from its sidecar. When `fom` is given the
    /// derivative columns are re-checked against its right-hand side.
    pub fn load(sidecar: &Path, fom: Option<&dyn FullOrderModel>) -> Result<Self> {
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let meta: TrajectoryMeta = serde_json::from_str(&text)?;
        if meta.layout != "col-major" || meta.dtype != "f64le" {
            return Err(Error::format(
                sidecar,
                format!("unsupported layout/dtype {}/{}", meta.layout, meta.dtype),
            ));
        }
        let dir = sidecar.parent().unwrap_or(Path::new("."));
        let shape = (meta.n_points, meta.n_steps + 1);
        let traj = Trajectory {
            snapshots: read_matrix(&dir.join(&meta.snapshots_file), shape)?,
            derivatives: read_matrix(&dir.join(&meta.derivatives_file), shape)?,
            param: meta.param,
            dt: meta.dt,
        };
        if let Some(fom) = fom {
            traj.verify_derivatives(fom)?;
        }
        Ok(traj)
    }
}

pub(crate) fn matrix_to_bytes(m: &Array2<f64>, out: &mut Vec<u8>) {
    out.reserve(m.len() * 8);
    for col in m.columns() {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) fn matrix_from_bytes(bytes: &[u8], shape: (usize, usize)) -> Option<Array2<f64>> {
    if bytes.len() != shape.0 * shape.1 * 8 {
        return None;
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec(shape.f(), data).ok()
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::new();
    matrix_to_bytes(m, &mut bytes);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    matrix_from_bytes(&bytes, shape).ok_or_else(|| {
        Error::format(
            path,
            format!(
                "expected {} bytes for a {}x{} matrix, found {}",
                shape.0 * shape.1 * 8,
                shape.0,
                shape.1,
                bytes.len()
            ),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{Burgers1d, FomConfig1D};

    #[test]
    fn save_load_bit_exact() {
        let fom = Burgers1d::new(FomConfig1D::new(41, 0.01, 20)).unwrap();
        let t = fom.solve(&ParamPoint::new(vec![0.8, 1.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let side = t.save(dir.path(), "traj", Some("abc")).unwrap();
        let back = Trajectory::load(&side, Some(&fom)).unwrap();
        assert_eq!(back, t);
        let bytes = std::fs::read(dir.path().join("traj.u.f64")).unwrap();
        // column-major: the second value is row 1 of column 0
        let v1 = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        assert_eq!(v1, t.snapshots[[1, 0]]);
    }

    #[test]
    fn load_rejects_tampered_derivatives() {
        let fom = Burgers1d::new(FomConfig1D::new(21, 0.01, 5)).unwrap();
        let mut t = fom.solve(&ParamPoint::new(vec![0.8, 1.0])).unwrap();
        t.derivatives[[3, 2]] += 1e-12;
        let dir = tempfile::tempdir().unwrap();
        let side = t.save(dir.path(), "bad", None).unwrap();
        assert!(Trajectory::load(&side, None).is_ok());
        assert!(Trajectory::load(&side, Some(&fom)).is_err());
    }

    #[test]
    fn truncated_matrix_is_a_format_error() {
        let fom = Burgers1d::new(FomConfig1D::new(21, 0.01, 5)).unwrap();
        let t = fom.solve(&ParamPoint::new(vec![0.8, 1.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let side = t.save(dir.path(), "t", None).unwrap();
        let p = dir.path().join("t.u.f64");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            Trajectory::load(&side, None),
            Err(Error::Format { .. })
        ));
    }
}
