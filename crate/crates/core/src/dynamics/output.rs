//! CSV dumps of trajectories and ensemble endpoints. Floats are written with
//! Rust's shortest round-trip formatting.

use std::io::Write;

use crate::error::Result;
use crate::spectral::{seminorm, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// `t,mode_0,...,mode_M`
    Full,
    /// `t,seminorm_m1,mass`
    Reduced,
}

/// Recorded states of one path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, u: &SpectralField) {
        self.times.push(t);
        self.states.push(u.clone());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    traj: &Trajectory,
    format: TrajectoryFormat,
) -> Result<()> {
    let m = traj.states.first().map_or(0, |u| u.truncation());
    match format {
        TrajectoryFormat::Full => {
            write!(w, "t")?;
            for k in 0..=m {
                write!(w, ",mode_{k}")?;
            }
            writeln!(w)?;
            for (t, u) in traj.times.iter().zip(&traj.states) {
                write!(w, "{t:?}")?;
                for c in u.coeffs() {
                    write!(w, ",{c:?}")?;
                }
                writeln!(w)?;
            }
        }
        TrajectoryFormat::Reduced => {
            writeln!(w, "t,seminorm_m1,mass")?;
            for (t, u) in traj.times.iter().zip(&traj.states) {
                writeln!(w, "{t:?},{:?},{:?}", seminorm(u, -1.0), u.mean())?;
            }
        }
    }
    Ok(())
}

/// One row per path: `path,status,mode_0,...,mode_M`; failed paths carry
/// their error kind and empty coefficients.
pub fn write_endpoints_csv<W: Write>(
    w: &mut W,
    endpoints: &[Result<SpectralField>],
    m: usize,
) -> Result<()> {
    write!(w, "path,status")?;
    for k in 0..=m {
        write!(w, ",mode_{k}")?;
    }
    writeln!(w)?;
    for (i, e) in endpoints.iter().enumerate() {
        match e {
            Ok(u) => {
                write!(w, "{i},ok")?;
                for c in u.coeffs() {
                    write!(w, ",{c:?}")?;
                }
            }
            Err(err) => {
                write!(w, "{i},{}", err.kind())?;
                for _ in 0..=m {
                    write!(w, ",")?;
                }
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn full_csv_round_trips() {
        let mut traj = Trajectory::default();
        let u = SpectralField::from_coeffs(vec![0.1, 1.0 / 3.0, -2e-17]).unwrap();
        traj.push(0.0, &u);
        traj.push(1e-4, &u);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, TrajectoryFormat::Full).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,mode_0,mode_1,mode_2");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(row, vec![1e-4, 0.1, 1.0 / 3.0, -2e-17]);
    }

    #[test]
    fn reduced_and_endpoints() {
        let mut traj = Trajectory::default();
        traj.push(0.5, &SpectralField::single_mode(0.2, 1, 1.0, 3));
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, TrajectoryFormat::Reduced).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,seminorm_m1,mass\n0.5,"));
        assert!(text.trim_end().ends_with(",0.2"));

        let eps = vec![
            Ok(SpectralField::zeros(1)),
            Err(Error::Divergence {
                step: 3,
                reason: "x".into(),
            }),
        ];
        let mut buf = Vec::new();
        write_endpoints_csv(&mut buf, &eps, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "path,status,mode_0,mode_1\n0,ok,0.0,0.0\n1,DivergenceError,,\n"
        );
    }
}
