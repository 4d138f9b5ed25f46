//! Time-varying 2D current fields.
//!
//! Analytic fields are evaluated in closed form. Gridded fields hold samples
//! on a regular `nx x ny x nt` lattice and are interpolated trilinearly;
//! queries outside the lattice clamp to the boundary samples.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfSpinningParams {
    /// Current magnitude.
    pub magnitude: f64,
    /// Angular frequency in radians per unit time.
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexParams {
    /// Radius of the circle travelled by the vortex centre.
    pub radius: f64,
    pub omega: f64,
    pub center_x: f64,
    pub center_y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DisturbanceField {
    /// Same vector everywhere at all times.
    Uniform {
        vx: f64,
        vy: f64,
    },
    SelfSpinning(SelfSpinningParams),
    Vortex(VortexParams),
    Gridded(GriddedField),
}

impl DisturbanceField {
    pub fn zero() -> Self {
        DisturbanceField::Uniform { vx: 0.0, vy: 0.0 }
    }

    pub fn self_spinning(magnitude: f64, omega: f64) -> Result<Self> {
        if !(magnitude >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spin magnitude must be non-negative, got {magnitude}"
            )));
        }
        Ok(DisturbanceField::SelfSpinning(SelfSpinningParams {
            magnitude,
            omega,
        }))
    }

    pub fn vortex(radius: f64, omega: f64, center_x: f64, center_y: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "vortex radius must be non-negative, got {radius}"
            )));
        }
        Ok(DisturbanceField::Vortex(VortexParams {
            radius,
            omega,
            center_x,
            center_y,
        }))
    }

    /// Current velocity `(v_x, v_y)` at position `(x, y)` and time `t`.
    pub fn velocity_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        match self {
            DisturbanceField::Uniform { vx, vy } => (*vx, *vy),
            DisturbanceField::SelfSpinning(p) => {
                let phase = p.omega * t;
                (p.magnitude * phase.cos(), p.magnitude * phase.sin())
            }
            DisturbanceField::Vortex(p) => {
                let (xc, yc) = p.center_at(t);
                (xc - x + y - yc, xc - x - y + yc)
            }
            DisturbanceField::Gridded(g) => g.velocity_at(x, y, t),
        }
    }

    /// Whether the field can change over time.
    pub fn is_time_invariant(&self) -> bool {
        match self {
            DisturbanceField::Uniform { .. } => true,
            DisturbanceField::SelfSpinning(p) => p.magnitude == 0.0 || p.omega == 0.0,
            DisturbanceField::Vortex(p) => p.radius == 0.0 || p.omega == 0.0,
            DisturbanceField::Gridded(g) => g.nt == 1,
        }
    }
}

impl VortexParams {
    pub fn center_at(&self, t: f64) -> (f64, f64) {
        let phase = self.omega * t;
        (
            self.radius * phase.cos() + self.center_x,
            self.radius * phase.sin() + self.center_y,
        )
    }
}

/// Lattice geometry of a gridded field; also the sidecar descriptor format.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDescriptor {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub t0: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl GridDescriptor {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.nx == 0 || self.ny == 0 || self.nt == 0 {
            return Err("nx, ny and nt must be positive".into());
        }
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }
}

/// Velocity samples on a regular space-time lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedField {
    desc: GridDescriptor,
    nt: usize,
    /// `[(it * ny + iy) * nx + ix]`
    samples: Vec<(f64, f64)>,
}

impl GriddedField {
    pub fn new(desc: GridDescriptor, samples: Vec<(f64, f64)>) -> Result<Self> {
        desc.validate().map_err(Error::InvalidArgument)?;
        if samples.len() != desc.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {}",
                desc.len(),
                samples.len()
            )));
        }
        Ok(Self {
            desc,
            nt: desc.nt,
            samples,
        })
    }

    /// Samples any field on the lattice described by `desc`.
    pub fn sample(field: &DisturbanceField, desc: GridDescriptor) -> Result<Self> {
        desc.validate().map_err(Error::InvalidArgument)?;
        let mut samples = Vec::with_capacity(desc.len());
        for it in 0..desc.nt {
            for iy in 0..desc.ny {
                for ix in 0..desc.nx {
                    let (x, y, t) = desc.point(ix, iy, it);
                    samples.push(field.velocity_at(x, y, t));
                }
            }
        }
        Self::new(desc, samples)
    }

    pub fn descriptor(&self) -> &GridDescriptor {
        &self.desc
    }

    fn at(&self, ix: usize, iy: usize, it: usize) -> (f64, f64) {
        self.samples[(it * self.desc.ny + iy) * self.desc.nx + ix]
    }

    pub fn velocity_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let d = &self.desc;
        let (ix, fx) = locate(x, d.x0, d.dx, d.nx);
        let (iy, fy) = locate(y, d.y0, d.dy, d.ny);
        let (it, ft) = locate(t, d.t0, d.dt, d.nt);
        let ix1 = (ix + 1).min(d.nx - 1);
        let iy1 = (iy + 1).min(d.ny - 1);
        let it1 = (it + 1).min(d.nt - 1);
        let mut acc = (0.0, 0.0);
        for (kt, wt) in [(it, 1.0 - ft), (it1, ft)] {
            for (ky, wy) in [(iy, 1.0 - fy), (iy1, fy)] {
                for (kx, wx) in [(ix, 1.0 - fx), (ix1, fx)] {
                    let w = wt * wy * wx;
                    if w != 0.0 {
                        let v = self.at(kx, ky, kt);
                        acc.0 += w * v.0;
                        acc.1 += w * v.1;
                    }
                }
            }
        }
        acc
    }

    /// Reads the `x,y,t,vx,vy` CSV together with its TOML descriptor.
    pub fn load(csv_path: &Path, descriptor_path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(descriptor_path).map_err(|e| Error::io(descriptor_path, e))?;
        let desc: GridDescriptor = toml::from_str(&text).map_err(|e| Error::Config {
            path: descriptor_path.to_path_buf(),
            message: e.to_string(),
        })?;
        desc.validate().map_err(|m| Error::Config {
            path: descriptor_path.to_path_buf(),
            message: m,
        })?;

        let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(file);
        let parse_err = |line: u64, message: String| Error::Parse {
            path: csv_path.to_path_buf(),
            line,
            message,
        };
        let headers = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let expected = ["x", "y", "t", "vx", "vy"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(parse_err(
                1,
                format!("header must be {}", expected.join(",")),
            ));
        }
        let mut samples: Vec<Option<(f64, f64)>> = vec![None; desc.len()];
        for record in reader.records() {
            let record = record
                .map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let mut vals = [0.0; 5];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = record
                    .get(k)
                    .ok_or_else(|| parse_err(line, "expected 5 columns".into()))?
                    .parse()
                    .map_err(|e| parse_err(line, format!("column {}: {e}", expected[k])))?;
            }
            let ix = lattice_index(vals[0], desc.x0, desc.dx, desc.nx)
                .ok_or_else(|| parse_err(line, format!("x = {} is off the lattice", vals[0])))?;
            let iy = lattice_index(vals[1], desc.y0, desc.dy, desc.ny)
                .ok_or_else(|| parse_err(line, format!("y = {} is off the lattice", vals[1])))?;
            let it = lattice_index(vals[2], desc.t0, desc.dt, desc.nt)
                .ok_or_else(|| parse_err(line, format!("t = {} is off the lattice", vals[2])))?;
            samples[(it * desc.ny + iy) * desc.nx + ix] = Some((vals[3], vals[4]));
        }
        let missing = samples.iter().filter(|s| s.is_none()).count();
        if missing > 0 {
            return Err(Error::Config {
                path: csv_path.to_path_buf(),
                message: format!("{missing} lattice points have no sample"),
            });
        }
        Self::new(desc, samples.into_iter().map(|s| s.unwrap()).collect())
    }

    /// Writes the CSV and its descriptor. `header_comment` becomes a leading
    /// `#` line in the CSV.
    pub fn save(
        &self,
        csv_path: &Path,
        descriptor_path: &Path,
        header_comment: &str,
    ) -> Result<()> {
        let desc =
            toml::to_string(&self.desc).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(descriptor_path, desc).map_err(|e| Error::io(descriptor_path, e))?;

        let mut file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let io = |e| Error::io(PathBuf::from(csv_path), e);
        writeln!(file, "# {header_comment}").map_err(io)?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(["x", "y", "t", "vx", "vy"])
            .map_err(csv_err)?;
        let d = &self.desc;
        for it in 0..d.nt {
            for iy in 0..d.ny {
                for ix in 0..d.nx {
                    let (x, y, t) = d.point(ix, iy, it);
                    let (vx, vy) = self.at(ix, iy, it);
                    w.write_record([x, y, t, vx, vy].map(|v| v.to_string()))
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

impl GridDescriptor {
    pub fn point(&self, ix: usize, iy: usize, it: usize) -> (f64, f64, f64) {
        (
            self.x0 + ix as f64 * self.dx,
            self.y0 + iy as f64 * self.dy,
            self.t0 + it as f64 * self.dt,
        )
    }
}

/// Lower lattice index and fractional offset, clamped to the lattice.
fn locate(v: f64, origin: f64, step: f64, n: usize) -> (usize, f64) {
    let u = (v - origin) / step;
    if !(u > 0.0) || n == 1 {
        return (0, 0.0);
    }
    let max = (n - 1) as f64;
    if u >= max {
        return (n - 1, 0.0);
    }
    let i = u.floor();
    (i as usize, u - i)
}

fn lattice_index(v: f64, origin: f64, step: f64, n: usize) -> Option<usize> {
    let u = (v - origin) / step;
    let i = u.round();
    ((u - i).abs() < 1e-6 && i >= 0.0 && i < n as f64).then_some(i as usize)
}
