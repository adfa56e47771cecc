//! Two-dimensional, time-varying velocity fields in degrees per hour.

use std::f64::consts::TAU;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `u = u0 + amp_u sin(2 pi lat / wavelength + omega t)`,
/// `v = v0 + amp_v cos(2 pi lon / wavelength + omega t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticField {
    pub u0: f64,
    pub v0: f64,
    pub amp_u: f64,
    pub amp_v: f64,
    /// Spatial wavelength, degrees.
    pub wavelength: f64,
    /// Temporal frequency, rad/hour.
    pub omega: f64,
}

impl Default for AnalyticField {
    fn default() -> Self {
        Self {
            u0: 0.3,
            v0: 0.15,
            amp_u: 0.1,
            amp_v: 0.05,
            wavelength: 10.0,
            omega: 0.5,
        }
    }
}

impl AnalyticField {
    pub fn constant(u0: f64, v0: f64) -> Self {
        Self {
            u0,
            v0,
            amp_u: 0.0,
            amp_v: 0.0,
            ..Default::default()
        }
    }

    pub fn eval(&self, lon: f64, lat: f64, t: f64) -> (f64, f64) {
        let k = TAU / self.wavelength;
        (
            self.u0 + self.amp_u * (k * lat + self.omega * t).sin(),
            self.v0 + self.amp_v * (k * lon + self.omega * t).cos(),
        )
    }
}

/// Regular lon x lat x time grid, bilinear in space and linear in time.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    lon: Vec<f64>,
    lat: Vec<f64>,
    t: Vec<f64>,
    /// Indexed `[it][ilat][ilon]`, flattened.
    u: Vec<f64>,
    v: Vec<f64>,
}

fn strictly_increasing(axis: &[f64]) -> bool {
    axis.windows(2).all(|w| w[0] < w[1])
}

/// Cell index and fractional position of `x` on `axis`.
fn locate(axis: &[f64], x: f64, name: &str) -> Result<(usize, f64)> {
    if axis.len() == 1 {
        return Ok((0, 0.0));
    }
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    if !(x >= lo && x <= hi) {
        return Err(Error::FieldDomain(format!("{name} = {x} outside [{lo}, {hi}]")));
    }
    let i = axis.partition_point(|a| *a <= x).clamp(1, axis.len() - 1) - 1;
    Ok((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
}

impl GriddedField {
    /// `u` and `v` are indexed `[it][ilat][ilon]`. A single time slice gives
    /// a stationary field.
    pub fn new(lon: Vec<f64>, lat: Vec<f64>, t: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if lon.len() < 2 || lat.len() < 2 || t.is_empty() {
            return Err(Error::Malformed("grid needs at least 2 lon, 2 lat and 1 time value".into()));
        }
        for (name, axis) in [("lon", &lon), ("lat", &lat), ("t", &t)] {
            if !strictly_increasing(axis) {
                return Err(Error::Malformed(format!("{name} axis not strictly increasing")));
            }
        }
        let n = lon.len() * lat.len() * t.len();
        if u.len() != n || v.len() != n {
            return Err(Error::Malformed(format!(
                "grid expects {n} nodes, got {} u and {} v values",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Malformed("non-finite velocity in grid".into()));
        }
        Ok(Self { lon, lat, t, u, v })
    }

    fn node(&self, it: usize, ilat: usize, ilon: usize) -> (f64, f64) {
        let i = (it * self.lat.len() + ilat) * self.lon.len() + ilon;
        (self.u[i], self.v[i])
    }

    fn slice(&self, it: usize, ilat: usize, flat: f64, ilon: usize, flon: f64) -> (f64, f64) {
        let lerp = |a: (f64, f64), b: (f64, f64), f: f64| (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        let south = lerp(self.node(it, ilat, ilon), self.node(it, ilat, ilon + 1), flon);
        let north = lerp(self.node(it, ilat + 1, ilon), self.node(it, ilat + 1, ilon + 1), flon);
        lerp(south, north, flat)
    }

    pub fn eval(&self, lon: f64, lat: f64, t: f64) -> Result<(f64, f64)> {
        let (ilon, flon) = locate(&self.lon, lon, "lon")?;
        let (ilat, flat) = locate(&self.lat, lat, "lat")?;
        let (it, ft) = locate(&self.t, t, "t")?;
        let a = self.slice(it, ilat, flat, ilon, flon);
        if self.t.len() == 1 || ft == 0.0 {
            return Ok(a);
        }
        let b = self.slice(it + 1, ilat, flat, ilon, flon);
        Ok((a.0 + ft * (b.0 - a.0), a.1 + ft * (b.1 - a.1)))
    }

    /// Reads `lon,lat,t,u,v` rows covering a full grid, in any order.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["lon", "lat", "t", "u", "v"] {
            return Err(Error::Malformed(format!("field columns {header:?}, expected lon,lat,t,u,v")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Malformed(format!("bad number {f:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push([vals[0], vals[1], vals[2], vals[3], vals[4]]);
        }
        let axis = |j: usize| {
            let mut a: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        };
        let (lon, lat, t) = (axis(0), axis(1), axis(2));
        let n = lon.len() * lat.len() * t.len();
        if rows.len() != n {
            return Err(Error::Malformed(format!("{} rows do not form a full {n}-node grid", rows.len())));
        }
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; n];
        for r in &rows {
            let find = |axis: &[f64], x: f64| axis.binary_search_by(|a| a.total_cmp(&x)).unwrap_or(0);
            let i = (find(&t, r[2]) * lat.len() + find(&lat, r[1])) * lon.len() + find(&lon, r[0]);
            if !u[i].is_nan() {
                return Err(Error::Malformed(format!("duplicate grid node {:?}", &r[..3])));
            }
            u[i] = r[3];
            v[i] = r[4];
        }
        Self::new(lon, lat, t, u, v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityField {
    Analytic(AnalyticField),
    Gridded(GriddedField),
}

impl VelocityField {
    /// `(u, v)` at longitude/latitude (degrees) and time (hours).
    pub fn eval(&self, lon: f64, lat: f64, t: f64) -> Result<(f64, f64)> {
        match self {
            VelocityField::Analytic(a) => Ok(a.eval(lon, lat, t)),
            VelocityField::Gridded(g) => g.eval(lon, lat, t),
        }
    }
}

/// Field selection as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldConfig {
    Analytic(AnalyticField),
    Gridded(GriddedSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GriddedSource {
    pub path: PathBuf,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Analytic(AnalyticField::default())
    }
}

impl FieldConfig {
    /// Resolves relative grid paths against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<VelocityField> {
        match self {
            FieldConfig::Analytic(a) => Ok(VelocityField::Analytic(*a)),
            FieldConfig::Gridded(src) => {
                let path = match base {
                    Some(b) if src.path.is_relative() => b.join(&src.path),
                    _ => src.path.clone(),
                };
                Ok(VelocityField::Gridded(GriddedField::load(&path)?))
            }
        }
    }
}
