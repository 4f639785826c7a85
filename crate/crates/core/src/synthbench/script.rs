use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    /// Constant-curvature bend of the half-space `s > start` towards
    /// `direction`; `amplitude` is the displacement (m) of the axis point at
    /// `reach`.
    Bend,
    /// Rotation about the axis growing linearly from 0 at `start` to
    /// `amplitude` (rad) at `reach`.
    Twist,
    /// Uniform stretch of `s > start` moving the `reach` point by
    /// `amplitude` (m).
    Stretch,
    /// Gaussian push along `direction`, centered at `reach` on the axis,
    /// standard deviation `width`, peak `amplitude` (m).
    Bump,
}

/// Per-frame interpolation factor in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full amplitude on every frame.
    Constant,
    /// Linear from 0 at the first frame to 1 at the last.
    Ramp,
    /// `sin²(π·k/(n-1))`: rest, peak at mid sequence, rest.
    Swing,
    Custom(Vec<f64>),
}

impl Profile {
    pub fn factor(&self, frame: usize, frames: usize) -> f64 {
        let x = if frames > 1 { frame.min(frames - 1) as f64 / (frames - 1) as f64 } else { 1.0 };
        match self {
            Profile::Constant => 1.0,
            Profile::Ramp => x,
            Profile::Swing => (std::f64::consts::PI * x).sin().powi(2),
            Profile::Custom(v) => v.get(frame).or(v.last()).copied().unwrap_or(0.0).clamp(0.0, 1.0),
        }
    }
}

/// Parametric deformation in a local frame: `axis` through `origin`,
/// `direction` orthogonalized against it. Axial coordinates `s` are
/// measured from `origin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationScript {
    pub kind: ScriptKind,
    pub amplitude: f64,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default)]
    pub start: f64,
    pub reach: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    pub profile: Profile,
}

fn default_direction() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_width() -> f64 {
    0.02
}

impl DeformationScript {
    pub fn validate(&self) -> Result<(), SynthError> {
        let frame = self.frame();
        if frame.is_none() {
            return Err(SynthError::InvalidScript("axis and direction must be non-zero and not parallel"));
        }
        let scalars = [self.amplitude, self.start, self.reach, self.width];
        if !scalars.iter().chain(&self.origin).all(|v| v.is_finite()) {
            return Err(SynthError::InvalidScript("non-finite parameter"));
        }
        if self.kind != ScriptKind::Bump && self.reach <= self.start {
            return Err(SynthError::InvalidScript("reach must exceed start"));
        }
        if self.kind == ScriptKind::Bump && self.width <= 0.0 {
            return Err(SynthError::InvalidScript("bump width must be positive"));
        }
        if let Profile::Custom(v) = &self.profile {
            if v.is_empty() || v.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(SynthError::InvalidScript("custom profile factors must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn frame(&self) -> Option<[Vector3<f64>; 3]> {
        let e1 = Vector3::from(self.axis).try_normalize(1e-12)?;
        let d = Vector3::from(self.direction);
        let e2 = (d - e1 * e1.dot(&d)).try_normalize(1e-9)?;
        Some([e1, e2, e1.cross(&e2)])
    }

    /// Frozen deformation at interpolation factor `factor`.
    pub fn at_factor(&self, factor: f64) -> ScriptMap {
        let [e1, e2, e3] = self.frame().expect("validated script");
        let amplitude = self.amplitude * factor;
        let curvature = match self.kind {
            ScriptKind::Bend => bend_curvature(amplitude.abs(), self.reach - self.start) * amplitude.signum(),
            _ => 0.0,
        };
        ScriptMap {
            kind: self.kind,
            amplitude,
            curvature,
            origin: Vector3::from(self.origin),
            frame: [e1, e2, e3],
            start: self.start,
            reach: self.reach,
            width: self.width,
        }
    }

    pub fn at_frame(&self, frame: usize, frames: usize) -> ScriptMap {
        self.at_factor(self.profile.factor(frame, frames))
    }
}

/// Axis displacement at arc length `len` under curvature `k`.
fn bend_displacement(k: f64, len: f64) -> f64 {
    if k == 0.0 {
        return 0.0;
    }
    let r = 1.0 / k;
    let (s, c) = (k * len).sin_cos();
    ((len - r * s).powi(2) + (r * (1.0 - c)).powi(2)).sqrt()
}

/// Curvature whose bend moves the axis point at arc length `len` by `disp`
/// (bisection; the displacement grows monotonically up to a half turn).
fn bend_curvature(disp: f64, len: f64) -> f64 {
    if disp <= 0.0 || len <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI / len);
    if bend_displacement(hi, len) <= disp {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bend_displacement(mid, len) < disp {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A deformation frozen at one frame: a bijection of space with an explicit
/// inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptMap {
    kind: ScriptKind,
    amplitude: f64,
    curvature: f64,
    origin: Vector3<f64>,
    frame: [Vector3<f64>; 3],
    start: f64,
    reach: f64,
    width: f64,
}

impl ScriptMap {
    fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let q = p - self.origin;
        Vector3::new(q.dot(&self.frame[0]), q.dot(&self.frame[1]), q.dot(&self.frame[2]))
    }

    fn global(&self, l: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.frame[0] * l.x + self.frame[1] * l.y + self.frame[2] * l.z
    }

    fn twist_angle(&self, s: f64) -> f64 {
        let t = ((s - self.start) / (self.reach - self.start)).max(0.0);
        self.amplitude * t
    }

    fn bump(&self, l: &Vector3<f64>) -> f64 {
        let d2 = (l.x - self.reach).powi(2) + l.y.powi(2) + l.z.powi(2);
        self.amplitude * (-d2 / (2.0 * self.width * self.width)).exp()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let l = self.local(p);
        let out = match self.kind {
            ScriptKind::Bend => {
                let k = self.curvature;
                let sp = l.x - self.start;
                if k == 0.0 || sp <= 0.0 {
                    l
                } else {
                    // bend towards sign(k)·e2 about a center at distance 1/|k|
                    let sg = k.signum();
                    let r = 1.0 / k.abs();
                    let w = sg * l.y;
                    let (sn, cs) = (k.abs() * sp).sin_cos();
                    Vector3::new(self.start + (r - w) * sn, sg * (r - (r - w) * cs), l.z)
                }
            }
            ScriptKind::Twist => {
                let (sn, cs) = self.twist_angle(l.x).sin_cos();
                Vector3::new(l.x, cs * l.y - sn * l.z, sn * l.y + cs * l.z)
            }
            ScriptKind::Stretch => {
                let sp = l.x - self.start;
                if sp <= 0.0 {
                    l
                } else {
                    let f = 1.0 + self.amplitude / (self.reach - self.start);
                    Vector3::new(self.start + sp * f, l.y, l.z)
                }
            }
            ScriptKind::Bump => Vector3::new(l.x, l.y + self.bump(&l), l.z),
        };
        self.global(&out)
    }

    pub fn inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let l = self.local(p);
        let out = match self.kind {
            ScriptKind::Bend => {
                let k = self.curvature;
                if k == 0.0 || l.x <= self.start {
                    l
                } else {
                    let sg = k.signum();
                    let r = 1.0 / k.abs();
                    let dx = l.x - self.start;
                    let dw = r - sg * l.y;
                    let phi = dx.atan2(dw);
                    let rad = dx.hypot(dw);
                    Vector3::new(self.start + phi / k.abs(), sg * (r - rad), l.z)
                }
            }
            ScriptKind::Twist => {
                let (sn, cs) = self.twist_angle(l.x).sin_cos();
                Vector3::new(l.x, cs * l.y + sn * l.z, -sn * l.y + cs * l.z)
            }
            ScriptKind::Stretch => {
                let sp = l.x - self.start;
                if sp <= 0.0 {
                    l
                } else {
                    let f = 1.0 + self.amplitude / (self.reach - self.start);
                    Vector3::new(self.start + sp / f, l.y, l.z)
                }
            }
            ScriptKind::Bump => {
                // fixed point of x = y - bump(x); contractive while the
                // bump slope stays below one
                let mut x = l;
                for _ in 0..200 {
                    let next = Vector3::new(l.x, l.y - self.bump(&x), l.z);
                    let done = (next - x).norm() < 1e-16;
                    x = next;
                    if done {
                        break;
                    }
                }
                x
            }
        };
        self.global(&out)
    }
}

/// Composition of frozen scripts, applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointMap {
    pub maps: Vec<ScriptMap>,
}

impl PointMap {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.maps.iter().fold(*p, |q, m| m.apply(&q))
    }

    pub fn inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.maps.iter().rev().fold(*p, |q, m| m.inverse(&q))
    }
}

/// Deforms `mesh` with every script evaluated at `frame` of `frames`.
/// Normals are recomputed from the deformed triangles.
pub fn apply_script(
    mesh: &TriangleMesh<f64>,
    scripts: &[DeformationScript],
    frame: usize,
    frames: usize,
) -> Result<(TriangleMesh<f64>, PointMap), SynthError> {
    for s in scripts {
        s.validate()?;
    }
    let map = PointMap {
        maps: scripts.iter().map(|s| s.at_frame(frame, frames)).collect(),
    };
    let vertices = mesh.vertices().iter().map(|v| map.apply(v)).collect();
    let deformed = TriangleMesh::new(vertices, None, mesh.triangles().to_vec())?;
    Ok((deformed, map))
}
