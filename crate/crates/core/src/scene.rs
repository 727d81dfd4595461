//! Street-canyon geometry and image-source ray synthesis.
//!
//! The street occupies `x ∈ [0, street_length_m]`, `y ∈ [0, street_width_m]`
//! at ground level `z = ground_z`. Two infinite building walls sit at
//! `y = wall_y.0` and `y = wall_y.1`. Basestations carry a ULA oriented along
//! the y axis; the angle of arrival is measured from broadside, positive
//! towards increasing y.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("street dimensions must be positive, got {length} x {width}")]
    NonPositiveDimensions { length: f64, width: f64 },
    #[error("wall_y must be strictly ordered, got ({0}, {1})")]
    WallsNotOrdered(f64, f64),
    #[error("walls must enclose the street footprint")]
    WallsInsideStreet,
    #[error("basestation {index} at ({x}, {y}) lies outside the street footprint")]
    BsOutsideStreet { index: usize, x: f64, y: f64 },
    #[error("basestation {index} must be above the ground plane")]
    BsBelowGround { index: usize },
    #[error("user height must be above ground and differ from the basestation heights")]
    BadUserHeight,
    #[error("scene needs at least one basestation")]
    NoBasestations,
    #[error("max_paths must be at least 1")]
    NoPaths,
    #[error("carrier frequency must be positive")]
    BadCarrier,
    #[error("reflection_coeff must lie in (0, 1], got {0}")]
    BadReflection(f64),
    #[error("user position ({x}, {y}) lies outside the street footprint")]
    UserOutsideStreet { x: f64, y: f64 },
    #[error("basestation index {index} out of range for {count} basestations")]
    BadBsIndex { index: usize, count: usize },
    #[error("path length must be positive, got {0}")]
    NonPositiveLength(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub street_length_m: f64,
    pub street_width_m: f64,
    pub wall_y: (f64, f64),
    pub ground_z: f64,
    /// Antenna phase centres, meters.
    pub bs_positions: Vec<[f64; 3]>,
    /// Mounting height used when a position is given without z.
    pub bs_height_m: f64,
    pub user_height_m: f64,
    pub carrier_hz: f64,
    pub reflection_coeff: f64,
    pub max_bounces: u32,
    pub max_paths: usize,
}

impl Default for SceneConfig {
    /// Four lamp-post basestations on the corners of a 30 m x 20 m street
    /// section at 6 m, user antenna at 1 m, 60 GHz. The facades stand 1 m
    /// behind the corners, close enough that the far-wall echo at a corner
    /// still fits the default 64-tap delay window.
    fn default() -> Self {
        let h = 6.0;
        Self {
            street_length_m: 30.0,
            street_width_m: 20.0,
            wall_y: (-1.0, 21.0),
            ground_z: 0.0,
            bs_positions: vec![[0.0, 0.0, h], [30.0, 0.0, h], [0.0, 20.0, h], [30.0, 20.0, h]],
            bs_height_m: h,
            user_height_m: 1.0,
            carrier_hz: 60e9,
            reflection_coeff: 0.6,
            max_bounces: 1,
            max_paths: 5,
        }
    }
}

impl SceneConfig {
    pub fn n_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (0.0..=self.street_length_m).contains(&x) && (0.0..=self.street_width_m).contains(&y)
    }
}

/// One propagation ray seen at a basestation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropPath {
    pub aoa_rad: f64,
    pub delay_s: f64,
    pub gain: Complex64,
    pub bounces: u32,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub bs_index: usize,
    pub user_xy: [f64; 2],
    /// Sorted by descending `|gain|`.
    pub paths: Vec<PropPath>,
}

impl PathSet {
    pub fn min_delay(&self) -> Option<f64> {
        self.paths.iter().map(|p| p.delay_s).reduce(f64::min)
    }
}

/// A validated, immutable scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    config: SceneConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Wall(f64),
    Ground(f64),
}

impl Surface {
    fn mirror(self, p: [f64; 3]) -> [f64; 3] {
        match self {
            Surface::Wall(y) => [p[0], 2.0 * y - p[1], p[2]],
            Surface::Ground(z) => [p[0], p[1], 2.0 * z - p[2]],
        }
    }
}

pub fn build_scene(config: SceneConfig) -> Result<Scene, SceneError> {
    let c = &config;
    if !(c.street_length_m > 0.0 && c.street_width_m > 0.0) {
        return Err(SceneError::NonPositiveDimensions {
            length: c.street_length_m,
            width: c.street_width_m,
        });
    }
    if !(c.wall_y.0 < c.wall_y.1) {
        return Err(SceneError::WallsNotOrdered(c.wall_y.0, c.wall_y.1));
    }
    if c.wall_y.0 > 0.0 || c.wall_y.1 < c.street_width_m {
        return Err(SceneError::WallsInsideStreet);
    }
    if c.bs_positions.is_empty() {
        return Err(SceneError::NoBasestations);
    }
    for (index, p) in c.bs_positions.iter().enumerate() {
        if !c.contains_xy(p[0], p[1]) {
            return Err(SceneError::BsOutsideStreet { index, x: p[0], y: p[1] });
        }
        if !(p[2] > c.ground_z) {
            return Err(SceneError::BsBelowGround { index });
        }
        if p[2] == c.ground_z + c.user_height_m {
            return Err(SceneError::BadUserHeight);
        }
    }
    if !(c.user_height_m > 0.0) {
        return Err(SceneError::BadUserHeight);
    }
    if c.max_paths < 1 {
        return Err(SceneError::NoPaths);
    }
    if !(c.carrier_hz > 0.0) {
        return Err(SceneError::BadCarrier);
    }
    if !(c.reflection_coeff > 0.0 && c.reflection_coeff <= 1.0) {
        return Err(SceneError::BadReflection(c.reflection_coeff));
    }
    Ok(Scene { config })
}

impl Scene {
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn n_bs(&self) -> usize {
        self.config.n_bs()
    }

    /// All image-source paths before strongest-path selection, in generation
    /// order (LOS first).
    pub fn candidate_paths(&self, user_xy: [f64; 2], bs_index: usize) -> Result<Vec<PropPath>, SceneError> {
        let c = &self.config;
        if !c.contains_xy(user_xy[0], user_xy[1]) {
            return Err(SceneError::UserOutsideStreet { x: user_xy[0], y: user_xy[1] });
        }
        let bs = *c.bs_positions.get(bs_index).ok_or(SceneError::BadBsIndex {
            index: bs_index,
            count: c.n_bs(),
        })?;
        let user = [user_xy[0], user_xy[1], c.ground_z + c.user_height_m];
        let surfaces = [
            Surface::Wall(c.wall_y.0),
            Surface::Wall(c.wall_y.1),
            Surface::Ground(c.ground_z),
        ];

        // Depth-first over reflection sequences with no surface repeated
        // back to back. Reflections off perpendicular planes commute, so
        // sequences that land on an already-seen image are the same ray.
        let mut images: Vec<([f64; 3], u32)> = vec![(user, 0)];
        let mut frontier: Vec<([f64; 3], u32, Option<usize>)> = vec![(user, 0, None)];
        while let Some((point, depth, last)) = frontier.pop() {
            if depth >= c.max_bounces {
                continue;
            }
            for (si, s) in surfaces.iter().enumerate() {
                if Some(si) == last {
                    continue;
                }
                let img = s.mirror(point);
                let seen = images
                    .iter()
                    .any(|(q, _)| q.iter().zip(&img).all(|(a, b)| (a - b).abs() < 1e-9));
                if !seen {
                    images.push((img, depth + 1));
                    frontier.push((img, depth + 1, Some(si)));
                }
            }
        }
        images.sort_by_key(|&(_, b)| b);

        let lambda = c.wavelength_m();
        let mut out = Vec::with_capacity(images.len());
        for (img, bounces) in images {
            let d = [img[0] - bs[0], img[1] - bs[1], img[2] - bs[2]];
            let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let delay = length / SPEED_OF_LIGHT;
            let amp = friis_from_wavelength(length, lambda)? * c.reflection_coeff.powi(bounces as i32);
            let phase = -2.0 * PI * c.carrier_hz * delay;
            out.push(PropPath {
                aoa_rad: aoa_from_direction(d[1] / length),
                delay_s: delay,
                gain: Complex64::from_polar(amp, phase),
                bounces,
                length_m: length,
            });
        }
        Ok(out)
    }

    /// LOS plus image-source reflections, reduced to the strongest
    /// `max_paths` rays.
    pub fn trace_paths(&self, user_xy: [f64; 2], bs_index: usize) -> Result<PathSet, SceneError> {
        let candidates = self.candidate_paths(user_xy, bs_index)?;
        Ok(PathSet {
            bs_index,
            user_xy,
            paths: select_strongest(&candidates, self.config.max_paths),
        })
    }
}

/// Direction cosine along the array axis to an angle in (−π/2, π/2].
fn aoa_from_direction(cos_to_axis: f64) -> f64 {
    let a = cos_to_axis.clamp(-1.0, 1.0).asin();
    if a <= -FRAC_PI_2 {
        FRAC_PI_2
    } else {
        a
    }
}

fn friis_from_wavelength(length_m: f64, lambda: f64) -> Result<f64, SceneError> {
    if !(length_m > 0.0) {
        return Err(SceneError::NonPositiveLength(length_m));
    }
    Ok(lambda / (4.0 * PI * length_m))
}

/// Free-space amplitude gain `λ / (4π·length)`.
pub fn friis_gain(length_m: f64, carrier_hz: f64) -> Result<f64, SceneError> {
    if !(carrier_hz > 0.0) {
        return Err(SceneError::BadCarrier);
    }
    friis_from_wavelength(length_m, SPEED_OF_LIGHT / carrier_hz)
}

/// Up to `max_paths` paths by descending `|gain|`; ties go to the smaller
/// delay, then the smaller AoA.
pub fn select_strongest(paths: &[PropPath], max_paths: usize) -> Vec<PropPath> {
    let mut sorted = paths.to_vec();
    sorted.sort_by(|a, b| {
        b.gain
            .norm()
            .partial_cmp(&a.gain.norm())
            .unwrap_or(Ordering::Equal)
            .then(a.delay_s.total_cmp(&b.delay_s))
            .then(a.aoa_rad.total_cmp(&b.aoa_rad))
    });
    sorted.truncate(max_paths);
    sorted
}
