use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Background, CanvasConfig, StimulusSpec};
use crate::error::Result;

/// Grayscale image, values in `[0, 1]`.
pub type Image = Array2<f32>;

pub(crate) const N_FAMILIES: usize = 8;
pub(crate) const N_VARIANTS: usize = 5;

/// Object radius as a fraction of the quadrant side.
const RADIUS_FRAC: f64 = 0.40;
const OBJECT_INTENSITY: f32 = 1.0;
const HOLE_SCALE: f64 = 0.55;

/// (aspect, hollow) per identity variant. The last entries serve as
/// held-out variants for the novel-identity split.
const VARIANTS: [(f64, bool); N_VARIANTS] = [
    (1.0, false),
    (0.6, true),
    (1.0, true),
    (0.6, false),
    (0.8, true),
];

fn in_polygon(u: f64, v: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn regular(n: usize, r: f64, phase_deg: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let a = (phase_deg + 360.0 * k as f64 / n as f64).to_radians();
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

fn star() -> Vec<(f64, f64)> {
    (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { 1.0 } else { 0.45 };
            let a = (90.0 + 36.0 * k as f64).to_radians();
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Membership of local point `(u, v)` (object radius 1) in shape family `cat`.
fn family_contains(cat: usize, u: f64, v: f64) -> bool {
    match cat {
        // triangle
        0 => in_polygon(u, v, &regular(3, 1.0, 90.0)),
        // square
        1 => u.abs() <= 0.75 && v.abs() <= 0.75,
        // ellipse
        2 => u * u + (v / 0.85) * (v / 0.85) <= 1.0,
        // cross
        3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (u.abs() <= 1.0 && v.abs() <= 0.3),
        // star
        4 => in_polygon(u, v, &star()),
        // hexagon
        5 => in_polygon(u, v, &regular(6, 0.95, 0.0)),
        // T
        6 => (u.abs() <= 1.0 && (0.45..=1.0).contains(&v)) || (u.abs() <= 0.3 && (-1.0..=0.45).contains(&v)),
        // L
        7 => ((-0.8..=-0.3).contains(&u) && v.abs() <= 1.0) || (u.abs() <= 0.8 && (-1.0..=-0.5).contains(&v)),
        _ => false,
    }
}

fn object_contains(cat: usize, variant: usize, u: f64, v: f64) -> bool {
    let (aspect, hollow) = VARIANTS[variant];
    let v = v / aspect;
    let outer = family_contains(cat, u, v);
    if !hollow || !outer {
        return outer;
    }
    !family_contains(cat, u / HOLE_SCALE, v / HOLE_SCALE)
}

/// Smoothed random field in `[0.05, 0.55]`, a deterministic function of `seed`.
pub fn texture_field(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Array2::from_shape_fn((height, width), |_| rng.random::<f32>());
    for _ in 0..3 {
        let prev = f.clone();
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                for dy in [height - 1, 0, 1] {
                    for dx in [width - 1, 0, 1] {
                        acc += prev[[(y + dy) % height, (x + dx) % width]];
                    }
                }
                f[[y, x]] = acc / 9.0;
            }
        }
    }
    let (lo, hi) = f.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (hi - lo).max(1e-6);
    f.mapv(|x| 0.05 + 0.5 * (x - lo) / span)
}

/// Render `spec` on `canvas`: the (category, identity) silhouette rotated by
/// the view angle, centered in quadrant `location`, over its background.
pub fn render_stimulus(spec: &StimulusSpec, canvas: &CanvasConfig) -> Result<Image> {
    canvas.check(spec)?;
    let (h, w) = (canvas.height, canvas.width);
    let (qh, qw) = (h / 2, w / 2);
    let cy = (spec.location / 2 * qh) as f64 + qh as f64 / 2.0;
    let cx = (spec.location % 2 * qw) as f64 + qw as f64 / 2.0;
    let radius = RADIUS_FRAC * qh.min(qw) as f64;
    let theta = (spec.view_angle as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let ss = canvas.supersample;
    let variant = spec.identity;

    let mut img = match spec.background {
        Background::Blank => Image::zeros((h, w)),
        Background::Texture(seed) => texture_field(seed, h, w),
    };
    // Only pixels inside the object's quadrant can be covered.
    let y0 = spec.location / 2 * qh;
    let x0 = spec.location % 2 * qw;
    for y in y0..y0 + qh {
        for x in x0..x0 + qw {
            let mut hits = 0usize;
            for sy in 0..ss {
                for sx in 0..ss {
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64 - cy;
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64 - cx;
                    // Rotate the sample back into the object frame; v points up.
                    let u = (cos * px - sin * py) / radius;
                    let v = -(sin * px + cos * py) / radius;
                    if object_contains(spec.category, variant, u, v) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let alpha = hits as f32 / (ss * ss) as f32;
                img[[y, x]] = alpha * OBJECT_INTENSITY + (1.0 - alpha) * img[[y, x]];
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn spec(category: usize, identity: usize, location: usize, view_angle: u16) -> StimulusSpec {
        StimulusSpec {
            category,
            identity,
            location,
            view_angle,
            background: Background::Blank,
        }
    }

    #[test]
    fn deterministic() {
        let c = CanvasConfig::default();
        let s = StimulusSpec {
            background: Background::Texture(9),
            ..spec(2, 1, 3, 45)
        };
        assert_eq!(render_stimulus(&s, &c).unwrap(), render_stimulus(&s, &c).unwrap());
    }

    #[test]
    fn quadrants_are_translates() {
        let c = CanvasConfig::default();
        let a = render_stimulus(&spec(0, 1, 0, 30), &c).unwrap();
        let b = render_stimulus(&spec(0, 1, 3, 30), &c).unwrap();
        assert_eq!(a.slice(s![..16, ..16]), b.slice(s![16.., 16..]));
        assert!(a.slice(s![16.., 16..]).iter().all(|&x| x == 0.0));
        assert!(b.slice(s![..16, ..16]).iter().all(|&x| x == 0.0));
        assert!(a.sum() > 10.0);
    }

    #[test]
    fn all_objects_pairwise_distinct() {
        for c in [CanvasConfig::default(), CanvasConfig::larger()] {
            let mut imgs = Vec::new();
            for cat in 0..c.n_cat {
                for id in 0..=c.n_id {
                    imgs.push(render_stimulus(&spec(cat, id, 0, 0), &c).unwrap());
                }
            }
            for i in 0..imgs.len() {
                for j in 0..imgs.len() {
                    let d: f32 = (&imgs[i] - &imgs[j]).mapv(|x| x * x).sum().sqrt();
                    if i == j {
                        assert_eq!(d, 0.0);
                    } else {
                        assert!(d > 0.5, "objects {i} and {j} too close: {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn values_in_unit_range_with_texture() {
        let c = CanvasConfig::default();
        for seed in 0..4 {
            let s = StimulusSpec {
                background: Background::Texture(seed),
                ..spec(3, 0, 1, 105)
            };
            let img = render_stimulus(&s, &c).unwrap();
            assert!(img.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn rejects_invalid_spec() {
        let c = CanvasConfig::default();
        assert!(render_stimulus(&spec(4, 0, 0, 0), &c).is_err());
        assert!(render_stimulus(&spec(0, 3, 0, 0), &c).is_err());
    }
}
