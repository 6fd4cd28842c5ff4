//! Deterministic procedural paired scenes.
//!
//! A scene is a road, one building and scattered vegetation, seen from
//! above (aerial) and from street level (ground). Both renderings are pure
//! functions of [`SceneParams`], so every pixel has an exact label.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, Palette, RangeTag, SegMap, BUILDING, ROAD, SKY, VEGETATION, VOID};
use crate::error::{Error, Result};

pub const N_CATEGORIES: usize = 4;

const HEIGHT_SPLIT: f64 = 0.35;
const VEGETATION_SPLIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Aerial,
    Ground,
}

impl std::str::FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aerial" => Ok(View::Aerial),
            "ground" => Ok(View::Ground),
            other => Err(Error::InvalidArgument(format!("unknown view {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    /// Lateral road position, `[-0.3, 0.3]`.
    pub road_offset: f64,
    /// `[0.1, 0.6]`
    pub building_height: f64,
    /// `[0, 1)`
    pub building_hue: f64,
    /// `[0, 1]`
    pub vegetation_density: f64,
    /// `[0.4, 1]`
    pub sky_brightness: f64,
    pub scene_category: usize,
}

/// Category: tall-vs-low building crossed with sparse-vs-dense vegetation.
pub fn scene_category(building_height: f64, vegetation_density: f64) -> usize {
    2 * usize::from(building_height > HEIGHT_SPLIT) + usize::from(vegetation_density > VEGETATION_SPLIT)
}

impl SceneParams {
    pub fn new(
        seed: u64,
        road_offset: f64,
        building_height: f64,
        building_hue: f64,
        vegetation_density: f64,
        sky_brightness: f64,
    ) -> Result<Self> {
        let check = |name: &str, v: f64, lo: f64, hi: f64, hi_open: bool| {
            let ok = v >= lo && if hi_open { v < hi } else { v <= hi };
            if ok {
                Ok(())
            } else {
                Err(Error::Range(format!("{name} = {v} outside [{lo}, {hi}{}", if hi_open { ")" } else { "]" })))
            }
        };
        check("road_offset", road_offset, -0.3, 0.3, false)?;
        check("building_height", building_height, 0.1, 0.6, false)?;
        check("building_hue", building_hue, 0.0, 1.0, true)?;
        check("vegetation_density", vegetation_density, 0.0, 1.0, false)?;
        check("sky_brightness", sky_brightness, 0.4, 1.0, false)?;
        Ok(Self {
            seed,
            road_offset,
            building_height,
            building_hue,
            vegetation_density,
            sky_brightness,
            scene_category: scene_category(building_height, vegetation_density),
        })
    }

    /// Random scene of the requested category. Height and density are drawn
    /// away from the category thresholds so categories stay separable.
    pub fn sample_in_category(category: usize, rng: &mut impl Rng) -> Self {
        assert!(category < N_CATEGORIES);
        let tall = category >= 2;
        let dense = category % 2 == 1;
        let building_height = if tall { rng.random_range(0.40..=0.6) } else { rng.random_range(0.1..=0.30) };
        let vegetation_density = if dense { rng.random_range(0.6..=1.0) } else { rng.random_range(0.0..=0.4) };
        let p = Self::new(
            rng.random(),
            rng.random_range(-0.3..=0.3),
            building_height,
            rng.random_range(0.0..1.0),
            vegetation_density,
            rng.random_range(0.4..=1.0),
        )
        .expect("sampled within bounds");
        debug_assert_eq!(p.scene_category, category);
        p
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform `[0,1)` value keyed by `(seed, tag, a, b)`.
fn hash01(seed: u64, tag: u64, a: u64, b: u64) -> f64 {
    let h = splitmix(splitmix(splitmix(seed ^ tag.wrapping_mul(0x51_7CC1_B727_220A)) ^ a) ^ b.rotate_left(17));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn scale(c: [f64; 3], k: f64) -> [f64; 3] {
    c.map(|v| v * k)
}

/// Render one view. `size` must be 64 or 256.
pub fn render_scene(params: &SceneParams, view: View, size: usize) -> Result<(Image, SegMap)> {
    if size != 64 && size != 256 {
        return Err(Error::InvalidSize(size));
    }
    let mut labels = vec![VOID; size * size];
    let mut colors = vec![[0.0f64; 3]; size * size];
    match view {
        View::Aerial => render_aerial(params, size, &mut labels, &mut colors),
        View::Ground => render_ground(params, size, &mut labels, &mut colors),
    }
    let tag = match view {
        View::Aerial => 1,
        View::Ground => 2,
    };
    // Fine grain, independent of the class colors.
    let grain = 256 / size as u64;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for (i, c) in colors.iter().enumerate() {
        let (y, x) = ((i / size) as u64, (i % size) as u64);
        let n = (hash01(params.seed, tag + 10, y * grain, x * grain) - 0.5) * 12.0;
        pixels.extend(c.iter().map(|v| (v + n).round().clamp(0.0, 255.0) as f32));
    }
    let image = Image::new(size, size, pixels, RangeTag::Byte)?;
    let seg = SegMap::new(size, size, labels, Palette::default())?;
    Ok((image, seg))
}

fn illumination(p: &SceneParams) -> f64 {
    0.6 + 0.4 * p.sky_brightness
}

fn building_on_left(p: &SceneParams) -> bool {
    p.road_offset >= 0.0
}

fn render_aerial(p: &SceneParams, size: usize, labels: &mut [u8], colors: &mut [[f64; 3]]) {
    let s = size as f64;
    let light = illumination(p);
    let soil = scale([150.0, 135.0, 105.0], light);
    let asphalt = scale([95.0, 95.0, 100.0], light);
    let roof = scale(hsv(p.building_hue, 0.55, 0.8), light);
    // Layout is built with the road running top to bottom and then transposed,
    // so the band ends up horizontal with the building above or below it.
    let road_center = 0.5 + p.road_offset;
    let road_half = 0.08;
    let side = 0.15 + 0.5 * p.building_height;
    let (bx0, bx1) = if building_on_left(p) {
        let right = road_center - road_half - 0.04;
        ((right - side).max(0.02), right)
    } else {
        let left = road_center + road_half + 0.04;
        (left, (left + side).min(0.98))
    };
    let (by0, by1) = (0.5 - side / 2.0, 0.5 + side / 2.0);
    let cells = 16u64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((y as f64 + 0.5) / s, (x as f64 + 0.5) / s);
            let i = y * size + x;
            let (cx, cy) = ((u * cells as f64) as u64, (v * cells as f64) as u64);
            let (label, color) = if (u - road_center).abs() <= road_half {
                (ROAD, asphalt)
            } else if (bx0..=bx1).contains(&u) && (by0..=by1).contains(&v) {
                (BUILDING, roof)
            } else if hash01(p.seed, 3, cx, cy) < p.vegetation_density * 0.7 {
                let shade = 0.85 + 0.3 * hash01(p.seed, 4, cx, cy);
                (VEGETATION, scale([55.0, 115.0, 45.0], light * shade))
            } else {
                (VOID, soil)
            };
            labels[i] = label;
            colors[i] = color;
        }
    }
}

fn render_ground(p: &SceneParams, size: usize, labels: &mut [u8], colors: &mut [[f64; 3]]) {
    let s = size as f64;
    let light = illumination(p);
    let horizon = 0.45;
    let sidewalk = scale([165.0, 155.0, 140.0], light);
    let asphalt = scale([95.0, 95.0, 100.0], light);
    let facade = scale(hsv(p.building_hue, 0.55, 0.8), light);
    let window = scale(hsv(p.building_hue, 0.35, 0.45), light);
    let top = horizon - 0.7 * p.building_height;
    let (fx0, fx1) = if building_on_left(p) { (0.04, 0.46) } else { (0.54, 0.96) };
    // Trees along the horizon, one slot per tenth of the width. The count
    // follows the density exactly; which slots are used is random.
    let mut slots: Vec<u64> = (0..10).collect();
    slots.sort_by(|&a, &b| hash01(p.seed, 5, a, 0).total_cmp(&hash01(p.seed, 5, b, 0)));
    slots.truncate((p.vegetation_density * 10.0).round() as usize);
    let trees: Vec<(f64, f64)> =
        slots.iter().map(|&k| ((k as f64 + 0.5) / 10.0, 0.045 + 0.02 * hash01(p.seed, 6, k, 0))).collect();
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let i = y * size + x;
            let depth = ((v - horizon) / (1.0 - horizon)).max(0.0);
            let road_center = 0.5 + 1.2 * p.road_offset * depth;
            let road_half = 0.04 + 0.42 * depth;
            let in_tree = trees.iter().any(|&(tu, r)| {
                let (du, dv) = (u - tu, v - (horizon - r * 0.8));
                du * du + dv * dv <= r * r
            });
            let (label, color) = if v > horizon && (u - road_center).abs() <= road_half {
                (ROAD, asphalt)
            } else if in_tree {
                (VEGETATION, scale([50.0, 110.0, 40.0], light))
            } else if (fx0..=fx1).contains(&u) && v >= top && v <= horizon + 0.04 {
                let lit = ((u - fx0) * 24.0).fract() < 0.45 && ((v - top) * 20.0).fract() < 0.5;
                (BUILDING, if lit { window } else { facade })
            } else if v <= horizon {
                let t = v / horizon;
                let b = p.sky_brightness;
                (SKY, [90.0 + 80.0 * t, 140.0 + 60.0 * t, 220.0 + 20.0 * t].map(|c| c * b))
            } else {
                (VOID, sidewalk)
            };
            labels[i] = label;
            colors[i] = color;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> SceneParams {
        SceneParams::new(42, 0.1, 0.45, 0.3, 0.7, 0.8).unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        for view in [View::Aerial, View::Ground] {
            for size in [64, 256] {
                assert_eq!(render_scene(&params(), view, size).unwrap(), render_scene(&params(), view, size).unwrap());
            }
        }
    }

    #[test]
    fn no_vegetation_without_density() {
        let p = SceneParams { vegetation_density: 0.0, ..params() };
        for view in [View::Aerial, View::Ground] {
            let (_, seg) = render_scene(&p, view, 64).unwrap();
            assert_eq!(seg.count(VEGETATION), 0);
        }
    }

    #[test]
    fn aerial_view_has_no_sky() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 0..N_CATEGORIES {
            let p = SceneParams::sample_in_category(c, &mut rng);
            let (_, seg) = render_scene(&p, View::Aerial, 64).unwrap();
            assert_eq!(seg.count(SKY), 0);
            let (_, g) = render_scene(&p, View::Ground, 64).unwrap();
            assert!(g.count(SKY) > 0 && g.count(ROAD) > 0 && g.count(BUILDING) > 0);
        }
    }

    #[test]
    fn hue_only_changes_building_pixels() {
        let a = params();
        let b = SceneParams { building_hue: 0.8, ..a };
        let (ia, sa) = render_scene(&a, View::Ground, 64).unwrap();
        let (ib, sb) = render_scene(&b, View::Ground, 64).unwrap();
        assert_eq!(sa, sb);
        let mut changed = 0;
        for y in 0..64 {
            for x in 0..64 {
                if ia.at(y, x) != ib.at(y, x) {
                    assert_eq!(sa.at(y, x), BUILDING, "non-building pixel ({y},{x}) changed");
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn invalid_size_and_params() {
        assert!(matches!(render_scene(&params(), View::Aerial, 100), Err(Error::InvalidSize(100))));
        assert!(SceneParams::new(0, 0.5, 0.3, 0.1, 0.1, 0.5).is_err());
        assert!(SceneParams::new(0, 0.0, 0.3, 1.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn category_is_a_function_of_the_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for c in 0..N_CATEGORIES {
            for _ in 0..20 {
                let p = SceneParams::sample_in_category(c, &mut rng);
                assert_eq!(p.scene_category, c);
                assert_eq!(scene_category(p.building_height, p.vegetation_density), c);
            }
        }
    }
}
