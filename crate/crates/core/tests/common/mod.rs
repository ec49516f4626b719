//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const R: f64 = 6_371_000.0;

// ---------------------------------------------------------------------------
// Geodesy via unit vectors (no haversine or spherical trig formulas).

pub type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

pub fn to_vec(lon: f64, lat: f64) -> V3 {
    let (l, p) = (lon.to_radians(), lat.to_radians());
    [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
}

pub fn from_vec(v: V3) -> (f64, f64) {
    let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt());
    let lon = v[1].atan2(v[0]);
    (lon.to_degrees(), lat.to_degrees())
}

fn east_north(lon: f64, lat: f64) -> (V3, V3) {
    let (l, p) = (lon.to_radians(), lat.to_radians());
    let east = [-l.sin(), l.cos(), 0.0];
    let north = [-p.sin() * l.cos(), -p.sin() * l.sin(), p.cos()];
    (east, north)
}

/// Central angle times R.
pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (va, vb) = (to_vec(a.0, a.1), to_vec(b.0, b.1));
    R * norm(cross(va, vb)).atan2(dot(va, vb))
}

/// Bearing of the great circle leaving `a` towards `b`, degrees in [0, 360).
pub fn bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (va, vb) = (to_vec(a.0, a.1), to_vec(b.0, b.1));
    let (east, north) = east_north(a.0, a.1);
    // tangent of the great circle at a
    let t = cross(cross(va, vb), va);
    dot(t, east).atan2(dot(t, north)).to_degrees().rem_euclid(360.0)
}

/// Rotates `a` by `distance_m / R` radians along `bearing_deg`.
pub fn destination(a: (f64, f64), bearing_deg: f64, distance_m: f64) -> (f64, f64) {
    let va = to_vec(a.0, a.1);
    let (east, north) = east_north(a.0, a.1);
    let th = bearing_deg.to_radians();
    let d = distance_m / R;
    let dir: V3 = std::array::from_fn(|i| north[i] * th.cos() + east[i] * th.sin());
    from_vec(std::array::from_fn(|i| va[i] * d.cos() + dir[i] * d.sin()))
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Fixed (lon, lat) pairs covering equator, meridians, high latitudes, the
/// antimeridian and distances from metres to thousands of kilometres.
pub fn fixed_pairs() -> Vec<((f64, f64), (f64, f64))> {
    vec![
        ((0.0, 0.0), (1.0, 0.0)),
        ((0.0, 0.0), (0.0, 1.0)),
        ((0.0, 0.0), (-1.0, -1.0)),
        ((10.0, 45.0), (10.0, 46.0)),
        ((-4.49, 48.38), (-4.77, 48.36)),
        ((-4.49, 48.38), (-4.49001, 48.38001)),
        ((179.5, 10.0), (-179.5, 10.0)),
        ((-179.9, -30.0), (179.9, -30.1)),
        ((0.0, 89.0), (180.0, 89.0)),
        ((45.0, -88.0), (-135.0, -87.0)),
        ((139.69, 35.69), (-122.42, 37.77)),
        ((-0.13, 51.51), (-74.0, 40.71)),
        ((2.35, 48.86), (37.62, 55.76)),
        ((151.21, -33.87), (174.76, -36.85)),
        ((-58.38, -34.6), (18.42, -33.92)),
        ((103.82, 1.35), (72.88, 19.08)),
        ((23.72, 37.98), (25.14, 35.34)),
        ((-70.0, -55.0), (-60.0, -62.0)),
        ((12.0, 0.0), (12.0, -0.0001)),
        ((100.0, 60.0), (101.0, 60.0)),
        ((-45.0, 30.0), (45.0, -30.0)),
        ((0.0, 0.0), (90.0, 0.0)),
        ((-120.0, 20.0), (-119.99, 20.02)),
        ((5.0, -10.0), (-5.0, 10.0)),
    ]
}

// ---------------------------------------------------------------------------
// Exact-greedy regression tree by brute-force enumeration.

pub const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
}

pub struct OracleParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

struct Best {
    feature: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
    scale: f64,
}

/// Every midpoint between adjacent distinct non-missing column values.
pub fn column_midpoints(x: &[Vec<f64>], f: usize) -> Vec<f64> {
    let mut v: Vec<f64> = x.iter().map(|r| r[f]).filter(|v| !v.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
}

fn beats(c: &Best, b: &Best) -> bool {
    c.gain > b.gain + EPS * b.scale.max(c.scale)
}

fn sum(rows: &[usize], v: &[f64]) -> f64 {
    rows.iter().map(|&r| v[r]).sum()
}

pub fn exact_greedy(x: &[Vec<f64>], g: &[f64], h: &[f64], p: &OracleParams) -> OracleNode {
    let mids: Vec<Vec<f64>> = (0..x[0].len()).map(|f| column_midpoints(x, f)).collect();
    let rows: Vec<usize> = (0..x.len()).collect();
    grow(x, g, h, p, &mids, &rows, 0)
}

fn grow(x: &[Vec<f64>], g: &[f64], h: &[f64], p: &OracleParams, mids: &[Vec<f64>], rows: &[usize], depth: usize) -> OracleNode {
    let (gs, hs) = (sum(rows, g), sum(rows, h));
    let leaf = OracleNode::Leaf(-gs / (hs + p.lambda));
    if depth >= p.max_depth || rows.len() < 2 {
        return leaf;
    }
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let parent = score(gs, hs);
    let mut best: Option<Best> = None;
    for (f, thresholds) in mids.iter().enumerate() {
        let missing: Vec<usize> = rows.iter().copied().filter(|&r| x[r][f].is_nan()).collect();
        let present: Vec<usize> = rows.iter().copied().filter(|&r| !x[r][f].is_nan()).collect();
        let mut seen: Vec<Vec<usize>> = Vec::new();
        let mut feature_best: Option<Best> = None;
        for &t in thresholds {
            let left: Vec<usize> = present.iter().copied().filter(|&r| x[r][f] < t).collect();
            let right: Vec<usize> = present.iter().copied().filter(|&r| x[r][f] >= t).collect();
            // thresholds inducing an already seen partition keep the lowest one
            if seen.contains(&left) {
                continue;
            }
            seen.push(left.clone());
            let dirs: Vec<bool> = if !missing.is_empty() {
                vec![false, true]
            } else {
                vec![sum(&left, h) >= sum(&right, h)]
            };
            for dl in dirs {
                let (mut l, mut r) = (left.clone(), right.clone());
                if dl { l.extend(&missing) } else { r.extend(&missing) }
                let (hl, hr) = (sum(&l, h), sum(&r, h));
                if l.is_empty() || r.is_empty() || hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let (sl, sr) = (score(sum(&l, g), hl), score(sum(&r, g), hr));
                let cand = Best {
                    feature: f,
                    threshold: t,
                    default_left: dl,
                    gain: 0.5 * (sl + sr - parent) - p.gamma,
                    scale: sl + sr + parent,
                };
                if feature_best.as_ref().is_none_or(|b| beats(&cand, b)) {
                    feature_best = Some(cand);
                }
            }
        }
        if let Some(c) = feature_best.filter(|c| c.gain > EPS * c.scale) {
            if best.as_ref().is_none_or(|b| beats(&c, b)) {
                best = Some(c);
            }
        }
    }
    let Some(b) = best else {
        return leaf;
    };
    let goes_left = |r: usize| {
        let v = x[r][b.feature];
        if v.is_nan() { b.default_left } else { v < b.threshold }
    };
    let l: Vec<usize> = rows.iter().copied().filter(|&r| goes_left(r)).collect();
    let r: Vec<usize> = rows.iter().copied().filter(|&r| !goes_left(r)).collect();
    OracleNode::Split {
        feature: b.feature,
        threshold: b.threshold,
        default_left: b.default_left,
        left: Box::new(grow(x, g, h, p, mids, &l, depth + 1)),
        right: Box::new(grow(x, g, h, p, mids, &r, depth + 1)),
    }
}

/// Random dataset: `n` rows of up to 4 features mixing continuous, discrete
/// and missing values, plus targets.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.gen_range(2..=200);
    let d = rng.gen_range(1..=4);
    let kinds: Vec<u8> = (0..d).map(|_| rng.gen_range(0..3)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            kinds
                .iter()
                .map(|&k| match k {
                    0 => rng.gen_range(-10.0..10.0),
                    1 => f64::from(rng.gen_range(0..5)),
                    _ => {
                        if rng.gen_bool(0.2) {
                            f64::NAN
                        } else {
                            rng.gen_range(0.0..1.0)
                        }
                    }
                })
                .collect()
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| {
            let a = if r[0].is_nan() { 3.0 } else { r[0] };
            a.sin() * 2.0 + rng.gen_range(-0.5..0.5)
        })
        .collect();
    (x, y)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
