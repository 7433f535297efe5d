//! Classical informativeness scorers over saliency maps: histogram kurtosis,
//! radiomics-style first-order / co-occurrence / 2-D shape features, and
//! Borda-count fusion of per-feature rankings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

pub const HISTOGRAM_BINS: usize = 64;
pub const GLCM_LEVELS: usize = 32;

/// Intensity histogram with 64 uniform bins over [0, map max].
#[derive(Clone, Debug)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Build the 64-bin histogram of a map over [0, max]. Returns `None` for
    /// a map with non-positive maximum (no spread to bin).
    pub fn of_map(map: &Grid) -> Option<Histogram> {
        let max = map.max();
        if !(max > 0.0) {
            return None;
        }
        let width = max / HISTOGRAM_BINS as f64;
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in map.values() {
            let bin = ((v / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        let bin_edges = (0..=HISTOGRAM_BINS).map(|i| i as f64 * width).collect();
        Some(Histogram { bin_edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Center of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        (self.bin_edges[i] + self.bin_edges[i + 1]) / 2.0
    }
}

/// Feature family of a [`FeatureVector`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    FirstOrder,
    Glcm,
    Shape2d,
}

impl FeatureFamily {
    pub fn feature_names(&self) -> &'static [&'static str] {
        match self {
            FeatureFamily::FirstOrder => &["kurtosis", "skewness", "entropy", "total_energy"],
            FeatureFamily::Glcm => &["sum_entropy", "idn", "difference_entropy", "mcc"],
            FeatureFamily::Shape2d => &["sphericity", "spherical_disproportion", "elongation"],
        }
    }
}

/// Named feature values for one map, in the family's fixed schema order.
#[derive(Clone, Debug)]
pub struct FeatureVector {
    pub family: FeatureFamily,
    pub values: Vec<f64>,
    /// Set when the map was degenerate for this family (constant map, empty
    /// foreground, failed eigen-solve).
    pub degenerate: bool,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.family
            .feature_names()
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values[i])
    }
}

/// Kurtosis informativeness score: Pearson (non-excess) kurtosis of the
/// 64-bin histogram-weighted intensity distribution. Constant maps score
/// `-inf` (least informative).
pub fn kurtosis_score(map: &Grid) -> f64 {
    let hist = match Histogram::of_map(map) {
        Some(h) => h,
        None => return f64::NEG_INFINITY,
    };
    let n = hist.total() as f64;
    let mean: f64 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 * hist.center(i))
        .sum::<f64>()
        / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for (i, &c) in hist.counts.iter().enumerate() {
        let d = hist.center(i) - mean;
        m2 += c as f64 * d * d;
        m4 += c as f64 * d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    m4 / (m2 * m2)
}

/// First-order features: Pearson kurtosis and skewness of the raw pixel
/// values, Shannon entropy (bits) of the 64-bin histogram, and total energy
/// Σx² (unit pixel area).
///
/// A zero-variance map yields kurtosis/skewness 0 (a finite sentinel below
/// the Pearson lower bound of 1), entropy 0, and valid energy, with the
/// degenerate flag set.
pub fn first_order_features(map: &Grid) -> FeatureVector {
    let n = map.len() as f64;
    let mean = map.values().iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    let mut energy = 0.0;
    for &v in map.values() {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        energy += v * v;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // Constant maps are detected on the values themselves; the mean picks up
    // roundoff that would leave m2 a hair above zero.
    let degenerate = !(map.max() > map.min()) || m2 <= 0.0;
    let (kurtosis, skewness) = if degenerate {
        (0.0, 0.0)
    } else {
        (m4 / (m2 * m2), m3 / m2.powf(1.5))
    };
    let entropy = match Histogram::of_map(map) {
        None => 0.0,
        Some(h) => {
            let total = h.total() as f64;
            let mut e = 0.0;
            for &c in &h.counts {
                if c > 0 {
                    let p = c as f64 / total;
                    e -= p * p.log2();
                }
            }
            e
        }
    };
    FeatureVector {
        family: FeatureFamily::FirstOrder,
        values: vec![kurtosis, skewness, entropy, energy],
        degenerate,
    }
}

/// Symmetric normalized gray-level co-occurrence matrix for one offset.
fn glcm_matrix(levels: &[usize], h: usize, w: usize, dy: i64, dx: i64) -> Vec<f64> {
    let mut m = vec![0.0; GLCM_LEVELS * GLCM_LEVELS];
    let mut pairs = 0u64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let yy = y + dy;
            let xx = x + dx;
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                continue;
            }
            let a = levels[y as usize * w + x as usize];
            let b = levels[yy as usize * w + xx as usize];
            m[a * GLCM_LEVELS + b] += 1.0;
            m[b * GLCM_LEVELS + a] += 1.0;
            pairs += 2;
        }
    }
    if pairs > 0 {
        let inv = 1.0 / pairs as f64;
        for v in &mut m {
            *v *= inv;
        }
    }
    m
}

fn glcm_features_of_matrix(p: &[f64]) -> (f64, f64, f64, Option<f64>) {
    let ng = GLCM_LEVELS;
    // Marginals and diagonal/cross-diagonal sums.
    let mut px = vec![0.0; ng];
    let mut py = vec![0.0; ng];
    let mut p_sum = vec![0.0; 2 * ng - 1]; // index i+j
    let mut p_diff = vec![0.0; ng]; // index |i-j|
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            px[i] += v;
            py[j] += v;
            p_sum[i + j] += v;
            p_diff[i.abs_diff(j)] += v;
        }
    }
    let entropy_of = |ps: &[f64]| -> f64 {
        let mut e = 0.0;
        for &q in ps {
            if q > 0.0 {
                e -= q * q.log2();
            }
        }
        e
    };
    let sum_entropy = entropy_of(&p_sum);
    let difference_entropy = entropy_of(&p_diff);
    let mut idn = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            idn += p[i * ng + j] / (1.0 + i.abs_diff(j) as f64 / ng as f64);
        }
    }
    // Maximal correlation coefficient: sqrt of the second-largest eigenvalue
    // of Q, Q_ij = Σ_k p(i,k) p(j,k) / (p_x(i) p_y(k)).
    let mcc = mcc_of(p, &px, &py);
    (sum_entropy, idn, difference_entropy, mcc)
}

fn mcc_of(p: &[f64], px: &[f64], py: &[f64]) -> Option<f64> {
    let ng = GLCM_LEVELS;
    // Restrict to levels with non-zero marginals; a near-degenerate spectrum
    // is reported as None.
    let active: Vec<usize> = (0..ng).filter(|&i| px[i] > 0.0 && py[i] > 0.0).collect();
    if active.len() < 2 {
        return None;
    }
    let m = active.len();
    let mut q = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (qi, &i) in active.iter().enumerate() {
        for (qj, &j) in active.iter().enumerate() {
            let mut acc = 0.0;
            for &k in &active {
                acc += p[i * ng + k] * p[j * ng + k] / (px[i] * py[k]);
            }
            q[(qi, qj)] = acc;
        }
    }
    let eigen = q.complex_eigenvalues();
    let mut re: Vec<f64> = eigen.iter().map(|c| c.re).collect();
    re.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let second = re.get(1).copied()?;
    if !second.is_finite() {
        return None;
    }
    Some(second.max(0.0).sqrt())
}

/// Gray-level co-occurrence features: quantize to 32 uniform levels over
/// [min, max], build symmetric normalized GLCMs at distance 1 for the four
/// standard angles, compute sum entropy, inverse difference normalized,
/// difference entropy, and the maximal correlation coefficient per angle,
/// and return the angle average.
pub fn glcm_features(map: &Grid) -> Result<FeatureVector> {
    if map.h() < 2 || map.w() < 2 {
        return Err(Error::invalid("map", "glcm needs at least 2x2"));
    }
    let min = map.min();
    let max = map.max();
    if !(max > min) {
        // Constant map: degenerate values by convention.
        return Ok(FeatureVector {
            family: FeatureFamily::Glcm,
            values: vec![0.0, 1.0, 0.0, 0.0],
            degenerate: true,
        });
    }
    let scale = GLCM_LEVELS as f64 / (max - min);
    let levels: Vec<usize> = map
        .values()
        .iter()
        .map(|&v| (((v - min) * scale) as usize).min(GLCM_LEVELS - 1))
        .collect();
    // Offsets for 0°, 45°, 90°, 135° at distance 1 (rows grow downward).
    let offsets = [(0i64, 1i64), (-1, 1), (-1, 0), (-1, -1)];
    let mut acc = [0.0; 4];
    let mut mcc_failed = false;
    for &(dy, dx) in &offsets {
        let m = glcm_matrix(&levels, map.h(), map.w(), dy, dx);
        let (se, idn, de, mcc) = glcm_features_of_matrix(&m);
        acc[0] += se;
        acc[1] += idn;
        acc[2] += de;
        match mcc {
            Some(v) => acc[3] += v,
            None => mcc_failed = true,
        }
    }
    let n = offsets.len() as f64;
    Ok(FeatureVector {
        family: FeatureFamily::Glcm,
        values: vec![
            acc[0] / n,
            acc[1] / n,
            acc[2] / n,
            if mcc_failed { 0.0 } else { acc[3] / n },
        ],
        degenerate: mcc_failed,
    })
}

/// Otsu threshold over a 256-bin histogram of [min, max].
pub fn otsu_threshold(map: &Grid) -> f64 {
    const BINS: usize = 256;
    let min = map.min();
    let max = map.max();
    if !(max > min) {
        return min;
    }
    let scale = BINS as f64 / (max - min);
    let mut counts = vec![0u64; BINS];
    for &v in map.values() {
        let b = (((v - min) * scale) as usize).min(BINS - 1);
        counts[b] += 1;
    }
    let total = map.len() as f64;
    let sum_all: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best_var = -1.0;
    let mut best_bin = 0usize;
    for t in 0..BINS - 1 {
        w0 += counts[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * counts[t] as f64;
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best_var {
            best_var = between;
            best_bin = t;
        }
    }
    min + (best_bin as f64 + 1.0) / scale
}

/// Binarize by Otsu threshold (strictly above).
pub fn otsu_binarize(map: &Grid) -> Mask {
    let theta = otsu_threshold(map);
    let mut m = Mask::empty(map.h(), map.w());
    for y in 0..map.h() {
        for x in 0..map.w() {
            if map.at(y, x) > theta {
                m.set(y, x, true);
            }
        }
    }
    m
}

/// Largest 8-connected component of a mask. `None` when the mask is empty.
pub fn largest_component(mask: &Mask) -> Option<Mask> {
    let h = mask.h();
    let w = mask.w();
    let mut visited = vec![false; h * w];
    let mut best: Option<(usize, Vec<usize>)> = None;
    for start in 0..h * w {
        if visited[start] || !mask.bits()[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        visited[start] = true;
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let y = p / w;
            let x = p % w;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let yy = y as i64 + dy;
                    let xx = x as i64 + dx;
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    if mask.bits()[q] && !visited[q] {
                        visited[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        let better = match &best {
            None => true,
            Some((n, _)) => pixels.len() > *n,
        };
        if better {
            best = Some((pixels.len(), pixels));
        }
    }
    best.map(|(_, pixels)| {
        let mut m = Mask::empty(h, w);
        for p in pixels {
            m.set(p / w, p % w, true);
        }
        m
    })
}

/// Perimeter as the count of 4-neighbor edges between component pixels and
/// background (image border counts as background).
pub fn boundary_edge_count(component: &Mask) -> usize {
    let h = component.h() as i64;
    let w = component.w() as i64;
    let mut edges = 0;
    for y in 0..h {
        for x in 0..w {
            if !component.at(y as usize, x as usize) {
                continue;
            }
            for (dy, dx) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let yy = y + dy;
                let xx = x + dx;
                let outside = yy < 0 || xx < 0 || yy >= h || xx >= w;
                if outside || !component.at(yy as usize, xx as usize) {
                    edges += 1;
                }
            }
        }
    }
    edges
}

/// 2-D shape features of the largest Otsu-foreground component:
/// sphericity = 2√(πA)/P, spherical disproportion = 1/sphericity, and
/// elongation = √(λ_minor/λ_major) of the second-moment eigenvalues.
///
/// Empty foreground yields an all-zero vector with the degenerate flag set.
pub fn shape_features(map: &Grid) -> FeatureVector {
    let mask = otsu_binarize(map);
    let component = match largest_component(&mask) {
        Some(c) => c,
        None => {
            return FeatureVector {
                family: FeatureFamily::Shape2d,
                values: vec![0.0, 0.0, 0.0],
                degenerate: true,
            }
        }
    };
    let area = component.count() as f64;
    let perimeter = boundary_edge_count(&component) as f64;
    let sphericity = 2.0 * (std::f64::consts::PI * area).sqrt() / perimeter;
    let disproportion = 1.0 / sphericity;
    // Second central moments of the component's pixel coordinates.
    let mut sy = 0.0;
    let mut sx = 0.0;
    for y in 0..component.h() {
        for x in 0..component.w() {
            if component.at(y, x) {
                sy += y as f64;
                sx += x as f64;
            }
        }
    }
    let my = sy / area;
    let mx = sx / area;
    let mut c_yy = 0.0;
    let mut c_xx = 0.0;
    let mut c_xy = 0.0;
    for y in 0..component.h() {
        for x in 0..component.w() {
            if component.at(y, x) {
                let dy = y as f64 - my;
                let dx = x as f64 - mx;
                c_yy += dy * dy;
                c_xx += dx * dx;
                c_xy += dx * dy;
            }
        }
    }
    c_yy /= area;
    c_xx /= area;
    c_xy /= area;
    // Eigenvalues of the 2x2 covariance matrix.
    let tr = c_xx + c_yy;
    let det = c_xx * c_yy - c_xy * c_xy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l_major = tr / 2.0 + disc;
    let l_minor = (tr / 2.0 - disc).max(0.0);
    let elongation = if l_major <= 0.0 {
        1.0 // single pixel: no preferred axis
    } else {
        (l_minor / l_major).sqrt()
    };
    FeatureVector {
        family: FeatureFamily::Shape2d,
        values: vec![sphericity, disproportion, elongation],
        degenerate: false,
    }
}

/// Per-feature rank lists and their Borda-count fusion.
#[derive(Clone, Debug)]
pub struct BordaRanking {
    /// `per_feature_rank[k][i]` = rank of sample i under feature k
    /// (1 = most informative under that feature's direction).
    pub per_feature_rank: Vec<Vec<usize>>,
    /// Sum of per-feature ranks per sample.
    pub rank_sums: Vec<usize>,
    /// Sample ids sorted by ascending rank sum (ties by id).
    pub sorted_ids: Vec<String>,
}

/// Borda-count fusion: rank samples per feature (direction +1 means higher
/// values are more informative), sum ranks, and sort ascending by rank sum
/// with stable id tie-break.
pub fn borda_rank(
    ids: &[String],
    feature_matrix: &[Vec<f64>],
    directions: &[i8],
) -> Result<BordaRanking> {
    let n = feature_matrix.len();
    if n == 0 {
        return Err(Error::invalid("feature_matrix", "no samples"));
    }
    if ids.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} ids"),
            got: format!("{} ids", ids.len()),
        });
    }
    let k = feature_matrix[0].len();
    if directions.len() != k {
        return Err(Error::ShapeMismatch {
            expected: format!("{k} directions"),
            got: format!("{} directions", directions.len()),
        });
    }
    for (i, row) in feature_matrix.iter().enumerate() {
        if row.len() != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{k} features"),
                got: format!("{} features in row {i}", row.len()),
            });
        }
        for (j, v) in row.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::NanFeature {
                    sample: ids[i].clone(),
                    feature: j.to_string(),
                });
            }
        }
    }
    let mut per_feature_rank = vec![vec![0usize; n]; k];
    for f in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        let dir = directions[f] as f64;
        order.sort_by(|&a, &b| {
            let va = dir * feature_matrix[a][f];
            let vb = dir * feature_matrix[b][f];
            vb.partial_cmp(&va)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ids[a].cmp(&ids[b]))
        });
        for (rank0, &sample) in order.iter().enumerate() {
            per_feature_rank[f][sample] = rank0 + 1;
        }
    }
    let rank_sums: Vec<usize> = (0..n)
        .map(|i| per_feature_rank.iter().map(|r| r[i]).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rank_sums[a].cmp(&rank_sums[b]).then_with(|| ids[a].cmp(&ids[b])));
    let sorted_ids = order.iter().map(|&i| ids[i].clone()).collect();
    Ok(BordaRanking {
        per_feature_rank,
        rank_sums,
        sorted_ids,
    })
}

/// Direction calibration for a feature family: for each feature, the sign of
/// the Spearman correlation between feature values and per-sample ΔAUC on a
/// probe set (zero correlation defaults to +1).
pub fn calibrate_directions(feature_matrix: &[Vec<f64>], delta_aucs: &[f64]) -> Vec<i8> {
    if feature_matrix.is_empty() {
        return Vec::new();
    }
    let k = feature_matrix[0].len();
    (0..k)
        .map(|f| {
            let col: Vec<f64> = feature_matrix.iter().map(|row| row[f]).collect();
            let rho = crate::metrics::spearman(&col, delta_aucs);
            if rho < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Grid {
        let mut rng = crate::rng::rng_for(seed, "feat-test", 0);
        let data = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Grid::from_vec(h, w, data).unwrap()
    }

    // ---- kurtosis -------------------------------------------------------

    #[test]
    fn kurtosis_gaussian_near_three() {
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::rng::rng_for(1, "kurt-gauss", 0);
        let normal = Normal::new(0.5f64, 0.08).unwrap();
        let data: Vec<f64> = (0..10_000)
            .map(|_| normal.sample(&mut rng).clamp(0.0, 1.0))
            .collect();
        let g = Grid::from_vec(100, 100, data).unwrap();
        let k = kurtosis_score(&g);
        assert!((k - 3.0).abs() < 0.1, "kurtosis {k}");
    }

    #[test]
    fn kurtosis_two_point_symmetric_is_one() {
        // Half the pixels at 0, half at 1: m4/m2² = 1 exactly.
        let mut data = vec![0.0; 32];
        data.extend(vec![1.0; 32]);
        let g = Grid::from_vec(8, 8, data).unwrap();
        let k = kurtosis_score(&g);
        assert!((k - 1.0).abs() < 1e-9, "kurtosis {k}");
    }

    #[test]
    fn kurtosis_constant_map_sentinel() {
        let g = Grid::filled(8, 8, 0.4);
        assert_eq!(kurtosis_score(&g), f64::NEG_INFINITY);
        let z = Grid::zeros(8, 8);
        assert_eq!(kurtosis_score(&z), f64::NEG_INFINITY);
    }

    #[test]
    fn kurtosis_ordering_invariant_to_positive_scaling() {
        let maps: Vec<Grid> = (0..6).map(|i| random_grid(12, 12, 100 + i)).collect();
        let base: Vec<f64> = maps.iter().map(kurtosis_score).collect();
        let scaled: Vec<f64> = maps
            .iter()
            .map(|m| {
                let mut s = m.clone();
                for v in s.values_mut() {
                    *v *= 37.5;
                }
                kurtosis_score(&s)
            })
            .collect();
        let argsort = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(argsort(&base), argsort(&scaled));
    }

    // ---- first order ----------------------------------------------------

    // Straight-line moment/entropy oracle over raw pixels.
    fn first_order_oracle(map: &Grid) -> (f64, f64, f64, f64) {
        let xs = map.values();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2);
        let skew = m3 / m2.powf(1.5);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; 64];
        for &x in xs {
            let b = ((x / (max / 64.0)) as usize).min(63);
            counts[b] += 1;
        }
        let mut entropy = 0.0;
        for &c in &counts {
            if c > 0 {
                let p = c as f64 / n;
                entropy -= p * p.log2();
            }
        }
        let energy = xs.iter().map(|x| x * x).sum::<f64>();
        (kurt, skew, entropy, energy)
    }

    #[test]
    fn first_order_matches_oracle() {
        for seed in 0..5 {
            let g = random_grid(8, 8, 200 + seed);
            let fv = first_order_features(&g);
            let (k, s, e, en) = first_order_oracle(&g);
            assert!((fv.values[0] - k).abs() < 1e-9);
            assert!((fv.values[1] - s).abs() < 1e-9);
            assert!((fv.values[2] - e).abs() < 1e-9);
            assert!((fv.values[3] - en).abs() < 1e-9);
        }
    }

    #[test]
    fn first_order_constant_map() {
        let g = Grid::filled(4, 5, 0.3);
        let fv = first_order_features(&g);
        assert!(fv.degenerate);
        assert_eq!(fv.get("entropy").unwrap(), 0.0);
        let want = 20.0 * 0.3 * 0.3;
        assert!((fv.get("total_energy").unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn first_order_uniform_histogram_entropy() {
        // One pixel per bin center: uniform over 64 bins -> 6 bits.
        let data: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
        let g = Grid::from_vec(8, 8, data).unwrap();
        let fv = first_order_features(&g);
        assert!((fv.get("entropy").unwrap() - 6.0).abs() < 1e-12);
    }

    // ---- glcm -----------------------------------------------------------

    // Brute-force double-loop co-occurrence oracle.
    fn glcm_oracle(map: &Grid) -> (f64, f64, f64, f64) {
        let min = map.min();
        let max = map.max();
        let scale = 32.0 / (max - min);
        let q: Vec<usize> = map
            .values()
            .iter()
            .map(|&v| (((v - min) * scale) as usize).min(31))
            .collect();
        let h = map.h() as i64;
        let w = map.w() as i64;
        let offsets = [(0i64, 1i64), (-1, 1), (-1, 0), (-1, -1)];
        let mut f = [0.0; 4];
        for &(dy, dx) in &offsets {
            let mut m = vec![vec![0.0f64; 32]; 32];
            let mut total = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let yy = y + dy;
                    let xx = x + dx;
                    if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        continue;
                    }
                    let a = q[(y * w + x) as usize];
                    let b = q[(yy * w + xx) as usize];
                    m[a][b] += 1.0;
                    m[b][a] += 1.0;
                    total += 2.0;
                }
            }
            for row in &mut m {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            let mut p_sum = vec![0.0; 63];
            let mut p_diff = vec![0.0; 32];
            let mut px = vec![0.0; 32];
            let mut py = vec![0.0; 32];
            for i in 0..32 {
                for j in 0..32 {
                    p_sum[i + j] += m[i][j];
                    p_diff[i.abs_diff(j)] += m[i][j];
                    px[i] += m[i][j];
                    py[j] += m[i][j];
                }
            }
            let ent = |p: &[f64]| -> f64 {
                p.iter()
                    .filter(|&&v| v > 0.0)
                    .map(|&v| -v * v.log2())
                    .sum()
            };
            f[0] += ent(&p_sum);
            f[2] += ent(&p_diff);
            let mut idn = 0.0;
            for i in 0..32 {
                for j in 0..32 {
                    idn += m[i][j] / (1.0 + i.abs_diff(j) as f64 / 32.0);
                }
            }
            f[1] += idn;
            // MCC via the same Q construction, brute force.
            let active: Vec<usize> = (0..32).filter(|&i| px[i] > 0.0 && py[i] > 0.0).collect();
            let dim = active.len();
            let mut qm = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for (qi, &i) in active.iter().enumerate() {
                for (qj, &j) in active.iter().enumerate() {
                    let mut acc = 0.0;
                    for &k in &active {
                        acc += m[i][k] * m[j][k] / (px[i] * py[k]);
                    }
                    qm[(qi, qj)] = acc;
                }
            }
            let mut re: Vec<f64> = qm.complex_eigenvalues().iter().map(|c| c.re).collect();
            re.sort_by(|a, b| b.partial_cmp(a).unwrap());
            f[3] += re[1].max(0.0).sqrt();
        }
        (f[0] / 4.0, f[1] / 4.0, f[2] / 4.0, f[3] / 4.0)
    }

    #[test]
    fn glcm_matches_brute_force_oracle() {
        for seed in 0..5 {
            let g = random_grid(16, 16, 300 + seed);
            let fv = glcm_features(&g).unwrap();
            let (se, idn, de, mcc) = glcm_oracle(&g);
            assert!((fv.values[0] - se).abs() < 1e-9, "sum entropy");
            assert!((fv.values[1] - idn).abs() < 1e-9, "idn");
            assert!((fv.values[2] - de).abs() < 1e-9, "difference entropy");
            assert!((fv.values[3] - mcc).abs() < 1e-9, "mcc");
        }
    }

    #[test]
    fn glcm_checkerboard_difference_entropy_zero() {
        // 2x2 checkerboard: all co-occurring pairs differ by exactly one
        // level at angle 0°, so |i-j| is constant and difference entropy 0.
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let min = g.min();
        let max = g.max();
        let scale = 32.0 / (max - min);
        let levels: Vec<usize> = g
            .values()
            .iter()
            .map(|&v| (((v - min) * scale) as usize).min(31))
            .collect();
        let m = glcm_matrix(&levels, 2, 2, 0, 1);
        let (_, _, de, _) = glcm_features_of_matrix(&m);
        assert!(de.abs() < 1e-12, "difference entropy {de}");
        // Only (0,31)/(31,0) pairs occur.
        assert!(m[31] > 0.0 && m[31 * 32] > 0.0);
        assert!(m[0] == 0.0 && m[31 * 32 + 31] == 0.0);
    }

    #[test]
    fn glcm_constant_map_degenerate_values() {
        let g = Grid::filled(4, 4, 0.7);
        let fv = glcm_features(&g).unwrap();
        assert!(fv.degenerate);
        assert_eq!(fv.values, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn glcm_matrix_symmetric_and_normalized() {
        let g = random_grid(9, 7, 55);
        let min = g.min();
        let max = g.max();
        let scale = 32.0 / (max - min);
        let levels: Vec<usize> = g
            .values()
            .iter()
            .map(|&v| (((v - min) * scale) as usize).min(31))
            .collect();
        for &(dy, dx) in &[(0i64, 1i64), (-1, 1), (-1, 0), (-1, -1)] {
            let m = glcm_matrix(&levels, 9, 7, dy, dx);
            let mut total = 0.0;
            for i in 0..32 {
                for j in 0..32 {
                    assert!((m[i * 32 + j] - m[j * 32 + i]).abs() < 1e-15);
                    total += m[i * 32 + j];
                }
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    // ---- shape ----------------------------------------------------------

    fn disk_grid(size: usize, r: f64) -> Grid {
        let mut g = Grid::zeros(size, size);
        let c = size as f64 / 2.0 - 0.5;
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
                if d <= r {
                    g.set(y, x, 1.0);
                }
            }
        }
        g
    }

    #[test]
    fn shape_disk_matches_rasterized_oracle() {
        // Oracle: rasterize the same disk, count area and boundary edges
        // directly, evaluate 2·sqrt(πA)/P.
        let g = disk_grid(32, 10.0);
        let fv = shape_features(&g);
        let mut mask = Mask::empty(32, 32);
        let c = 15.5;
        for y in 0..32 {
            for x in 0..32 {
                let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
                if d <= 10.0 {
                    mask.set(y, x, true);
                }
            }
        }
        let area = mask.count() as f64;
        let mut edges = 0.0;
        for y in 0..32i64 {
            for x in 0..32i64 {
                if !mask.at(y as usize, x as usize) {
                    continue;
                }
                for (dy, dx) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                    let yy = y + dy;
                    let xx = x + dx;
                    if yy < 0 || xx < 0 || yy >= 32 || xx >= 32 || !mask.at(yy as usize, xx as usize)
                    {
                        edges += 1.0;
                    }
                }
            }
        }
        let oracle_sph = 2.0 * (std::f64::consts::PI * area).sqrt() / edges;
        assert!(
            (fv.get("sphericity").unwrap() - oracle_sph).abs() < 1e-12,
            "impl {} oracle {}",
            fv.get("sphericity").unwrap(),
            oracle_sph
        );
        // Frozen oracle value for the r=10 digital disk under the
        // boundary-edge perimeter: the Manhattan perimeter of a convex
        // digital set is 2(w+h) = 80 here, well above the smooth-circle
        // circumference, so sphericity sits near 0.788 rather than 1.
        assert!((oracle_sph - 0.7877).abs() < 5e-3, "oracle {oracle_sph}");
        assert!(
            (fv.get("spherical_disproportion").unwrap() - 1.0 / oracle_sph).abs() < 1e-12
        );
        // Near-isotropic component.
        assert!(fv.get("elongation").unwrap() > 0.95);
    }

    #[test]
    fn shape_line_elongation() {
        // 1x20 line embedded in a 24x24 map.
        let mut g = Grid::zeros(24, 24);
        for x in 2..22 {
            g.set(12, x, 1.0);
        }
        let fv = shape_features(&g);
        assert!(fv.get("elongation").unwrap() <= 0.25);
        assert!(!fv.degenerate);
    }

    #[test]
    fn shape_empty_foreground_degenerate() {
        // Otsu on a constant map yields empty foreground (nothing strictly
        // above the threshold).
        let g = Grid::filled(8, 8, 0.5);
        let fv = shape_features(&g);
        assert!(fv.degenerate);
        assert_eq!(fv.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mask_invariant_to_positive_scaling() {
        let g = random_grid(16, 16, 77);
        let mut scaled = g.clone();
        for v in scaled.values_mut() {
            *v *= 12.0;
        }
        assert_eq!(otsu_binarize(&g), otsu_binarize(&scaled));
    }

    // ---- borda ----------------------------------------------------------

    #[test]
    fn borda_dominating_sample() {
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let matrix = vec![
            vec![9.0, 9.0, 9.0],
            vec![1.0, 2.0, 3.0],
            vec![2.0, 1.0, 2.0],
            vec![3.0, 3.0, 1.0],
        ];
        let r = borda_rank(&ids, &matrix, &[1, 1, 1]).unwrap();
        assert_eq!(r.rank_sums[0], 3); // rank 1 in all K=3 features
        assert_eq!(r.sorted_ids[0], "s0");
    }

    #[test]
    fn borda_tie_break_by_id() {
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let matrix = vec![vec![3.0, 1.0], vec![2.0, 2.0], vec![1.0, 3.0]];
        let r = borda_rank(&ids, &matrix, &[1, 1]).unwrap();
        assert_eq!(r.rank_sums, vec![4, 4, 4]);
        assert_eq!(r.sorted_ids, vec!["s0", "s1", "s2"]);
    }

    #[test]
    fn borda_matches_brute_force() {
        let mut rng = crate::rng::rng_for(8, "borda", 0);
        for _ in 0..20 {
            let n = 5;
            let k = 3;
            let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let matrix: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let dirs = vec![1i8, -1, 1];
            let r = borda_rank(&ids, &matrix, &dirs).unwrap();
            // Brute force: per column, sort and assign ranks, then sum.
            let mut sums = vec![0usize; n];
            for f in 0..k {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| {
                    let va = dirs[f] as f64 * matrix[a][f];
                    let vb = dirs[f] as f64 * matrix[b][f];
                    vb.partial_cmp(&va).unwrap().then(ids[a].cmp(&ids[b]))
                });
                for (rank0, &s) in idx.iter().enumerate() {
                    sums[s] += rank0 + 1;
                }
            }
            assert_eq!(r.rank_sums, sums);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sums[a].cmp(&sums[b]).then(ids[a].cmp(&ids[b])));
            let want: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
            assert_eq!(r.sorted_ids, want);
        }
    }

    #[test]
    fn borda_rejects_nan() {
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let matrix = vec![vec![1.0, f64::NAN], vec![2.0, 3.0]];
        match borda_rank(&ids, &matrix, &[1, 1]) {
            Err(Error::NanFeature { sample, feature }) => {
                assert_eq!(sample, "a");
                assert_eq!(feature, "1");
            }
            other => panic!("expected NanFeature, got {other:?}"),
        }
    }

    #[test]
    fn borda_per_feature_ranks_are_permutations() {
        let ids: Vec<String> = (0..6).map(|i| format!("s{i}")).collect();
        let mut rng = crate::rng::rng_for(9, "borda-perm", 0);
        let matrix: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let r = borda_rank(&ids, &matrix, &[1, 1, -1, 1]).unwrap();
        for ranks in &r.per_feature_rank {
            let mut sorted = ranks.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (1..=6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn calibrate_directions_signs() {
        let delta = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let matrix: Vec<Vec<f64>> = delta.iter().map(|&d| vec![d * 2.0, -d, 0.0]).collect();
        let dirs = calibrate_directions(&matrix, &delta);
        assert_eq!(dirs, vec![1, -1, 1]);
    }
}
