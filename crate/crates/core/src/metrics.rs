//! Evaluation primitives: ROC AUC, nDCG ranking agreement, common-sample
//! overlap, and the paired t-test.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Trapezoidal ROC AUC with midrank tie handling (equivalent to
/// Mann–Whitney U / (n₊·n₋)).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", scores.len()),
            got: format!("{} labels", labels.len()),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "roc_auc requires both classes present".into(),
        ));
    }
    // Midranks: sort by score, average ranks over tied groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank.
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Relevance of the item at 1-based `position` in the reference ranking:
/// 5.5 for the first, stepping down by 0.5, floored at 1 (positions beyond
/// rank 10 all carry relevance 1).
pub fn reference_relevance(position: usize) -> f64 {
    (5.5 - 0.5 * (position as f64 - 1.0)).max(1.0)
}

/// Normalized discounted cumulative gain of `candidate` against `reference`
/// over the first `p` candidate positions.
///
/// Both rankings must order the same id set. The reference assigns each id a
/// relevance by its reference position; DCG_p = Σ (2^rel − 1)/log2(i+1) over
/// the candidate prefix, and IDCG_p is the reference's own DCG.
pub fn ndcg(candidate: &[String], reference: &[String], p: usize) -> Result<f64> {
    if candidate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} ids", reference.len()),
            got: format!("{} ids", candidate.len()),
        });
    }
    if p == 0 || p > reference.len() {
        return Err(Error::invalid("p", "must satisfy 1 <= p <= set size"));
    }
    let mut rel: HashMap<&str, f64> = HashMap::with_capacity(reference.len());
    for (i, id) in reference.iter().enumerate() {
        if rel.insert(id.as_str(), reference_relevance(i + 1)).is_some() {
            return Err(Error::invalid("reference", format!("duplicate id `{id}`")));
        }
    }
    let mut dcg = 0.0;
    let mut seen = HashSet::new();
    for (i, id) in candidate.iter().take(p).enumerate() {
        let r = *rel.get(id.as_str()).ok_or_else(|| {
            Error::invalid("candidate", format!("id `{id}` missing from reference"))
        })?;
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid("candidate", format!("duplicate id `{id}`")));
        }
        dcg += (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2();
    }
    let mut idcg = 0.0;
    for i in 0..p {
        idcg += (2f64.powf(reference_relevance(i + 1)) - 1.0) / ((i + 2) as f64).log2();
    }
    Ok(dcg / idcg)
}

/// Fraction of samples common to all selection sets, relative to the
/// per-increment batch size.
pub fn overlap_fraction(sets: &[HashSet<String>]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(Error::invalid("sets", "need at least two selection sets"));
    }
    let batch = sets.iter().map(|s| s.len()).max().unwrap();
    if batch == 0 {
        return Ok(1.0);
    }
    let mut inter: HashSet<&String> = sets[0].iter().collect();
    for s in &sets[1..] {
        inter.retain(|id| s.contains(*id));
    }
    Ok(inter.len() as f64 / batch as f64)
}

/// Two-sided paired t-test p-value (Student t with n−1 dof).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pairs", a.len()),
            got: format!("{} pairs", b.len()),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("paired t-test needs n >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var <= 0.0 {
        return Err(Error::UndefinedMetric(
            "paired t-test: zero variance of differences".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let dof = (n - 1) as f64;
    Ok(student_t_two_sided_p(t, dof))
}

/// Two-sided p-value for a Student-t statistic.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    // P(|T| >= |t|) = I_x(dof/2, 1/2)
    incomplete_beta_reg(dof / 2.0, 0.5, x)
}

/// Regularized incomplete beta function I_x(a, b) via the Lentz continued
/// fraction.
pub fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos log-gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_5e-2,
        -0.539_523_938_495_3e-5,
        2.506_628_274_631_000_5,
    ];
    let mut ser = 1.000_000_000_190_015;
    let mut tmp = x + 5.5;
    tmp -= (x + 0.5) * tmp.ln();
    for (j, g) in G.iter().take(6).enumerate() {
        ser += g / (x + 1.0 + j as f64);
    }
    -tmp + (G[6] * ser / x).ln()
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = midranks(xs);
    let ry = midranks(ys);
    pearson(&rx, &ry)
}

fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
