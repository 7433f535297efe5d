//! Uniform scoring interface over all sample-selection strategies: Random,
//! Uncertainty (MC-dropout predictive variance), Kurtosis, the three
//! radiomics families fused by Borda count, and Deep Features (autoencoder
//! latent + online random forest), plus the Reversed and Raw-Image ablation
//! modifiers.

use serde::{Deserialize, Serialize};

use crate::deepsel::OnlineForest;
use crate::error::{Error, Result};
use crate::features::{
    borda_rank, first_order_features, glcm_features, kurtosis_score, shape_features,
    FeatureFamily,
};
use crate::grid::Grid;
use crate::nnet::{Autoencoder, Classifier};
use crate::rng::{derive_seed, rng_for};
use crate::saliency::{self, SaliencyMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Uncertainty,
    Kurtosis,
    #[serde(rename = "pyrad_1st")]
    Pyrad1st,
    PyradGlcm,
    PyradShape,
    DeepFeatures,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Uncertainty => "uncertainty",
            StrategyKind::Kurtosis => "kurtosis",
            StrategyKind::Pyrad1st => "pyrad_1st",
            StrategyKind::PyradGlcm => "pyrad_glcm",
            StrategyKind::PyradShape => "pyrad_shape",
            StrategyKind::DeepFeatures => "deep_features",
        }
    }

    /// Does this strategy score saliency maps (or raw images under the
    /// ablation modifier)?
    pub fn uses_maps(&self) -> bool {
        !matches!(self, StrategyKind::Random | StrategyKind::Uncertainty)
    }
}

/// Strategy identity: base scorer plus ablation modifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyId {
    pub kind: StrategyKind,
    #[serde(default)]
    pub reversed: bool,
    #[serde(default)]
    pub on_raw_image: bool,
}

impl StrategyId {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyId {
            kind,
            reversed: false,
            on_raw_image: false,
        }
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        if self.on_raw_image {
            s.push_str("-image");
        }
        if self.reversed {
            s.push_str("-reversed");
        }
        s
    }
}

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// How per-pixel uncertainties are accumulated into a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyAgg {
    #[default]
    Sum,
    Mean,
}

/// Pre-built context a strategy may need: the AE+forest pair for deep
/// features and the calibrated Borda directions for the GLCM/shape families.
pub struct ScoreContext<'a> {
    pub saliency_method: SaliencyMethod,
    /// MC-dropout sample count for the uncertainty baseline.
    pub mc_samples: usize,
    /// Seed for the random strategy (scores are keyed by image id).
    pub random_seed: u64,
    pub uncertainty_agg: UncertaintyAgg,
    pub autoencoder: Option<&'a Autoencoder>,
    pub forest: Option<&'a OnlineForest>,
    /// Calibrated directions per feature family (glcm, shape2d).
    pub glcm_directions: Option<Vec<i8>>,
    pub shape_directions: Option<Vec<i8>>,
}

impl Default for ScoreContext<'_> {
    fn default() -> Self {
        ScoreContext {
            saliency_method: SaliencyMethod::DeepTaylor,
            mc_samples: 20,
            random_seed: 0,
            uncertainty_agg: UncertaintyAgg::Sum,
            autoencoder: None,
            forest: None,
            glcm_directions: None,
            shape_directions: None,
        }
    }
}

/// Per-sample informativeness scores under one strategy. Entries keep pool
/// order; the total order used for selection is (score desc, id asc).
#[derive(Clone, Debug)]
pub struct ScoreSheet {
    pub strategy: StrategyId,
    pub model_hash: u64,
    pub entries: Vec<(String, f64)>,
}

/// MC-dropout predictive variance:
/// Var ≈ (1/T)Σŷ² − ((1/T)Σŷ)² + (1/T)Σσ̂².
///
/// The epistemic part is evaluated in shifted form (moments around the first
/// sample, clamped at 0) — algebraically identical, and T identical samples
/// score exactly zero instead of picking up cancellation dust.
pub fn mc_dropout_variance(samples: &[(f64, f64)]) -> f64 {
    let t = samples.len() as f64;
    let c = samples[0].0;
    let sum_d: f64 = samples.iter().map(|(y, _)| y - c).sum();
    let sum_d2: f64 = samples.iter().map(|(y, _)| (y - c) * (y - c)).sum();
    let epistemic = ((sum_d2 - sum_d * sum_d / t) / t).max(0.0);
    let aleatoric = samples.iter().map(|(_, s)| s).sum::<f64>() / t;
    epistemic + aleatoric
}

/// Score every pool image under a strategy. Scoring never touches hidden
/// labels: the pool is (id, pixels) only.
pub fn score_pool(
    strategy: StrategyId,
    model: &Classifier,
    pool: &[(String, Grid)],
    ctx: &ScoreContext,
) -> Result<ScoreSheet> {
    let model_hash = model.params_hash();
    let ids: Vec<String> = pool.iter().map(|(id, _)| id.clone()).collect();

    // The scored surface: saliency map of the predicted class, or the raw
    // image under the -image ablation.
    let surface = |image: &Grid, id: &str| -> Result<Grid> {
        if strategy.on_raw_image {
            Ok(image.clone())
        } else {
            let class = model.predicted_class(image)?;
            Ok(saliency::compute(ctx.saliency_method, model, image, id, class)?.values)
        }
    };

    let scores: Vec<f64> = match strategy.kind {
        StrategyKind::Random => pool
            .iter()
            .map(|(id, _)| {
                let mut rng =
                    rng_for(ctx.random_seed, "random-score", derive_seed(0, id, 0));
                rng.random_range(0.0..1.0)
            })
            .collect(),
        StrategyKind::Uncertainty => {
            let mut out = Vec::with_capacity(pool.len());
            for (id, image) in pool {
                let mut rng = rng_for(ctx.random_seed, "mc-dropout", derive_seed(0, id, 0));
                let samples = model.mc_dropout_samples(image, ctx.mc_samples, &mut rng)?;
                let var = mc_dropout_variance(&samples);
                // A single-logit classifier has one output "pixel"; sum and
                // mean coincide. Kept explicit for multi-output models.
                out.push(match ctx.uncertainty_agg {
                    UncertaintyAgg::Sum | UncertaintyAgg::Mean => var,
                });
            }
            out
        }
        StrategyKind::Kurtosis => {
            let mut out = Vec::with_capacity(pool.len());
            for (id, image) in pool {
                out.push(kurtosis_score(&surface(image, id)?));
            }
            out
        }
        StrategyKind::Pyrad1st | StrategyKind::PyradGlcm | StrategyKind::PyradShape => {
            let (family, directions) = match strategy.kind {
                StrategyKind::Pyrad1st => (FeatureFamily::FirstOrder, vec![1i8, 1, 1, 1]),
                StrategyKind::PyradGlcm => (
                    FeatureFamily::Glcm,
                    ctx.glcm_directions.clone().ok_or_else(|| {
                        Error::Config("pyrad_glcm needs calibrated directions".into())
                    })?,
                ),
                _ => (
                    FeatureFamily::Shape2d,
                    ctx.shape_directions.clone().ok_or_else(|| {
                        Error::Config("pyrad_shape needs calibrated directions".into())
                    })?,
                ),
            };
            let mut matrix = Vec::with_capacity(pool.len());
            for (id, image) in pool {
                let s = surface(image, id)?;
                let fv = match family {
                    FeatureFamily::FirstOrder => first_order_features(&s),
                    FeatureFamily::Glcm => glcm_features(&s)?,
                    FeatureFamily::Shape2d => shape_features(&s),
                };
                // The -inf kurtosis sentinel never reaches Borda: first-order
                // vectors carry a finite degenerate value by contract.
                matrix.push(fv.values);
            }
            let ranking = borda_rank(&ids, &matrix, &directions)?;
            // Lower rank sums are more informative.
            ranking.rank_sums.iter().map(|&r| -(r as f64)).collect()
        }
        StrategyKind::DeepFeatures => {
            let ae = ctx
                .autoencoder
                .ok_or_else(|| Error::Config("deep_features needs a trained autoencoder".into()))?;
            let forest = ctx
                .forest
                .ok_or_else(|| Error::Config("deep_features needs a trained forest".into()))?;
            let mut out = Vec::with_capacity(pool.len());
            for (id, image) in pool {
                let latent = ae.encode(&surface(image, id)?);
                // Lower expected level = more informative.
                out.push(-forest.predict(&latent));
            }
            out
        }
    };

    Ok(ScoreSheet {
        strategy,
        model_hash,
        entries: ids.into_iter().zip(scores).collect(),
    })
}

/// Total order of a sheet: descending score, ties ascending id.
pub fn total_order(sheet: &ScoreSheet) -> Vec<(String, f64)> {
    let mut entries = sheet.entries.clone();
    entries.sort_by(|(ida, sa), (idb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ida.cmp(idb))
    });
    entries
}

/// Top-n selection: the first n of the total order, or — reversed — the
/// exact reverse of the order's bottom n (least informative first).
/// n larger than the pool clamps with a warning to the log.
pub fn select_top_n(sheet: &ScoreSheet, n: usize, reversed: bool) -> Vec<String> {
    let order = total_order(sheet);
    let n = if n > order.len() {
        eprintln!(
            "warning: requested {n} samples from a pool of {}; clamping",
            order.len()
        );
        order.len()
    } else {
        n
    };
    if reversed {
        order
            .iter()
            .rev()
            .take(n)
            .map(|(id, _)| id.clone())
            .collect()
    } else {
        order.iter().take(n).map(|(id, _)| id.clone()).collect()
    }
}

/// Write a score sheet as CSV (id, score, rank).
pub fn write_scoresheet_csv(sheet: &ScoreSheet, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "id,score,rank")?;
    for (rank0, (id, score)) in total_order(sheet).iter().enumerate() {
        writeln!(f, "{id},{score},{}", rank0 + 1)?;
    }
    Ok(())
}

use rand::Rng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn pool(n: usize, seed: u64) -> Vec<(String, Grid)> {
        let mut rng = rng_for(seed, "pool", 0);
        (0..n)
            .map(|i| {
                let data = (0..16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
                (
                    format!("img-{i:03}"),
                    Grid::from_vec(16, 16, data).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn uncertainty_zero_variance_scores_zero() {
        // All T samples equal with σ̂ = 0 → exactly 0.
        let samples = vec![(0.7, 0.0); 20];
        assert_eq!(mc_dropout_variance(&samples), 0.0);
    }

    #[test]
    fn uncertainty_half_half_quarter() {
        // ŷ_t ∈ {0, 1} half each, σ̂²_t = 0 → Var = 0.25 exactly.
        let mut samples = vec![(0.0, 0.0); 10];
        samples.extend(vec![(1.0, 0.0); 10]);
        assert!((mc_dropout_variance(&samples) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_direct_arithmetic_oracle() {
        let mut rng = rng_for(3, "unc", 0);
        for _ in 0..20 {
            let samples: Vec<(f64, f64)> = (0..20)
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..0.2)))
                .collect();
            let got = mc_dropout_variance(&samples);
            // Straight-line recomputation of the same shifted evaluation.
            let t = samples.len() as f64;
            let c = samples[0].0;
            let sum_d: f64 = samples.iter().map(|(y, _)| y - c).sum();
            let sum_d2: f64 = samples.iter().map(|(y, _)| (y - c) * (y - c)).sum();
            let sum_s2: f64 = samples.iter().map(|(_, s)| s).sum();
            let want = ((sum_d2 - sum_d * sum_d / t) / t).max(0.0) + sum_s2 / t;
            assert_eq!(got, want);
            // And agreement with the raw-moment form up to roundoff.
            let sum_y: f64 = samples.iter().map(|(y, _)| y).sum();
            let sum_y2: f64 = samples.iter().map(|(y, _)| y * y).sum();
            let raw = sum_y2 / t - (sum_y / t) * (sum_y / t) + sum_s2 / t;
            assert!((got - raw).abs() < 1e-12);
        }
    }

    #[test]
    fn random_strategy_deterministic_and_order_free() {
        let model = Classifier::new(16, 0.0, true, 1);
        let p = pool(8, 2);
        let ctx = ScoreContext {
            random_seed: 42,
            ..ScoreContext::default()
        };
        let s1 = score_pool(StrategyId::new(StrategyKind::Random), &model, &p, &ctx).unwrap();
        let s2 = score_pool(StrategyId::new(StrategyKind::Random), &model, &p, &ctx).unwrap();
        assert_eq!(s1.entries, s2.entries);
        // Permuting the pool leaves per-id scores unchanged.
        let mut shuffled = p.clone();
        shuffled.reverse();
        let s3 =
            score_pool(StrategyId::new(StrategyKind::Random), &model, &shuffled, &ctx).unwrap();
        for (id, score) in &s1.entries {
            let other = s3.entries.iter().find(|(i, _)| i == id).unwrap().1;
            assert_eq!(*score, other);
        }
    }

    #[test]
    fn select_top_n_cases() {
        let sheet = ScoreSheet {
            strategy: StrategyId::new(StrategyKind::Random),
            model_hash: 0,
            entries: vec![
                ("a".into(), 3.0),
                ("b".into(), 1.0),
                ("c".into(), 2.0),
            ],
        };
        assert_eq!(select_top_n(&sheet, 2, false), vec!["a", "c"]);
        assert_eq!(select_top_n(&sheet, 2, true), vec!["b", "c"]);
        // n = pool size: the whole ranking.
        assert_eq!(select_top_n(&sheet, 3, false), vec!["a", "c", "b"]);
        // n beyond the pool clamps.
        assert_eq!(select_top_n(&sheet, 5, false).len(), 3);
    }

    #[test]
    fn reversed_is_reverse_of_bottom_n() {
        let mut rng = rng_for(9, "rev", 0);
        let entries: Vec<(String, f64)> = (0..12)
            .map(|i| (format!("s{i:02}"), (rng.random_range(0..5) as f64)))
            .collect();
        let sheet = ScoreSheet {
            strategy: StrategyId::new(StrategyKind::Kurtosis),
            model_hash: 0,
            entries,
        };
        for n in [1usize, 3, 7, 12] {
            let rev = select_top_n(&sheet, n, true);
            let order = total_order(&sheet);
            let bottom: Vec<String> = order[order.len() - n..]
                .iter()
                .map(|(id, _)| id.clone())
                .collect();
            let want: Vec<String> = bottom.into_iter().rev().collect();
            assert_eq!(rev, want);
        }
    }

    #[test]
    fn select_invariant_under_monotone_rescaling() {
        let entries: Vec<(String, f64)> = (0..10)
            .map(|i| (format!("s{i}"), (i as f64 * 0.37).sin() + 1.5))
            .collect();
        let sheet = ScoreSheet {
            strategy: StrategyId::new(StrategyKind::Kurtosis),
            model_hash: 0,
            entries: entries.clone(),
        };
        let rescaled = ScoreSheet {
            strategy: sheet.strategy,
            model_hash: 0,
            entries: entries
                .iter()
                .map(|(id, s)| (id.clone(), s.exp() * 4.0))
                .collect(),
        };
        assert_eq!(
            select_top_n(&sheet, 4, false),
            select_top_n(&rescaled, 4, false)
        );
    }

    #[test]
    fn deep_features_without_context_is_config_error() {
        let model = Classifier::new(16, 0.0, true, 1);
        let p = pool(4, 3);
        let ctx = ScoreContext::default();
        match score_pool(StrategyId::new(StrategyKind::DeepFeatures), &model, &p, &ctx) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn saliency_strategies_score_all_and_are_deterministic() {
        let model = Classifier::new(16, 0.2, true, 5);
        let p = pool(6, 7);
        let ctx = ScoreContext {
            random_seed: 1,
            glcm_directions: Some(vec![1, 1, 1, 1]),
            shape_directions: Some(vec![1, 1, 1]),
            ..ScoreContext::default()
        };
        for kind in [
            StrategyKind::Uncertainty,
            StrategyKind::Kurtosis,
            StrategyKind::Pyrad1st,
            StrategyKind::PyradGlcm,
            StrategyKind::PyradShape,
        ] {
            let a = score_pool(StrategyId::new(kind), &model, &p, &ctx).unwrap();
            let b = score_pool(StrategyId::new(kind), &model, &p, &ctx).unwrap();
            assert_eq!(a.entries.len(), 6);
            assert_eq!(a.entries, b.entries, "{kind:?}");
        }
    }

    #[test]
    fn raw_image_modifier_changes_surface() {
        let model = Classifier::new(16, 0.0, true, 6);
        let p = pool(5, 11);
        let ctx = ScoreContext::default();
        let on_map =
            score_pool(StrategyId::new(StrategyKind::Kurtosis), &model, &p, &ctx).unwrap();
        let mut id = StrategyId::new(StrategyKind::Kurtosis);
        id.on_raw_image = true;
        let on_raw = score_pool(id, &model, &p, &ctx).unwrap();
        assert_ne!(
            on_map.entries.iter().map(|(_, s)| *s).collect::<Vec<_>>(),
            on_raw.entries.iter().map(|(_, s)| *s).collect::<Vec<_>>()
        );
    }
}
