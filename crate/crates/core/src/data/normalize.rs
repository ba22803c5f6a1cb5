use serde::{Deserialize, Serialize};

use super::EngineRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    MinMax,
    ZScore,
}

impl std::str::FromStr for NormKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minmax" => Ok(NormKind::MinMax),
            "zscore" => Ok(NormKind::ZScore),
            other => Err(format!("unknown normalization '{other}' (expected minmax or zscore)")),
        }
    }
}

/// Per-channel statistics: `(min, max)` for min-max, `(mean, stddev)` for z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: NormKind,
    pub features: Vec<FeatureStats>,
    /// Statistics of the RUL channel when it was normalized too.
    pub rul: Option<FeatureStats>,
}

impl Scaler {
    fn map(&self, stats: FeatureStats, v: f64) -> f64 {
        match self.kind {
            NormKind::MinMax => {
                let range = stats.hi - stats.lo;
                if range > 0.0 {
                    (v - stats.lo) / range
                } else {
                    0.0
                }
            }
            NormKind::ZScore => {
                if stats.hi > 0.0 {
                    (v - stats.lo) / stats.hi
                } else {
                    0.0
                }
            }
        }
    }

    fn unmap(&self, stats: FeatureStats, v: f64) -> f64 {
        match self.kind {
            NormKind::MinMax => stats.lo + v * (stats.hi - stats.lo),
            NormKind::ZScore => stats.lo + v * stats.hi,
        }
    }

    /// Applies the fitted statistics to other runs (e.g. a test split).
    pub fn transform(&self, runs: &[EngineRun]) -> Vec<EngineRun> {
        runs.iter()
            .map(|run| {
                let mut out = run.clone();
                let cols = out.features.cols();
                assert_eq!(cols, self.features.len(), "scaler feature count");
                for (k, v) in out.features.as_mut_slice().iter_mut().enumerate() {
                    *v = self.map(self.features[k % cols], *v);
                }
                if let (Some(stats), Some(rul)) = (self.rul, out.rul.as_mut()) {
                    rul.iter_mut().for_each(|v| *v = self.map(stats, *v));
                }
                out
            })
            .collect()
    }

    /// Maps a normalized RUL value back to cycles.
    pub fn inverse_rul(&self, v: f64) -> Option<f64> {
        self.rul.map(|stats| self.unmap(stats, v))
    }
}

fn column_stats(runs: &[EngineRun], col_fn: impl Fn(&[f64]) -> FeatureStats) -> Vec<FeatureStats> {
    let q = runs.first().map_or(0, EngineRun::num_features);
    (0..q)
        .map(|j| {
            let column: Vec<f64> = runs.iter().flat_map(|r| r.features.column(j)).collect();
            col_fn(&column)
        })
        .collect()
}

fn min_max(values: &[f64]) -> FeatureStats {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    FeatureStats { lo, hi }
}

fn mean_std(values: &[f64]) -> FeatureStats {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    FeatureStats {
        lo: mean,
        hi: var.sqrt(),
    }
}

/// Min-max scales every feature of `runs` into `[0, 1]` using their own
/// statistics. Constant features map to 0. With `include_rul` the RUL channel
/// is scaled by the same rule.
pub fn fit_transform_minmax(runs: &[EngineRun], include_rul: bool) -> (Vec<EngineRun>, Scaler) {
    let rul = if include_rul {
        let all: Vec<f64> = runs.iter().filter_map(|r| r.rul.as_ref()).flatten().copied().collect();
        (!all.is_empty()).then(|| min_max(&all))
    } else {
        None
    };
    let scaler = Scaler {
        kind: NormKind::MinMax,
        features: column_stats(runs, min_max),
        rul,
    };
    (scaler.transform(runs), scaler)
}

/// Standardizes every feature to zero mean and unit population variance.
/// Constant features map to 0.
pub fn fit_transform_zscore(runs: &[EngineRun]) -> (Vec<EngineRun>, Scaler) {
    let scaler = Scaler {
        kind: NormKind::ZScore,
        features: column_stats(runs, mean_std),
        rul: None,
    };
    (scaler.transform(runs), scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn single_column(values: &[f64]) -> Vec<EngineRun> {
        vec![EngineRun::new(1, Matrix::from_vec(values.len(), 1, values.to_vec()))]
    }

    fn column(runs: &[EngineRun]) -> Vec<f64> {
        runs.iter().flat_map(|r| r.features.column(0)).collect()
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let (out, scaler) = fit_transform_minmax(&single_column(&[2.0, 4.0, 6.0]), false);
        assert_eq!(column(&out), vec![0.0, 0.5, 1.0]);
        assert_eq!(scaler.features[0], FeatureStats { lo: 2.0, hi: 6.0 });
    }

    #[test]
    fn constant_columns_become_zero() {
        let (out, _) = fit_transform_minmax(&single_column(&[3.0, 3.0, 3.0]), false);
        assert_eq!(column(&out), vec![0.0; 3]);
        let (out, _) = fit_transform_zscore(&single_column(&[3.0, 3.0, 3.0]));
        assert_eq!(column(&out), vec![0.0; 3]);
    }

    #[test]
    fn zscore_uses_population_variance() {
        let (out, _) = fit_transform_zscore(&single_column(&[1.0, 2.0, 3.0]));
        let expected = (1.5f64).sqrt();
        let got = column(&out);
        assert!((got[0] + expected).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
        assert!((got[2] - expected).abs() < 1e-12);
        assert!((expected - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn rul_channel_scaled_when_requested() {
        let mut runs = single_column(&[0.0, 1.0, 2.0]);
        runs[0].rul = Some(vec![2.0, 1.0, 0.0]);
        let (out, scaler) = fit_transform_minmax(&runs, true);
        assert_eq!(out[0].rul.as_deref(), Some(&[1.0, 0.5, 0.0][..]));
        assert_eq!(scaler.inverse_rul(0.5), Some(1.0));
        let (out, scaler) = fit_transform_minmax(&runs, false);
        assert_eq!(out[0].rul.as_deref(), Some(&[2.0, 1.0, 0.0][..]));
        assert_eq!(scaler.inverse_rul(0.5), None);
    }

    #[test]
    fn statistics_are_per_dataset() {
        let a = single_column(&[0.0, 10.0]);
        let b = single_column(&[100.0, 200.0]);
        let (_, sa) = fit_transform_minmax(&a, false);
        let (_, sb) = fit_transform_minmax(&b, false);
        assert_eq!(sa.features[0], FeatureStats { lo: 0.0, hi: 10.0 });
        assert_eq!(sb.features[0], FeatureStats { lo: 100.0, hi: 200.0 });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn runs_strategy() -> impl Strategy<Value = Vec<EngineRun>> {
            prop::collection::vec(
                (1usize..12).prop_flat_map(|len| prop::collection::vec(-1e3f64..1e3, len * 3)),
                1..4,
            )
            .prop_map(|blocks| {
                blocks
                    .into_iter()
                    .enumerate()
                    .map(|(u, data)| EngineRun::new(u as u32 + 1, Matrix::from_vec(data.len() / 3, 3, data)))
                    .collect()
            })
        }

        fn max_diff(a: &[EngineRun], b: &[EngineRun]) -> f64 {
            a.iter()
                .zip(b)
                .flat_map(|(x, y)| x.features.as_slice().iter().zip(y.features.as_slice()).map(|(p, q)| (p - q).abs()))
                .fold(0.0, f64::max)
        }

        proptest! {
            #[test]
            fn minmax_is_idempotent(runs in runs_strategy()) {
                let (once, _) = fit_transform_minmax(&runs, false);
                let (twice, _) = fit_transform_minmax(&once, false);
                prop_assert!(max_diff(&once, &twice) < 1e-12);
            }

            #[test]
            fn zscore_is_idempotent_and_standardized(runs in runs_strategy()) {
                let (once, _) = fit_transform_zscore(&runs);
                let (twice, s2) = fit_transform_zscore(&once);
                prop_assert!(max_diff(&once, &twice) < 1e-12);
                for st in &s2.features {
                    prop_assert!(st.lo.abs() < 1e-10);
                    prop_assert!(st.hi == 0.0 || (st.hi * st.hi - 1.0).abs() < 1e-8);
                }
            }
        }
    }
}
