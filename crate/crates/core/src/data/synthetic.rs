//! Seeded two-domain degradation data with a known, controllable shift.
//!
//! Every unit follows a latent health index `exp(-(T_i - t) / τ_j)` that rises
//! towards failure. Sensors respond to it linearly with per-feature gain,
//! offset and noise that are shared by both domains; units are drawn
//! independently per domain. The target domain then passes a block of
//! "shifted" sensors through `scale · x + offset + noise · ε`.
//!
//! Shifted sensors are cleaner than the rest, so a regressor trained on the
//! source leans on exactly the channels that change across domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DomainDataset, EngineRun, DEFAULT_R_E};
use crate::linalg::{jacobi_eigh, matmul, matmul_nt, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    pub feature_offset: f64,
    pub feature_scale: f64,
    /// Stddev of extra Gaussian noise on the shifted target sensors.
    pub noise: f64,
    /// How many sensors (counted from the last column) the shift touches.
    pub shifted_features: usize,
}

impl ShiftConfig {
    pub fn identity() -> Self {
        Self {
            feature_offset: 0.0,
            feature_scale: 1.0,
            noise: 0.0,
            shifted_features: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.shifted_features == 0
            || (self.feature_offset == 0.0 && self.feature_scale == 1.0 && self.noise == 0.0)
    }

    /// Half of the sensors mirrored and offset in the target domain. The
    /// mirroring survives per-dataset min-max scaling, unlike a plain
    /// positive affine map.
    pub fn sensor_inversion(q: usize) -> Self {
        Self {
            feature_offset: 0.5,
            feature_scale: -1.0,
            noise: 0.0,
            shifted_features: sensor_count(q) / 2,
        }
    }
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Units per domain.
    pub n_units: usize,
    /// Inclusive range of run lengths.
    pub t_range: (usize, usize),
    pub q: usize,
    pub shift: ShiftConfig,
    /// RUL ceiling used to label both domains.
    pub r_e: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_units: 40,
            t_range: (120, 180),
            q: 24,
            shift: ShiftConfig::identity(),
            r_e: DEFAULT_R_E,
        }
    }
}

fn settings_count(q: usize) -> usize {
    if q >= 6 {
        3
    } else {
        0
    }
}

fn sensor_count(q: usize) -> usize {
    q - settings_count(q)
}

struct SensorModel {
    base: f64,
    gain: f64,
    tau: f64,
    noise: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates labelled source and target datasets (raw, unnormalized).
pub fn gen_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(DomainDataset, DomainDataset), DataError> {
    let SyntheticConfig {
        n_units,
        t_range: (t_min, t_max),
        q,
        shift,
        r_e,
    } = *config;
    if q < 2 {
        return Err(DataError::Invalid(format!("q must be at least 2, got {q}")));
    }
    if n_units < 4 {
        return Err(DataError::Invalid(format!("need at least 4 units, got {n_units}")));
    }
    if t_min < 2 || t_min > t_max {
        return Err(DataError::Invalid(format!("invalid run-length range {t_min}..={t_max}")));
    }
    if shift.shifted_features > sensor_count(q) {
        return Err(DataError::Invalid(format!(
            "{} shifted sensors requested but only {} exist",
            shift.shifted_features,
            sensor_count(q)
        )));
    }
    if !(shift.noise >= 0.0) || !shift.feature_scale.is_finite() || !shift.feature_offset.is_finite() {
        return Err(DataError::Invalid("shift parameters must be finite and noise non-negative".into()));
    }

    let n_set = settings_count(q);
    let n_sens = q - n_set;
    let first_shifted = q - shift.shifted_features;

    let mut world = ChaCha8Rng::seed_from_u64(seed);
    let sensors: Vec<SensorModel> = (0..n_sens)
        .map(|k| {
            let j = n_set + k;
            let sign = if world.random_bool(0.5) { 1.0 } else { -1.0 };
            let gain = sign * world.random_range(0.5..1.5);
            let clean = j >= q - sensor_count(q) / 2;
            SensorModel {
                base: world.random_range(-1.0..1.0),
                gain,
                tau: world.random_range(20.0..60.0),
                noise: gain.abs() * if clean { 0.03 } else { 0.15 },
            }
        })
        .collect();

    let make_domain = |domain: u64, apply_shift: bool| -> Vec<EngineRun> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(domain + 1)));
        (0..n_units)
            .map(|u| {
                let len = rng.random_range(t_min..=t_max);
                let wear: Vec<f64> = (0..n_sens).map(|_| 0.1 * normal(&mut rng)).collect();
                let mut features = Matrix::zeros(len, q);
                for t in 1..=len {
                    let row = features.row_mut(t - 1);
                    for v in row.iter_mut().take(n_set) {
                        *v = 0.01 * normal(&mut rng);
                    }
                    for (k, s) in sensors.iter().enumerate() {
                        let health = (-((len - t) as f64) / s.tau).exp();
                        let mut x = s.base + wear[k] + s.gain * health + s.noise * normal(&mut rng);
                        let j = n_set + k;
                        if apply_shift && j >= first_shifted {
                            x = shift.feature_scale * x + shift.feature_offset + shift.noise * normal(&mut rng);
                        }
                        row[j] = x;
                    }
                }
                EngineRun::new(u as u32 + 1, features)
            })
            .collect()
    };

    let mut source = DomainDataset::new("synthetic-source", make_domain(0, false));
    let mut target = DomainDataset::new("synthetic-target", make_domain(1, !shift.is_identity()));
    source.label_run_to_failure(r_e)?;
    target.label_run_to_failure(r_e)?;
    Ok((source, target))
}

/// Parameters of [`gen_covariance_shifted`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovShiftConfig {
    pub n_units: usize,
    pub t_range: (usize, usize),
    pub q: usize,
    /// Eigenvalue spread of the target mixing matrix (`1.0` keeps the identity).
    pub spread: f64,
    pub mean_offset: f64,
    pub r_e: f64,
}

impl Default for CovShiftConfig {
    fn default() -> Self {
        Self {
            n_units: 40,
            t_range: (120, 180),
            q: 8,
            spread: 4.0,
            mean_offset: 1.0,
            r_e: DEFAULT_R_E,
        }
    }
}

/// Degradation runs observed through domain-specific linear mixings.
///
/// A unit's latent state has one standardized health coordinate (the clipped
/// normalized RUL plus noise) and `q - 1` unit-variance AR(1) nuisance
/// coordinates. The source observes the latent state directly; the target
/// observes `A h + μ` for a random symmetric positive definite `A` whose
/// eigenvalues span `[1/spread, spread]`. This is the setting in which
/// second-order alignment is exact.
pub fn gen_covariance_shifted(config: &CovShiftConfig, seed: u64) -> Result<(DomainDataset, DomainDataset), DataError> {
    let CovShiftConfig {
        n_units,
        t_range: (t_min, t_max),
        q,
        spread,
        mean_offset,
        r_e,
    } = *config;
    if q < 2 || n_units < 4 || t_min < 2 || t_min > t_max || !(spread >= 1.0) {
        return Err(DataError::Invalid("invalid covariance-shift configuration".into()));
    }
    let mut world = ChaCha8Rng::seed_from_u64(seed);

    // Random orthogonal basis from the eigenvectors of a random symmetric matrix.
    let g = Matrix::from_fn(q, q, |_, _| normal(&mut world));
    let mut sym = g.clone();
    sym.add_scaled(&g.transpose(), 1.0).expect("square");
    let (_, basis) = jacobi_eigh(&sym).map_err(|e| DataError::Invalid(e.to_string()))?;
    let eig: Vec<f64> = (0..q)
        .map(|k| spread.powf(2.0 * k as f64 / (q - 1) as f64 - 1.0))
        .collect();
    let mixing = matmul_nt(&matmul(&basis, &Matrix::from_diag(&eig)).expect("square"), &basis).expect("square");
    let target_mean: Vec<f64> = (0..q).map(|_| mean_offset * normal(&mut world)).collect();

    let latent_runs = |domain: u64| -> Vec<(usize, Matrix)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + domain).wrapping_mul(0xD134_2543_DE82_EF95));
        (0..n_units)
            .map(|_| {
                let len = rng.random_range(t_min..=t_max);
                let mut h = Matrix::zeros(len, q);
                let rho: f64 = 0.9;
                let innov = (1.0 - rho * rho).sqrt();
                let mut ar: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
                for t in 1..=len {
                    let rul = ((len - t) as f64).min(r_e) / r_e;
                    // Clipped-ramp RUL has mean ≈ 0.6 and stddev ≈ 0.33 for these lengths.
                    h[(t - 1, 0)] = ((rul - 0.6) / 0.33) * 0.95 + 0.3 * normal(&mut rng);
                    for k in 1..q {
                        ar[k] = rho * ar[k] + innov * normal(&mut rng);
                        h[(t - 1, k)] = ar[k];
                    }
                }
                (len, h)
            })
            .collect()
    };

    let to_runs = |latent: Vec<(usize, Matrix)>, mix: Option<(&Matrix, &[f64])>| -> Result<Vec<EngineRun>, DataError> {
        latent
            .into_iter()
            .enumerate()
            .map(|(u, (_, h))| {
                let features = match mix {
                    None => h,
                    Some((a, mu)) => {
                        let mut x = matmul_nt(&h, a).expect("shapes");
                        for t in 0..x.rows() {
                            for (v, m) in x.row_mut(t).iter_mut().zip(mu) {
                                *v += m;
                            }
                        }
                        x
                    }
                };
                super::label_rul(&EngineRun::new(u as u32 + 1, features), r_e)
            })
            .collect()
    };

    let source = DomainDataset::new("covshift-source", to_runs(latent_runs(0), None)?);
    let target = DomainDataset::new(
        "covshift-target",
        to_runs(latent_runs(1), Some((&mixing, &target_mean)))?,
    );
    Ok((source, target))
}
