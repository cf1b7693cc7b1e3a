//! Virtual patient: 3-compartment drug kinetics, effect-site link, Hill
//! response, noisy measurement, and randomized patient sampling.
//!
//! State is drug *amount* per compartment (mg). One discrete step covers
//! `delta_t` seconds; full infusion over a step delivers
//! `delta_t * MAX_INFUSION_MG_PER_S` mg into the central compartment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schnider::{self, RateConstants};

/// Maximum infusion rate [mg/s]; the policy's action scales it.
pub const MAX_INFUSION_MG_PER_S: f64 = 1.67;

/// Step duration [s] used throughout the workbench.
pub const DEFAULT_DELTA_T_S: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientDemographics {
    pub age_years: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub sex: Sex,
}

impl PatientDemographics {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("age", self.age_years),
            ("height", self.height_cm),
            ("weight", self.weight_kg),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "demographic {name} = {v} must be finite and positive"
                )));
            }
        }
        Ok(())
    }
}

/// One virtual patient: demographics plus the link/response parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub demographics: PatientDemographics,
    /// Plasma–brain equilibration constant [min⁻¹].
    pub ke0_per_min: f64,
    /// Hill steepness.
    pub gamma: f64,
    /// Effect-site level producing a response of 0.5 (state units, mg).
    pub c50: f64,
}

impl PatientParams {
    pub fn validate(&self) -> Result<()> {
        self.demographics.validate()?;
        for (name, v) in [
            ("ke0", self.ke0_per_min),
            ("gamma", self.gamma),
            ("c50", self.c50),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "patient parameter {name} = {v} must be finite and positive"
                )));
            }
        }
        Ok(())
    }
}

/// Generic value plus sampling range for one patient parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub generic: f64,
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    fn new(generic: f64, min: f64, max: f64) -> Self {
        Self { generic, min, max }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.min.is_nan() || self.max.is_nan() || self.min > self.max {
            return Err(Error::Config(format!(
                "range for {name}: min {} > max {}",
                self.min, self.max
            )));
        }
        if !self.generic.is_finite() || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!("range for {name} contains non-finite values")));
        }
        Ok(())
    }
}

/// Sex assignment policy for randomized patients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexSampling {
    Male,
    Female,
    /// 50/50 draw per patient.
    Random,
}

/// Generic patient column and sampling ranges for the six parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatientRanges {
    pub height: ParamRange,
    pub weight: ParamRange,
    pub age: ParamRange,
    pub ke0: ParamRange,
    pub gamma: ParamRange,
    pub c50: ParamRange,
    /// Sex of the generic patient (the covariate model needs one).
    pub generic_sex: Sex,
    /// Sex assignment when sampling randomized patients.
    pub sampled_sex: SexSampling,
}

impl Default for PatientRanges {
    fn default() -> Self {
        Self {
            height: ParamRange::new(170.0, 160.0, 190.0),
            weight: ParamRange::new(70.0, 50.0, 100.0),
            age: ParamRange::new(30.0, 18.0, 90.0),
            ke0: ParamRange::new(0.17, 0.128, 0.213),
            gamma: ParamRange::new(5.0, 5.0, 9.0),
            c50: ParamRange::new(2.5, 2.0, 6.0),
            generic_sex: Sex::Male,
            sampled_sex: SexSampling::Random,
        }
    }
}

impl PatientRanges {
    pub fn validate(&self) -> Result<()> {
        self.height.validate("height")?;
        self.weight.validate("weight")?;
        self.age.validate("age")?;
        self.ke0.validate("ke0")?;
        self.gamma.validate("gamma")?;
        self.c50.validate("c50")?;
        Ok(())
    }

    /// The generic patient (the `generic` column of every range).
    pub fn generic(&self) -> PatientParams {
        PatientParams {
            demographics: PatientDemographics {
                age_years: self.age.generic,
                height_cm: self.height.generic,
                weight_kg: self.weight.generic,
                sex: self.generic_sex,
            },
            ke0_per_min: self.ke0.generic,
            gamma: self.gamma.generic,
            c50: self.c50.generic,
        }
    }
}

/// Effect-site link transfer-coefficient convention.
///
/// The default `c50` table is calibrated to the `PerSecondRate` effect-site
/// scale (steady state x_e ≈ x₁·α/Δ); with `SteadyState` scaling the same
/// c50 makes one full 5-s dose ≈ 3.3·c50 and tracking in [0.25, 0.75]
/// degenerates into unrecoverable overshoot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkBeta {
    /// β = 1 − α: a constant plasma level is matched by the effect site at
    /// steady state.
    SteadyState,
    /// β = (k_e0/60)·exp(−k_e0·Δ/60): the per-second transfer rate scaled by
    /// the persistence factor. Default.
    PerSecondRate,
}

/// Discretized patient model: per-step transfer matrix, input gain, link
/// coefficients, and the Hill parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePatientModel {
    /// Per-step transfer matrix (row-major 3×3) acting on compartment amounts.
    pub a_matrix: [[f64; 3]; 3],
    /// Per-step input gain: full-rate infusion mass into the central compartment.
    pub b_vector: [f64; 3],
    /// Effect-site persistence per step.
    pub alpha: f64,
    /// Plasma → effect-site transfer per step.
    pub beta: f64,
    pub gamma: f64,
    pub c50: f64,
    pub delta_t_s: f64,
}

impl DiscretePatientModel {
    /// Infused mass [mg] for a unit (full-rate) action over one step.
    pub fn dose_per_step_mg(&self) -> f64 {
        self.b_vector[0]
    }
}

/// Environment state: compartment amounts, effect-site level, step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientState {
    pub x: [f64; 3],
    pub x_e: f64,
    pub k: u64,
}

impl PatientState {
    pub fn zero() -> Self {
        Self { x: [0.0; 3], x_e: 0.0, k: 0 }
    }
}

/// Additive Gaussian measurement noise, clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub noise_variance: f64,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self { noise_variance: 3e-4 }
    }
}

/// Continuous-time rate matrix [s⁻¹] acting on compartment amounts:
/// column sums are −k10/60, 0, 0 (mass leaves only by elimination).
pub fn continuous_rate_matrix_per_s(rates: &RateConstants) -> [[f64; 3]; 3] {
    let k10 = rates.k10 / 60.0;
    let k12 = rates.k12 / 60.0;
    let k13 = rates.k13 / 60.0;
    let k21 = rates.k21 / 60.0;
    let k31 = rates.k31 / 60.0;
    [
        [-(k10 + k12 + k13), k21, k31],
        [k12, -k21, 0.0],
        [k13, 0.0, -k31],
    ]
}

/// Discretize a continuous rate-constant set over one `delta_t` step.
///
/// The transfer matrix is the matrix exponential of `A_c·Δ`, evaluated by a
/// truncated Taylor series with scaling-and-squaring (‖A_c·Δ‖₁ ≲ 0.15 for
/// physiologic rates, so the series reaches machine precision in ~20 terms).
pub fn discretize(
    rates: &RateConstants,
    ke0_per_min: f64,
    gamma: f64,
    c50: f64,
    delta_t_s: f64,
    link_beta: LinkBeta,
) -> DiscretePatientModel {
    let a_c = continuous_rate_matrix_per_s(rates);
    let a_matrix = mat3::exp(&mat3::scale(&a_c, delta_t_s));
    let alpha = (-ke0_per_min * delta_t_s / 60.0).exp();
    let beta = match link_beta {
        LinkBeta::SteadyState => 1.0 - alpha,
        LinkBeta::PerSecondRate => (ke0_per_min / 60.0) * alpha,
    };
    DiscretePatientModel {
        a_matrix,
        b_vector: [delta_t_s * MAX_INFUSION_MG_PER_S, 0.0, 0.0],
        alpha,
        beta,
        gamma,
        c50,
        delta_t_s,
    }
}

/// Build the discrete model for a patient from the covariate PK model.
pub fn build_discrete_model(
    params: &PatientParams,
    delta_t_s: f64,
    link_beta: LinkBeta,
) -> Result<DiscretePatientModel> {
    params.validate()?;
    if delta_t_s.is_nan() || delta_t_s <= 0.0 {
        return Err(Error::Config(format!("delta_t {delta_t_s} must be positive")));
    }
    let rates = schnider::rate_constants(&params.demographics)?;
    Ok(discretize(
        &rates,
        params.ke0_per_min,
        params.gamma,
        params.c50,
        delta_t_s,
        link_beta,
    ))
}

/// One environment step: `x' = A·x + B·a`, `x_e' = α·x_e + β·x₁` (old `x₁`).
///
/// Fractional actions are allowed (the kinetics are linear in the action).
pub fn step_patient(
    model: &DiscretePatientModel,
    state: &PatientState,
    action: f64,
) -> PatientState {
    debug_assert!((0.0..=1.0).contains(&action), "action {action} outside [0,1]");
    let a = &model.a_matrix;
    let x = &state.x;
    let x_next = [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2] + model.b_vector[0] * action,
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2] + model.b_vector[1] * action,
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2] + model.b_vector[2] * action,
    ];
    PatientState {
        x: x_next,
        x_e: model.alpha * state.x_e + model.beta * x[0],
        k: state.k + 1,
    }
}

/// Hill response: `y = x_e^γ / (c50^γ + x_e^γ)`, in [0, 1].
pub fn hill_response(x_e: f64, gamma: f64, c50: f64) -> f64 {
    debug_assert!(x_e >= 0.0 && gamma > 0.0 && c50 > 0.0);
    if x_e == 0.0 {
        return 0.0;
    }
    // Ratio form avoids overflow of x_e^γ for large effect-site levels.
    let r = (x_e / c50).powf(gamma);
    if r.is_infinite() {
        1.0
    } else {
        r / (1.0 + r)
    }
}

/// True response for the current state of a model.
pub fn response(model: &DiscretePatientModel, state: &PatientState) -> f64 {
    hill_response(state.x_e, model.gamma, model.c50)
}

/// Noisy measurement: `clip(y + v, 0, 1)` with `v ~ N(0, noise_variance)`.
pub fn measure(y: f64, model: &MeasurementModel, rng: &mut ChaCha8Rng) -> f64 {
    debug_assert!((0.0..=1.0).contains(&y));
    let normal = Normal::new(0.0, model.noise_variance.sqrt())
        .expect("noise variance must be non-negative");
    (y + normal.sample(rng)).clamp(0.0, 1.0)
}

/// Draw a randomized patient, each parameter uniform over its range.
pub fn sample_patient(rng: &mut ChaCha8Rng, ranges: &PatientRanges) -> PatientParams {
    fn uniform(rng: &mut ChaCha8Rng, r: &ParamRange) -> f64 {
        if r.min == r.max {
            r.min
        } else {
            rng.random_range(r.min..=r.max)
        }
    }
    let height = uniform(rng, &ranges.height);
    let weight = uniform(rng, &ranges.weight);
    let age = uniform(rng, &ranges.age);
    let ke0 = uniform(rng, &ranges.ke0);
    let gamma = uniform(rng, &ranges.gamma);
    let c50 = uniform(rng, &ranges.c50);
    let sex = match ranges.sampled_sex {
        SexSampling::Male => Sex::Male,
        SexSampling::Female => Sex::Female,
        SexSampling::Random => {
            if rng.random_range(0.0..1.0) < 0.5 {
                Sex::Male
            } else {
                Sex::Female
            }
        }
    };
    PatientParams {
        demographics: PatientDemographics {
            age_years: age,
            height_cm: height,
            weight_kg: weight,
            sex,
        },
        ke0_per_min: ke0,
        gamma,
        c50,
    }
}

/// Small fixed-size matrix helpers for the 3-compartment system.
mod mat3 {
    pub type Mat = [[f64; 3]; 3];

    pub const IDENTITY: Mat = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    pub fn scale(m: &Mat, s: f64) -> Mat {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[i][j] * s;
            }
        }
        out
    }

    pub fn mul(a: &Mat, b: &Mat) -> Mat {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for (k, bk) in b.iter().enumerate() {
                    s += a[i][k] * bk[j];
                }
                out[i][j] = s;
            }
        }
        out
    }

    fn norm1(m: &Mat) -> f64 {
        (0..3)
            .map(|j| (0..3).map(|i| m[i][j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential via truncated Taylor series with
    /// scaling-and-squaring down to ‖M‖₁ ≤ 0.5.
    pub fn exp(m: &Mat) -> Mat {
        let mut squarings = 0u32;
        let mut norm = norm1(m);
        while norm > 0.5 && squarings < 32 {
            norm /= 2.0;
            squarings += 1;
        }
        let t = scale(m, 0.5f64.powi(squarings as i32));
        let mut out = IDENTITY;
        let mut term = IDENTITY;
        for k in 1..=24 {
            term = scale(&mul(&term, &t), 1.0 / k as f64);
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            out = mul(&out, &out);
        }
        out
    }
}
