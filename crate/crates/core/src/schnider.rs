//! Schnider covariate model for propofol: compartment volumes, clearances,
//! and the derived first-order rate constants.
//!
//! The coefficients below are transcribed from the published Schnider adult
//! population model and are kept in this one module so the externally sourced
//! numbers have a single audit point. Volumes are litres, clearances L/min,
//! rate constants min⁻¹. Rate constants act on compartment *amounts*
//! (k_ij = Cl/V of the source compartment).

use crate::error::{Error, Result};
use crate::pkpd::{PatientDemographics, Sex};

/// Version tag for the transcribed coefficient table.
pub const COEFFICIENTS_VERSION: &str = "schnider-adult-v1";

/// Central compartment volume [L], covariate-independent.
const V1_L: f64 = 4.27;
/// Slow-peripheral volume [L]: 18.9 − 0.391·(age − 53).
const V2_BASE_L: f64 = 18.9;
const V2_AGE_SLOPE: f64 = -0.391;
const V2_AGE_REF: f64 = 53.0;
/// Rapid-peripheral volume [L], covariate-independent.
const V3_L: f64 = 238.0;

/// Elimination clearance [L/min]:
/// 1.89 + 0.0456·(weight − 77) − 0.0681·(lbm − 59) + 0.0264·(height − 177).
const CL1_BASE: f64 = 1.89;
const CL1_WEIGHT_SLOPE: f64 = 0.0456;
const CL1_WEIGHT_REF: f64 = 77.0;
const CL1_LBM_SLOPE: f64 = -0.0681;
const CL1_LBM_REF: f64 = 59.0;
const CL1_HEIGHT_SLOPE: f64 = 0.0264;
const CL1_HEIGHT_REF: f64 = 177.0;

/// Slow-peripheral clearance [L/min]: 1.29 − 0.024·(age − 53).
const CL2_BASE: f64 = 1.29;
const CL2_AGE_SLOPE: f64 = -0.024;
const CL2_AGE_REF: f64 = 53.0;

/// Rapid-peripheral clearance [L/min], covariate-independent.
const CL3: f64 = 0.836;

/// Compartment volumes [L] for the given demographics: (central, slow, rapid).
pub fn volumes_l(demo: &PatientDemographics) -> [f64; 3] {
    [
        V1_L,
        V2_BASE_L + V2_AGE_SLOPE * (demo.age_years - V2_AGE_REF),
        V3_L,
    ]
}

/// Clearances [L/min]: (elimination, slow-peripheral, rapid-peripheral).
pub fn clearances_l_per_min(demo: &PatientDemographics) -> [f64; 3] {
    let lbm = lean_body_mass_kg(demo);
    let cl1 = CL1_BASE
        + CL1_WEIGHT_SLOPE * (demo.weight_kg - CL1_WEIGHT_REF)
        + CL1_LBM_SLOPE * (lbm - CL1_LBM_REF)
        + CL1_HEIGHT_SLOPE * (demo.height_cm - CL1_HEIGHT_REF);
    let cl2 = CL2_BASE + CL2_AGE_SLOPE * (demo.age_years - CL2_AGE_REF);
    [cl1, cl2, CL3]
}

/// James lean-body-mass formula (kg), sex-dependent.
pub fn lean_body_mass_kg(demo: &PatientDemographics) -> f64 {
    let w = demo.weight_kg;
    let h = demo.height_cm;
    match demo.sex {
        Sex::Male => 1.1 * w - 128.0 * (w / h) * (w / h),
        Sex::Female => 1.07 * w - 148.0 * (w / h) * (w / h),
    }
}

/// First-order transfer rate constants [min⁻¹] between compartments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// Elimination from the central compartment.
    pub k10: f64,
    /// Central → slow peripheral.
    pub k12: f64,
    /// Central → rapid peripheral.
    pub k13: f64,
    /// Slow peripheral → central.
    pub k21: f64,
    /// Rapid peripheral → central.
    pub k31: f64,
}

/// Rate constants [min⁻¹] for the given demographics.
///
/// Fails if the derived volumes or clearances are not strictly positive
/// (possible for demographics far outside the model's population).
pub fn rate_constants(demo: &PatientDemographics) -> Result<RateConstants> {
    let [v1, v2, v3] = volumes_l(demo);
    let [cl1, cl2, cl3] = clearances_l_per_min(demo);
    for (name, v) in [("V1", v1), ("V2", v2), ("V3", v3)] {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Config(format!(
                "Schnider volume {name} = {v} L is not positive for age {} yr",
                demo.age_years
            )));
        }
    }
    for (name, cl) in [("Cl1", cl1), ("Cl2", cl2), ("Cl3", cl3)] {
        if cl.is_nan() || cl <= 0.0 {
            return Err(Error::Config(format!(
                "Schnider clearance {name} = {cl} L/min is not positive for these covariates"
            )));
        }
    }
    Ok(RateConstants {
        k10: cl1 / v1,
        k12: cl2 / v1,
        k13: cl3 / v1,
        k21: cl2 / v2,
        k31: cl3 / v3,
    })
}
