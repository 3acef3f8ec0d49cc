//! Physical constants and canonical-unit conversions.
//!
//! Internally lengths are in AU and time in TU = sqrt(AU^3 / mu_sun), which
//! makes the heliocentric gravitational parameter exactly 1. Files and reports
//! use AU, days, km/s and kg.

pub const MU_SUN_KM3_S2: f64 = 1.327_124_400_18e11;
pub const AU_KM: f64 = 1.495_978_707e8;
pub const DAY_S: f64 = 86_400.0;
pub const G0_M_S2: f64 = 9.806_65;
/// Gravitational parameter in canonical units.
pub const MU: f64 = 1.0;

/// Modified Julian Date of 2020-01-01 00:00.
pub const MJD_2020: f64 = 58_849.0;
/// Modified Julian Date of 2060-01-01 00:00.
pub const MJD_2060: f64 = 73_459.0;

/// Seconds per canonical time unit (about 58.13 days).
pub fn tu_s() -> f64 {
    (AU_KM.powi(3) / MU_SUN_KM3_S2).sqrt()
}

/// km/s per canonical velocity unit (about 29.78 km/s).
pub fn vu_km_s() -> f64 {
    AU_KM / tu_s()
}

pub fn days_to_tu(days: f64) -> f64 {
    days * DAY_S / tu_s()
}

pub fn tu_to_days(tu: f64) -> f64 {
    tu * tu_s() / DAY_S
}

pub fn vu_to_km_s(v: f64) -> f64 {
    v * vu_km_s()
}

pub fn km_s_to_vu(v: f64) -> f64 {
    v / vu_km_s()
}

pub fn m_s_to_vu(v: f64) -> f64 {
    v / 1000.0 / vu_km_s()
}

pub fn vu_to_m_s(v: f64) -> f64 {
    v * vu_km_s() * 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_unit_is_about_58_days() {
        let days = tu_to_days(1.0);
        assert!((days - 58.132).abs() < 1e-2, "{days}");
        assert!((vu_km_s() - 29.7847).abs() < 1e-3);
    }

    #[test]
    fn calendar_bounds() {
        // 40 years with 10 leap days between 2020 and 2060.
        assert_eq!(MJD_2060 - MJD_2020, 40.0 * 365.0 + 10.0);
    }
}
