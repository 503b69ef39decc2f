use serde::{Deserialize, Serialize};

use super::{BusId, WeatherSample};

fn default_temp_coeff() -> f64 {
    0.004
}

/// Cell heating per unit irradiance, °C·m²/W.
const CELL_HEATING: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub bus: BusId,
    pub p_peak_mw: f64,
    #[serde(default = "default_temp_coeff")]
    pub temp_coeff: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

impl PvUnit {
    pub fn validate(&self) -> Result<(), super::GridError> {
        if !(self.p_peak_mw > 0.0) || !self.p_peak_mw.is_finite() {
            return Err(super::GridError::Invalid(format!("p_peak_mw must be positive, got {}", self.p_peak_mw)));
        }
        if !(self.q_min_mvar <= 0.0 && 0.0 <= self.q_max_mvar) || !self.q_max_mvar.is_finite() || !self.q_min_mvar.is_finite() {
            return Err(super::GridError::Invalid(format!(
                "need q_min_mvar <= 0 <= q_max_mvar, got [{}, {}]",
                self.q_min_mvar, self.q_max_mvar
            )));
        }
        if !self.temp_coeff.is_finite() {
            return Err(super::GridError::Invalid("temp_coeff must be finite".into()));
        }
        Ok(())
    }
}

/// Active power from irradiance and air temperature with a linear
/// cell-temperature derating, clamped to `[0, p_peak]`.
pub fn pv_output(unit: &PvUnit, w: &WeatherSample) -> f64 {
    let t_cell = w.t_air_c + CELL_HEATING * w.ghi_w_m2;
    let p = unit.p_peak_mw * (w.ghi_w_m2 / 1000.0) * (1.0 - unit.temp_coeff * (t_cell - 25.0));
    p.clamp(0.0, unit.p_peak_mw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(p_peak: f64) -> PvUnit {
        PvUnit {
            bus: BusId(3),
            p_peak_mw: p_peak,
            temp_coeff: 0.004,
            q_min_mvar: -0.5,
            q_max_mvar: 0.5,
        }
    }

    fn sample(ghi: f64, t_air: f64) -> WeatherSample {
        WeatherSample {
            t: 0,
            ghi_w_m2: ghi,
            t_air_c: t_air,
        }
    }

    #[test]
    fn standard_test_conditions_give_peak() {
        assert!((pv_output(&unit(2.5), &sample(1000.0, -5.0)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn dark_gives_zero() {
        assert_eq!(pv_output(&unit(1.0), &sample(0.0, 20.0)), 0.0);
    }

    #[test]
    fn hot_afternoon_regression() {
        // t_cell = 30 + 0.03*800 = 54; 0.8 * (1 - 0.004*29) = 0.7072
        assert!((pv_output(&unit(1.0), &sample(800.0, 30.0)) - 0.7072).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn output_within_bounds(ghi in 0.0f64..1500.0, t_air in -40.0f64..60.0, peak in 0.01f64..10.0) {
            let p = pv_output(&unit(peak), &sample(ghi, t_air));
            prop_assert!((0.0..=peak).contains(&p));
        }

        #[test]
        fn monotone_in_irradiance(a in 0.0f64..1000.0, b in 0.0f64..1000.0, t_air in -30.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let u = unit(1.0);
            prop_assert!(pv_output(&u, &sample(lo, t_air)) <= pv_output(&u, &sample(hi, t_air)) + 1e-15);
        }
    }
}
