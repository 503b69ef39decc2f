use std::io::Read;

use serde::{Deserialize, Serialize};

use super::GridError;

/// Step-held scaling series attached to a load of `base_p_mw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub resolution_s: u64,
    pub values: Vec<f64>,
    pub base_p_mw: f64,
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.resolution_s == 0 {
            return Err(GridError::Data("profile resolution must be positive".into()));
        }
        if self.values.is_empty() {
            return Err(GridError::Data("profile has no values".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::Data("profile contains non-finite values".into()));
        }
        Ok(())
    }

    /// Scaling factor at `t`, clamped to the last value past the series end.
    pub fn factor_at(&self, t: u64) -> f64 {
        let idx = (t / self.resolution_s) as usize;
        self.values[idx.min(self.values.len() - 1)]
    }
}

pub fn load_profile_value(profile: &LoadProfile, t: u64) -> f64 {
    profile.factor_at(t) * profile.base_p_mw
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub t: u64,
    pub ghi_w_m2: f64,
    pub t_air_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WeatherSeries {
    pub samples: Vec<WeatherSample>,
}

impl WeatherSeries {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.samples.is_empty() {
            return Err(GridError::Data("weather series has no samples".into()));
        }
        for w in self.samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(GridError::Data(format!("weather times not increasing at t={}", w[1].t)));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !(s.ghi_w_m2 >= 0.0) || !s.t_air_c.is_finite()) {
            return Err(GridError::Data(format!("invalid weather sample at t={}", s.t)));
        }
        Ok(())
    }

    /// Latest sample at or before `t`; the first sample before the series starts.
    pub fn at(&self, t: u64) -> WeatherSample {
        let idx = self.samples.partition_point(|s| s.t <= t);
        self.samples[idx.saturating_sub(1)]
    }
}

fn rows(reader: impl Read, columns: usize) -> Result<Vec<Vec<f64>>, GridError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| GridError::Data(format!("line {line}: {e}")))?;
        if rec.len() != columns {
            return Err(GridError::Data(format!(
                "line {line}: expected {columns} columns, got {}",
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| GridError::Data(format!("line {line}: {f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(vals);
    }
    Ok(out)
}

fn seconds(v: f64, line: usize) -> Result<u64, GridError> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(GridError::Data(format!("line {line}: t_s must be a non-negative integer")))
    }
}

/// Reads `t_s,<factor>` rows. Times must start at 0 and be evenly spaced;
/// returns `(resolution_s, factors)`.
pub fn read_load_csv(reader: impl Read) -> Result<(u64, Vec<f64>), GridError> {
    let rows = rows(reader, 2)?;
    if rows.is_empty() {
        return Err(GridError::Data("load profile has no rows".into()));
    }
    let times = rows
        .iter()
        .enumerate()
        .map(|(i, r)| seconds(r[0], i + 2))
        .collect::<Result<Vec<_>, _>>()?;
    if times[0] != 0 {
        return Err(GridError::Data("load profile must start at t_s=0".into()));
    }
    let resolution = if times.len() > 1 { times[1] } else { 900 };
    if resolution == 0 {
        return Err(GridError::Data("load profile resolution must be positive".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if *t != i as u64 * resolution {
            return Err(GridError::Data(format!("line {}: uneven spacing at t_s={t}", i + 2)));
        }
    }
    Ok((resolution, rows.into_iter().map(|r| r[1]).collect()))
}

/// Reads `t_s,ghi_w_m2,t_air_c` rows.
pub fn read_weather_csv(reader: impl Read) -> Result<WeatherSeries, GridError> {
    let rows = rows(reader, 3)?;
    let samples = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(WeatherSample {
                t: seconds(r[0], i + 2)?,
                ghi_w_m2: r[1],
                t_air_c: r[2],
            })
        })
        .collect::<Result<Vec<_>, GridError>>()?;
    let series = WeatherSeries { samples };
    series.validate()?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> LoadProfile {
        LoadProfile {
            resolution_s: 900,
            values: vec![1.0, 0.5],
            base_p_mw: 2.0,
        }
    }

    #[test]
    fn step_interpolation_and_clamping() {
        let p = profile();
        assert_eq!(load_profile_value(&p, 0), 2.0);
        assert_eq!(load_profile_value(&p, 899), 2.0);
        assert_eq!(load_profile_value(&p, 900), 1.0);
        assert_eq!(load_profile_value(&p, 10_000), 1.0);
    }

    #[test]
    fn load_csv_roundtrip() {
        let text = "t_s,factor\n0,1.0\n900,0.5\n1800,0.75\n";
        let (res, vals) = read_load_csv(text.as_bytes()).unwrap();
        assert_eq!(res, 900);
        assert_eq!(vals, vec![1.0, 0.5, 0.75]);
    }

    #[test]
    fn load_csv_rejects_uneven_spacing() {
        let text = "t_s,factor\n0,1.0\n900,0.5\n2000,0.75\n";
        let err = read_load_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn load_csv_rejects_garbage() {
        assert!(read_load_csv("t_s,factor\n0,abc\n".as_bytes()).is_err());
        assert!(read_load_csv("t_s,factor\n".as_bytes()).is_err());
        assert!(read_load_csv("t_s,factor\n5,1\n".as_bytes()).is_err());
    }

    #[test]
    fn weather_lookup_holds_last_sample() {
        let text = "t_s,ghi_w_m2,t_air_c\n0,0,10\n3600,200,12\n7200,400,15\n";
        let w = read_weather_csv(text.as_bytes()).unwrap();
        assert_eq!(w.at(0).ghi_w_m2, 0.0);
        assert_eq!(w.at(3599).ghi_w_m2, 0.0);
        assert_eq!(w.at(3600).ghi_w_m2, 200.0);
        assert_eq!(w.at(100_000).t_air_c, 15.0);
    }

    #[test]
    fn weather_rejects_negative_irradiance() {
        let text = "t_s,ghi_w_m2,t_air_c\n0,-1,10\n";
        assert!(read_weather_csv(text.as_bytes()).is_err());
    }
}
