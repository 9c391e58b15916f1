//! Gradient-norm stability analytics over the initial optimization phase.
//!
//! Four statistics over a window of the per-step gradient-norm series:
//! population standard deviation, coefficient of variation (percent), mean
//! step change, and the R^2 of a least-squares line of g_t against t. The
//! default window is the first 500 optimizer steps; the window spec travels
//! with every report so arms are only compared like-for-like.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 500;

/// Ordered per-step gradient norms with the analysis window.
#[derive(Clone, Debug, PartialEq)]
pub struct GradNormSeries {
    pub values: Vec<f64>,
    pub window_start: usize,
    pub window_len: usize,
}

impl GradNormSeries {
    /// Window covering the first `min(DEFAULT_WINDOW, len)` steps.
    pub fn initial_phase(values: Vec<f64>) -> Self {
        let window_len = values.len().min(DEFAULT_WINDOW);
        GradNormSeries { values, window_start: 0, window_len }
    }

    fn window(&self) -> Result<&[f64]> {
        if self.window_len < 3 {
            return Err(Error::contract("stability window must have length >= 3"));
        }
        let end = self.window_start + self.window_len;
        if end > self.values.len() {
            return Err(Error::contract(format!(
                "window [{}, {end}) outside series of length {}",
                self.window_start,
                self.values.len()
            )));
        }
        let w = &self.values[self.window_start..end];
        if w.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::contract("gradient norms must be finite and >= 0"));
        }
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub arm: String,
    pub seed: u64,
    pub std_dev: f64,
    pub cv_percent: f64,
    pub msc: f64,
    pub r_squared: f64,
    pub window_start: usize,
    pub window_len: usize,
    /// Set when the window mean is zero and cv was reported as 0.
    pub zero_mean: bool,
}

impl StabilityReport {
    pub fn csv_header() -> &'static str {
        "arm,seed,window_start,window_len,std_dev,cv_percent,msc,r_squared"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.arm,
            self.seed,
            self.window_start,
            self.window_len,
            self.std_dev,
            self.cv_percent,
            self.msc,
            self.r_squared
        )
    }
}

/// Compute all four statistics over the series' window. `arm` and `seed`
/// are carried through into the report.
pub fn stability_metrics(s: &GradNormSeries, arm: &str, seed: u64) -> Result<StabilityReport> {
    let w = s.window()?;
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|&g| (g - mean) * (g - mean)).sum::<f64>() / n;
    let std_dev = var.sqrt();
    let zero_mean = mean == 0.0;
    let cv_percent = if zero_mean { 0.0 } else { 100.0 * std_dev / mean };
    let msc = w.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>() / (n - 1.0);

    // least-squares line of g against t = 0..n-1
    let t_mean = (n - 1.0) / 2.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &g) in w.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxx += dt * dt;
        sxy += dt * (g - mean);
    }
    let ss_tot = var * n;
    let r_squared = if ss_tot < 1e-15 {
        1.0 // a constant series is fit perfectly by a flat line
    } else {
        let slope = sxy / sxx;
        let ss_res: f64 = w
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let fit = mean + slope * (i as f64 - t_mean);
                (g - fit) * (g - fit)
            })
            .sum();
        1.0 - ss_res / ss_tot
    };

    Ok(StabilityReport {
        arm: arm.to_string(),
        seed,
        std_dev,
        cv_percent,
        msc,
        r_squared,
        window_start: s.window_start,
        window_len: s.window_len,
        zero_mean,
    })
}

#[derive(Clone, Debug)]
pub struct StabilityComparison {
    /// (arm, mean std_dev, mean cv_percent) in first-appearance order.
    pub per_arm: Vec<(String, f64, f64)>,
    /// mean std_dev of `ri_arm` <= that of `fi_arm`
    pub std_ok: bool,
    /// mean cv of `ri_arm` <= that of `fi_arm`
    pub cv_ok: bool,
}

impl StabilityComparison {
    pub fn pass(&self) -> bool {
        self.std_ok && self.cv_ok
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("arm,mean_std_dev,mean_cv_percent\n");
        for (arm, s, c) in &self.per_arm {
            out.push_str(&format!("{arm},{s:.17e},{c:.17e}\n"));
        }
        out.push_str(&format!("ri_std_le_fi_std,{}\nri_cv_le_fi_cv,{}\n", self.std_ok, self.cv_ok));
        out
    }
}

/// Seed-average the per-arm stability metrics and check that the
/// reverse-injection arm is no more volatile than the forward-injection arm
/// (both std_dev and cv). All reports must share one window spec.
pub fn stability_compare(
    reports: &[StabilityReport],
    ri_arm: &str,
    fi_arm: &str,
) -> Result<StabilityComparison> {
    if reports.is_empty() {
        return Err(Error::contract("stability_compare: no reports"));
    }
    let (ws, wl) = (reports[0].window_start, reports[0].window_len);
    if reports.iter().any(|r| r.window_start != ws || r.window_len != wl) {
        return Err(Error::contract("stability_compare: window spec mismatch across reports"));
    }
    let mut acc: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in reports {
        match acc.iter_mut().find(|(arm, _, _, _)| arm == &r.arm) {
            Some((_, s, c, n)) => {
                *s += r.std_dev;
                *c += r.cv_percent;
                *n += 1;
            }
            None => acc.push((r.arm.clone(), r.std_dev, r.cv_percent, 1)),
        }
    }
    let per_arm: Vec<(String, f64, f64)> = acc
        .into_iter()
        .map(|(arm, s, c, n)| (arm, s / n as f64, c / n as f64))
        .collect();
    let find = |arm: &str| -> Result<(f64, f64)> {
        per_arm
            .iter()
            .find(|(a, _, _)| a == arm)
            .map(|(_, s, c)| (*s, *c))
            .ok_or_else(|| Error::contract(format!("stability_compare: unknown arm '{arm}'")))
    };
    let (ri_std, ri_cv) = find(ri_arm)?;
    let (fi_std, fi_cv) = find(fi_arm)?;
    Ok(StabilityComparison { per_arm, std_ok: ri_std <= fi_std, cv_ok: ri_cv <= fi_cv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>) -> GradNormSeries {
        let window_len = values.len();
        GradNormSeries { values, window_start: 0, window_len }
    }

    #[test]
    fn constant_series_degenerate_fit() {
        let r = stability_metrics(&series(vec![2.5; 4]), "a", 0).unwrap();
        assert_eq!(r.std_dev, 0.0);
        assert_eq!(r.cv_percent, 0.0);
        assert_eq!(r.msc, 0.0);
        assert_eq!(r.r_squared, 1.0);
        assert!(!r.zero_mean);
    }

    #[test]
    fn linear_series_closed_form() {
        let r = stability_metrics(&series(vec![1.0, 2.0, 3.0, 4.0, 5.0]), "a", 0).unwrap();
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        assert!((r.msc - 1.0).abs() < 1e-15);
        assert!((r.std_dev - 2.0f64.sqrt()).abs() < 1e-12); // population std
        assert!((r.cv_percent - 100.0 * 2.0f64.sqrt() / 3.0).abs() < 1e-9);
    }

    #[test]
    fn random_series_matches_bruteforce_oracle() {
        let vals: Vec<f64> =
            (0..97).map(|i| ((i as f64 * 0.61).sin() * 0.5 + 1.2).abs()).collect();
        let r = stability_metrics(&series(vals.clone()), "a", 0).unwrap();

        // independent recomputation, pedestrian formulas
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std =
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let cv = 100.0 * std / mean;
        let msc = (1..vals.len())
            .map(|i| (vals[i] - vals[i - 1]).abs())
            .sum::<f64>()
            / (n - 1.0);
        // regression via normal equations on raw sums
        let (mut st, mut stt, mut sg, mut stg) = (0.0, 0.0, 0.0, 0.0);
        for (i, &g) in vals.iter().enumerate() {
            let t = i as f64;
            st += t;
            stt += t * t;
            sg += g;
            stg += t * g;
        }
        let slope = (n * stg - st * sg) / (n * stt - st * st);
        let intercept = (sg - slope * st) / n;
        let ss_res: f64 = vals
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let f = intercept + slope * i as f64;
                (g - f) * (g - f)
            })
            .sum();
        let ss_tot: f64 = vals.iter().map(|&g| (g - mean) * (g - mean)).sum();
        let r2 = 1.0 - ss_res / ss_tot;

        assert!((r.std_dev - std).abs() < 1e-12);
        assert!((r.cv_percent - cv).abs() < 1e-12);
        assert!((r.msc - msc).abs() < 1e-12);
        assert!((r.r_squared - r2).abs() < 1e-12);
    }

    #[test]
    fn window_shift_invariance() {
        let mut vals: Vec<f64> = (0..40).map(|i| ((i as f64 * 0.37).cos() + 1.5).abs()).collect();
        let base = stability_metrics(
            &GradNormSeries { values: vals.clone(), window_start: 0, window_len: 40 },
            "a",
            0,
        )
        .unwrap();
        // prepend junk and shift the window: all four statistics unchanged
        let mut shifted = vec![99.0; 7];
        shifted.append(&mut vals);
        let moved = stability_metrics(
            &GradNormSeries { values: shifted, window_start: 7, window_len: 40 },
            "a",
            0,
        )
        .unwrap();
        assert!((base.std_dev - moved.std_dev).abs() < 1e-12);
        assert!((base.cv_percent - moved.cv_percent).abs() < 1e-12);
        assert!((base.msc - moved.msc).abs() < 1e-12);
        assert!((base.r_squared - moved.r_squared).abs() < 1e-12);
    }

    #[test]
    fn cv_scale_invariance_and_msc_zero_iff_constant() {
        let vals: Vec<f64> = (0..20).map(|i| (i as f64 * 0.9).sin().abs() + 0.1).collect();
        let a = stability_metrics(&series(vals.clone()), "a", 0).unwrap();
        let b = stability_metrics(&series(vals.iter().map(|v| v * 7.0).collect()), "a", 0).unwrap();
        assert!((a.cv_percent - b.cv_percent).abs() < 1e-9);
        assert!(a.msc > 0.0);
    }

    #[test]
    fn short_window_is_contract_error() {
        assert!(stability_metrics(&series(vec![1.0, 2.0]), "a", 0).is_err());
    }

    fn report(arm: &str, seed: u64, std: f64, cv: f64) -> StabilityReport {
        StabilityReport {
            arm: arm.into(),
            seed,
            std_dev: std,
            cv_percent: cv,
            msc: 0.0,
            r_squared: 0.0,
            window_start: 0,
            window_len: 500,
            zero_mean: false,
        }
    }

    #[test]
    fn compare_accepts_reference_values() {
        // reference orderings: ri (0.0415, 22.9306) vs fi (0.0505, 29.8237)
        let reports =
            vec![report("ri", 0, 0.0415, 22.9306), report("fi", 0, 0.0505, 29.8237)];
        let cmp = stability_compare(&reports, "ri", "fi").unwrap();
        assert!(cmp.pass());
    }

    #[test]
    fn compare_equal_series_pass_and_volatility_flips() {
        let reports = vec![report("ri", 0, 0.04, 20.0), report("fi", 0, 0.04, 20.0)];
        assert!(stability_compare(&reports, "ri", "fi").unwrap().pass());

        let reports = vec![report("ri", 0, 0.09, 55.0), report("fi", 0, 0.04, 20.0)];
        assert!(!stability_compare(&reports, "ri", "fi").unwrap().pass());
    }

    #[test]
    fn compare_rejects_window_mismatch() {
        let mut b = report("fi", 0, 0.1, 1.0);
        b.window_len = 400;
        let reports = vec![report("ri", 0, 0.1, 1.0), b];
        assert!(stability_compare(&reports, "ri", "fi").is_err());
    }
}
