//! Tabulated solution curves and their CSV representation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Values of a curve on a grid of surplus levels.
///
/// `phi` is stored relative to `exp(log_scale)`; the scale is zero except for
/// homogeneous solutions that had to be renormalised to stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Option<Vec<f64>>,
    pub std_error: Option<Vec<f64>>,
    pub log_scale: f64,
}

impl SolutionTable {
    pub fn new(u: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if u.len() != phi.len() {
            return Err(Error::Domain(format!(
                "grid has {} points but {} values",
                u.len(),
                phi.len()
            )));
        }
        if u.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("grid must be strictly increasing".into()));
        }
        if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("table value at u = {}", u[i]),
            });
        }
        Ok(Self {
            u,
            phi,
            dphi: None,
            std_error: None,
            log_scale: 0.0,
        })
    }

    /// Grid `0, h, 2h, ..., u_max` with `intervals` steps.
    pub fn uniform_grid(u_max: f64, intervals: usize) -> Vec<f64> {
        let h = u_max / intervals as f64;
        (0..=intervals)
            .map(|j| if j == intervals { u_max } else { h * j as f64 })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Grid spacing if the grid starts at zero and is uniform to 1e-12.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.u.len() < 2 || self.u[0] != 0.0 {
            return None;
        }
        let h = (self.u[self.u.len() - 1] - self.u[0]) / (self.u.len() - 1) as f64;
        let uniform = self
            .u
            .iter()
            .enumerate()
            .all(|(j, &x)| (x - h * j as f64).abs() <= 1e-12 * (1.0 + x.abs()));
        uniform.then_some(h)
    }

    pub fn max_abs(&self) -> f64 {
        self.phi.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Piecewise cubic Hermite interpolation; needs `dphi`.
    pub fn interpolate(&self, x: f64) -> Option<(f64, f64)> {
        let dphi = self.dphi.as_ref()?;
        let n = self.u.len();
        if n < 2 || x < self.u[0] || x > self.u[n - 1] {
            return None;
        }
        let k = match self.u.partition_point(|&t| t <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.u[k], self.u[k + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (p0, p1, m0, m1) = (self.phi[k], self.phi[k + 1], dphi[k] * h, dphi[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let deriv = ((6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        Some((value, deriv))
    }

    /// CSV with header `u,phi[,dphi][,std_error]`, 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,phi");
        if self.dphi.is_some() {
            out.push_str(",dphi");
        }
        if self.std_error.is_some() {
            out.push_str(",std_error");
        }
        out.push('\n');
        let scale = self.log_scale.exp();
        for j in 0..self.u.len() {
            write!(out, "{},{}", fmt_g17(self.u[j]), fmt_g17(self.phi[j] * scale)).unwrap();
            if let Some(d) = &self.dphi {
                write!(out, ",{}", fmt_g17(d[j] * scale)).unwrap();
            }
            if let Some(s) = &self.std_error {
                write!(out, ",{}", fmt_g17(s[j])).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "u" || cols[1] != "phi" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let dphi_col = cols.iter().position(|&c| c == "dphi");
        let se_col = cols.iter().position(|&c| c == "std_error");
        let mut u = Vec::new();
        let mut phi = Vec::new();
        let mut dphi = Vec::new();
        let mut se = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!("line {}: wrong column count", i + 2)));
            }
            u.push(vals[0]);
            phi.push(vals[1]);
            if let Some(c) = dphi_col {
                dphi.push(vals[c]);
            }
            if let Some(c) = se_col {
                se.push(vals[c]);
            }
        }
        let mut table = SolutionTable::new(u, phi)?;
        table.dphi = dphi_col.map(|_| dphi);
        table.std_error = se_col.map(|_| se);
        Ok(table)
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_tables() {
        assert!(SolutionTable::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SolutionTable::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(SolutionTable::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn uniform_grid_detection() {
        let t = SolutionTable::new(SolutionTable::uniform_grid(3.0, 30), vec![0.0; 31]).unwrap();
        assert!((t.uniform_step().unwrap() - 0.1).abs() < 1e-15);
        let t = SolutionTable::new(vec![0.0, 1.0, 3.0], vec![0.0; 3]).unwrap();
        assert!(t.uniform_step().is_none());
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| 0.5 * x * x * x - x + 2.0;
        let df = |x: f64| 1.5 * x * x - 1.0;
        let u = SolutionTable::uniform_grid(2.0, 5);
        let mut t = SolutionTable::new(u.clone(), u.iter().map(|&x| f(x)).collect()).unwrap();
        t.dphi = Some(u.iter().map(|&x| df(x)).collect());
        for x in [0.0, 0.13, 0.97, 1.5, 2.0] {
            let (v, d) = t.interpolate(x).unwrap();
            assert!((v - f(x)).abs() < 1e-13 && (d - df(x)).abs() < 1e-12);
        }
        assert!(t.interpolate(2.1).is_none());
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let u: Vec<f64> = (0..vals.len()).map(|j| j as f64 * 0.37).collect();
            let mut t = SolutionTable::new(u, vals.clone()).unwrap();
            t.dphi = Some(vals.iter().map(|v| v / 3.0).collect());
            let back = SolutionTable::from_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
