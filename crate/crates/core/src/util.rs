use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Maps a real coordinate into (0, 1].
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y <= 0.0 || y > 1.0 {
        1.0
    } else {
        y
    }
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Splits `name:key=value,key=value` into the name and its parameters.
pub fn parse_id(id: &str) -> Result<(String, BTreeMap<String, String>)> {
    let (name, rest) = match id.split_once(':') {
        Some((n, r)) => (n.trim(), r.trim()),
        None => (id.trim(), ""),
    };
    let mut params = BTreeMap::new();
    if !rest.is_empty() {
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value in {id:?}, got {part:?}")))?;
            if params.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("duplicate key {k:?} in {id:?}")));
            }
        }
    }
    Ok((name.to_string(), params))
}

pub struct Params {
    id: String,
    map: BTreeMap<String, String>,
}

impl Params {
    pub fn new(id: &str, map: BTreeMap<String, String>) -> Self {
        Params { id: id.to_string(), map }
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Parse(format!("bad value {v:?} for {key:?} in {:?}", self.id))),
        }
    }

    pub fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Parse(format!("missing parameter {key:?} in {:?}", self.id)))
    }

    pub fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Parse(format!("unknown parameter {k:?} in {:?}", self.id))),
        }
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.map
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of log(y) against log(x).
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Composite trapezoid rule on a uniform mesh with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_unit(0.0), 1.0);
        assert_eq!(wrap_unit(1.0), 1.0);
        assert_eq!(wrap_unit(-0.25), 0.75);
        assert_eq!(wrap_unit(2.5), 0.5);
        assert_eq!(wrap_unit(-1e-300), 1.0);
    }

    #[test]
    fn id_parsing() {
        let (n, p) = parse_id("sobolev:alpha=2,K=8,seed=7").unwrap();
        assert_eq!(n, "sobolev");
        assert_eq!(p["K"], "8");
        let (n, p) = parse_id("kuramoto").unwrap();
        assert_eq!(n, "kuramoto");
        assert!(p.is_empty());
        assert!(parse_id("laplace:m").is_err());
    }

    #[test]
    fn slopes_and_quadrature() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y) + 1.5).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        let v: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert!((trapezoid(&v, 0.1) - 0.5).abs() < 1e-14);
    }
}
