//! Seeded train / validation / test partition.
//!
//! Part sizes are `floor(n * f)` computed in exact rational arithmetic. The
//! at most two ids lost to flooring go one each to train, then val, then
//! test, skipping parts whose fraction is zero.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Fraction = Ratio<u128>;

/// Decimal digits accepted after the point.
const MAX_DECIMALS: usize = 12;

/// Parses `0.8`, `80%` or `4/5` exactly.
pub fn parse_fraction(s: &str) -> Result<Fraction> {
    let bad = |why: &str| Error::Config(format!("bad fraction `{s}`: {why}"));
    let s = s.trim();
    if let Some(pct) = s.strip_suffix('%') {
        return Ok(parse_fraction(pct)? / Fraction::from_integer(100));
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: u128 = n.trim().parse().map_err(|_| bad("numerator"))?;
        let d: u128 = d.trim().parse().map_err(|_| bad("denominator"))?;
        if d == 0 {
            return Err(bad("zero denominator"));
        }
        return Ok(Fraction::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad("empty"));
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad("not a non-negative decimal"));
    }
    if frac.len() > MAX_DECIMALS || int.len() > 6 {
        return Err(bad("too many digits"));
    }
    let digits: u128 = format!("{int}{frac}").parse().map_err(|_| bad("digits"))?;
    Ok(Fraction::new(digits, 10u128.pow(frac.len() as u32)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub fractions: [Fraction; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: Fraction, val: Fraction, test: Fraction, seed: u64) -> Result<Self> {
        let spec = Self {
            fractions: [train, val, test],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 80 / 10 / 10 protocol.
    pub fn default_protocol(seed: u64) -> Self {
        Self::new(Fraction::new(4, 5), Fraction::new(1, 10), Fraction::new(1, 10), seed).expect("sums to one")
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = Fraction::zero();
        for f in &self.fractions {
            if *f > Fraction::one() {
                return Err(Error::Config(format!("fraction {f} exceeds 1")));
            }
            sum = sum
                .checked_add(f)
                .ok_or_else(|| Error::Config("fractions are too finely divided to sum exactly".into()))?;
        }
        if sum != Fraction::one() {
            return Err(Error::Config(format!("fractions sum to {sum}, not exactly 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` ids.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let nn = Fraction::from_integer(n as u128);
        let mut sizes = [0usize; 3];
        for (s, f) in sizes.iter_mut().zip(&self.fractions) {
            let v = f
                .checked_mul(&nn)
                .ok_or_else(|| Error::Config("split size overflows".into()))?;
            *s = v.floor().to_integer().to_usize().expect("at most n");
        }
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut part = 0;
        while remainder > 0 {
            if !self.fractions[part % 3].is_zero() {
                sizes[part % 3] += 1;
                remainder -= 1;
            }
            part += 1;
        }
        Ok(sizes)
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = &self.fractions;
        write!(f, "{a},{b},{c} seed={}", self.seed)
    }
}

/// Parses `train,val,test`, for example `0.8,0.1,0.1`.
pub fn parse_fractions(s: &str) -> Result<[Fraction; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b, c] = parts[..] else {
        return Err(Error::Config(format!(
            "expected three comma-separated fractions, got `{s}`"
        )));
    };
    Ok([parse_fraction(a)?, parse_fraction(b)?, parse_fraction(c)?])
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// `train,val,test[,seed]`.
    fn from_str(s: &str) -> Result<Self> {
        let (fr, seed) = match s.splitn(4, ',').collect::<Vec<_>>()[..] {
            [a, b, c, seed] => (
                format!("{a},{b},{c}"),
                seed.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed `{seed}`")))?,
            ),
            _ => (s.to_string(), 0),
        };
        let [a, b, c] = parse_fractions(&fr)?;
        Self::new(a, b, c, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn parts(&self) -> [(&'static str, &[String]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Shuffles `ids` with a generator seeded from `spec.seed` and cuts the
/// result into consecutive train, val and test runs.
pub fn split_dataset(ids: &[String], spec: &SplitSpec) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty index".into()));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(d) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate id `{d}`")));
    }
    let [a, b, _] = spec.sizes(ids.len())?;
    let mut order = ids.to_vec();
    Rng::new(spec.seed).shuffle(&mut order);
    let test = order.split_off(a + b);
    let val = order.split_off(a);
    Ok(Split {
        train: order,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:05}")).collect()
    }

    #[test]
    fn protocol_sizes() {
        let spec = SplitSpec::default_protocol(0);
        assert_eq!(spec.sizes(3154).unwrap(), [2524, 315, 315]);
        assert_eq!(spec.sizes(10).unwrap(), [8, 1, 1]);
        assert_eq!(spec.sizes(1).unwrap(), [1, 0, 0]);
    }

    #[test]
    fn fractions_parse_exactly() {
        assert_eq!(parse_fraction("0.8").unwrap(), Fraction::new(4, 5));
        assert_eq!(parse_fraction("80%").unwrap(), Fraction::new(4, 5));
        assert_eq!(parse_fraction("1/3").unwrap(), Fraction::new(1, 3));
        assert_eq!(parse_fraction("1").unwrap(), Fraction::one());
        for bad in ["", ".", "-0.1", "0.1.2", "1/0", "abc", "1e-3"] {
            assert!(parse_fraction(bad).is_err(), "{bad}");
        }
        let s: SplitSpec = "0.7,0.2,0.1,5".parse().unwrap();
        assert_eq!(s.seed, 5);
        assert!("0.5,0.2,0.2".parse::<SplitSpec>().is_err());
        assert!("1/3,1/3,1/3".parse::<SplitSpec>().is_ok());
    }

    #[test]
    fn remainder_skips_empty_parts() {
        let spec = SplitSpec::new(Fraction::zero(), Fraction::new(1, 2), Fraction::new(1, 2), 0).unwrap();
        assert_eq!(spec.sizes(5).unwrap(), [0, 3, 2]);
    }

    #[test]
    fn deterministic_partition() {
        let spec = SplitSpec::default_protocol(11);
        let a = split_dataset(&ids(50), &spec).unwrap();
        assert_eq!(a, split_dataset(&ids(50), &spec).unwrap());
        let b = split_dataset(&ids(50), &SplitSpec::default_protocol(12)).unwrap();
        assert_ne!(a, b);
        let mut all: Vec<String> = a.train.iter().chain(&a.val).chain(&a.test).cloned().collect();
        all.sort();
        assert_eq!(all, ids(50));
        assert!(split_dataset(&[], &spec).is_err());
    }
}
