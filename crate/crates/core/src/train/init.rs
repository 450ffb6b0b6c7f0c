use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{ParamRole, ParameterStore};
use crate::tensor::Scalar;

/// Standard deviation of the Gaussian kernel initializer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitPolicy {
    /// `σ = sqrt(2 / fan_in)`.
    Scaled,
    Fixed(f64),
}

impl std::fmt::Display for InitPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitPolicy::Scaled => f.write_str("scaled"),
            InitPolicy::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl std::str::FromStr for InitPolicy {
    type Err = crate::Error;

    /// `scaled` or a positive number.
    fn from_str(s: &str) -> crate::Result<Self> {
        if s == "scaled" {
            return Ok(InitPolicy::Scaled);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(InitPolicy::Fixed(v)),
            _ => Err(crate::Error::Config(format!("init_std: expected `scaled` or a positive number, got `{s}`"))),
        }
    }
}

impl InitPolicy {
    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            InitPolicy::Scaled => (2.0 / fan_in.max(1) as f64).sqrt(),
            InitPolicy::Fixed(s) => s,
        }
    }
}

/// Draws every kernel from `N(0, σ²)` and resets the other tensors to their
/// role defaults. One ChaCha stream walks the store in registration order.
pub fn gaussian_init<T: Scalar>(store: &mut ParameterStore<T>, policy: InitPolicy, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in store.iter_mut() {
        let fill = match p.role {
            ParamRole::Kernel => None,
            ParamRole::ForgetBias | ParamRole::Gamma | ParamRole::RunningVar => Some(1.0),
            ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean => Some(0.0),
        };
        match fill {
            Some(v) => p.tensor.data_mut().fill(T::from_f64(v)),
            None => {
                let normal = Normal::new(0.0, policy.std(p.fan_in())).expect("finite positive std");
                for v in p.tensor.data_mut() {
                    *v = T::from_f64(normal.sample(&mut rng));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store() -> ParameterStore<f32> {
        let mut s = ParameterStore::new();
        s.register("k", Shape::new(100, 4, 5, 5), ParamRole::Kernel).unwrap();
        s.register("g", Shape::new(100, 1, 1, 1), ParamRole::Gamma).unwrap();
        s.register("f", Shape::new(3, 1, 1, 1), ParamRole::ForgetBias).unwrap();
        s.register("b", Shape::new(3, 1, 1, 1), ParamRole::Bias).unwrap();
        s
    }

    #[test]
    fn deterministic_per_seed() {
        let (mut a, mut b, mut c) = (store(), store(), store());
        gaussian_init(&mut a, InitPolicy::Scaled, 5);
        gaussian_init(&mut b, InitPolicy::Scaled, 5);
        gaussian_init(&mut c, InitPolicy::Scaled, 6);
        let k = |s: &ParameterStore<f32>| s.by_name("k").unwrap().tensor.data().to_vec();
        assert_eq!(k(&a), k(&b));
        assert_ne!(k(&a), k(&c));
    }

    #[test]
    fn kernel_moments_and_fixed_roles() {
        let mut s = store();
        gaussian_init(&mut s, InitPolicy::Scaled, 1);
        let k = s.by_name("k").unwrap();
        let sigma = (2.0f64 / 100.0).sqrt();
        let data: Vec<f64> = k.tensor.data().iter().map(|&v| v as f64).collect();
        let n = data.len() as f64;
        assert_eq!(n, 1e4);
        let mean = data.iter().sum::<f64>() / n;
        assert!(mean.abs() < 4.0 * sigma / 100.0, "mean {mean}");
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.05);
        assert!(s.by_name("g").unwrap().tensor.data().iter().all(|&v| v == 1.0));
        assert!(s.by_name("f").unwrap().tensor.data().iter().all(|&v| v == 1.0));
        assert!(s.by_name("b").unwrap().tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("scaled".parse::<InitPolicy>().unwrap(), InitPolicy::Scaled);
        assert_eq!("0.01".parse::<InitPolicy>().unwrap(), InitPolicy::Fixed(0.01));
        assert!("-1".parse::<InitPolicy>().is_err());
        assert_eq!(InitPolicy::Fixed(0.5).std(999), 0.5);
    }
}
