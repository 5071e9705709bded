use serde::{Deserialize, Serialize};

/// Positive-definite kernel on real vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `k(a, b) = a.b`
    #[default]
    Linear,
    /// `k(a, b) = exp(-|a - b|^2 / (2 h^2))`
    Rbf { bandwidth: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { bandwidth } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Adds `scale * d k(a, b) / d a` into `out`.
    pub fn add_grad_first(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            Kernel::Linear => {
                for (o, bj) in out.iter_mut().zip(b) {
                    *o += scale * bj;
                }
            }
            Kernel::Rbf { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = self.eval(a, b);
                for ((o, aj), bj) in out.iter_mut().zip(a).zip(b) {
                    *o -= scale * k * (aj - bj) / h2;
                }
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Kernel::Linear => true,
            Kernel::Rbf { bandwidth } => bandwidth > 0.0 && bandwidth.is_finite(),
        }
    }
}

