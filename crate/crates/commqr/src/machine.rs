use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// α-β-γ machine description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MachineModel {
    pub name: String,
    pub p_max: u64,
    /// seconds per message
    pub alpha: f64,
    /// seconds per word
    pub beta: f64,
    /// seconds per flop
    pub gamma: f64,
    /// seconds per divide
    pub gamma_d: f64,
    /// words of memory per processor
    pub mem_words: f64,
    pub peak_flops: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineFile {
    name: String,
    p_max: u64,
    peak_flops: f64,
    alpha: f64,
    beta: f64,
    mem_words: f64,
}

impl MachineModel {
    /// Machine running at 80% of peak, with divides as fast as flops.
    pub fn from_peak(
        name: &str,
        p_max: u64,
        peak_flops: f64,
        alpha: f64,
        beta: f64,
        mem_words: f64,
    ) -> Result<Self> {
        let vals = [peak_flops, alpha, beta, mem_words];
        if p_max == 0 || vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "machine `{name}`: all rates and sizes must be positive"
            )));
        }
        let gamma = 1.0 / (0.8 * peak_flops);
        Ok(MachineModel {
            name: name.to_string(),
            p_max,
            alpha,
            beta,
            gamma,
            gamma_d: gamma,
            mem_words,
            peak_flops,
        })
    }

    pub fn power5() -> Self {
        Self::from_peak("power5", 888, 7.6e9, 5e-6, 2.5e-9, 5e8).expect("valid constants")
    }

    pub fn peta() -> Self {
        Self::from_peak("peta", 8192, 500e9, 1e-5, 2e-9, 62.5e9).expect("valid constants")
    }

    pub fn grid() -> Self {
        Self::from_peak("grid", 128, 10e12, 1e-1, 25e-9, 1e14).expect("valid constants")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "power5" => Some(Self::power5()),
            "peta" => Some(Self::peta()),
            "grid" => Some(Self::grid()),
            _ => None,
        }
    }

    /// Parse a TOML machine description with keys
    /// `name, p_max, peak_flops, alpha, beta, mem_words`.
    pub fn from_config(text: &str) -> Result<Self> {
        let f: MachineFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("machine config: {e}")))?;
        Self::from_peak(&f.name, f.p_max, f.peak_flops, f.alpha, f.beta, f.mem_words)
    }

    /// Unit-cost machine: α = β = γ = γ_d = 1.
    pub fn unit() -> Self {
        MachineModel {
            name: "unit".into(),
            p_max: u64::MAX,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            gamma_d: 1.0,
            mem_words: f64::INFINITY,
            peak_flops: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_is_eighty_percent_of_peak() {
        let m = MachineModel::power5();
        assert!((m.gamma - 1.0 / (0.8 * 7.6e9)).abs() < 1e-25);
        assert_eq!(m.gamma, m.gamma_d);
    }

    #[test]
    fn config_roundtrip() {
        let text = "name = \"box\"\np_max = 16\npeak_flops = 1e9\nalpha = 1e-6\nbeta = 1e-9\nmem_words = 1e8\n";
        let m = MachineModel::from_config(text).unwrap();
        assert_eq!(m.p_max, 16);
        assert_eq!(m.name, "box");
    }

    #[test]
    fn config_rejects_bad_values() {
        let text = "name = \"box\"\np_max = 16\npeak_flops = 0\nalpha = 1e-6\nbeta = 1e-9\nmem_words = 1e8\n";
        assert!(MachineModel::from_config(text).is_err());
        assert!(MachineModel::from_config("name = 3").is_err());
    }
}
