//! Energy units. Every quantity in a run shares one energy unit with ħ = 1,
//! so times come out in ħ/energy and are converted to femtoseconds only for
//! display.

use serde::{Deserialize, Serialize};

/// ħ in meV·fs.
pub const HBAR_MEV_FS: f64 = 658.211_956_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EnergyUnit {
    #[default]
    #[serde(rename = "meV")]
    MilliElectronVolt,
    #[serde(rename = "eV")]
    ElectronVolt,
}

impl EnergyUnit {
    /// ħ expressed in `unit · fs`.
    pub fn hbar_fs(self) -> f64 {
        match self {
            EnergyUnit::MilliElectronVolt => HBAR_MEV_FS,
            EnergyUnit::ElectronVolt => HBAR_MEV_FS * 1e-3,
        }
    }

    /// Converts a time in natural units (ħ / unit) to femtoseconds.
    pub fn to_fs(self, t: f64) -> f64 {
        t * self.hbar_fs()
    }

    pub fn label(self) -> &'static str {
        match self {
            EnergyUnit::MilliElectronVolt => "meV",
            EnergyUnit::ElectronVolt => "eV",
        }
    }
}

impl std::fmt::Display for EnergyUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_inverse_mev_is_658_fs() {
        assert!((EnergyUnit::MilliElectronVolt.to_fs(1.0) - 658.2119569).abs() < 1e-9);
        assert!((EnergyUnit::ElectronVolt.to_fs(1.0) - 0.6582119569).abs() < 1e-12);
    }

    #[test]
    fn serde_labels() {
        let u: EnergyUnit = serde_json::from_str("\"eV\"").unwrap();
        assert_eq!(u, EnergyUnit::ElectronVolt);
        assert_eq!(serde_json::to_string(&EnergyUnit::MilliElectronVolt).unwrap(), "\"meV\"");
    }
}
