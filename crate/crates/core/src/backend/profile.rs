use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoardName {
    #[serde(rename = "ZCU111")]
    Zcu111,
    #[serde(rename = "RFSoc4x2")]
    Rfsoc4x2,
    #[serde(rename = "ZCU216")]
    Zcu216,
}

impl fmt::Display for BoardName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoardName::Zcu111 => "ZCU111",
            BoardName::Rfsoc4x2 => "RFSoc4x2",
            BoardName::Zcu216 => "ZCU216",
        })
    }
}

impl FromStr for BoardName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zcu111" => Ok(BoardName::Zcu111),
            "rfsoc4x2" => Ok(BoardName::Rfsoc4x2),
            "zcu216" => Ok(BoardName::Zcu216),
            _ => Err(format!(
                "unknown board '{s}' (expected ZCU111, RFSoc4x2 or ZCU216)"
            )),
        }
    }
}

/// Converter counts and rates of a supported board with the stock firmware.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardProfile {
    pub name: BoardName,
    pub active_dacs: usize,
    pub active_adcs: usize,
    /// Hz
    pub dac_rate: f64,
    /// Hz
    pub adc_rate: f64,
    /// Highest synthesizable carrier, Hz.
    pub max_frequency: f64,
}

const MAX_FREQUENCY: f64 = 6e9;

impl BoardProfile {
    pub fn zcu111() -> Self {
        Self {
            name: BoardName::Zcu111,
            active_dacs: 7,
            active_adcs: 2,
            dac_rate: 6.554e9,
            adc_rate: 4.096e9,
            max_frequency: MAX_FREQUENCY,
        }
    }

    pub fn rfsoc4x2() -> Self {
        Self {
            name: BoardName::Rfsoc4x2,
            active_dacs: 2,
            active_adcs: 2,
            dac_rate: 9.85e9,
            adc_rate: 5.0e9,
            max_frequency: MAX_FREQUENCY,
        }
    }

    pub fn zcu216() -> Self {
        Self {
            name: BoardName::Zcu216,
            active_dacs: 7,
            active_adcs: 2,
            dac_rate: 9.85e9,
            adc_rate: 2.5e9,
            max_frequency: MAX_FREQUENCY,
        }
    }

    pub fn for_board(name: BoardName) -> Self {
        match name {
            BoardName::Zcu111 => Self::zcu111(),
            BoardName::Rfsoc4x2 => Self::rfsoc4x2(),
            BoardName::Zcu216 => Self::zcu216(),
        }
    }
}
