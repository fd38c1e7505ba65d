//! Unit conversions shared across modules.
//!
//! Powers are MW, energies MWh, curve values $/h or kgCO2/h. Emission prices
//! and carbon shares are quoted per kWh, LMPs per MWh.

pub const KW_PER_MW: f64 = 1000.0;

/// kg/kWh intensity to the kg/h-per-MW slope of an emission curve.
pub fn intensity_to_slope(kg_per_kwh: f64) -> f64 {
    kg_per_kwh * KW_PER_MW
}

/// $/kWh to $/MWh.
pub fn per_kwh_to_per_mwh(v: f64) -> f64 {
    v * KW_PER_MW
}

/// $/MWh to $/kWh.
pub fn per_mwh_to_per_kwh(v: f64) -> f64 {
    v / KW_PER_MW
}
