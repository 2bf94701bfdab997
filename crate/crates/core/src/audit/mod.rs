//! Empirical audits of the modelling assumptions, the Hermite small-ball
//! criterion and the finite-width error bound.

mod assumptions;
mod events;
mod hermite;
mod rate;

pub use assumptions::{
    assumption_report, smallball_estimate, subgaussian_proxy, AssumptionOptions, AssumptionReport, LipschitzTail,
    MomentEstimate,
};
pub use events::{event_audit, EventBudget, EventGrid, Reference, SolvedModel};
pub use hermite::{hermite_coefficients, hermite_condition_check, HermiteCondition, HermiteProfile};
pub use rate::theorem_rate_budget;

/// Serialize non-finite floats as `null` and read `null` back as `+inf`.
pub(crate) mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
