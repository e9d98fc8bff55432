//! Post-hoc out-of-distribution detection over classifier embeddings.
//!
//! The toolkit reads feature/logit dumps ([`eds`]), fits and applies the
//! detectors in [`detectors`], aggregates deep-ensemble members in
//! [`ensemble`], scores detection quality with [`metrics`] and runs whole
//! open-set experiments through [`harness`].

pub mod eds;
pub mod numeric;
pub mod detectors;
pub mod ensemble;
pub mod metrics;
pub mod harness;
