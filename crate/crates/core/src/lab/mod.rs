//! Experiment drivers turning solver output into quantitative checks.

pub mod fit;
pub mod lemmas;
pub mod report;
pub mod studies;
pub mod turnpike;

pub use fit::{fit_exponential, ExpFit, FitModel};
pub use lemmas::{lemma_decay_suite, DriftSpec, LemmaCase};
pub use report::{LemmaReport, StudyReport, StudyRow};
pub use studies::{
    commutation_check, duality_gap, horizon_limit_study, multiplicity_probe, random_densities,
    vanishing_discount_study, DualityGap, VanishingDiscountOptions,
};
pub use turnpike::{turnpike_report, TurnpikeReport};
