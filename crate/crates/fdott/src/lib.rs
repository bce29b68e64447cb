//! Optimal-transport testing of linear hypotheses between finitely supported
//! probability measures in factorial designs.
//!
//! Given independent samples from `K` discrete distributions arranged in a
//! factorial layout, this crate tests null hypotheses of the form `L·μ = 0`
//! for a contrast matrix `L` with zero row sums (one-way equality, two-way
//! interactions, main and simple effects, or any custom contrast). The test
//! statistic sums, over contrast rows, the optimal-transport distance of the
//! contrasted signed measure to zero; calibration draws from the limiting
//! law of the statistic via plug-in, bootstrap, or permutation schemes.
//!
//! The pieces fit together as follows:
//!
//! * [`measures`] — ground costs, probability/signed measures, multinomial
//!   covariance and its Gaussian factor.
//! * [`ot`] — exact OT on finite spaces, the signed-measure extension, and
//!   maximization of a linear functional over the dual-optimal face.
//! * [`barycenter`] — the fixed-support OT barycenter program and its
//!   dual-bundle limit functional.
//! * [`design`] — contrast matrices for factorial layouts and sample-size
//!   coefficients.
//! * [`inference`] — test statistics, limit-law samplers, resampling
//!   schemes, p-values and decisions.
//! * [`posthoc`] — simultaneous max-tests over contrast rows (plain and
//!   weighted).
//! * [`sim`] — measure generators and seeded experiment runners.
//! * [`oracle`] — an independent dense-LP path used to cross-check the
//!   specialized solvers.

pub mod barycenter;
pub mod design;
mod error;
pub mod inference;
pub mod measures;
pub mod oracle;
pub mod ot;
pub mod posthoc;
pub mod rng;
pub mod sim;

mod lp;
mod transport;

pub use error::{Error, Result};
pub use measures::{CostMatrix, GroupSamples, NonNegMeasure, ProbMeasure, SignedMeasure};
