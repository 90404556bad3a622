//! Reference implementations used as oracles by the test suites.
//!
//! Everything in this crate is deliberately written the slow, obvious way and
//! shares no code with the `seddet` library: brute-force enumeration of the
//! frame-pair rules, an O(n^2) DFT, and central-difference gradients. Test
//! code compares the fast implementations against these.

pub mod gradcheck;
pub mod oracle;
pub mod refdft;

pub use gradcheck::{central_difference, directional_difference, max_grad_error};
pub use oracle::{brute_force_ifd, OracleClip, OracleReduction};
pub use refdft::reference_power_spectrum;
