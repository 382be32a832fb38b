//! Envelope matrix regression: objective minimization over semi-orthogonal
//! bases, the alternating MLE, the scalar-predictor two-sided variant, and
//! envelope-dimension selection.

mod dims;
mod fit;
mod objective;
mod scalar;

pub use dims::{
    full_grid, select_dims_ic, select_dims_stepwise, Criterion, DimCell, DimSelection,
};
pub use fit::{fit_envelope, EnvelopeFit, EnvelopeOptions};
pub use objective::{
    envelope_objective, envelope_objective_grad, envelope_objective_raw,
    minimize_envelope_objective, MinimizeOptions, MinimizeOutcome,
};
pub use scalar::{fit_envelope_scalar_x, ScalarEnvelopeFit};
