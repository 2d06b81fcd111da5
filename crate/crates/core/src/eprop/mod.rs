//! Online credit assignment with eligibility propagation.
//!
//! Each synapse carries a two-component eligibility vector `[ε^D, ε^S]`,
//! advanced forward in time alongside the neuron state. Contracting it with
//! the surrogate derivative gives the eligibility trace; multiplying the trace
//! by a per-step learning signal and summing over time gives the gradient.

mod grads;
mod online;
mod signal;
mod trace;

pub use grads::{GradAccumulator, LayerGrads};
pub use online::{argmax_rows, EpropOptions, OnlineSession};
pub use signal::{
    hidden_learning_signal, output_learning_signal, readout_learning_signal, readout_step, softmax, step_loss,
    LearningSignal, ReadoutSource, ReadoutState, StepLoss,
};
pub use trace::{
    accumulate, eligibility_trace, step_eligibility_decay, step_eligibility_lif, step_eligibility_tclif,
    EligibilityState, TraceForm,
};
