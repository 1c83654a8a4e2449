use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("layer {layer} is out of range for horizon {horizon}")]
    LayerOutOfRange { layer: usize, horizon: usize },

    #[error("iteration {t} is outside 1..={total}")]
    IterationOutOfRange { t: usize, total: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("mixture class would hold {required} members, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("no model assigns positive likelihood to the data on layer {layer}")]
    Unsupported { layer: usize },

    #[error("confidence set is empty at iteration {t}; the threshold schedule is broken")]
    EmptyConfidenceSet { t: usize },

    #[error("offline data holds {have} samples on layer {layer}, need {need}")]
    UndersizedOffline { layer: usize, have: usize, need: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
