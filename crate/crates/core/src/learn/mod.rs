//! Tensors, reverse-mode differentiation, layers, optimisation and losses.

mod autodiff;
mod gradcheck;
pub mod loss;
pub mod nn;
mod optim;
mod params;
pub mod rl;
pub mod supervised;
mod tensor;

pub use autodiff::{sigmoid, Graph, Var};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use nn::{Linear, LstmStack, LstmState, Mlp};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore};
pub use rl::{bandit, train_rl, RlReport};
pub use supervised::{train_supervised, MetricsLog, SupervisedReport, TrainingCorpus};
pub use tensor::{argmax, log_softmax, sample_categorical, softmax, Tensor};
