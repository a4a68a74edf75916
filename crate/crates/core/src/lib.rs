//! Exact rational arithmetic, straight-line programs, and exact
//! forward/backward passes for feed-forward networks.

pub mod activation;
pub mod bn;
pub mod error;
pub mod growth;
pub mod instance_file;
pub mod lambda;
pub mod network;
pub mod numbers;
pub mod pac;
pub mod poly;
pub mod pwl;
pub mod reduction;
pub mod slp;

pub use activation::{Activation, BitBoundedActivation, PwlActivation};
pub use error::{Error, Result};
pub use growth::{depth_growth_experiment, GrowthActivation, GrowthRow};
pub use instance_file::{
    parse_instance, parse_theta, serialize_instance, serialize_theta, Instance,
};
pub use lambda::{solve_lambda, verify_product_identity, LambdaCoeffs};
pub use network::{
    EdgeId, EdgeParams, LossSpec, Network, NetworkBuilder, Role, Sample, SampleFlag, Theta,
    VertexId, VertexVector, Wrt,
};
pub use numbers::{BitLen, Rational, SignClass};
pub use pac::{make_pair, simulate_lower_bound, Learner, SimReport};
pub use poly::RationalPoly;
pub use pwl::{gd_step, verify_witness, EncodingBound, GdStepReport, WitnessVerdict};
pub use reduction::{
    compile_backprop, compile_erm, compile_hinge_posslp, BackpropInstance, BackpropVariant,
    ErmInstance, Gap,
};
pub use slp::{Op, Slp};
