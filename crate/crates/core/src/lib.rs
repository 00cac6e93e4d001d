//! Demographic- and expert-debiased multi-label code prediction.
//!
//! A label-attention encoder feeds a mixture-of-experts head that is scored
//! along three pathways: gated experts on the full input (knowledge), the
//! same head on demographics-only input, and a uniform average of the
//! experts. The pathways are trained jointly, and at inference the
//! demographic and uniform-expert contributions are removed by
//! counterfactual subtraction:
//!
//! ```text
//! z_f = sigmoid(z_k + z_d + z_e) - sigmoid(z_d + z_e)
//! ```

pub mod cli;
pub mod corpus;
pub mod evaluation;
mod fsutil;
pub mod model;
pub mod numerics;
pub mod training;
