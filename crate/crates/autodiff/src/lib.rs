//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles together with
//! whatever the adjoint needs. [`Tape::backward`] walks the record in reverse
//! and deposits gradients into the slots of a [`ParamSet`].
//!
//! The substrate is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checks ([`grad_check`]).
//!
//! ```
//! use msa_autodiff::{ParamSet, Tape, Tensor};
//!
//! let mut params = ParamSet::<f64>::new();
//! let w = params.add("w", Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
//! let mut tape = Tape::new();
//! let bound = tape.bind(&params);
//! let loss = tape.sum(bound[w]);
//! tape.backward(loss, &mut params).unwrap();
//! assert_eq!(params.grad(w).data(), &[1.0, 1.0, 1.0]);
//! ```

mod error;
mod gradcheck;
pub mod nn;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{Bound, ParamId, ParamSet};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
