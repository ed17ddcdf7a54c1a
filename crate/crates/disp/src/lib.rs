//! DISP: a defense pipeline for text classifiers under adversarial
//! token perturbations.
//!
//! The pipeline has three trained parts and one search structure:
//!
//! * a token-level **discriminator** that flags perturbed positions,
//! * an **estimator** that regresses the original token's embedding from the
//!   masked context window around each flagged position,
//! * a small-world-graph **index** over a token-embedding corpus that decodes
//!   estimated embeddings back into tokens, and
//! * a **classifier** (the protected model) trained on clean data only.
//!
//! [`attack`] generates the five attack types used for training and
//! evaluation; [`eval`] measures discrimination quality and end-to-end
//! defended accuracy on synthetic tasks.

pub mod attack;
pub mod knn;
pub mod neural;
pub mod seeding;
pub mod text;
