//! Dose-volume histogram prediction for the bladder and rectum in prostate
//! radiotherapy from six structure volumes.
//!
//! The pipeline mines treatment-planning exports into a patient library
//! ([`ingest`]), fits one regressor per 10 cGy dose bin for several model
//! families ([`regress`], [`frbp`]), scores them by median absolute error
//! over dose bands ([`eval`]), builds Weibull population bands ([`weibull`])
//! and persists everything in a versioned bundle ([`bundle`]) that the CLI
//! ([`pipeline`]) and the HTTP API ([`service`]) serve from.

pub mod bundle;
pub mod config;
pub mod dvh;
pub mod eval;
pub mod frbp;
pub mod ingest;
pub mod pipeline;
pub mod regress;
pub mod service;
pub mod synth;
pub mod weibull;
