//! Learning hybrid-emission hidden Markov models of annotated beat sequences
//! and mining metric temporal logic formulae that tell two models apart.

pub mod fixtures;
pub mod gpucb;
pub mod hmm;
pub mod mitl;
pub mod rng;
pub mod search;
pub mod smc;
pub mod trace;
