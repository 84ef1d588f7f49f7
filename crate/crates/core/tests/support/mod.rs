#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;
pub mod rules;
pub mod shuffle_ref;
