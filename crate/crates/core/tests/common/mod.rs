#![allow(dead_code)]

pub mod path_oracle;
