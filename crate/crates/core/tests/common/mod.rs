#![allow(dead_code)]

pub mod agent_fixtures;
pub mod builders;
pub mod encoder_oracle;
pub mod model_oracle;
pub mod numerics_oracle;
