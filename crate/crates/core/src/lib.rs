pub mod bmc;
pub mod corpus;
pub mod exec;
pub mod fuzz;
pub mod goto;
pub mod instrument;
pub mod lang;
pub mod pipeline;
