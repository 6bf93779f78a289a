pub mod instances;
pub mod checks;
pub mod experiment;
pub mod suites;
