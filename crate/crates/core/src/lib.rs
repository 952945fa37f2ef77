pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod network;
pub mod spectra;
pub mod tensor;
pub mod training;
