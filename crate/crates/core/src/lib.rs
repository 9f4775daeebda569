pub mod chem;
pub mod decoder;
pub mod encoder;
pub mod ftseq;
pub mod genlab;
pub mod nn;
pub mod tensor;
pub mod training;
pub mod vocab;
