pub mod cfg;
pub mod frontier;
pub mod gen;
pub mod ir;
pub mod knowledge;
pub mod oracle;
pub mod pipeline;
pub mod protect;
pub mod refine;
