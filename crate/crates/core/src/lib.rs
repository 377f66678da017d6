pub mod error;
pub mod datakit;
pub mod tensor;
pub mod attention;
pub mod bench;
pub mod labelmap;
pub mod metrics;
pub mod pipeline;
pub mod ranking;
