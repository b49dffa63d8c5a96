pub mod attention;
pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradsuite;
pub mod heatmap;
pub mod metrics;
pub mod nn;
pub mod overlay;
pub mod zian;
