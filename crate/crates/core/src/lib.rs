pub mod basis;
pub mod distribution;
pub mod evaluate;
pub mod features;
pub mod fit;
pub mod grid;
pub mod ingest;
pub mod linalg;
pub mod resample;
pub mod scalar;
pub mod synth;
pub mod tdobject;

pub type Mat = linalg::Mat<f64>;
pub type Grid = grid::Grid<f64>;
pub type ActivityPanel = ingest::ActivityPanel<f64>;
pub type FeatureSet = features::FeatureSet<f64>;
pub type TdSurface = tdobject::TdSurface<f64>;
pub type Dataset = fit::Dataset<f64>;
pub type Predictor = fit::Predictor<f64>;
pub type ModelFit = fit::ModelFit<f64>;
pub type FunctionalFit = fit::FunctionalFit<f64>;
pub type BiomarkerTable = evaluate::BiomarkerTable<f64>;
