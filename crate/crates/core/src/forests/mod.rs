//! Random forest and logistic-regression baselines.

mod forest;
mod logreg;
mod tree;

pub use forest::{
    balanced_weights, importance_split, rf_importance_split, rf_predict_proba, rf_train,
    ClassWeighting, Forest, ForestConfig, ImportanceSplit, DEFAULT_LOCAL_BOUNDARY,
};
pub use logreg::{logreg_train, LogReg, LogRegConfig};
pub use tree::Tree;
