//! Contrastive multi-interest learning: convolutional extractors, view
//! sampling and the InfoNCE objective.

pub mod augment;
pub mod conv;
pub mod infonce;

pub use augment::{aug_feature, aug_interest, valid_windows, FeaturePick, InterestPick};
pub use conv::{
    behavior_tensor, conv_param_count, feature_count, interest_count, mie_forward, mimfe_forward, ConvBank,
};
pub use infonce::{infonce, row_cosines, view_similarity_stats, SimStats, COS_EPS};
