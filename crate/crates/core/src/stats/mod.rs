//! Reproducible random streams, moment accumulation and goodness-of-fit testing.

pub mod ad;
pub mod moments;
pub mod stream;

pub use ad::{ad_statistic, ad_statistic_with, ad_test, AdResult, EmpiricalCdf, NullDistribution, NullTable};
pub use moments::{CoMoments, Moments};
pub use stream::{pair_id, purpose, DrawKind, DrawSource, DrawStream, ScriptedDraws, StreamKey};
