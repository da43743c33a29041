//! Synthetic plants, excitation signals, the stacked regressor and its
//! closed-form statistics.

mod plant;
mod sources;
mod stats;
mod stream;

pub use plant::{arrival_offsets, gen_lem_plant, modified_channel_matrix, steering_delays, LemPlant, PlantParams};
pub use sources::{gen_far_end, load_wav_unit_power, FarEndModel, FarEndSource, Interferer, NearEndModel};
pub use stats::{analytic_rbb, sample_rbb};
pub use stream::{stream_regressors, RegressorIter, RegressorLayout, RegressorStream};

/// Number of initial samples during which the delay lines are still filling.
pub fn warmup_len(taps: usize, n_bf: usize, n_aec: usize) -> usize {
    (taps + n_bf).max(n_aec)
}
