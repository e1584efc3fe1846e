use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A reproducible random stream identified by `(master_seed, stream_index)`.
///
/// Backed by ChaCha8 with the stream index mapped onto ChaCha's native stream id, so distinct
/// indices give non-overlapping keystreams and the same pair always replays the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        Self { master_seed, stream_index, inner }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Stream index for replicate `replicate` of grid point `grid_index` within one experiment.
pub fn replicate_stream(grid_index: usize, replicate: usize) -> u64 {
    ((grid_index as u64) << 32) | replicate as u64
}
